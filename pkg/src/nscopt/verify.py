"""Numerical residuals for the first-order optimality system.

Given a candidate ``(u, y, p, omega)`` the verifier reports

* stationarity: violation of ``D* p(t) in dh(u(t))`` (probe-based),
* the variational inequality ``sum_m w_m <omega_m, y_m - x_m> >= 0`` over a
  finite family of feasible probe trajectories ``x`` (an under-approximation
  of the condition over all feasible trajectories),
* normal-cone colinearity of ``omega`` with the outward direction of ``K``,
  the sign of the cone coefficient, and complementarity,
* feasibility ``dist(y(t), K)``.

Every residual is nonnegative by construction except the variational
inequality minimum, whose sign is the verdict.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .constraints import Unconstrained, constraint_value, contains, project
from .control import ControlTrajectory, subgradient_residual
from .errors import ConfigurationError
from .fields import random_field
from .penalty import dual_norm, evaluate, reduced_cost

PROBE_THETAS = (0.0, 0.5, 0.9)
PROBE_SEEDS = (101, 102, 103)
PROBE_NOTE = (
    "variational inequality evaluated on a finite probe family; the reported "
    "minimum over-estimates the infimum over all feasible trajectories"
)


def pairing(a, b, tag):
    """Dual pairing of a multiplier ``a`` with a state ``b``.

    ``"H"`` is the H inner product.  ``"V'"`` realizes the V'-V duality
    spectrally as ``<A^{-1/2} a, A^{1/2} b>``; for ``a`` in H both agree.
    """
    if tag == "H":
        return a.inner(b)
    g = a.grid
    k = g.kabs
    inv = np.divide(1.0, k, out=np.zeros_like(k), where=k > 0)
    return g.volume * float(np.sum(((a.coeffs * inv) * np.conj(b.coeffs * k)).real))


def dual_inner(a, b, tag):
    """Inner product in the tagged dual norm (used for cone coefficients)."""
    if tag == "H":
        return a.inner(b)
    g = a.grid
    return g.volume * float(np.sum((g.inv_k2 * a.coeffs * np.conj(b.coeffs)).real))


# -- stationarity ---------------------------------------------------------


def stationarity_profile(h, u, p, space):
    return np.array([subgradient_residual(h, u[m], space.apply_Dstar(p[m]), space) for m in range(len(u))])


def check_stationarity(h, u, p, space):
    """Time maximum of the subgradient residual of ``D* p(t)`` at ``u(t)``."""
    if len(u) != len(p):
        raise ConfigurationError("control and adjoint trajectories differ in length")
    return float(np.max(stationarity_profile(h, u, p, space)))


# -- variational inequality ---------------------------------------------------


@dataclass(frozen=True)
class Probe:
    name: str
    fields: tuple


def default_probes(K, state):
    """Feasible probe trajectories.

    * ``theta * P_K(y(t))`` for each ``theta`` in ``PROBE_THETAS``;
    * the constant-in-time point ``0.5 * P_K(y(t_mid))``;
    * projected perturbations ``P_K(y(t) + sigma r)`` with fixed seeded
      random fields ``r`` and ``sigma = 0.1 max_t |y(t)|``.
    """
    grid = state[0].grid
    proj = [project(K, y).projected for y in state]
    probes = [Probe(f"scaled_{t:g}", tuple(x * t for x in proj)) for t in PROBE_THETAS]
    mid = proj[len(proj) // 2] * 0.5
    probes.append(Probe("constant_mid_half", tuple(mid for _ in state)))
    sigma = 0.1 * max(y.norm() for y in state)
    for seed in PROBE_SEEDS:
        r = random_field(grid, seed=seed, kcut=3)
        nr = r.norm()
        if nr == 0 or sigma == 0:
            continue
        r = r * (sigma / nr)
        probes.append(Probe(f"perturbed_{seed}", tuple(project(K, y + r).projected for y in state)))
    return probes


def _check_probe(K, probe, index, tol):
    for m, x in enumerate(probe.fields):
        if not contains(K, x, tol):
            raise ValueError(f"probe {index} ({probe.name}) infeasible at step {m}")


def check_variational_inequality(K, state, omega, probes=None, tol_rel=1e-10):
    """Minimum over probes of ``sum_m w_m <omega_m, y_m - x_m>``.

    Returns ``(minimum, values)`` with ``values`` a ``{name: sum}`` dict.
    Flagged singular steps are part of the sum with their trapezoid weight.
    Raises ``ValueError`` naming the first infeasible probe.
    """
    tg = state.time_grid
    w = tg.weights
    if probes is None:
        probes = default_probes(K, state)
    slack = 0.0 if isinstance(K, Unconstrained) else tol_rel * K.rho**2
    for i, pr in enumerate(probes):
        if len(pr.fields) != len(state):
            raise ValueError(f"probe {i} ({pr.name}) has wrong length")
        _check_probe(K, pr, i, slack)
    values = {}
    for pr in probes:
        total = 0.0
        for m in range(len(state)):
            total += w[m] * pairing(omega.omega_a[m], state[m] - pr.fields[m], omega.dual_norm_tag)
        values[pr.name] = total
    minimum = min(values.values()) if values else 0.0
    return minimum, values


# -- normal cone ----------------------------------------------------------


@dataclass
class ConeProfiles:
    mu: np.ndarray
    colinearity: np.ndarray
    complementarity: np.ndarray
    feasibility: np.ndarray
    active: np.ndarray


def check_normal_cone(K, state, omega):
    """Per-step cone coefficient, colinearity residual and complementarity.

    On active steps ``g = M P_K(y)`` (``P_K y``, ``A P_K y`` or
    ``lambda_h A P_K y + curl P_K y``), ``mu = <omega, g> / |g|^2`` and the
    residual is ``|omega - mu g| / |omega|`` in the tagged dual norm.
    Inactive steps, and steps with ``omega = 0``, report zeros.
    """
    if isinstance(K, Unconstrained):
        raise ConfigurationError("normal-cone check needs a constrained set")
    tag = omega.dual_norm_tag
    n = len(state)
    mu = np.zeros(n)
    col = np.zeros(n)
    comp = np.zeros(n)
    feas = np.zeros(n)
    for m, y in enumerate(state):
        res = project(K, y)
        feas[m] = (y - res.projected).norm()
        om = omega.omega_a[m]
        om_norm = dual_norm(om, tag)
        if not omega.active_mask[m] or om_norm == 0:
            continue
        g = K.cone_direction(res.projected)
        gg = dual_inner(g, g, tag)
        if gg == 0:
            col[m] = 1.0
            continue
        mu[m] = dual_inner(om, g, tag) / gg
        col[m] = dual_norm(om - g * mu[m], tag) / om_norm
        comp[m] = abs(mu[m]) * max(0.0, K.rho**2 - constraint_value(K, y))
    return ConeProfiles(mu, col, comp, feas, np.asarray(omega.active_mask, dtype=bool))


# -- gradient finite differences ----------------------------------------------


def gradient_fd_check(data, K, h, u, lam, directions, eps_list=(1e-2, 1e-3, 1e-4), anchor_weight=0.0, u_ref=None):
    """Central differences of the reduced cost against the adjoint gradient.

    Returns a list of rows ``{direction, eps, fd, adjoint, abs_error,
    rel_error, order}``; ``order`` is the observed convergence order
    between consecutive ``eps`` for the same direction.
    """
    space = data.space
    g = evaluate(data, K, h, u, lam, anchor_weight, u_ref).gradient
    rows = []
    for i, d in enumerate(directions):
        d = np.asarray(getattr(d, "samples", d))
        exact = g.inner(d, space)
        prev = None
        for eps in eps_list:
            fp = reduced_cost(data, K, h, u.replace(u.samples + eps * d), lam, anchor_weight, u_ref).total
            fm = reduced_cost(data, K, h, u.replace(u.samples - eps * d), lam, anchor_weight, u_ref).total
            fd = (fp - fm) / (2.0 * eps)
            err = abs(fd - exact)
            rel = err / abs(exact) if exact != 0 else err
            order = math.nan
            if prev is not None and prev[1] > 0 and err > 0:
                order = math.log(prev[1] / err) / math.log(prev[0] / eps)
            rows.append(
                {"direction": i, "eps": eps, "fd": fd, "adjoint": exact, "abs_error": err, "rel_error": rel, "order": order}
            )
            prev = (eps, err)
    return rows


# -- penalty-path trend ---------------------------------------------------------


def lemma1_trend_report(levels, space, u_ref=None):
    """Tabulate the penalty path across ``lam`` levels.

    ``levels`` are objects with ``lam``, ``control`` and ``summary``
    (as produced by continuation).  No convergence rate is asserted.
    """
    if len(levels) < 3:
        raise ValueError(f"need at least 3 lambda levels, got {len(levels)}")
    rows = []
    prev = None
    for lv in levels:
        row = {
            "lambda": lv.lam,
            "max_violation": lv.summary["max_violation"],
            "cost": lv.summary["total"],
            "control_change": math.nan
            if prev is None
            else ControlTrajectory(lv.control.samples - prev.samples, lv.control.dt).norm(space),
        }
        if u_ref is not None:
            ref = np.asarray(getattr(u_ref, "samples", u_ref))
            row["distance_to_reference"] = ControlTrajectory(lv.control.samples - ref, lv.control.dt).norm(space)
        rows.append(row)
        prev = lv.control
    viol = [r["max_violation"] for r in rows]
    diffs = [r["control_change"] for r in rows[1:]]
    summary = {
        "rows": rows,
        "violation_nonincreasing": all(b <= a for a, b in zip(viol, viol[1:])),
        "violation_strictly_decreasing": all(b < a for a, b in zip(viol, viol[1:])),
        "control_changes_bounded": all(math.isfinite(x) for x in diffs) and max(diffs) <= 10.0 * max(diffs[0], 1e-300),
    }
    if u_ref is not None:
        dist = [r["distance_to_reference"] for r in rows]
        summary["reference_distance_decreasing"] = all(b < a for a, b in zip(dist, dist[1:]))
    return summary


# -- certificate ------------------------------------------------------------


@dataclass(frozen=True)
class VerifyTolerances:
    stationarity: float = 1e-5
    variational: float = 1e-6
    colinearity: float = 0.05
    mu_floor: float = 1e-8
    complementarity: float = 1e-4


@dataclass
class OptimalityCertificate:
    stationarity_residual: float
    stationarity_scale: float
    variational_inequality_min: float
    variational_values: dict
    variational_scale: float
    colinearity_profile: list
    mu_profile: list
    complementarity_profile: list
    complementarity_scale: float
    feasibility_profile: list
    stationarity_profile: list
    active_mask: list
    singular_flags: list
    dual_norm_tag: str
    lam: float
    checks: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(self.checks.values())

    def to_dict(self):
        return asdict(self)


def _floats(a):
    return [float(x) for x in a]


def build_certificate(data, K, h, u, state, adjoint, omega, tol=VerifyTolerances()):
    """Evaluate every residual on a candidate and bundle the verdicts.

    Scales: stationarity ``max(1, max_m |u_m| |D* p_m|)``; variational
    ``max(1, sum_m w_m |omega_m| |y_m|)``; complementarity
    ``max(1, max_m |omega_m| |y_m|)`` (norms in the tagged dual norm for
    ``omega``).
    """
    space = data.space
    tg = state.time_grid
    w = tg.weights
    tag = omega.dual_norm_tag
    stat = stationarity_profile(h, u, adjoint, space)
    s_scale = max(1.0, max(float(space.norm(u[m])) * float(space.norm(space.apply_Dstar(adjoint[m]))) for m in range(len(u))))
    om_norms = omega.magnitudes()
    y_norms = np.array([y.norm() for y in state])
    v_scale = max(1.0, float(np.sum(w * om_norms * y_norms)))
    c_scale = max(1.0, float(np.max(om_norms * y_norms)))
    vi_min, vi_values = check_variational_inequality(K, state, omega)
    if isinstance(K, Unconstrained):
        n = len(state)
        zeros = np.zeros(n)
        cone = ConeProfiles(zeros, zeros, zeros, zeros, np.zeros(n, dtype=bool))
    else:
        cone = check_normal_cone(K, state, omega)
    act = cone.active
    mu_min = float(np.min(cone.mu[act])) if np.any(act) else 0.0
    checks = {
        "stationarity": bool(np.max(stat) <= tol.stationarity * s_scale),
        "variational_inequality": bool(vi_min >= -tol.variational * v_scale),
        "colinearity": bool(np.max(cone.colinearity) <= tol.colinearity),
        "cone_sign": bool(mu_min >= -tol.mu_floor),
        "complementarity": bool(np.max(cone.complementarity) <= tol.complementarity * c_scale),
    }
    metadata = {
        "constraint": K.to_config(),
        "cost": h.to_config(),
        "grid": {"d": data.grid.d, "n": data.grid.n},
        "time": {"T": tg.T, "M": tg.M},
        "probe_family": sorted(vi_values),
        "probe_note": PROBE_NOTE,
        "tolerances": asdict(tol),
    }
    return OptimalityCertificate(
        stationarity_residual=float(np.max(stat)),
        stationarity_scale=s_scale,
        variational_inequality_min=float(vi_min),
        variational_values={k: float(v) for k, v in vi_values.items()},
        variational_scale=v_scale,
        colinearity_profile=_floats(cone.colinearity),
        mu_profile=_floats(cone.mu),
        complementarity_profile=_floats(cone.complementarity),
        complementarity_scale=c_scale,
        feasibility_profile=_floats(cone.feasibility),
        stationarity_profile=_floats(stat),
        active_mask=[bool(a) for a in omega.active_mask],
        singular_flags=[int(i) for i in omega.singular_flags],
        dual_norm_tag=tag,
        lam=float(omega.lam),
        checks=checks,
        metadata=metadata,
    )

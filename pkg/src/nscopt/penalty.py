"""Moreau-Yosida penalty method with lambda-continuation.

For fixed ``lam`` the reduced cost is

    F(u) = sum_m w_m [ 1/2 |C (y_m - y_target_m)|^2 + h_lam(u_m)
                       + phi_lam(y_m) + anchor/2 |u_m - u_ref_m|^2 ]

with trapezoid weights ``w_m`` and ``y = y(u)`` from the forward solver.
It is minimized by steepest descent in the weighted L2(0,T;U) metric with
Barzilai-Borwein trial steps and Armijo backtracking; every accepted step
decreases ``F``.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .constraints import Unconstrained, grad_phi_lambda, project
from .control import ControlTrajectory
from .dynamics import TimeGrid, adjoint_solve, forward_solve
from .errors import ConfigurationError, IntegrationError, LineSearchStall

log = logging.getLogger(__name__)


def default_schedule():
    return tuple(0.1 * 4.0**-j for j in range(5))


@dataclass(frozen=True)
class PenaltyConfig:
    schedule: tuple = field(default_factory=default_schedule)
    inner_tol: float = 1e-6
    abs_tol: float = 0.0
    max_inner_iters: int = 500
    anchor_weight: float = 0.0
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    initial_step: float = 1.0
    singular_factor: float = 10.0

    def __post_init__(self):
        sched = tuple(float(s) for s in self.schedule)
        if not sched:
            raise ConfigurationError("schedule is empty", "penalty.schedule")
        if any(not (s > 0 and math.isfinite(s)) for s in sched):
            raise ConfigurationError("schedule entries must be positive", "penalty.schedule")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ConfigurationError("schedule must be strictly decreasing", "penalty.schedule")
        object.__setattr__(self, "schedule", sched)
        if self.anchor_weight not in (0, 1, 0.0, 1.0):
            raise ConfigurationError("anchor_weight must be 0 or 1", "penalty.anchor_weight")
        if not 0 < self.armijo_c < 1:
            raise ConfigurationError("Armijo constant must lie in (0, 1)", "penalty.armijo_c")
        if not 0 < self.backtrack < 1:
            raise ConfigurationError("backtrack factor must lie in (0, 1)", "penalty.backtrack")
        if not self.inner_tol > 0 or self.abs_tol < 0:
            raise ConfigurationError("tolerances must be positive", "penalty.inner_tol")
        if int(self.max_inner_iters) < 0:
            raise ConfigurationError("max_inner_iters must be >= 0", "penalty.max_inner_iters")


class CostBreakdown(NamedTuple):
    tracking: float
    control: float
    penalty: float
    anchor: float

    @property
    def total(self):
        return self.tracking + self.control + self.penalty + self.anchor


@dataclass(frozen=True)
class Evaluation:
    cost: CostBreakdown
    state: object
    gradient: Optional[ControlTrajectory] = None
    adjoint: object = None
    penalty_source: tuple = ()


def time_grid_of(u):
    return TimeGrid(u.M * u.dt, u.M)


def _anchor_terms(u, anchor_weight, u_ref):
    if not anchor_weight:
        return None
    if u_ref is None:
        raise ConfigurationError("anchor_weight = 1 requires a reference control")
    ref = np.asarray(getattr(u_ref, "samples", u_ref))
    return u.samples - ref


def evaluate(data, K, h, u, lam, anchor_weight=0.0, u_ref=None, gradient=True):
    """Forward solve and cost breakdown, plus the reduced gradient if asked."""
    if not lam > 0:
        raise ConfigurationError(f"regularization parameter must be positive, got {lam}")
    tg = time_grid_of(u)
    space = data.space
    state = forward_solve(data, u, tg)
    w = tg.weights
    tracking = 0.5 * float(sum(w[m] * data.tracking_value(state[m], m) for m in range(tg.M + 1)))
    control = float(np.sum(w * h.moreau(u.samples, lam, space)))
    constrained = not isinstance(K, Unconstrained)
    src = tuple(grad_phi_lambda(K, y, lam) for y in state) if constrained else ()
    penalty = (
        float(sum(w[m] * 0.5 * lam * src[m].inner(src[m]) for m in range(tg.M + 1))) if constrained else 0.0
    )
    diff = _anchor_terms(u, anchor_weight, u_ref)
    anchor = 0.0 if diff is None else 0.5 * float(np.sum(w * space.inner(diff, diff)))
    cost = CostBreakdown(tracking, control, penalty, anchor)
    if not gradient:
        return Evaluation(cost, state, penalty_source=src)
    p = adjoint_solve(data, state, src if constrained else None)
    g = h.grad_moreau(u.samples, lam, space)
    if diff is not None:
        g = g + diff
    g = g - np.stack([space.apply_Dstar(pm) for pm in p])
    return Evaluation(cost, state, ControlTrajectory(g, u.dt), p, src)


def reduced_cost(data, K, h, u, lam, anchor_weight=0.0, u_ref=None):
    return evaluate(data, K, h, u, lam, anchor_weight, u_ref, gradient=False).cost


def reduced_gradient(data, K, h, u, lam, anchor_weight=0.0, u_ref=None):
    """Riesz representative of ``dF/du`` in the trapezoid-weighted metric:
    ``g_m = grad h_lam(u_m) + anchor (u_m - u_ref_m) - D* p_m``."""
    return evaluate(data, K, h, u, lam, anchor_weight, u_ref).gradient


# -- inner solver ---------------------------------------------------------


@dataclass
class LevelResult:
    lam: float
    control: ControlTrajectory
    state: object
    adjoint: object
    penalty_source: tuple
    summary: dict
    rows: list


def max_violation(K, state):
    if isinstance(K, Unconstrained):
        return 0.0
    return max((y - project(K, y).projected).norm() for y in state)


def solve_P_lambda(data, K, h, u_init, lam, cfg=PenaltyConfig(), u_ref=None, grad_ref=None):
    """Minimize the penalized reduced cost for one ``lam``.

    Stops when ``|g| <= max(inner_tol * grad_ref, abs_tol)`` where
    ``grad_ref`` defaults to the initial gradient norm, or when
    ``max_inner_iters`` is reached (flagged ``converged = False``).
    Raises :class:`LineSearchStall` after ``max_backtracks`` failed trials.
    """
    space = data.space
    aw = cfg.anchor_weight
    u = u_init
    ev = evaluate(data, K, h, u, lam, aw, u_ref)
    gnorm = ev.gradient.norm(space)
    g_ref = gnorm if grad_ref is None else grad_ref
    tol = max(cfg.inner_tol * g_ref, cfg.abs_tol)
    rows = []
    alpha = cfg.initial_step
    prev = None
    it = 0
    converged = gnorm <= tol

    def record(it, ev, gnorm, step, backtracks):
        c = ev.cost
        rows.append(
            {
                "lambda": lam,
                "iteration": it,
                "total": c.total,
                "tracking": c.tracking,
                "control": c.control,
                "penalty": c.penalty,
                "anchor": c.anchor,
                "grad_norm": gnorm,
                "step": step,
                "backtracks": backtracks,
                "max_violation": max_violation(K, ev.state),
            }
        )

    record(0, ev, gnorm, 0.0, 0)
    while not converged and it < cfg.max_inner_iters:
        g = ev.gradient
        if prev is not None:
            s = u.samples - prev[0].samples
            yk = g.samples - prev[1].samples
            sy = _inner(u, s, yk, space)
            if sy > 0:
                ss = _inner(u, s, s, space)
                yy = _inner(u, yk, yk, space)
                alpha = ss / sy if it % 2 else sy / yy
            else:
                alpha = min(2.0 * alpha, 1e6)
        f0 = ev.cost.total
        trial_alpha = alpha
        accepted = None
        for bt in range(cfg.max_backtracks + 1):
            cand = u.replace(u.samples - trial_alpha * g.samples)
            try:
                cand_ev = evaluate(data, K, h, cand, lam, aw, u_ref)
                f1 = cand_ev.cost.total
            except IntegrationError:
                f1 = math.inf
            if f1 <= f0 - cfg.armijo_c * trial_alpha * gnorm**2:
                accepted = (cand, cand_ev, bt)
                break
            trial_alpha *= cfg.backtrack
        if accepted is None:
            raise LineSearchStall(
                f"line search failed at lambda={lam:g}, iteration {it + 1}",
                {"lambda": lam, "iteration": it + 1, "grad_norm": gnorm, "cost": f0, "last_step": trial_alpha},
            )
        prev = (u, g)
        u, ev, bt = accepted
        alpha = trial_alpha
        it += 1
        gnorm = ev.gradient.norm(space)
        converged = gnorm <= tol
        record(it, ev, gnorm, trial_alpha, bt)
    c = ev.cost
    summary = {
        "lambda": lam,
        "iterations": it,
        "converged": bool(converged),
        "grad_norm": gnorm,
        "grad_ref": g_ref,
        "total": c.total,
        "tracking": c.tracking,
        "control": c.control,
        "penalty": c.penalty,
        "anchor": c.anchor,
        "max_violation": rows[-1]["max_violation"],
    }
    log.info("lambda=%g: %d iterations, |g|=%.3e, cost=%.6e", lam, it, gnorm, c.total)
    return LevelResult(lam, u, ev.state, ev.adjoint, ev.penalty_source, summary, rows)


def _inner(u, a, b, space):
    return float(np.sum(u.weights * space.inner(a, b)))


# -- multipliers and continuation -------------------------------------------


def dual_norm_tag(K):
    return "H" if K.name in ("energy", "unconstrained") else "V'"


def dual_norm(field_, tag):
    if tag == "H":
        return field_.norm()
    g = field_.grid
    return math.sqrt(g.volume * float(np.sum(g.inv_k2 * np.abs(field_.coeffs) ** 2)))


@dataclass(frozen=True)
class MultiplierMeasure:
    """Discrete absolutely continuous multiplier density on the time grid."""

    omega_a: tuple
    active_mask: np.ndarray
    singular_flags: tuple
    dual_norm_tag: str
    lam: float

    def magnitudes(self):
        return np.array([dual_norm(w, self.dual_norm_tag) for w in self.omega_a])

    def l1_norm(self, tg):
        return float(np.sum(tg.weights * self.magnitudes()))


def extract_multiplier(K, state, penalty_source, lam, singular_factor=10.0):
    tag = dual_norm_tag(K)
    grid = state[0].grid
    if isinstance(K, Unconstrained) or not penalty_source:
        zeros = tuple(type(state[0]).zeros(grid) for _ in state)
        return MultiplierMeasure(zeros, np.zeros(len(state), dtype=bool), (), tag, lam)
    active = np.array([project(K, y).active for y in state], dtype=bool)
    omega = tuple(penalty_source)
    mags = np.array([dual_norm(w, tag) for w in omega])
    flags = ()
    if np.any(active):
        med = float(np.median(mags[active]))
        flags = tuple(int(m) for m in np.flatnonzero(active & (mags > singular_factor * med)))
    return MultiplierMeasure(omega, active, flags, tag, lam)


@dataclass
class OptimizationReport:
    rows: list = field(default_factory=list)
    levels: list = field(default_factory=list)

    ROW_COLUMNS = (
        "lambda",
        "iteration",
        "total",
        "tracking",
        "control",
        "penalty",
        "anchor",
        "grad_norm",
        "step",
        "backtracks",
        "max_violation",
    )
    LEVEL_COLUMNS = (
        "lambda",
        "iterations",
        "converged",
        "grad_norm",
        "grad_ref",
        "total",
        "tracking",
        "control",
        "penalty",
        "anchor",
        "max_violation",
        "omega_l1",
        "control_change",
    )


@dataclass
class ContinuationResult:
    control: ControlTrajectory
    state: object
    adjoint: object
    multiplier: MultiplierMeasure
    report: OptimizationReport
    levels: list
    complete: bool = True


def continuation_solve(data, K, h, u_init, cfg=PenaltyConfig(), u_ref=None):
    """Run :func:`solve_P_lambda` over ``cfg.schedule`` with warm starts.

    On a line-search stall the exception is re-raised with a ``partial``
    attribute holding the :class:`ContinuationResult` of completed levels.
    """
    report = OptimizationReport()
    levels = []
    u = u_init
    tg = time_grid_of(u_init)
    space = data.space
    result = None
    for lam in cfg.schedule:
        try:
            level = solve_P_lambda(data, K, h, u, lam, cfg, u_ref=u_ref)
        except LineSearchStall as exc:
            if result is not None:
                result.complete = False
            exc.partial = result
            raise
        mult = extract_multiplier(K, level.state, level.penalty_source, lam, cfg.singular_factor)
        change = ControlTrajectory(level.control.samples - u.samples, u.dt).norm(space) if levels else math.nan
        level.summary["omega_l1"] = mult.l1_norm(tg)
        level.summary["control_change"] = change
        report.rows.extend(level.rows)
        report.levels.append(level.summary)
        levels.append(level)
        u = level.control
        result = ContinuationResult(u, level.state, level.adjoint, mult, report, levels)
    return result

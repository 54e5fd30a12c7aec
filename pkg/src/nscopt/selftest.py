"""Fast invariant battery behind ``nscopt selftest``.

Each check returns ``(value, tolerance)`` and passes when ``value <= tolerance``.  ``fault="adjoint_sign"``
flips the sign of the transpose term in ``B'*`` so the battery can be shown
to catch a broken adjoint.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from .constraints import EnergyBall, EnstrophyBall, HelicitySet, constraint_value, project
from .control import ControlTrajectory, Quadratic
from .dynamics import ProblemData, TimeGrid, adjoint_solve, forward_solve, linearized_solve
from .fields import Grid, from_physical, leray_project, random_field, rng, taylor_green, to_physical
from .operators import apply_B, apply_Bprime, apply_Bprime_adjoint, trilinear_b
from .oracles import qp_projection
from .penalty import evaluate, reduced_cost

FAULTS = ("adjoint_sign",)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    seconds: float


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def check_skew(n, sign):
    g = Grid(2, n)
    worst = 0.0
    for s in range(5):
        y, z, w = (random_field(g, 10 * s + j) for j in range(3))
        a, b = trilinear_b(y, z, w), trilinear_b(y, w, z)
        worst = max(worst, abs(a + b) / max(abs(a), 1e-300))
        bb = apply_B(y).inner(y)
        worst = max(worst, abs(bb) / (y.norm() ** 3))
    return worst, 1e-10


def check_adjoint_pairing(n, sign):
    worst = 0.0
    for d in (2, 3):
        g = Grid(d, n)
        for s in range(3):
            y, z, p = (random_field(g, 100 + 10 * s + j) for j in range(3))
            lhs = apply_Bprime(y, z).inner(p)
            rhs = z.inner(apply_Bprime_adjoint(y, p, sign))
            worst = max(worst, _rel(lhs, rhs))
    return worst, 1e-10


def check_leray(n, sign):
    g = Grid(3, n)
    samples = rng(5).standard_normal((3,) + g.shape)
    y = from_physical(samples, g)
    y2 = leray_project(y)
    y.check_invariants(1e-12)
    return float(np.max(np.abs(y2.coeffs - y.coeffs))) / max(y.norm(), 1e-300), 1e-12


def check_projection_oracle(n, sign):
    worst = 0.0
    cases = ((Grid(2, 4), "enstrophy", 1.0), (Grid(3, 4), "helicity", 1.0), (Grid(3, 4), "helicity", 2.0))
    for g, variant, lh in cases:
        y = random_field(g, 21)
        K0 = EnstrophyBall(1.0) if variant == "enstrophy" else HelicitySet(1.0, lh)
        rho = 0.4 * math.sqrt(constraint_value(K0, y))
        K = EnstrophyBall(rho) if variant == "enstrophy" else HelicitySet(rho, lh)
        x = to_physical(project(K, y).projected)
        ref = qp_projection(g, y, variant, rho, lh)
        worst = max(worst, float(np.max(np.abs(x - ref))) / float(np.max(np.abs(ref))))
    return worst, 1e-8


def check_taylor_green(n, sign):
    g = Grid(2, n)
    nu, T, M = 0.1, 0.2, 200
    y0 = taylor_green(g, 1.0)
    data = ProblemData(g, nu, y0)
    tg = TimeGrid(T, M)
    traj = forward_solve(data, ControlTrajectory.zeros(data.space, M, tg.dt), tg)
    exact = math.exp(-2 * nu * T)
    return _rel(traj[-1].norm() / y0.norm(), exact), 1e-4


def _small_problem(n):
    g = Grid(2, n)
    y0 = random_field(g, 3, energy=0.05, kcut=2)
    tgt = random_field(g, 4, kcut=2)
    tgt = tgt * (1.5 / tgt.norm())
    return ProblemData(g, 0.05, y0, target=tgt), TimeGrid(0.5, 10)


def check_duality(n, sign):
    data, tg = _small_problem(n)
    gen = rng(8)
    u = ControlTrajectory(0.3 * gen.standard_normal((tg.M + 1,) + data.space.shape), tg.dt)
    du = ControlTrajectory(gen.standard_normal((tg.M + 1,) + data.space.shape), tg.dt)
    traj = forward_solve(data, u, tg)
    dy = linearized_solve(data, traj, du)
    p = adjoint_solve(data, traj, _adjoint_sign=sign)
    w = tg.weights
    lhs = sum(w[m] * data.tracking_gradient(traj[m], m).inner(dy[m]) for m in range(tg.M + 1))
    rhs = -sum(w[m] * p[m].inner(data.space.apply_D(du[m])) for m in range(tg.M + 1))
    return _rel(lhs, rhs), 1e-10


def check_fd_gradient(n, sign):
    data, tg = _small_problem(n)
    K, h, lam = EnergyBall(1.0), Quadratic(0.1), 0.05
    space = data.space
    gen = rng(9)
    u = ControlTrajectory(0.3 * gen.standard_normal((tg.M + 1,) + space.shape), tg.dt)
    ev = evaluate(data, K, h, u, lam, gradient=False)
    p = adjoint_solve(data, ev.state, ev.penalty_source, _adjoint_sign=sign)
    g = h.grad_moreau(u.samples, lam, space) - np.stack([space.apply_Dstar(pm) for pm in p])
    g = ControlTrajectory(g, tg.dt)
    worst = 0.0
    eps = 1e-4
    for _ in range(2):
        d = gen.standard_normal(u.samples.shape)
        fp = reduced_cost(data, K, h, u.replace(u.samples + eps * d), lam).total
        fm = reduced_cost(data, K, h, u.replace(u.samples - eps * d), lam).total
        worst = max(worst, _rel((fp - fm) / (2 * eps), g.inner(d, space)))
    return worst, 1e-4


CHECKS = (
    ("trilinear skew-symmetry", check_skew),
    ("B' adjoint pairing", check_adjoint_pairing),
    ("Leray idempotence", check_leray),
    ("projection vs QP oracle", check_projection_oracle),
    ("Taylor-Green decay", check_taylor_green),
    ("discrete duality", check_duality),
    ("FD gradient", check_fd_gradient),
)


def run_selftest(n=8, fault=None):
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}")
    sign = -1.0 if fault == "adjoint_sign" else 1.0
    results = []
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            value, tol = fn(n, sign)
            ok = bool(value <= tol)
        except Exception as exc:  # a crash is a failed check, not a crashed battery
            value, tol, ok = math.nan, math.nan, False
            name = f"{name} ({type(exc).__name__}: {exc})"
        results.append(CheckResult(name, ok, float(value), float(tol), time.perf_counter() - t0))
    return results


def format_results(results):
    lines = [f"{'check':<32} {'status':<6} {'value':>11} {'tol':>9} {'sec':>6}"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<32} {status:<6} {r.value:>11.3e} {r.tolerance:>9.1e} {r.seconds:>6.2f}")
    return "\n".join(lines)

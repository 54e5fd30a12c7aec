"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line with the measured values and the stated
tolerances; the lines are printed in the pytest terminal summary.
"""

import json
import math
import time

import numpy as np
import pytest

from nscopt.cli import main
from nscopt.config import build, load_config
from nscopt.constraints import EnstrophyBall, HelicitySet, Unconstrained, constraint_value, project
from nscopt.control import ControlTrajectory, Quadratic
from nscopt.dynamics import ProblemData, TimeGrid, existence_time, forward_solve
from nscopt.fields import Grid, random_field, rng, taylor_green, to_physical
from nscopt.operators import apply_A, apply_B, apply_Bprime, apply_Bprime_adjoint, trilinear_b
from nscopt.oracles import StokesLQOracle, qp_projection
from nscopt.penalty import PenaltyConfig, evaluate, max_violation, solve_P_lambda
from nscopt.verify import gradient_fd_check


def test_criterion_1_operator_algebra(report_criterion):
    g = Grid(2, 16)
    skew = energy = adj = 0.0
    for t in range(100):
        y, z, w = (random_field(g, 1000 + 3 * t + j) for j in range(3))
        a, b = trilinear_b(y, z, w), trilinear_b(y, w, z)
        skew = max(skew, abs(a + b) / abs(a))
        By = apply_B(y)
        energy = max(energy, abs(By.inner(y)) / (By.norm() * y.norm()))
        lhs = apply_Bprime(y, z).inner(w)
        rhs = z.inner(apply_Bprime_adjoint(y, w))
        adj = max(adj, abs(lhs - rhs) / abs(lhs))
    ok = report_criterion(
        1,
        "operator algebra (100 triples, n=16)",
        [
            ("skew", skew, 1e-10, skew <= 1e-10),
            ("<B(y),y>", energy, 1e-10, energy <= 1e-10),
            ("B' adjoint", adj, 1e-10, adj <= 1e-10),
        ],
    )
    assert ok


def test_criterion_2_forward_solver(report_criterion):
    g = Grid(2, 16)
    nu, T = 0.1, 1.0
    tg = TimeGrid(T, 1000)
    data = ProblemData(g, nu, taylor_green(g, 1.0))
    traj = forward_solve(data, ControlTrajectory.zeros(data.space, tg.M, tg.dt), tg)
    exact = math.exp(-2 * nu * T)
    decay = abs(traj[-1].norm() / traj[0].norm() - exact) / exact

    # energy balance d/dt |y|^2/2 = -nu |grad y|^2 + <f, y> with forcing and control
    y0 = random_field(g, 11, energy=0.2, kcut=4)
    f = random_field(g, 12, energy=0.02, kcut=2)
    data = ProblemData(g, 0.05, y0, forcing=f)
    tg = TimeGrid(1.0, 1000)
    gen = rng(13)
    u = ControlTrajectory(0.02 * gen.standard_normal((tg.M + 1,) + data.space.shape), tg.dt)
    traj = forward_solve(data, u, tg)
    w = tg.weights
    power = sum(
        w[m] * (-0.05 * apply_A(traj[m]).inner(traj[m]) + (f + data.space.apply_D(u[m])).inner(traj[m]))
        for m in range(tg.M + 1)
    )
    e0, e1 = 0.5 * traj[0].inner(traj[0]), 0.5 * traj[-1].inner(traj[-1])
    drift = abs(e1 - e0 - power) / max(e0, e1)
    ok = report_criterion(
        2,
        "forward solver",
        [
            ("Taylor-Green decay rel. error", decay, 1e-4, decay <= 1e-4),
            ("energy-balance drift", drift, 1e-3, drift <= 1e-3),
        ],
    )
    assert ok


def test_criterion_3_gradient(report_criterion):
    g = Grid(2, 16)
    y0 = taylor_green(g, 0.2)
    tgt = random_field(g, 7, kcut=2)
    data = ProblemData(g, 0.05, y0, target=tgt * (3.0 / tgt.norm()))
    tg = TimeGrid(1.0, 20)
    gen = rng(21)
    u = ControlTrajectory(0.3 * gen.standard_normal((tg.M + 1,) + data.space.shape), tg.dt)
    dirs = [gen.standard_normal(u.samples.shape) for _ in range(5)]
    from nscopt.constraints import EnergyBall

    rows = gradient_fd_check(data, EnergyBall(1.5), Quadratic(0.1), u, 0.05, dirs, eps_list=(1e-3,))
    fd_err = max(r["rel_error"] for r in rows)

    gs = Grid(2, 4)
    M, T, nu, beta, lam = 8, 0.5, 0.1, 0.5, 0.01
    y0s, fs, zs = random_field(gs, 1), random_field(gs, 4) * 0.3, random_field(gs, 2)
    stokes = ProblemData(gs, nu, y0s, forcing=fs, target=zs, convection=False)
    oracle = StokesLQOracle(gs, nu, T, M, y0s, fs, zs, beta / (1 + lam * beta))
    kkt_err = 0.0
    for seed in range(3):
        us = ControlTrajectory(rng(30 + seed).standard_normal((M + 1,) + stokes.space.shape), T / M)
        got = evaluate(stokes, Unconstrained(), Quadratic(beta), us, lam).gradient.samples.ravel()
        ref = oracle.gradient(us.samples.ravel())
        kkt_err = max(kkt_err, float(np.linalg.norm(got - ref) / np.linalg.norm(ref)))
    u_star = oracle.to_control(oracle.solve())
    g_star = evaluate(stokes, Unconstrained(), Quadratic(beta), u_star, lam).gradient
    g_ref = evaluate(stokes, Unconstrained(), Quadratic(beta), ControlTrajectory.zeros(stokes.space, M, T / M), lam).gradient
    kkt_stat = g_star.norm(stokes.space) / g_ref.norm(stokes.space)
    ok = report_criterion(
        3,
        "adjoint gradient",
        [
            ("FD rel. error, 5 directions (n=16, M=20, eps=1e-3)", fd_err, 1e-4, fd_err <= 1e-4),
            ("Stokes LQ vs dense KKT oracle (n=4, M=8)", kkt_err, 1e-6, kkt_err <= 1e-6),
            ("gradient at KKT solution / at zero", kkt_stat, 1e-6, kkt_stat <= 1e-6),
        ],
    )
    assert ok


def test_criterion_4_projections(report_criterion):
    qp_err = 0.0
    for d, variant, lh in ((2, "enstrophy", 1.0), (3, "enstrophy", 1.0), (3, "helicity", 1.0), (3, "helicity", 2.0)):
        g = Grid(d, 4)
        for seed in range(3):
            y = random_field(g, 200 + seed)
            K = EnstrophyBall(1.0) if variant == "enstrophy" else HelicitySet(1.0, lh)
            rho = 0.35 * math.sqrt(constraint_value(K, y))
            K = EnstrophyBall(rho) if variant == "enstrophy" else HelicitySet(rho, lh)
            x = to_physical(project(K, y).projected)
            ref = qp_projection(g, y, variant, rho, lh)
            qp_err = max(qp_err, float(np.max(np.abs(x - ref)) / np.max(np.abs(ref))))

    idem = nonexp = 0.0
    g2, g3 = Grid(2, 16), Grid(3, 8)
    for K, g in ((EnstrophyBall(3.0), g2), (HelicitySet(3.0, 1.5), g3)):
        for t in range(100):
            y = random_field(g, 500 + 2 * t) * (0.5 + t % 7)
            z = random_field(g, 501 + 2 * t) * (0.2 + t % 3)
            py, pz = project(K, y).projected, project(K, z).projected
            idem = max(idem, (project(K, py).projected - py).norm() / max(py.norm(), 1e-300))
            nonexp = max(nonexp, (py - pz).norm() / (y - z).norm() - 1.0)
    ok = report_criterion(
        4,
        "projections",
        [
            ("vs dense QP oracle (n=4)", qp_err, 1e-8, qp_err <= 1e-8),
            ("idempotence (100 pairs)", idem, 1e-12, idem <= 1e-12),
            ("nonexpansiveness excess (100 pairs)", max(nonexp, 0.0), 1e-12, nonexp <= 1e-12),
        ],
    )
    assert ok


def test_criterion_5_penalty_path(report_criterion, scenario_run):
    code, out = scenario_run("energy_ball_2d")
    assert code == 0
    levels = json.loads((out / "summary.json").read_text())["levels"]
    lams = [lv["lambda"] for lv in levels]
    viol = [lv["max_violation"] for lv in levels]
    omega = [lv["omega_l1"] for lv in levels]
    decreasing = all(b < a for a, b in zip(viol, viol[1:]))
    ratio = max(omega) / omega[0]
    expected = [0.1 * 4.0**-j for j in range(5)]

    # the unconstrained optimum violates the ball
    prob = build(load_config("energy_ball_2d"))
    free = solve_P_lambda(
        prob.data, Unconstrained(), prob.cost, prob.initial_control(), expected[-1], PenaltyConfig(inner_tol=1e-6)
    )
    free_viol = max_violation(prob.constraint, free.state)
    ok = report_criterion(
        5,
        "penalty path on energy_ball_2d",
        [
            ("unconstrained optimum violation (must be > 0)", free_viol, 0.0, free_viol > 0),
            ("schedule mismatch", max(abs(a - b) for a, b in zip(lams, expected)), 0.0, np.allclose(lams, expected, rtol=1e-15)),
            ("final max violation (strictly decreasing)", viol[-1], viol[0], decreasing),
            ("max int|omega| / value at largest lambda", ratio, 2.0, ratio <= 2.0),
        ],
    )
    assert ok


@pytest.mark.parametrize("name", ["energy_ball_2d", "enstrophy_ball_2d", "helicity_set_3d"])
def test_criterion_6_maximum_principle(report_criterion, scenario_run, name):
    code, out = scenario_run(name)
    assert code == 0
    c = json.loads((out / "certificate.json").read_text())
    active = np.array(c["active_mask"])
    mu = np.array(c["mu_profile"])
    col = np.array(c["colinearity_profile"])
    comp = np.array(c["complementarity_profile"])
    stat_tol = 1e-5 * c["stationarity_scale"]
    vi_tol = -1e-6 * c["variational_scale"]
    comp_tol = 1e-4 * c["complementarity_scale"]
    mu_min = float(mu[active].min()) if active.any() else 0.0
    expected_tag = "H" if name.startswith("energy") else "V'"
    ok = report_criterion(
        6,
        f"maximum-principle residuals, {name} ({int(active.sum())} active steps)",
        [
            ("stationarity", c["stationarity_residual"], stat_tol, c["stationarity_residual"] <= stat_tol),
            ("VI minimum (>= -tol)", c["variational_inequality_min"], vi_tol, c["variational_inequality_min"] >= vi_tol),
            ("colinearity", float(col.max()), 0.05, float(col.max()) <= 0.05),
            ("min mu on active steps (>= -tol)", mu_min, -1e-8, mu_min >= -1e-8),
            ("complementarity", float(comp.max()), comp_tol, float(comp.max()) <= comp_tol),
            ("active steps present", float(active.sum()), 1.0, active.sum() >= 1),
            ("dual-norm tag " + c["dual_norm_tag"], 0.0, 0.0, c["dual_norm_tag"] == expected_tag),
        ],
    )
    assert ok


def test_criterion_7_existence_time(report_criterion):
    base = existence_time(1, 1, 1, 0, 0)
    Ls = np.linspace(0.0, 5.0, 51)
    vals = [existence_time(1.0, 0.3, 0.7, 0.2, L) for L in Ls]
    monotone = all(b < a for a, b in zip(vals, vals[1:]))
    ok = report_criterion(
        7,
        "existence-time formula",
        [
            ("T(1,1,1,0,0) - 1/3", abs(base - 1.0 / 3.0), 0.0, base == 1.0 / 3.0),
            ("strictly decreasing in L (51 points)", float(monotone), 1.0, monotone),
        ],
    )
    assert ok


def test_criterion_8_determinism(report_criterion, scenario_run, capsys):
    code, out = scenario_run("energy_ball_2d")
    assert code == 0
    verify_code = main(["verify", "--dir", str(out)])
    identical = (out / "certificate.recomputed.json").read_bytes() == (out / "certificate.json").read_bytes()
    t0 = time.perf_counter()
    self_code = main(["selftest"])
    elapsed = time.perf_counter() - t0
    capsys.readouterr()
    ok = report_criterion(
        8,
        "determinism and selftest",
        [
            ("verify exit code", float(verify_code), 0.0, verify_code == 0),
            ("certificate byte-identical", float(identical), 1.0, identical),
            ("selftest exit code", float(self_code), 0.0, self_code == 0),
            ("selftest seconds", elapsed, 60.0, elapsed < 60.0),
        ],
    )
    assert ok

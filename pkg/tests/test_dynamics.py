import math

import numpy as np
import pytest

from nscopt.control import ControlTrajectory, ModeSet
from nscopt.dynamics import (
    ProblemData,
    TimeGrid,
    adjoint_solve,
    control_l2_norm,
    existence_time,
    forcing_l2_sq,
    forward_solve,
    linearized_solve,
)
from nscopt.errors import ConfigurationError, IntegrationError
from nscopt.fields import Grid, abc_flow, random_field, rng, taylor_green
from nscopt.operators import apply_A


def zero_control(data, tg):
    return ControlTrajectory.zeros(data.space, tg.M, tg.dt)


def test_time_grid():
    tg = TimeGrid(1.0, 4)
    assert tg.dt == 0.25
    assert np.allclose(tg.times, [0, 0.25, 0.5, 0.75, 1.0])
    for T, M in ((0.0, 4), (1.0, 1), (1.0, 2.5), (math.inf, 4)):
        with pytest.raises(ConfigurationError):
            TimeGrid(T, M)


def test_taylor_green_decay_2d():
    g = Grid(2, 16)
    nu, T, M = 0.1, 1.0, 1000
    data = ProblemData(g, nu, taylor_green(g, 1.0))
    tg = TimeGrid(T, M)
    traj = forward_solve(data, zero_control(data, tg), tg)
    ratio = traj[-1].norm() / traj[0].norm()
    assert abs(ratio - math.exp(-2 * nu * T)) <= 1e-4 * math.exp(-2 * nu * T)
    assert len(traj) == M + 1 and len(traj.stages) == M


def test_beltrami_decay_3d():
    g = Grid(3, 8)
    data = ProblemData(g, 0.05, abc_flow(g) * 0.05)
    tg = TimeGrid(0.5, 50)
    traj = forward_solve(data, zero_control(data, tg), tg)
    assert math.isclose(traj[-1].norm() / traj[0].norm(), math.exp(-0.05 * 0.5), rel_tol=1e-10)


def test_energy_balance_unforced():
    """d/dt |y|^2/2 = -nu |grad y|^2; trapezoid-integrated drift stays small."""
    g = Grid(2, 16)
    nu = 0.05
    y0 = random_field(g, 4, energy=0.2, kcut=4)
    data = ProblemData(g, nu, y0)
    tg = TimeGrid(1.0, 400)
    traj = forward_solve(data, zero_control(data, tg), tg)
    w = tg.weights
    dissipation = nu * sum(w[m] * apply_A(traj[m]).inner(traj[m]) for m in range(tg.M + 1))
    e0, e1 = 0.5 * traj[0].inner(traj[0]), 0.5 * traj[-1].inner(traj[-1])
    assert abs(e1 - e0 + dissipation) <= 1e-3 * e0


def test_cfl_guard():
    g = Grid(2, 16)
    data = ProblemData(g, 0.01, taylor_green(g, 50.0))
    tg = TimeGrid(1.0, 10)
    with pytest.raises(IntegrationError, match="CFL"):
        forward_solve(data, zero_control(data, tg), tg)


def test_forcing_series_length_checked():
    g = Grid(2, 8)
    f = [random_field(g, j) for j in range(3)]
    data = ProblemData(g, 0.1, random_field(g, 0), forcing=f)
    tg = TimeGrid(1.0, 4)
    with pytest.raises(ConfigurationError, match="forcing"):
        forward_solve(data, zero_control(data, tg), tg)


def test_problem_data_validation():
    g = Grid(2, 8)
    y0 = random_field(g, 0)
    with pytest.raises(ConfigurationError, match="physics.nu"):
        ProblemData(g, 0.0, y0)
    with pytest.raises(ConfigurationError):
        ProblemData(g, 0.1, random_field(Grid(2, 16), 0))
    with pytest.raises(ConfigurationError, match="observation"):
        ProblemData(g, 0.1, y0, observation="velocity")


def _problem(observation="identity", space=None, n=16):
    g = Grid(2, n)
    y0 = random_field(g, 3, energy=0.05, kcut=3)
    tgt = random_field(g, 4, kcut=3)
    f = random_field(g, 5, energy=0.01, kcut=2)
    return ProblemData(g, 0.05, y0, space=space, forcing=f, target=tgt * (2.0 / tgt.norm()), observation=observation)


@pytest.mark.parametrize("observation", ["identity", "curl"])
def test_tangent_is_derivative(observation):
    data = _problem(observation)
    tg = TimeGrid(0.5, 20)
    gen = rng(1)
    u = ControlTrajectory(0.2 * gen.standard_normal((tg.M + 1,) + data.space.shape), tg.dt)
    du = ControlTrajectory(gen.standard_normal((tg.M + 1,) + data.space.shape), tg.dt)
    traj = forward_solve(data, u, tg)
    dy = linearized_solve(data, traj, du)
    eps = 1e-5
    yp = forward_solve(data, u.replace(u.samples + eps * du.samples), tg)
    ym = forward_solve(data, u.replace(u.samples - eps * du.samples), tg)
    for m in (1, tg.M // 2, tg.M):
        fd = (yp[m] - ym[m]) / (2 * eps)
        assert (fd - dy[m]).norm() <= 1e-7 * dy[m].norm()


@pytest.mark.parametrize("observation", ["identity", "curl"])
@pytest.mark.parametrize("modes", [None, [(1, 0), (1, 1), (2, -1)]])
def test_discrete_duality(observation, modes):
    g = Grid(2, 16)
    space = ModeSet(g, modes) if modes else None
    data = _problem(observation, space)
    tg = TimeGrid(0.5, 20)
    gen = rng(2)
    u = ControlTrajectory(0.2 * gen.standard_normal((tg.M + 1,) + data.space.shape), tg.dt)
    du = ControlTrajectory(gen.standard_normal((tg.M + 1,) + data.space.shape), tg.dt)
    extra = [random_field(g, 50 + m) for m in range(tg.M + 1)]
    traj = forward_solve(data, u, tg)
    dy = linearized_solve(data, traj, du)
    p = adjoint_solve(data, traj, extra)
    w = tg.weights
    lhs = sum(w[m] * (data.tracking_gradient(traj[m], m) + extra[m]).inner(dy[m]) for m in range(tg.M + 1))
    rhs = -sum(w[m] * p[m].inner(data.space.apply_D(du[m])) for m in range(tg.M + 1))
    assert abs(lhs - rhs) <= 1e-11 * abs(lhs)


def test_adjoint_terminal_value():
    data = _problem()
    tg = TimeGrid(0.5, 10)
    traj = forward_solve(data, zero_control(data, tg), tg)
    p = adjoint_solve(data, traj)
    want = data.tracking_gradient(traj[-1], tg.M) * (-0.5 * tg.dt)
    assert (p[-1] - want).norm() <= 1e-14 * want.norm()


def test_adjoint_rejects_stageless_trajectory():
    data = _problem()
    tg = TimeGrid(0.5, 10)
    traj = forward_solve(data, zero_control(data, tg), tg)
    bare = type(traj)(traj.fields, tg)
    with pytest.raises(ConfigurationError, match="stages"):
        adjoint_solve(data, bare)


def test_stokes_subcase_is_linear():
    g = Grid(2, 8)
    data = ProblemData(g, 0.1, random_field(g, 1), convection=False)
    tg = TimeGrid(0.5, 8)
    gen = rng(3)
    a = ControlTrajectory(gen.standard_normal((tg.M + 1,) + data.space.shape), tg.dt)
    b = ControlTrajectory(gen.standard_normal((tg.M + 1,) + data.space.shape), tg.dt)
    z = forward_solve(data, zero_control(data, tg), tg)
    ya, yb = forward_solve(data, a, tg), forward_solve(data, b, tg)
    yab = forward_solve(data, a.replace(a.samples + b.samples), tg)
    assert ((yab[-1] - z[-1]) - (ya[-1] - z[-1]) - (yb[-1] - z[-1])).norm() < 1e-13 * yab[-1].norm()


def test_existence_time():
    assert existence_time(1, 1, 1, 0, 0) == 1.0 / 3.0
    values = [existence_time(1.0, 0.5, 0.2, 0.1, L) for L in np.linspace(0, 3, 10)]
    assert all(b < a for a, b in zip(values, values[1:]))
    assert existence_time(1, 1, 0, 0, 0) == math.inf
    with pytest.raises(ConfigurationError):
        existence_time(0, 1, 1, 0, 0)
    with pytest.raises(ConfigurationError):
        existence_time(1, 1, 1, 0, -1)


def test_norm_helpers():
    g = Grid(2, 8)
    f = random_field(g, 2)
    data = ProblemData(g, 0.1, random_field(g, 1), forcing=f)
    tg = TimeGrid(2.0, 8)
    assert math.isclose(forcing_l2_sq(data, tg), 2.0 * f.inner(f), rel_tol=1e-12)
    assert control_l2_norm(data, zero_control(data, tg)) == 0.0

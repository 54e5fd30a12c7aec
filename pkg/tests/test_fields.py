import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nscopt.errors import ConfigurationError
from nscopt.fields import (
    Grid,
    VelocityField,
    check_invariants,
    from_physical,
    leray_project,
    norms,
    random_field,
    taylor_green,
    to_physical,
)

seeds = st.integers(0, 2**31 - 1)


def test_band_edges():
    assert Grid(2, 16).kmax == 5  # 3 kmax < n keeps triple products exact
    assert Grid(3, 8).kmax == 5 - 3  # ceil(8/3) - 1
    assert Grid(2, 4).kmax == 1
    g = Grid(2, 8)
    assert not g.band[0, 0]
    assert np.all(np.abs(g.wavenumbers[:, g.band]) <= g.kmax)


@pytest.mark.parametrize("d,n", [(1, 8), (4, 8), (2, 7), (2, 2)])
def test_grid_rejects(d, n):
    with pytest.raises(ConfigurationError):
        Grid(d, n)


def test_coefficients_are_read_only():
    y = random_field(Grid(2, 8), 1)
    with pytest.raises(ValueError):
        y.coeffs[0, 1, 1] = 1.0


def test_wrong_shape_rejected():
    with pytest.raises(ConfigurationError):
        VelocityField(Grid(2, 8), np.zeros((2, 4, 4)))


def test_grid_mismatch():
    a, b = random_field(Grid(2, 8), 1), random_field(Grid(2, 16), 1)
    with pytest.raises(ConfigurationError):
        a.inner(b)


@given(seeds, st.sampled_from([(2, 8), (2, 16), (3, 8)]))
def test_random_fields_satisfy_invariants(seed, dn):
    y = random_field(Grid(*dn), seed)
    check_invariants(y, 1e-12)


def test_invariant_checker_catches_divergence():
    g = Grid(2, 8)
    c = np.zeros((2,) + g.shape, dtype=complex)
    c[0, 1, 0] = c[0, -1, 0] = 1.0  # u = 2 cos x: divergent
    with pytest.raises(ValueError, match="divergence"):
        check_invariants(VelocityField(g, c))


@given(seeds)
def test_parseval(seed):
    g = Grid(2, 16)
    y = random_field(g, seed)
    phys = to_physical(y)
    quad = g.cell_volume * float(np.sum(phys**2))
    assert math.isclose(quad, y.inner(y), rel_tol=1e-10)


@given(seeds)
def test_roundtrip_physical(seed):
    y = random_field(Grid(3, 8), seed)
    back = from_physical(to_physical(y), y.grid)
    assert np.max(np.abs(back.coeffs - y.coeffs)) <= 1e-13 * np.max(np.abs(y.coeffs))


def test_leray_idempotent_and_orthogonal():
    g = Grid(2, 16)
    raw = np.random.default_rng(0).standard_normal((2,) + g.shape)
    y = from_physical(raw, g)
    assert np.allclose(leray_project(y).coeffs, y.coeffs, atol=1e-15)
    # the removed part is a gradient, orthogonal to solenoidal fields
    from nscopt.fields import fft_forward

    full = fft_forward(raw, g) * g.band
    z = random_field(g, 3)
    removed = g.volume * float(np.sum(((full - y.coeffs) * np.conj(z.coeffs)).real))
    assert abs(removed) < 1e-12 * z.norm() * np.linalg.norm(raw)


def test_taylor_green_single_shell():
    for d in (2, 3):
        g = Grid(d, 8)
        y = taylor_green(g, 0.5)
        occupied = np.any(np.abs(y.coeffs) > 1e-14, axis=0)
        assert set(np.unique(g.k2[occupied])) == {d}
        l2, v, a = norms(y)
        assert math.isclose(v * v, d * l2 * l2, rel_tol=1e-12)
        assert math.isclose(a * a, d * d * l2 * l2, rel_tol=1e-12)


def test_taylor_green_energy():
    g = Grid(2, 16)
    y = taylor_green(g, 1.0)
    # |y|^2 = integral of sin^2 cos^2 + cos^2 sin^2 = 2 * pi^2
    assert math.isclose(y.inner(y), 2 * math.pi**2, rel_tol=1e-12)


def test_random_field_energy_and_seed():
    g = Grid(2, 16)
    y = random_field(g, 5, energy=0.3, kcut=3)
    assert math.isclose(0.5 * y.inner(y), 0.3, rel_tol=1e-12)
    assert np.all(y.coeffs[:, g.kabs > 3] == 0)
    assert np.array_equal(random_field(g, 5).coeffs, random_field(g, 5).coeffs)
    assert not np.array_equal(random_field(g, 5).coeffs, random_field(g, 6).coeffs)


@given(seeds, seeds, st.floats(-3, 3))
def test_arithmetic_linear(s1, s2, a):
    g = Grid(2, 8)
    y, z = random_field(g, s1), random_field(g, s2)
    w = y * a + z
    assert math.isclose(w.inner(y), a * y.inner(y) + z.inner(y), rel_tol=1e-9, abs_tol=1e-9)
    check_invariants(w - z / 2.0, 1e-12)

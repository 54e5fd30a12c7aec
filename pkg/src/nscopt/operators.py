"""Stokes operator, convection term, trilinear form and their linearizations.

All nonlinear products are formed pseudo-spectrally: factors are taken to
physical space, multiplied pointwise, transformed back, Leray-projected and
truncated to the dealiased band.  Because every field lives inside the band
the grid quadrature of any triple product is exact, so the skew-symmetry of
``b`` and the adjoint pairing of ``B'`` hold to round-off.
"""

import numpy as np

from .errors import ConfigurationError
from .fields import VelocityField, fft_forward, fft_inverse, project_coeffs


def _same_grid(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        g.check_same(f.grid)
    return g


def _gradient_physical(y):
    """Physical samples of ``d_i y_j`` with shape ``(d, d, ...)`` indexed
    ``[i, j]``."""
    return _physical_with_gradient(y)[1]


def _physical_with_gradient(*fields):
    """Samples of each field and of its gradient, in one batched transform.

    Returns ``(y_1, grad y_1, y_2, grad y_2, ...)``.
    """
    grid = fields[0].grid
    d = grid.d
    k = grid.wavenumbers
    blocks = []
    for f in fields:
        blocks.append(f.coeffs)
        blocks.append((1j * k[:, None] * f.coeffs[None, :]).reshape((d * d,) + grid.shape))
    phys = fft_inverse(np.concatenate(blocks), grid)
    out = []
    pos = 0
    for _ in fields:
        out.append(phys[pos : pos + d])
        out.append(phys[pos + d : pos + d + d * d].reshape((d, d) + grid.shape))
        pos += d + d * d
    return tuple(out)


def _advect(a_phys, grad_b):
    """``((a . grad) b)_j = sum_i a_i d_i b_j`` from physical samples."""
    return np.einsum("i...,ij...->j...", a_phys, grad_b)


def _to_field(samples, grid):
    return VelocityField.wrap(grid, project_coeffs(fft_forward(samples, grid), grid))


def apply_A(y):
    return VelocityField.wrap(y.grid, y.coeffs * y.grid.k2)


def apply_A_inverse(y):
    return VelocityField.wrap(y.grid, y.coeffs * y.grid.inv_k2)


def apply_A_power(y, power):
    """Fractional Stokes power ``A^s`` (zero mode maps to zero)."""
    grid = y.grid
    mult = np.zeros_like(grid.k2)
    nz = grid.k2 > 0
    mult[nz] = grid.k2[nz] ** power
    return VelocityField(grid, y.coeffs * mult)


def trilinear_b(y, z, w):
    """``b(y, z, w) = integral of y_i (d_i z_j) w_j`` by grid quadrature."""
    grid = _same_grid(y, z, w)
    yp = fft_inverse(y.coeffs, grid)
    wp = fft_inverse(w.coeffs, grid)
    conv = _advect(yp, _gradient_physical(z))
    return grid.cell_volume * float(np.sum(conv * wp))


def apply_B(y):
    """Leray projection of ``(y . grad) y``."""
    yp, gy = _physical_with_gradient(y)
    return _to_field(_advect(yp, gy), y.grid)


def apply_Bprime(y, z):
    """Linearization of ``B`` at ``y`` applied to ``z``."""
    grid = _same_grid(y, z)
    yp, gy, zp, gz = _physical_with_gradient(y, z)
    return _to_field(_advect(yp, gz) + _advect(zp, gy), grid)


def apply_Bprime_adjoint(y, p, sign=1.0):
    """H-adjoint of ``apply_Bprime(y, .)``: ``P[-(y . grad) p + (grad y)^T p]``.

    ``sign`` multiplies the transpose term; it exists only so the self-test
    can inject a fault and must otherwise stay 1.
    """
    grid = _same_grid(y, p)
    yp, gy, pp, gp = _physical_with_gradient(y, p)
    transport = _advect(yp, gp)
    # (grad y)^T p: component i is sum_j p_j d_i y_j
    stretch = np.einsum("j...,ij...->i...", pp, gy)
    return _to_field(-transport + sign * stretch, grid)


def curl(y):
    """Spectral curl.

    For ``d = 2`` returns the scalar vorticity coefficients ``(n, n)``;
    for ``d = 3`` returns a :class:`VelocityField`.
    """
    grid = y.grid
    k = grid.wavenumbers
    c = y.coeffs
    if grid.d == 2:
        return 1j * (k[0] * c[1] - k[1] * c[0])
    out = 1j * np.stack(
        [k[1] * c[2] - k[2] * c[1], k[2] * c[0] - k[0] * c[2], k[0] * c[1] - k[1] * c[0]]
    )
    return VelocityField(grid, out)


def helical_parts(y):
    """Split a 3D field into its positive and negative helicity parts.

    ``y = y_plus + y_minus`` with ``curl y_s = s |k| y_s`` mode by mode.
    """
    grid = y.grid
    if grid.d != 3:
        raise ConfigurationError("helical decomposition requires d = 3")
    inv_k = np.zeros_like(grid.kabs)
    nz = grid.kabs > 0
    inv_k[nz] = 1.0 / grid.kabs[nz]
    rot = curl(y).coeffs * inv_k
    plus = VelocityField(grid, 0.5 * (y.coeffs + rot))
    minus = VelocityField(grid, 0.5 * (y.coeffs - rot))
    return plus, minus

"""Divergence-free vector fields on the periodic torus [0, 2*pi)^d.

Conventions
-----------
Coefficients are stored in standard FFT order with the forward transform
divided by ``n**d``, so that

    y(x) = sum_k  c_k exp(i k.x)

and the H inner product is ``(2*pi)**d * sum_k Re(c_k . conj(e_k))``.
A field only carries modes inside the dealiased band ``|k_i| <= kmax``
where ``kmax`` is the largest integer strictly below
``dealias_fraction * n / 2``.  With the default 2/3 rule this makes every
triple product of band-limited fields exactly integrable on the grid,
which is what keeps the trilinear identities exact to round-off.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.fft

from .errors import ConfigurationError

TWO_PI = 2.0 * math.pi


def _workers():
    value = os.environ.get("NSCOPT_THREADS")
    if not value:
        return 1
    try:
        return max(1, int(value))
    except ValueError:
        return 1


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with ``n`` points per axis in ``d`` dimensions."""

    d: int
    n: int
    dealias_fraction: Fraction = Fraction(2, 3)

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ConfigurationError(f"dimension must be 2 or 3, got {self.d}")
        if self.n < 4 or self.n % 2:
            raise ConfigurationError(f"resolution must be even and >= 4, got {self.n}")
        frac = Fraction(self.dealias_fraction).limit_denominator(10**6)
        if not 0 < frac <= 1:
            raise ConfigurationError(f"dealias_fraction must lie in (0, 1], got {frac}")
        object.__setattr__(self, "dealias_fraction", frac)
        if self.kmax < 1:
            raise ConfigurationError("dealiased band contains no nonzero mode")

    @property
    def shape(self):
        return (self.n,) * self.d

    @property
    def axes(self):
        """Spatial axes, counted from the end so leading tensor indices are free."""
        return tuple(range(-self.d, 0))

    @cached_property
    def kmax(self):
        bound = self.dealias_fraction * self.n / 2
        return math.ceil(bound) - 1

    @cached_property
    def wavenumbers(self):
        k1 = np.fft.fftfreq(self.n, d=1.0 / self.n)
        return np.stack(np.meshgrid(*([k1] * self.d), indexing="ij"))

    @cached_property
    def k2(self):
        return np.sum(self.wavenumbers**2, axis=0)

    @cached_property
    def inv_k2(self):
        out = np.zeros_like(self.k2)
        nz = self.k2 > 0
        out[nz] = 1.0 / self.k2[nz]
        return out

    @cached_property
    def kabs(self):
        return np.sqrt(self.k2)

    @cached_property
    def band(self):
        """Boolean mask of retained modes (dealiased band, zero mode removed)."""
        inside = np.all(np.abs(self.wavenumbers) <= self.kmax, axis=0)
        return inside & (self.k2 > 0)

    @cached_property
    def coordinates(self):
        x1 = TWO_PI * np.arange(self.n) / self.n
        return np.stack(np.meshgrid(*([x1] * self.d), indexing="ij"))

    @property
    def volume(self):
        return TWO_PI**self.d

    @property
    def cell_volume(self):
        return (TWO_PI / self.n) ** self.d

    def check_same(self, other):
        if self != other:
            raise ConfigurationError(f"grid mismatch: {self} vs {other}")


class FieldNorms(NamedTuple):
    l2: float
    v: float
    a: float


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Real, mean-free, divergence-free vector field in spectral form.

    ``coeffs`` has shape ``(d, n, ..., n)``.  Instances are immutable; the
    arithmetic operators return new fields.  The constructor does not
    project; use :func:`leray_project` or :func:`from_physical` to build a
    field from arbitrary data.
    """

    grid: Grid
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        expected = (self.grid.d,) + self.grid.shape
        if c.shape != expected:
            raise ConfigurationError(f"coefficient shape {c.shape} does not match grid {expected}")
        if c is self.coeffs and c.flags.writeable:
            c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def wrap(cls, grid, coeffs):
        """Adopt a freshly computed array without copying or validation."""
        obj = object.__new__(cls)
        coeffs.flags.writeable = False
        object.__setattr__(obj, "grid", grid)
        object.__setattr__(obj, "coeffs", coeffs)
        return obj

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.d,) + grid.shape, dtype=np.complex128))

    def _coerce(self, other):
        if not isinstance(other, VelocityField):
            return NotImplemented
        self.grid.check_same(other.grid)
        return other.coeffs

    def __add__(self, other):
        c = self._coerce(other)
        if c is NotImplemented:
            return c
        return VelocityField.wrap(self.grid, self.coeffs + c)

    def __sub__(self, other):
        c = self._coerce(other)
        if c is NotImplemented:
            return c
        return VelocityField.wrap(self.grid, self.coeffs - c)

    def __mul__(self, scalar):
        if isinstance(scalar, VelocityField):
            return NotImplemented
        return VelocityField.wrap(self.grid, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return VelocityField.wrap(self.grid, self.coeffs / float(scalar))

    def __neg__(self):
        return VelocityField.wrap(self.grid, -self.coeffs)

    def inner(self, other):
        return inner(self, other)

    def norm(self):
        return math.sqrt(max(inner(self, self), 0.0))

    def check_invariants(self, tol=1e-12):
        """Raise ``ValueError`` if Hermitian symmetry, band, zero mean or
        solenoidality fail at relative tolerance ``tol``."""
        check_invariants(self, tol)


# -- spectral helpers on raw coefficient arrays -------------------------------


def fft_forward(samples, grid):
    return scipy.fft.fftn(samples, axes=grid.axes, workers=_workers()) / grid.n**grid.d


def fft_inverse(coeffs, grid):
    """Real samples from Hermitian coefficients (only the half spectrum is read)."""
    half = coeffs[..., : grid.n // 2 + 1]
    out = scipy.fft.irfftn(half, s=grid.shape, axes=grid.axes, workers=_workers())
    return out * grid.n**grid.d


def project_coeffs(coeffs, grid):
    """Leray projection plus band truncation of a raw ``(d, ...)`` array."""
    k = grid.wavenumbers
    kdotc = np.sum(k * coeffs, axis=0)
    out = coeffs - k * (kdotc * grid.inv_k2)
    return out * grid.band


def mirror(coeffs, grid):
    """Return the array indexed at ``-k``."""
    axes = grid.axes
    return np.roll(np.flip(coeffs, axis=axes), 1, axis=axes)


def spectral_gradient(coeffs_scalar, grid):
    """Coefficients of ``grad`` of a scalar: shape ``(d, ...)``."""
    return 1j * grid.wavenumbers * coeffs_scalar


# -- public operations --------------------------------------------------------


def to_physical(y):
    """Grid samples of ``y`` with shape ``(d, n, ..., n)``."""
    return fft_inverse(y.coeffs, y.grid)


def from_physical(samples, grid):
    """Build a field from physical samples (Leray-projected, mean removed)."""
    samples = np.asarray(samples, dtype=float)
    expected = (grid.d,) + grid.shape
    if samples.shape != expected:
        raise ConfigurationError(f"sample shape {samples.shape} does not match grid {expected}")
    return VelocityField.wrap(grid, project_coeffs(fft_forward(samples, grid), grid))


def leray_project(w, grid=None):
    """Divergence-free part of ``w`` (a field or a raw coefficient array)."""
    if isinstance(w, VelocityField):
        grid, coeffs = w.grid, w.coeffs
    else:
        if grid is None:
            raise ConfigurationError("grid required when projecting a raw array")
        coeffs = np.asarray(w, dtype=np.complex128)
    return VelocityField(grid, project_coeffs(coeffs, grid))


def inner(y, z):
    """H inner product."""
    y.grid.check_same(z.grid)
    return y.grid.volume * float(np.sum((y.coeffs * np.conj(z.coeffs)).real))


def weighted_square(y, weight):
    """``(2*pi)^d * sum weight(k) |c_k|^2`` for a per-mode weight array."""
    return y.grid.volume * float(np.sum(weight * np.abs(y.coeffs) ** 2))


def norms(y):
    grid = y.grid
    l2 = weighted_square(y, 1.0)
    v = weighted_square(y, grid.k2)
    a = weighted_square(y, grid.k2**2)
    return FieldNorms(math.sqrt(l2), math.sqrt(v), math.sqrt(a))


def check_invariants(y, tol=1e-12):
    c = y.coeffs
    grid = y.grid
    scale = max(float(np.max(np.abs(c))), 1e-300)
    herm = float(np.max(np.abs(c - np.conj(mirror(c, grid)))))
    if herm > tol * scale:
        raise ValueError(f"Hermitian symmetry violated by {herm:.3e}")
    outside = float(np.max(np.abs(c[:, ~grid.band]))) if np.any(~grid.band) else 0.0
    if outside > tol * scale:
        raise ValueError(f"energy outside the retained band or at k=0: {outside:.3e}")
    div = np.sum(grid.wavenumbers * c, axis=0)
    kscale = scale * math.sqrt(grid.d) * grid.kmax
    if float(np.max(np.abs(div))) > tol * kscale:
        raise ValueError(f"divergence {float(np.max(np.abs(div))):.3e} exceeds tolerance")


# -- canonical fields -------------------------------------------------------


def taylor_green(grid, amplitude=1.0):
    """2D: ``a (sin x1 cos x2, -cos x1 sin x2)``; 3D adds ``cos x3`` and a zero
    third component.  Both live on the single shell ``|k|^2 = d``."""
    x = grid.coordinates
    if grid.d == 2:
        u = np.stack([np.sin(x[0]) * np.cos(x[1]), -np.cos(x[0]) * np.sin(x[1])])
    else:
        cz = np.cos(x[2])
        u = np.stack(
            [np.sin(x[0]) * np.cos(x[1]) * cz, -np.cos(x[0]) * np.sin(x[1]) * cz, np.zeros_like(cz)]
        )
    return from_physical(amplitude * u, grid)


def abc_flow(grid, a=1.0, b=1.0, c=1.0):
    """Arnold-Beltrami-Childress flow, a curl eigenfield with eigenvalue 1."""
    if grid.d != 3:
        raise ConfigurationError("ABC flow requires d = 3")
    x, y, z = grid.coordinates
    u = np.stack(
        [a * np.sin(z) + c * np.cos(y), b * np.sin(x) + a * np.cos(z), c * np.sin(y) + b * np.cos(x)]
    )
    return from_physical(u, grid)


def rng(seed):
    """Counter-based generator so seeded fields are portable across platforms."""
    return np.random.Generator(np.random.Philox(seed))


def random_field(grid, seed=0, energy=None, kcut=None, generator=None):
    """Gaussian random field restricted to ``|k| <= kcut``.

    ``energy`` sets the kinetic energy ``|y|^2 / 2``; ``None`` leaves the
    raw draw unscaled.
    """
    gen = generator if generator is not None else rng(seed)
    samples = gen.standard_normal((grid.d,) + grid.shape)
    coeffs = project_coeffs(fft_forward(samples, grid), grid)
    if kcut is not None:
        coeffs = coeffs * (grid.kabs <= kcut)
    y = VelocityField(grid, coeffs)
    if energy is not None:
        nrm = y.norm()
        if nrm == 0:
            raise ConfigurationError("random field has no modes below kcut")
        y = y * (math.sqrt(2.0 * energy) / nrm)
    return y

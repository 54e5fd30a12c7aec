"""Closed convex state constraints, their H-projections and Moreau envelopes.

Every set here has the form ``{y : Q(y) <= rho^2}`` with ``Q`` a diagonal
nonnegative quadratic form in a suitable spectral basis:

* energy ball:     ``Q(y) = |y|^2``
* enstrophy ball:  ``Q(y) = sum |k|^2 |y_k|^2``  (equals ``||curl y||^2``)
* helicity set:    ``Q(y) = <y, curl y> + lambda_h ||y||_V^2``, diagonal in the
  helical basis with eigenvalue ``lambda_h |k|^2 + s |k|`` for ``s = +-1``

The H-projection of ``y`` onto such a set is ``(I + mu M)^{-1} y`` with
``mu >= 0`` the root of the scalar equation ``Q(x(mu)) = rho^2``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericalError
from .fields import VelocityField
from .operators import apply_A, curl, helical_parts

ROOT_RTOL = 1e-12
MAX_ROOT_ITERS = 200


@dataclass(frozen=True)
class ProjectionResult:
    projected: VelocityField
    multiplier: float
    active: bool


class ConstraintSet:
    """Base class; subclasses supply the quadratic form and its cone."""

    name = "abstract"
    rho = math.inf

    def check_field(self, y):
        pass

    def functional(self, y):
        raise NotImplementedError

    def project(self, y):
        raise NotImplementedError

    def cone_direction(self, x):
        """Outward normal direction ``M x`` at a boundary point ``x``."""
        raise NotImplementedError

    def to_config(self):
        return {"variant": self.name}


@dataclass(frozen=True)
class Unconstrained(ConstraintSet):
    name = "unconstrained"

    def functional(self, y):
        return 0.0

    def project(self, y):
        return ProjectionResult(y, 0.0, False)

    def cone_direction(self, x):
        return VelocityField.zeros(x.grid)


def _check_radius(rho):
    if not (rho > 0 and math.isfinite(rho)):
        raise ConfigurationError(f"radius must be positive and finite, got {rho}", "constraint.rho")


@dataclass(frozen=True)
class EnergyBall(ConstraintSet):
    rho: float
    name = "energy"

    def __post_init__(self):
        _check_radius(self.rho)

    def functional(self, y):
        return y.inner(y)

    def project(self, y):
        nrm = y.norm()
        if nrm**2 <= self.rho**2 * (1.0 + ROOT_RTOL):
            return ProjectionResult(y, 0.0, False)
        return ProjectionResult(y * (self.rho / nrm), nrm / self.rho - 1.0, True)

    def cone_direction(self, x):
        return x

    def to_config(self):
        return {"variant": self.name, "rho": self.rho}


class _SpectralShrinkSet(ConstraintSet):
    """Sets whose form is diagonal in a list of (part, per-mode weight) pairs."""

    def parts(self, y):
        raise NotImplementedError

    def functional(self, y):
        return sum(
            y.grid.volume * float(np.sum(w * np.abs(part.coeffs) ** 2)) for part, w in self.parts(y)
        )

    def project(self, y):
        self.check_field(y)
        parts = self.parts(y)
        vol = y.grid.volume
        energies = [vol * np.abs(p.coeffs) ** 2 for p, _ in parts]
        weights = [np.broadcast_to(w, p.coeffs.shape) for p, w in parts]
        m = np.concatenate([w.ravel() for w in weights])
        e = np.concatenate([en.ravel() for en in energies])
        keep = (m > 0) & (e > 0)
        m, e = m[keep], e[keep]
        target = self.rho**2
        if float(np.sum(m * e)) <= target * (1.0 + ROOT_RTOL):
            return ProjectionResult(y, 0.0, False)
        mu = shrink_root(m, e, target)
        coeffs = sum(p.coeffs / (1.0 + mu * w) for p, w in parts)
        return ProjectionResult(VelocityField(y.grid, coeffs), mu, True)


def shrink_root(m, e, target):
    """Unique ``mu > 0`` with ``sum m e / (1 + mu m)^2 = target``.

    Safeguarded Newton inside a bisection bracket.  The function is convex
    and decreasing, so Newton from the left never overshoots; bisection
    only guards against round-off.
    """

    def q(mu):
        s = 1.0 / (1.0 + mu * m)
        val = float(np.sum(m * e * s * s))
        der = -2.0 * float(np.sum(m * m * e * s**3))
        return val - target, der

    if not (target > 0 and math.isfinite(target)) or not np.all(np.isfinite(e)) or np.any(m <= 0):
        raise NumericalError(f"projection root-finder got invalid data (target {target})")
    lo, hi = 0.0, math.sqrt(float(np.sum(e / m)) / target)
    while q(hi)[0] > 0:
        hi *= 2.0
    mu = lo
    f_lo = q(lo)[0]
    for _ in range(MAX_ROOT_ITERS):
        f, df = q(mu)
        if abs(f) <= ROOT_RTOL * target:
            return mu
        if f > 0:
            lo, f_lo = mu, f
        else:
            hi = mu
        step = mu - f / df if df < 0 else math.nan
        mu = step if lo < step < hi else 0.5 * (lo + hi)
        if hi - lo <= 1e-16 * max(hi, 1e-300):
            return mu
    raise NumericalError(
        f"projection root-finder did not converge in {MAX_ROOT_ITERS} iterations; "
        f"bracket [{lo:.6e}, {hi:.6e}], residual at lower end {f_lo:.3e}"
    )


@dataclass(frozen=True)
class EnstrophyBall(_SpectralShrinkSet):
    rho: float
    name = "enstrophy"

    def __post_init__(self):
        _check_radius(self.rho)

    def parts(self, y):
        return [(y, y.grid.k2)]

    def cone_direction(self, x):
        return apply_A(x)

    def to_config(self):
        return {"variant": self.name, "rho": self.rho}


@dataclass(frozen=True)
class HelicitySet(_SpectralShrinkSet):
    rho: float
    lambda_h: float = 1.0
    name = "helicity"

    def __post_init__(self):
        _check_radius(self.rho)
        # smallest nonzero torus wavenumber is 1: lambda_h |k|^2 - |k| >= 0 needs lambda_h >= 1
        if not self.lambda_h >= 1.0:
            raise ConfigurationError(
                f"helicity weight must be >= 1 for convexity, got {self.lambda_h}",
                "constraint.lambda_h",
            )

    def check_field(self, y):
        if y.grid.d != 3:
            raise ConfigurationError("helicity set requires d = 3", "constraint.variant")

    def parts(self, y):
        self.check_field(y)
        plus, minus = helical_parts(y)
        g = y.grid
        return [(plus, self.lambda_h * g.k2 + g.kabs), (minus, self.lambda_h * g.k2 - g.kabs)]

    def functional(self, y):
        self.check_field(y)
        return super().functional(y)

    def cone_direction(self, x):
        return self.lambda_h * apply_A(x) + curl(x)

    def to_config(self):
        return {"variant": self.name, "rho": self.rho, "lambda_h": self.lambda_h}


def constraint_value(K, y):
    """The defining quadratic functional ``Q(y)``."""
    K.check_field(y)
    return K.functional(y)


def contains(K, y, tol=0.0):
    K.check_field(y)
    if isinstance(K, Unconstrained):
        return True
    return K.functional(y) <= K.rho**2 + tol


def project(K, y):
    K.check_field(y)
    return K.project(y)


def distance(K, y):
    return (y - project(K, y).projected).norm()


def _check_lambda(lam):
    if not lam > 0:
        raise ConfigurationError(f"regularization parameter must be positive, got {lam}")


def phi_lambda(K, y, lam):
    """Moreau envelope of the indicator of ``K``: ``dist(y, K)^2 / (2 lam)``."""
    _check_lambda(lam)
    r = y - project(K, y).projected
    return r.inner(r) / (2.0 * lam)


def grad_phi_lambda(K, y, lam):
    _check_lambda(lam)
    return (y - project(K, y).projected) / lam


def make_constraint(variant, rho=None, lambda_h=1.0):
    variant = variant.lower()
    if variant == "unconstrained":
        return Unconstrained()
    if rho is None:
        raise ConfigurationError("radius is required", "constraint.rho")
    if variant == "energy":
        return EnergyBall(float(rho))
    if variant == "enstrophy":
        return EnstrophyBall(float(rho))
    if variant == "helicity":
        return HelicitySet(float(rho), float(lambda_h))
    raise ConfigurationError(f"unknown constraint variant {variant!r}", "constraint.variant")

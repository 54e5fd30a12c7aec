"""Control space ``U``, actuation ``D``/``D*`` and convex control costs.

A U-vector is a real numpy array of the space's ``shape``; the U inner
product is ``weight * sum(u * v)``.  The weight is chosen per space so that
``<D u, y>_H == <u, D* y>_U`` holds exactly in floating point arithmetic
up to round-off.

All control costs are radial (functions of ``|u|_U`` only), which lets the
subgradient probe family be evaluated in closed form.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .fields import (
    VelocityField,
    fft_forward,
    fft_inverse,
    mirror,
    project_coeffs,
)


class ControlSpace:
    shape = ()
    weight = 1.0

    def __init__(self, grid):
        self.grid = grid

    @property
    def ndim(self):
        return len(self.shape)

    def zeros(self):
        return np.zeros(self.shape)

    def inner(self, u, v):
        """U inner product, vectorized over leading axes."""
        axes = tuple(range(-self.ndim, 0))
        return self.weight * np.sum(np.asarray(u) * np.asarray(v), axis=axes)

    def norm(self, u):
        return np.sqrt(np.maximum(self.inner(u, u), 0.0))

    def _check(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != self.shape:
            raise ConfigurationError(f"control shape {u.shape} does not match {self.shape}")
        return u

    def apply_D(self, u):
        raise NotImplementedError

    def apply_Dstar(self, y):
        raise NotImplementedError


class FullField(ControlSpace):
    """Distributed control on the whole torus: ``D = P`` on grid samples."""

    name = "full"

    def __init__(self, grid):
        super().__init__(grid)
        self.shape = (grid.d,) + grid.shape
        self.weight = grid.cell_volume

    def apply_D(self, u):
        u = self._check(u)
        return VelocityField(self.grid, project_coeffs(fft_forward(u, self.grid), self.grid))

    def apply_Dstar(self, y):
        self.grid.check_same(y.grid)
        return fft_inverse(y.coeffs, self.grid)


class SubdomainMask(FullField):
    """Control supported on the set where ``mask == 1``."""

    name = "mask"

    def __init__(self, grid, mask):
        super().__init__(grid)
        mask = np.asarray(mask, dtype=float)
        if mask.shape != grid.shape:
            raise ConfigurationError(f"mask shape {mask.shape} does not match grid {grid.shape}")
        if not np.all((mask == 0) | (mask == 1)):
            raise ConfigurationError("mask values must be 0 or 1", "control.mask")
        self.mask = mask

    def apply_D(self, u):
        u = self._check(u)
        return super().apply_D(u * self.mask)

    def apply_Dstar(self, y):
        return super().apply_Dstar(y) * self.mask


class ModeSet(ControlSpace):
    """Control acting on a finite list of Fourier modes.

    Each listed wavevector ``k`` carries a complex amplitude (stored as
    ``(re, im)`` per component); its conjugate partner at ``-k`` is implied.
    """

    name = "modes"

    def __init__(self, grid, modes):
        super().__init__(grid)
        modes = [tuple(int(c) for c in k) for k in modes]
        if not modes:
            raise ConfigurationError("mode list is empty", "control.modes")
        seen = set()
        for k in modes:
            if len(k) != grid.d:
                raise ConfigurationError(f"mode {k} has wrong dimension", "control.modes")
            if all(c == 0 for c in k) or max(abs(c) for c in k) > grid.kmax:
                raise ConfigurationError(
                    f"mode {k} is zero or outside the resolved band |k_i| <= {grid.kmax}",
                    "control.modes",
                )
            neg = tuple(-c for c in k)
            if k in seen or neg in seen:
                raise ConfigurationError(f"mode {k} listed twice (or with its conjugate)", "control.modes")
            seen.add(k)
        self.modes = modes
        self.index = tuple(np.array([k[i] % grid.n for k in modes]) for i in range(grid.d))
        self.shape = (len(modes), grid.d, 2)
        # each listed mode appears twice (k and -k) in the real field
        self.weight = 2.0 * grid.volume

    def apply_D(self, u):
        u = self._check(u)
        coeffs = np.zeros((self.grid.d,) + self.grid.shape, dtype=np.complex128)
        amp = u[..., 0] + 1j * u[..., 1]
        for c in range(self.grid.d):
            coeffs[(c,) + self.index] = amp[:, c]
        coeffs = coeffs + np.conj(mirror(coeffs, self.grid))
        return VelocityField(self.grid, project_coeffs(coeffs, self.grid))

    def apply_Dstar(self, y):
        self.grid.check_same(y.grid)
        out = np.empty(self.shape)
        for c in range(self.grid.d):
            vals = y.coeffs[(c,) + self.index]
            out[:, c, 0] = vals.real
            out[:, c, 1] = vals.imag
        return out


def make_control_space(grid, variant="full", modes=None, mask=None):
    variant = variant.lower()
    if variant == "full":
        return FullField(grid)
    if variant == "modes":
        return ModeSet(grid, modes or [])
    if variant == "mask":
        if mask is None:
            raise ConfigurationError("mask array required", "control.mask")
        return SubdomainMask(grid, mask)
    raise ConfigurationError(f"unknown control space {variant!r}", "control.space")


@dataclass(frozen=True)
class ControlTrajectory:
    """Samples ``u(t_m)`` for ``m = 0..M`` on a uniform time grid."""

    samples: np.ndarray
    dt: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim < 1 or s.shape[0] < 3:
            raise ConfigurationError("control trajectory needs at least 3 samples")
        if not np.all(np.isfinite(s)):
            raise ConfigurationError("control trajectory contains non-finite values")
        if not self.dt > 0:
            raise ConfigurationError(f"time step must be positive, got {self.dt}")
        s = s.copy()
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    @classmethod
    def zeros(cls, space, M, dt):
        return cls(np.zeros((M + 1,) + space.shape), dt)

    @property
    def M(self):
        return self.samples.shape[0] - 1

    @property
    def weights(self):
        return trapezoid_weights(self.M, self.dt)

    def __len__(self):
        return self.samples.shape[0]

    def __getitem__(self, m):
        return self.samples[m]

    def replace(self, samples):
        return ControlTrajectory(samples, self.dt)

    def inner(self, other, space):
        """``sum_m w_m <u_m, v_m>_U`` with trapezoid weights."""
        vals = space.inner(self.samples, np.asarray(getattr(other, "samples", other)))
        return float(np.sum(self.weights * vals))

    def norm(self, space):
        return math.sqrt(max(self.inner(self, space), 0.0))


def trapezoid_weights(M, dt):
    w = np.full(M + 1, float(dt))
    w[0] = w[-1] = 0.5 * dt
    return w


# -- control costs ------------------------------------------------------------


def _check_lambda(lam):
    if not lam > 0:
        raise ConfigurationError(f"regularization parameter must be positive, got {lam}")


class CostH:
    """Convex radial control cost ``h(u) = H(|u|_U)``."""

    name = "abstract"
    beta = 0.0
    radius = math.inf

    def radial(self, r):
        """``H`` evaluated on an array of norms."""
        r = np.asarray(r, dtype=float)
        out = 0.5 * self.beta * r**2
        return np.where(r <= self.radius * (1.0 + 1e-12), out, np.inf)

    def radial_prox(self, r, lam):
        """Norm of ``prox`` given the input norm (prox is radial scaling)."""
        return np.minimum(np.asarray(r, dtype=float) / (1.0 + lam * self.beta), self.radius)

    def value(self, u, space):
        return self.radial(space.norm(u))

    def prox(self, u, lam, space):
        _check_lambda(lam)
        u = np.asarray(u, dtype=float)
        r = space.norm(u)
        pr = self.radial_prox(r, lam)
        scale = np.divide(pr, r, out=np.zeros_like(np.asarray(r, dtype=float)), where=r > 0)
        return u * np.expand_dims(scale, tuple(range(-space.ndim, 0)))

    def moreau(self, u, lam, space):
        """Yosida regularization ``h_lam(u) = |u - prox|^2 / (2 lam) + h(prox)``."""
        _check_lambda(lam)
        r = space.norm(u)
        pr = self.radial_prox(r, lam)
        return (r - pr) ** 2 / (2.0 * lam) + 0.5 * self.beta * pr**2

    def grad_moreau(self, u, lam, space):
        return (np.asarray(u, dtype=float) - self.prox(u, lam, space)) / lam

    def coercivity(self):
        """``(alpha, C)`` with ``h(u) >= alpha |u|^2 + C``."""
        raise NotImplementedError

    def to_config(self):
        return {"cost": self.name}


@dataclass(frozen=True)
class Quadratic(CostH):
    beta: float
    name = "quadratic"

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigurationError(f"beta must be positive, got {self.beta}", "control.beta")

    def coercivity(self):
        return 0.5 * self.beta, 0.0

    def to_config(self):
        return {"cost": self.name, "beta": self.beta}


@dataclass(frozen=True)
class BallIndicator(CostH):
    radius: float
    name = "ball"

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigurationError(f"radius must be positive, got {self.radius}", "control.radius")

    def coercivity(self, alpha=1.0):
        return alpha, -alpha * self.radius**2

    def to_config(self):
        return {"cost": self.name, "r": self.radius}


@dataclass(frozen=True)
class QuadraticPlusBall(CostH):
    beta: float
    radius: float
    name = "quadratic_ball"

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigurationError(f"beta must be positive, got {self.beta}", "control.beta")
        if not self.radius > 0:
            raise ConfigurationError(f"radius must be positive, got {self.radius}", "control.radius")

    def coercivity(self):
        return 0.5 * self.beta, 0.0

    def to_config(self):
        return {"cost": self.name, "beta": self.beta, "r": self.radius}


@dataclass(frozen=True)
class ZeroCost(CostH):
    """``h = 0``.  Not coercive; meant for diagnostics and manufactured tests."""

    name = "zero"

    def coercivity(self):
        return 0.0, 0.0


def make_cost(variant, beta=None, r=None):
    variant = variant.lower()
    if variant in ("quadratic", "quadratic_ball") and beta is None:
        raise ConfigurationError("beta is required", "control.beta")
    if variant in ("ball", "quadratic_ball") and r is None:
        raise ConfigurationError("radius is required", "control.radius")
    if variant == "quadratic":
        return Quadratic(float(beta))
    if variant == "ball":
        return BallIndicator(float(r))
    if variant == "quadratic_ball":
        return QuadraticPlusBall(float(beta), float(r))
    if variant == "zero":
        return ZeroCost()
    raise ConfigurationError(f"unknown control cost {variant!r}", "control.cost")


def h_value(h, u, space):
    return float(h.value(u, space))


def h_lambda_value(h, u, lam, space):
    return float(h.moreau(u, lam, space))


def grad_h_lambda(h, u, lam, space):
    return h.grad_moreau(u, lam, space)


def prox_h(h, u, lam, space):
    return h.prox(u, lam, space)


PROBE_SCALES = (0.0, 0.5, 0.9, 1.1, 2.0)
PROBE_STEPS = tuple(10.0**-j for j in range(7))


def subgradient_residual(h, u, g, space):
    """Violation of ``g in dh(u)``.

    Returns ``max(0, max_v h(u) - h(v) - <g, u - v>)`` over a probe family:
    scaled copies ``theta u`` and steps ``u + s e`` along the unit directions
    ``+-u/|u|``, ``+-g/|g|`` and every ``+-``coordinate axis, with
    ``s = max(|u|, 1) * 10^-j``, ``j = 0..6``.  Returns ``inf`` if
    ``h(u)`` is infinite.
    """
    u = np.asarray(u, dtype=float)
    g = np.asarray(g, dtype=float)
    r_u = float(space.norm(u))
    h_u = float(h.radial(r_u))
    if not math.isfinite(h_u):
        return math.inf
    ug = float(space.inner(u, g))
    best = -math.inf

    thetas = np.asarray(PROBE_SCALES)
    h_v = h.radial(thetas * r_u)
    best = max(best, float(np.max(h_u - h_v - (1.0 - thetas) * ug)))

    # unit directions as (<u, e>, <g, e>) pairs; |e| = 1
    ue, ge = [], []
    r_g = float(space.norm(g))
    if r_u > 0:
        ue.append(r_u)
        ge.append(ug / r_u)
    if r_g > 0:
        ue.append(ug / r_g)
        ge.append(r_g)
    sw = math.sqrt(space.weight)
    ue.extend((sw * u).ravel())
    ge.extend((sw * g).ravel())
    ue = np.asarray(ue)
    ge = np.asarray(ge)
    ue = np.concatenate([ue, -ue])
    ge = np.concatenate([ge, -ge])
    steps = max(r_u, 1.0) * np.asarray(PROBE_STEPS)
    s = steps[:, None]
    norm_v = np.sqrt(np.maximum(r_u**2 + 2.0 * s * ue[None, :] + s * s, 0.0))
    vals = h_u - h.radial(norm_v) + s * ge[None, :]
    best = max(best, float(np.max(vals)))
    return max(best, 0.0)

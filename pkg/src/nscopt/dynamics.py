"""Forward, linearized and adjoint time integration of the controlled flow.

The state equation ``y' + nu A y + B(y) = D u + f`` is advanced with a
second-order integrating-factor Heun scheme.  With ``E = exp(-nu A dt)``
and ``N_m(y) = -B(y) + D u_m + f_m``:

    ytil    = E (y_m + dt N_m(y_m))
    y_{m+1} = E (y_m + dt/2 N_m(y_m)) + dt/2 N_{m+1}(ytil)

Diffusion is integrated exactly, so single-shell Stokes eigenfields (and
Taylor-Green, whose convection is a pure gradient) decay exactly.

``linearized_solve`` is the exact tangent of this map and ``adjoint_solve``
its exact transpose, so gradients built from the adjoint agree with finite
differences of the discrete cost to round-off, not only to O(dt^2).
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .control import ControlSpace, ControlTrajectory, FullField, trapezoid_weights
from .errors import ConfigurationError, IntegrationError
from .fields import Grid, VelocityField, fft_inverse
from .operators import apply_A, apply_B, apply_Bprime, apply_Bprime_adjoint

CFL_LIMIT = 0.5

FieldSeries = Union[None, VelocityField, Sequence[VelocityField]]


@dataclass(frozen=True)
class TimeGrid:
    T: float
    M: int

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ConfigurationError(f"horizon must be positive, got {self.T}", "time.T")
        if int(self.M) != self.M or self.M < 2:
            raise ConfigurationError(f"need at least 2 steps, got {self.M}", "time.M")

    @property
    def dt(self):
        return self.T / self.M

    @property
    def times(self):
        return np.linspace(0.0, self.T, self.M + 1)

    @property
    def weights(self):
        return trapezoid_weights(self.M, self.dt)


@dataclass(frozen=True)
class ProblemData:
    """Physics of one control problem.

    ``forcing`` and ``target`` may be ``None`` (zero), one field (constant in
    time) or a sequence of ``M + 1`` fields.  ``observation`` is
    ``"identity"`` (``C = weight * I``) or ``"curl"`` (``C = weight * curl``).
    ``convection=False`` drops ``B`` and turns the state equation into the
    Stokes system; it exists for linear-quadratic test problems.
    """

    grid: Grid
    nu: float
    y0: VelocityField
    space: ControlSpace = None
    forcing: FieldSeries = None
    target: FieldSeries = None
    observation: str = "identity"
    obs_weight: float = 1.0
    convection: bool = True

    def __post_init__(self):
        if not (self.nu > 0 and math.isfinite(self.nu)):
            raise ConfigurationError(f"viscosity must be positive, got {self.nu}", "physics.nu")
        self.grid.check_same(self.y0.grid)
        if self.space is None:
            object.__setattr__(self, "space", FullField(self.grid))
        self.grid.check_same(self.space.grid)
        if self.observation not in ("identity", "curl"):
            raise ConfigurationError(
                f"observation must be 'identity' or 'curl', got {self.observation!r}",
                "physics.observation",
            )
        for name in ("forcing", "target"):
            series = getattr(self, name)
            if series is None or isinstance(series, VelocityField):
                fields = [] if series is None else [series]
            else:
                series = tuple(series)
                object.__setattr__(self, name, series)
                fields = series
            for f in fields:
                self.grid.check_same(f.grid)

    def _at(self, series, m):
        if series is None:
            return None
        if isinstance(series, VelocityField):
            return series
        return series[m]

    def forcing_at(self, m):
        return self._at(self.forcing, m)

    def target_at(self, m):
        return self._at(self.target, m)

    def check_series_length(self, M):
        for name in ("forcing", "target"):
            series = getattr(self, name)
            if isinstance(series, tuple) and len(series) != M + 1:
                raise ConfigurationError(f"{name} has {len(series)} samples, expected {M + 1}")

    def replace(self, **changes):
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return ProblemData(**kw)

    # -- observation -------------------------------------------------------

    def misfit(self, y, m):
        tgt = self.target_at(m)
        return y if tgt is None else y - tgt

    def tracking_value(self, y, m):
        """``|C (y - y_target)|^2`` at step ``m``."""
        r = self.misfit(y, m)
        if self.observation == "identity":
            return self.obs_weight**2 * r.inner(r)
        return self.obs_weight**2 * r.inner(apply_A(r))

    def tracking_gradient(self, y, m):
        """``C* C (y - y_target)``."""
        r = self.misfit(y, m)
        if self.observation == "identity":
            return r * self.obs_weight**2
        return apply_A(r) * self.obs_weight**2


@dataclass(frozen=True)
class StateTrajectory:
    fields: tuple
    time_grid: TimeGrid
    stages: tuple = ()

    def __len__(self):
        return len(self.fields)

    def __getitem__(self, m):
        return self.fields[m]


@dataclass(frozen=True)
class AdjointTrajectory:
    fields: tuple
    time_grid: TimeGrid

    def __len__(self):
        return len(self.fields)

    def __getitem__(self, m):
        return self.fields[m]


def _decay(data, dt):
    return np.exp(-data.nu * data.grid.k2 * dt)


def _scale(E, y):
    return VelocityField.wrap(y.grid, E * y.coeffs)


def _source(data, u, m):
    g = data.space.apply_D(u[m])
    f = data.forcing_at(m)
    return g if f is None else g + f


def _check_state(y, m, dt):
    c = y.coeffs
    if not np.all(np.isfinite(c)):
        raise IntegrationError("non-finite state (blow-up)", m)
    vmax = float(np.max(np.abs(fft_inverse(c, y.grid))))
    cfl = vmax * dt * y.grid.n / 2
    if cfl > CFL_LIMIT:
        raise IntegrationError(f"CFL guard violated: max|y| dt n/2 = {cfl:.3g} > {CFL_LIMIT}", m)


def _check_inputs(data, u, tg):
    if u.M != tg.M or not math.isclose(u.dt, tg.dt, rel_tol=1e-12):
        raise ConfigurationError(f"control has {u.M} steps of {u.dt}, time grid {tg.M} of {tg.dt}")
    if u.samples.shape[1:] != data.space.shape:
        raise ConfigurationError("control samples do not match the control space shape")
    data.check_series_length(tg.M)


def forward_solve(data, u, tg, check_cfl=True):
    """Integrate the controlled state equation from ``data.y0``."""
    _check_inputs(data, u, tg)
    dt = tg.dt
    E = _decay(data, dt)
    y = data.y0
    if check_cfl:
        _check_state(y, 0, dt)
    states = [y]
    stages = []
    src = _source(data, u, 0)
    for m in range(tg.M):
        src_next = _source(data, u, m + 1)
        n0 = src - apply_B(y) if data.convection else src
        ytil = _scale(E, y + n0 * dt)
        n1 = src_next - apply_B(ytil) if data.convection else src_next
        y = _scale(E, y + n0 * (0.5 * dt)) + n1 * (0.5 * dt)
        if check_cfl:
            _check_state(y, m + 1, dt)
        elif not np.all(np.isfinite(y.coeffs)):
            raise IntegrationError("non-finite state (blow-up)", m + 1)
        stages.append(ytil)
        states.append(y)
        src = src_next
    return StateTrajectory(tuple(states), tg, tuple(stages))


def linearized_solve(data, traj, du):
    """Tangent of :func:`forward_solve` at ``traj`` in direction ``du``."""
    tg = traj.time_grid
    _check_inputs(data, du, tg)
    dt = tg.dt
    E = _decay(data, dt)
    w = VelocityField.zeros(data.grid)
    out = [w]
    src = data.space.apply_D(du[0])
    for m in range(tg.M):
        src_next = data.space.apply_D(du[m + 1])
        n0 = src - apply_Bprime(traj[m], w) if data.convection else src
        wtil = _scale(E, w + n0 * dt)
        n1 = src_next - apply_Bprime(traj.stages[m], wtil) if data.convection else src_next
        w = _scale(E, w + n0 * (0.5 * dt)) + n1 * (0.5 * dt)
        if not np.all(np.isfinite(w.coeffs)):
            raise IntegrationError("non-finite linearized state", m + 1)
        out.append(w)
        src = src_next
    return StateTrajectory(tuple(out), tg)


def adjoint_solve(data, traj, penalty_source=None, _adjoint_sign=1.0):
    """Backward dual solve with zero terminal value.

    The source at step ``m`` is ``C*C (y_m - y_target_m) + penalty_source[m]``.
    The result ``p`` is the Riesz representative of the discrete cost
    sensitivity in the trapezoid-weighted pairing: for any control
    perturbation, ``sum_m w_m <source_m, dy_m> = -sum_m w_m <p_m, D du_m>``
    where ``dy`` is the output of :func:`linearized_solve`.  ``p_M`` equals
    ``-dt/2`` times the terminal source rather than exactly zero.
    """
    tg = traj.time_grid
    M, dt = tg.M, tg.dt
    if len(traj) != M + 1 or (data.convection and len(traj.stages) != M):
        raise ConfigurationError("state trajectory is incomplete (missing predictor stages)")
    if penalty_source is not None and len(penalty_source) != M + 1:
        raise ConfigurationError(f"penalty source has {len(penalty_source)} samples, expected {M + 1}")
    w = tg.weights
    E = _decay(data, dt)

    def source(m):
        s = data.tracking_gradient(traj[m], m)
        if penalty_source is not None and penalty_source[m] is not None:
            s = s + penalty_source[m]
        return s

    lam = source(M) * w[M]
    q = [None] * (M + 1)
    q[M] = lam * (0.5 * dt)
    for m in range(M - 1, -1, -1):
        a1 = lam * (0.5 * dt)
        Elam = _scale(E, lam)
        if data.convection:
            Eb = _scale(E, -apply_Bprime_adjoint(traj.stages[m], a1, _adjoint_sign))
            c_n0 = Elam * (0.5 * dt) + Eb * dt
            c_y = Elam + Eb - apply_Bprime_adjoint(traj[m], c_n0, _adjoint_sign)
        else:
            c_n0 = Elam * (0.5 * dt)
            c_y = Elam
        lam = source(m) * w[m] + c_y
        q[m] = c_n0 if m == 0 else c_n0 + lam * (0.5 * dt)
        if not np.all(np.isfinite(lam.coeffs)):
            raise IntegrationError("non-finite adjoint state", m)
    p = tuple(q[m] * (-1.0 / w[m]) for m in range(M + 1))
    return AdjointTrajectory(p, tg)


def existence_time(C0, nu, y0_vnorm_sq, f_l2_sq, L):
    """Guaranteed strong-solution horizon

        T(L) = nu / (3 C0^3 [ ||y0||^2 + (2/nu)(||f||^2 + L^2) ]^3)

    with ``||y0||`` the V-norm of the initial field, ``||f||`` the
    L2(0,T;H) norm of the forcing and ``L`` the bound on ``||D u||``.
    """
    for name, v in (("C0", C0), ("nu", nu)):
        if not v > 0:
            raise ConfigurationError(f"{name} must be positive, got {v}")
    for name, v in (("y0_vnorm_sq", y0_vnorm_sq), ("f_l2_sq", f_l2_sq), ("L", L)):
        if v < 0:
            raise ConfigurationError(f"{name} must be nonnegative, got {v}")
    bracket = y0_vnorm_sq + (2.0 / nu) * (f_l2_sq + L * L)
    if bracket == 0:
        return math.inf
    return nu / (3.0 * C0**3 * bracket**3)


def control_l2_norm(data, u):
    """``||D u||_{L2(0,T;H)}`` with trapezoid quadrature."""
    w = u.weights
    return math.sqrt(sum(w[m] * data.space.apply_D(u[m]).inner(data.space.apply_D(u[m])) for m in range(len(u))))


def forcing_l2_sq(data, tg):
    w = tg.weights
    total = 0.0
    for m in range(tg.M + 1):
        f = data.forcing_at(m)
        if f is not None:
            total += w[m] * f.inner(f)
    return total

"""Dense reference solutions on tiny grids.

Everything here is assembled from explicit DFT matrices acting on physical
samples, independently of the FFT-based operators, and is only meant for
``n = 4`` grids where the matrices have a few hundred rows.
"""

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import brentq

from .constraints import EnergyBall
from .control import ControlTrajectory, trapezoid_weights
from .dynamics import ProblemData, TimeGrid
from .fields import taylor_green, to_physical


def _dft(grid):
    """``(F, Finv)`` with ``c = F @ samples`` and ``samples = Finv @ c``."""
    x = np.stack([c.ravel() for c in grid.coordinates])  # (d, N)
    k = np.stack([kk.ravel() for kk in grid.wavenumbers])  # (d, N)
    phase = k.T @ x  # (N_k, N_x)
    N = x.shape[1]
    return np.exp(-1j * phase) / N, np.exp(1j * phase.T), k


def _multiplier(F, Finv, m):
    return (Finv @ (m[:, None] * F)).real


class DenseOperators:
    """Band projector, Leray projector, derivatives and Stokes multipliers as
    dense matrices on stacked component samples of length ``d * n**d``."""

    def __init__(self, grid):
        self.grid = grid
        d = grid.d
        F, Finv, k = _dft(grid)
        self.F, self.Finv, self.k = F, Finv, k
        N = k.shape[1]
        self.N = N
        kmax = grid.kmax
        band = np.all(np.abs(k) <= kmax, axis=0) & np.any(k != 0, axis=0)
        k2 = np.sum(k * k, axis=0)
        safe = np.where(k2 > 0, k2, 1.0)
        P = np.zeros((d * N, d * N))
        for a in range(d):
            for b in range(d):
                m = band * ((a == b) - k[a] * k[b] / safe)
                P[a * N : (a + 1) * N, b * N : (b + 1) * N] = _multiplier(F, Finv, m.astype(float))
        self.P = 0.5 * (P + P.T)
        self.D = [_multiplier(F, Finv, 1j * k[a]) for a in range(d)]
        self.k2 = k2
        self.cv = grid.cell_volume

    def block(self, op):
        d = self.grid.d
        out = np.zeros((d * self.N, d * self.N))
        for a in range(d):
            out[a * self.N : (a + 1) * self.N, a * self.N : (a + 1) * self.N] = op
        return out

    def stokes_decay(self, nu, dt):
        return self.block(_multiplier(self.F, self.Finv, np.exp(-nu * self.k2 * dt)))

    def gradient_form(self):
        """Matrix of ``|grad x|^2`` in the Euclidean sample pairing times the cell volume."""
        G = sum(Dj.T @ Dj for Dj in self.D)
        return self.cv * self.block(G)

    def curl(self):
        D, N = self.D, self.N
        C = np.zeros((3 * N, 3 * N))
        for i, j, kk in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
            # (curl x)_i = D_j x_k - D_k x_j
            C[i * N : (i + 1) * N, kk * N : (kk + 1) * N] += D[j]
            C[i * N : (i + 1) * N, j * N : (j + 1) * N] -= D[kk]
        return C

    def basis(self):
        """Euclidean-orthonormal basis of band-limited solenoidal samples."""
        vals, vecs = eigh(self.P)
        return vecs[:, vals > 0.5]


def samples_of(y):
    return to_physical(y).reshape(-1)


def qp_projection(grid, y, variant, rho, lambda_h=1.0):
    """Projection of ``y`` onto ``{Q(x) <= rho^2}`` by eigendecomposition of
    the dense quadratic form and a bracketed scalar root for the multiplier.

    Returns the projected physical samples, shape ``(d, n, ..., n)``.
    """
    ops = DenseOperators(grid)
    B = ops.basis()
    if variant == "enstrophy":
        Q = ops.gradient_form()
    elif variant == "helicity":
        C = ops.curl()
        Q = lambda_h * ops.gradient_form() + ops.cv * 0.5 * (C + C.T)
    else:
        raise ValueError(variant)
    Qr = B.T @ Q @ B
    lam, V = eigh(0.5 * (Qr + Qr.T))
    lam = np.clip(lam, 0.0, None)
    z = V.T @ (B.T @ samples_of(y))

    def excess(mu):
        return float(np.sum(lam * z**2 / (1.0 + mu * lam) ** 2)) - rho**2

    if excess(0.0) <= 0:
        a = z
    else:
        hi = 1.0
        while excess(hi) > 0:
            hi *= 2.0
        mu = brentq(excess, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
        a = z / (1.0 + mu * lam)
    return (B @ (V @ a)).reshape((grid.d,) + grid.shape)


class StokesLQOracle:
    """Dense linear-quadratic Stokes control problem on a full-field control.

    State: the integrating-factor Heun recursion without convection,
    ``y_{m+1} = E (y_m + dt/2 s_m) + dt/2 s_{m+1}`` with ``s_m = P u_m + f``.
    Cost: ``sum_m w_m [1/2 |y_m - z|^2 + beta_eff/2 |u_m|^2]`` in the H
    pairing, where ``beta_eff`` is the Moreau-envelope coefficient of the
    quadratic cost.
    """

    def __init__(self, grid, nu, T, M, y0, forcing, target, beta_eff):
        ops = DenseOperators(grid)
        self.ops = ops
        self.M = M
        self.dt = T / M
        dN = grid.d * ops.N
        self.dN = dN
        E = ops.stokes_decay(nu, self.dt)
        P = ops.P
        w = trapezoid_weights(M, self.dt)
        self.w = w
        n_all = (M + 1) * dN
        # y = S u + y_free
        S = np.zeros((n_all, n_all))
        y_free = np.zeros(n_all)
        f = samples_of(forcing) if forcing is not None else np.zeros(dN)
        y_free[:dN] = samples_of(y0)
        half = 0.5 * self.dt
        for m in range(M):
            rows = slice((m + 1) * dN, (m + 2) * dN)
            prev = slice(m * dN, (m + 1) * dN)
            S[rows] = E @ S[prev]
            S[rows, prev] += half * (E @ P)
            S[rows, rows] += half * P
            y_free[rows] = E @ (y_free[prev] + half * f) + half * f
        self.S = S
        self.y_free = y_free
        self.z = np.tile(samples_of(target), M + 1) if target is not None else np.zeros(n_all)
        self.W = np.repeat(w, dN) * ops.cv
        self.beta = beta_eff

    def cost(self, u):
        y = self.S @ u + self.y_free
        r = y - self.z
        return 0.5 * float(np.sum(self.W * r * r)) + 0.5 * self.beta * float(np.sum(self.W * u * u))

    def gradient(self, u):
        """Riesz representative in the weighted metric ``sum W u v``."""
        r = self.S @ u + self.y_free - self.z
        return (self.S.T @ (self.W * r)) / self.W + self.beta * u

    def solve(self):
        """Stationary point of the KKT system."""
        A = self.S.T @ (self.W[:, None] * self.S) + self.beta * np.diag(self.W)
        b = -self.S.T @ (self.W * (self.y_free - self.z))
        return np.linalg.solve(A, b)

    def to_control(self, u_flat):
        g = self.ops.grid
        return ControlTrajectory(u_flat.reshape((self.M + 1, g.d) + g.shape), self.dt)


def manufactured_anchor_problem(grid, nu=0.05, T=0.5, M=10, amplitude=0.5, overshoot=0.5):
    """Problem whose constrained optimum is ``u = 0`` with the state on the
    boundary of an energy ball for all time.

    The state is Taylor-Green, held exactly steady by the forcing
    ``f = s y_TG`` with ``s`` chosen so one step of the integrating-factor
    scheme maps ``y_TG`` to itself (``B(y_TG) = 0``).  The target is
    ``(1 + overshoot) y_TG`` and ``rho = |y_TG|``, so the tracking residual
    ``-overshoot y_TG`` is cancelled by the outward normal
    ``omega = overshoot y_TG``: the adjoint vanishes and ``u = 0`` satisfies
    the optimality system for any control cost with ``0 in dh(0)``.

    Returns ``(data, time_grid, constraint)``.
    """
    tg = TimeGrid(T, M)
    y = taylor_green(grid, amplitude)
    a = nu * grid.d * tg.dt
    e = np.exp(-a)
    s = 2.0 * (1.0 - e) / ((1.0 + e) * tg.dt)
    data = ProblemData(grid, nu, y, forcing=y * s, target=y * (1.0 + overshoot))
    return data, tg, EnergyBall(y.norm())

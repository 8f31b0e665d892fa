"""The backstepping map, its discrete inverse, and the pointwise feedback law.

Forward map on the two sides of ``xi``::

    w1(x) = u1(x) - int_0^x k1(x, y) u1(y) dy + phi(x) X
    w2(x) = u2(x) + int_x^l k2(x, y) u2(y) dy

All integrals use the trapezoid rule on the grid, so each side is a triangular
matrix and the inverse is a triangular solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import GridMismatch, SingularTransform
from .gain_synthesis import PhiFunction, StabilizingGain, make_phi, pole_place
from .kernel_solver import KernelGrid, sample_k2, solve_k1
from .system_model import CascadeState, Grid, PlantSpec, TargetState, validate_plant


def _trapezoid_weights(m: int, h: float) -> np.ndarray:
    w = np.full(m, h)
    if m == 1:
        return np.zeros(1)
    w[0] = w[-1] = h / 2
    return w


def left_quadrature(kernel: np.ndarray, h: float) -> np.ndarray:
    """Matrix of ``u -> int_0^{x_i} k(x_i, y) u(y) dy`` for a lower-triangular kernel."""
    m = kernel.shape[0]
    Q = np.zeros_like(kernel)
    for i in range(1, m):
        Q[i, : i + 1] = _trapezoid_weights(i + 1, h) * kernel[i, : i + 1]
    return Q


def right_quadrature(kernel: np.ndarray, h: float) -> np.ndarray:
    """Matrix of ``u -> int_{x_i}^l k(x_i, y) u(y) dy`` for an upper-triangular kernel."""
    m = kernel.shape[0]
    Q = np.zeros_like(kernel)
    for i in range(m - 1):
        Q[i, i:] = _trapezoid_weights(m - i, h) * kernel[i, i:]
    return Q


def one_sided_slopes(f1: np.ndarray, f2: np.ndarray, h1: float, h2: float) -> tuple[float, float]:
    """Second-order one-sided derivatives at ``xi``: from the left of ``f1``, from the right of ``f2``."""
    left = (3 * f1[-1] - 4 * f1[-2] + f1[-3]) / (2 * h1)
    right = (-3 * f2[0] + 4 * f2[1] - f2[2]) / (2 * h2)
    return float(left), float(right)


@dataclass(frozen=True, eq=False)
class GainSet:
    """Everything the transform and the feedback law need, tied to one plant and grid.

    ``feedback_sign`` multiplies the ``int dk2/dx(xi, y) u2(y) dy`` term of the
    law; ``+1`` is the value that makes the transformed slopes match at ``xi``.
    """

    plant: PlantSpec
    grid: Grid
    gain: StabilizingGain
    pf: PhiFunction
    k1: KernelGrid
    k2: KernelGrid
    feedback_sign: float = 1.0

    def __post_init__(self):
        g = self.grid
        if len(self.k1.x) != g.n1 + 1 or len(self.k2.x) != g.n2 + 1:
            raise GridMismatch("kernel grids do not match the simulation grid")
        object.__setattr__(self, "_K1", left_quadrature(self.k1.values, g.h1))
        object.__setattr__(self, "_K2", right_quadrature(self.k2.values, g.h2))
        object.__setattr__(self, "_Phi", self.pf.values[: g.n1 + 1])
        fx = -self.pf.derivs[g.n1]
        wl = _trapezoid_weights(g.n1 + 1, g.h1) * self.k1.edge_dx
        wr = self.feedback_sign * _trapezoid_weights(g.n2 + 1, g.h2) * self.k2.edge_dx
        object.__setattr__(self, "_law", (fx, wl, wr, self.k1.at_xi - self.k2.at_xi))

    @property
    def K(self) -> np.ndarray:
        return self.gain.K

    @property
    def Acl(self) -> np.ndarray:
        return self.plant.A + self.plant.B @ self.gain.K

    @property
    def forward_matrices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(I - K1, I + K2, Phi)``: the discrete forward map, side by side."""
        g = self.grid
        return np.eye(g.n1 + 1) - self._K1, np.eye(g.n2 + 1) + self._K2, self._Phi

    def feedback_functional(self) -> tuple[np.ndarray, np.ndarray]:
        """Coefficients ``(fX, fu)`` with ``U = fX @ X + fu @ u`` on the packed field."""
        fx, wl, wr, jump = self._law
        g = self.grid
        fu = np.zeros(len(g.nodes))
        fu[: g.n1 + 1] += wl
        fu[g.n1:] += wr
        fu[g.n1] += jump
        return fx.copy(), fu

    def key(self) -> tuple:
        return (self.plant.fingerprint(), self.grid.key())


def synthesize_gains(plant: PlantSpec, grid: Grid, poles=None, tail_tol: float = 1e-13,
                     feedback_sign: float = 1.0, extrapolate: bool = True) -> GainSet:
    """Pole placement, gain function on the grid nodes, and both kernels.

    ``poles`` defaults to ``-1, -2, ..., -n``.
    """
    validate_plant(plant)
    if abs(grid.l - plant.l) > 1e-12 or grid.xi != plant.xi:
        raise GridMismatch("grid geometry differs from the plant")
    poles = -np.arange(1, plant.n + 1, dtype=float) if poles is None else poles
    gain = pole_place(plant.A, plant.B, poles)
    pf = make_phi(plant.A, gain.K, plant.l, nodes=grid.nodes)
    k1 = solve_k1(plant, pf, grid.h1, tail_tol, extrapolate)
    k2 = sample_k2(plant, grid.h2)
    return GainSet(plant, grid, gain, pf, k1, k2, feedback_sign)


def _same_grid(a: Grid, b: Grid):
    if a is not b and a.key() != b.key():
        raise GridMismatch("state and gains live on different grids")


def forward_transform(state: CascadeState, g: GainSet) -> TargetState:
    _same_grid(state.grid, g.grid)
    L1, R2, Phi = g.forward_matrices
    w1 = L1 @ state.u1 + Phi @ state.X
    w2 = R2 @ state.u2
    return TargetState(state.X.copy(), w1, w2, state.grid, state.t)


def inverse_transform(ts: TargetState, g: GainSet) -> CascadeState:
    """Exact inverse of :func:`forward_transform` by two triangular solves."""
    _same_grid(ts.grid, g.grid)
    L1, R2, Phi = g.forward_matrices
    for M in (L1, R2):
        if np.min(np.abs(np.diag(M))) < 1e-12:
            raise SingularTransform("triangular transform has a vanishing diagonal entry")
    u1 = solve_triangular(L1, ts.w1 - Phi @ ts.X, lower=True)
    u2 = solve_triangular(R2, ts.w2, lower=False)
    return CascadeState(ts.X.copy(), u1, u2, ts.grid, ts.t)


def feedback_control(state: CascadeState, g: GainSet) -> float:
    """Flux jump ``U = u_x(xi-) - u_x(xi+)`` that keeps the transformed slopes equal.

    ``U = (k1(xi,xi) - k2(xi,xi)) u(xi) + int_0^xi k1_x(xi,y) u1 dy
          + int_xi^l k2_x(xi,y) u2 dy - phi'(xi) X``
    """
    _same_grid(state.grid, g.grid)
    fx, wl, wr, jump = g._law
    return float(jump * state.u1[-1] + wl @ state.u1 + wr @ state.u2 + fx @ state.X)


def interface_gap(ts: TargetState) -> tuple[float, float]:
    """``(|w1(xi) - w2(xi)|, |w1_x(xi-) - w2_x(xi+)|)`` from the two restrictions."""
    left, right = one_sided_slopes(ts.w1, ts.w2, ts.grid.h1, ts.grid.h2)
    return abs(float(ts.w1[-1] - ts.w2[0])), abs(left - right)


COMPAT_CONSTANT = 100.0


def quadrature_tolerance(grid: Grid) -> float:
    """Default tolerance for :func:`check_compatibility`: ``100 * h^2`` with the coarser spacing.

    Smooth compatible data leave a slope residual of about ``60 h^2`` (one-sided
    slopes, trapezoid sums, kernel edge derivatives are all second order).
    """
    return COMPAT_CONSTANT * max(grid.h1, grid.h2) ** 2


def check_compatibility(state0: CascadeState, g: GainSet, tol: float = 1e-3) -> tuple[float, float, bool]:
    """Residuals of the two compatibility conditions on the initial data.

    ``c1`` compares the transformed values at ``xi`` and ``c2`` the transformed
    slopes, the latter built from one-sided derivatives of ``u`` and the kernel
    slopes at ``x = xi`` (no differencing of ``w`` itself).
    """
    _same_grid(state0.grid, g.grid)
    ts = forward_transform(state0, g)
    c1 = abs(float(ts.w1[-1] - ts.w2[0]))
    grid = state0.grid
    du1, du2 = one_sided_slopes(state0.u1, state0.u2, grid.h1, grid.h2)
    wl = _trapezoid_weights(grid.n1 + 1, grid.h1) * g.k1.edge_dx
    wr = _trapezoid_weights(grid.n2 + 1, grid.h2) * g.k2.edge_dx
    slope1 = du1 - g.k1.at_xi * state0.u1[-1] - wl @ state0.u1 + g.pf.derivs[grid.n1] @ state0.X
    slope2 = du2 - g.k2.at_xi * state0.u2[0] + wr @ state0.u2
    c2 = abs(float(slope1 - slope2))
    return c1, c2, bool(c1 <= tol and c2 <= tol)


def operator_norms(g: GainSet) -> tuple[float, float]:
    """Max-norm (infinity) bounds of the discrete forward and inverse field maps."""
    L1, R2, _ = g.forward_matrices
    fwd = max(np.linalg.norm(L1, np.inf), np.linalg.norm(R2, np.inf))
    inv = max(np.linalg.norm(np.linalg.inv(L1), np.inf), np.linalg.norm(np.linalg.inv(R2), np.inf))
    return float(fwd), float(inv)

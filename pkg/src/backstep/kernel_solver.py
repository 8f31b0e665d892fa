"""Backstepping kernels.

``k1`` (left of ``xi``) has no closed form because its edge data carries the
gain function; it is computed by successive approximation of the integral form
of its Goursat problem in characteristic coordinates ``zeta = x + y``,
``eta = x - y``.  ``k2`` (right of ``xi``) is

    k2(x, y) = lam * (l - y) * Psi(lam * ((l - x)**2 - (l - y)**2)),
    Psi(z) = I_1(sqrt(z)) / sqrt(z),

and the same iterator applied to its reflected problem serves as a cross-check.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import NegativeArgument, NoConvergenceBudget, OutOfDomain
from .gain_synthesis import PhiFunction, phi_unchecked
from .system_model import PlantSpec

MAX_ITERATIONS = 200


def psi(z):
    """``I_1(sqrt(z)) / sqrt(z)`` continued to ``z = 0`` (value 1/2).

    Summed from ``(1/2) * sum_m (z/4)**m / (m! (m+1)!)`` until the next term
    falls below 1e-16 of the partial sum.  Accepts scalars or arrays.
    """
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr < 0):
        raise NegativeArgument("psi is only defined for z >= 0")
    q = z_arr / 4.0
    term = np.full_like(q, 0.5)
    total = term.copy()
    m = 0
    while True:
        term = term * q / ((m + 1) * (m + 2))
        m += 1
        total = total + term
        if np.all(term <= 1e-16 * total):
            break
    return total if total.ndim else float(total)


def _k2_raw(lam, l, x, y):
    s = l - np.asarray(x, dtype=float)
    t = l - np.asarray(y, dtype=float)
    return lam * t * psi(lam * np.maximum(s * s - t * t, 0.0))


def k2_eval(plant: PlantSpec, x: float, y: float) -> float:
    if not (0.0 <= x <= y <= plant.l):
        raise OutOfDomain(f"k2 is defined for 0 <= x <= y <= l, got x={x}, y={y}")
    return float(_k2_raw(plant.lam, plant.l, x, y))


@dataclass(frozen=True)
class GoursatProblem:
    """``G_{zeta eta} = c G`` on ``0 <= eta <= extent``, ``eta <= zeta <= 2 extent - eta``.

    Data: ``G(eta, eta) = gamma(eta)`` and ``G(zeta, 0) = delta0(zeta)``.  The
    callables must accept numpy arrays.  ``lipschitz`` bounds the slope of
    ``delta0``; when omitted it is estimated from the sampled data.
    """

    c: float
    gamma: Callable
    delta0: Callable
    extent: float
    lipschitz: float | None = None


@dataclass(frozen=True, eq=False)
class GoursatSolution:
    G: np.ndarray  # indexed [zeta, eta] on the node lattice, NaN outside the domain
    h: float
    terms: int
    increments: np.ndarray  # measured max |Delta G^n| for n = 0 .. terms-1
    majorants: np.ndarray  # uniform analytic bound on |Delta G^n|
    pointwise_excess: np.ndarray = field(repr=False)  # max over nodes of |Delta G^n| - local bound
    refined_increments: np.ndarray | None = field(default=None, repr=False)

    @property
    def tail_bound(self) -> float:
        return float(self.majorants[-1])


def _power_over_factorials(base, n: int):
    """``base^n / (n!)^2`` in log space, so large ``n`` neither overflows nor divides inf by inf."""
    base = np.asarray(base, dtype=float)
    if n == 0:
        return np.ones_like(base)
    with np.errstate(divide="ignore"):
        return np.exp(n * np.log(base) - 2.0 * math.lgamma(n + 1))


def majorant(n: int, c: float, lip: float, mu: float, zeta, eta):
    """Factorial bound on ``|Delta G^n(zeta, eta)|``.

    ``lip * c^n (zeta - eta) zeta^n eta^n / (n! (n+1)!) + mu c^n zeta^n eta^n / (n!)^2``
    where ``lip`` bounds the slope of the edge data and ``mu`` the diagonal data.
    """
    zeta, eta = np.asarray(zeta, dtype=float), np.asarray(eta, dtype=float)
    core = _power_over_factorials(c * zeta * eta, n)
    return lip * (zeta - eta) * core / (n + 1) + mu * core


def uniform_majorant(n: int, c: float, lip: float, mu: float, zeta_max: float) -> float:
    """:func:`majorant` with ``zeta - eta``, ``zeta`` and ``eta`` all replaced by ``zeta_max``."""
    core = float(_power_over_factorials(c * zeta_max * zeta_max, n))
    return lip * zeta_max * core / (n + 1) + mu * core


def _domain_mask(N: int) -> np.ndarray:
    q = np.arange(2 * N + 1)[:, None]
    p = np.arange(N + 1)[None, :]
    return (p <= q) & (q <= 2 * N - p)


def _double_integral(G: np.ndarray, h: float) -> np.ndarray:
    """``int_eta^zeta int_0^eta G(t, s) ds dt`` on every lattice node (trapezoid)."""
    F = cumulative_trapezoid(G, dx=h, axis=1, initial=0.0)
    C = cumulative_trapezoid(F, dx=h, axis=0, initial=0.0)
    N = G.shape[1] - 1
    diag = C[np.arange(N + 1), np.arange(N + 1)]
    return C - diag[None, :]


def _iterate(p: GoursatProblem, N: int, tail_tol: float):
    h = p.extent / N
    mask = _domain_mask(N)
    zeta = np.arange(2 * N + 1) * h
    eta = np.arange(N + 1) * h
    g = np.asarray(p.gamma(eta), dtype=float).reshape(-1)
    d_zeta = np.asarray(p.delta0(zeta), dtype=float).reshape(-1)
    base = np.where(mask, g[None, :] + d_zeta[:, None] - d_zeta[None, : N + 1], 0.0)

    mu = float(np.max(np.abs(g)))
    lip = p.lipschitz if p.lipschitz is not None else float(np.max(np.abs(np.diff(d_zeta))) / h)
    c = abs(p.c)
    zmax = 2.0 * p.extent
    Z, H = np.meshgrid(zeta, eta, indexing="ij")

    G = np.zeros_like(base)
    increments, bounds, excess = [], [], []
    for n in range(MAX_ITERATIONS):
        G_new = base + p.c * _double_integral(G, h) if n else base.copy()
        dG = np.where(mask, G_new - G, 0.0)
        G = G_new
        bound = uniform_majorant(n, c, lip, mu, zmax)
        measured = float(np.max(np.abs(dG)))
        increments.append(measured)
        bounds.append(bound)
        local = majorant(n, c, lip, mu, Z, H)
        excess.append(float(np.max(np.where(mask, np.abs(dG) - local, -np.inf))))
        # measured increments bottom out at the rounding level of G itself
        if measured <= tail_tol * max(1.0, float(np.max(np.abs(G[mask])))) and bound <= tail_tol:
            return np.where(mask, G, np.nan), increments, bounds, excess
    raise NoConvergenceBudget(f"no convergence within {MAX_ITERATIONS} iterations")


def solve_goursat(p: GoursatProblem, h: float, tail_tol: float = 1e-13,
                  extrapolate: bool = True) -> GoursatSolution:
    """Successive approximations ``G^{n+1} = data + c * int int G^n`` on a lattice of spacing ``h``.

    Each run stops once the analytic factorial majorant of the increment falls
    below ``tail_tol`` and the measured increment falls below ``tail_tol``
    relative to ``max(1, max|G|)``.  With ``extrapolate`` the
    problem is also solved at ``h/2`` and the two trapezoid solutions are
    combined by one Richardson step, which cancels the O(h^2) quadrature error.
    """
    N = max(1, int(round(p.extent / h)))
    G, inc, bounds, excess = _iterate(p, N, tail_tol)
    refined = None
    if extrapolate:
        G_fine, inc_fine, _, excess_fine = _iterate(p, 2 * N, tail_tol)
        G = (4.0 * G_fine[::2, ::2] - G) / 3.0
        refined = np.array(inc_fine)
        excess = [max(a, b) for a, b in zip(excess, excess_fine)] + excess_fine[len(excess):]
    return GoursatSolution(G=G, h=p.extent / N, terms=len(inc), increments=np.array(inc),
                           majorants=np.array(bounds), pointwise_excess=np.array(excess),
                           refined_increments=refined)


@dataclass(frozen=True, eq=False)
class KernelGrid:
    """A kernel sampled on a triangle of the square ``x`` by ``x`` lattice.

    ``which == "k1"``: lower triangle ``y <= x`` on ``[0, xi]``.
    ``which == "k2"``: upper triangle ``y >= x`` on ``[xi, l]``.
    ``values[i, j]`` is the kernel at ``(x[i], x[j])``; entries off the triangle are NaN.
    ``edge_dx[j]`` holds ``dk/dx`` at ``x = xi`` and ``y = x[j]``.
    """

    which: str
    x: np.ndarray
    values: np.ndarray
    h: float
    edge_dx: np.ndarray
    terms: int = 0
    tail_bound: float = 0.0
    solution: GoursatSolution | None = field(default=None, repr=False)

    def in_triangle(self) -> np.ndarray:
        i, j = np.indices(self.values.shape)
        return j <= i if self.which == "k1" else j >= i

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.values).copy()

    @property
    def at_xi(self) -> float:
        """Kernel value at ``(xi, xi)``."""
        return float(self.values[-1, -1] if self.which == "k1" else self.values[0, 0])


def k1_problem(plant: PlantSpec, pf: PhiFunction, extent: float) -> GoursatProblem:
    B = plant.B.reshape(-1)
    lam = plant.lam

    def gamma(eta):
        return np.array([-(phi_unchecked(pf, e) @ B) for e in np.atleast_1d(eta)])

    return GoursatProblem(c=lam / 4.0, gamma=gamma, delta0=lambda z: -lam * np.asarray(z) / 4.0,
                          extent=extent, lipschitz=lam / 4.0)


def k2_reflected_problem(plant: PlantSpec, extent: float | None = None) -> GoursatProblem:
    """``k2`` in the coordinates ``s = l - x``, ``t = l - y``, ``zeta = s + t``, ``eta = s - t``."""
    lam = plant.lam
    return GoursatProblem(c=lam / 4.0, gamma=lambda e: np.zeros_like(np.asarray(e, dtype=float)),
                          delta0=lambda z: lam * np.asarray(z) / 4.0,
                          extent=plant.l if extent is None else extent, lipschitz=lam / 4.0)


def k2_from_reflected(sol: GoursatSolution, x, y, l: float):
    """Read ``k2(x, y)`` off a solution of :func:`k2_reflected_problem` (lattice points only)."""
    s = l - np.asarray(x, dtype=float)
    t = l - np.asarray(y, dtype=float)
    q = np.rint((s + t) / sol.h).astype(int)
    p = np.rint((s - t) / sol.h).astype(int)
    return sol.G[q, p]


def solve_k1(plant: PlantSpec, pf: PhiFunction, h: float, tail_tol: float = 1e-13,
             extrapolate: bool = True) -> KernelGrid:
    """Sample ``k1`` on ``{0 <= y <= x <= xi}`` with spacing close to ``h``.

    Two extra lattice rows beyond ``x = xi`` are solved so that ``dk1/dx`` at
    ``x = xi`` can use a one-sided second-order stencil for every ``y``.
    """
    n1 = max(2, int(round(plant.xi / h)))
    h = plant.xi / n1
    sol = solve_goursat(k1_problem(plant, pf, plant.xi + 2 * h), h, tail_tol, extrapolate)
    m = n1 + 2
    i, j = np.indices((m + 1, m + 1))
    lower = j <= i
    full = np.where(lower, sol.G[np.where(lower, i + j, 0), np.where(lower, i - j, 0)], np.nan)
    values = full[: n1 + 1, : n1 + 1].copy()
    cols = np.arange(n1 + 1)
    edge_dx = (-3 * full[n1, cols] + 4 * full[n1 + 1, cols] - full[n1 + 2, cols]) / (2 * h)
    x = np.linspace(0.0, plant.xi, n1 + 1)
    return KernelGrid("k1", x, values, h, edge_dx, sol.terms, sol.tail_bound, sol)


def sample_k2(plant: PlantSpec, h: float) -> KernelGrid:
    """Sample the closed-form ``k2`` on ``{xi <= x <= y <= l}``."""
    n2 = max(2, int(round((plant.l - plant.xi) / h)))
    h = (plant.l - plant.xi) / n2
    x = np.linspace(plant.xi, plant.l, n2 + 1)
    X, Y = np.meshgrid(x, x, indexing="ij")
    upper = Y >= X
    values = np.where(upper, _k2_raw(plant.lam, plant.l, X, np.where(upper, Y, X)), np.nan)
    values[:, -1] = np.where(upper[:, -1], 0.0, np.nan)
    k = lambda xx: _k2_raw(plant.lam, plant.l, xx, x)  # noqa: E731
    edge_dx = (3 * k(plant.xi) - 4 * k(plant.xi - h) + k(plant.xi - 2 * h)) / (2 * h)
    return KernelGrid("k2", x, values, h, edge_dx)


def kernel_residual(kg: KernelGrid, plant: PlantSpec, pf: PhiFunction | None = None) -> tuple[float, float]:
    """Max-norm residuals of ``k_xx - k_yy = lam k`` (interior) and of the boundary data.

    The ``k1`` edge condition ``k1(x, 0) = -phi(x) B`` needs the gain function ``pf``.
    """
    k, h, x = kg.values, kg.h, kg.x
    N = len(x) - 1
    lam = plant.lam
    i, j = np.indices(k.shape)
    if kg.which == "k1":
        interior = (j >= 1) & (j <= i - 1) & (i <= N - 1)
    else:
        interior = (i >= 1) & (j >= i + 1) & (j <= N - 1)
    r = 0.0
    if interior.any():
        ii, jj = i[interior], j[interior]
        stencil = (k[ii + 1, jj] + k[ii - 1, jj] - k[ii, jj + 1] - k[ii, jj - 1]) / h**2
        r = float(np.max(np.abs(stencil - lam * k[ii, jj])))
    diag = np.diag(k)
    if kg.which == "k1":
        if pf is None:
            raise ValueError("the k1 edge check needs the gain function")
        B = plant.B.reshape(-1)
        edge = np.array([-(phi_unchecked(pf, xv) @ B) for xv in x])
        bc = max(np.max(np.abs(diag + lam * x / 2)), np.max(np.abs(k[:, 0] - edge)))
    else:
        bc = max(np.max(np.abs(diag - lam * (plant.l - x) / 2)), np.max(np.abs(k[:, -1])))
    return r, float(bc)


def kernel_to_csv(kg: KernelGrid) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "value"])
    tri = kg.in_triangle()
    for a, b in zip(*np.nonzero(tri)):
        w.writerow([f"{kg.x[a]:.17g}", f"{kg.x[b]:.17g}", f"{kg.values[a, b]:.17g}"])
    return buf.getvalue()


def kernel_from_csv(text: str, which: str) -> KernelGrid:
    rows = list(csv.DictReader(io.StringIO(text)))
    xs = np.array(sorted({float(r["x"]) for r in rows} | {float(r["y"]) for r in rows}))
    index = {v: i for i, v in enumerate(xs)}
    values = np.full((len(xs), len(xs)), np.nan)
    for r in rows:
        values[index[float(r["x"])], index[float(r["y"])]] = float(r["value"])
    h = (xs[-1] - xs[0]) / (len(xs) - 1)
    return KernelGrid(which, xs, values, h, edge_dx=np.full(len(xs), np.nan))

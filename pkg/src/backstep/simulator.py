"""Method-of-lines simulation of the plant, the closed loop, and the target system.

Unknowns are ``[X, u_1 .. u_{N-1}]`` (boundary nodes are pinned to zero).  Nodes
away from ``xi`` carry the 3-point Laplacian; the ``xi`` node carries an
algebraic row

    (3u_xi - 4u_{xi-1} + u_{xi-2}) / 2h1 - (-3u_xi + 4u_{xi+1} - u_{xi+2}) / 2h2 = U

so continuity is built in and the flux jump is imposed at second order.  The
algebraic row is always taken fully implicit; differential rows use the
theta-scheme of the configured method.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import StepUnstable
from .gain_synthesis import mat_exp
from .system_model import (CascadeState, Grid, PlantSpec, TargetState, norm_H, norm_Y,
                           norm_Z)
from .transform import GainSet, feedback_control, forward_transform, inverse_transform

log = logging.getLogger(__name__)

SCHEMES = {"implicit_euler": 1.0, "crank_nicolson": 0.5}


@dataclass(frozen=True)
class SimConfig:
    dt: float
    T: float
    grid: Grid
    scheme: str = "crank_nicolson"
    record_every: int = 1
    coupling: str = "lagged"  # "lagged": U from the known time level; "implicit": U in the solve

    def __post_init__(self):
        if not (self.dt > 0 and self.T > 0 and self.record_every >= 1):
            raise ValueError("need dt > 0, T > 0, record_every >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.coupling not in ("lagged", "implicit"):
            raise ValueError(f"unknown coupling {self.coupling!r}")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class SimTrace:
    times: np.ndarray
    states: list
    controls: np.ndarray
    norm_H: np.ndarray
    norm_Y: np.ndarray
    V: np.ndarray | None = None
    kind: str = "closed"
    extra: dict = field(default_factory=dict)

    @property
    def X(self) -> np.ndarray:
        return np.array([s.X for s in self.states])

    def fields(self) -> np.ndarray:
        return np.array([s.u if isinstance(s, CascadeState) else s.w for s in self.states])


def _mol_operator(A: np.ndarray, B: np.ndarray, lam: float, grid: Grid) -> tuple[sp.csr_matrix, int]:
    """Sparse right-hand-side operator; returns the matrix and the row index of the ``xi`` node."""
    n = A.shape[0]
    N = len(grid.nodes) - 1
    k_xi = grid.index_xi
    m = n + N - 1
    J = sp.lil_matrix((m, m))

    def col(k):  # unknown index of field node k, None on the Dirichlet boundary
        return None if k in (0, N) else n + k - 1

    def put(r, k, v):
        c = col(k)
        if c is not None:
            J[r, c] += v

    J[:n, :n] = A
    for i in range(n):
        # u_x(0) = (-3 u_0 + 4 u_1 - u_2) / 2h1 with u_0 = 0
        put(i, 1, 4 * B[i, 0] / (2 * grid.h1))
        put(i, 2, -B[i, 0] / (2 * grid.h1))
    for k in range(1, N):
        r = col(k)
        if k == k_xi:
            h1, h2 = grid.h1, grid.h2
            put(r, k, 3 / (2 * h1) + 3 / (2 * h2))
            put(r, k - 1, -4 / (2 * h1))
            put(r, k - 2, 1 / (2 * h1))
            put(r, k + 1, -4 / (2 * h2))
            put(r, k + 2, 1 / (2 * h2))
            continue
        h = grid.h1 if k < k_xi else grid.h2
        put(r, k - 1, 1 / h**2)
        put(r, k, -2 / h**2 + lam)
        put(r, k + 1, 1 / h**2)
    return J.tocsr(), col(k_xi)


def _pack(X, u) -> np.ndarray:
    return np.concatenate([X, u[1:-1]])


def _unpack(y, n) -> tuple[np.ndarray, np.ndarray]:
    return y[:n], np.concatenate([[0.0], y[n:], [0.0]])


def _integrate(J, r_xi, n, y0, cfg: SimConfig, control: Callable | None, implicit_row=None,
               on_record: Callable = None, guard: float | None = None):
    """Advance ``M y' = J y + e_xi * (-U)`` and call ``on_record(t, y, U)`` at record times."""
    theta = SCHEMES[cfg.scheme]
    dt = cfg.dt
    m = J.shape[0]
    diff_rows = np.ones(m)
    diff_rows[r_xi] = 0.0
    D = sp.diags(diff_rows)
    lhs = (D @ (sp.identity(m) - theta * dt * J)).tolil()
    lhs[r_xi, :] = J[r_xi, :]
    if implicit_row is not None:
        lhs[r_xi, :] = lhs[r_xi, :].toarray() - implicit_row[None, :]
    lu = splu(lhs.tocsc())
    rhs_op = (D @ (sp.identity(m) + (1 - theta) * dt * J)).tocsr()

    y = y0.copy()
    U = control(y) if control else 0.0
    on_record(0.0, y, U)
    start = np.linalg.norm(y0)
    for step in range(1, cfg.steps + 1):
        rhs = rhs_op @ y
        rhs[r_xi] = U if implicit_row is None else 0.0
        y = lu.solve(rhs)
        U = control(y) if control else 0.0
        if guard is not None and start > 0 and np.linalg.norm(y) > guard * start:
            raise StepUnstable(f"state norm grew beyond {guard:g} times its initial value at t={step * dt:g}")
        if step % cfg.record_every == 0 or step == cfg.steps:
            on_record(step * dt, y, U)


def _cascade_recorder(n, grid, store, gains=None, cert=None):
    def record(t, y, U):
        X, u = _unpack(y, n)
        s = CascadeState.from_field(X, u, grid, t)
        store["times"].append(t)
        store["states"].append(s)
        store["U"].append(U)
        store["H"].append(norm_H(s))
        store["Y"].append(norm_Y(s))
        if cert is not None:
            from .analysis import lyapunov_value
            store["V"].append(lyapunov_value(forward_transform(s, gains), cert))
    return record


def _new_store():
    return {"times": [], "states": [], "U": [], "H": [], "Y": [], "V": []}


def _trace(store, kind) -> SimTrace:
    V = np.array(store["V"]) if store["V"] else None
    return SimTrace(np.array(store["times"]), store["states"], np.array(store["U"]),
                    np.array(store["H"]), np.array(store["Y"]), V, kind)


def simulate_closed_loop(plant: PlantSpec, gains: GainSet, state0: CascadeState, cfg: SimConfig,
                         cert=None, compat_tol: float = 1e-2) -> SimTrace:
    """Closed loop with the pointwise feedback law acting as the flux jump at ``xi``."""
    from .transform import check_compatibility

    grid = cfg.grid
    c1, c2, ok = check_compatibility(state0, gains, compat_tol)
    if not ok:
        log.warning("initial data violate the compatibility conditions (c1=%.3g, c2=%.3g)", c1, c2)
    n = plant.n
    J, r_xi = _mol_operator(plant.A, plant.B, plant.lam, grid)
    fX, fu = gains.feedback_functional()
    law = np.concatenate([fX, fu[1:-1]])
    control = lambda y: float(law @ y)  # noqa: E731
    store = _new_store()
    y0 = _pack(state0.X, state0.u)
    _integrate(J, r_xi, n, y0, cfg, control,
               implicit_row=law if cfg.coupling == "implicit" else None,
               on_record=_cascade_recorder(n, grid, store, gains, cert), guard=1e6)
    return _trace(store, "closed")


def simulate_open_loop(plant: PlantSpec, state0: CascadeState, cfg: SimConfig) -> SimTrace:
    """Plant with ``U = 0``; growth is expected whenever ``lam > pi^2 / l^2``."""
    n = plant.n
    J, r_xi = _mol_operator(plant.A, plant.B, plant.lam, cfg.grid)
    store = _new_store()
    _integrate(J, r_xi, n, _pack(state0.X, state0.u), cfg, None,
               on_record=_cascade_recorder(n, cfg.grid, store))
    return _trace(store, "open")


def simulate_target(plant: PlantSpec, ts0: TargetState, cfg: SimConfig, K=None) -> SimTrace:
    """Heat equation on ``(0, l)`` cascaded into ``X' = (A + B K) X + B w_x(0)``.

    ``K`` defaults to zero, in which case the ODE part is just the open plant
    driven by the heat flux; the field itself never depends on ``X``.
    """
    n = plant.n
    K = np.zeros((1, n)) if K is None else np.asarray(K, dtype=float).reshape(1, -1)
    J, r_xi = _mol_operator(plant.A + plant.B @ K, plant.B, 0.0, cfg.grid)
    store = {"times": [], "states": [], "U": [], "H": [], "Y": [], "V": []}
    grid = cfg.grid

    def record(t, y, U):
        X, w = _unpack(y, n)
        s = TargetState.from_field(X, w, grid, t)
        store["times"].append(t)
        store["states"].append(s)
        store["U"].append(0.0)
        store["H"].append(float(np.sqrt(X @ X + np.trapezoid(w * w, grid.nodes))))
        store["Y"].append(norm_Z(s))

    _integrate(J, r_xi, n, _pack(ts0.X, ts0.w), cfg, None, on_record=record)
    return _trace(store, "target")


def exact_target_solution(w0: np.ndarray, nodes: np.ndarray, x, t: float, modes: int = 100):
    """Truncated sine series of the heat equation with zero Dirichlet data on ``(0, l)``.

    Coefficients ``(2/l) int_0^l w0(s) sin(k pi s / l) ds`` come from trapezoid
    quadrature of the sampled ``w0`` on ``nodes``.
    """
    l = nodes[-1]
    k = np.arange(1, modes + 1)
    basis = np.sin(np.outer(k, nodes) * np.pi / l)
    coeff = 2.0 / l * np.trapezoid(basis * w0[None, :], nodes, axis=1)
    x = np.asarray(x, dtype=float)
    decay = np.exp(-(k * np.pi / l) ** 2 * t) * coeff
    return np.sin(np.multiply.outer(x, k) * np.pi / l) @ decay


def duhamel_X(Acl: np.ndarray, B: np.ndarray, X0: np.ndarray, w1x0: Callable, t: float,
              samples: int = 2001) -> np.ndarray:
    """``e^{t Acl} X0 + int_0^t e^{(t - tau) Acl} B w1x0(tau) dtau`` (composite trapezoid)."""
    Acl = np.atleast_2d(np.asarray(Acl, dtype=float))
    B = np.asarray(B, dtype=float).reshape(-1)
    X0 = np.asarray(X0, dtype=float).reshape(-1)
    hom = mat_exp(Acl, t) @ X0
    if t == 0:
        return hom
    tau = np.linspace(0.0, t, samples)
    vals = np.array([mat_exp(Acl, t - s) @ B * w1x0(s) for s in tau])
    return hom + np.trapezoid(vals, tau, axis=0)


def compatible_initial_state(gains: GainSet, X0=None, profile: Callable | None = None,
                             correctors: int = 4) -> CascadeState:
    """Initial plant state whose transform is a smooth target profile.

    The target profile is ``profile`` (default ``sin(pi x / l)``) plus the
    least-norm combination of ``sin(k pi x / l)``, ``k = 2 .. correctors + 1``,
    that makes the inverse image continuous at ``xi``.  Being smooth across
    ``xi``, the profile satisfies both compatibility conditions.
    """
    grid = gains.grid
    l = grid.l
    x = grid.nodes
    X0 = np.zeros(gains.plant.n) if X0 is None else np.asarray(X0, dtype=float)
    base = profile(x) if profile else np.sin(np.pi * x / l)
    basis = [np.sin(k * np.pi * x / l) for k in range(2, correctors + 2)]

    def gap(w, X):
        s = inverse_transform(TargetState.from_field(X, w, grid), gains)
        return s.u1[-1] - s.u2[0]

    g0 = gap(base, X0)
    v = np.array([gap(b, np.zeros_like(X0)) for b in basis])
    coef = -g0 * v / (v @ v) if v @ v > 0 else np.zeros(len(basis))
    w0 = base + sum(c * b for c, b in zip(coef, basis))
    s = inverse_transform(TargetState.from_field(X0, w0, grid), gains)
    u2 = s.u2.copy()
    u2[0] = s.u1[-1]
    return CascadeState(s.X, s.u1, u2, grid, 0.0)


def control_trace(trace: SimTrace, gains: GainSet) -> np.ndarray:
    return np.array([feedback_control(s, gains) for s in trace.states])

"""Plant description, spatial grids, state containers and discrete norms.

The plant is the cascade

    X' = A X + B u_x(0, t)
    u_t = u_xx + lam * u        on (0, xi) and (xi, l)
    u(0) = u(l) = 0,  u continuous at xi,  u_x(xi-) - u_x(xi+) = U(t)

All fields live on a :class:`Grid` that is uniform on each side of ``xi`` and
carries ``xi`` as an exact node.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import BadDimension, BadGeometry, ConfigError, NotControllable


@dataclass(frozen=True, eq=False)
class PlantSpec:
    A: np.ndarray
    B: np.ndarray
    lam: float
    l: float
    xi: float

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "l", float(self.l))
        object.__setattr__(self, "xi", float(self.xi))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def fingerprint(self) -> tuple:
        return (self.A.tobytes(), self.B.tobytes(), self.lam, self.l, self.xi)


def controllability_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    cols = [B]
    for _ in range(n - 1):
        cols.append(A @ cols[-1])
    return np.hstack(cols)


def validate_plant(spec: PlantSpec) -> PlantSpec:
    """Return ``spec`` unchanged if it describes an admissible plant.

    Raises
    ------
    BadDimension
        ``A`` is not square or ``B`` is not an n x 1 column.
    BadGeometry
        ``l <= 0`` or ``xi`` is not strictly inside ``(0, l)``, or ``lam < 0``.
    NotControllable
        The controllability matrix has rank below ``n``.
    """
    A, B = spec.A, spec.B
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise BadDimension(f"A must be square, got shape {A.shape}")
    if B.shape != (A.shape[0], 1):
        raise BadDimension(f"B must have shape ({A.shape[0]}, 1), got {B.shape}")
    if not np.all(np.isfinite(A)) or not np.all(np.isfinite(B)):
        raise BadDimension("A and B must be finite")
    if not spec.l > 0:
        raise BadGeometry(f"domain length l must be positive, got {spec.l}")
    if not 0 < spec.xi < spec.l:
        raise BadGeometry(f"actuator location xi={spec.xi} must lie in (0, {spec.l})")
    if not spec.lam >= 0:
        raise BadGeometry(f"reaction coefficient must be >= 0, got {spec.lam}")
    rank = np.linalg.matrix_rank(controllability_matrix(A, B))
    if rank < spec.n:
        raise NotControllable(f"NotControllable: controllability rank {rank} < n={spec.n}")
    return spec


@dataclass(frozen=True, eq=False)
class Grid:
    """Piecewise-uniform grid on ``[0, l]`` with ``xi`` as node ``index_xi``."""

    nodes: np.ndarray
    index_xi: int
    h1: float
    h2: float

    @property
    def l(self) -> float:
        return float(self.nodes[-1])

    @property
    def xi(self) -> float:
        return float(self.nodes[self.index_xi])

    @property
    def n1(self) -> int:
        """Number of cells on ``[0, xi]``."""
        return self.index_xi

    @property
    def n2(self) -> int:
        """Number of cells on ``[xi, l]``."""
        return len(self.nodes) - 1 - self.index_xi

    @property
    def left(self) -> np.ndarray:
        return self.nodes[: self.index_xi + 1]

    @property
    def right(self) -> np.ndarray:
        return self.nodes[self.index_xi:]

    def key(self) -> tuple:
        return (self.l, self.xi, self.n1, self.n2)


def build_grid(l: float, xi: float, target_h: float) -> Grid:
    if not (0 < xi < l) or not target_h > 0:
        raise BadGeometry(f"need 0 < xi < l and target_h > 0 (l={l}, xi={xi}, h={target_h})")
    n1 = max(2, int(round(xi / target_h)))
    n2 = max(2, int(round((l - xi) / target_h)))
    # linspace pins both endpoints exactly, so xi is a bitwise node
    left = np.linspace(0.0, xi, n1 + 1)
    right = np.linspace(xi, l, n2 + 1)
    nodes = np.concatenate([left, right[1:]])
    return Grid(nodes=nodes, index_xi=n1, h1=xi / n1, h2=(l - xi) / n2)


@dataclass(frozen=True, eq=False)
class CascadeState:
    """ODE state plus the PDE field split at ``xi``.

    ``u1`` lives on ``grid.left`` and ``u2`` on ``grid.right``; both contain the
    ``xi`` node.  A physical plant state is continuous there, but states built by
    inverting the transform from arbitrary target data need not be, so the
    continuity gap is exposed rather than enforced.
    """

    X: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    grid: Grid
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "X", np.asarray(self.X, dtype=float).reshape(-1))
        object.__setattr__(self, "u1", np.asarray(self.u1, dtype=float))
        object.__setattr__(self, "u2", np.asarray(self.u2, dtype=float))
        if self.u1.shape != (self.grid.n1 + 1,) or self.u2.shape != (self.grid.n2 + 1,):
            raise BadDimension("field samples do not match the grid")

    @property
    def u(self) -> np.ndarray:
        """Field on all nodes, taking the left value at ``xi``."""
        return np.concatenate([self.u1, self.u2[1:]])

    @property
    def continuity_gap(self) -> float:
        return abs(self.u1[-1] - self.u2[0])

    @property
    def boundary_gap(self) -> float:
        return max(abs(self.u1[0]), abs(self.u2[-1]))

    @classmethod
    def from_field(cls, X, u, grid: Grid, t: float = 0.0) -> "CascadeState":
        u = np.asarray(u, dtype=float)
        k = grid.index_xi
        return cls(X=X, u1=u[: k + 1].copy(), u2=u[k:].copy(), grid=grid, t=t)

    def scaled(self, c: float) -> "CascadeState":
        return CascadeState(c * self.X, c * self.u1, c * self.u2, self.grid, self.t)


@dataclass(frozen=True, eq=False)
class TargetState:
    """Transformed state: ODE vector and ``w`` restricted to each side of ``xi``.

    The packed field ``w`` takes ``w1(xi)`` at the interface node; the separate
    restrictions keep the right-hand limit so the interface gap stays visible.
    """

    X: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    grid: Grid
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "X", np.asarray(self.X, dtype=float).reshape(-1))
        object.__setattr__(self, "w1", np.asarray(self.w1, dtype=float))
        object.__setattr__(self, "w2", np.asarray(self.w2, dtype=float))
        if self.w1.shape != (self.grid.n1 + 1,) or self.w2.shape != (self.grid.n2 + 1,):
            raise BadDimension("field samples do not match the grid")

    @property
    def w(self) -> np.ndarray:
        return np.concatenate([self.w1, self.w2[1:]])

    @classmethod
    def from_field(cls, X, w, grid: Grid, t: float = 0.0) -> "TargetState":
        w = np.asarray(w, dtype=float)
        k = grid.index_xi
        return cls(X=X, w1=w[: k + 1].copy(), w2=w[k:].copy(), grid=grid, t=t)


def derivative(f: np.ndarray, h: float) -> np.ndarray:
    """Second-order derivative samples on a uniform segment (one-sided at the ends)."""
    return np.gradient(f, h, edge_order=2)


def _l2sq(f: np.ndarray, x: np.ndarray) -> float:
    return float(np.trapezoid(f * f, x))


def _h1_parts(f1, f2, grid: Grid) -> tuple[float, float]:
    l2 = _l2sq(f1, grid.left) + _l2sq(f2, grid.right)
    d1 = derivative(f1, grid.h1)
    d2 = derivative(f2, grid.h2)
    semi = _l2sq(d1, grid.left) + _l2sq(d2, grid.right)
    return l2, semi


def norm_H(state: CascadeState) -> float:
    X = state.X
    l2 = _l2sq(state.u1, state.grid.left) + _l2sq(state.u2, state.grid.right)
    return float(np.sqrt(X @ X + l2))


def norm_Y(state: CascadeState) -> float:
    l2, semi = _h1_parts(state.u1, state.u2, state.grid)
    return float(np.sqrt(state.X @ state.X + l2 + semi))


def norm_Z(ts: TargetState) -> float:
    """Norm of ``(X, w)`` in R^n x H^1, derivatives taken on each side of ``xi``."""
    l2, semi = _h1_parts(ts.w1, ts.w2, ts.grid)
    return float(np.sqrt(ts.X @ ts.X + l2 + semi))


def target_energy_parts(ts: TargetState) -> tuple[float, float]:
    """Return ``(||w||^2, ||w_x||^2)`` by trapezoid quadrature."""
    return _h1_parts(ts.w1, ts.w2, ts.grid)


def plant_from_dict(d: dict) -> PlantSpec:
    try:
        spec = PlantSpec(A=np.array(d["A"], dtype=float), B=np.array(d["B"], dtype=float),
                         lam=d["lambda"], l=d["l"], xi=d["xi"])
    except KeyError as exc:
        raise ConfigError(f"plant section is missing key {exc}") from None
    except ValueError as exc:
        raise BadDimension(str(exc)) from None
    return spec


def load_plant(path: str | Path) -> PlantSpec:
    """Load a plant from a YAML file with a ``plant`` section (or a bare mapping)."""
    data = yaml.safe_load(Path(path).read_text())
    return validate_plant(plant_from_dict(data.get("plant", data)))

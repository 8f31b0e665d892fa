"""ODE-side gains: pole placement, the gain function phi, and the Lyapunov certificate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (AsymmetricQ, MarginTooSmall, NotControllable, NotHurwitz,
                     OutOfDomain, PolesNotConjugateClosed)
from .system_model import PlantSpec, controllability_matrix


@dataclass(frozen=True, eq=False)
class StabilizingGain:
    K: np.ndarray  # shape (1, n)
    poles: tuple


def _check_conjugate_closed(poles, tol=1e-9):
    remaining = list(poles)
    while remaining:
        p = remaining.pop()
        if abs(p.imag) <= tol:
            continue
        match = [i for i, q in enumerate(remaining) if abs(q - np.conj(p)) <= tol * max(1.0, abs(p))]
        if not match:
            raise PolesNotConjugateClosed(f"pole {p} has no conjugate partner")
        remaining.pop(match[0])


def pole_place(A: np.ndarray, B: np.ndarray, poles) -> StabilizingGain:
    """Single-input pole placement by Ackermann's formula.

    Returns ``K`` with ``eig(A + B K) == poles`` (note the ``+`` sign convention:
    the feedback is ``v = K X``).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(-1, 1)
    poles = tuple(complex(p) for p in np.atleast_1d(poles))
    n = A.shape[0]
    if len(poles) != n:
        raise ValueError(f"need {n} poles, got {len(poles)}")
    _check_conjugate_closed(poles)
    if any(p.real >= 0 for p in poles):
        raise NotHurwitz("requested poles must have negative real parts")
    C = controllability_matrix(A, B)
    if np.linalg.matrix_rank(C) < n:
        raise NotControllable("NotControllable: (A, B) is not controllable")
    coeffs = np.real(np.poly(poles))
    pA = np.zeros_like(A)
    for c in coeffs:
        pA = pA @ A + c * np.eye(n)
    en = np.zeros((1, n))
    en[0, -1] = 1.0
    K_ack = en @ np.linalg.solve(C, pA)
    return StabilizingGain(K=-K_ack, poles=poles)


def mat_exp(M: np.ndarray, x: float = 1.0, rel_tol: float = 1e-15) -> np.ndarray:
    """``exp(x M)`` by scaling and squaring a truncated Taylor series.

    The argument is scaled by ``2**-s`` until its 1-norm is at most 1/2, and the
    series is cut once the geometric tail bound, inflated by the ``2**s``
    error growth of the squaring phase, drops below ``rel_tol``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    m = M.shape[0]
    Z = x * M
    nrm = np.linalg.norm(Z, 1)
    if nrm == 0.0:
        return np.eye(m)
    s = max(0, math.ceil(math.log2(nrm / 0.5))) if nrm > 0.5 else 0
    Z = Z / 2.0**s
    beta = nrm / 2.0**s
    target = rel_tol * math.exp(-beta) / 2.0 ** (s + 1)
    E = np.eye(m)
    term = np.eye(m)
    k = 0
    bound = beta
    while True:
        k += 1
        term = term @ Z / k
        E = E + term
        # ||remainder|| <= beta^(k+1)/(k+1)! / (1 - beta/(k+2))
        bound = bound * beta / (k + 1)
        if bound / (1.0 - beta / (k + 2)) <= target or k >= 60:
            break
    for _ in range(s):
        E = E @ E
    return E


@dataclass(frozen=True, eq=False)
class PhiFunction:
    """``phi(x) = (0, -K) exp(x M) E`` with ``M = [[0, A], [I, 0]]``, ``E = [[I], [0]]``.

    ``nodes``/``values``/``derivs`` cache ``phi`` and ``phi'`` as rows (one per node).
    """

    K: np.ndarray
    A: np.ndarray
    M: np.ndarray
    E: np.ndarray
    l: float
    nodes: np.ndarray
    values: np.ndarray
    derivs: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]


def _phi_pair(K, M, E, x):
    n = K.shape[1]
    row = np.concatenate([np.zeros(n), -K.reshape(-1)])
    eM = mat_exp(M, x)
    return row @ eM @ E, row @ M @ eM @ E


def make_phi(A: np.ndarray, K: np.ndarray, l: float, nodes=None) -> PhiFunction:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    K = np.asarray(K, dtype=float).reshape(1, -1)
    n = A.shape[0]
    M = np.block([[np.zeros((n, n)), A], [np.eye(n), np.zeros((n, n))]])
    E = np.vstack([np.eye(n), np.zeros((n, n))])
    nodes = np.array([0.0, l]) if nodes is None else np.asarray(nodes, dtype=float)
    pairs = [_phi_pair(K, M, E, x) for x in nodes]
    values = np.array([p[0] for p in pairs]).reshape(len(nodes), n)
    derivs = np.array([p[1] for p in pairs]).reshape(len(nodes), n)
    return PhiFunction(K=K, A=A, M=M, E=E, l=float(l), nodes=nodes, values=values, derivs=derivs)


def _lookup(pf: PhiFunction, x: float, table: np.ndarray, which: int) -> np.ndarray:
    if x < 0.0 or x > pf.l * (1 + 1e-14):
        raise OutOfDomain(f"x={x} outside [0, {pf.l}]")
    hit = np.nonzero(pf.nodes == x)[0]
    if hit.size:
        return table[hit[0]].copy()
    return _phi_pair(pf.K, pf.M, pf.E, x)[which]


def phi_eval(pf: PhiFunction, x: float) -> np.ndarray:
    return _lookup(pf, float(x), pf.values, 0)


def phi_prime(pf: PhiFunction, x: float) -> np.ndarray:
    return _lookup(pf, float(x), pf.derivs, 1)


def phi_unchecked(pf: PhiFunction, x: float) -> np.ndarray:
    """``phi(x)`` for any real ``x``; used to extend kernel grids slightly past ``l``."""
    return _phi_pair(pf.K, pf.M, pf.E, float(x))[0]


def solve_lyapunov(Acl: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Solve ``P Acl + Acl^T P = -Q`` via the Kronecker-vectorised linear system."""
    Acl = np.atleast_2d(np.asarray(Acl, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if not np.allclose(Q, Q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Q).max())):
        raise AsymmetricQ("Q must be symmetric")
    if np.min(np.linalg.eigvalsh(Q)) <= 0:
        raise AsymmetricQ("Q must be positive definite")
    n = Acl.shape[0]
    I = np.eye(n)
    # column-major vec: vec(P Acl) = (Acl^T kron I) vec P, vec(Acl^T P) = (I kron Acl^T) vec P
    L = np.kron(Acl.T, I) + np.kron(I, Acl.T)
    try:
        p = np.linalg.solve(L, -Q.reshape(-1, order="F"))
    except np.linalg.LinAlgError:
        raise NotHurwitz("Lyapunov operator is singular") from None
    P = p.reshape(n, n, order="F")
    P = 0.5 * (P + P.T)
    if np.min(np.linalg.eigvalsh(P)) <= 0:
        raise NotHurwitz("Lyapunov solution is not positive definite")
    return P


@dataclass(frozen=True, eq=False)
class LyapunovCertificate:
    P: np.ndarray
    Q: np.ndarray
    a: float
    b: float
    alpha1: float
    alpha2: float
    delta: float
    margin: float

    def as_dict(self) -> dict:
        return {
            "P": self.P.tolist(), "Q": self.Q.tolist(), "a": self.a, "b": self.b,
            "alpha1": self.alpha1, "alpha2": self.alpha2, "delta": self.delta,
            "margin": self.margin,
        }


def certificate_constants(pb_norm: float, lam_min_Q: float, lam_min_P: float,
                          lam_max_P: float, l: float, margin: float) -> dict:
    """Scalar part of the certificate: ``a``, ``b``, ``alpha1``, ``alpha2``, ``delta``."""
    if not margin > 1:
        raise MarginTooSmall(f"margin must exceed 1 for strict inequalities, got {margin}")
    b = margin * 2.0 * pb_norm**2 / lam_min_Q
    a = margin * (2.0 * b * (1.0 + l) / l + 2.0)
    return {
        "a": a,
        "b": b,
        "alpha1": min(lam_min_P, a / 2, b / 2),
        "alpha2": max(lam_max_P, a / 2, b / 2),
        "delta": min(lam_min_Q / (2 * lam_max_P), 1.0 / (4 * l * l), 2.0 / b),
    }


def build_certificate(plant: PlantSpec, K: np.ndarray, Q=None, margin: float = 2.0) -> LyapunovCertificate:
    K = np.asarray(K, dtype=float).reshape(1, -1)
    Q = np.eye(plant.n) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    if not margin > 1:
        raise MarginTooSmall(f"margin must exceed 1 for strict inequalities, got {margin}")
    P = solve_lyapunov(plant.A + plant.B @ K, Q)
    eP = np.linalg.eigvalsh(P)
    c = certificate_constants(float(np.linalg.norm(P @ plant.B)), float(np.linalg.eigvalsh(Q)[0]),
                              float(eP[0]), float(eP[-1]), plant.l, margin)
    return LyapunovCertificate(P=P, Q=Q, margin=margin, **c)

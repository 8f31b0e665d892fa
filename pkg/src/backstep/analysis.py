"""Lyapunov evaluation, decay-rate fits, and the open-loop spectrum."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import NonPositiveValues
from .gain_synthesis import LyapunovCertificate
from .system_model import PlantSpec, TargetState, norm_Z, target_energy_parts
from .transform import GainSet, forward_transform

ENVELOPE_SLACK = 0.05


@dataclass(frozen=True)
class DecayReport:
    fitted_rate: float
    fit_window: tuple[float, float]
    residual_of_fit: float
    theoretical_delta: float
    C_estimate: float
    samples: int

    def as_dict(self) -> dict:
        return asdict(self)


def lyapunov_value(ts: TargetState, cert: LyapunovCertificate) -> float:
    """``X^T P X + (a/2) ||w||^2 + (b/2) ||w_x||^2``."""
    l2, semi = target_energy_parts(ts)
    return float(ts.X @ cert.P @ ts.X + 0.5 * cert.a * l2 + 0.5 * cert.b * semi)


def sandwich(ts: TargetState, cert: LyapunovCertificate) -> tuple[float, float, float]:
    """``(alpha1 ||.||_Z^2, V, alpha2 ||.||_Z^2)`` for one state."""
    z2 = norm_Z(ts) ** 2
    return cert.alpha1 * z2, lyapunov_value(ts, cert), cert.alpha2 * z2


@dataclass(frozen=True)
class LyapunovTrace:
    times: np.ndarray
    V: np.ndarray
    max_increase: float  # largest V[k+1] - V[k], relative to V[0]
    envelope_ratio: float  # max of V(t) / (V(0) exp(-delta t))
    monotone: bool
    envelope_ok: bool


def lyapunov_trace(trace, gains: GainSet, cert: LyapunovCertificate,
                   step_slack: float = 1e-8, slack: float = ENVELOPE_SLACK) -> LyapunovTrace:
    """``V`` along forward-transformed snapshots, with the monotonicity and envelope checks."""
    t = np.asarray(trace.times)
    V = np.array([lyapunov_value(forward_transform(s, gains), cert) for s in trace.states])
    if V[0] == 0:
        zero = bool(np.all(V == 0))
        return LyapunovTrace(t, V, 0.0, 0.0 if zero else np.inf, zero, zero)
    inc = float(np.max(np.diff(V), initial=-np.inf) / V[0])
    env = float(np.max(V / (V[0] * np.exp(-cert.delta * t))))
    return LyapunovTrace(t, V, inc, env, inc <= step_slack, env <= 1.0 + slack)


def fit_decay_rate(times, values, window=None, theoretical_delta: float = float("nan")) -> DecayReport:
    """Least-squares fit of ``log v = log C - rate * t`` over ``window``.

    ``window`` defaults to the last 75% of the time span.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if window is None:
        window = (t[0] + 0.25 * (t[-1] - t[0]), t[-1])
    sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    if sel.sum() < 10:
        raise ValueError(f"fit window {window} holds {sel.sum()} samples, need at least 10")
    if np.any(v[sel] <= 0):
        raise NonPositiveValues("decay fit needs strictly positive values in the window")
    (slope, intercept), res, *_ = np.polyfit(t[sel], np.log(v[sel]), 1, full=True)
    resid = float(np.sqrt(res[0] / sel.sum())) if len(res) else 0.0
    return DecayReport(float(-slope), (float(window[0]), float(window[1])), resid,
                       float(theoretical_delta), float(np.exp(intercept)), int(sel.sum()))


def open_loop_spectrum(plant: PlantSpec, count: int) -> tuple[np.ndarray, int]:
    """Eigenvalues ``lam - k^2 pi^2 / l^2`` of the uncontrolled reaction-diffusion part."""
    if count < 1:
        raise ValueError("count must be >= 1")
    k = np.arange(1, count + 1)
    ev = plant.lam - (k * np.pi / plant.l) ** 2
    return ev, int(np.sum(ev > 0))

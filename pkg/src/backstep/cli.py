"""``backstep`` command line: synthesize, simulate, verify, sweep.

Exit codes: 0 success, 2 configuration/validation/artifact errors,
3 unstable time stepping, 4 failed verification checks.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .analysis import fit_decay_rate, lyapunov_trace, open_loop_spectrum
from .config import RunConfig
from .errors import BackstepError, StepUnstable
from .gain_synthesis import build_certificate, pole_place
from .kernel_solver import kernel_from_csv, kernel_residual, kernel_to_csv
from .simulator import (SimConfig, compatible_initial_state, simulate_closed_loop,
                        simulate_open_loop, simulate_target)
from .system_model import CascadeState, TargetState, build_grid, validate_plant
from .transform import (check_compatibility, forward_transform, inverse_transform, quadrature_tolerance,
                        synthesize_gains)

log = logging.getLogger("backstep")

EXIT_OK, EXIT_CONFIG, EXIT_UNSTABLE, EXIT_VERIFY = 0, 2, 3, 4

KERNEL_RESIDUAL_TOL = 1e-2
BOUNDARY_TOL = 1e-6
ROUND_TRIP_TOL = 1e-10


class ArtifactsMissing(BackstepError):
    pass


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def output_dir(cfg: RunConfig) -> Path:
    return Path(os.environ.get("BACKSTEP_OUT") or cfg.output["directory"])


def _fmt(v) -> str:
    return repr(float(v))


def _poles(cfg: RunConfig, n: int):
    return -np.arange(1, n + 1, dtype=float) if cfg.poles is None else cfg.poles


def _gains(cfg: RunConfig, h: float):
    plant = validate_plant(cfg.plant_spec())
    grid = build_grid(plant.l, plant.xi, h)
    syn = cfg.synthesis
    gains = synthesize_gains(plant, grid, cfg.poles, syn["tail_tol"], float(syn["feedback_sign"]))
    return plant, grid, gains


def _profile(cfg: RunConfig, l: float):
    init = cfg.simulation["initial"]
    k, amp = init["mode"], init["amplitude"]
    return lambda x: amp * np.sin(k * np.pi * x / l)


def _X0(cfg: RunConfig, n: int) -> np.ndarray:
    X0 = cfg.simulation["initial"]["X0"]
    return np.zeros(n) if X0 is None else np.asarray(X0, dtype=float).reshape(n)


def closed_loop_initial(cfg: RunConfig, gains) -> CascadeState:
    grid = gains.grid
    prof = _profile(cfg, grid.l)
    X0 = _X0(cfg, gains.plant.n)
    if cfg.simulation["initial"]["compatible"]:
        return compatible_initial_state(gains, X0, prof)
    return CascadeState.from_field(X0, prof(grid.nodes), grid)


def sim_config(cfg: RunConfig, grid) -> SimConfig:
    s = cfg.simulation
    return SimConfig(dt=s["dt"], T=s["T"], grid=grid, scheme=s["scheme"],
                     record_every=s["record_every"], coupling=s["coupling"])


def trace_csv(trace, probes, n: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["t", "U", "norm_H", "norm_Y", "V"] + [f"X_{i + 1}" for i in range(n)]
    prefix = "w" if trace.kind == "target" else "u"
    header += [f"{prefix}@{float(p):g}" for p in probes]
    w.writerow(header)
    V = trace.V if trace.V is not None else np.full(len(trace.times), np.nan)
    for k, s in enumerate(trace.states):
        field = s.u if isinstance(s, CascadeState) else s.w
        probe_vals = np.interp(probes, s.grid.nodes, field)
        w.writerow([_fmt(v) for v in [trace.times[k], trace.controls[k], trace.norm_H[k],
                                      trace.norm_Y[k], V[k], *s.X, *probe_vals]])
    return buf.getvalue()


def _phi_csv(gains) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = gains.plant.n
    w.writerow(["x"] + [f"phi_{i + 1}" for i in range(n)] + [f"dphi_{i + 1}" for i in range(n)])
    for x, v, d in zip(gains.pf.nodes, gains.pf.values, gains.pf.derivs):
        w.writerow([_fmt(x), *map(_fmt, v), *map(_fmt, d)])
    return buf.getvalue()


def _certificate_text(gains, cert) -> str:
    lines = [
        f"K: {' '.join(map(_fmt, gains.K.reshape(-1)))}",
        f"poles: {' '.join(str(p) for p in gains.gain.poles)}",
        f"P: {' '.join(map(_fmt, cert.P.reshape(-1)))}",
        f"Q: {' '.join(map(_fmt, cert.Q.reshape(-1)))}",
        f"margin: {_fmt(cert.margin)}",
        f"a: {_fmt(cert.a)}",
        f"b: {_fmt(cert.b)}",
        f"alpha1: {_fmt(cert.alpha1)}",
        f"alpha2: {_fmt(cert.alpha2)}",
        f"delta: {_fmt(cert.delta)}",
        f"k1_terms: {gains.k1.terms}",
        f"k1_tail_bound: {_fmt(gains.k1.tail_bound)}",
        f"feedback_sign: {int(gains.feedback_sign)}",
    ]
    return "\n".join(lines) + "\n"


def cmd_synthesize(cfg: RunConfig) -> int:
    plant, grid, gains = _gains(cfg, cfg.synthesis["kernel_h"])
    cert = build_certificate(plant, gains.K, cfg.Q, cfg.synthesis["margin"])
    out = output_dir(cfg)
    atomic_write(out / "k1.csv", kernel_to_csv(gains.k1))
    atomic_write(out / "k2.csv", kernel_to_csv(gains.k2))
    atomic_write(out / "phi.csv", _phi_csv(gains))
    atomic_write(out / "certificate.txt", _certificate_text(gains, cert))
    print(f"synthesized: K={gains.K.reshape(-1).tolist()} delta={cert.delta:.6g} -> {out}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, mode: str) -> int:
    h = cfg.simulation["h"]
    plant = validate_plant(cfg.plant_spec())
    if mode == "closed":
        plant, grid, gains = _gains(cfg, h)
        cert = build_certificate(plant, gains.K, cfg.Q, cfg.synthesis["margin"])
        state0 = closed_loop_initial(cfg, gains)
        trace = simulate_closed_loop(plant, gains, state0, sim_config(cfg, grid), cert)
    else:
        grid = build_grid(plant.l, plant.xi, h)
        prof = _profile(cfg, plant.l)(grid.nodes)
        X0 = _X0(cfg, plant.n)
        if mode == "open":
            trace = simulate_open_loop(plant, CascadeState.from_field(X0, prof, grid), sim_config(cfg, grid))
        else:
            K = pole_place(plant.A, plant.B, _poles(cfg, plant.n)).K
            trace = simulate_target(plant, TargetState.from_field(X0, prof, grid), sim_config(cfg, grid), K)
    out = output_dir(cfg)
    atomic_write(out / f"trace_{mode}.csv", trace_csv(trace, cfg.output["probes"], plant.n))
    print(f"{mode}: t={trace.times[-1]:.6g} norm_H {trace.norm_H[0]:.6g} -> {trace.norm_H[-1]:.6g}, "
          f"norm_Y {trace.norm_Y[0]:.6g} -> {trace.norm_Y[-1]:.6g}")
    return EXIT_OK


def run_checks(cfg: RunConfig) -> list[tuple[str, bool, str]]:
    """All verification checks against the artifacts written by ``synthesize``."""
    out = output_dir(cfg)
    needed = [out / name for name in ("k1.csv", "k2.csv", "phi.csv", "certificate.txt")]
    missing = [p.name for p in needed if not p.exists()]
    if missing:
        raise ArtifactsMissing(f"missing artifacts in {out}: {', '.join(missing)} (run synthesize first)")
    plant, grid, gains = _gains(cfg, cfg.synthesis["kernel_h"])
    checks = []
    for name in ("k1", "k2"):
        kg = kernel_from_csv((out / f"{name}.csv").read_text(), name)
        r, bc = kernel_residual(kg, plant, gains.pf)
        checks.append((f"{name}_residual", r <= KERNEL_RESIDUAL_TOL and bc <= BOUNDARY_TOL,
                       f"interior={r:.3e} boundary={bc:.3e}"))

    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        s = CascadeState.from_field(rng.standard_normal(plant.n),
                                    np.r_[0.0, rng.standard_normal(len(grid.nodes) - 2), 0.0], grid)
        back = inverse_transform(forward_transform(s, gains), gains)
        worst = max(worst, np.max(np.abs(back.u1 - s.u1)), np.max(np.abs(back.u2 - s.u2)))
    checks.append(("round_trip", worst <= ROUND_TRIP_TOL, f"max error={worst:.3e}"))

    sim_plant, sim_grid, sim_gains = _gains(cfg, cfg.simulation["h"])
    state0 = closed_loop_initial(cfg, sim_gains)
    c1, c2, ok = check_compatibility(state0, sim_gains, quadrature_tolerance(sim_grid))
    checks.append(("compatibility", ok, f"c1={c1:.3e} c2={c2:.3e}"))

    cert = build_certificate(sim_plant, sim_gains.K, cfg.Q, cfg.synthesis["margin"])
    trace = simulate_closed_loop(sim_plant, sim_gains, state0, sim_config(cfg, sim_grid), cert)
    lt = lyapunov_trace(trace, sim_gains, cert)
    checks.append(("lyapunov_envelope", lt.envelope_ok, f"max V/(V0 e^-dt)={lt.envelope_ratio:.4f}"))
    checks.append(("lyapunov_monotone", lt.monotone, f"max step increase={lt.max_increase:.3e} V0"))
    fit = fit_decay_rate(trace.times, trace.norm_Y, theoretical_delta=cert.delta)
    checks.append(("decay_fit", fit.fitted_rate > 0, f"rate={fit.fitted_rate:.4f} delta={cert.delta:.4f}"))
    return checks


def cmd_verify(cfg: RunConfig) -> int:
    checks = run_checks(cfg)
    lines = [f"{'PASS' if ok else 'FAIL'} {name}: {detail}" for name, ok, detail in checks]
    report = "\n".join(lines) + "\n"
    atomic_write(output_dir(cfg) / "verification.txt", report)
    print(report, end="")
    failing = [name for name, ok, _ in checks if not ok]
    if failing:
        print(f"failing checks: {', '.join(failing)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def sweep_one(cfg: RunConfig, parameter: str, value: float) -> dict:
    key = {"xi": "xi", "lambda": "lambda"}[parameter]
    cfg = cfg.with_plant(**{key: value})
    row = {"value": value, "fitted_rate": float("nan"), "delta": float("nan"),
           "unstable_modes": -1, "norm_Y_ratio": float("nan"), "pass": False, "error": ""}
    try:
        plant, grid, gains = _gains(cfg, cfg.simulation["h"])
        cert = build_certificate(plant, gains.K, cfg.Q, cfg.synthesis["margin"])
        row["delta"] = cert.delta
        row["unstable_modes"] = open_loop_spectrum(plant, 10)[1]
        trace = simulate_closed_loop(plant, gains, closed_loop_initial(cfg, gains), sim_config(cfg, grid))
        fit = fit_decay_rate(trace.times, trace.norm_Y, theoretical_delta=cert.delta)
        row.update(fitted_rate=fit.fitted_rate, norm_Y_ratio=trace.norm_Y[-1] / trace.norm_Y[0],
                   **{"pass": fit.fitted_rate > 0})
    except BackstepError as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def sweep(cfg: RunConfig, parameter: str, values, workers: int | None = None) -> list[dict]:
    with ProcessPoolExecutor(max_workers=workers or min(len(values), os.cpu_count() or 1)) as pool:
        futures = [pool.submit(sweep_one, cfg, parameter, v) for v in values]
        return [f.result() for f in futures]


def cmd_sweep(cfg: RunConfig, parameter: str, values) -> int:
    if not values:
        print("error: sweep needs at least one value", file=sys.stderr)
        return EXIT_CONFIG
    rows = sweep(cfg, parameter, values)
    buf = io.StringIO()
    cols = ["value", "fitted_rate", "delta", "unstable_modes", "norm_Y_ratio", "pass", "error"]
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in r.items()})
    atomic_write(output_dir(cfg) / f"sweep_{parameter}.csv", buf.getvalue())
    print(buf.getvalue(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="backstep", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("synthesize", "simulate", "verify", "sweep"):
        c = sub.add_parser(name)
        c.add_argument("--config", required=True)
        c.add_argument("--h", type=float)
        c.add_argument("--dt", type=float)
        c.add_argument("--T", type=float)
        if name == "simulate":
            c.add_argument("--mode", choices=["open", "closed", "target"], default="closed")
        if name == "sweep":
            c.add_argument("--parameter", choices=["xi", "lambda"], required=True)
            c.add_argument("--values", type=float, nargs="*", default=[])
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config).with_overrides(h=args.h, dt=args.dt, T=args.T)
        if args.command == "synthesize":
            return cmd_synthesize(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.mode)
        if args.command == "verify":
            return cmd_verify(cfg)
        return cmd_sweep(cfg, args.parameter, args.values)
    except StepUnstable as exc:
        print(f"error: StepUnstable: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except (BackstepError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``check``, ``run``, ``sweep``, ``search`` and ``kernel-test``.

Exit codes for ``run``: 0 completed, 10 blow-up detected, 20 certificate
hypotheses failed in mandatory mode, 1 fault; 2 marks an invalid config.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, config_from_dict, load_config, set_dotted, tomllib
from .dynamics import Simulation
from .functionals import CSV_COLUMNS, ModelParams
from .kernel import Kernel, check_A1, check_A2
from .spatial import Grid1D, load_field_csv, norm_L2_sq, sine_series
from .theorem import GMonitor, build_certificate, lemma_monitors, search_initial_data

log = logging.getLogger("viscokirchhoff")

EXIT_COMPLETED, EXIT_FAULT, EXIT_CONFIG, EXIT_BLOWUP, EXIT_CERT = 0, 1, 2, 10, 20
WORKERS_ENV = "VISCOKIRCHHOFF_WORKERS"


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _clean(obj):
    """Plain JSON types, non-finite floats as ``None``."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def dumps(obj, **kw) -> str:
    return json.dumps(_clean(obj), sort_keys=True, allow_nan=False, **kw)


def fmt(x) -> str:
    if isinstance(x, float):
        return "%.17g" % x
    return str(x)


class CsvSink:
    """Writes every ``emit_every``-th diagnostics row, plus the final one."""

    def __init__(self, stream, emit_every: int = 1):
        self.stream, self.emit_every = stream, emit_every
        self.index = 0
        self.last_written = None
        self.pending = None
        stream.write(",".join(CSV_COLUMNS) + "\n")

    def __call__(self, row) -> None:
        if self.pending is not None and self.pending is not row:
            self._maybe_write(self.pending)
        self.pending = row

    def _maybe_write(self, row) -> None:
        if self.index % self.emit_every == 0:
            self._write(row)
        self.index += 1

    def _write(self, row) -> None:
        self.stream.write(",".join(fmt(float(v)) for v in row.csv_values()) + "\n")
        self.last_written = row

    def close(self) -> None:
        if self.pending is not None:
            self._write(self.pending)
            self.pending = None


# ---------------------------------------------------------------------------
# initial data and verification forcing
# ---------------------------------------------------------------------------

def initial_fields(cfg: RunConfig):
    grid, ini = cfg.grid, cfg.initial
    if cfg.forcing.kind == "mms":
        phi = np.sin(np.pi * grid.x / grid.L)
        return phi.copy(), -phi
    if ini.family == "csv":
        u0 = load_field_csv(ini.u0_csv, grid)
        u1 = load_field_csv(ini.u1_csv, grid) if ini.u1_csv else grid.zeros()
    else:
        u0, u1 = sine_series(ini.u0, grid), sine_series(ini.u1, grid)
    return ini.amplitude * u0, u1


def mms_forcing(params: ModelParams, kernel: Kernel, L: float):
    """Forcing that makes ``u* = e^{-t} sin(pi x/L)`` an exact solution."""
    kx = np.pi / L
    g0, kappa = kernel.coefficients

    def memory(t):
        # int_0^t g(t-s) e^{-s} ds, closed form per exponential mode
        out = 0.0
        for a, k in zip(g0, kappa):
            out += a * t * math.exp(-t) if abs(k - 1) < 1e-12 else \
                a * (math.exp(-t) - math.exp(-k * t)) / (k - 1)
        return out

    def forcing(x, t):
        phi = np.sin(kx * x)
        amp = math.exp(-t)
        grad_sq = amp**2 * kx**2 * L / 2
        m = params.M(grad_sq)
        # u_tt + u_t = 0 for this u*, so only stiffness, memory and source remain
        return (m * kx**2 * amp * phi - kx**2 * memory(t) * phi
                - np.abs(amp * phi) ** (params.p - 1) * amp * phi)

    return forcing


def mms_error(cfg: RunConfig, n_interior: int) -> tuple[float, float]:
    grid = Grid1D(cfg.grid.L, n_interior)
    T = cfg.stepper.t_max
    n_steps = math.ceil(T / (cfg.forcing.dt_ratio * grid.h))
    dt = T / n_steps
    stepper = replace(cfg.stepper, dt_init=dt, dt_max=dt, dt_min=min(cfg.stepper.dt_min, dt),
                      cfl_safety=1.0, forcing=mms_forcing(cfg.params, cfg.kernel, grid.L))
    phi = np.sin(np.pi * grid.x / grid.L)
    sim = Simulation(phi, -phi, cfg.params, cfg.kernel, grid, stepper)
    sim.run()
    return grid.h, float(np.max(np.abs(sim.state.u - math.exp(-sim.state.t) * phi)))


def convergence_table(cfg: RunConfig) -> list:
    rows = []
    for n in cfg.forcing.levels:
        h, err = mms_error(cfg, int(n))
        rows.append({"n_interior": int(n), "h": h, "max_error": err, "order": None})
    for prev, cur in zip(rows, rows[1:]):
        cur["order"] = math.log(prev["max_error"] / cur["max_error"]) / math.log(prev["h"] / cur["h"])
    return rows


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _extrema(rows) -> dict:
    out = {}
    for col in ("E", "I", "L2_sq", "grad_sq", "Linf", "g_circ"):
        vals = np.array([getattr(r, col) for r in rows], dtype=float)
        out[col] = {"min": float(np.min(vals)), "max": float(np.max(vals))} if vals.size else None
    return out


def run(cfg: RunConfig, csv_stream=None) -> tuple[dict, int]:
    """Check, simulate, monitor and summarize one configuration."""
    t_start = time.perf_counter()
    grid, params, kernel = cfg.grid, cfg.params, cfg.kernel
    u0, u1 = initial_fields(cfg)
    summary = {"config": cfg.raw, "versions": {"viscokirchhoff": __version__,
                                               "numpy": np.__version__}}
    cert = None
    monitor = None
    if cfg.certificate.enable:
        cert = build_certificate(u0, u1, params, kernel, grid, m1=cfg.certificate.m1,
                                 alpha=cfg.certificate.alpha, cp_mode=cfg.certificate.poincare)
        summary["certificate"] = cert.to_dict()
        if not cert.valid and cfg.certificate.mandatory:
            summary.update(status="certificate-failed", exit_code=EXIT_CERT)
            return summary, EXIT_CERT
        if cert.valid:
            monitor = GMonitor.from_certificate(cert)
        else:
            # uncertified: G with unit constants still exposes the Cauchy-Schwarz check
            monitor = GMonitor(params.p, 1.0, 1.0, cfg.stepper.t_max, norm_L2_sq(u0, grid))

    stepper = cfg.stepper
    if cfg.forcing.kind == "mms":
        stepper = replace(stepper, forcing=mms_forcing(params, kernel, grid.L))
    sink = CsvSink(csv_stream, cfg.output.emit_every) if csv_stream is not None else None
    sim = Simulation(u0, u1, params, kernel, grid, stepper, monitor=monitor, on_row=sink)
    res = sim.run()
    if sink is not None:
        sink.close()

    code = {"completed": EXIT_COMPLETED, "blown-up": EXIT_BLOWUP}.get(res.status, EXIT_FAULT)
    summary.update(
        status=res.status, reason=res.reason, exit_code=code, t_final=res.t_final,
        steps=res.steps, E0=res.E0, last_good_t=res.last_good_t,
        blowup={"flag": res.blowup.blown, "T_est": res.blowup.T_est,
                "fit_residual": res.blowup.fit_residual, "n_fit": res.blowup.n_fit},
        extrema=_extrema(res.rows), crosscheck_max_rel=res.crosscheck_max)
    if monitor is not None:
        ms = monitor.state
        summary["monitor"] = {
            "certified": cert is not None and cert.valid,
            "worst_cs_gap_rel": ms.worst_cs, "worst_concavity_rel": ms.worst_concavity,
            "beta_violations": len(ms.beta_violations),
            "lower_bound_violations": len(ms.bound_violations),
            "max_Gpp_mismatch_rel": ms.max_Gpp_mismatch}
    if cert is not None and cert.hypotheses:
        lem = lemma_monitors(res.rows, params.p, cert.E0, cert.u0u1, cert.Cp,
                             cert.m1, cert.alpha)
        holds = {name: (lem.all_hold(name) if any(v is not None for v in getattr(lem, name))
                        else None)
                 for name in ("I_negative", "l2_above_threshold", "l2_increasing", "growth_premise")}
        summary["lemmas"] = {
            "I_negative_all": holds["I_negative"],
            "l2_above_threshold_all": holds["l2_above_threshold"],
            "l2_increasing_all": holds["l2_increasing"],
            "premise_all": holds["growth_premise"],
            "n_warnings": len(lem.warnings),
            "first_warnings": [list(w) for w in lem.warnings[:10]]}
    if cfg.forcing.kind == "mms":
        phi = np.sin(np.pi * grid.x / grid.L)
        summary["mms"] = {
            "max_error": float(np.max(np.abs(sim.state.u - math.exp(-sim.state.t) * phi))),
            "convergence": convergence_table(cfg)}
    log.info("run finished in %.2fs: %s", time.perf_counter() - t_start, res.status)
    return summary, code


def run_to_files(cfg: RunConfig) -> tuple[dict, int]:
    if cfg.output.csv is not None:
        with open(cfg.output.csv, "w", newline="", encoding="utf-8") as fh:
            summary, code = run(cfg, fh)
    else:
        summary, code = run(cfg)
    if cfg.output.json is not None:
        Path(cfg.output.json).write_text(dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary, code


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _split_values(text: str) -> list:
    out, depth, cur = [], 0, ""
    for ch in text:
        if ch == "," and depth == 0:
            out.append(cur)
            cur = ""
            continue
        depth += ch in "[{"
        depth -= ch in "]}"
        cur += ch
    out.append(cur)
    return [v.strip() for v in out if v.strip()]


def parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def parse_axis(spec: str) -> tuple[str, list]:
    if "=" not in spec:
        raise ValueError(f"axis must look like key=v1,v2: {spec!r}")
    key, values = spec.split("=", 1)
    return key.strip(), [parse_value(v) for v in _split_values(values)]


def _sweep_cell(args):
    raw, base_dir, overrides = args
    for key, value in overrides:
        set_dotted(raw, key, value)
    raw.get("output", {}).pop("csv", None)
    raw.get("output", {}).pop("json", None)
    try:
        cfg = config_from_dict(raw, base_dir)
    except ConfigError as exc:
        return {"status": "config-error", "exit_code": EXIT_CONFIG, "error": str(exc)}
    try:
        summary, code = run(cfg)
    except Exception as exc:  # a failing cell never aborts the sweep
        return {"status": "error", "exit_code": EXIT_FAULT, "error": repr(exc)}
    cert = summary.get("certificate")
    return {"status": summary["status"], "exit_code": code,
            "T_est": summary.get("blowup", {}).get("T_est"),
            "t_final": summary.get("t_final"),
            "certificate_valid": None if cert is None else cert["valid"]}


def sweep(cfg: RunConfig, axes: list, workers: int = 1) -> list:
    """Cartesian product of overrides, one independent run per cell, in product order."""
    keys = [k for k, _ in axes]
    cells = [list(zip(keys, combo)) for combo in itertools.product(*(v for _, v in axes))]
    jobs = [(json.loads(json.dumps(cfg.raw)), cfg.base_dir, cell) for cell in cells]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]
    rows = []
    for cell, res in zip(cells, results):
        row = {k: v for k, v in cell}
        row.update(res)
        rows.append(row)
    return rows


SWEEP_COLUMNS = ("status", "exit_code", "T_est", "t_final", "certificate_valid", "error")


def write_sweep_csv(rows: list, keys: list, stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(list(keys) + list(SWEEP_COLUMNS))
    for row in rows:
        vals = [row.get(k) for k in keys] + [row.get(c) for c in SWEEP_COLUMNS]
        w.writerow(["" if v is None else (fmt(v) if isinstance(v, float) else
                                          json.dumps(v) if isinstance(v, list) else v)
                    for v in vals])


# ---------------------------------------------------------------------------
# argparse front end
# ---------------------------------------------------------------------------

def _cmd_check(cfg: RunConfig, args) -> int:
    u0, u1 = initial_fields(cfg)
    cert = build_certificate(u0, u1, cfg.params, cfg.kernel, cfg.grid, m1=cfg.certificate.m1,
                             alpha=cfg.certificate.alpha, cp_mode=cfg.certificate.poincare)
    print(dumps(cert.to_dict(), indent=2))
    return EXIT_COMPLETED if cert.valid else EXIT_CERT


def _cmd_run(cfg: RunConfig, args) -> int:
    summary, code = run_to_files(cfg)
    if cfg.output.json is None:
        print(dumps(summary, indent=2))
    return code


def _cmd_sweep(cfg: RunConfig, args) -> int:
    axes = [parse_axis(a) for a in args.axis]
    workers = args.workers or int(os.environ.get(WORKERS_ENV, "1"))
    rows = sweep(cfg, axes, workers)
    keys = [k for k, _ in axes]
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            write_sweep_csv(rows, keys, fh)
    else:
        write_sweep_csv(rows, keys, sys.stdout)
    return EXIT_COMPLETED


def _cmd_search(cfg: RunConfig, args) -> int:
    budget = cfg.search_budget if args.budget is None else args.budget
    hits = search_initial_data(cfg.family, cfg.params, cfg.kernel, cfg.grid, budget,
                               cfg.seed, m1=cfg.certificate.m1, alpha=cfg.certificate.alpha,
                               cp_mode=cfg.certificate.poincare)
    for hit in hits:
        print(dumps(hit.to_dict()))
    log.info("search: %d admissible of %d candidates", len(hits), budget)
    return EXIT_COMPLETED


def _cmd_kernel_test(cfg: RunConfig, args) -> int:
    a1 = check_A1(cfg.kernel)
    kt = cfg.kernel_test
    a2 = check_A2(cfg.kernel, kt.horizon, kt.samples, force_quadrature=kt.force_quadrature,
                  seed=cfg.seed)
    print(dumps({"A1": asdict(a1), "A2": asdict(a2)}, indent=2))
    return EXIT_COMPLETED if a1.ok and a2.verdict != "failed" else EXIT_FAULT


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="viscokirchhoff", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in (("check", _cmd_check), ("run", _cmd_run), ("kernel-test", _cmd_kernel_test)):
        p = sub.add_parser(name)
        p.add_argument("config")
        p.set_defaults(func=fn)
    p = sub.add_parser("sweep")
    p.add_argument("config")
    p.add_argument("--axis", action="append", default=[], required=True,
                   help="key=v1,v2,... (repeatable)")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_sweep)
    p = sub.add_parser("search")
    p.add_argument("config")
    p.add_argument("--budget", type=int, default=None)
    p.set_defaults(func=_cmd_search)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(cfg, args)


if __name__ == "__main__":
    sys.exit(main())

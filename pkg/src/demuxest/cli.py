"""Command-line front end.

Commands ``sensitivity-scan``, ``coefficients``, ``crossing-diagram`` and
``simulate`` all read a JSON scenario (see ``docs/scenario.md``).  Exit codes:
0 success, 2 scenario validation, 3 numerical or calibration failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import __version__
from .direct_imaging import PixelBasis, crossing_point, direct_imaging_sensitivity, pixel_couplings
from .modes import mode_indices
from .moments import analyze
from .montecarlo import run_experiment
from .noise import ensemble_coefficients, ensemble_draws, ensemble_sensitivity, sample_crosstalk
from .scenario import Scenario, ScenarioError, load
from .scene import (
    ConfigurationError,
    CrosstalkSpec,
    DarkCountSpec,
    DegenerateScenarioError,
    InvalidCalibrationError,
    SceneConfig,
)

logger = logging.getLogger("demuxest")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

SCAN_COLUMNS = ["d", "d_over_2w", "M", "M_low_brightness", "qfi_faint", "M_std", "n_failed", "M_DI", "status"]
COEFF_COLUMNS = ["d", "d_over_2w", "n", "m", "coefficient", "coefficient_std", "status"]
CROSSING_COLUMNS = ["variable", "value", "brightness", "d_star", "crossings"]
SIM_COLUMNS = ["repetition", "x_bar", "d_tilde"]


def _num(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _metadata(sc: Scenario, command: str) -> dict:
    return {
        "tool": "demuxest",
        "version": __version__,
        "command": command,
        "scenario_sha256": sc.sha256,
        "seeds": sc.seeds(),
        "w": sc.w,
    }


def render(meta: dict, columns, rows, fmt: str, extra: dict | None = None) -> str:
    if fmt == "json":
        doc = {"metadata": meta, "columns": list(columns), "rows": [dict(zip(columns, r)) for r in rows]}
        if extra:
            doc.update(extra)
        return json.dumps(_jsonable(doc), indent=2, sort_keys=False, allow_nan=False) + "\n"
    buf = io.StringIO()
    for key, val in meta.items():
        buf.write(f"# {key}: {json.dumps(val, sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_num(v) for v in r])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# ---------------------------------------------------------------------------
# commands


def _basis_for(sc: Scenario, d: float) -> PixelBasis:
    if sc.extent is not None:
        return PixelBasis(sc.pitch, max(sc.extent, 3.0 + 0.5 * d))
    return PixelBasis.default(d, sc.pitch)


def _scan_point(sc: Scenario, d: float, matrices):
    cfg = sc.base.with_d(d)
    w2 = sc.w**2
    row = {"d": d * sc.w, "d_over_2w": d / 2.0, "qfi_faint": 2 * cfg.nkappa / w2, "status": "ok"}
    try:
        if sc.basis == "pixels":
            rep = analyze(cfg, table=pixel_couplings(cfg, _basis_for(sc, d)))
            row.update(M=rep.M / w2, M_low_brightness=rep.M_low_brightness / w2)
        elif matrices is not None:
            st = ensemble_sensitivity(cfg, cfg.crosstalk, [d], matrices=matrices)
            row.update(
                M=st.M_mean[0] / w2,
                M_low_brightness=st.M_low_brightness_mean[0] / w2,
                M_std=st.M_std[0] / w2,
                n_failed=int(st.n_failed[0]),
            )
            if st.n_failed[0]:
                row["status"] = "partial"
        else:
            rep = analyze(cfg)
            row.update(M=rep.M / w2, M_low_brightness=rep.M_low_brightness / w2)
    except DegenerateScenarioError as exc:
        row["status"] = "degenerate"
        logger.warning("d=%g: %s", d, exc)
    if sc.direct_imaging:
        row["M_DI"] = direct_imaging_sensitivity(cfg, _basis_for(sc, d)) / w2
    return row


def cmd_sensitivity_scan(sc: Scenario, threads: int = 1):
    matrices = None
    if sc.base.crosstalk is not None and sc.basis == "hg":
        matrices = ensemble_draws(sc.base, sc.base.crosstalk)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(lambda d: _scan_point(sc, d, matrices), sc.d_grid))
    cols = [c for c in SCAN_COLUMNS if any(c in r for r in rows)]
    return cols, [[r.get(c) for c in cols] for r in rows], None


def _require_hg(sc: Scenario, command: str):
    if sc.basis != "hg":
        raise ScenarioError(f"{command} requires the hg basis", "measurement/basis")


def _coeff_block(sc: Scenario, d: float, matrices):
    cfg = sc.base.with_d(d)
    status = "ok"
    try:
        if matrices is not None:
            mean, std, n = ensemble_coefficients(cfg, matrices=matrices)
            if n < len(matrices):
                status = "partial"
        else:
            mean, std = analyze(cfg).m, np.zeros(cfg.K)
    except DegenerateScenarioError as exc:
        logger.warning("d=%g: %s", d, exc)
        mean, std, status = np.full(cfg.K, np.nan), np.full(cfg.K, np.nan), "degenerate"
    return [
        [d * sc.w, d / 2.0, k.n, k.m, mean[i], std[i], status]
        for i, k in enumerate(mode_indices(cfg.Q))
    ]


def cmd_coefficients(sc: Scenario, threads: int = 1):
    _require_hg(sc, "coefficients")
    matrices = ensemble_draws(sc.base, sc.base.crosstalk) if sc.base.crosstalk is not None else None
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        blocks = list(pool.map(lambda d: _coeff_block(sc, d, matrices), sc.d_grid))
    return COEFF_COLUMNS, [r for b in blocks for r in b], None


def sweep_config(base: SceneConfig, variable: str, value: float, brightness: float, w: float = 1.0) -> SceneConfig:
    """Scenario at one point of a crossing-diagram sweep (``brightness = N kappa``)."""
    cfg = replace(base, N=brightness / base.kappa)
    if variable == "d_s":
        return replace(cfg, d_s=value / w)
    if variable == "mean_power":
        old = base.crosstalk or CrosstalkSpec(0.0)
        spec = replace(old, mean_offdiag_power=value) if value > 0 else None
        return replace(cfg, crosstalk=spec)
    if variable == "sigma":
        return replace(cfg, dark=DarkCountSpec(value) if value > 0 else None)
    raise ConfigurationError(f"unknown sweep variable {variable!r}")


def cmd_crossing_diagram(sc: Scenario, threads: int = 1):
    _require_hg(sc, "crossing-diagram")
    sw = sc.sweep
    if sw is None:
        raise ScenarioError("crossing-diagram needs a 'sweep' section", "sweep")
    brightness = sw.get("brightness", [1.5, 5.0, 10.0])
    win = sw.get("window", {"from": 0.01 * sc.w, "to": 2.0 * sc.w})
    window = (win["from"] / sc.w, win["to"] / sc.w)
    points = win.get("points", 80)
    jobs = [(v, b) for v in sw["values"] for b in brightness]

    def one(job):
        v, b = job
        res = crossing_point(sweep_config(sc.base, sw["variable"], v, b, sc.w), window=window, points=points, pitch=sc.pitch)
        d_star = None if res.d_star is None else res.d_star * sc.w
        return [sw["variable"], v, b, "none" if d_star is None else d_star,
                ";".join(repr(c * sc.w) for c in res.crossings)]

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(one, jobs))
    return CROSSING_COLUMNS, rows, None


def cmd_simulate(sc: Scenario, threads: int = 1):
    _require_hg(sc, "simulate")
    mc = sc.montecarlo
    if mc is None:
        raise ScenarioError("simulate needs a 'montecarlo' section", "montecarlo")
    if sc.d_grid.size != 1:
        raise ScenarioError("simulate needs a single separation 'd'", "sources")
    cfg = sc.base
    c = sample_crosstalk(cfg.K, cfg.crosstalk, 0) if cfg.crosstalk is not None else None
    m = None
    if "m_from_d" in mc:
        m = analyze(cfg.with_d(mc["m_from_d"] / sc.w), c=c).m
    run = run_experiment(cfg, m=m, mu=mc["mu"], repetitions=mc["repetitions"], seed=mc.get("seed", 0),
                         c=c, threads=threads)
    w = sc.w
    summary = {
        "mu": run.mu,
        "repetitions": run.repetitions,
        "d_true": run.d_true * w,
        "mean_d": run.mean_d * w,
        "standard_error": run.standard_error * w if run.repetitions > 1 else None,
        "empirical_var": run.empirical_var * w**2,
        "predicted_var": run.predicted_var * w**2,
        "variance_ratio": run.variance_ratio,
        "M": run.M / w**2,
        "m": list(run.m),
        "seed": run.seed,
        "saturated": run.saturated,
        "warnings": run.warnings,
        "d_tilde": list(run.d_tilde * w),
        "sample_mean_x": list(run.sample_mean_x),
    }
    rows = [[i, x, d * w] for i, (x, d) in enumerate(zip(run.sample_mean_x, run.d_tilde))]
    return SIM_COLUMNS, rows, {"run": summary}


COMMANDS = {
    "sensitivity-scan": cmd_sensitivity_scan,
    "coefficients": cmd_coefficients,
    "crossing-diagram": cmd_crossing_diagram,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="demuxest", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--output", help="output path (default: scenario output.path or stdout)")
        p.add_argument("--format", choices=["csv", "json"], help="output format (default: scenario or csv)")
        p.add_argument("--threads", type=int, default=1, help="worker threads")
        p.add_argument("--seed", type=int, help="override every seed in the scenario")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        sc = load(args.scenario, seed=args.seed)
        fmt = args.format or sc.output.get("format", "csv")
        columns, rows, extra = COMMANDS[args.command](sc, threads=args.threads)
    except (ScenarioError, ConfigurationError) as exc:
        print(f"demuxest: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"demuxest: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (InvalidCalibrationError, DegenerateScenarioError) as exc:
        print(f"demuxest: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    meta = _metadata(sc, args.command)
    if fmt == "csv" and extra:
        # run summary goes into the CSV header block
        meta.update({k: v for k, v in extra["run"].items() if not isinstance(v, list)})
    text = render(_jsonable(meta), columns, rows, fmt, extra)
    path = args.output or sc.output.get("path")
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

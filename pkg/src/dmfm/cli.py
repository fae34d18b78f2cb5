"""Command-line interface: ``dmfm {simulate,estimate,predict,bench,study}``.

Exit codes: 0 success, 1 invalid input, 2 estimation failure, 3 benchmark
or study with fewer than 90% successful rows.
"""

from __future__ import annotations

import argparse
import contextlib
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, dataio, factor, forecast, mar, simlab, statespace
from .errors import BadConfig, DMFMError, ValidationError
from .factor import LoadingPair

log = logging.getLogger("dmfm")

EXIT_OK, EXIT_VALIDATION, EXIT_ESTIMATION, EXIT_PARTIAL = 0, 1, 2, 3
SUCCESS_SHARE = 0.9


class EstimationFailed(Exception):
    """Wraps any library error raised after the inputs were accepted."""

    def __init__(self, cause: Exception):
        super().__init__(str(cause))
        self.cause = cause


@contextlib.contextmanager
def estimating():
    try:
        yield
    except DMFMError as exc:
        raise EstimationFailed(exc) from exc


# ---------------------------------------------------------------- manifest


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(path, command: str, config: dict, seed, started: str, outputs) -> None:
    manifest = {
        "command": command,
        "config_digest": config_digest(config),
        "seed": seed,
        "version": __version__,
        "started": started,
        "finished": _now(),
        "outputs": [str(p) for p in outputs],
    }
    Path(path).write_text(json.dumps(manifest, indent=2) + "\n")


def resolve_seed(cli_seed, config_seed=None) -> int:
    """``--seed`` first, then the config file, then ``$DMFM_SEED``, else 0."""
    for value in (cli_seed, config_seed, os.environ.get("DMFM_SEED")):
        if value is None:
            continue
        try:
            seed = int(value)
        except (TypeError, ValueError):
            raise BadConfig(f"seed must be an unsigned integer, got {value!r}") from None
        if seed < 0:
            raise BadConfig(f"seed must be an unsigned integer, got {value!r}")
        return seed
    return 0


def _fmt(name: str | None) -> str | None:
    return {"csv": "csv-long", "dmx": "dmx-binary", None: None}.get(name, name)


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def _read_json(path, what: str) -> dict:
    try:
        return simlab.load_json(path)
    except OSError as exc:
        raise dataio.IoError(f"cannot read {what} {path}: {exc}") from None


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    started = _now()
    raw = _read_json(args.config, "config")
    if not isinstance(raw, dict):
        raise BadConfig(f"{args.config}: config must be a JSON object")
    raw = dict(raw)
    raw["seed"] = resolve_seed(args.seed, raw.get("seed"))
    try:
        cfg = simlab.SimConfig.from_dict(raw)
    except TypeError as exc:
        raise BadConfig(f"{args.config}: {exc}") from None
    except BadConfig as exc:
        raise BadConfig(f"{args.config}: {exc}") from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fmt = _fmt(args.format)
    series_path = out / ("series.csv" if fmt == "csv-long" else "series.dmx")
    with estimating():
        truth = simlab.generate_truth(cfg)
        series = simlab.simulate(truth, cfg, rep=args.rep)
    dataio.write_series(series, series_path, fmt)
    truth_path = out / "truth.json"
    _write_json(truth_path, {"config": cfg.to_dict(), "truth": truth.to_dict()})
    write_manifest(out / "manifest.json", "simulate", cfg.to_dict() | {"rep": args.rep}, cfg.seed, started,
                   [series_path, truth_path])
    print(series_path)
    return EXIT_OK


def loadings_to_dict(lp: LoadingPair) -> dict:
    return {"d1": lp.dims[0], "d2": lp.dims[1], "r1": lp.ranks[0], "r2": lp.ranks[1],
            "u1": lp.u1.ravel().tolist(), "u2": lp.u2.ravel().tolist()}


def loadings_from_dict(d: dict) -> LoadingPair:
    try:
        d1, d2, r1, r2 = (int(d[k]) for k in ("d1", "d2", "r1", "r2"))
        return LoadingPair(np.asarray(d["u1"], float).reshape(d1, r1), np.asarray(d["u2"], float).reshape(d2, r2))
    except (KeyError, ValueError, TypeError) as exc:
        raise BadConfig(f"malformed loadings record: {exc}") from None


def _read_data(args) -> dataio.MatrixSeries:
    return dataio.read_series(args.data, _fmt(args.format))


def cmd_estimate(args) -> int:
    started = _now()
    x = _read_data(args)
    if args.rank != "auto" and (args.r1 is None or args.r2 is None):
        raise BadConfig("give --r1 and --r2, or --rank auto")
    diagnostics: dict = {}
    with estimating():
        if args.rank == "auto":
            sel = factor.select_rank_er(x.frames, args.h0)
            r1, r2 = sel.r1, sel.r2
            diagnostics["rank_selection"] = {"r1": r1, "r2": r2, "ratios1": sel.ratios1.tolist(),
                                             "ratios2": sel.ratios2.tolist()}
        else:
            r1, r2 = args.r1, args.r2
        lp = factor.tipup_loadings(x.frames, r1, r2, args.h0)
        fhat = factor.extract_factors(x.frames, lp)
        kw = {"ridge": args.ridge} if args.method == "l2e" and args.ridge else {}
        model = mar.fit(fhat, args.method, **kw)
    diagnostics.update(causality=model.causality, iterations=model.iterations, converged=model.converged)
    result = {"loadings": loadings_to_dict(lp), "model": model.to_dict(), "diagnostics": diagnostics}
    _write_json(args.out, result)
    config = {"data": str(args.data), "rank": args.rank, "r1": r1, "r2": r2, "method": args.method,
              "h0": args.h0, "ridge": args.ridge}
    write_manifest(str(args.out) + ".manifest.json", "estimate", config, None, started, [args.out])
    return EXIT_OK


def cmd_predict(args) -> int:
    started = _now()
    x = _read_data(args)
    rec = _read_json(args.model, "model")
    try:
        lp = loadings_from_dict(rec["loadings"])
        model = mar.MarModel.from_dict(rec["model"])
    except (KeyError, ValueError, TypeError) as exc:
        raise BadConfig(f"{args.model}: malformed model file: {exc}") from None
    if lp.dims != (x.d1, x.d2) or lp.ranks != (model.r1, model.r2):
        raise ValidationError(f"model is for {lp.dims} frames with ranks {lp.ranks}; data frames are {(x.d1, x.d2)}")
    with estimating():
        fhat = factor.extract_factors(x.frames, lp)
        if args.method == "plugin":
            fc = forecast.predict_plugin(fhat[-1], lp, model)
        elif args.method == "kf":
            fc = forecast.predict_kf(fhat, lp, model, statespace.estimate_params(fhat, model.phi))
        else:
            lse = model if model.method == "lse" else mar.fit(fhat, "lse")
            l2e = model if model.method == "l2e" else mar.fit(fhat, "l2e")
            fc = forecast.predict_l2e_plus(fhat, lp, lse, l2e, args.tol)
    _write_json(args.out, fc.to_dict())
    config = {"data": str(args.data), "model": rec, "method": args.method, "tol": args.tol}
    write_manifest(str(args.out) + ".manifest.json", "predict", config, None, started, [args.out])
    return EXIT_OK


def _partial_exit(n_ok: int, n_total: int) -> int:
    if n_total and n_ok / n_total < SUCCESS_SHARE:
        log.error("only %d of %d rows succeeded", n_ok, n_total)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_bench(args) -> int:
    started = _now()
    x = _read_data(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    with estimating():
        report = forecast.rolling_forecast(x.frames, args.start_origin, methods, (args.r1, args.r2),
                                           args.detrend_alpha, args.h0, jobs=args.jobs)
    out = Path(args.out)
    summary = out.with_suffix(".summary.json")
    report.write_csv(out)
    report.write_summary(summary)
    config = {"data": str(args.data), "start_origin": args.start_origin, "methods": methods,
              "ranks": [args.r1, args.r2], "detrend_alpha": args.detrend_alpha, "h0": args.h0}
    write_manifest(str(out) + ".manifest.json", "bench", config, None, started, [out, summary])
    n_total = len(report.origins) * len(methods)
    n_ok = n_total - sum(report.n_failed(m) for m in methods)
    return _partial_exit(n_ok, n_total)


def cmd_study(args) -> int:
    started = _now()
    raw = _read_json(args.config, "study config")
    if isinstance(raw, dict):
        raw = dict(raw)
        raw["seed"] = resolve_seed(args.seed, raw.get("seed"))
    try:
        cfgs, reps, estimators, metrics = simlab.parse_study_config(raw)
    except (BadConfig, TypeError) as exc:
        raise BadConfig(f"{args.config}: {exc}") from None
    with estimating():
        rows = simlab.run_study(cfgs, reps, estimators, metrics, jobs=args.jobs)
    out = Path(args.out)
    simlab.write_study_csv(rows, out)
    write_manifest(str(out) + ".manifest.json", "study", raw, raw["seed"], started, [out])
    n_ok = sum(1 for r in rows if math.isfinite(r.value))
    return _partial_exit(n_ok, len(rows))


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dmfm", description="Dynamic matrix factor models.")
    p.add_argument("--version", action="version", version=f"dmfm {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp):
        sp.add_argument("--data", required=True, help="series file (.csv long format or .dmx binary)")
        sp.add_argument("--format", choices=["csv", "dmx"], help="override format detection by suffix")

    s = sub.add_parser("simulate", help="draw a series from a simulation config")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--format", choices=["csv", "dmx"], default="dmx")
    s.add_argument("--seed", type=int)
    s.add_argument("--rep", type=int, default=0, help="replication index (selects the random substream)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("estimate", help="fit loadings and MAR(1) factor dynamics")
    data_args(s)
    s.add_argument("--r1", type=int)
    s.add_argument("--r2", type=int)
    s.add_argument("--rank", choices=["auto", "fixed"], default="fixed")
    s.add_argument("--method", choices=list(mar.METHODS), default="lse")
    s.add_argument("--h0", type=int, default=1)
    s.add_argument("--ridge", type=float, default=0.0, help="relative ridge on the lag-1 autocovariance (l2e)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("predict", help="one-step-ahead forecast from an estimated model")
    data_args(s)
    s.add_argument("--model", required=True)
    s.add_argument("--method", choices=["plugin", "kf", "auto"], default="plugin")
    s.add_argument("--tol", type=float, default=1e-10, help="relative eigenvalue threshold of the auto rule")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("bench", help="rolling-origin one-step benchmark")
    data_args(s)
    s.add_argument("--start-origin", type=int, required=True)
    s.add_argument("--methods", default="plugin-lse,rw,mean", help=f"comma list from {','.join(forecast.METHODS)}")
    s.add_argument("--r1", type=int, default=1)
    s.add_argument("--r2", type=int, default=1)
    s.add_argument("--detrend-alpha", type=float)
    s.add_argument("--h0", type=int, default=1)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", required=True, help="CSV of per-origin errors; summary JSON is written next to it")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("study", help="Monte Carlo study over an SNR grid")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_study)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad usage; that code is reserved for
        # estimation failures here
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EstimationFailed as exc:
        print(f"dmfm {args.command}: estimation failed: {type(exc.cause).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (DMFMError, OSError) as exc:
        print(f"dmfm {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

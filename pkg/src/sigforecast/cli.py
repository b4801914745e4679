"""Command-line entry point: train, predict, evaluate, bench, synth.

Exit codes: 0 success, 2 usage errors (argparse), 3 data/checkpoint errors,
4 numerical failures.  Every command is deterministic given --seed.  Report
paths write CSVs and render matplotlib figures alongside them (--no-plots to
skip the figures).
"""

from __future__ import annotations

import argparse
import sys
import time
import tracemalloc
from pathlib import Path

import numpy as np

from . import arrayops, dataio, randfourier, sigfeatures, vargp
from .arrayops import FracDiffOrders
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .dataio import DataError
from .forecast import (
    ForecastConfig,
    TrainingDivergedError,
    aggregate_crps,
    default_season,
    evaluate,
    predict,
    train,
)
from .vargp import NumericalError

#: config-file key -> ForecastConfig field
_KEYMAP = {
    "D": "rff_dim",
    "M": "levels",
    "lags": "lags",
    "W": "window",
    "lr": "lr",
    "epochs": "epochs",
    "min_steps": "min_steps",
    "penalty_weight": "penalty_weight",
    "mode": "mode",
    "quantiles": "quantile_levels",
    "calibration_grid": "calibration_grid",
    "season": "season",
    "seed": "seed",
    "horizon": "horizon",
    "spectral": "spectral",
    "step_batch": "step_batch",
    "lambda_init": "lambda_init",
    "q_init": "q_init",
}

_INT_KEYS = {"rff_dim", "levels", "lags", "window", "epochs", "min_steps", "season",
             "seed", "horizon", "step_batch"}
_FLOAT_KEYS = {"lr", "penalty_weight", "lambda_init", "q_init"}
_TUPLE_KEYS = {"quantile_levels", "calibration_grid"}


def parse_config_file(path) -> dict:
    """Plain key=value config; unknown keys are rejected loudly."""
    out = {}
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file {p} not found")
    for raw in p.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"malformed config line: {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYMAP:
            raise DataError(f"unknown config key {key!r}")
        field = _KEYMAP[key]
        if field in _INT_KEYS:
            out[field] = int(value)
        elif field in _FLOAT_KEYS:
            out[field] = float(value)
        elif field in _TUPLE_KEYS:
            out[field] = tuple(float(v) for v in value.split(",") if v.strip())
        else:
            out[field] = value
    return out


def _build_config(args, dataset) -> ForecastConfig:
    kv = parse_config_file(args.config) if getattr(args, "config", None) else {}
    if getattr(args, "seed", None) is not None:
        kv["seed"] = args.seed
    kv.setdefault("horizon", dataset.prediction_length)
    return ForecastConfig(**kv)


def _write_trace(path, trace) -> None:
    with open(path, "w") as fh:
        fh.write("step,loss\n")
        for step, loss in trace:
            fh.write(f"{int(step)},{float(loss)!r}\n")


def _forecast_rows(fh, item_id, qf) -> None:
    for step in range(qf.values.shape[0]):
        for j, tau in enumerate(qf.levels):
            fh.write(f"{item_id},{step + 1},{float(tau)!r},{float(qf.values[step, j])!r}\n")


def _write_band(path, qf) -> None:
    with open(path, "w") as fh:
        fh.write("t,mean,lower,upper\n")
        for step in range(qf.means.shape[0]):
            m = float(qf.means[step])
            half = float(3.0 * qf.stds[step])
            fh.write(f"{step + 1},{m!r},{m - half!r},{m + half!r}\n")


def _safe_name(item_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in item_id)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    dataset = dataio.load_jsonlines(args.data)
    config = _build_config(args, dataset)
    out = Path(args.out)
    trace_path = out.with_name(out.stem + "_trace.csv")
    try:
        model = train(dataset, config, log_every=args.log_every)
    except TrainingDivergedError as err:
        print(f"error: {err}", file=sys.stderr)
        if err.model is not None:
            save_checkpoint(err.model, out)
            _write_trace(trace_path, err.model.trace)
            print(f"last finite checkpoint written to {out}", file=sys.stderr)
        raise
    save_checkpoint(model, out)
    _write_trace(trace_path, model.trace)
    if not args.no_plots and model.trace.shape[0]:
        from . import plots

        plots.plot_trace(out.with_name(out.stem + "_trace.png"), model.trace)
    print(f"checkpoint: {out}")
    print(f"trace: {trace_path} ({model.trace.shape[0]} steps)")
    if model.trace.shape[0]:
        print(f"final loss: {model.trace[-1, 1]:.6f}")
    return 0


def cmd_predict(args) -> int:
    model = load_checkpoint(args.model)
    dataset = dataio.load_jsonlines(args.data)
    out = Path(args.out)
    from . import plots

    with open(out, "w") as fh:
        fh.write("series_id,step,quantile_level,value\n")
        for rec in dataset.records:
            qf = predict(model, rec.target, rec.item_id)
            _forecast_rows(fh, rec.item_id, qf)
            stem = out.with_name(f"{out.stem}_band_{_safe_name(rec.item_id)}")
            _write_band(stem.with_suffix(".csv"), qf)
            if not args.no_plots:
                plots.plot_forecast_band(
                    stem.with_suffix(".png"), rec.target, qf, title=rec.item_id
                )
    print(f"forecasts: {out}")
    return 0


def cmd_evaluate(args) -> int:
    model = load_checkpoint(args.model)
    dataset = dataio.load_jsonlines(args.data)
    season = args.season or model.config.season or default_season(dataset.freq)
    evals = evaluate(
        model,
        dataset,
        calibrate_stds=not args.no_calibration,
        with_naive=args.seasonal_naive,
        season=season,
    )
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    crps_path = prefix.with_name(prefix.name + "_crps.csv")
    with open(crps_path, "w") as fh:
        fh.write("item_id,crps,beta,coverage3,naive_crps\n")
        for ev in evals:
            naive = "" if ev.naive_crps is None else repr(float(ev.naive_crps))
            fh.write(f"{ev.item_id},{float(ev.crps)!r},{float(ev.beta)!r},{float(ev.coverage3)!r},{naive}\n")
    fc_path = prefix.with_name(prefix.name + "_forecasts.csv")
    from . import plots

    with open(fc_path, "w") as fh:
        fh.write("series_id,step,quantile_level,value\n")
        for ev in evals:
            _forecast_rows(fh, ev.item_id, ev.forecast)
            if not args.no_plots:
                rec = next(r for r in dataset.records if r.item_id == ev.item_id)
                plots.plot_forecast_band(
                    prefix.with_name(
                        f"{prefix.name}_band_{_safe_name(ev.item_id)}.png"
                    ),
                    rec.target[: -model.horizon],
                    ev.forecast,
                    actual=ev.actual,
                    title=f"{ev.item_id} (CRPS {ev.crps:.4f})",
                )
    total = aggregate_crps(evals, model.config.quantile_levels)
    print(f"CRPS {total!r}")
    if args.seasonal_naive:
        from .forecast import crps as _crps, seasonal_naive as _naive

        naive_fcs = [
            _naive(
                next(r for r in dataset.records if r.item_id == ev.item_id).target[: -model.horizon],
                season,
                model.horizon,
                model.config.quantile_levels,
            )
            for ev in evals
        ]
        naive_total = _crps(naive_fcs, [ev.actual for ev in evals], model.config.quantile_levels)
        print(f"CRPS-seasonal-naive (season={season}) {naive_total!r}")
    print(f"per-series: {crps_path}")
    print(f"forecasts: {fc_path}")
    return 0


def cmd_bench(args) -> int:
    lengths = [int(v) for v in args.lengths.split(",") if v.strip()]
    if args.threads:
        arrayops.set_threads(args.threads)
    d = args.d_in
    rng = np.random.default_rng(args.seed)
    basis = randfourier.sample_basis(args.M, d, args.D, args.seed)
    omega = basis.eps_freq
    phases = 2.0 * np.pi * basis.u_prior
    lam = np.full(args.D, 0.97)
    orders = FracDiffOrders(np.full(args.D, 0.5), args.W)

    def feature_pass(x):
        return sigfeatures.feature_matrix(x, omega, phases, orders, lam)

    feature_pass(rng.standard_normal((512, d)))  # warm the jit kernels
    rows = []
    for length in lengths:
        x = rng.standard_normal((length, d))
        t0 = time.perf_counter()
        feature_pass(x)
        seconds = time.perf_counter() - t0
        tracemalloc.start()
        feature_pass(x)
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        rows.append((length, seconds, peak, arrayops.configured_threads()))
        print(f"L={length:>8d}  {seconds:.4f}s  peak={peak / 2**20:.1f}MiB")
    out = Path(args.out)
    with open(out, "w") as fh:
        fh.write("L,seconds,peak_bytes,threads\n")
        for length, seconds, peak, threads in rows:
            fh.write(f"{length},{float(seconds)!r},{int(peak)},{int(threads)}\n")
    if not args.no_plots:
        from . import plots

        plots.plot_bench(out.with_suffix(".png"), [(r[0], r[1], r[2]) for r in rows])
    print(f"bench: {out}")
    return 0


def cmd_synth(args) -> int:
    dataset = dataio.synth_multisin(args.n_train, args.horizon, args.seed)
    stem = Path(args.out)
    stem.parent.mkdir(parents=True, exist_ok=True)
    train_ds = dataio.Dataset(
        records=[
            dataio.DatasetRecord(r.item_id, r.start, r.target[: -args.horizon])
            for r in dataset.records
        ],
        freq=dataset.freq,
        prediction_length=args.horizon,
    )
    train_path = stem.with_name(stem.name + "_train.jsonl")
    test_path = stem.with_name(stem.name + "_test.jsonl")
    dataio.save_jsonlines(train_ds, train_path)
    dataio.save_jsonlines(dataset, test_path)
    if args.csv:
        dataio.to_csv(dataset, stem.with_name(stem.name + ".csv"))
    print(f"train: {train_path}")
    print(f"test: {test_path}")
    return 0


# ---------------------------------------------------------------------------
# parser / entry
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sigforecast",
        description="Signature-feature GP forecasting: train, predict, evaluate, bench, synth.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and write a checkpoint")
    p.add_argument("--data", required=True, help="JSON-lines dataset (with .meta sidecar)")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="forecast past the end of each series")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="forecast CSV path")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="CRPS on the final prediction-length split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="evaluation", help="output prefix")
    p.add_argument("--seasonal-naive", action="store_true", help="also score the baseline")
    p.add_argument("--season", type=int, default=None)
    p.add_argument("--no-calibration", action="store_true")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="time the feature pass over sequence lengths")
    p.add_argument("--lengths", default="1000,10000,100000")
    p.add_argument("--D", dest="D", type=int, default=200)
    p.add_argument("--M", dest="M", type=int, default=5)
    p.add_argument("--d-in", type=int, default=10)
    p.add_argument("--W", type=int, default=32)
    p.add_argument("--threads", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="bench.csv")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write the synthetic multi-sinusoid dataset")
    p.add_argument("--out", required=True, help="output path stem")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=700)
    p.add_argument("--horizon", type=int, default=100)
    p.add_argument("--csv", action="store_true", help="also export item_id,t,value CSV")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, CheckpointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except (NumericalError, TrainingDivergedError) as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

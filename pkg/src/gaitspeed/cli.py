"""``gaitspeed`` command line: ingest, segment, stepfreq, synth, train, eval, lopo, search, predict.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures print a
single ``error: ...`` line on stderr (a JSON object with ``--json``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import ExitStack
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evaluation, imu, pipeline, spectral, speednet, synth, windowing

DEFAULT_SEED = 0


class UsageError(Exception):
    pass


def _range_arg(text: str, n: int | None = None) -> list[float]:
    try:
        parts = [float(p) for p in text.split(":")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected colon-separated numbers, got {text!r}") from None
    if n is not None and len(parts) != n:
        raise argparse.ArgumentTypeError(f"expected {n} colon-separated numbers, got {text!r}")
    return parts


def _speeds(text: str) -> list[float]:
    parts = _range_arg(text)
    if len(parts) == 1:
        return parts
    if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
        raise argparse.ArgumentTypeError("speeds must be START:STOP:STEP or a single value")
    lo, hi, step = parts
    count = int(round((hi - lo) / step)) + 1
    return [round(lo + i * step, 6) for i in range(count)]


def _emit(args, payload: dict) -> None:
    if args.json:
        print(json.dumps(payload))
    else:
        for key, val in payload.items():
            if isinstance(val, (dict, list)):
                val = json.dumps(val)
            print(f"{key}: {val}")


def _manifest(args) -> Path:
    path = Path(args.manifest)
    if not path.is_file():
        raise UsageError(f"manifest not found: {path}")
    return path


def _calibration(args):
    if not getattr(args, "calibration", None):
        return None
    return imu.CalibrationParams.from_dict(json.loads(Path(args.calibration).read_text()))


def _dataset(args):
    return pipeline.load_dataset(_manifest(args), args.trim, _calibration(args), args.frame,
                                 args.overlap, args.mode.replace("-", "_"), args.rate)


def _arch(args) -> speednet.ArchSpec:
    return speednet.ArchSpec(tuple(args.conv), tuple(args.dense), args.dropout, args.frame)


def _train_config(args) -> speednet.TrainConfig:
    return speednet.TrainConfig(max_epochs=args.epochs, patience=args.patience,
                                batch_size=args.batch_size, lr=args.lr, seed=args.seed,
                                monitor=args.monitor)


# -- subcommands -------------------------------------------------------------

def cmd_ingest(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    calib = _calibration(args)
    entries = []
    for e in imu.read_manifest(_manifest(args)):
        s = imu.clean_session(imu.parse_session(e.path, e.participant_id, e.speed_mph, args.rate),
                              calib, args.trim)
        imu.check_ranges(s)
        path = out / imu.session_filename(s.participant_id, s.speed_mph)
        imu.write_session(s, path)
        entries.append(imu.ManifestEntry(path, s.speed_mph, s.participant_id))
    imu.write_manifest(entries, out / "manifest.csv")
    _emit(args, {"sessions": len(entries), "manifest": str(out / "manifest.csv")})
    return 0


def cmd_segment(args) -> int:
    _, ds = _dataset(args)
    windowing.save_windows(ds, args.out)
    _emit(args, {"shape": list(ds.data.shape), "mode": args.mode, "out": args.out})
    return 0


def cmd_stepfreq(args) -> int:
    s = imu.parse_session(args.input, "-", 1.0, args.rate)
    est = spectral.step_frequency(s.accel, args.rate, tuple(args.band), args.harmonic)
    _emit(args, est.to_dict())
    return 0


def cmd_synth(args) -> int:
    manifest = synth.generate_dataset(args.out, args.participants, args.speeds, args.seed,
                                      duration_s=args.duration, rate_hz=args.rate)
    _emit(args, {"manifest": str(manifest), "sessions": args.participants * len(args.speeds),
                 "seed": args.seed})
    return 0


def _config_block(args) -> dict:
    skip = {"func", "json"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def cmd_train(args) -> int:
    if not np.isclose(sum(args.split), 1.0):
        raise UsageError("--split fractions must sum to 1")
    _, ds = _dataset(args)
    out = Path(args.out)
    epoch_log = Path(args.epoch_log or f"{out}.epochs.jsonl")
    with epoch_log.open("w") as log:
        model, history, report, parts = pipeline.run_split(
            ds, _arch(args), _train_config(args),
            evaluation.SplitSpec(tuple(args.split), args.seed),
            on_epoch=lambda r: log.write(r.to_json() + "\n"), pred_mean_r2=args.paper_r2)
    speednet.save_model(model, out)
    best = min(history, key=lambda r: r.val_mae)
    payload = {"command": "train", "seed": args.seed, "model": str(out), "epoch_log": str(epoch_log),
               "epochs": len(history), "best_epoch": best.epoch, "best_val_mae": best.val_mae,
               "sizes": {"train": len(parts[0]), "test": len(parts[1]), "evaluation": len(parts[2])},
               "evaluation": report.to_dict(), "config": _config_block(args)}
    Path(args.report or f"{out}.report.json").write_text(json.dumps(payload, indent=1))
    if args.scatter:
        evaluation.scatter_export(report, args.scatter)
    _emit(args, payload)
    return 0


def cmd_eval(args) -> int:
    model = speednet.load_model(args.model)
    args.frame = model.arch.frame_size
    _, ds = _dataset(args)
    report = pipeline.evaluate_model(model, ds, pred_mean_r2=args.paper_r2)
    if args.scatter:
        evaluation.scatter_export(report, args.scatter)
    _emit(args, {"command": "eval", "model": args.model, "evaluation": report.to_dict(),
                 "config": _config_block(args)})
    return 0


def cmd_lopo(args) -> int:
    _, ds = _dataset(args)
    trainer = pipeline.cnn_trainer(_arch(args), _train_config(args))
    result = evaluation.leave_one_participant_out(
        ds, trainer, seed=args.seed, pooled=args.pooled,
        on_fold=lambda pid, r: print(f"fold {pid}: mape={r.mape:.3f}", file=sys.stderr))
    if args.scatter:
        evaluation.scatter_export(result.pairs, args.scatter)
    _emit(args, {"command": "lopo", "seed": args.seed, **result.to_dict(),
                 "config": _config_block(args)})
    return 0


def cmd_search(args) -> int:
    _, ds = _dataset(args)
    tr, te, ev = evaluation.split_70_15_15(ds, evaluation.SplitSpec(seed=args.seed))
    space = speednet.SearchSpace(dropout=args.dropout, frame_size=args.frame)
    budget = replace(_train_config(args), max_epochs=args.budget_epochs, patience=args.budget_patience)
    result = speednet.random_search(
        space, tr, te, k=args.k, seed=args.seed, budget=budget,
        on_candidate=lambda i, a, s: print(f"candidate {i}: {a.to_dict()} val_mae={s:.4f}",
                                           file=sys.stderr))
    payload = {"command": "search", "seed": args.seed, **result.to_dict()}
    if args.out:
        # winner retrained at the full budget
        model, history = pipeline.train_model(tr, te, result.best_arch, _train_config(args),
                                              check_ranges=False)
        speednet.save_model(model, args.out)
        payload["model"] = args.out
        payload["evaluation"] = pipeline.evaluate_model(model, ev).to_dict()
    _emit(args, payload)
    return 0


def cmd_predict(args) -> int:
    model = speednet.load_model(args.model)
    path = Path(args.input)
    if path.read_bytes()[:4] == windowing.MAGIC:
        windows = windowing.load_windows(path).data
    else:
        s = imu.trim_session(imu.parse_session(path, "-", 1.0, args.rate), args.trim)
        windows = windowing.segment(s.data, model.arch.frame_size, args.overlap)
    preds = speednet.predict(model, windows)
    print(json.dumps({"windows": preds.tolist(), "mean_mph": float(preds.mean())}))
    return 0


# -- parser ------------------------------------------------------------------

def _add_data_opts(p, frame=True):
    p.add_argument("--manifest", required=True)
    p.add_argument("--trim", type=float, default=2.5, help="seconds cut from each end (0 for pre-trimmed data)")
    p.add_argument("--calibration", help="JSON with accel/gyro offset and matrix")
    p.add_argument("--rate", type=float, default=imu.DEFAULT_RATE_HZ)
    if frame:
        p.add_argument("--frame", type=int, default=windowing.FRAME_SIZE)
    p.add_argument("--overlap", type=float, default=windowing.OVERLAP)
    p.add_argument("--mode", choices=("per-session", "concatenated"), default="per-session")


def _add_train_opts(p):
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--conv", type=int, nargs="+", default=[27, 45], help="filters per conv layer")
    p.add_argument("--dense", type=int, nargs="+", default=[180, 30], help="neurons per dense layer")
    p.add_argument("--monitor", choices=("val", "train"), default="val")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaitspeed", description=__doc__.splitlines()[0])
    parser.add_argument("--json", action="store_true", help="machine-readable JSON output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse, calibrate and trim sessions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trim", type=float, default=2.5)
    p.add_argument("--calibration")
    p.add_argument("--rate", type=float, default=imu.DEFAULT_RATE_HZ)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("segment", help="window sessions into a GSW1 tensor file")
    _add_data_opts(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("stepfreq", help="FFT step-frequency estimate for one session CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--band", type=lambda s: _range_arg(s, 2), default=[0.5, 4.0])
    p.add_argument("--harmonic", type=float, default=2.0)
    p.add_argument("--rate", type=float, default=imu.DEFAULT_RATE_HZ)
    p.set_defaults(func=cmd_stepfreq)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--participants", type=int, default=15)
    p.add_argument("--speeds", type=_speeds, default=list(synth.DEFAULT_SPEEDS))
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--duration", type=float, default=45.0)
    p.add_argument("--rate", type=float, default=imu.DEFAULT_RATE_HZ)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="70/15/15 training run")
    _add_data_opts(p)
    _add_train_opts(p)
    p.add_argument("--split", type=lambda s: _range_arg(s, 3), default=[0.7, 0.15, 0.15])
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--epoch-log")
    p.add_argument("--report")
    p.add_argument("--scatter", help="true,predicted CSV for the evaluation subset")
    p.add_argument("--paper-r2", action="store_true", help="also report R^2 about the mean prediction")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on every window of a manifest")
    _add_data_opts(p, frame=False)
    p.add_argument("--model", required=True)
    p.add_argument("--scatter")
    p.add_argument("--paper-r2", action="store_true", help="also report R^2 about the mean prediction")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("lopo", help="leave-one-participant-out cross-validation")
    _add_data_opts(p)
    _add_train_opts(p)
    p.add_argument("--pooled", action="store_true", help="also report metrics over pooled predictions")
    p.add_argument("--scatter")
    p.set_defaults(func=cmd_lopo)

    p = sub.add_parser("search", help="randomised architecture search")
    _add_data_opts(p)
    _add_train_opts(p)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--budget-epochs", type=int, default=100)
    p.add_argument("--budget-patience", type=int, default=5)
    p.add_argument("--out", help="retrain the winner at full budget and save it here")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("predict", help="per-window and session speed from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="session CSV or GSW1 window file")
    p.add_argument("--trim", type=float, default=0.0)
    p.add_argument("--overlap", type=float, default=windowing.OVERLAP)
    p.add_argument("--rate", type=float, default=imu.DEFAULT_RATE_HZ)
    p.set_defaults(func=cmd_predict)
    return parser


def _thread_limit():
    from threadpoolctl import threadpool_limits

    return threadpool_limits(int(os.environ.get("GAITSPEED_THREADS", "1")))


def _fail(args, code: int, message: str) -> int:
    if getattr(args, "json", False):
        print(json.dumps({"error": message}), file=sys.stderr)
    else:
        print(f"error: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with ExitStack() as stack:
            stack.enter_context(_thread_limit())
            return args.func(args)
    except UsageError as exc:
        return _fail(args, 2, str(exc))
    except (ValueError, RuntimeError, OSError) as exc:
        return _fail(args, 1, " ".join(str(exc).split()))


if __name__ == "__main__":
    sys.exit(main())

"""Motion-intention decoder command line.

Exit codes: 0 success, 2 config error, 3 data/model error, 4 protocol error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .config import GRID_BANDS, GRID_WINDOWS, LOBES, ConfigError, load_config
from .dataset import DatasetError, detect_onsets, load_recording, save_recording, slice_epochs
from .modelfile import ModelFormatError, dump, load_model
from .online import ProtocolError, ndjson_line
from .synth import SynthParams, generate_session

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_PROTOCOL = 0, 2, 3, 4


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            import yaml

            out[key.strip()] = yaml.safe_load(value)
        except Exception as exc:
            raise ConfigError(f"cannot parse --set {item!r}: {exc}") from exc
    for key in ("seed", "split", "delta", "q", "train_stride", "eval_stride"):
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    return out


def _config(args):
    return load_config(args.config, _overrides(args))


def _emit(report: harness.EvalReport, args) -> None:
    text = report.to_json()
    if getattr(args, "report", None):
        Path(args.report).write_text(text + "\n")
    else:
        print(text)


def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _parse_bands(text: str) -> list[tuple[float, float]]:
    bands = []
    for part in text.split(","):
        lo, _, hi = part.strip().partition("-")
        if not hi:
            raise ConfigError(f"band must look like LOW-HIGH, got {part!r}")
        bands.append((float(lo), float(hi)))
    return bands


# --- subcommands ----------------------------------------------------------


def run_train(args) -> int:
    cfg = _config(args)
    if args.feature:
        cfg = cfg.replace(feature=args.feature)
    _emit(harness.cmd_train(cfg, args.recording, args.model), args)
    return EXIT_OK


def run_grid(args) -> int:
    cfg = _config(args)
    windows = _parse_floats(args.windows) if args.windows else GRID_WINDOWS
    bands = _parse_bands(args.bands) if args.bands else GRID_BANDS
    report = harness.cmd_grid(cfg, args.recording, windows, bands, csv_out=args.csv)
    _emit(report, args)
    return EXIT_OK


def run_ablate(args) -> int:
    cfg = _config(args)
    if args.groups:
        names = [g.strip() for g in args.groups.split(",")]
        unknown = [g for g in names if g not in LOBES and g != "all"]
        if unknown:
            raise ConfigError(f"unknown channel groups: {unknown}")
        subsets = {g: (None if g == "all" else LOBES[g]) for g in names}
    else:
        subsets = dict(LOBES)
    _emit(harness.cmd_ablate(cfg, args.recording, subsets), args)
    return EXIT_OK


def run_replay(args) -> int:
    out = open(args.events, "w") if args.events and args.events != "-" else sys.stdout
    try:
        on_event = (lambda p, c: out.write(ndjson_line(p, c) + "\n")) if args.events else None
        report = harness.cmd_replay(args.model, args.source, args.delta, args.q, on_event, realtime=args.realtime)
    finally:
        if out is not sys.stdout:
            out.close()
    if args.events == "-":
        if args.report:
            Path(args.report).write_text(report.to_json() + "\n")
        else:
            print(report.to_json(), file=sys.stderr)
    else:
        _emit(report, args)
    return EXIT_OK


def run_curve(args) -> int:
    curve = harness.cmd_curve(args.model, args.recording, args.out, args.window, args.exclude_train)
    if args.out is None:
        print("t,mean_prob,n")
        for t, m, n in curve:
            print(f"{t!r},{m!r},{n}")
    return EXIT_OK


def run_synth(args) -> int:
    params = SynthParams(n_trials=args.trials, seed=args.seed, signal_group=args.group, lead_s=args.lead)
    save_recording(generate_session(params), args.out)
    return EXIT_OK


def run_inspect(args) -> int:
    rec = load_recording(args.recording)
    cfg = _config(args)
    info = {
        "rate": rec.rate,
        "samples": int(rec.eeg.shape[0]),
        "duration_s": rec.duration,
        "channels": rec.channel_names,
        "cues": len(rec.cues),
        "mocap_samples": int(len(rec.mocap_times)),
    }
    if rec.has_mocap:
        intervals = detect_onsets(rec, cfg.speed_threshold, cfg.hold, cfg.target_rate)
        epochs = slice_epochs(rec, intervals, cfg.target_rate, cfg.pre_onset)
        info["motion_epochs"] = {lab: sum(e.label == lab for e in epochs) for lab in ("left", "right")}
        info["epochs_dropped"] = {"mismatched": epochs.mismatched, "unmatched": epochs.unmatched}
    print(json.dumps(info, indent=2))
    return EXIT_OK


def run_dump(args) -> int:
    print(dump(load_model(args.model)))
    return EXIT_OK


def run_serve(args) -> int:
    rec = load_recording(args.recording)
    channels = load_model(args.model).channel_names if args.model else None
    harness.serve(rec, args.port, args.rate, args.loop, channels, host=args.host,
                  ready=lambda port: print(f"serving on {args.host}:{port}", file=sys.stderr, flush=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riemintent", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="YAML pipeline config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--split", type=float)
        sp.add_argument("--train-stride", dest="train_stride", type=int)
        sp.add_argument("--eval-stride", dest="eval_stride", type=int)
        sp.add_argument("--report", help="write the JSON report here instead of stdout")
        return sp

    sp = with_config(sub.add_parser("train", help="fit and evaluate a decoder"))
    sp.add_argument("recording")
    sp.add_argument("--model", "-o", help="where to write the model file")
    sp.add_argument("--feature", choices=["tangent", "covariance", "raw"])
    sp.set_defaults(func=run_train)

    sp = with_config(sub.add_parser("grid", help="window x band accuracy grid"))
    sp.add_argument("recording")
    sp.add_argument("--csv", help="write the grid table here")
    sp.add_argument("--windows", help="comma-separated window lengths in seconds")
    sp.add_argument("--bands", help="comma-separated LOW-HIGH bands in Hz")
    sp.set_defaults(func=run_grid)

    sp = with_config(sub.add_parser("ablate", help="per channel-group accuracy"))
    sp.add_argument("recording")
    sp.add_argument("--groups", help=f"comma-separated subset of {sorted(LOBES)} or 'all'")
    sp.set_defaults(func=run_ablate)

    sp = sub.add_parser("replay", help="stream a recording or socket through the online decoder")
    sp.add_argument("model")
    sp.add_argument("source", help="recording path or host:port of an EEGF server")
    sp.add_argument("--delta", type=float)
    sp.add_argument("--q", type=int)
    sp.add_argument("--events", help="NDJSON event output ('-' for stdout)")
    sp.add_argument("--realtime", action="store_true", help="pace input at the pipeline rate")
    sp.add_argument("--report")
    sp.set_defaults(func=run_replay)

    sp = sub.add_parser("curve", help="onset-aligned confidence curve")
    sp.add_argument("model")
    sp.add_argument("recording")
    sp.add_argument("--out", help="CSV path (stdout if omitted)")
    sp.add_argument("--window", type=float, default=2.0)
    sp.add_argument("--exclude-train", action="store_true", help="skip the model's training trials")
    sp.set_defaults(func=run_curve)

    ds = sub.add_parser("dataset", help="recording utilities").add_subparsers(dest="dataset_command", required=True)
    sp = ds.add_parser("synth", help="generate a synthetic session")
    sp.add_argument("--trials", type=int, default=60)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--group", default="parietal", help="channel group carrying the class signal")
    sp.add_argument("--lead", type=float, default=1.0, help="seconds of class signal before onset")
    sp.add_argument("--out", "-o", required=True)
    sp.set_defaults(func=run_synth)
    sp = ds.add_parser("inspect", help="summarize a recording")
    sp.add_argument("recording")
    sp.add_argument("--config")
    sp.add_argument("--set", action="append")
    sp.set_defaults(func=run_inspect)

    md = sub.add_parser("model", help="model file utilities").add_subparsers(dest="model_command", required=True)
    sp = md.add_parser("dump", help="print a model as JSON")
    sp.add_argument("model")
    sp.set_defaults(func=run_dump)

    sp = sub.add_parser("serve", help="EEGF replay server")
    sp.add_argument("recording")
    sp.add_argument("--port", type=int, default=5005)
    sp.add_argument("--rate", type=float, default=160.0, help="output rate in Hz (0 = as fast as possible)")
    sp.add_argument("--loop", action="store_true")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--model", help="send only this model's channels, in its order")
    sp.set_defaults(func=run_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (DatasetError, ModelFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

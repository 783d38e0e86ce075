"""Training, evaluation and replay drivers behind the command line.

Every driver returns an :class:`EvalReport` that embeds the resolved config,
so a saved report is enough to rerun the experiment.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import socket
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dsp, svm
from .config import GRID_BANDS, GRID_WINDOWS, LOBES, PipelineConfig
from .dataset import (
    DatasetError,
    EpochList,
    LabeledWindows,
    Recording,
    build_training_set,
    condition,
    detect_onsets,
    featurize,
    label_windows,
    load_recording,
    slice_epochs,
    stratified_split,
)
from .dsp import FilterSpec
from .modelfile import Decoder, load_model, save_model
from .online import (
    ABSTAIN,
    FrameReader,
    ProtocolError,
    aggregate_onset_aligned,
    encode_frame,
    encode_header,
    event_dict,
    new_state,
    push_sample,
    run_stream,
    run_threaded,
)
from .svm import LEFT, RIGHT

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    """Accuracy in percent; confusion rows are true left/right, columns predicted left/right."""

    accuracy: float
    confusion: list
    n_windows: int
    config: dict
    cells: list = field(default_factory=list)
    runtime: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def confusion_matrix(true, pred) -> np.ndarray:
    true = np.asarray(true)
    pred = np.asarray(pred)
    codes = (LEFT, RIGHT)
    return np.array([[int(np.sum((true == a) & (pred == b))) for b in codes] for a in codes])


def accuracy_of(conf: np.ndarray) -> float:
    total = int(conf.sum())
    return 100.0 * float(np.trace(conf)) / total if total else float("nan")


# --- sessions -------------------------------------------------------------


class Session:
    """A recording with its epochs and trial split resolved once.

    Resampled EEG is cached per channel subset so grid cells only redo the
    filtering that depends on the band.
    """

    def __init__(self, recording: Recording, config: PipelineConfig):
        self.recording = recording
        self.config = config
        intervals = detect_onsets(recording, config.speed_threshold, config.hold, config.target_rate)
        self.epochs: EpochList = slice_epochs(recording, intervals, config.target_rate, config.pre_onset)
        motion = self.epochs.motion
        if not motion:
            raise DatasetError("no motion epochs found (only rest)")
        if {e.label for e in motion} != {"left", "right"}:
            raise DatasetError("both left and right trials are required")
        self.train_trials, self.test_trials = stratified_split(
            self.epochs, config.split, config.seed, config.split_mode
        )
        if not len(self.train_trials) or not len(self.test_trials):
            raise DatasetError(
                f"split {config.split} of {len(motion)} trials leaves an empty train or test half"
            )
        self._resampled: dict = {}

    @classmethod
    def load(cls, path, config: PipelineConfig) -> "Session":
        return cls(load_recording(path), config)

    def resampled(self, channels) -> dsp.SignalBlock:
        key = None if channels is None else tuple(channels)
        if key not in self._resampled:
            idx = self.recording.channel_indices(key)
            block = dsp.SignalBlock(self.recording.eeg[:, idx], self.recording.rate)
            self._resampled[key] = dsp.resample(block, self.config.target_rate)
        return self._resampled[key]

    def channel_names(self, channels) -> list[str]:
        return [self.recording.channel_names[i] for i in self.recording.channel_indices(channels)]

    def test_windows(self, block: dsp.SignalBlock, config: PipelineConfig) -> LabeledWindows:
        w = label_windows(block, self.epochs, config.window_samples)
        return w.select(np.isin(w.trials, self.test_trials)).stride(config.eval_stride)


def window_decisions(model: svm.SvmModel, features: np.ndarray) -> np.ndarray:
    """Decision values computed exactly as the online path computes them."""
    return np.array([svm.decision_value(model, s) for s in features])


def fit_and_evaluate(
    session: Session, config: PipelineConfig, calibrate: bool = True
) -> tuple[Decoder, EvalReport]:
    t0 = time.perf_counter()
    block = condition(session.resampled(config.channels), config)
    ts = build_training_set(session.recording, session.epochs, config, trials=session.train_trials, block=block)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        model = svm.train(ts.features, ts.labels, C=config.C, gamma=config.gamma, tol=config.svm_tol)
        if calibrate:
            model = svm.calibrate(
                model, ts.features, ts.labels, folds=config.calibration_folds, groups=ts.trials, tol=config.svm_tol
            )
    t_train = time.perf_counter() - t0

    test = session.test_windows(block, config)
    if not len(test):
        raise DatasetError("no test windows: held-out trials are shorter than the window")
    f = window_decisions(model, featurize(ts.extractor, test))
    pred = np.where(f >= 0, RIGHT, LEFT)
    conf = confusion_matrix(test.labels, pred)
    decoder = Decoder(config, session.channel_names(config.channels), ts.extractor, model, session.train_trials.tolist())
    report = EvalReport(
        accuracy=accuracy_of(conf),
        confusion=conf.tolist(),
        n_windows=int(conf.sum()),
        config=config.to_dict(),
        runtime={"train_s": t_train, "total_s": time.perf_counter() - t0},
        extras={
            "n_train_windows": int(len(ts.labels)),
            "n_support": model.n_support,
            "smo_iterations": model.iterations,
            "smo_converged": model.converged,
            "mean_converged": ts.extractor.converged,
            "train_trials": session.train_trials.tolist(),
            "test_trials": session.test_trials.tolist(),
            "epochs_dropped": session.epochs.dropped,
            "warnings": [str(w.message) for w in caught],
        },
    )
    return decoder, report


# --- commands ------------------------------------------------------------


def cmd_train(config: PipelineConfig, recording_path, model_out=None, session: Session | None = None) -> EvalReport:
    session = session or Session.load(recording_path, config)
    decoder, report = fit_and_evaluate(session, config)
    if model_out is not None:
        save_model(decoder, model_out)
        report.extras["model"] = str(model_out)
    return report


def grid_cells(windows=GRID_WINDOWS, bands=GRID_BANDS) -> list[tuple[float, tuple[float, float]]]:
    return [(w, tuple(b)) for w in windows for b in bands]


def cmd_grid(
    config: PipelineConfig,
    recording_path,
    windows=GRID_WINDOWS,
    bands=GRID_BANDS,
    csv_out=None,
    session: Session | None = None,
) -> EvalReport:
    """Train and test every (window, band) cell on one shared split."""
    if not len(windows) or not len(bands):
        raise ValueError("grid needs at least one window and one band")
    session = session or Session.load(recording_path, config)
    cells = []
    for k, (w, (lo, hi)) in enumerate(grid_cells(windows, bands)):
        cell = {"index": k, "window_s": float(w), "band": [float(lo), float(hi)]}
        try:
            cfg = config.replace(
                window_seconds=float(w), band=FilterSpec(float(lo), float(hi), config.band.order, config.band.mode)
            )
            _, rep = fit_and_evaluate(session, cfg, calibrate=False)
            cell.update(status="ok", accuracy=rep.accuracy, n_windows=rep.n_windows, confusion=rep.confusion)
        except Exception as exc:  # a failed cell is data, not a crash
            log.warning("grid cell %s failed: %s", cell, exc)
            cell.update(status="failed", accuracy=None, error=f"{type(exc).__name__}: {exc}")
        cells.append(cell)

    ok = [c for c in cells if c["status"] == "ok"]
    best = max(ok, key=lambda c: c["accuracy"]) if ok else None
    conf = np.array(best["confusion"]) if best else np.zeros((2, 2), int)
    report = EvalReport(
        accuracy=best["accuracy"] if best else float("nan"),
        confusion=conf.tolist(),
        n_windows=int(conf.sum()),
        config=config.to_dict(),
        cells=cells,
        extras={"best": None if best is None else {"window_s": best["window_s"], "band": best["band"]},
                "failed": len(cells) - len(ok)},
    )
    if csv_out is not None:
        Path(csv_out).write_text(grid_csv(cells, windows, bands))
    return report


def _band_label(lo, hi) -> str:
    return f"{lo:g}-{hi:g}"


def grid_csv(cells, windows=GRID_WINDOWS, bands=GRID_BANDS) -> str:
    """Windows as rows, bands as columns; failed cells are written as ``failed``."""
    by_key = {(c["window_s"], tuple(c["band"])): c for c in cells}
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["window_s", *[_band_label(*b) for b in bands]])
    for win in windows:
        row = [f"{win:g}"]
        for lo, hi in bands:
            c = by_key.get((float(win), (float(lo), float(hi))))
            row.append("failed" if c is None or c["status"] != "ok" else f"{c['accuracy']:.2f}")
        w.writerow(row)
    return out.getvalue()


def cmd_ablate(
    config: PipelineConfig, recording_path, subsets: dict | None = None, session: Session | None = None
) -> EvalReport:
    """Retrain on each named channel group; ``cells`` holds one entry per group."""
    subsets = dict(LOBES if subsets is None else subsets)
    session = session or Session.load(recording_path, config)
    for names in subsets.values():
        session.recording.channel_indices(names)  # fail fast on unknown names
    cells = []
    for name, chans in subsets.items():
        cfg = config.replace(channels=None if chans is None else tuple(chans))
        _, rep = fit_and_evaluate(session, cfg, calibrate=False)
        n = len(session.channel_names(cfg.channels))
        cells.append({
            "group": name,
            "channels": cfg.to_dict()["channels"],
            "accuracy": rep.accuracy,
            "confusion": rep.confusion,
            "n_windows": rep.n_windows,
            "feature_length": n * (n + 1) // 2,
        })
    best = max(cells, key=lambda c: c["accuracy"])
    return EvalReport(
        accuracy=best["accuracy"],
        confusion=best["confusion"],
        n_windows=best["n_windows"],
        config=config.to_dict(),
        cells=cells,
        extras={"best_group": best["group"]},
    )


# --- replay ---------------------------------------------------------------


def pipeline_stream(recording: Recording, decoder: Decoder) -> np.ndarray:
    """Decoder channels of a recording, resampled to the pipeline rate."""
    idx = recording.channel_indices(decoder.channel_names)
    block = dsp.SignalBlock(recording.eeg[:, idx], recording.rate)
    return dsp.resample(block, decoder.config.target_rate).samples


def command_confusion(events, epochs, trials=None) -> tuple[np.ndarray, dict]:
    """First command inside each motion epoch against the epoch's label.

    Returns the 2x2 confusion of trials that received a command, plus
    counts of trials without one and of commands issued outside motion.
    """
    cmds = [(p.stream_index, c) for p, c in events if c is not None]
    motion = [e for e in epochs if e.is_motion and (trials is None or e.trial in set(trials))]
    conf = np.zeros((2, 2), int)
    missed = 0
    per_trial = {}
    inside = set()
    for ep in motion:
        hits = [(i, c) for i, c in cmds if ep.start <= i < ep.end]
        inside.update(i for i, _ in hits)
        per_trial[int(ep.trial)] = len(hits)
        if not hits:
            missed += 1
            continue
        row = 0 if ep.label == "left" else 1
        col = 0 if hits[0][1] == "left" else 1
        conf[row, col] += 1
    all_motion = [e for e in epochs if e.is_motion]
    outside = sum(1 for i, _ in cmds if not any(e.start <= i < e.end for e in all_motion))
    return conf, {"missed": missed, "outside_motion": outside, "commands": len(cmds), "per_trial": per_trial}


def replay_recording(decoder: Decoder, recording: Recording, delta=None, q=None, on_event=None, realtime=False):
    state = new_state(decoder, delta, q)
    rows = pipeline_stream(recording, decoder)
    if realtime:
        rows = _paced(rows, decoder.config.target_rate)
    return run_stream(state, rows, on_event)


def _paced(rows, rate: float):
    start = time.perf_counter()
    for i, row in enumerate(rows):
        delay = start + i / rate - time.perf_counter()
        if delay > 0:
            time.sleep(delay)
        yield row


def cmd_replay(
    model_path,
    source,
    delta: float | None = None,
    q: int | None = None,
    on_event=None,
    realtime: bool = False,
    decoder: Decoder | None = None,
) -> EvalReport:
    """Stream a recording (or a ``host:port`` EEGF socket) through the online decoder.

    With a recording, window accuracy is reported over the windows of
    trials the model was not trained on, which matches ``cmd_train``.
    """
    decoder = decoder or load_model(model_path)
    cfg = decoder.config
    if isinstance(source, Recording) or (isinstance(source, (str, Path)) and Path(source).exists()):
        rec = source if isinstance(source, Recording) else load_recording(source)
        events, stats = replay_recording(decoder, rec, delta, q, on_event, realtime)
        intervals = detect_onsets(rec, cfg.speed_threshold, cfg.hold, cfg.target_rate)
        epochs = slice_epochs(rec, intervals, cfg.target_rate, cfg.pre_onset)
    else:
        events, stats = _replay_socket(decoder, str(source), delta, q, on_event)
        epochs = EpochList()

    train = set(decoder.train_trials)
    test_trials = sorted({e.trial for e in epochs.motion if e.trial not in train})
    by_index = {p.stream_index: p for p, _ in events}
    truth, pred = [], []
    if epochs:
        windows = label_windows(
            dsp.SignalBlock(np.zeros((max(by_index, default=0) + 1, 1)), cfg.target_rate),
            epochs,
            cfg.window_samples,
        )
        windows = windows.select(np.isin(windows.trials, test_trials)).stride(cfg.eval_stride)
        for end, lab in zip(windows.end_index, windows.labels):
            p = by_index.get(int(end))
            if p is not None:
                truth.append(lab)
                pred.append(RIGHT if p.decision >= 0 else LEFT)
    conf = confusion_matrix(truth, pred)
    cmd_conf, cmd_extra = command_confusion(events, epochs, test_trials or None)
    return EvalReport(
        accuracy=accuracy_of(conf),
        confusion=conf.tolist(),
        n_windows=int(conf.sum()),
        config=cfg.to_dict() | {"delta": delta or cfg.delta, "q": q or cfg.q},
        runtime=stats.summary(),
        extras={
            "command_confusion": cmd_conf.tolist(),
            **cmd_extra,
            "abstain_fraction": float(np.mean([p.thresholded == ABSTAIN for p, _ in events])) if events else None,
            "test_trials": test_trials,
        },
    )


def _replay_socket(decoder: Decoder, address: str, delta, q, on_event):
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ProtocolError(f"expected host:port or an existing recording, got {address!r}")
    with socket.create_connection((host, int(port))) as sock, sock.makefile("rb") as fh:
        reader = FrameReader(fh)
        if reader.n_channels != len(decoder.channel_names):
            raise ProtocolError(
                f"stream has {reader.n_channels} channels, model expects {len(decoder.channel_names)}"
            )
        return run_threaded(new_state(decoder, delta, q), reader, on_event)


def cmd_curve(model_path, recording_path, csv_out=None, window: float = 2.0, exclude_train: bool = False,
              decoder: Decoder | None = None, recording: Recording | None = None):
    """Onset-aligned mean correct-class probability; returns ``(t, mean, n)`` rows."""
    decoder = decoder or load_model(model_path)
    rec = recording or load_recording(recording_path)
    cfg = decoder.config
    intervals = detect_onsets(rec, cfg.speed_threshold, cfg.hold, cfg.target_rate)
    epochs = slice_epochs(rec, intervals, cfg.target_rate, cfg.pre_onset)
    train = set(decoder.train_trials) if exclude_train else set()
    onsets = [(e.onset_index, e.label) for e in epochs.motion if e.trial not in train]
    if not onsets:
        raise DatasetError("no movement onsets found")
    state = new_state(decoder)
    preds = [p for p in (push_sample(state, row) for row in pipeline_stream(rec, decoder)) if p is not None]
    curve = aggregate_onset_aligned(preds, onsets, window, cfg.target_rate)
    if csv_out is not None:
        with open(csv_out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "mean_prob", "n"])
            w.writerows(curve)
    return curve


# --- replay server -------------------------------------------------------


def serve(recording: Recording, port: int, rate: float = 160.0, loop: bool = False, channels=None,
          host: str = "127.0.0.1", max_clients: int | None = None, ready=None) -> None:
    """Stream a recording as EEGF frames to each client that connects.

    The EEG is resampled to ``rate`` and sent at that pace. ``rate <= 0``
    resamples to 160 Hz and sends as fast as the socket accepts.
    """
    idx = recording.channel_indices(channels)
    target = rate if rate > 0 else 160.0
    rows = dsp.resample(dsp.SignalBlock(recording.eeg[:, idx], recording.rate), target).samples
    with socket.create_server((host, port)) as srv:
        if ready is not None:
            ready(srv.getsockname()[1])
        served = 0
        while max_clients is None or served < max_clients:
            conn, _ = srv.accept()
            served += 1
            with conn:
                try:
                    conn.sendall(encode_header(rows.shape[1]))
                    index = 0
                    while True:
                        for row in (_paced(rows, rate) if rate > 0 else rows):
                            conn.sendall(encode_frame(index, row))
                            index += 1
                        if not loop:
                            break
                except (BrokenPipeError, ConnectionResetError):
                    log.info("client disconnected")

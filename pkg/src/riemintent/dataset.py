"""Recordings, motion onsets, epochs and labeled feature sets.

Recording container layout (little-endian):

    line 1   JSON header + b"\\n"
             {"format": "riemintent-recording", "version": 1,
              "eeg_rate": 250.0, "mocap_rate": 100.0,
              "n_channels": n, "channel_names": [...],
              "n_samples": T, "n_mocap": Tm,
              "cues": [[time_s, "left" | "right"], ...], "meta": {...}}
    eeg      T x n float32, row-major
    mocap    Tm x 7 float32: timestamp (s, EEG clock), left xyz, right xyz (m)
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter1d

from . import dsp
from .config import PipelineConfig
from .features import FeatureExtractor, fit_reference
from .svm import LEFT, RIGHT

log = logging.getLogger(__name__)

FORMAT_NAME = "riemintent-recording"
FORMAT_VERSION = 1
ARMS = ("left", "right")
LABEL_CODES = {"left": LEFT, "right": RIGHT}


class DatasetError(ValueError):
    """Data problems (bad files, unusable recordings)."""


class RecordingFormatError(DatasetError):
    def __init__(self, section: str, message: str):
        super().__init__(f"[{section}] {message}")
        self.section = section


@dataclass
class Recording:
    eeg: np.ndarray
    rate: float
    channel_names: list[str]
    cues: list[tuple[float, str]] = field(default_factory=list)
    mocap_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mocap: np.ndarray = field(default_factory=lambda: np.zeros((0, 2, 3)))
    mocap_rate: float = 100.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.eeg = np.asarray(self.eeg, dtype=float)
        self.mocap_times = np.asarray(self.mocap_times, dtype=float).reshape(-1)
        self.mocap = np.asarray(self.mocap, dtype=float).reshape(-1, 2, 3)
        self.channel_names = list(self.channel_names)
        self.cues = [(float(t), str(lab)) for t, lab in self.cues]
        if self.eeg.ndim != 2 or self.eeg.shape[1] != len(self.channel_names):
            raise DatasetError("EEG column count does not match channel names")
        if len(self.mocap_times) != len(self.mocap):
            raise DatasetError("mocap timestamps and positions differ in length")
        if np.any(np.diff(self.mocap_times) <= 0):
            raise DatasetError("mocap timestamps are not strictly increasing")
        for _, lab in self.cues:
            if lab not in ARMS:
                raise DatasetError(f"cue label {lab!r} is not left/right")

    @property
    def n_channels(self) -> int:
        return self.eeg.shape[1]

    @property
    def duration(self) -> float:
        return self.eeg.shape[0] / self.rate

    @property
    def has_mocap(self) -> bool:
        return len(self.mocap_times) > 1

    def channel_indices(self, names) -> list[int]:
        if names is None:
            return list(range(self.n_channels))
        lookup = {n.lower(): i for i, n in enumerate(self.channel_names)}
        missing = [n for n in names if n.lower() not in lookup]
        if missing:
            raise DatasetError(f"unknown channel names: {missing}")
        return [lookup[n.lower()] for n in names]

    def mocap_on_clock(self, rate: float, n_samples: int | None = None) -> np.ndarray:
        """Arm positions linearly interpolated onto the ``rate`` sample clock."""
        if not self.has_mocap:
            raise DatasetError("recording has no motion capture")
        if n_samples is None:
            n_samples = int(math.ceil(self.duration * rate - 1e-9))
        t = np.arange(n_samples) / rate
        flat = self.mocap.reshape(len(self.mocap), 6)
        out = np.column_stack([np.interp(t, self.mocap_times, flat[:, k]) for k in range(6)])
        return out.reshape(n_samples, 2, 3)


def save_recording(rec: Recording, path: str | Path) -> None:
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "eeg_rate": rec.rate,
        "mocap_rate": rec.mocap_rate,
        "n_channels": rec.n_channels,
        "channel_names": rec.channel_names,
        "n_samples": int(rec.eeg.shape[0]),
        "n_mocap": int(len(rec.mocap_times)),
        "cues": [[t, lab] for t, lab in rec.cues],
        "meta": rec.meta,
    }
    mocap = np.column_stack([rec.mocap_times, rec.mocap.reshape(-1, 6)]) if len(rec.mocap_times) else np.zeros((0, 7))
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(rec.eeg, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(mocap, dtype="<f4").tobytes())


def load_recording(path: str | Path) -> Recording:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise RecordingFormatError("file", str(exc)) from exc
    nl = data.find(b"\n")
    if nl < 0:
        raise RecordingFormatError("header", "missing header line terminator")
    try:
        header = json.loads(data[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise RecordingFormatError("header", f"invalid JSON: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise RecordingFormatError("header", "not a recording container")
    if header.get("version") != FORMAT_VERSION:
        raise RecordingFormatError("header", f"unsupported version {header.get('version')}")
    try:
        names = list(header["channel_names"])
        n = int(header["n_channels"])
        t = int(header["n_samples"])
        tm = int(header["n_mocap"])
        rate = float(header["eeg_rate"])
        mocap_rate = float(header["mocap_rate"])
        cues = [(float(c[0]), str(c[1])) for c in header.get("cues", [])]
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise RecordingFormatError("header", f"missing or malformed field: {exc}") from exc
    if n != len(names):
        raise RecordingFormatError("header", f"n_channels={n} but {len(names)} channel names")

    off = nl + 1
    eeg_bytes = t * n * 4
    if len(data) < off + eeg_bytes:
        raise RecordingFormatError("eeg", f"expected {eeg_bytes} bytes, found {len(data) - off}")
    eeg = np.frombuffer(data, dtype="<f4", count=t * n, offset=off).reshape(t, n).astype(float)
    off += eeg_bytes
    mocap_bytes = tm * 7 * 4
    if len(data) < off + mocap_bytes:
        raise RecordingFormatError("mocap", f"expected {mocap_bytes} bytes, found {len(data) - off}")
    mocap = np.frombuffer(data, dtype="<f4", count=tm * 7, offset=off).reshape(tm, 7).astype(float)
    off += mocap_bytes
    if off != len(data):
        raise RecordingFormatError("trailer", f"{len(data) - off} unexpected trailing bytes")
    if tm and np.any(np.diff(mocap[:, 0]) <= 0):
        raise RecordingFormatError("mocap", "timestamps are not strictly increasing")
    try:
        return Recording(
            eeg=eeg,
            rate=rate,
            channel_names=names,
            cues=cues,
            mocap_times=mocap[:, 0],
            mocap=mocap[:, 1:].reshape(tm, 2, 3),
            mocap_rate=mocap_rate,
            meta=header.get("meta", {}),
        )
    except DatasetError as exc:
        raise RecordingFormatError("header", str(exc)) from exc


# --- motion onsets -------------------------------------------------------


@dataclass(frozen=True)
class MotionInterval:
    arm: str
    onset_time: float
    offset_time: float


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open ``[start, end)`` runs of True."""
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[0::2], edges[1::2]))


def arm_speed(recording: Recording, rate: float, smooth: float = 0.1) -> np.ndarray:
    """``(N, 2)`` hand speed in m/s on the ``rate`` clock, moving-average smoothed."""
    pos = recording.mocap_on_clock(rate)
    speed = np.zeros((len(pos), 2))
    speed[1:] = np.linalg.norm(np.diff(pos, axis=0), axis=2) * rate
    width = max(1, int(round(smooth * rate)))
    return uniform_filter1d(speed, size=width, axis=0, mode="nearest")


def detect_onsets(
    recording: Recording, speed_threshold: float = 0.05, hold: float = 0.1, rate: float = 160.0
) -> list[MotionInterval]:
    """Per-arm motion intervals from sustained threshold crossings of hand speed."""
    speed = arm_speed(recording, rate)
    hold_n = max(1, int(round(hold * rate)))
    out = []
    for a, arm in enumerate(ARMS):
        above = speed[:, a] > speed_threshold
        starts = [s for s, e in _runs(above) if e - s >= hold_n]
        quiet = [s for s, e in _runs(~above) if e - s >= hold_n]
        cursor = -1
        for s in starts:
            if s < cursor:
                continue
            offset = next((q for q in quiet if q > s), len(speed))
            out.append(MotionInterval(arm, s / rate, offset / rate))
            cursor = offset
    out.sort(key=lambda m: (m.onset_time, m.arm))
    return out


# --- epochs ---------------------------------------------------------------


@dataclass(frozen=True)
class Epoch:
    label: str
    start: int
    end: int
    onset_index: int | None = None
    trial: int | None = None

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"empty epoch [{self.start}, {self.end})")
        if self.label not in ("left", "right", "rest"):
            raise ValueError(f"bad epoch label {self.label!r}")

    @property
    def is_motion(self) -> bool:
        return self.label != "rest"


class EpochList(list):
    """List of epochs plus the counts of intervals that were discarded."""

    def __init__(self, epochs=(), mismatched: int = 0, unmatched: int = 0):
        super().__init__(epochs)
        self.mismatched = mismatched
        self.unmatched = unmatched

    @property
    def dropped(self) -> int:
        return self.mismatched + self.unmatched

    @property
    def motion(self) -> list[Epoch]:
        return [e for e in self if e.is_motion]


def slice_epochs(
    recording: Recording, intervals, rate: float = 160.0, pre_onset: float = 1.0
) -> EpochList:
    """Cut motion epochs ``[onset - pre_onset, offset)`` and the rest between them.

    Each interval takes the latest cue at or before its onset. A cue labels
    at most one interval; later intervals against a used cue (e.g. the arm
    returning home) are skipped. A cue/arm disagreement drops the epoch.
    """
    cues = sorted(recording.cues)
    cue_times = np.array([c[0] for c in cues])
    used: set[int] = set()
    epochs: list[Epoch] = []
    mismatched = unmatched = 0
    prev_end = 0
    trial = 0
    for iv in sorted(intervals, key=lambda m: m.onset_time):
        k = int(np.searchsorted(cue_times, iv.onset_time, side="right")) - 1
        if k < 0 or k in used:
            unmatched += 1
            continue
        used.add(k)
        if cues[k][1] != iv.arm:
            log.warning("cue %r at %.2fs but %s arm moved; epoch dropped", cues[k][1], cues[k][0], iv.arm)
            mismatched += 1
            continue
        onset = int(round(iv.onset_time * rate))
        start = max(int(round((iv.onset_time - pre_onset) * rate)), prev_end)
        end = int(round(iv.offset_time * rate))
        if end <= start:
            unmatched += 1
            continue
        if start > prev_end:
            epochs.append(Epoch("rest", prev_end, start))
        epochs.append(Epoch(iv.arm, start, end, onset, trial))
        trial += 1
        prev_end = end
    return EpochList(epochs, mismatched, unmatched)


# --- preprocessing and labeled windows -----------------------------------


def preprocess(recording: Recording, config: PipelineConfig) -> dsp.SignalBlock:
    """Batch chain: channel selection, resample, filter and difference."""
    if not math.isclose(recording.rate, config.source_rate):
        log.info("recording rate %.6g Hz overrides configured source rate", recording.rate)
    idx = recording.channel_indices(config.channels)
    block = dsp.SignalBlock(recording.eeg[:, idx], recording.rate)
    block = dsp.resample(block, config.target_rate)
    return condition(block, config)


def condition(block: dsp.SignalBlock, config: PipelineConfig) -> dsp.SignalBlock:
    state = dsp.init_filter_state(config.band, block.rate, block.n_channels)
    mode = config.band.mode
    if config.differentiate and config.order == "diff-filter":
        block = dsp.differentiate(block)
        block, _ = dsp.filter_block(state, block, mode)
    else:
        block, _ = dsp.filter_block(state, block, mode)
        if config.differentiate:
            block = dsp.differentiate(block)
    if block is None:
        raise DatasetError("recording too short to preprocess")
    return block


@dataclass
class LabeledWindows:
    """Preprocessed stream plus the windows that end inside motion epochs."""

    block: dsp.SignalBlock
    width: int
    end_index: np.ndarray
    labels: np.ndarray
    trials: np.ndarray

    def window(self, end: int) -> np.ndarray:
        lo = end - self.block.start_index - self.width + 1
        return self.block.samples[lo : lo + self.width]

    def select(self, mask) -> "LabeledWindows":
        mask = np.asarray(mask)
        return LabeledWindows(self.block, self.width, self.end_index[mask], self.labels[mask], self.trials[mask])

    def stride(self, step: int) -> "LabeledWindows":
        """Keep every ``step``-th window within each trial."""
        if step <= 1:
            return self
        keep = np.zeros(len(self.end_index), bool)
        for t in np.unique(self.trials):
            keep[np.flatnonzero(self.trials == t)[::step]] = True
        return self.select(keep)

    def __len__(self) -> int:
        return len(self.end_index)


def label_windows(block: dsp.SignalBlock, epochs, width: int) -> LabeledWindows:
    """Windows assigned to an epoch by their last sample."""
    first = block.start_index + width - 1
    last = block.start_index + block.n_samples - 1
    ends, labels, trials = [], [], []
    for ep in epochs:
        if not ep.is_motion:
            continue
        lo, hi = max(ep.start, first), min(ep.end - 1, last)
        if hi < lo:
            continue
        e = np.arange(lo, hi + 1)
        ends.append(e)
        labels.append(np.full(len(e), LABEL_CODES[ep.label]))
        trials.append(np.full(len(e), ep.trial))
    if not ends:
        return LabeledWindows(block, width, np.zeros(0, int), np.zeros(0, int), np.zeros(0, int))
    return LabeledWindows(block, width, np.concatenate(ends), np.concatenate(labels), np.concatenate(trials))


def split_trials(trials, fraction: float, seed: int = 0, mode: str = "shuffle") -> tuple[np.ndarray, np.ndarray]:
    """Split trial ids into (train, test), balanced per class when labels allow."""
    ids = np.unique(np.asarray(trials))
    if mode == "chronological":
        order = ids
    else:
        order = np.random.default_rng(seed).permutation(ids)
    n_train = int(round(fraction * len(ids)))
    n_train = min(max(n_train, 1), len(ids) - 1) if len(ids) > 1 else len(ids)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def stratified_split(epochs, fraction: float, seed: int = 0, mode: str = "shuffle"):
    """Trial split that keeps the class balance of the motion epochs."""
    train, test = [], []
    for k, lab in enumerate(ARMS):
        ids = [e.trial for e in epochs if e.is_motion and e.label == lab]
        if not ids:
            continue
        tr, te = split_trials(ids, fraction, seed + k, mode)
        train.extend(tr.tolist())
        test.extend(te.tolist())
    return np.array(sorted(train), int), np.array(sorted(test), int)


def covariances(extractor_like, windows: LabeledWindows) -> np.ndarray:
    return np.array([extractor_like.covariance(windows.window(e)) for e in windows.end_index])


@dataclass
class TrainingSet:
    features: np.ndarray
    labels: np.ndarray
    trials: np.ndarray
    end_index: np.ndarray
    extractor: FeatureExtractor


def make_extractor(config: PipelineConfig, n_channels: int, train_windows: LabeledWindows) -> FeatureExtractor:
    """Extractor for ``config.feature``; the tangent kind fits its mean here."""
    proto = FeatureExtractor(
        n_channels=n_channels,
        kind="covariance" if config.feature == "tangent" else config.feature,
        epsilon=config.epsilon,
        denominator=config.denominator,
        weighted=config.weighted,
    )
    if config.feature != "tangent":
        return proto
    covs = covariances(proto, train_windows)
    return fit_reference(covs, epsilon=config.epsilon, denominator=config.denominator, weighted=config.weighted)


def featurize(extractor: FeatureExtractor, windows: LabeledWindows) -> np.ndarray:
    if not len(windows):
        return np.zeros((0, extractor.feature_length(windows.width)))
    return np.array([extractor.extract(windows.window(e)) for e in windows.end_index])


def build_training_set(
    recording: Recording,
    epochs,
    config: PipelineConfig,
    trials=None,
    extractor: FeatureExtractor | None = None,
    block: dsp.SignalBlock | None = None,
) -> TrainingSet:
    """Features and labels for windows ending in the chosen motion epochs.

    ``trials`` restricts the set (e.g. to the training half); the reference
    mean is fitted on exactly these windows unless ``extractor`` is given.
    """
    block = preprocess(recording, config) if block is None else block
    windows = label_windows(block, epochs, config.window_samples)
    if trials is not None:
        windows = windows.select(np.isin(windows.trials, np.asarray(trials)))
    windows = windows.stride(config.train_stride)
    if not len(windows):
        raise DatasetError("no usable windows: no left/right motion epochs long enough")
    if extractor is None:
        extractor = make_extractor(config, block.n_channels, windows)
    feats = featurize(extractor, windows)
    return TrainingSet(feats, windows.labels, windows.trials, windows.end_index, extractor)

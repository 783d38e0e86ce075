"""Sample-by-sample decoding.

Samples arrive at the pipeline rate. Each one is filtered and differenced
with the same arithmetic as the batch path, appended to a ring of the last
W preprocessed samples, and once the ring is full every new sample yields a
scored prediction. Confident predictions go into the buffer queue whose
majority becomes the robot command.

Wire format for streamed input (little-endian)::

    b"EEGF" | u16 version | u16 channel count n
    repeated frames: u32 sample index | n x f32
"""
from __future__ import annotations

import io
import json
import queue
import struct
import threading
import time
import warnings
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np
from scipy import signal

from . import dsp, svm
from .modelfile import Decoder
from .svm import ClassScore

ABSTAIN = "abstain"
DEFAULT_DELTA = 0.65
DEFAULT_Q = 160

FRAME_MAGIC = b"EEGF"
FRAME_VERSION = 1


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class ScoredPrediction:
    stream_index: int
    score: ClassScore
    thresholded: str
    decision: float


def threshold_score(score: ClassScore, delta: float) -> str:
    if score.p_left >= delta:
        return "left"
    if score.p_right >= delta:
        return "right"
    return ABSTAIN


class _Ring:
    """Last ``width`` rows, readable as one contiguous block.

    Rows are written twice, ``width`` apart, so the newest window is always
    the slice ``buf[pos : pos + width]``.
    """

    def __init__(self, width: int, n: int):
        self.width = width
        self.buf = np.zeros((2 * width, n))
        self.pos = 0
        self.count = 0

    def append(self, row: np.ndarray) -> None:
        self.buf[self.pos] = row
        self.buf[self.pos + self.width] = row
        self.pos = (self.pos + 1) % self.width
        self.count = min(self.count + 1, self.width)

    @property
    def full(self) -> bool:
        return self.count == self.width

    def window(self) -> np.ndarray:
        return self.buf[self.pos : self.pos + self.width]

    def __len__(self) -> int:
        return self.count


@dataclass
class PredictorState:
    decoder: Decoder
    delta: float = DEFAULT_DELTA
    q: int = DEFAULT_Q
    store_abstain: bool = False
    rearm_after: int | None = None
    filter_state: dsp.FilterState = field(init=False)
    prev_sample: np.ndarray | None = field(init=False, default=None)
    ring: _Ring = field(init=False)
    bq: deque = field(init=False)
    index: int = field(init=False, default=-1)
    last_command: str | None = field(init=False, default=None)
    abstain_run: int = field(init=False, default=0)
    last_feature: np.ndarray | None = field(init=False, default=None)

    def __post_init__(self):
        if not 0.5 < self.delta <= 1.0:
            raise ValueError("delta must lie in (0.5, 1]")
        if self.q < 1:
            raise ValueError("q must be positive")
        cfg = self.decoder.config
        if cfg.band.mode != "causal":
            warnings.warn("model was trained with zero-phase filtering; streaming uses causal", stacklevel=2)
        n = len(self.decoder.channel_names)
        self.filter_state = dsp.init_filter_state(cfg.band, cfg.target_rate, n)
        self.ring = _Ring(cfg.window_samples, n)
        self.bq = deque(maxlen=self.q)
        if self.rearm_after is None:
            self.rearm_after = self.q

    @property
    def n_channels(self) -> int:
        return len(self.decoder.channel_names)

    def reset(self) -> None:
        self.__post_init__()
        self.prev_sample = None
        self.index = -1
        self.last_command = None
        self.abstain_run = 0
        self.last_feature = None


def new_state(decoder: Decoder, delta: float | None = None, q: int | None = None, **kw) -> PredictorState:
    cfg = decoder.config
    return PredictorState(decoder, cfg.delta if delta is None else delta, cfg.q if q is None else q, **kw)


def _filter_row(state: PredictorState, row: np.ndarray) -> np.ndarray:
    y, state.filter_state.zi = signal.sosfilt(
        state.filter_state.sos, row[None, :], axis=0, zi=state.filter_state.zi
    )
    return y[0]


def _condition(state: PredictorState, row: np.ndarray) -> np.ndarray | None:
    cfg = state.decoder.config
    if not cfg.differentiate:
        return _filter_row(state, row)
    if cfg.order == "diff-filter":
        prev, state.prev_sample = state.prev_sample, row
        return None if prev is None else _filter_row(state, row - prev)
    y = _filter_row(state, row)
    prev, state.prev_sample = state.prev_sample, y
    return None if prev is None else y - prev


def push_sample(state: PredictorState, sample_row) -> ScoredPrediction | None:
    """Ingest one sample; returns a prediction once the window is full."""
    row = np.asarray(sample_row, dtype=float).reshape(-1)
    if row.shape[0] != state.n_channels:
        raise ValueError(f"expected {state.n_channels} channels, got {row.shape[0]}")
    state.index += 1
    x = _condition(state, row)
    if x is None:
        return None
    state.ring.append(x)
    if not state.ring.full:
        return None
    dec = state.decoder
    feat = dec.extractor.extract(state.ring.window())
    state.last_feature = feat
    f = svm.decision_value(dec.model, feat)
    score = svm.score_from_decision(dec.model, f)
    label = threshold_score(score, state.delta)
    if label != ABSTAIN or state.store_abstain:
        state.bq.append(label)
    return ScoredPrediction(state.index, score, label, f)


def vote(entries: Iterable[str], q: int) -> str | None:
    entries = list(entries)
    if len(entries) < q:
        return None
    counts = Counter(e for e in entries if e != ABSTAIN)
    left, right = counts.get("left", 0), counts.get("right", 0)
    if left == right:
        return None
    return "left" if left > right else "right"


def queue_vote(state: PredictorState) -> str | None:
    """Majority class of a full buffer queue; ties and underfull queues give None."""
    return vote(state.bq, state.q)


def step(state: PredictorState, sample_row) -> tuple[ScoredPrediction | None, str | None]:
    """``push_sample`` plus command gating.

    Commands are edge-triggered: the voted class is emitted when it differs
    from the last command. After ``rearm_after`` consecutive abstentions the
    queue and the last command are cleared, so the same class can fire again
    on the next movement.
    """
    pred = push_sample(state, sample_row)
    if pred is None:
        return None, None
    if pred.thresholded == ABSTAIN:
        state.abstain_run += 1
        if state.abstain_run == state.rearm_after:
            state.last_command = None
            state.bq.clear()
    else:
        state.abstain_run = 0
    cmd = queue_vote(state)
    if cmd is None or cmd == state.last_command:
        return pred, None
    state.last_command = cmd
    return pred, cmd


def event_dict(pred: ScoredPrediction, command: str | None) -> dict:
    return {
        "index": pred.stream_index,
        "p_left": pred.score.p_left,
        "p_right": pred.score.p_right,
        "thresholded": pred.thresholded,
        "command": command,
    }


def ndjson_line(pred: ScoredPrediction, command: str | None) -> str:
    return json.dumps(event_dict(pred, command))


# --- onset-aligned confidence --------------------------------------------


def aggregate_onset_aligned(predictions, onsets, window: float = 2.0, rate: float = 160.0):
    """Mean correct-class probability against time relative to movement onset.

    ``onsets`` holds ``(onset_index, label)`` pairs on the prediction clock.
    Each trial's trace is interpolated onto ``t = k / rate`` for
    ``|t| <= window`` (no extrapolation past its first/last prediction).
    Returns ``(t, mean, count)`` rows; ``mean`` is NaN where count is 0.
    """
    preds = sorted(predictions, key=lambda p: p.stream_index)
    idx = np.array([p.stream_index for p in preds], dtype=float)
    p_right = np.array([p.score.p_right for p in preds])
    k = np.arange(-int(round(window * rate)), int(round(window * rate)) + 1)
    total = np.zeros(len(k))
    count = np.zeros(len(k), int)
    for onset, label in onsets:
        if not len(idx):
            break
        at = onset + k
        covered = (at >= idx[0]) & (at <= idx[-1])
        trace = np.interp(at, idx, p_right)
        if label == "left":
            trace = 1.0 - trace
        total[covered] += trace[covered]
        count[covered] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return [(float(t), float(m), int(c)) for t, m, c in zip(k / rate, mean, count)]


def curve_value(curve, t: float) -> float:
    ts = np.array([row[0] for row in curve])
    return curve[int(np.argmin(np.abs(ts - t)))][1]


# --- framed stream protocol ----------------------------------------------


def encode_header(n_channels: int) -> bytes:
    return FRAME_MAGIC + struct.pack("<HH", FRAME_VERSION, n_channels)


def encode_frame(index: int, row) -> bytes:
    return struct.pack("<I", index) + np.asarray(row, dtype="<f4").tobytes()


def _read_exact(stream, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            break
        buf += chunk
    return bytes(buf)


class FrameReader:
    """Parses an EEGF byte stream from any object with ``read``."""

    def __init__(self, stream):
        self.stream = stream
        head = _read_exact(stream, 8)
        if len(head) < 8:
            raise ProtocolError("stream ended inside the header")
        if head[:4] != FRAME_MAGIC:
            raise ProtocolError(f"bad magic {head[:4]!r}")
        self.version, self.n_channels = struct.unpack("<HH", head[4:])
        if self.version != FRAME_VERSION:
            raise ProtocolError(f"unsupported protocol version {self.version}")
        if self.n_channels < 1:
            raise ProtocolError("channel count must be positive")
        self.frame_size = 4 + 4 * self.n_channels

    def __iter__(self) -> Iterator[tuple[int, np.ndarray]]:
        last = None
        while True:
            raw = _read_exact(self.stream, self.frame_size)
            if not raw:
                return
            if len(raw) < self.frame_size:
                raise ProtocolError("stream ended inside a frame")
            (index,) = struct.unpack_from("<I", raw)
            if last is not None and index <= last:
                raise ProtocolError(f"non-increasing sample index {index} after {last}")
            last = index
            yield index, np.frombuffer(raw, "<f4", offset=4).astype(float)


def encode_stream(samples: np.ndarray, start_index: int = 0) -> bytes:
    out = io.BytesIO()
    out.write(encode_header(samples.shape[1]))
    for i, row in enumerate(samples):
        out.write(encode_frame(start_index + i, row))
    return out.getvalue()


@dataclass
class StreamStats:
    samples: int = 0
    predictions: int = 0
    dropped: int = 0
    latencies: list = field(default_factory=list)

    def summary(self) -> dict:
        lat = np.asarray(self.latencies) * 1e3
        if not len(lat):
            return {"samples": self.samples, "predictions": self.predictions, "dropped": self.dropped}
        return {
            "samples": self.samples,
            "predictions": self.predictions,
            "dropped": self.dropped,
            "latency_mean_ms": float(lat.mean()),
            "latency_p50_ms": float(np.percentile(lat, 50)),
            "latency_p99_ms": float(np.percentile(lat, 99)),
            "latency_max_ms": float(lat.max()),
        }


def run_stream(state: PredictorState, rows: Iterable, on_event=None, stats: StreamStats | None = None):
    """Drive ``step`` over an iterable of sample rows in the calling thread."""
    stats = stats or StreamStats()
    events = []
    clock = time.perf_counter
    for row in rows:
        t0 = clock()
        pred, cmd = step(state, row)
        stats.latencies.append(clock() - t0)
        stats.samples += 1
        if pred is not None:
            stats.predictions += 1
            events.append((pred, cmd))
            if on_event is not None:
                on_event(pred, cmd)
    return events, stats


_DONE = object()


def run_threaded(state: PredictorState, frames: Iterable, on_event=None, maxsize: int = 1024):
    """Producer thread reads frames into a bounded FIFO; this thread decodes.

    ``put`` blocks when the FIFO is full, so nothing is dropped; the
    ``dropped`` counter stays in the stats for reporting.
    """
    fifo: queue.Queue = queue.Queue(maxsize=maxsize)
    errors: list[BaseException] = []

    def produce():
        try:
            for _, row in frames:
                fifo.put(row)
        except BaseException as exc:  # surfaced in the consumer
            errors.append(exc)
        finally:
            fifo.put(_DONE)

    producer = threading.Thread(target=produce, daemon=True)
    producer.start()

    def drain():
        while True:
            item = fifo.get()
            if item is _DONE:
                return
            yield item

    events, stats = run_stream(state, drain(), on_event)
    producer.join()
    if errors:
        raise errors[0]
    return events, stats

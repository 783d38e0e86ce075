"""Signal conditioning: rational resampling, Butterworth filtering,
first differences and sliding windows.

Blocks are ``(T, n)`` arrays (time on axis 0) wrapped in :class:`SignalBlock`
so the stream position travels with the samples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterator

import numpy as np
from scipy import signal

MAX_RATIO_TERM = 1000
KAISER_BETA = 8.6


@dataclass(frozen=True)
class SignalBlock:
    samples: np.ndarray
    rate: float
    start_index: int = 0

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"samples must be (T>=1, n>=1), got {x.shape}")
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        object.__setattr__(self, "samples", x)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class FilterSpec:
    """Band edges in Hz. ``low_hz == 0`` selects a low-pass filter.

    ``order`` is the order of the resulting transfer function, so a
    band-pass of order 4 comes from a second-order analog prototype.
    """

    low_hz: float
    high_hz: float
    order: int = 4
    mode: str = "causal"

    def __post_init__(self):
        if self.low_hz < 0 or not self.high_hz > self.low_hz:
            raise ValueError(f"invalid band {self.low_hz}-{self.high_hz} Hz")
        if self.order <= 0 or self.order % 2:
            raise ValueError("filter order must be a positive even integer")
        if self.mode not in ("causal", "zero-phase"):
            raise ValueError(f"unknown filter mode {self.mode!r}")

    @property
    def label(self) -> str:
        return f"{self.low_hz:g}-{self.high_hz:g}"


@dataclass
class FilterState:
    """Per-channel second-order-section delay lines for causal filtering."""

    sos: np.ndarray
    zi: np.ndarray = field(default=None)
    n_channels: int = 1

    def __post_init__(self):
        if self.zi is None:
            self.zi = np.zeros((self.sos.shape[0], 2, self.n_channels))

    def reset(self) -> None:
        self.zi = np.zeros_like(self.zi)

    def copy(self) -> "FilterState":
        return FilterState(self.sos, self.zi.copy(), self.n_channels)


def rational_ratio(source_rate: float, target_rate: float) -> tuple[int, int]:
    """``(up, down)`` with ``target/source == up/down`` and both <= 1000."""
    frac = Fraction(target_rate / source_rate).limit_denominator(MAX_RATIO_TERM)
    up, down = frac.numerator, frac.denominator
    if up > MAX_RATIO_TERM or up < 1 or not math.isclose(
        source_rate * up / down, target_rate, rel_tol=1e-12
    ):
        raise ValueError(
            f"cannot express {target_rate}/{source_rate} as p/q with p, q <= {MAX_RATIO_TERM}"
        )
    return up, down


def antialias_taps(up: int, down: int) -> np.ndarray:
    """Kaiser-windowed low-pass for polyphase resampling.

    Every polyphase branch is normalized to unit DC gain so constant signals
    pass through exactly. Taps are pre-divided by ``up`` because
    ``resample_poly`` multiplies by it.
    """
    m = max(up, down)
    h = signal.firwin(8 * m + 1, 1.0 / m, window=("kaiser", KAISER_BETA))
    for r in range(up):
        h[r::up] /= h[r::up].sum()
    return h / up


def resample(block: SignalBlock, target_rate: float) -> SignalBlock:
    """Polyphase rational resampling of every channel to ``target_rate``."""
    if not target_rate > 0:
        raise ValueError("target_rate must be positive")
    if target_rate == block.rate:
        return block
    up, down = rational_ratio(block.rate, target_rate)
    out = signal.resample_poly(
        block.samples, up, down, axis=0, window=antialias_taps(up, down), padtype="edge"
    )
    return SignalBlock(out, float(target_rate), int(math.ceil(block.start_index * up / down)))


def design_bandpass(spec: FilterSpec, rate: float) -> np.ndarray:
    """Butterworth coefficients in second-order sections."""
    nyq = rate / 2.0
    if spec.high_hz >= nyq:
        raise ValueError(f"high edge {spec.high_hz} Hz must be below Nyquist ({nyq} Hz)")
    if spec.low_hz == 0:
        return signal.butter(spec.order, spec.high_hz, btype="lowpass", fs=rate, output="sos")
    return signal.butter(
        spec.order // 2, [spec.low_hz, spec.high_hz], btype="bandpass", fs=rate, output="sos"
    )


def init_filter_state(spec: FilterSpec, rate: float, n_channels: int) -> FilterState:
    return FilterState(design_bandpass(spec, rate), n_channels=n_channels)


def filter_block(
    state: FilterState, block: SignalBlock, mode: str = "causal"
) -> tuple[SignalBlock, FilterState]:
    """Filter ``block``; causal mode continues from (and returns) ``state``.

    Zero-phase mode runs forward-backward over the whole block and hands the
    state back untouched.
    """
    if block.n_channels != state.n_channels:
        raise ValueError(
            f"channel mismatch: state has {state.n_channels}, block has {block.n_channels}"
        )
    if mode == "zero-phase":
        y = signal.sosfiltfilt(state.sos, block.samples, axis=0)
        return replace(block, samples=y), state
    if mode != "causal":
        raise ValueError(f"unknown filter mode {mode!r}")
    y, zf = signal.sosfilt(state.sos, block.samples, axis=0, zi=state.zi)
    return replace(block, samples=y), FilterState(state.sos, zf, state.n_channels)


def differentiate(block: SignalBlock, prev_sample=None) -> SignalBlock | None:
    """First difference along time.

    With ``prev_sample`` the output keeps length T; without it the first row
    is dropped and the output starts one index later. Returns ``None`` when
    nothing is left (a single sample and no predecessor).
    """
    x = block.samples
    if prev_sample is not None:
        prev = np.asarray(prev_sample, dtype=float).reshape(1, -1)
        if prev.shape[1] != block.n_channels:
            raise ValueError("prev_sample channel count mismatch")
        return replace(block, samples=np.diff(np.vstack([prev, x]), axis=0))
    if block.n_samples < 2:
        return None
    return SignalBlock(np.diff(x, axis=0), block.rate, block.start_index + 1)


@dataclass(frozen=True)
class MultichannelWindow:
    samples: np.ndarray
    end_index: int
    rate: float

    def __post_init__(self):
        if self.samples.ndim != 2 or self.samples.shape[0] < 2:
            raise ValueError("a window needs at least two samples")


def window_count(n_samples: int, width: int, step: int = 1) -> int:
    if n_samples < width:
        return 0
    return (n_samples - width) // step + 1


def sliding_windows(block: SignalBlock, width: int, step: int = 1) -> Iterator[MultichannelWindow]:
    """Overlapping ``width``-sample windows, tagged by their last sample."""
    if width < 2:
        raise ValueError("window width must be >= 2")
    if step < 1:
        raise ValueError("step must be >= 1")
    x = block.samples
    for k in range(window_count(block.n_samples, width, step)):
        lo = k * step
        yield MultichannelWindow(x[lo : lo + width], block.start_index + lo + width - 1, block.rate)


def seconds_to_samples(seconds: float, rate: float) -> int:
    return int(round(seconds * rate))

"""Synthetic left/right reaching sessions for tests and the evaluation harness.

Each trial is a rest period followed by a cued action period in which one
hand makes a minimum-jerk reach and later returns home. While a trial's
class signal is active, band-limited activity is added to the channels of
one group on the side of the moving arm (odd-numbered 10-20 channels are
left, even-numbered right), on top of a 1/f background. Everything is
driven by a single seed; the parameters are stored in ``Recording.meta``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .config import LOBES, MONTAGE_30
from .dataset import Recording

HOME = {"left": np.array([-0.2, 0.3, 0.0]), "right": np.array([0.2, 0.3, 0.0])}
REACH_DIR = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class SynthParams:
    n_trials: int = 60
    seed: int = 0
    rest_s: float = 4.0
    action_s: float = 2.0
    eeg_rate: float = 250.0
    mocap_rate: float = 100.0
    signal_band: tuple[float, float] = (8.0, 12.0)
    signal_group: str = "parietal"
    signal_gain: float = 0.8
    noise_scale: float = 1.0
    sensor_noise: float = 0.05
    lead_s: float = 1.0  # class signal starts this long before movement onset
    tail_s: float = 0.0  # and stops this long after the reach ends
    reaction_s: tuple[float, float] = (0.2, 0.4)
    reach_s: float = 1.0
    reach_m: float = 0.4
    mocap_jitter_m: float = 1e-5
    units_scale: float = 3.0


def side_of(channel: str) -> str | None:
    tail = channel[-1]
    if tail.isdigit():
        return "left" if int(tail) % 2 else "right"
    return None


def group_channels(group: str) -> tuple[str, ...]:
    if group in LOBES:
        return LOBES[group]
    if group == "all":
        return MONTAGE_30
    raise ValueError(f"unknown signal group {group!r}")


def pink_noise(rng: np.random.Generator, n_samples: int, n_channels: int) -> np.ndarray:
    """Unit-variance noise with a 1/f power spectrum per channel."""
    spec = rng.normal(size=(n_samples // 2 + 1, n_channels)) + 1j * rng.normal(size=(n_samples // 2 + 1, n_channels))
    f = np.arange(n_samples // 2 + 1, dtype=float)
    f[0] = 1.0
    spec /= np.sqrt(f)[:, None]
    spec[0] = 0.0
    x = np.fft.irfft(spec, n=n_samples, axis=0)
    return x / x.std(axis=0)


def min_jerk(tau: np.ndarray) -> np.ndarray:
    tau = np.clip(tau, 0.0, 1.0)
    return 10 * tau**3 - 15 * tau**4 + 6 * tau**5


def _envelope(t: np.ndarray, start: float, stop: float, ramp: float = 0.05) -> np.ndarray:
    up = np.clip((t - start) / ramp, 0.0, 1.0)
    down = np.clip((stop - t) / ramp, 0.0, 1.0)
    return np.sin(0.5 * np.pi * np.minimum(up, down)) ** 2


def generate_session(params: SynthParams = SynthParams(), channel_names=MONTAGE_30) -> Recording:
    rng = np.random.default_rng(params.seed)
    names = list(channel_names)
    n = len(names)
    labels = np.array(["left", "right"] * (params.n_trials // 2) + ["left"] * (params.n_trials % 2))
    rng.shuffle(labels)

    trial_s = params.rest_s + params.action_s
    duration = params.rest_s + params.n_trials * trial_s + params.rest_s
    fs = params.eeg_rate
    n_samples = int(round(duration * fs))
    t = np.arange(n_samples) / fs

    # background: spatially mixed 1/f noise plus white sensor noise
    mix = np.eye(n) + 0.3 * rng.normal(size=(n, n)) / np.sqrt(n)
    eeg = pink_noise(rng, n_samples, n) @ mix.T
    eeg += params.sensor_noise * rng.normal(size=(n_samples, n))
    eeg *= params.noise_scale

    group = set(group_channels(params.signal_group))
    weights = {arm: np.zeros(n) for arm in ("left", "right")}
    for i, name in enumerate(names):
        side = side_of(name)
        if name in group and side is not None:
            weights[side][i] = rng.uniform(0.7, 1.0)
    sos = signal.butter(4, params.signal_band, btype="bandpass", fs=fs, output="sos")
    source = signal.sosfiltfilt(sos, rng.normal(size=(n_samples, 2)), axis=0)
    source /= source.std(axis=0)

    n_m = int(round(duration * params.mocap_rate))
    mt = np.arange(n_m) / params.mocap_rate
    mocap = np.empty((n_m, 2, 3))
    for a, arm in enumerate(("left", "right")):
        mocap[:, a] = HOME[arm]
    cues = []
    trial_meta = []
    for k, arm in enumerate(labels):
        cue = params.rest_s + k * trial_s + params.rest_s
        onset = cue + rng.uniform(*params.reaction_s)
        reach_end = onset + params.reach_s
        back = cue + params.action_s
        cues.append((float(cue), str(arm)))
        trial_meta.append({"arm": str(arm), "cue": cue, "onset": onset, "reach_end": reach_end})

        a = 0 if arm == "left" else 1
        out_t = min_jerk((mt - onset) / params.reach_s) - min_jerk((mt - back) / params.reach_s)
        mocap[:, a] += params.reach_m * out_t[:, None] * REACH_DIR

        env = _envelope(t, onset - params.lead_s, reach_end + params.tail_s)
        src = source[:, a] * env
        eeg += params.signal_gain * src[:, None] * weights[arm][None, :]

    mocap += params.mocap_jitter_m * rng.normal(size=mocap.shape)
    eeg *= params.units_scale

    meta = {"generator": "riemintent.synth", "params": dataclasses.asdict(params), "trials": trial_meta}
    return Recording(
        eeg=eeg.astype(np.float32).astype(float),
        rate=fs,
        channel_names=names,
        cues=cues,
        mocap_times=mt,
        mocap=mocap,
        mocap_rate=params.mocap_rate,
        meta=meta,
    )

"""Pipeline configuration.

Config files are flat YAML mappings; every key is optional and falls back to
the defaults below. The band is written as ``band: [low, high]``.

    window_seconds: 2.0
    band: [5, 15]
    filter_order: 4
    filter_mode: causal          # or zero-phase
    order: filter-diff           # or diff-filter
    differentiate: true
    feature: tangent             # tangent | covariance | raw
    epsilon_kind: relative       # relative | absolute
    epsilon: 1.0e-6
    denominator: window          # window (W-1) | channels (n-1)
    weighted: false              # sqrt(2) off-diagonal weighting
    C: 0.1
    gamma: 0.5
    delta: 0.65
    q: 160
    channels: all                # or a list of channel names
    split: 0.5
    seed: 0
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .dsp import FilterSpec
from .features import FEATURE_KINDS, EpsilonPolicy

# Window lengths (s) and bands (Hz) of the default accuracy grid.
GRID_WINDOWS = (0.03, 0.06, 0.12, 0.25, 0.5, 1.0, 2.0)
GRID_BANDS = ((0, 5), (0, 10), (5, 15), (10, 20), (15, 25), (20, 30), (25, 35), (30, 40), (35, 45))

LOBES = {
    "frontal": ("FCz", "FC3", "FC4", "FT7", "FT8"),
    "central": ("Cz", "C3", "C4", "T7", "T8"),
    "parietal": ("CPz", "CP3", "CP4", "TP7", "TP8"),
    "occipital": ("Pz", "P3", "P4", "P7", "P8"),
}

MONTAGE_30 = (
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8",
    "FT7", "FC3", "FCz", "FC4", "FT8",
    "T7", "C3", "Cz", "C4", "T8",
    "TP7", "CP3", "CPz", "CP4", "TP8",
    "P7", "P3", "Pz", "P4", "P8",
    "O1", "Oz", "O2",
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    source_rate: float = 250.0
    target_rate: float = 160.0
    window_seconds: float = 2.0
    band: FilterSpec = field(default_factory=lambda: FilterSpec(5.0, 15.0, 4, "causal"))
    order: str = "filter-diff"
    differentiate: bool = True
    feature: str = "tangent"
    epsilon: EpsilonPolicy = field(default_factory=EpsilonPolicy)
    denominator: str = "window"
    weighted: bool = False
    C: float = 0.1
    gamma: float = 0.5
    svm_tol: float = 1e-3
    calibration_folds: int = 3
    delta: float = 0.65
    q: int = 160
    channels: tuple[str, ...] | None = None
    split: float = 0.5
    split_mode: str = "shuffle"
    seed: int = 0
    train_stride: int = 1
    eval_stride: int = 1
    pre_onset: float = 1.0
    speed_threshold: float = 0.05
    hold: float = 0.1

    def __post_init__(self):
        if self.window_samples < 2:
            raise ConfigError("window_seconds * target_rate must be >= 2 samples")
        if not 0.0 < self.split < 1.0:
            raise ConfigError("split must lie in (0, 1)")
        if self.order not in ("filter-diff", "diff-filter"):
            raise ConfigError(f"unknown processing order {self.order!r}")
        if self.feature not in FEATURE_KINDS:
            raise ConfigError(f"unknown feature kind {self.feature!r}")
        if self.denominator not in ("window", "channels"):
            raise ConfigError(f"unknown covariance denominator {self.denominator!r}")
        if self.split_mode not in ("shuffle", "chronological"):
            raise ConfigError(f"unknown split mode {self.split_mode!r}")
        if not 0.5 < self.delta <= 1.0:
            raise ConfigError("delta must lie in (0.5, 1]")
        if self.q < 1 or self.train_stride < 1 or self.eval_stride < 1:
            raise ConfigError("q and strides must be positive")
        if not (self.C > 0 and self.gamma > 0):
            raise ConfigError("C and gamma must be positive")
        if self.band.high_hz >= self.target_rate / 2:
            raise ConfigError("band upper edge must be below the pipeline Nyquist frequency")

    @property
    def window_samples(self) -> int:
        return int(round(self.window_seconds * self.target_rate))

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "source_rate": self.source_rate,
            "target_rate": self.target_rate,
            "window_seconds": self.window_seconds,
            "band": [self.band.low_hz, self.band.high_hz],
            "filter_order": self.band.order,
            "filter_mode": self.band.mode,
            "order": self.order,
            "differentiate": self.differentiate,
            "feature": self.feature,
            "epsilon_kind": self.epsilon.kind,
            "epsilon": self.epsilon.value,
            "denominator": self.denominator,
            "weighted": self.weighted,
            "C": self.C,
            "gamma": self.gamma,
            "svm_tol": self.svm_tol,
            "calibration_folds": self.calibration_folds,
            "delta": self.delta,
            "q": self.q,
            "channels": "all" if self.channels is None else list(self.channels),
            "split": self.split,
            "split_mode": self.split_mode,
            "seed": self.seed,
            "train_stride": self.train_stride,
            "eval_stride": self.eval_stride,
            "pre_onset": self.pre_onset,
            "speed_threshold": self.speed_threshold,
            "hold": self.hold,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        raw = dict(raw or {})
        known = set(cls().to_dict())
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        base = cls().to_dict()
        base.update(raw)
        try:
            low, high = (float(v) for v in base["band"])
            band = FilterSpec(low, high, int(base["filter_order"]), str(base["filter_mode"]))
            eps = EpsilonPolicy(str(base["epsilon_kind"]), float(base["epsilon"]))
            channels = base["channels"]
            if channels in (None, "all"):
                channels = None
            elif isinstance(channels, str):
                channels = tuple(c.strip() for c in channels.split(",") if c.strip())
            else:
                channels = tuple(str(c) for c in channels)
            return cls(
                source_rate=float(base["source_rate"]),
                target_rate=float(base["target_rate"]),
                window_seconds=float(base["window_seconds"]),
                band=band,
                order=str(base["order"]),
                differentiate=bool(base["differentiate"]),
                feature=str(base["feature"]),
                epsilon=eps,
                denominator=str(base["denominator"]),
                weighted=bool(base["weighted"]),
                C=float(base["C"]),
                gamma=float(base["gamma"]),
                svm_tol=float(base["svm_tol"]),
                calibration_folds=int(base["calibration_folds"]),
                delta=float(base["delta"]),
                q=int(base["q"]),
                channels=channels,
                split=float(base["split"]),
                split_mode=str(base["split_mode"]),
                seed=int(base["seed"]),
                train_stride=int(base["train_stride"]),
                eval_stride=int(base["eval_stride"]),
                pre_onset=float(base["pre_onset"]),
                speed_threshold=float(base["speed_threshold"]),
                hold=float(base["hold"]),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> PipelineConfig:
    raw: dict = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError("config file must be a key-value mapping")
        raw.update(loaded or {})
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return PipelineConfig.from_dict(raw)

"""Trained decoder bundle and its binary container.

Layout (little-endian)::

    b"RIEM" | u16 version | u16 section count
    repeated: 4-byte tag | u32 payload length | payload

    PREP  UTF-8 JSON: pipeline config, channel list, window length,
          label encoding, feature kind, training trial ids
    MEAN  u32 n | n*n f64 row-major reference mean (n = 0 without one)
    SVEC  u32 count | u32 dim | count*dim f64 support vectors | count f64 dual coeffs
    PARM  f64 bias, gamma, C, platt_a, platt_b (NaN if uncalibrated) | u32 SMO iterations | u8 converged
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .features import FeatureExtractor
from .svm import LEFT, RIGHT, SvmModel

MAGIC = b"RIEM"
VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass
class Decoder:
    """Everything needed to turn preprocessed windows into class scores."""

    config: PipelineConfig
    channel_names: list[str]
    extractor: FeatureExtractor
    model: SvmModel
    train_trials: list[int] = field(default_factory=list)

    @property
    def window_samples(self) -> int:
        return self.config.window_samples

    def preprocessing(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "channel_names": list(self.channel_names),
            "window_samples": self.window_samples,
            "labels": {"left": LEFT, "right": RIGHT},
            "feature": self.extractor.kind,
            "train_trials": [int(t) for t in self.train_trials],
        }


def _section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<I", len(payload)) + payload


def _nan_if_none(x):
    return float("nan") if x is None else float(x)


def encode(decoder: Decoder) -> bytes:
    mu = decoder.extractor.reference_mean
    n = 0 if mu is None else mu.shape[0]
    m = decoder.model
    sv = np.ascontiguousarray(m.support_vectors, dtype="<f8")
    count, dim = (sv.shape if sv.size else (0, sv.shape[1] if sv.ndim == 2 else 0))
    sections = [
        _section(b"PREP", json.dumps(decoder.preprocessing(), sort_keys=True).encode("utf-8")),
        _section(b"MEAN", struct.pack("<I", n) + (b"" if mu is None else np.ascontiguousarray(mu, "<f8").tobytes())),
        _section(
            b"SVEC",
            struct.pack("<II", count, dim) + sv.tobytes() + np.ascontiguousarray(m.dual_coeffs, "<f8").tobytes(),
        ),
        _section(
            b"PARM",
            struct.pack(
                "<5dIB",
                m.bias, m.gamma, m.c_param, _nan_if_none(m.platt_a), _nan_if_none(m.platt_b),
                m.iterations, int(m.converged),
            ),
        ),
    ]
    return MAGIC + struct.pack("<HH", VERSION, len(sections)) + b"".join(sections)


def decode(data: bytes) -> Decoder:
    if data[:4] != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    if len(data) < 8:
        raise ModelFormatError("truncated model header")
    version, count = struct.unpack_from("<HH", data, 4)
    if version != VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    off = 8
    sections = {}
    for _ in range(count):
        if off + 8 > len(data):
            raise ModelFormatError("truncated section header")
        tag = data[off : off + 4].decode("ascii", "replace")
        (length,) = struct.unpack_from("<I", data, off + 4)
        off += 8
        if off + length > len(data):
            raise ModelFormatError(f"section {tag} truncated")
        sections[tag] = data[off : off + length]
        off += length
    missing = {"PREP", "MEAN", "SVEC", "PARM"} - set(sections)
    if missing:
        raise ModelFormatError(f"missing sections: {sorted(missing)}")

    prep = json.loads(sections["PREP"].decode("utf-8"))
    config = PipelineConfig.from_dict(prep["config"])

    mean_b = sections["MEAN"]
    (n,) = struct.unpack_from("<I", mean_b)
    mu = np.frombuffer(mean_b, "<f8", count=n * n, offset=4).reshape(n, n).copy() if n else None

    sv_b = sections["SVEC"]
    n_sv, dim = struct.unpack_from("<II", sv_b)
    sv = np.frombuffer(sv_b, "<f8", count=n_sv * dim, offset=8).reshape(n_sv, dim).copy()
    coef = np.frombuffer(sv_b, "<f8", count=n_sv, offset=8 + 8 * n_sv * dim).copy()

    bias, gamma, c, pa, pb, iters, conv = struct.unpack("<5dIB", sections["PARM"])
    model = SvmModel(
        support_vectors=sv,
        dual_coeffs=coef,
        bias=bias,
        gamma=gamma,
        c_param=c,
        platt_a=None if math.isnan(pa) else pa,
        platt_b=None if math.isnan(pb) else pb,
        converged=bool(conv),
        iterations=iters,
    )
    names = list(prep["channel_names"])
    extractor = FeatureExtractor(
        n_channels=len(names),
        kind=prep["feature"],
        reference_mean=mu,
        epsilon=config.epsilon,
        denominator=config.denominator,
        weighted=config.weighted,
    )
    return Decoder(config, names, extractor, model, list(prep.get("train_trials", [])))


def save_model(decoder: Decoder, path: str | Path) -> None:
    Path(path).write_bytes(encode(decoder))


def load_model(path: str | Path) -> Decoder:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ModelFormatError(str(exc)) from exc
    try:
        return decode(data)
    except ModelFormatError:
        raise
    except (struct.error, ValueError, KeyError, TypeError) as exc:  # includes bad JSON and configs
        raise ModelFormatError(f"corrupt model file: {exc}") from exc


def dump(decoder: Decoder) -> str:
    """Lossless text rendering (floats use shortest round-trip repr)."""
    m = decoder.model
    mu = decoder.extractor.reference_mean
    doc = {
        "format": "RIEM",
        "version": VERSION,
        "preprocessing": decoder.preprocessing(),
        "reference_mean": None if mu is None else mu.tolist(),
        "support_vectors": m.support_vectors.tolist(),
        "dual_coeffs": m.dual_coeffs.tolist(),
        "bias": m.bias,
        "gamma": m.gamma,
        "c_param": m.c_param,
        "platt_a": m.platt_a,
        "platt_b": m.platt_b,
        "iterations": m.iterations,
        "converged": m.converged,
    }
    return json.dumps(doc, indent=1, sort_keys=True)

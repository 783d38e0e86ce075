import numpy as np
import pytest

from riemintent.config import LOBES
from riemintent.dataset import detect_onsets
from riemintent.synth import SynthParams, generate_session, group_channels, min_jerk, side_of


def test_balanced_trials_and_layout():
    rec = generate_session(SynthParams(n_trials=10, seed=1))
    assert rec.eeg.shape[1] == 30 and rec.rate == 250.0
    assert sorted(lab for _, lab in rec.cues) == ["left"] * 5 + ["right"] * 5
    assert rec.duration == pytest.approx(4 + 10 * 6 + 4)


def test_seed_determinism():
    a = generate_session(SynthParams(n_trials=4, seed=3))
    b = generate_session(SynthParams(n_trials=4, seed=3))
    c = generate_session(SynthParams(n_trials=4, seed=4))
    np.testing.assert_array_equal(a.eeg, b.eeg)
    np.testing.assert_array_equal(a.mocap, b.mocap)
    assert not np.array_equal(a.eeg, c.eeg)


def test_every_reach_is_detected_once_per_direction():
    rec = generate_session(SynthParams(n_trials=8, seed=2))
    found = detect_onsets(rec)
    # each trial reaches out and returns, so two intervals per cue
    assert len(found) == 16
    for meta in rec.meta["trials"]:
        near = [m for m in found if abs(m.onset_time - meta["onset"]) < 0.1]
        assert len(near) == 1 and near[0].arm == meta["arm"]


def test_signal_stays_in_its_group():
    quiet = generate_session(SynthParams(n_trials=6, seed=5, signal_gain=0.0))
    loud = generate_session(SynthParams(n_trials=6, seed=5, signal_group="central"))
    diff = np.abs(loud.eeg - quiet.eeg).max(axis=0)
    touched = {name for name, d in zip(loud.channel_names, diff) if d > 1e-3}
    assert touched == {c for c in LOBES["central"] if side_of(c) is not None}


def test_helpers():
    assert side_of("C3") == "left" and side_of("C4") == "right" and side_of("Cz") is None
    assert min_jerk(np.array([-1.0, 0.0, 0.5, 1.0, 2.0])).tolist() == [0.0, 0.0, 0.5, 1.0, 1.0]
    with pytest.raises(ValueError):
        group_channels("temporal")

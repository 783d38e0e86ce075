import numpy as np
import pytest

from riemintent import dataset
from riemintent.config import MONTAGE_30, PipelineConfig
from riemintent.dataset import (
    DatasetError,
    Epoch,
    MotionInterval,
    Recording,
    RecordingFormatError,
    build_training_set,
    detect_onsets,
    label_windows,
    load_recording,
    preprocess,
    save_recording,
    slice_epochs,
    split_trials,
    stratified_split,
)
from riemintent.synth import SynthParams, generate_session, min_jerk


def small_recording(n_channels=2, seconds=3.0):
    rng = np.random.default_rng(0)
    eeg = rng.normal(size=(int(250 * seconds), n_channels)).astype(np.float32)
    mt = (np.arange(int(100 * seconds)) / 100.0).astype(np.float32)
    mocap = rng.normal(size=(len(mt), 2, 3)).astype(np.float32)
    return Recording(eeg, 250.0, [f"C{i}" for i in range(n_channels)], [(1.0, "left")], mt, mocap, 100.0, {"k": 1})


def still_mocap(seconds, rate=100.0):
    t = np.arange(int(seconds * rate)) / rate
    pos = np.zeros((len(t), 2, 3))
    pos[:, 0] = [-0.2, 0.3, 0.0]
    pos[:, 1] = [0.2, 0.3, 0.0]
    return t, pos


def add_reach(t, pos, arm, start, duration=1.0, distance=0.4):
    a = 0 if arm == "left" else 1
    pos[:, a, 1] += distance * min_jerk((t - start) / duration)
    return pos


# --- container --------------------------------------------------------------


def test_round_trip_is_bitwise(tmp_path):
    rec = small_recording()
    path = tmp_path / "rec.bin"
    save_recording(rec, path)
    back = load_recording(path)
    np.testing.assert_array_equal(back.eeg, rec.eeg)
    np.testing.assert_array_equal(back.mocap, rec.mocap)
    np.testing.assert_array_equal(back.mocap_times, rec.mocap_times)
    assert back.channel_names == rec.channel_names and back.cues == rec.cues
    assert back.rate == 250.0 and back.meta == {"k": 1}


def test_thirty_channel_montage(tmp_path):
    rec = generate_session(SynthParams(n_trials=2, seed=1))
    save_recording(rec, tmp_path / "s.bin")
    back = load_recording(tmp_path / "s.bin")
    assert len(back.channel_names) == 30 and back.channel_names == list(MONTAGE_30)


@pytest.mark.parametrize("cut,section", [(10, "header"), (-1, "mocap"), ("eeg", "eeg")])
def test_truncated_file_names_the_section(tmp_path, cut, section):
    rec = small_recording()
    path = tmp_path / "rec.bin"
    save_recording(rec, path)
    data = path.read_bytes()
    if cut == "eeg":
        cut = data.index(b"\n") + 1 + 100
    path.write_bytes(data[:cut])
    with pytest.raises(RecordingFormatError) as err:
        load_recording(path)
    assert err.value.section == section


def test_trailing_bytes_and_bad_header(tmp_path):
    rec = small_recording()
    path = tmp_path / "rec.bin"
    save_recording(rec, path)
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(RecordingFormatError, match="trailer"):
        load_recording(path)
    path.write_bytes(b'{"format": "something-else"}\n')
    with pytest.raises(RecordingFormatError, match="header"):
        load_recording(path)
    with pytest.raises(RecordingFormatError):
        load_recording(tmp_path / "missing.bin")


def test_recording_validation():
    with pytest.raises(DatasetError):
        Recording(np.zeros((10, 3)), 250.0, ["a", "b"])
    with pytest.raises(DatasetError):
        Recording(np.zeros((10, 1)), 250.0, ["a"], mocap_times=[0.0, 0.0], mocap=np.zeros((2, 2, 3)))
    with pytest.raises(DatasetError):
        Recording(np.zeros((10, 1)), 250.0, ["a"], cues=[(0.0, "up")])
    rec = Recording(np.zeros((10, 2)), 250.0, ["Cz", "C3"])
    assert rec.channel_indices(["c3", "CZ"]) == [1, 0]
    with pytest.raises(DatasetError):
        rec.channel_indices(["Oz"])


def test_mocap_is_interpolated_to_the_eeg_clock():
    t, pos = still_mocap(2.0)
    pos[:, 0, 0] = t  # left x moves at 1 m/s
    rec = Recording(np.zeros((500, 1)), 250.0, ["Cz"], mocap_times=t, mocap=pos)
    on_clock = rec.mocap_on_clock(160.0)
    assert on_clock.shape == (320, 2, 3)
    np.testing.assert_allclose(on_clock[:300, 0, 0], np.arange(300) / 160.0, atol=1e-12)


# --- onsets ---------------------------------------------------------------


def test_stationary_mocap_has_no_onsets():
    t, pos = still_mocap(5.0)
    rec = Recording(np.zeros((1250, 1)), 250.0, ["Cz"], mocap_times=t, mocap=pos)
    assert detect_onsets(rec) == []


def test_min_jerk_onset_matches_closed_form():
    t, pos = still_mocap(6.0)
    pos = add_reach(t, pos, "right", 2.0)
    rec = Recording(np.zeros((1500, 1)), 250.0, ["Cz"], mocap_times=t, mocap=pos)
    found = detect_onsets(rec, 0.05, 0.1)
    assert len(found) == 1 and found[0].arm == "right"
    # speed of a minimum-jerk reach: (D/T) * 30 tau^2 (1 - tau)^2
    tau = np.linspace(0, 0.5, 500001)
    crossing = tau[np.argmax(0.4 * 30 * tau**2 * (1 - tau) ** 2 > 0.05)]
    assert crossing == pytest.approx(0.0693, abs=1e-4)
    assert abs(found[0].onset_time - (2.0 + crossing)) <= 0.05


def test_two_reaches_two_intervals():
    t, pos = still_mocap(8.0)
    pos = add_reach(t, pos, "left", 1.0)
    pos = add_reach(t, pos, "left", 4.0, distance=-0.4)  # back home after 2 s of rest
    rec = Recording(np.zeros((2000, 1)), 250.0, ["Cz"], mocap_times=t, mocap=pos)
    found = detect_onsets(rec)
    assert [m.arm for m in found] == ["left", "left"]
    assert found[0].offset_time < found[1].onset_time


# --- epochs ---------------------------------------------------------------


def bare(cues, seconds=20.0):
    return Recording(np.zeros((int(250 * seconds), 1)), 250.0, ["Cz"], cues=cues)


def test_epoch_arithmetic():
    epochs = slice_epochs(bare([(4.5, "left")]), [MotionInterval("left", 5.0, 7.0)], rate=160.0)
    motion = epochs.motion
    assert len(motion) == 1
    assert (motion[0].start, motion[0].end, motion[0].onset_index) == (640, 1120, 800)
    assert epochs[0] == Epoch("rest", 0, 640)


def test_cue_arm_mismatch_is_dropped():
    epochs = slice_epochs(bare([(4.5, "left")]), [MotionInterval("right", 5.0, 7.0)], rate=160.0)
    assert epochs.motion == [] and epochs.mismatched == 1


def test_back_to_back_trials_never_overlap():
    cues = [(1.0, "left"), (2.9, "right"), (3.2, "left")]
    ivs = [MotionInterval("left", 1.2, 2.8), MotionInterval("right", 3.0, 3.3), MotionInterval("left", 3.35, 5.0)]
    epochs = slice_epochs(bare(cues), ivs, rate=160.0)
    for a, b in zip(epochs, epochs[1:]):
        assert a.end <= b.start
    assert all(e.start < e.end for e in epochs)
    assert [e.label for e in epochs.motion] == ["left", "right", "left"]


def test_return_movement_does_not_reuse_the_cue():
    ivs = [MotionInterval("left", 5.0, 6.0), MotionInterval("left", 7.0, 8.0)]
    epochs = slice_epochs(bare([(4.8, "left")]), ivs, rate=160.0)
    assert len(epochs.motion) == 1 and epochs.unmatched == 1


# --- windows and training sets --------------------------------------------------


def test_window_count_matches_hand_count():
    cfg = PipelineConfig(window_seconds=2.0)
    rec = generate_session(SynthParams(n_trials=6, seed=2))
    intervals = detect_onsets(rec, rate=cfg.target_rate)
    epochs = slice_epochs(rec, intervals, cfg.target_rate)
    block = preprocess(rec, cfg)
    windows = label_windows(block, epochs, cfg.window_samples)
    first = block.start_index + cfg.window_samples - 1
    expected = 0
    for e in epochs.motion:
        for end in range(e.start, e.end):  # a window belongs to the epoch holding its last sample
            expected += end >= first
    assert len(windows) == expected
    assert len(windows.labels) == sum(e.end - e.start for e in epochs.motion)  # first epoch starts after W
    for end, trial in zip(windows.end_index, windows.trials):
        owners = [e for e in epochs.motion if e.start <= end < e.end]
        assert len(owners) == 1 and owners[0].trial == trial


def test_only_rest_recording_has_no_windows():
    rec = generate_session(SynthParams(n_trials=2, seed=3))
    rest_only = Recording(rec.eeg, rec.rate, rec.channel_names, [], *still_mocap(rec.duration))
    with pytest.raises(DatasetError, match="no usable windows"):
        build_training_set(rest_only, [Epoch("rest", 0, 1000)], PipelineConfig())


def test_split_is_by_trial_and_balanced():
    rec = generate_session(SynthParams(n_trials=20, seed=4))
    epochs = slice_epochs(rec, detect_onsets(rec))
    train, test = stratified_split(epochs, 0.5, seed=0)
    assert set(train).isdisjoint(test)
    assert len(train) + len(test) == len(epochs.motion)
    for lab in ("left", "right"):
        ids = {e.trial for e in epochs.motion if e.label == lab}
        assert len(ids & set(train)) == len(ids & set(test))
    again = stratified_split(epochs, 0.5, seed=0)
    np.testing.assert_array_equal(train, again[0])


def test_split_trials_modes():
    tr, te = split_trials(range(10), 0.5, mode="chronological")
    np.testing.assert_array_equal(tr, range(5))
    tr, te = split_trials(range(10), 0.3, seed=1)
    assert len(tr) == 3 and len(te) == 7


def test_reference_mean_ignores_test_half():
    cfg = PipelineConfig(split_mode="chronological", train_stride=4)
    rec = generate_session(SynthParams(n_trials=8, seed=5))
    epochs = slice_epochs(rec, detect_onsets(rec, rate=cfg.target_rate), cfg.target_rate)
    train, test = stratified_split(epochs, 0.5, cfg.seed, cfg.split_mode)
    full = build_training_set(rec, epochs, cfg, trials=train)

    # cut the recording two seconds before the first held-out epoch begins
    first_test = min(e.start for e in epochs.motion if e.trial in set(test))
    last_train = max(e.end for e in epochs.motion if e.trial in set(train))
    assert last_train < first_test
    cut_s = first_test / cfg.target_rate - 2.0
    n = int(cut_s * rec.rate)
    keep = rec.mocap_times < cut_s
    short = Recording(rec.eeg[:n], rec.rate, rec.channel_names, [c for c in rec.cues if c[0] < cut_s],
                      rec.mocap_times[keep], rec.mocap[keep], rec.mocap_rate)
    short_epochs = slice_epochs(short, detect_onsets(short, rate=cfg.target_rate), cfg.target_rate)
    partial = build_training_set(short, short_epochs, cfg, trials=train)
    np.testing.assert_array_equal(partial.extractor.reference_mean, full.extractor.reference_mean)
    assert set(np.unique(full.trials)) <= set(train)

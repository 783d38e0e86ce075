import numpy as np
import pytest

from riemintent import harness
from riemintent.config import PipelineConfig
from riemintent.dataset import save_recording
from riemintent.synth import SynthParams, generate_session


@pytest.fixture(scope="session")
def small_config():
    return PipelineConfig(window_seconds=0.5, train_stride=8, eval_stride=8, seed=3)


@pytest.fixture(scope="session")
def small_recording():
    return generate_session(SynthParams(n_trials=12, seed=21))


@pytest.fixture(scope="session")
def small_recording_path(small_recording, tmp_path_factory):
    path = tmp_path_factory.mktemp("rec") / "small.bin"
    save_recording(small_recording, path)
    return path


@pytest.fixture(scope="session")
def small_decoder(small_recording, small_config):
    decoder, report = harness.fit_and_evaluate(harness.Session(small_recording, small_config), small_config)
    return decoder


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

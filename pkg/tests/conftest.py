import functools

import numpy as np
import pytest

from headtrack import synth
from headtrack.facemodel import load_model


@functools.lru_cache(maxsize=None)
def default_model():
    return load_model()


@functools.lru_cache(maxsize=None)
def rendered(preset: str, n_frames: int, size=(320, 240), seed: int = synth.PRESET_SEED):
    """Rendered preset sequences, cached across test modules."""
    model = default_model()
    traj, opts = synth.preset_trajectory(model, preset, n_frames, size, seed)
    return synth.render_sequence(model, traj, size, opts)


@pytest.fixture(scope="session")
def model():
    return default_model()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance reporting -----------------------------------------------------

_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    ok = call.excinfo is None
    if call.when == "call" or (call.when == "setup" and not ok):
        detail = getattr(item, "criterion_detail", "")
        prev = _criteria.get(number)
        passed = ok and (prev is None or prev[1])
        _criteria[number] = (title, passed, detail or (prev[2] if prev else ""))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, passed, detail = _criteria[number]
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from tryon_guidance.body_model import make_toy_body  # noqa: E402


@pytest.fixture(scope="session")
def toy_body():
    return make_toy_body(22, 12, 7)


@pytest.fixture(scope="session")
def small_body():
    return make_toy_body(22, 8, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def scene_dir(tmp_path_factory):
    from tryon_guidance.fixture import make_fixture

    d = tmp_path_factory.mktemp("scene")
    make_fixture(str(d), seed=7, frames=16)
    return str(d)


@pytest.fixture(scope="session")
def pipeline_runs(scene_dir, tmp_path_factory):
    """The 16-frame fixture run twice into separate directories, timed."""
    import time

    from tryon_guidance.pipeline import PipelineConfig, run_pipeline

    packs, times, dirs = [], [], []
    for i in range(2):
        out = str(tmp_path_factory.mktemp(f"run{i}"))
        cfg = PipelineConfig.from_dict({"scene": scene_dir})
        cfg.out_dir = out
        t0 = time.perf_counter()
        packs.append(run_pipeline(cfg))
        times.append(time.perf_counter() - t0)
        dirs.append(out)
    return packs, times, dirs


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])

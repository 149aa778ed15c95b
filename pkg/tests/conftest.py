import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


TINY_CONFIG = """\
backbone: {image_size: 64, stem_channels: 8, stages: [[16, 1, 2], [32, 1, 2]]}
agr: {k: 5, grid: 4, channels_reduced: 8}
train: {epochs: 2, batch_size: 8}
data: {split: [0.6, 0.2, 0.2], synth: {size: 64}}
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY_CONFIG)
    return path


# acceptance criteria: one PASS/FAIL line each, printed at the end of the run
CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when == "teardown":
        return
    n, title = mark.args
    if rep.failed or (rep.when == "call" and rep.passed):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        CRITERIA[n] = ("PASS" if rep.passed else "FAIL", title, detail)
        print(f"\n{CRITERIA[n][0]} criterion {n}: {title}" + (f" ({detail})" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        verdict, title, detail = CRITERIA[n]
        terminalreporter.write_line(f"{verdict} criterion {n}: {title}" + (f" ({detail})" if detail else ""))

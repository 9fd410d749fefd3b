import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mmwave_geometry.dataset import SynthConfig, normalize_counters, split, synth_generate

settings.register_profile("pkg", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("pkg")


@pytest.fixture(scope="session")
def small_synth():
    """20 classes x 60 rows, raw counters."""
    return synth_generate(SynthConfig(rows_per_class=60), seed=3)


@pytest.fixture(scope="session")
def desk_split():
    """Normalized 250-row-per-class synth data split 70/30."""
    ds = normalize_counters(synth_generate(SynthConfig(rows_per_class=250), seed=7))
    return split(ds, 0.3, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""
    def record(label: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

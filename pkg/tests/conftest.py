import pytest

from flexsample.config import ExperimentConfig


def small_config(**kw) -> ExperimentConfig:
    """A few-second configuration: 4 classes, short schedules, queries that actually fire."""
    base = dict(k=4, d=8, N0=120, ratio=10, trials=1, hidden=(16, 8), max_epochs=25,
                warmup_epochs=4, query_patience=3, stop_patience=6, ssl_epochs=2,
                posterior_draws=3, head_threshold=60, tail_threshold=20)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture
def small():
    return small_config


CRITERIA: dict[int, tuple[bool, str]] = {}


def verdict(number: int, ok: bool, detail: str) -> None:
    """Record an acceptance criterion outcome, then fail the test if it did not hold."""
    CRITERIA[number] = (bool(ok), detail)
    assert ok, f"criterion {number}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")

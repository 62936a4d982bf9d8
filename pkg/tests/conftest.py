import numpy as np
import pytest

from rimr.tensor import default_dtype

# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE: list[str] = []


@pytest.fixture
def f64():
    with default_dtype(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion(capsys):
    def report(name: str, ok: bool | None, detail: str) -> None:
        status = "REPORTED" if ok is None else ("PASS" if ok else "FAIL")
        line = f"[acceptance {name}] {status}: {detail}"
        ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line, flush=True)
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)

from pathlib import Path

import numpy as np
import pytest

from vision_fsl.graph import build_graph

DATA = Path(__file__).resolve().parent.parent / "data"


def dataset_dir(name: str) -> Path:
    return DATA / name


def random_graph(rng, n, p=0.05, f=6, zero_rows=0):
    x = rng.standard_normal((n, f))
    if zero_rows:
        x[rng.choice(n, size=zero_rows, replace=False)] = 0.0
    upper = np.triu(rng.random((n, n)) < p, k=1)
    return build_graph(x, np.argwhere(upper), rng.integers(0, 3, size=n))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

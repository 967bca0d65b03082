import os
from pathlib import Path

import pytest

from specboltz import KernelSpec, build_grid, build_weight_table, load_table, save_table
from specboltz.kernels import GrazingRutherford
from specboltz.weights import CacheError

CACHE_DIR = Path(os.environ.get("SPECBOLTZ_TEST_CACHE", Path(__file__).parent / ".cache"))

ACCEPTANCE_LINES = []


def cached_table(name, grid, kernel, **kw):
    """Build a weight table once and reuse it across sessions."""
    path = CACHE_DIR / f"{name}.bwt"
    if path.exists():
        try:
            return load_table(path, grid)
        except CacheError:
            path.unlink()
    table = build_weight_table(grid, kernel, **kw)
    save_table(table, path)
    return table


@pytest.fixture(scope="session")
def grid8():
    return build_grid(8, 5.0)


@pytest.fixture(scope="session")
def grid16():
    return build_grid(16, 5.0)


@pytest.fixture(scope="session")
def iso8(grid8):
    return cached_table("iso_N8_L5", grid8, KernelSpec(0.0))


@pytest.fixture(scope="session")
def iso16(grid16):
    return cached_table("iso_N16_L5", grid16, KernelSpec(0.0))


@pytest.fixture(scope="session")
def coulomb16(grid16):
    """lambda = -3, grazing Rutherford eps = 1e-4, N = 16, L = 5."""
    return cached_table("coulomb_eps1e-4_N16_L5", grid16,
                        KernelSpec(-3.0, GrazingRutherford(1e-4)))


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

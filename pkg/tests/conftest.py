import numpy as np
import pytest

from tohm.lattice import FieldSample, build_lattice


def grid_field(values, mask=None) -> FieldSample:
    """Field on a unit-spaced lattice whose shape is that of ``values``."""
    values = np.asarray(values, dtype=float)
    lat = build_lattice([np.arange(n, dtype=float) for n in values.shape], mask=mask)
    return FieldSample(lat, values[lat.included_grid()] if mask is not None else values.ravel())


# Figure-style 2-D excursion sets on a 7x9 grid (1 = above threshold).
FIG_ONE_BLOB = np.array(
    [
        [0, 0, 0, 0, 0, 0, 0, 0, 0],
        [0, 1, 1, 1, 0, 0, 0, 0, 0],
        [0, 1, 1, 1, 1, 0, 0, 0, 0],
        [0, 0, 1, 1, 1, 1, 0, 0, 0],
        [0, 0, 0, 1, 1, 0, 0, 0, 0],
        [0, 0, 0, 0, 0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0, 0, 0, 0, 0],
    ]
)
FIG_TWO_COMPONENTS = np.array(
    [
        [0, 0, 0, 0, 0, 0, 0, 0, 0],
        [0, 1, 1, 1, 0, 0, 0, 0, 0],
        [0, 1, 1, 1, 1, 0, 0, 0, 0],
        [0, 0, 1, 1, 1, 0, 0, 1, 0],
        [0, 0, 0, 1, 0, 0, 1, 1, 0],
        [0, 0, 0, 0, 0, 0, 1, 1, 0],
        [0, 0, 0, 0, 0, 0, 0, 0, 0],
    ]
)
# four components, one of which (a ring) has a hole: 4 - 1 = 3
FIG_WITH_HOLE = np.array(
    [
        [1, 1, 0, 0, 0, 0, 0, 0, 1],
        [1, 0, 0, 1, 1, 1, 1, 0, 0],
        [0, 0, 0, 1, 0, 0, 1, 0, 0],
        [0, 1, 0, 1, 0, 0, 1, 0, 0],
        [0, 1, 0, 1, 1, 1, 1, 0, 0],
        [0, 1, 0, 0, 0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0, 0, 0, 0, 0],
    ]
)
FIGURE_FIXTURES = [(FIG_ONE_BLOB, 1), (FIG_TWO_COMPONENTS, 2), (FIG_WITH_HOLE, 3)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

import numpy as np
import pytest

from nestedtrial import sim
from nestedtrial.data import CohortDataset


@pytest.fixture(scope="session")
def cohort():
    """Continuous-Z1 cohort, n = 2000, covariate-dependent sampling at q = 0.5."""
    sc = sim.published_scenario("continuous", 1000, 2000, "covariate_dependent", 0.5)
    return sim.generate_cohort(sc, np.random.default_rng(11))


@pytest.fixture
def tiny():
    """Minimal valid pattern: two randomized, one sampled, one unsampled."""
    return CohortDataset(
        s=[1, 1, 0, 0], d=[1, 1, 1, 0], a=[1, 0, np.nan, np.nan], y=[2.0, 1.0, np.nan, np.nan],
        x1=[[0.1], [0.2], [0.3], [0.4]], x2=[[1.0], [2.0], [3.0], [np.nan]],
        x1_names=("z1",), x2_names=("z2",),
    )


# Hand-worked eight-row example with fixed nuisance values.
# Per-row arm-1 terms: 6, 0.25, 2.5, 0.5, 1.5, 6, 1.25, -0.5 -> mean 2.1875.
ORACLE_ROWS = [
    # s, d, a, y, c, p, e, g, b
    (1, 1, 1, 3.0, 1.0, 0.5, 0.5, 2.0, 1.5),
    (1, 1, 1, 1.0, 1.0, 0.8, 0.5, 1.5, 1.0),
    (1, 1, 0, 4.0, 1.0, 0.4, 0.5, 2.5, 2.0),
    (1, 1, 0, 0.0, 1.0, 0.25, 0.5, 0.5, 1.0),
    (0, 1, None, None, 0.5, 0.2, 0.5, 1.0, 0.5),
    (0, 1, None, None, 0.25, 0.1, 0.5, 3.0, 2.0),
    (0, 0, None, None, 0.5, None, 0.5, None, 1.25),
    (0, 0, None, None, 0.25, None, 0.5, None, -0.5),
]
ORACLE_PSI1 = 2.1875
ORACLE_TERMS1 = [6.0, 0.25, 2.5, 0.5, 1.5, 6.0, 1.25, -0.5]


def _col(i):
    return np.array([np.nan if r[i] is None else r[i] for r in ORACLE_ROWS], dtype=float)


@pytest.fixture
def oracle():
    """``(data, fixed nuisance)`` for the eight-row example; arm 0 reuses g and b."""
    from nestedtrial.nuisance import FixedNuisance

    s, d = _col(0).astype(int), _col(1).astype(int)
    x2 = np.where(d == 1, np.arange(8.0), np.nan)[:, None]
    data = CohortDataset(s=s, d=d, a=_col(2), y=_col(3), x1=np.linspace(0, 1, 8)[:, None],
                         x2=x2, x1_names=("z1",), x2_names=("z2",))
    g, b, e = _col(7), _col(8), _col(6)
    fixed = FixedNuisance(c=_col(4), p=_col(5), e={1: e, 0: e}, g={1: g, 0: g}, b={1: b, 0: b})
    return data, fixed


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

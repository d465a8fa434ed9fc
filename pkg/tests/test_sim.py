import csv
import json

import numpy as np
import pytest
from scipy.special import expit

from nestedtrial import sim
from nestedtrial.data import validate
from nestedtrial.errors import BracketFailure, ConfigError
from nestedtrial.estimator import estimate_psi, ic_standard_error
from nestedtrial.nuisance import NuisanceValues


@pytest.fixture(scope="module")
def million():
    sc = sim.published_scenario("continuous", 1000, 5000, "covariate_dependent", 0.3)
    sc = sim.Scenario(**{**sc.to_dict(), "n": 1_000_000})
    return sc, sim.generate_cohort(sc, 7)


def test_hidden_outcome_means(million):
    sc, gen = million
    truth = sc.truths()
    se = 1 / np.sqrt(sc.n)
    assert abs(gen.y1.mean() - truth["psi(1)"]) < 4 * se * np.sqrt(2)
    assert abs(gen.y0.mean() - truth["psi(0)"]) < 4 * se * np.sqrt(5)
    assert truth["psi(0)"] == 1.0
    bin_sc = sim.published_scenario("binary", 1000, 2000, "simple_random", 0.5)
    assert bin_sc.truths()["psi(0)"] == 1.5


def test_identification_with_true_nuisance(million):
    """True c, p, e, g and an arbitrary b recover the cohort mean."""
    sc, gen = million
    data, z = gen.data, gen.z
    p = expit(sc.gamma0 + z.sum(axis=1))
    c = np.where(data.s == 1, 1.0, gen.c_true)
    zc = np.column_stack([np.ones(sc.n), z])
    for arm, theta in ((1, sc.theta1), (0, sc.theta0)):
        g = zc @ np.asarray(theta)
        vals = NuisanceValues(c=c, p=p, e=np.full(sc.n, 0.5), g=g, b=np.zeros(sc.n))
        est = estimate_psi(data, arm, vals)
        se = ic_standard_error(est.ic)
        assert abs(est.estimate - sc.truths()[f"psi({arm})"]) < 4 * se


def test_generated_structure(million):
    sc, gen = million
    data = gen.data
    validate(data)
    s = data.s == 1
    assert abs(s.mean() - 0.2) < 0.002
    assert abs(np.mean(data.a[s]) - 0.5) < 0.005
    q_hat = np.mean(data.d[~s])
    assert abs(q_hat - 0.3) < 0.003
    # hidden outcome equals the observed one in the trial
    y_obs = np.where(data.a[s] == 1, gen.y1[s], gen.y0[s])
    np.testing.assert_array_equal(y_obs, data.y[s])


def test_trial_size_near_target():
    sc = sim.published_scenario("continuous", 1000, 2000, "covariate_dependent", 0.5)
    sizes = [int(np.sum(sim.generate_cohort(sc, k).data.s)) for k in range(10)]
    assert all(abs(t - 1000) < 4 * np.sqrt(2000 * 0.25) for t in sizes)


def test_census_shares_columns(cohort):
    np.testing.assert_array_equal(cohort.census.x1, cohort.data.x1)
    np.testing.assert_array_equal(cohort.census.y, cohort.data.y)
    assert cohort.census.is_census
    m = cohort.data.d == 1
    np.testing.assert_array_equal(cohort.census.x2[m], cohort.data.x2[m])


def test_same_seed_same_cohort():
    sc = sim.published_scenario("binary", 1000, 2000, "simple_random", 0.4)
    a, b = sim.generate_cohort(sc, 3), sim.generate_cohort(sc, 3)
    assert a.data.equals(b.data)


@pytest.mark.parametrize("key", [("continuous", 1000, 5000), ("continuous", 1000, 10000),
                                 ("continuous", 2000, 5000), ("binary", 1000, 2000),
                                 ("binary", 1000, 5000), ("binary", 2000, 5000)])
def test_published_intercepts_hit_targets(key):
    target, gamma0, zetas = sim.PUBLISHED_INTERCEPTS[key]
    draws = 1_000_000
    assert abs(sim.marginal_participation(gamma0, key[0], draws, seed=5) - target) < 0.002
    for q, zeta in zip((0.1, 0.5, 0.9), (zetas[0], zetas[4], zetas[8])):
        got = sim.marginal_sampling(zeta, gamma0, key[0], draws, seed=5)
        assert abs(got - q) < 0.002


def test_solve_intercept_roundtrip():
    g = sim.solve_participation_intercept(0.2, "continuous", n_draws=400_000, seed=1)
    assert abs(g - (-2.055969)) < 0.02
    z = sim.solve_sampling_intercept(0.5, g, "continuous", n_draws=400_000, seed=1)
    assert abs(z - 0.1408870) < 0.02


def test_bisect_bracket_failure():
    with pytest.raises(BracketFailure):
        sim.bisect_increasing(lambda x: 0.5, 0.9)
    assert abs(sim.bisect_increasing(lambda x: x, 0.25) - 0.25) < 1e-8


def test_scenario_validation():
    with pytest.raises(ConfigError):
        sim.Scenario(1000, 2000, sampling_kind="covariate_dependent")
    with pytest.raises(ConfigError):
        sim.published_scenario("continuous", 1000, 2000, "covariate_dependent", 0.35)
    sc = sim.published_scenario("continuous", 1000, 2000, "covariate_dependent", 0.5)
    assert sim.Scenario.from_dict(json.loads(json.dumps(sc.to_dict()))) == sc


def test_metrics_divisors():
    v = np.array([1.0, 2.0, 3.0, 6.0])
    bias, var, mse, R, mc = sim.metrics(v, 2.0)
    assert bias == 1.0 and R == 4
    assert var == pytest.approx(14 / 3, abs=1e-12)
    assert mse == pytest.approx((1 + 0 + 1 + 16) / 4, abs=1e-12)
    assert mc == pytest.approx(np.sqrt(var / 4), abs=1e-12)


def test_grid_and_emit(tmp_path):
    scs = sim.bundled_grid("continuous_covariate_dependent_t1000_n2000")
    assert [s.marginal_q for s in scs] == list(sim.Q_GRID)
    rows = sim.run_grid(scs[:2], 4, 1)
    assert len(rows) == 3 * 3
    files = sim.emit_tables(rows, tmp_path, layout="both", metadata={"seed": 1})
    names = {f.name for f in files}
    assert "metrics.csv" in names and "variance_continuous_covariate_dependent.csv" in names
    back = sim.read_long_csv(tmp_path / "metrics.csv")
    assert back == rows
    with open(tmp_path / "bias_continuous_covariate_dependent.csv") as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["estimand", "trial_size", "n", "0.1", "0.2", "1"]
    assert len(table) == 4


def test_shared_draws_across_q():
    """Every q cell sees the same cohort; only D differs, nested in q."""
    a = sim.published_scenario("continuous", 1000, 2000, "covariate_dependent", 0.2)
    b = sim.published_scenario("continuous", 1000, 2000, "covariate_dependent", 0.8)
    assert a.cohort_key == b.cohort_key
    ga, gb = sim.generate_cohort(a, 4), sim.generate_cohort(b, 4)
    assert ga.census.equals(gb.census)
    assert np.all(ga.data.d <= gb.data.d)


def test_simulate_deterministic_across_threads():
    scs = sim.bundled_grid("binary_simple_random_t1000_n2000")[:2]
    one = sim.simulate_replicates(scs, 4, 9, threads=1)
    two = sim.simulate_replicates(scs, 4, 9, threads=2)
    np.testing.assert_array_equal(one.sub, two.sub)
    np.testing.assert_array_equal(one.nosub_se, two.nosub_se)

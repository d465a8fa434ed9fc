import numpy as np
import pytest

from conftest import ORACLE_PSI1, ORACLE_TERMS1
from nestedtrial import sim
from nestedtrial.errors import DegenerateWeight, EmptyArm, MismatchedData, NotCensus
from nestedtrial.estimator import (
    InfluenceCurve,
    analyze,
    avar_components,
    bootstrap,
    contrast,
    estimate_psi,
    estimate_psi_nosub,
    ic_standard_error,
    wald_ci,
)
from nestedtrial.nuisance import FixedNuisance, NuisanceValues, fit_nuisance


@pytest.fixture(scope="module")
def cfg():
    sc = sim.published_scenario("continuous", 1000, 2000, "covariate_dependent", 0.5)
    return sim.working_models(sc)


def test_hand_oracle(oracle):
    data, fixed = oracle
    est = estimate_psi(data, 1, fixed)
    np.testing.assert_allclose(est.ic.values, ORACLE_TERMS1, atol=1e-12)
    assert abs(est.estimate - ORACLE_PSI1) < 1e-10


def test_hand_oracle_arm0(oracle):
    data, fixed = oracle
    # arm 0 rows 3, 4: 2 + 0.5 + 1.5/0.2 = 10 and 1 - 0.5 - 0.5/0.125 = -3.5
    want = [2.0, 1.5, 10.0, -3.5, 1.5, 6.0, 1.25, -0.5]
    est = estimate_psi(data, 0, fixed)
    np.testing.assert_allclose(est.ic.values, want, atol=1e-12)


def test_census_reduction(cohort, cfg):
    census = cohort.census
    nuis = fit_nuisance(census, cfg)
    for arm in (0, 1):
        sub = estimate_psi(census, arm, nuis)
        nos = estimate_psi_nosub(census, arm, nuis)
        assert abs(sub.estimate - nos.estimate) < 1e-12
        np.testing.assert_allclose(sub.ic.values, nos.ic.values, atol=1e-12)


def test_nosub_requires_census(cohort, cfg):
    nuis = fit_nuisance(cohort.data, cfg)
    with pytest.raises(NotCensus):
        estimate_psi_nosub(cohort.data, 1, nuis)


def test_constant_outcome_gives_constant(cohort, cfg):
    d = cohort.data
    y = np.where(d.s == 1, 4.25, np.nan)
    data = type(d)(s=d.s, d=d.d, a=d.a, y=y, x1=d.x1, x2=d.x2, x1_names=d.x1_names,
                   x2_names=d.x2_names)
    nuis = fit_nuisance(data, cfg)
    for arm in (0, 1):
        assert abs(estimate_psi(data, arm, nuis).estimate - 4.25) < 1e-9
    boot = bootstrap(data, cfg, 5, 1)
    assert boot["estimands"]["psi(1)"]["se"] < 1e-9


def test_ic_mean_and_se(cohort, cfg):
    nuis = fit_nuisance(cohort.data, cfg)
    est = estimate_psi(cohort.data, 1, nuis)
    assert abs(np.mean(est.ic.values) - est.estimate) < 1e-12
    cen = ic_standard_error(est.ic)
    lit = ic_standard_error(est.ic, "paper_literal")
    assert lit >= cen
    n = len(est.ic)
    assert abs(cen - np.std(est.ic.values) / np.sqrt(n)) < 1e-12
    lo, hi = wald_ci(est.estimate, cen)
    assert abs((hi - lo) / 2 - 1.959963984540054 * cen) < 1e-12


def test_contrast(cohort, cfg):
    nuis = fit_nuisance(cohort.data, cfg)
    e1 = estimate_psi(cohort.data, 1, nuis)
    e0 = estimate_psi(cohort.data, 0, nuis)
    self_con = contrast(e1, e1)
    assert self_con.estimate == 0.0
    assert ic_standard_error(self_con.ic) == 0.0
    con = contrast(e1, e0)
    assert con.estimate == e1.estimate - e0.estimate
    other = fit_nuisance(cohort.data, cfg)
    with pytest.raises(MismatchedData):
        contrast(e1, estimate_psi(cohort.data, 0, other))


def test_weight_floor_and_clip(oracle):
    data, fixed = oracle
    p = fixed.p.copy()
    p[0] = 0.0
    bad = FixedNuisance(c=fixed.c, p=p, e=fixed.e, g=fixed.g, b=fixed.b)
    with pytest.raises(DegenerateWeight):
        estimate_psi(data, 1, bad)
    est = estimate_psi(data, 1, bad, clip=0.5)
    assert est.n_clipped == 1
    # p * e is raised to the clip value
    assert abs(est.ic.values[0] - (1.5 + 0.5 + 1.0 / 0.5)) < 1e-12


def test_empty_arm(oracle):
    data, fixed = oracle
    fixed2 = FixedNuisance(c=fixed.c, p=fixed.p, e={2: fixed.e[1]}, g={2: fixed.g[1]},
                           b={2: fixed.b[1]})
    with pytest.raises(EmptyArm):
        estimate_psi(data, 2, fixed2)


def test_avar_components(cohort, cfg):
    census_n = fit_nuisance(cohort.census, cfg)
    av = avar_components(cohort.census, 1, census_n)
    assert av["penalty_hat"] == 0.0
    nuis = fit_nuisance(cohort.data, cfg)
    av = avar_components(cohort.data, 1, nuis)
    assert av["avar2_hat"] >= av["avar1_hat"] > 0
    vals = nuis.values(cohort.data, 1)
    same = NuisanceValues(c=vals.c, p=vals.p, e=vals.e, g=vals.g, b=vals.g)
    assert avar_components(cohort.data, 1, same)["penalty_hat"] == 0.0


def test_avar_oracle(oracle):
    data, fixed = oracle
    av = avar_components(data, 1, fixed, v_hat=1.0)
    # measured rows with weights 1/c normalised: 1, 1, 1, 1, 2, 4 over 10
    w = np.array([1, 1, 1, 1, 2, 4]) / 10
    pe = np.array([.25, .4, .2, .125, .1, .05])
    g = np.array([2, 1.5, 2.5, .5, 1, 3])
    gap = g - np.array([1.5, 1, 2, 1, .5, 2])
    c = np.array([1, 1, 1, 1, .5, .25])
    avar1 = w @ (1 / pe) + w @ (g - w @ g) ** 2
    pen = w @ ((1 - c) / c * gap ** 2)
    assert abs(av["avar1_hat"] - avar1) < 1e-12
    assert abs(av["penalty_hat"] - pen) < 1e-12


def test_analyze_output(cohort, cfg):
    res = analyze(cohort.census, cfg, contrasts=[(1, 0)])
    out = res.to_dict()
    arm1 = out["arms"]["1"]
    assert abs(arm1["estimate"] - arm1["nosub"]["estimate"]) < 1e-12
    assert "1-0" in out["contrasts"]
    assert out["diagnostics"]["census"] is True


def test_bootstrap_deterministic_across_threads(cohort, cfg):
    a = bootstrap(cohort.data, cfg, 6, 99, contrasts=[(1, 0)], threads=1)
    b = bootstrap(cohort.data, cfg, 6, 99, contrasts=[(1, 0)], threads=2)
    assert a == b
    c = bootstrap(cohort.data, cfg, 6, 100, contrasts=[(1, 0)], threads=1)
    assert a != c
    assert set(a["estimands"]) == {"psi(1)", "psi(0)", "psi(1)-psi(0)"}


def test_influence_curve_centered():
    ic = InfluenceCurve(np.array([1.0, 3.0]), 2.0)
    np.testing.assert_array_equal(ic.centered, [-1.0, 1.0])

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nestedtrial import sim
from nestedtrial.data import (
    CohortDataset,
    ColumnSpec,
    SubsamplingDesign,
    load_csv,
    mask_by_subsampling,
    save_csv,
    summarize,
)
from nestedtrial.errors import (
    ColumnTypeError,
    ConfigError,
    InfeasibleDesign,
    MissingColumn,
    PatternViolation,
    PreconditionError,
)

SPEC = ColumnSpec(s="s", d="d", a="a", y="y", x1=("z1",), x2=("z2",))
HEADER = "s,d,a,y,z1,z2\n"


def write(tmp_path, body, name="data.csv"):
    path = tmp_path / name
    path.write_text(HEADER + body)
    return path


def test_load_minimal_pattern(tmp_path):
    path = write(tmp_path, "1,1,1,2.5,0.1,1\n1,1,0,1.5,0.2,2\n0,1,,,0.3,3\n0,0,NA,NA,0.4,\n")
    data = load_csv(path, SPEC)
    assert data.n_units == 4
    assert np.isnan(data.x2[3, 0])
    assert list(data.d) == [1, 1, 1, 0]


@pytest.mark.parametrize("row, rule", [
    ("1,0,1,2.0,0.1,\n", "s=1 => d=1"),
    ("0,0,,,0.1,5\n", "d=0 => x2 missing"),
    ("0,1,,,0.1,\n", "d=1 => x2 observed"),
    ("0,1,1,,0.1,3\n", "s=0 => a, y missing"),
    ("1,1,1,,0.1,3\n", "s=1 => a, y observed"),
    ("0,1,,,NA,3\n", "x1 never missing"),
])
def test_pattern_violations(tmp_path, row, rule):
    path = write(tmp_path, "1,1,1,2.5,0.1,1\n" + row)
    with pytest.raises(PatternViolation) as err:
        load_csv(path, SPEC)
    assert err.value.details["row"] == 1
    assert err.value.details["rule"] == rule


def test_missing_column_and_type_errors(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("s,d,a,y,z1\n1,1,1,2,0\n")
    with pytest.raises(MissingColumn):
        load_csv(path, SPEC)
    path = write(tmp_path, "1,1,1,abc,0.1,1\n")
    with pytest.raises(ColumnTypeError):
        load_csv(path, SPEC)
    with pytest.raises(TypeError):
        load_csv(path, SPEC)


def test_non_binary_indicator(tmp_path):
    path = write(tmp_path, "0.5,1,,,0.1,1\n")
    with pytest.raises(PatternViolation):
        load_csv(path, SPEC)


def test_dataset_is_immutable(tiny):
    with pytest.raises(ValueError):
        tiny.s[0] = 0


def test_generated_cohort_round_trips_through_csv(tmp_path, cohort):
    spec = save_csv(cohort.data, tmp_path / "gen.csv")
    back = load_csv(tmp_path / "gen.csv", spec)
    assert back.equals(cohort.data)
    # canonical formatting is a fixed point
    save_csv(back, tmp_path / "again.csv", spec)
    assert (tmp_path / "gen.csv").read_bytes() == (tmp_path / "again.csv").read_bytes()


def test_column_spec_json(tmp_path):
    path = tmp_path / "cols.json"
    path.write_text(json.dumps({"s": "s", "d": "d", "a": "a", "y": "y", "x1": ["z1"],
                                "x2": ["z2"]}))
    assert ColumnSpec.from_json(path) == SPEC
    with pytest.raises(ConfigError):
        ColumnSpec.from_dict({"s": "s", "d": "d", "a": "a", "y": "y", "x1": []})
    with pytest.raises(ConfigError):
        ColumnSpec(s="s", d="s", a="a", y="y", x1=("z1",))


def _census(n, seed, two_levels=False):
    rng = np.random.default_rng(seed)
    s = (rng.random(n) < 0.3).astype(int)
    lvl = (rng.random(n) < 0.5).astype(float) if two_levels else rng.standard_normal(n)
    a = np.where(s == 1, (rng.random(n) < 0.5) * 1.0, np.nan)
    y = np.where(s == 1, rng.standard_normal(n), np.nan)
    return CohortDataset(s=s, d=np.ones(n), a=a, y=y, x1=lvl[:, None],
                         x2=rng.standard_normal((n, 1)), x1_names=("lvl",), x2_names=("z2",))


def test_mask_census_design_is_identity():
    full = _census(500, 1)
    out = mask_by_subsampling(full, SubsamplingDesign("census"), seed=3)
    assert out.equals(full)


def test_mask_simple_random_rate():
    full = _census(143_000, 2)
    out = mask_by_subsampling(full, SubsamplingDesign("simple_random", 0.5), seed=4)
    nontrial = full.s == 0
    assert nontrial.sum() > 100_000
    assert abs(out.d[nontrial].mean() - 0.5) < 0.01
    assert np.all(out.d[full.s == 1] == 1)
    assert np.all(np.isnan(out.x2[out.d == 0]))
    assert np.array_equal(out.x2[out.d == 1], full.x2[out.d == 1])


def test_mask_dependence_solves_level_probabilities():
    # Hand solution: p_hi = 2 p_lo and 0.5 p_hi + 0.5 p_lo = q, so p_lo = q / 1.5.
    lvl = np.array([1.0, 0.0] * 50)
    n = len(lvl)
    full = CohortDataset(s=np.zeros(n), d=np.ones(n), a=np.full(n, np.nan), y=np.full(n, np.nan),
                         x1=lvl[:, None], x2=np.zeros((n, 1)), x1_names=("lvl",),
                         x2_names=("z2",))
    design = SubsamplingDesign("covariate_dependent", 0.7, {1: 2, 0: 1}, "lvl")
    probs = design.level_probabilities(full)
    assert probs[1.0] == pytest.approx(0.9333333333, abs=1e-9)
    assert probs[0.0] == pytest.approx(0.4666666667, abs=1e-9)
    with pytest.raises(InfeasibleDesign):
        mask_by_subsampling(full, SubsamplingDesign("covariate_dependent", 0.8, {1: 2, 0: 1},
                                                    "lvl"), seed=1)


def test_mask_dependence_empirical_rates():
    full = _census(60_000, 5, two_levels=True)
    design = SubsamplingDesign("covariate_dependent", 0.4, {1: 2, 0: 1}, "lvl")
    out = mask_by_subsampling(full, design, seed=9)
    nontrial = full.s == 0
    lvl = full.x1[:, 0]
    hi = out.d[nontrial & (lvl == 1)].mean()
    lo = out.d[nontrial & (lvl == 0)].mean()
    assert abs(hi / lo - 2) < 0.1
    assert abs(out.d[nontrial].mean() - 0.4) < 0.01


def test_mask_rejects_non_census(tiny):
    with pytest.raises(PreconditionError):
        mask_by_subsampling(tiny, SubsamplingDesign("simple_random", 0.5), seed=0)


def test_mask_same_seed_is_deterministic():
    full = _census(1000, 7)
    design = SubsamplingDesign("simple_random", 0.3)
    a = mask_by_subsampling(full, design, seed=12)
    b = mask_by_subsampling(full, design, seed=12)
    assert a.equals(b)


def test_design_validation():
    with pytest.raises(ConfigError):
        SubsamplingDesign("census", 0.5)
    with pytest.raises(ConfigError):
        SubsamplingDesign("simple_random", 0.0)
    with pytest.raises(ConfigError):
        SubsamplingDesign("covariate_dependent", 0.5)


def test_summarize_counts(tiny):
    out = summarize(tiny, arms=[0, 1, 2])
    assert out["n_units"] == 4 and out["n_trial"] == 2 and out["n_measured"] == 3
    assert out["arm_counts"] == {0: 1, 1: 1, 2: 0}
    assert out["empty_arms"] == [2]
    assert out["columns"]["z2"] == {"observed": 3, "mean": 2.0}


def test_summarize_all_trial():
    data = CohortDataset(s=[1, 1], d=[1, 1], a=[1, 0], y=[0.0, 1.0], x1=[[0.0], [1.0]],
                         x2=np.empty((2, 0)), x1_names=("z1",))
    assert summarize(data)["n_trial"] == data.n_units


def test_summarize_generated_trial_size():
    sc = sim.published_scenario("continuous", 1000, 2000, "covariate_dependent", 0.5)
    data = sim.generate_cohort(sc, 123).data
    assert abs(summarize(data)["n_trial"] - 1000) < 4 * np.sqrt(2000 * 0.25)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans(), st.booleans()), min_size=1, max_size=30))
def test_validation_matches_rules(rows):
    """Any (s, d, x2-present) combination is accepted exactly when it obeys the pattern."""
    s = [int(r[0]) for r in rows]
    d = [int(r[1]) for r in rows]
    x2 = [[1.0] if r[2] else [np.nan] for r in rows]
    a = [1.0 if si else np.nan for si in s]
    y = [0.5 if si else np.nan for si in s]
    ok = all((not si or di) and (bool(di) == r[2]) for si, di, r in zip(s, d, rows))
    kwargs = dict(s=s, d=d, a=a, y=y, x1=[[0.0]] * len(rows), x2=x2, x1_names=("z1",),
                  x2_names=("z2",))
    if ok:
        CohortDataset(**kwargs)
    else:
        with pytest.raises(PatternViolation):
            CohortDataset(**kwargs)

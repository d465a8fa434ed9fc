"""Monte Carlo study of the sub-sampling estimator.

Data are generated from three covariates ``Z = (Z1, Z2, Z3)``; ``Z1`` is
stage-one (always measured) and ``(Z2, Z3)`` are stage-two. Trial
participation is logistic in ``Z`` with slopes 1, treatment is a fair coin
among participants, potential outcomes are linear in ``Z`` with standard
normal errors, and non-participants are sub-sampled either with probability
``expit(zeta0 + Z1)`` or by simple random sampling.

Every replicate draws all of its randomness, including one uniform per unit
for the sub-sampling step, from a stream keyed on ``(seed, replicate)``.
Cells that differ only in the sampling design or ``q`` therefore share the
same cohort, which couples comparisons across ``q``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from . import glm
from .data import CohortDataset
from .errors import BracketFailure, ConfigError, NestedTrialError, PreconditionError
from .estimator import InfluenceCurve, estimate_psi, estimate_psi_nosub, ic_standard_error
from .glm import DesignSpec
from .nuisance import NuisanceConfig, fit_nuisance
from .parallel import parallel_map, stream

Q_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
ESTIMANDS = ("psi(1)", "psi(0)", "psi(1)-psi(0)")
THETA0 = (1.0, 1.0, 1.0, 1.0)
THETA1 = (0.0, 0.0, 0.0, 1.0)

# Published intercepts: (z1_kind, trial_size, n) -> (Pr[S=1], gamma0, zeta0 for q = 0.1..0.9)
_CONT_05 = (-2.1953125, -1.2929688, -0.6761070, -0.1483765, 0.3237305, 0.8099365,
            1.3345490, 1.9550781, 2.8554688)
_CONT_02 = (-2.3974609, -1.4904175, -0.8675537, -0.3417969, 0.1408870, 0.6245117,
            1.1464232, 1.7731247, 2.6875000)
_CONT_01 = (-2.47167969, -1.56103516, -0.93359375, -0.40990990, 0.07421875, 0.56357574,
            1.08593750, 1.71679688, 2.62744141)
_CONT_04 = (-2.2607422, -1.3611903, -0.7357330, -0.2153320, 0.2639160, 0.7441406,
            1.2669601, 1.8906250, 2.7956066)
_BIN_05 = (-2.70117188, -1.87109375, -1.30666184, -0.83532715, -0.40234375, 0.02183144,
           0.48690367, 1.04687500, 1.88330555)
_BIN_02 = (-2.7578125, -1.9258423, -1.3582602, -0.8906250, -0.4609375, -0.0312500,
           0.4363470, 0.9983544, 1.8328857)
_BIN_01 = (-2.77343750, -1.93980408, -1.37890625, -0.91027832, -0.48046875, -0.05080032,
           0.41790675, 0.98059082, 1.81640625)
_BIN_04 = (-2.7205811, -1.8925781, -1.3217773, -0.8562012, -0.4282227, 0.0078125,
           0.4677734, 1.0312500, 1.8676951)

PUBLISHED_INTERCEPTS = {
    ("continuous", 1000, 2000): (0.5, 0.0, _CONT_05),
    ("continuous", 1000, 5000): (0.2, -2.055969, _CONT_02),
    ("continuous", 1000, 10000): (0.1, -3.154297, _CONT_01),
    ("continuous", 2000, 5000): (0.4, -0.612793, _CONT_04),
    ("continuous", 2000, 10000): (0.2, -2.055969, _CONT_02),
    ("continuous", 2000, 20000): (0.1, -3.154297, _CONT_01),
    ("binary", 1000, 2000): (0.5, -0.4973936, _BIN_05),
    ("binary", 1000, 5000): (0.2, -2.4145508, _BIN_02),
    ("binary", 1000, 10000): (0.1, -3.460083, _BIN_01),
    ("binary", 2000, 5000): (0.4, -1.072715, _BIN_04),
    ("binary", 2000, 10000): (0.2, -2.4145508, _BIN_02),
    ("binary", 2000, 20000): (0.1, -3.460083, _BIN_01),
}
SIZE_ROWS = ((1000, 2000), (1000, 5000), (1000, 10000), (2000, 5000), (2000, 10000),
             (2000, 20000))


@dataclass(frozen=True)
class Scenario:
    avg_trial_size: int
    n: int
    z1_kind: str = "continuous"
    sampling_kind: str = "covariate_dependent"
    marginal_q: float = 0.5
    gamma0: float = 0.0
    zeta0: float | None = None
    theta0: tuple[float, ...] = THETA0
    theta1: tuple[float, ...] = THETA1
    error_sd: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "theta0", tuple(self.theta0))
        object.__setattr__(self, "theta1", tuple(self.theta1))
        if self.z1_kind not in ("continuous", "binary"):
            raise ConfigError(f"unknown z1 kind {self.z1_kind!r}")
        if self.sampling_kind not in ("covariate_dependent", "simple_random", "census"):
            raise ConfigError(f"unknown sampling kind {self.sampling_kind!r}")
        if not 0 < self.marginal_q <= 1:
            raise ConfigError("marginal_q must lie in (0, 1]")
        if self.sampling_kind == "census" and self.marginal_q != 1:
            raise ConfigError("census scenarios have marginal_q = 1")
        if self.sampling_kind == "covariate_dependent" and self.zeta0 is None:
            raise ConfigError("covariate-dependent sampling needs zeta0")
        if len(self.theta0) != 4 or len(self.theta1) != 4:
            raise ConfigError("theta vectors have four entries (intercept, Z1, Z2, Z3)")

    @property
    def cohort_key(self):
        """Scenarios with equal keys generate identical cohorts for a given stream."""
        return (self.n, self.z1_kind, self.gamma0, self.theta0, self.theta1, self.error_sd)

    def truths(self) -> dict:
        ez1 = 0.0 if self.z1_kind == "continuous" else 0.5
        psi1 = self.theta1[0] + self.theta1[1] * ez1
        psi0 = self.theta0[0] + self.theta0[1] * ez1
        return {"psi(1)": psi1, "psi(0)": psi0, "psi(1)-psi(0)": psi1 - psi0}

    def to_dict(self) -> dict:
        out = asdict(self)
        out["theta0"], out["theta1"] = list(self.theta0), list(self.theta1)
        return out

    @classmethod
    def from_dict(cls, obj) -> "Scenario":
        return cls(**obj)


def published_scenario(z1_kind: str, avg_trial_size: int, n: int, sampling_kind: str,
                   q: float) -> Scenario:
    """Scenario cell with the published intercepts embedded."""
    try:
        _, gamma0, zetas = PUBLISHED_INTERCEPTS[(z1_kind, avg_trial_size, n)]
    except KeyError:
        raise ConfigError(f"no published scenario for {(z1_kind, avg_trial_size, n)}") from None
    zeta0 = None
    if sampling_kind == "census" or q == 1:
        sampling_kind, q = "census", 1.0
    elif sampling_kind == "covariate_dependent":
        k = int(round(q * 10)) - 1
        if not (0 <= k < 9 and abs(q - Q_GRID[k]) < 1e-9):
            raise ConfigError(f"published zeta0 exists only for q in {Q_GRID}")
        zeta0 = zetas[k]
    return Scenario(avg_trial_size, n, z1_kind, sampling_kind, float(q), gamma0, zeta0)


def published_grid(z1_kind: str, sampling_kind: str, sizes=SIZE_ROWS, qs=Q_GRID) -> list[Scenario]:
    return [published_scenario(z1_kind, t, n, sampling_kind, q) for t, n in sizes for q in qs]


BUNDLED_GRIDS = {
    f"{z1}_{kind}_t{t}_n{n}": (z1, kind, ((t, n),))
    for z1 in ("continuous", "binary")
    for kind in ("covariate_dependent", "simple_random")
    for t, n in SIZE_ROWS
}
BUNDLED_GRIDS.update({
    f"{z1}_{kind}": (z1, kind, SIZE_ROWS)
    for z1 in ("continuous", "binary")
    for kind in ("covariate_dependent", "simple_random")
})
BUNDLED_GRIDS["table_e3_row1"] = BUNDLED_GRIDS["continuous_covariate_dependent_t1000_n2000"]


def bundled_grid(name: str) -> list[Scenario]:
    """Named grid: every q in 0.1..0.9 for the listed size rows."""
    if name not in BUNDLED_GRIDS:
        raise ConfigError(f"unknown grid {name!r}; known: {sorted(BUNDLED_GRIDS)}")
    z1, kind, sizes = BUNDLED_GRIDS[name]
    return published_grid(z1, kind, sizes)


# ---------------------------------------------------------------------------
# data generation


@dataclass(frozen=True, eq=False)
class GeneratedCohort:
    data: CohortDataset
    census: CohortDataset
    y0: np.ndarray
    y1: np.ndarray
    z: np.ndarray
    u_d: np.ndarray
    c_true: np.ndarray


def _draw(scenario: Scenario, rng: np.random.Generator) -> dict:
    n = scenario.n
    if scenario.z1_kind == "continuous":
        z1 = rng.standard_normal(n)
    else:
        z1 = (rng.random(n) < 0.5).astype(float)
    z2 = rng.standard_normal(n)
    z3 = rng.standard_normal(n)
    return {
        "z": np.column_stack([z1, z2, z3]),
        "u_s": rng.random(n),
        "u_a": rng.random(n),
        "eps0": rng.standard_normal(n),
        "eps1": rng.standard_normal(n),
        "u_d": rng.random(n),
    }


def sampling_probability(scenario: Scenario, z1: np.ndarray) -> np.ndarray:
    """True ``Pr[D = 1 | Z1, S = 0]``."""
    if scenario.sampling_kind == "census":
        return np.ones(len(z1))
    if scenario.sampling_kind == "simple_random":
        return np.full(len(z1), scenario.marginal_q)
    return expit(scenario.zeta0 + z1)


def build_census(scenario: Scenario, draws: dict):
    z = draws["z"]
    n = len(z)
    zc = np.column_stack([np.ones(n), z])
    s = (draws["u_s"] < expit(scenario.gamma0 + z.sum(axis=1))).astype(np.int8)
    a_all = (draws["u_a"] < 0.5).astype(float)
    y0 = zc @ np.asarray(scenario.theta0) + scenario.error_sd * draws["eps0"]
    y1 = zc @ np.asarray(scenario.theta1) + scenario.error_sd * draws["eps1"]
    trial = s == 1
    a = np.where(trial, a_all, np.nan)
    y = np.where(trial, np.where(a_all == 1, y1, y0), np.nan)
    census = CohortDataset(s=s, d=np.ones(n, dtype=np.int8), a=a, y=y, x1=z[:, :1],
                           x2=z[:, 1:], x1_names=("z1",), x2_names=("z2", "z3"))
    return census, y0, y1


def subsample(scenario: Scenario, census: CohortDataset, u_d: np.ndarray):
    c0 = sampling_probability(scenario, census.x1[:, 0])
    if scenario.sampling_kind == "census":
        return census, c0
    d = np.where(census.s == 1, 1, (u_d < c0).astype(np.int8))
    return census.with_d(d), c0


def generate_cohort(scenario: Scenario, rng) -> GeneratedCohort:
    """One cohort plus its hidden potential outcomes.

    ``rng`` is a ``numpy.random.Generator`` or anything accepted by
    ``numpy.random.default_rng``.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    draws = _draw(scenario, rng)
    census, y0, y1 = build_census(scenario, draws)
    data, c0 = subsample(scenario, census, draws["u_d"])
    return GeneratedCohort(data, census, y0, y1, draws["z"], draws["u_d"], c0)


# ---------------------------------------------------------------------------
# intercept calibration


def _calibration_draws(z1_kind, n_draws, seed, chunk=1_000_000):
    """Yield (z1, z2 + z3) in chunks; the same seed always gives the same draws."""
    rng = np.random.default_rng(seed)
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        z1 = rng.standard_normal(m) if z1_kind == "continuous" else (rng.random(m) < 0.5) * 1.0
        rest = rng.standard_normal(m) + rng.standard_normal(m)
        yield z1, rest
        done += m


class _Calibrator:
    """Common-random-number evaluation of marginal probabilities."""

    def __init__(self, z1_kind, n_draws=10_000_000, seed=20190101):
        parts = list(_calibration_draws(z1_kind, n_draws, seed))
        self.z1 = np.concatenate([p[0] for p in parts])
        self.lin = self.z1 + np.concatenate([p[1] for p in parts])

    def participation(self, gamma0):
        return float(np.mean(expit(gamma0 + self.lin)))

    def sampling(self, zeta0, gamma0):
        w = expit(-(gamma0 + self.lin))  # Pr[S = 0 | Z]
        return float(w @ expit(zeta0 + self.z1) / w.sum())


def bisect_increasing(f, target, lo=-20.0, hi=20.0, xtol=1e-9, max_iter=200):
    flo, fhi = f(lo) - target, f(hi) - target
    if flo > 0 or fhi < 0:
        raise BracketFailure(f"target {target} not bracketed on [{lo}, {hi}]")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < xtol:
            break
    return 0.5 * (lo + hi)


def marginal_participation(gamma0: float, z1_kind: str, n_draws=10_000_000, seed=20190101):
    return _Calibrator(z1_kind, n_draws, seed).participation(gamma0)


def marginal_sampling(zeta0: float, gamma0: float, z1_kind: str, n_draws=10_000_000,
                      seed=20190101):
    return _Calibrator(z1_kind, n_draws, seed).sampling(zeta0, gamma0)


def solve_participation_intercept(target: float, z1_kind: str, n_draws=10_000_000,
                                  seed=20190101) -> float:
    """Intercept giving marginal ``Pr[S = 1] = target`` by Monte Carlo bisection."""
    if not 0 < target < 1:
        raise PreconditionError("target must lie in (0, 1)")
    cal = _Calibrator(z1_kind, n_draws, seed)
    return bisect_increasing(cal.participation, target)


def solve_sampling_intercept(target: float, gamma0: float, z1_kind: str,
                             n_draws=10_000_000, seed=20190101) -> float:
    """Intercept giving ``Pr[D = 1 | S = 0] = target`` under participation intercept ``gamma0``."""
    if not 0 < target < 1:
        raise PreconditionError("target must lie in (0, 1)")
    cal = _Calibrator(z1_kind, n_draws, seed)
    return bisect_increasing(lambda z: cal.sampling(z, gamma0), target)


# ---------------------------------------------------------------------------
# replicate runs

MISSPECIFICATIONS = ("none", "wrong_g", "wrong_p", "both")
FULL = DesignSpec(("z1", "z2", "z3"))
REDUCED = DesignSpec(("z1",))
PSEUDO = DesignSpec(("z1", "s", "z1:s"))


def working_models(scenario: Scenario, misspecification: str = "none",
                   sampling_mode: str | None = None,
                   pseudo: DesignSpec = PSEUDO) -> NuisanceConfig:
    """Working models used in the study.

    ``c`` is a logistic fit in ``Z1`` for covariate-dependent sampling and the
    observed fraction for simple random sampling; ``e`` is the known 0.5.
    """
    if misspecification not in MISSPECIFICATIONS:
        raise ConfigError(f"misspecification must be one of {MISSPECIFICATIONS}")
    wrong_g = misspecification in ("wrong_g", "both")
    wrong_p = misspecification in ("wrong_p", "both")
    if sampling_mode is None:
        sampling_mode = "fitted" if scenario.sampling_kind == "covariate_dependent" else "empirical"
    sampling_design = REDUCED
    if sampling_mode == "design":
        sampling_design = lambda d, sc=scenario: sampling_probability(sc, d.x1[:, 0])  # noqa: E731
    return NuisanceConfig(
        arms=(1, 0),
        participation=REDUCED if wrong_p else FULL,
        outcome=REDUCED if wrong_g else FULL,
        pseudo=pseudo,
        sampling_mode=sampling_mode,
        sampling_design=sampling_design,
        treatment_mode="known",
        treatment_probs={1: 0.5, 0: 0.5},
    )


@dataclass(frozen=True)
class RunSettings:
    misspecification: str = "none"
    sampling_mode: str | None = None
    pseudo: DesignSpec = PSEUDO
    ic_mode: str = "centered"


def _estimates(data, config, sub: bool, ic_mode):
    nuis = fit_nuisance(data, config)
    fn = estimate_psi if sub else estimate_psi_nosub
    e1, e0 = fn(data, 1, nuis), fn(data, 0, nuis)
    est = np.array([e1.estimate, e0.estimate, e1.estimate - e0.estimate])
    ic_con = e1.ic.values - e0.ic.values
    se = np.array([ic_standard_error(e1.ic, ic_mode), ic_standard_error(e0.ic, ic_mode),
                   ic_standard_error(InfluenceCurve(ic_con, est[2]), ic_mode)])
    return est, se


def _replicate(args):
    scenarios, settings, seed, index = args
    rng = np.random.default_rng(stream(seed, index))
    draws = _draw(scenarios[0], rng)
    census, _, _ = build_census(scenarios[0], draws)
    k = len(scenarios)
    sub_est = np.full((k, 3), np.nan)
    sub_se = np.full((k, 3), np.nan)
    errors = []
    base = replace(scenarios[0], sampling_kind="census", marginal_q=1.0, zeta0=None)
    try:
        cfg = working_models(base, settings.misspecification, settings.sampling_mode,
                             settings.pseudo)
        nos_est, nos_se = _estimates(census, cfg, False, settings.ic_mode)
    except NestedTrialError as exc:
        nos_est = nos_se = np.full(3, np.nan)
        errors.append(("nosub", exc.code))
    for j, sc in enumerate(scenarios):
        try:
            data, _ = subsample(sc, census, draws["u_d"])
            cfg = working_models(sc, settings.misspecification, settings.sampling_mode,
                                 settings.pseudo)
            sub_est[j], sub_se[j] = _estimates(data, cfg, True, settings.ic_mode)
        except NestedTrialError as exc:
            errors.append((j, exc.code))
    return sub_est, sub_se, nos_est, nos_se, errors


@dataclass
class ReplicateDraws:
    """Per-replicate estimates for a family of scenarios sharing one cohort design."""

    scenarios: list
    sub: np.ndarray        # (R, k, 3)
    sub_se: np.ndarray     # (R, k, 3)
    nosub: np.ndarray      # (R, 3)
    nosub_se: np.ndarray   # (R, 3)
    failures: list


def simulate_replicates(scenarios: Sequence[Scenario], R: int, seed: int, *,
                        settings: RunSettings = RunSettings(), threads: int = 1,
                        max_failure_rate: float = 0.01) -> ReplicateDraws:
    """Run ``R`` replicates for scenarios that share a cohort design.

    Each replicate generates one cohort, computes the census estimator once
    and the sub-sampling estimator for every scenario.
    """
    if R < 1:
        raise PreconditionError("need at least one replicate")
    scenarios = list(scenarios)
    keys = {sc.cohort_key for sc in scenarios}
    if len(keys) != 1:
        raise ConfigError("scenarios in one run must share n, z1 kind, gamma0 and thetas")
    jobs = [(scenarios, settings, seed, r) for r in range(R)]
    out = parallel_map(_replicate, jobs, threads)
    sub = np.stack([o[0] for o in out])
    sub_se = np.stack([o[1] for o in out])
    nos = np.stack([o[2] for o in out])
    nos_se = np.stack([o[3] for o in out])
    failures = [(r, where, code) for r, o in enumerate(out) for where, code in o[4]]
    failed_reps = {r for r, _, _ in failures}
    if len(failed_reps) > max_failure_rate * R:
        raise NestedTrialError(f"{len(failed_reps)} of {R} replicates failed: {failures[:5]}")
    return ReplicateDraws(scenarios, sub, sub_se, nos, nos_se, failures)


@dataclass(frozen=True)
class MetricsRow:
    estimand: str
    trial_size: int
    n: int
    z1_kind: str
    sampling_kind: str
    q: float
    estimator: str
    bias: float
    variance: float
    mse: float
    replicates: int
    mc_se: float


METRIC_FIELDS = [f for f in MetricsRow.__dataclass_fields__]


def metrics(values: np.ndarray, truth: float) -> tuple[float, float, float, int, float]:
    """Bias, variance (divisor R - 1), MSE, R, Monte Carlo SE of the bias; ignores nan."""
    v = values[~np.isnan(values)]
    R = len(v)
    mean = math.fsum(v) / R
    bias = mean - truth
    var = math.fsum((v - mean) ** 2) / (R - 1) if R > 1 else float("nan")
    mse = math.fsum((v - truth) ** 2) / R
    return bias, var, mse, R, math.sqrt(var / R) if R > 1 else float("nan")


def summarize_runs(draws: ReplicateDraws) -> list[MetricsRow]:
    rows = []
    first = draws.scenarios[0]
    truths = first.truths()
    for j, sc in enumerate(draws.scenarios):
        for e, name in enumerate(ESTIMANDS):
            rows.append(MetricsRow(name, sc.avg_trial_size, sc.n, sc.z1_kind, sc.sampling_kind,
                                   sc.marginal_q, "sub", *metrics(draws.sub[:, j, e], truths[name])))
    for e, name in enumerate(ESTIMANDS):
        rows.append(MetricsRow(name, first.avg_trial_size, first.n, first.z1_kind, "census", 1.0,
                               "nosub", *metrics(draws.nosub[:, e], truths[name])))
    return rows


def run_scenario(scenario: Scenario, R: int, base_seed: int, misspecification: str = "none",
                 *, threads: int = 1, settings: RunSettings | None = None) -> list[MetricsRow]:
    """Bias, variance and MSE for one cell (sub-sampling and census estimators)."""
    settings = settings or RunSettings(misspecification=misspecification)
    return summarize_runs(simulate_replicates([scenario], R, base_seed, settings=settings,
                                              threads=threads))


def run_grid(scenarios: Iterable[Scenario], R: int, base_seed: int, *,
             settings: RunSettings = RunSettings(), threads: int = 1) -> list[MetricsRow]:
    """Run a grid, grouping cells that share a cohort design into one replicate loop."""
    groups: dict = {}
    for sc in scenarios:
        groups.setdefault(sc.cohort_key, []).append(sc)
    rows = []
    for group in groups.values():
        rows += summarize_runs(simulate_replicates(group, R, base_seed, settings=settings,
                                                   threads=threads))
    return rows


# ---------------------------------------------------------------------------
# output


def write_long_csv(rows: Sequence[MetricsRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])


def read_long_csv(path) -> list[MetricsRow]:
    types = {"trial_size": int, "n": int, "replicates": int, "estimand": str, "z1_kind": str,
             "sampling_kind": str, "estimator": str}
    with open(path, newline="") as fh:
        return [MetricsRow(**{k: types.get(k, float)(v) for k, v in rec.items()})
                for rec in csv.DictReader(fh)]


def appendix_grid(rows: Sequence[MetricsRow], metric: str) -> tuple[list, list[list]]:
    """Table with one row per (estimand, trial size, n) and columns q = 0.1..0.9 then census."""
    sub = {(r.estimand, r.trial_size, r.n, r.q): getattr(r, metric)
           for r in rows if r.estimator == "sub"}
    nos = {(r.estimand, r.trial_size, r.n): getattr(r, metric)
           for r in rows if r.estimator == "nosub"}
    sizes = sorted({(r.trial_size, r.n) for r in rows})
    qs = sorted({r.q for r in rows if r.estimator == "sub"})
    header = ["estimand", "trial_size", "n"] + [f"{q:g}" for q in qs] + ["1"]
    table = []
    for est in ESTIMANDS:
        for t, n in sizes:
            if (est, t, n) not in nos and not any((est, t, n, q) in sub for q in qs):
                continue
            row = [est, t, n] + [sub.get((est, t, n, q), float("nan")) for q in qs]
            table.append(row + [nos.get((est, t, n), float("nan"))])
    return header, table


def emit_tables(rows: Sequence[MetricsRow], out_dir, layout: str = "long_csv",
                metadata: dict | None = None) -> list[Path]:
    """Write metrics as a long CSV or as bias/variance/MSE grids; returns written paths."""
    if not rows:
        raise PreconditionError("no metrics to write")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if layout in ("long_csv", "both"):
        path = out_dir / "metrics.csv"
        write_long_csv(rows, path)
        written.append(path)
    if layout in ("appendix_grid", "both"):
        groups = sorted({(r.z1_kind, r.sampling_kind) for r in rows if r.estimator == "sub"})
        for z1, kind in groups:
            keep = [r for r in rows if r.z1_kind == z1 and
                    (r.sampling_kind == kind or r.estimator == "nosub")]
            for metric in ("bias", "variance", "mse"):
                header, table = appendix_grid(keep, metric)
                path = out_dir / f"{metric}_{z1}_{kind}.csv"
                with open(path, "w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(header)
                    for row in table:
                        w.writerow(row[:3] + [f"{v:.4f}" for v in row[3:]])
                written.append(path)
    if layout not in ("long_csv", "appendix_grid", "both"):
        raise ConfigError(f"unknown layout {layout!r}")
    if metadata is not None:
        path = out_dir / "metadata.json"
        path.write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n")
        written.append(path)
    return written

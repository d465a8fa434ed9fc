"""Doubly robust estimation of potential-outcome means under sub-sampling.

For arm ``a`` the estimator averages, over all cohort members,

    b_a(X1, S)
    + D / c(X1, S) * (g_a(X) - b_a(X1, S))
    + I(S = 1, A = a) / (p(X) e_a(X)) * (Y - g_a(X)).

Unmeasured rows (``D = 0``) contribute only the ``b_a`` term. On census data
``c = 1`` and ``D = 1`` and the sum collapses to the usual augmented
weighting estimator for nested trials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import norm

from .data import CohortDataset
from .errors import (
    DegenerateWeight,
    EmptyArm,
    MismatchedData,
    NestedTrialError,
    NotCensus,
    PreconditionError,
    TooManyFailures,
)
from .nuisance import NuisanceConfig, NuisanceSet, NuisanceValues, fit_nuisance
from .parallel import parallel_map, stream

WEIGHT_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class InfluenceCurve:
    """Per-unit contributions whose mean is the point estimate."""

    values: np.ndarray
    estimate: float

    @property
    def centered(self) -> np.ndarray:
        return self.values - self.estimate

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class ArmEstimate:
    arm: int
    estimate: float
    ic: InfluenceCurve
    estimator: str
    data: CohortDataset | None = field(default=None, repr=False)
    nuisance: object = field(default=None, repr=False)
    n_clipped: int = 0


def _values(data, arm, nuisance) -> NuisanceValues:
    if isinstance(nuisance, NuisanceValues):
        return nuisance
    return nuisance.values(data, arm)


def _check_floor(name, v, floor, clip):
    """Apply the probability floor. Returns ``(values, n_clipped)``."""
    low = v < floor
    if not low.any():
        return v, 0
    if clip is None:
        raise DegenerateWeight(f"{name} below {floor:g} for {int(low.sum())} units "
                               f"(min {np.min(v):.3g})", n_units=int(low.sum()))
    return np.maximum(v, clip), int(low.sum())


def _psi_terms(data: CohortDataset, arm: int, vals: NuisanceValues, *, sub: bool,
               floor: float, clip: float | None):
    s, d = data.s == 1, data.d == 1
    treated = s & (data.a == arm)
    if not treated.any():
        raise EmptyArm(f"no randomized rows in arm {arm}", arm=int(arm))
    pe, n_clip = _check_floor("p * e", (vals.p * vals.e)[treated], floor, clip)
    resid = np.zeros(data.n_units)
    resid[treated] = (data.y[treated] - vals.g[treated]) / pe
    if not sub:
        return vals.g + resid, n_clip
    c, n_c = _check_floor("c", vals.c[d], floor, clip)
    aug = np.zeros(data.n_units)
    aug[d] = (vals.g[d] - vals.b[d]) / c
    return vals.b + aug + resid, n_clip + n_c


def estimate_psi(data: CohortDataset, arm: int, nuisance, *, floor: float = WEIGHT_FLOOR,
                 clip: float | None = None) -> ArmEstimate:
    """Estimate ``E[Y^a]`` in the cohort from sub-sampled data.

    ``nuisance`` is a fitted :class:`NuisanceSet` or precomputed
    :class:`NuisanceValues`. Probabilities below ``floor`` raise
    :class:`DegenerateWeight` unless ``clip`` is given, in which case they
    are raised to ``clip`` and counted.
    """
    terms, n_clip = _psi_terms(data, arm, _values(data, arm, nuisance), sub=True, floor=floor,
                               clip=clip)
    psi = float(np.mean(terms))
    return ArmEstimate(int(arm), psi, InfluenceCurve(terms, psi), "sub", data, nuisance, n_clip)


def estimate_psi_nosub(data: CohortDataset, arm: int, nuisance, *,
                       floor: float = WEIGHT_FLOOR, clip: float | None = None) -> ArmEstimate:
    """Census-data estimator: ``g_a`` plus the weighted trial residual."""
    if not data.is_census:
        raise NotCensus("estimate_psi_nosub needs census data (d = 1 everywhere)")
    terms, n_clip = _psi_terms(data, arm, _values(data, arm, nuisance), sub=False, floor=floor,
                               clip=clip)
    psi = float(np.mean(terms))
    return ArmEstimate(int(arm), psi, InfluenceCurve(terms, psi), "nosub", data, nuisance, n_clip)


@dataclass(frozen=True, eq=False)
class ContrastEstimate:
    arms: tuple[int, int]
    estimate: float
    ic: InfluenceCurve
    estimator: str


def contrast(first: ArmEstimate, second: ArmEstimate) -> ContrastEstimate:
    """``psi(a) - psi(a')`` with per-unit influence values differenced."""
    if first.data is not second.data or len(first.ic) != len(second.ic) \
            or first.nuisance is not second.nuisance or first.estimator != second.estimator:
        raise MismatchedData("contrast arms must share dataset, nuisance set and estimator")
    est = first.estimate - second.estimate
    return ContrastEstimate((first.arm, second.arm), est,
                            InfluenceCurve(first.ic.values - second.ic.values, est),
                            first.estimator)


def ic_standard_error(ic: InfluenceCurve, mode: str = "centered") -> float:
    """Large-sample standard error from influence values.

    ``centered`` uses ``sqrt(sum((IC_i - psi)^2)) / n``. ``paper_literal``
    omits the centering, which is never smaller.
    """
    n = len(ic)
    if n < 2:
        raise PreconditionError("need at least two units for a standard error")
    if mode not in ("centered", "paper_literal"):
        raise ValueError(f"unknown IC mode {mode!r}")
    v = ic.centered if mode == "centered" else ic.values
    return math.sqrt(float(v @ v)) / n


def wald_ci(estimate: float, se: float, alpha: float = 0.05) -> tuple[float, float]:
    z = norm.ppf(1 - alpha / 2)
    return float(estimate - z * se), float(estimate + z * se)


def avar_components(data: CohortDataset, arm: int, nuisance, v_hat: float | None = None) -> dict:
    """Plug-in asymptotic variances without and with sub-sampling.

    Cohort expectations of quantities that need ``x2`` are taken over the
    measured rows with weights ``D / c`` (ratio-normalized). ``v_hat``
    defaults to the mean squared outcome residual in arm ``a``.
    """
    vals = _values(data, arm, nuisance)
    d = data.d == 1
    treated = (data.s == 1) & (data.a == arm)
    if not treated.any():
        raise EmptyArm(f"no randomized rows in arm {arm}", arm=int(arm))
    c = vals.c[d]
    pe = (vals.p * vals.e)[d]
    if np.min(c) < WEIGHT_FLOOR or np.min(pe) < WEIGHT_FLOOR:
        raise DegenerateWeight("nuisance probabilities below floor in variance plug-in")
    if v_hat is None:
        r = data.y[treated] - vals.g[treated]
        v_hat = float(np.mean(r * r))
    w = 1.0 / c
    w = w / w.sum()
    g = vals.g[d]
    gap = g - vals.b[d]
    term_weight = float(w @ (v_hat / pe))
    g_mean = float(w @ g)
    var_g = float(w @ (g - g_mean) ** 2)
    avar1 = term_weight + var_g
    penalty = float(w @ ((1 - c) / c * gap * gap))
    return {"avar1_hat": avar1, "penalty_hat": penalty, "avar2_hat": avar1 + penalty,
            "v_hat": v_hat}


# ---------------------------------------------------------------------------
# full analysis


@dataclass
class EstimateResult:
    arms: dict = field(default_factory=dict)
    contrasts: dict = field(default_factory=dict)
    alpha: float = 0.05
    avar: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    bootstrap: dict | None = None

    def to_dict(self) -> dict:
        out = {"alpha": self.alpha, "arms": self.arms, "contrasts": self.contrasts,
               "avar": self.avar, "diagnostics": self.diagnostics}
        if self.bootstrap is not None:
            out["bootstrap"] = self.bootstrap
        return out


def _summaries(est, alpha, ic_mode):
    se = ic_standard_error(est.ic, ic_mode)
    lo, hi = wald_ci(est.estimate, se, alpha)
    return {"estimate": est.estimate, "se": {"ic": se}, "ci": {"ic": [lo, hi]}}


def point_estimates(data: CohortDataset, nuisance, arms: Sequence[int],
                    contrasts: Sequence[tuple[int, int]] = (), clip=None) -> dict:
    """Point estimates keyed by estimand label (``psi(a)``, ``psi(a)-psi(b)``, ``*_nosub``)."""
    out = {}
    ests = {a: estimate_psi(data, a, nuisance, clip=clip) for a in arms}
    for a, e in ests.items():
        out[f"psi({a})"] = e.estimate
    for a, b in contrasts:
        out[f"psi({a})-psi({b})"] = ests[a].estimate - ests[b].estimate
    if data.is_census:
        nos = {a: estimate_psi_nosub(data, a, nuisance, clip=clip) for a in arms}
        for a, e in nos.items():
            out[f"psi({a})_nosub"] = e.estimate
        for a, b in contrasts:
            out[f"psi({a})-psi({b})_nosub"] = nos[a].estimate - nos[b].estimate
    return out


def analyze(data: CohortDataset, config: NuisanceConfig, *, contrasts=(), alpha=0.05,
            ic_mode="centered", nuisance=None, clip=None) -> EstimateResult:
    """Fit nuisance models (unless given), estimate every arm and contrast."""
    if nuisance is None:
        nuisance = fit_nuisance(data, config)
    result = EstimateResult(alpha=alpha)
    ests = {}
    for arm in config.arms:
        est = estimate_psi(data, arm, nuisance, clip=clip)
        ests[arm] = est
        entry = _summaries(est, alpha, ic_mode)
        entry["n_clipped"] = est.n_clipped
        if data.is_census:
            nos = estimate_psi_nosub(data, arm, nuisance, clip=clip)
            entry["nosub"] = _summaries(nos, alpha, ic_mode)
        result.arms[str(arm)] = entry
        result.avar[str(arm)] = avar_components(data, arm, nuisance)
    for a, b in contrasts:
        con = contrast(ests[a], ests[b])
        result.contrasts[f"{a}-{b}"] = _summaries(con, alpha, ic_mode)
    result.diagnostics = diagnostics(data, nuisance, config.arms)
    return result


def diagnostics(data: CohortDataset, nuisance, arms) -> dict:
    def rng(v):
        v = v[~np.isnan(v)]
        return [float(v.min()), float(v.max())] if v.size else None

    out = {"n_units": data.n_units, "n_trial": int(np.sum(data.s == 1)),
           "n_measured": int(np.sum(data.d == 1)), "census": data.is_census}
    first = _values(data, arms[0], nuisance)
    out["c_range"] = rng(first.c[data.s == 0]) if (data.s == 0).any() else None
    out["p_range"] = rng(first.p)
    out["e_range"] = {str(a): rng(_values(data, a, nuisance).e[data.s == 1]) for a in arms}
    if isinstance(nuisance, NuisanceSet):
        out["fit_rows"] = dict(nuisance.fit_rows)
        out["models"] = {"participation": nuisance.participation.model.to_dict()}
        if nuisance.sampling.model is not None:
            out["models"]["sampling"] = nuisance.sampling.model.to_dict()
    return out


# ---------------------------------------------------------------------------
# bootstrap


def _boot_one(args):
    data, config, contrasts, seed, index = args
    rng = np.random.default_rng(stream(seed, index))
    idx = rng.integers(0, data.n_units, data.n_units)
    sample = data.take(idx)
    try:
        return point_estimates(sample, fit_nuisance(sample, config), config.arms, contrasts)
    except NestedTrialError as exc:
        return {"__failure__": exc.code}


def bootstrap(data: CohortDataset, config: NuisanceConfig, B: int, seed: int, *,
              contrasts=(), alpha: float = 0.05, threads: int = 1,
              max_failure_rate: float = 0.10) -> dict:
    """Nonparametric bootstrap over units, refitting every nuisance model.

    Whole rows are resampled, including ``d``; second-stage sampling is not
    re-drawn. Replicate ``b`` uses an RNG stream derived from ``(seed, b)``
    so results do not depend on ``threads``.
    """
    if B < 1:
        raise PreconditionError("bootstrap needs B >= 1")
    config = config.resolve(data)
    jobs = [(data, config, tuple(contrasts), seed, b) for b in range(B)]
    reps = parallel_map(_boot_one, jobs, threads)
    failures = [r["__failure__"] for r in reps if "__failure__" in r]
    if len(failures) > max_failure_rate * B:
        raise TooManyFailures(f"{len(failures)} of {B} bootstrap replicates failed",
                              failures=len(failures))
    ok = [r for r in reps if "__failure__" not in r]
    out = {"B": B, "failures": len(failures), "failure_codes": sorted(set(failures)),
           "estimands": {}}
    for key in (ok[0] if ok else {}):
        v = np.array([r[key] for r in ok])
        sd = float(np.std(v, ddof=1)) if len(v) > 1 else float("nan")
        lo, hi = np.percentile(v, [100 * alpha / 2, 100 * (1 - alpha / 2)])
        out["estimands"][key] = {"se": sd, "percentile_ci": [float(lo), float(hi)],
                                 "replicates": [float(x) for x in v]}
    return out


def attach_bootstrap(result: EstimateResult, boot: dict) -> EstimateResult:
    """Copy bootstrap SEs and Wald intervals into the arm/contrast entries."""
    est = boot["estimands"]
    for arm, entry in result.arms.items():
        key = f"psi({arm})"
        if key in est:
            _attach(entry, est[key], result.alpha)
        if "nosub" in entry and f"{key}_nosub" in est:
            _attach(entry["nosub"], est[f"{key}_nosub"], result.alpha)
    for label, entry in result.contrasts.items():
        a, b = label.split("-", 1)
        key = f"psi({a})-psi({b})"
        if key in est:
            _attach(entry, est[key], result.alpha)
    result.bootstrap = {k: v for k, v in boot.items() if k != "estimands"}
    return result


def _attach(entry, boot, alpha):
    se = boot["se"]
    entry["se"]["bootstrap"] = se
    entry["ci"]["bootstrap_wald"] = list(wald_ci(entry["estimate"], se, alpha))
    entry["ci"]["bootstrap_percentile"] = boot["percentile_ci"]

"""Nuisance models for the sub-sampled nested-trial estimator.

Five functions are needed per treatment arm ``a``:

* ``c(x1, s)``  probability of second-stage measurement (1 when ``s = 1``),
* ``e_a(x)``    probability of arm ``a`` among randomized individuals,
* ``p(x)``      population probability of trial participation,
* ``g_a(x)``    outcome regression among randomized individuals in arm ``a``,
* ``b_a(x1, s)`` regression of ``g_a`` on stage-one covariates and ``s``.

``p`` is fitted by weighted logistic regression of ``S`` on ``X`` among
measured rows, weighting sampled non-randomized rows by ``1 / c``. That
maximizes the sampling-corrected pseudo-likelihood, so ``p`` targets the
cohort-wide participation probability rather than the one among measured
rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import glm
from .data import CohortDataset, SubsamplingDesign
from .errors import (
    ConfigError,
    DegenerateSampling,
    EmptyArm,
    EmptyStratum,
    PreconditionError,
)
from .glm import DesignSpec, FittedGlm

SAMPLING_FLOOR = 1e-6


def _nan_outside(values, mask):
    out = np.full(len(mask), np.nan)
    out[mask] = values
    return out


@dataclass(frozen=True, eq=False)
class SamplingModel:
    """Evaluable ``c(x1, s)``.

    ``func`` returns ``Pr[D = 1 | x1, S = 0]`` for every row of a dataset;
    :meth:`evaluate` overrides randomized rows with 1.
    """

    mode: str
    func: Callable[[CohortDataset], np.ndarray]
    model: FittedGlm | None = None
    level_probs: Mapping[float, float] | None = None

    def evaluate_nontrial(self, data: CohortDataset) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.func(data), dtype=float), (data.n_units,))

    def evaluate(self, data: CohortDataset) -> np.ndarray:
        return np.where(data.s == 1, 1.0, self.evaluate_nontrial(data))


def _check_x1_only(design: DesignSpec, data: CohortDataset, allow_s=False):
    allowed = set(data.x1_names) | ({"s"} if allow_s else set())
    extra = design.columns_used() - allowed
    if extra:
        what = "x1 columns and s" if allow_s else "x1 columns"
        raise ConfigError(f"design may only reference {what}; got {sorted(extra)}")


def fit_sampling(data: CohortDataset, mode: str, design=None) -> SamplingModel:
    """Build the sampling model ``c``.

    Parameters
    ----------
    mode : {"design", "empirical", "fitted"}
        ``design`` takes the known function: ``design`` is a
        :class:`SubsamplingDesign`, a mapping of x1-level to probability
        (with ``level_column`` key), or a callable on the dataset.
        ``empirical`` uses the observed fraction measured among ``s = 0``.
        ``fitted`` fits a logistic regression of ``D`` on the x1 terms of
        ``design`` (a :class:`DesignSpec`) among ``s = 0`` rows.

    Census data always get ``c = 1``; there is nothing to estimate.
    """
    if data.is_census:
        model = SamplingModel("census", lambda d: np.ones(d.n_units))
    elif mode == "design":
        model = _design_sampling(data, design)
    elif mode == "empirical":
        nontrial = data.s == 0
        q = float(np.mean(data.d[nontrial])) if nontrial.any() else 1.0
        model = SamplingModel("empirical", lambda d, q=q: np.full(d.n_units, q))
    elif mode == "fitted":
        if not isinstance(design, DesignSpec):
            raise ConfigError("fitted sampling mode needs a DesignSpec in x1 columns")
        _check_x1_only(design, data)
        nontrial = data.s == 0
        if not nontrial.any():
            raise EmptyStratum("no non-randomized rows to fit the sampling model on")
        fitted = glm.fit("logistic", design, data.columns, data.d.astype(float), rows=nontrial)
        model = SamplingModel("fitted", lambda d, m=fitted: glm.predict_mean(m, d.columns),
                              model=fitted)
    else:
        raise ConfigError(f"unknown sampling mode {mode!r}")

    c0 = model.evaluate_nontrial(data)[data.s == 0]
    if c0.size and (np.min(c0) < SAMPLING_FLOOR or np.max(c0) > 1):
        raise DegenerateSampling(
            f"sampling probabilities outside [{SAMPLING_FLOOR}, 1]: "
            f"min={np.min(c0):.3g}, max={np.max(c0):.3g}")
    return model


def _design_sampling(data, design) -> SamplingModel:
    if callable(design) and not isinstance(design, SubsamplingDesign):
        return SamplingModel("design", design)
    if isinstance(design, SubsamplingDesign):
        if design.kind == "census":
            return SamplingModel("design", lambda d: np.ones(d.n_units))
        if design.kind == "simple_random":
            q = design.marginal_q
            return SamplingModel("design", lambda d: np.full(d.n_units, q))
        probs = design.level_probabilities(data)
        column = design.level_column
    elif isinstance(design, Mapping) and "level_column" in design:
        column = design["level_column"]
        probs = {float(k): float(v) for k, v in design["probabilities"].items()}
    else:
        raise ConfigError("design sampling mode needs a SubsamplingDesign, level map or callable")

    def func(d, probs=probs, column=column):
        return np.array([probs.get(float(v), np.nan) for v in d.columns[column]])

    return SamplingModel("design", func, level_probs=probs)


@dataclass(frozen=True, eq=False)
class TreatmentModel:
    """Evaluable ``e_a(x)``: either known constants or per-arm logistic fits."""

    mode: str
    known: Mapping[int, float] | None = None
    models: Mapping[int, FittedGlm] | None = None

    def evaluate(self, data: CohortDataset, arm: int) -> np.ndarray:
        if self.mode == "known":
            if arm not in self.known:
                raise ConfigError(f"no known treatment probability for arm {arm}")
            return np.full(data.n_units, float(self.known[arm]))
        measured = data.d == 1
        return _nan_outside(glm.predict_mean(self.models[arm], data.columns, measured), measured)


def fit_treatment(data: CohortDataset, mode: str, arms: Sequence[int],
                  probabilities: Mapping[int, float] | None = None,
                  design: DesignSpec | None = None) -> TreatmentModel:
    """Known per-arm randomization probabilities or fitted ``Pr[A = a | X, S = 1]``.

    The fitted mode uses one logistic regression of ``I(A = a)`` per arm among
    randomized rows; with two arms both fits share the same likelihood, so
    ``e_0 = 1 - e_1`` exactly.
    """
    arms = [int(a) for a in arms]
    if mode == "known":
        if probabilities is None:
            raise ConfigError("known treatment mode needs per-arm probabilities")
        probs = {int(k): float(v) for k, v in probabilities.items()}
        if any(not 0 < probs.get(a, -1) < 1 for a in arms):
            raise ConfigError("known treatment probabilities must lie in (0, 1) for every arm")
        return TreatmentModel("known", known=probs)
    if mode != "fitted":
        raise ConfigError(f"unknown treatment mode {mode!r}")
    if design is None:
        raise ConfigError("fitted treatment mode needs a design")
    trial = data.s == 1
    models = {}
    for arm in arms:
        ind = (data.a == arm).astype(float)
        if not np.any(ind[trial]):
            raise EmptyArm(f"no randomized rows in arm {arm}", arm=arm)
        models[arm] = glm.fit("logistic", design, data.columns, ind, rows=trial)
    return TreatmentModel("fitted", models=models)


@dataclass(frozen=True, eq=False)
class ParticipationModel:
    model: FittedGlm

    def evaluate(self, data: CohortDataset) -> np.ndarray:
        """``p(x)`` on measured rows, ``nan`` where ``x2`` is unobserved."""
        measured = data.d == 1
        return _nan_outside(glm.predict_mean(self.model, data.columns, measured), measured)


def participation_weights(data: CohortDataset, sampling: SamplingModel) -> np.ndarray:
    """1 for randomized rows, ``1 / c(x1, 0)`` for sampled non-randomized rows, 0 if unmeasured."""
    w = np.zeros(data.n_units)
    trial = data.s == 1
    sampled = (data.s == 0) & (data.d == 1)
    w[trial] = 1.0
    w[sampled] = 1.0 / sampling.evaluate_nontrial(data)[sampled]
    return w


def fit_participation(data: CohortDataset, design: DesignSpec,
                      sampling: SamplingModel) -> ParticipationModel:
    measured = data.d == 1
    s_measured = data.s[measured]
    if not (s_measured == 1).any() or not (s_measured == 0).any():
        raise EmptyStratum("measured rows must include both randomized and non-randomized units")
    w = participation_weights(data, sampling)
    model = glm.fit("logistic", design, data.columns, data.s.astype(float), weights=w,
                    rows=measured)
    return ParticipationModel(model)


@dataclass(frozen=True, eq=False)
class OutcomeModel:
    arm: int
    model: FittedGlm

    def evaluate(self, data: CohortDataset) -> np.ndarray:
        measured = data.d == 1
        return _nan_outside(glm.predict_mean(self.model, data.columns, measured), measured)


def fit_outcome(data: CohortDataset, arm: int, design: DesignSpec,
                family: str = "linear") -> OutcomeModel:
    rows = (data.s == 1) & (data.a == arm)
    if not rows.any():
        raise EmptyArm(f"no randomized rows in arm {arm}", arm=int(arm))
    return OutcomeModel(int(arm), glm.fit(family, design, data.columns, "y", rows=rows))


@dataclass(frozen=True, eq=False)
class PseudoOutcomeModel:
    arm: int
    model: FittedGlm

    def evaluate(self, data: CohortDataset) -> np.ndarray:
        return glm.predict_mean(self.model, data.columns)


def default_pseudo_design(data: CohortDataset) -> DesignSpec:
    """Main effects of every x1 column, ``s``, and each ``x1:s`` interaction."""
    x1 = list(data.x1_names)
    return DesignSpec(tuple(x1 + ["s"] + [f"{v}:s" for v in x1]))


def fit_pseudo_outcome(data: CohortDataset, arm: int, outcome: OutcomeModel,
                       design: DesignSpec | None = None,
                       family: str = "linear") -> PseudoOutcomeModel:
    """Unweighted regression of ``g_a(X)`` on ``(x1, s)`` among measured rows."""
    if design is None:
        design = default_pseudo_design(data)
    _check_x1_only(design, data, allow_s=True)
    measured = data.d == 1
    g = outcome.evaluate(data)
    return PseudoOutcomeModel(int(arm), glm.fit(family, design, data.columns, g, rows=measured))


@dataclass(frozen=True, eq=False)
class NuisanceValues:
    """Per-unit nuisance values for one arm; ``p``, ``e``, ``g`` may be ``nan`` where ``d = 0``."""

    c: np.ndarray
    p: np.ndarray
    e: np.ndarray
    g: np.ndarray
    b: np.ndarray


@dataclass(frozen=True, eq=False)
class FixedNuisance:
    """Externally supplied per-unit nuisance values, bypassing all fitting."""

    c: np.ndarray
    p: np.ndarray
    e: Mapping[int, np.ndarray]
    g: Mapping[int, np.ndarray]
    b: Mapping[int, np.ndarray]

    @property
    def arms(self) -> list[int]:
        return sorted(self.g)

    def values(self, data: CohortDataset, arm: int) -> NuisanceValues:
        if arm not in self.g or arm not in self.b or arm not in self.e:
            raise EmptyArm(f"fixed nuisance values missing for arm {arm}", arm=arm)
        c = np.where(data.s == 1, 1.0, np.asarray(self.c, dtype=float))
        return NuisanceValues(c=c, p=np.asarray(self.p, dtype=float),
                              e=np.asarray(self.e[arm], dtype=float),
                              g=np.asarray(self.g[arm], dtype=float),
                              b=np.asarray(self.b[arm], dtype=float))


@dataclass(frozen=True, eq=False)
class NuisanceSet:
    sampling: SamplingModel
    treatment: TreatmentModel
    participation: ParticipationModel
    outcome: Mapping[int, OutcomeModel]
    pseudo: Mapping[int, PseudoOutcomeModel]
    fit_rows: Mapping[str, int] = field(default_factory=dict)

    @property
    def arms(self) -> list[int]:
        return sorted(self.outcome)

    def values(self, data: CohortDataset, arm: int) -> NuisanceValues:
        if arm not in self.outcome:
            raise EmptyArm(f"nuisance set has no models for arm {arm}", arm=arm)
        return NuisanceValues(
            c=self.sampling.evaluate(data),
            p=self.participation.evaluate(data),
            e=self.treatment.evaluate(data, arm),
            g=self.outcome[arm].evaluate(data),
            b=self.pseudo[arm].evaluate(data),
        )


@dataclass(frozen=True)
class NuisanceConfig:
    """Working-model choices for all five nuisance functions."""

    arms: tuple[int, ...]
    participation: DesignSpec
    outcome: DesignSpec
    outcome_family: str = "linear"
    pseudo: DesignSpec | None = None
    pseudo_family: str = "linear"
    sampling_mode: str = "fitted"
    sampling_design: object = None
    treatment_mode: str = "known"
    treatment_probs: Mapping[int, float] | None = None
    treatment_design: DesignSpec | None = None

    def resolve(self, data: CohortDataset) -> "NuisanceConfig":
        """Freeze design-mode sampling probabilities computed from ``data``.

        Resampled datasets then reuse the original known function instead of
        re-deriving level probabilities from their own level shares.
        """
        if self.sampling_mode == "design" and isinstance(self.sampling_design, SubsamplingDesign) \
                and self.sampling_design.kind == "covariate_dependent":
            probs = self.sampling_design.level_probabilities(data)
            frozen = {"level_column": self.sampling_design.level_column, "probabilities": probs}
            return replace(self, sampling_design=frozen)
        return self


def fit_nuisance(data: CohortDataset, config: NuisanceConfig) -> NuisanceSet:
    sampling = fit_sampling(data, config.sampling_mode, config.sampling_design)
    treatment = fit_treatment(data, config.treatment_mode, config.arms,
                              probabilities=config.treatment_probs,
                              design=config.treatment_design)
    participation = fit_participation(data, config.participation, sampling)
    outcome, pseudo = {}, {}
    for arm in config.arms:
        outcome[arm] = fit_outcome(data, arm, config.outcome, config.outcome_family)
        pseudo[arm] = fit_pseudo_outcome(data, arm, outcome[arm], config.pseudo,
                                         config.pseudo_family)
    rows = {
        "sampling": int(np.sum(data.s == 0)),
        "participation": int(np.sum(data.d == 1)),
        "pseudo": int(np.sum(data.d == 1)),
        **{f"outcome_{a}": int(np.sum((data.s == 1) & (data.a == a))) for a in config.arms},
    }
    return NuisanceSet(sampling, treatment, participation, outcome, pseudo, rows)


def check_design_columns(config: NuisanceConfig, data: CohortDataset) -> None:
    available = set(data.columns)
    for label, design in (("participation", config.participation), ("outcome", config.outcome),
                          ("pseudo", config.pseudo), ("treatment", config.treatment_design)):
        if design is None:
            continue
        missing = design.columns_used() - available
        if missing:
            raise PreconditionError(f"{label} design references unknown columns {sorted(missing)}")

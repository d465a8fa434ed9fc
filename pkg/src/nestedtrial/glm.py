"""Weighted linear and logistic regression.

Logistic fits use iteratively reweighted least squares with step-halving on
any increase in deviance. Rank deficiency and separation raise instead of
returning a silently regularized answer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
from scipy.special import expit

from .errors import (
    ConfigError,
    MissingDesignColumn,
    NotConverged,
    PreconditionError,
    RankDeficient,
    Separation,
)

SCORE_TOL = 1e-8
DEVIANCE_RTOL = 1e-10
MAX_ITER = 100
PIVOT_RTOL = 1e-10
PIN = 1e-10


@dataclass(frozen=True)
class DesignSpec:
    """Model terms. ``"z1:s"`` denotes the product of columns ``z1`` and ``s``."""

    terms: tuple[str, ...]
    intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if len(set(self.terms)) != len(self.terms):
            raise ConfigError(f"duplicate design terms in {self.terms}")
        if not self.terms and not self.intercept:
            raise ConfigError("empty design")

    @classmethod
    def from_dict(cls, obj) -> "DesignSpec":
        if isinstance(obj, (list, tuple)):
            return cls(tuple(obj))
        return cls(tuple(obj.get("terms", ())), bool(obj.get("intercept", True)))

    def to_dict(self) -> dict:
        return {"terms": list(self.terms), "intercept": self.intercept}

    @property
    def names(self) -> list[str]:
        return (["(intercept)"] if self.intercept else []) + list(self.terms)

    @property
    def width(self) -> int:
        return len(self.terms) + int(self.intercept)

    def columns_used(self) -> set[str]:
        return {c for t in self.terms for c in t.split(":")}

    def matrix(self, frame: Mapping[str, np.ndarray], rows=None) -> np.ndarray:
        """Design matrix for ``rows`` (boolean mask or index; all rows if None)."""
        cols = []
        n = None
        for term in self.terms:
            part = None
            for name in term.split(":"):
                if name not in frame:
                    raise MissingDesignColumn(f"design column {name!r} not available", column=name)
                v = np.asarray(frame[name], dtype=float)
                if rows is not None:
                    v = v[rows]
                part = v if part is None else part * v
            cols.append(part)
            n = len(part)
        if n is None:
            any_col = np.asarray(next(iter(frame.values())))
            n = len(any_col if rows is None else any_col[rows])
        if self.intercept:
            cols.insert(0, np.ones(n))
        return np.column_stack(cols) if cols else np.empty((n, 0))


@dataclass(frozen=True, eq=False)
class FittedGlm:
    family: str
    design: DesignSpec
    coef: np.ndarray
    converged: bool
    n_iter: int
    grad_norm: float
    objective: float  # weighted log-likelihood (logistic) or weighted RSS (linear)
    n_obs: int

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "coef": dict(zip(self.design.names, map(float, self.coef))),
            "converged": self.converged,
            "iterations": self.n_iter,
            "grad_norm": self.grad_norm,
            "objective": self.objective,
            "n_obs": self.n_obs,
        }


def check_rank(X: np.ndarray) -> None:
    if X.shape[0] < X.shape[1]:
        raise RankDeficient(f"{X.shape[0]} rows for {X.shape[1]} coefficients")
    r = scipy.linalg.qr(X, mode="r", pivoting=True)[0]
    diag = np.abs(np.diag(r))
    if diag.size and (diag[0] == 0 or diag[-1] < PIVOT_RTOL * diag[0]):
        raise RankDeficient("design matrix is rank deficient on the weighted support",
                            rank=int(np.sum(diag > PIVOT_RTOL * diag[0])))


def _loglik(y, eta, w):
    return float(w @ (y * eta - np.logaddexp(0.0, eta)))


def fit_arrays(family: str, X: np.ndarray, y: np.ndarray, w: np.ndarray | None = None,
               *, on_separation: str = "raise", check: bool = True):
    """Fit on a prepared design matrix. Returns ``(coef, converged, n_iter, grad_norm, objective)``."""
    if w is None:
        w = np.ones(len(y))
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise PreconditionError("weights must be finite and nonnegative")
    keep = w > 0
    if not keep.any():
        raise PreconditionError("no rows with positive weight")
    if not keep.all():
        X, y, w = X[keep], y[keep], w[keep]
    if np.isnan(y).any() or np.isnan(X).any():
        raise PreconditionError("missing values in fitting rows")
    sw = np.sqrt(w)
    if check:
        check_rank(X * sw[:, None])

    if family == "linear":
        coef = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)[0]
        resid = y - X @ coef
        grad = X.T @ (w * resid)
        return coef, True, 1, float(np.max(np.abs(grad), initial=0.0)), float(w @ resid**2)
    if family != "logistic":
        raise ConfigError(f"unknown family {family!r}")
    if np.any((y != 0) & (y != 1)):
        raise PreconditionError("logistic response must be 0/1")

    beta = np.zeros(X.shape[1])
    mu = np.full(len(y), 0.5)
    ll = _loglik(y, np.zeros(len(y)), w)
    converged = False
    grad_norm = np.inf
    it = 0
    rel = 0.0
    for it in range(1, MAX_ITER + 1):
        grad = X.T @ (w * (y - mu))
        grad_norm = float(np.max(np.abs(grad)))
        # a small score while the likelihood still moves a lot means divergence, not an optimum
        if grad_norm <= SCORE_TOL and rel <= 1e-6:
            converged = True
            it -= 1
            break
        wt = w * mu * (1 - mu)
        info = X.T @ (X * wt[:, None])
        try:
            step = scipy.linalg.solve(info, grad, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            step = np.linalg.lstsq(info, grad, rcond=None)[0]
        for _ in range(40):
            cand = beta + step
            eta_c = X @ cand
            ll_c = _loglik(y, eta_c, w)
            if ll_c >= ll - 1e-12 * abs(ll):
                break
            step = step / 2
        else:
            # no ascent direction left at floating-point resolution
            converged = grad_norm <= 1e-6
            break
        rel = abs(ll_c - ll) / (abs(ll) + 1e-300)
        beta, mu, ll = cand, expit(eta_c), ll_c
        if _separated(X @ beta, y, mu):
            break
        if rel <= DEVIANCE_RTOL:
            grad_norm = float(np.max(np.abs(X.T @ (w * (y - mu)))))
            converged = True
            break

    if _separated(X @ beta, y, mu):
        if on_separation == "raise":
            raise Separation("fitted probabilities pinned at 0/1: data are separated",
                             iterations=it)
        return beta, False, it, grad_norm, ll
    if not converged:
        raise NotConverged(f"IRLS did not converge in {MAX_ITER} iterations",
                           grad_norm=grad_norm)
    return beta, True, it, grad_norm, ll


def _separated(eta, y, mu):
    if np.max(np.abs(eta)) < 20:
        return False
    ones, zeros = y == 1, y == 0
    return bool((ones.any() and np.all(mu[ones] > 1 - PIN)) or
                (zeros.any() and np.all(mu[zeros] < PIN)))


def fit(family: str, design: DesignSpec, frame: Mapping[str, np.ndarray], response,
        weights=None, rows=None, *, on_separation: str = "raise") -> FittedGlm:
    """Fit a weighted GLM.

    Parameters
    ----------
    family : {"linear", "logistic"}
    design : DesignSpec
    frame : mapping of column name to array
    response : str or array
        Column name in ``frame`` or an array aligned with ``frame``.
    weights : array, optional
        Nonnegative per-row weights aligned with ``frame``.
    rows : boolean mask or index, optional
        Subset of rows to fit on.
    on_separation : {"raise", "flag"}
        With ``"flag"`` a separated logistic fit returns its last iterate
        marked non-converged.
    """
    X = design.matrix(frame, rows)
    y = np.asarray(frame[response] if isinstance(response, str) else response, dtype=float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    if rows is not None:
        y, w = y[rows], w[rows]
    coef, conv, it, gn, obj = fit_arrays(family, X, y, w, on_separation=on_separation)
    return FittedGlm(family, design, coef, conv, it, gn, obj, int(np.sum(w > 0)))


def linear_predictor(model: FittedGlm, frame, rows=None) -> np.ndarray:
    return model.design.matrix(frame, rows) @ model.coef


def predict_mean(model: FittedGlm, frame, rows=None) -> np.ndarray:
    eta = linear_predictor(model, frame, rows)
    if model.family == "logistic":
        return expit(eta)
    return eta


def design_from_terms(terms: Sequence[str], intercept=True) -> DesignSpec:
    return DesignSpec(tuple(terms), intercept)

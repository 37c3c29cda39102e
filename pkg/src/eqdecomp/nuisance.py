"""Conditional-probability models for the sample-based backends.

Binary and multinomial logistic regression are fit in-repo by iteratively
reweighted least squares (Newton steps on the weighted log-likelihood), with
a small ridge fallback on separation or singular information. Saturated
(conditional frequency table) estimation provides the exact nonparametric
plug-in when every conditioning variable is discrete.

Model specs are user-declared; there is no regularization path or model
selection here by design.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import (
    DegenerateResponseError,
    NonConvergenceError,
    PositivityError,
    SchemaError,
)

COEF_TOL = 1e-10
MAX_ITER = 100
RIDGE = 1e-8
_ETA_CLIP = 36.0  # keeps expit strictly inside (0, 1) in float64
_SEPARATION_COEF = 40.0

FAMILIES = ("binary-logit", "multinomial-logit", "saturated", "auto")


@dataclass(frozen=True)
class ModelSpec:
    """Declaration of one nuisance model.

    ``fit_group`` restricts the fitting sample to rows where a column takes a
    level, e.g. ``("race", "marg")``; prediction is not restricted.
    """

    response: str
    predictors: tuple = ()
    family: str = "binary-logit"
    interactions: tuple = ()
    fit_group: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "predictors", tuple(self.predictors))
        object.__setattr__(
            self, "interactions", tuple(tuple(i) for i in self.interactions)
        )
        if len(set(self.predictors)) != len(self.predictors):
            raise SchemaError(f"duplicate predictors in model for {self.response!r}")
        for combo in self.interactions:
            if len(combo) < 2 or not set(combo) <= set(self.predictors):
                raise SchemaError(
                    f"interaction {combo} must pair two or more declared predictors"
                )
        if self.family not in FAMILIES:
            raise SchemaError(f"unknown family {self.family!r}")
        if self.fit_group is not None:
            object.__setattr__(self, "fit_group", (self.fit_group[0], str(self.fit_group[1])))


@dataclass
class FittedModel:
    """A fitted nuisance model; immutable after fit by convention."""

    spec: ModelSpec
    kind: str
    response_levels: tuple
    coefficients: np.ndarray = field(repr=False)
    column_names: tuple = ()
    converged: bool = True
    iterations: int = 0
    log_likelihood: float = float("nan")
    ridge_used: bool = False
    # saturated-only bookkeeping
    stratum_dims: tuple = ()
    stratum_totals: np.ndarray | None = field(default=None, repr=False)


class _Overlay:
    """A table view with some columns replaced (used to predict at set levels)."""

    def __init__(self, table, override):
        self._table = table
        self._override = dict(override)
        self.n = table.n

    def is_categorical(self, name):
        return self._table.is_categorical(name)

    def levels(self, name):
        return self._table.levels(name)

    def codes(self, name):
        if name in self._override:
            value = str(self._override[name])
            levels = self._table.levels(name)
            if value not in levels:
                raise SchemaError(f"column {name!r} has no level {value!r}")
            return np.full(self.n, levels.index(value), dtype=np.int64)
        return self._table.codes(name)

    def numeric(self, name):
        if name in self._override:
            return np.full(self.n, float(self._override[name]))
        return self._table.numeric(name)


def _encodings(table, name):
    """Per-predictor encoded columns: dummies past the first level, or the raw numeric."""
    if table.is_categorical(name):
        levels = table.levels(name)
        codes = table.codes(name)
        if np.any(codes < 0):
            raise SchemaError(f"column {name!r} has missing values; drop them before fitting")
        cols = [(codes == i).astype(float) for i in range(1, len(levels))]
        names = [f"{name}={levels[i]}" for i in range(1, len(levels))]
        return cols, names
    values = table.numeric(name)
    if np.isnan(values).any():
        raise SchemaError(f"column {name!r} has missing values; drop them before fitting")
    return [values], [name]


def design_matrix(table, predictors, interactions=()):
    """Build the design matrix: intercept, main-effect encodings, then products."""
    cols = [np.ones(table.n)]
    names = ["(intercept)"]
    encoded = {}
    for name in predictors:
        encoded[name] = _encodings(table, name)
        c, nm = encoded[name]
        cols.extend(c)
        names.extend(nm)
    for combo in interactions:
        groups = [list(zip(*encoded[name])) for name in combo]
        for parts in itertools.product(*groups):
            col = parts[0][0].copy()
            for other, _ in parts[1:]:
                col = col * other
            cols.append(col)
            names.append(":".join(p[1] for p in parts))
    return np.column_stack(cols), tuple(names)


def _fit_weights(table, row_weights):
    w = table.base_weights.copy()
    if row_weights is not None:
        values = getattr(row_weights, "values", row_weights)
        w = w * np.asarray(values, dtype=float)
    if np.any(w < 0):
        raise SchemaError("negative fitting weight")
    return w


def _restrict_group(table, w, fit_group):
    if fit_group is None:
        return table, w
    column, level = fit_group
    mask = table.codes(column) == table.levels(column).index(str(level))
    return table.restrict(mask), w[np.asarray(mask)]


def binary_loglik(beta, X, y, w):
    eta = np.clip(X @ beta, -_ETA_CLIP, _ETA_CLIP)
    return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))


def binary_score(beta, X, y, w):
    p = expit(np.clip(X @ beta, -_ETA_CLIP, _ETA_CLIP))
    return X.T @ (w * (y - p))


def _newton(objective, score_hessian, beta0, ridge):
    """Damped Newton loop; returns (beta, iterations, trace, converged).

    Maximizes the (optionally ridge-penalized) objective with step halving.
    Stops on a coefficient change below ``COEF_TOL`` or, under ridge, a
    penalized gradient that is numerically flat. Without ridge, runaway
    coefficients signal separation and abort so the caller can fall back.
    """
    lam = RIDGE if ridge else 0.0
    eye = np.eye(len(beta0))
    beta = beta0.copy()
    trace = []

    def penalized(b):
        return objective(b) - 0.5 * lam * float(b @ b)

    for it in range(1, MAX_ITER + 1):
        g, H = score_hessian(beta)
        g = g - lam * beta
        H = H + lam * eye
        if ridge and float(np.max(np.abs(g))) <= 1e-12:
            return beta, it, trace, True
        try:
            delta = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return beta, it, trace, False
        base = penalized(beta)
        step = 1.0
        cand = beta + delta
        while step > 1e-12 and penalized(cand) < base:
            step *= 0.5
            cand = beta + step * delta
        moved = float(np.max(np.abs(cand - beta)))
        beta = cand
        trace.append(moved)
        if not np.isfinite(moved):
            return beta, it, trace, False
        if not ridge and np.max(np.abs(beta)) > _SEPARATION_COEF:
            return beta, it, trace, False
        if moved <= COEF_TOL:
            return beta, it, trace, True
    return beta, MAX_ITER, trace, False


def _fit_binary(spec, table, w, warm_start=None):
    levels = table.levels(spec.response)
    if len(levels) != 2:
        raise SchemaError(
            f"binary-logit response {spec.response!r} must have exactly two "
            f"declared levels, got {levels}"
        )
    y = table.codes(spec.response).astype(float)
    active = w > 0
    if np.unique(y[active]).size < 2:
        raise DegenerateResponseError(
            f"response {spec.response!r} is constant within the fitting group"
        )
    X, names = design_matrix(table, spec.predictors, spec.interactions)
    wn = w / w.sum()

    def obj(beta):
        return binary_loglik(beta, X, y, wn)

    def sh(beta):
        p = expit(np.clip(X @ beta, -_ETA_CLIP, _ETA_CLIP))
        var = wn * p * (1.0 - p)
        return X.T @ (wn * (y - p)), X.T @ (var[:, None] * X)

    beta0 = np.zeros(X.shape[1]) if warm_start is None else np.asarray(warm_start, float)
    beta, it, trace, ok = _newton(obj, sh, beta0, ridge=False)
    ridge_used = False
    if not ok:
        ridge_used = True
        beta, it2, trace2, ok = _newton(obj, sh, np.zeros(X.shape[1]), ridge=True)
        it += it2
        trace += trace2
    if not ok:
        raise NonConvergenceError(
            f"binary-logit for {spec.response!r} did not converge after ridge "
            f"fallback ({it} iterations)",
            trace=trace,
        )
    ll = binary_loglik(beta, X, y, w)
    return FittedModel(
        spec=spec,
        kind="binary",
        response_levels=levels,
        coefficients=beta,
        column_names=names,
        converged=True,
        iterations=it,
        log_likelihood=ll,
        ridge_used=ridge_used,
    )


def _multinomial_probs(B, X):
    eta = X @ B.T
    eta = np.clip(eta, -_ETA_CLIP, _ETA_CLIP)
    full = np.concatenate([np.zeros((X.shape[0], 1)), eta], axis=1)
    full -= full.max(axis=1, keepdims=True)
    e = np.exp(full)
    return e / e.sum(axis=1, keepdims=True)


def _fit_multinomial(spec, table, w, warm_start=None):
    levels = table.levels(spec.response)
    K = len(levels)
    codes = table.codes(spec.response)
    active = w > 0
    if np.unique(codes[active]).size < 2:
        raise DegenerateResponseError(
            f"response {spec.response!r} is constant within the fitting group"
        )
    X, names = design_matrix(table, spec.predictors, spec.interactions)
    p = X.shape[1]
    wn = w / w.sum()
    Y = np.zeros((table.n, K))
    Y[np.arange(table.n), codes] = 1.0

    def obj(vec):
        P = _multinomial_probs(vec.reshape(K - 1, p), X)
        own = np.take_along_axis(P, codes[:, None], 1)[:, 0]
        return float(np.sum(wn * np.log(np.maximum(own, 1e-300))))

    def sh(vec):
        P = _multinomial_probs(vec.reshape(K - 1, p), X)
        g = np.empty((K - 1, p))
        for k in range(1, K):
            g[k - 1] = X.T @ (wn * (Y[:, k] - P[:, k]))
        H = np.empty((K - 1, K - 1, p, p))
        for k in range(1, K):
            for l in range(1, K):
                if l < k:
                    H[k - 1, l - 1] = H[l - 1, k - 1].T
                    continue
                v = wn * P[:, k] * ((1.0 if k == l else 0.0) - P[:, l])
                H[k - 1, l - 1] = X.T @ (v[:, None] * X)
        Hm = H.transpose(0, 2, 1, 3).reshape((K - 1) * p, (K - 1) * p)
        return g.ravel(), Hm

    beta0 = (
        np.zeros((K - 1) * p)
        if warm_start is None
        else np.asarray(warm_start, float).ravel()
    )
    beta, it, trace, ok = _newton(obj, sh, beta0, ridge=False)
    ridge_used = False
    if not ok:
        ridge_used = True
        beta, it2, trace2, ok = _newton(obj, sh, np.zeros((K - 1) * p), ridge=True)
        it += it2
        trace += trace2
    if not ok:
        raise NonConvergenceError(
            f"multinomial-logit for {spec.response!r} did not converge after "
            f"ridge fallback ({it} iterations)",
            trace=trace,
        )
    B = beta.reshape(K - 1, p)
    P = _multinomial_probs(B, X)
    ll = float(np.sum(w * np.log(np.take_along_axis(P, codes[:, None], 1)[:, 0])))
    return FittedModel(
        spec=spec,
        kind="multinomial",
        response_levels=levels,
        coefficients=B,
        column_names=names,
        converged=True,
        iterations=it,
        log_likelihood=ll,
        ridge_used=ridge_used,
    )


def _stratum_codes(table, given, dims):
    codes = np.zeros(table.n, dtype=np.int64)
    for name, dim in zip(given, dims):
        c = table.codes(name)
        if np.any(c < 0):
            raise SchemaError(f"column {name!r} has missing values; drop them before fitting")
        codes = codes * dim + c
    return codes


def fit_saturated(response, given, table, row_weights=None, fit_group=None):
    """Conditional frequency table P(response | given) over discrete strata.

    Cells with zero conditioning mass are retained as undefined; predicting
    for a row that lands in such a cell raises ``PositivityError``, which is
    the signal the positivity diagnostics consume.
    """
    given = tuple(given)
    for name in given:
        if not table.is_categorical(name):
            raise SchemaError(
                f"saturated model conditioning variable {name!r} must be discrete"
            )
    w = _fit_weights(table, row_weights)
    table, w = _restrict_group(table, w, fit_group)
    levels = table.levels(response)
    K = len(levels)
    ycodes = table.codes(response)
    if np.any(ycodes < 0):
        raise SchemaError(f"response {response!r} has missing values")
    dims = tuple(len(table.levels(name)) for name in given)
    n_strata = int(np.prod(dims)) if dims else 1
    strata = _stratum_codes(table, given, dims)
    counts = np.bincount(strata * K + ycodes, weights=w, minlength=n_strata * K)
    counts = counts.reshape(n_strata, K)
    totals = counts.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        probs = counts / totals[:, None]
    probs[totals == 0.0] = np.nan
    active = w > 0
    if np.unique(ycodes[active]).size < 2:
        raise DegenerateResponseError(
            f"response {response!r} is constant within the fitting group"
        )
    own = probs[strata, ycodes]
    with np.errstate(divide="ignore"):
        ll = float(np.sum(np.where(w > 0, w * np.log(np.where(w > 0, own, 1.0)), 0.0)))
    spec = ModelSpec(response=response, predictors=given, family="saturated", fit_group=fit_group)
    return FittedModel(
        spec=spec,
        kind="saturated",
        response_levels=levels,
        coefficients=probs,
        column_names=given,
        converged=True,
        iterations=0,
        log_likelihood=ll,
        stratum_dims=dims,
        stratum_totals=totals,
    )


def fit(spec, data, row_weights=None, warm_start=None):
    """Fit one declared model and return a ``FittedModel``.

    ``family="auto"`` resolves to binary or multinomial logit from the
    response's declared level count. Row weights (if given) multiply the
    table's base weights; scaling all weights by a positive constant leaves
    the fit unchanged.
    """
    if spec.family == "auto":
        from dataclasses import replace as _replace

        family = "binary-logit" if len(data.levels(spec.response)) == 2 else "multinomial-logit"
        spec = _replace(spec, family=family)
    if spec.family == "saturated":
        return fit_saturated(
            spec.response, spec.predictors, data, row_weights=row_weights,
            fit_group=spec.fit_group,
        )
    w = _fit_weights(data, row_weights)
    table, w = _restrict_group(data, w, spec.fit_group)
    if spec.family == "binary-logit":
        return _fit_binary(spec, table, w, warm_start=warm_start)
    return _fit_multinomial(spec, table, w, warm_start=warm_start)


def predict_proba(model, rows, override=None):
    """Predicted probabilities, one column per declared response level.

    ``override`` maps column names to a fixed level/value, used to evaluate a
    model at counterfactually assigned inputs without copying the table.
    """
    table = _Overlay(rows, override) if override else rows
    if model.kind == "saturated":
        strata = _stratum_codes(table, model.spec.predictors, model.stratum_dims)
        totals = model.stratum_totals[strata]
        if np.any(totals == 0.0):
            bad = int(np.flatnonzero(totals == 0.0)[0])
            idx = int(strata[bad])
            assignment = {}
            for name, dim in zip(reversed(model.spec.predictors), reversed(model.stratum_dims)):
                assignment[name] = rows.levels(name)[idx % dim]
                idx //= dim
            raise PositivityError(
                "saturated model has no observations in stratum "
                f"{dict(reversed(list(assignment.items())))}",
                stratum=dict(reversed(list(assignment.items()))),
            )
        return model.coefficients[strata]
    X, _ = design_matrix(table, model.spec.predictors, model.spec.interactions)
    if model.kind == "binary":
        p1 = expit(np.clip(X @ model.coefficients, -_ETA_CLIP, _ETA_CLIP))
        return np.column_stack([1.0 - p1, p1])
    return _multinomial_probs(model.coefficients, X)


def predict_prob_of_observed(model, rows, override=None):
    """Per-row probability of the row's own observed response level."""
    probs = predict_proba(model, rows, override=override)
    codes = rows.codes(model.spec.response)
    return np.take_along_axis(probs, codes[:, None], axis=1)[:, 0]

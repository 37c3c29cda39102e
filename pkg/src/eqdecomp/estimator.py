"""Sample-level estimation: weighted contrasts, pipeline, bootstrap.

Each disparity contrast is estimated as the slope of a weighted least-squares
regression of the outcome on a binary group indicator over a stacked dataset
(the canonical path); the direct difference of weighted means is kept as an
internal cross-check since the two are algebraically identical for a binary
regressor. Confidence intervals come from a stratified nonparametric
bootstrap that refits every nuisance model inside each replicate, with
counter-based per-replicate seeding so results do not depend on worker count.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field, replace

import numpy as np

from . import weights as weights_mod
from .errors import (
    BootstrapError,
    EqDecompError,
    SchemaError,
    ValidationError,
)
from .gformula import (
    BACKEND_IORW,
    BACKEND_RMPW,
    UNTESTABLE_ASSUMPTIONS,
    DecompositionEstimate,
    check_positivity,
)
from .nuisance import ModelSpec, fit
from .partition import Standardization, validate

RMPW_MODEL_KEYS = ("race_ay", "target_r0", "target_r0prime")
IORW_MODEL_KEYS = (
    "race_ay",
    "race_m_allow",
    "race_m_full",
    "race_allow",
    "race_full",
    "target_allow_pooled",
    "target_full_pooled",
)
MONTECARLO_MODEL_KEYS = (
    "race_ay",
    "target_r0",
    "target_r0prime",
    "outcome_r0",
    "outcome_r0prime",
)
MONTECARLO_ALTERNATE_KEYS = ("outcome_r0prime_full", "target_r0prime_full")


@dataclass(frozen=True)
class ModelConfig:
    """User-tunable part of one nuisance model (family, interactions).

    ``family="auto"`` picks binary or multinomial logit from the response's
    level count; ``"saturated"`` requests the frequency-table fit.
    ``predictors`` overrides the partition-derived conditioning set.
    """

    family: str = "auto"
    interactions: tuple = ()
    predictors: tuple | None = None


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = 1000
    level: float = 0.95
    seed: int = 0
    stratify_by_race: bool = True

    def __post_init__(self):
        if self.replicates < 1:
            raise ValidationError("bootstrap replicates must be >= 1")
        if not 0.0 < self.level < 1.0:
            raise ValidationError("bootstrap level must be in (0, 1)")


@dataclass(frozen=True)
class StackedDataset:
    """Marginalized-group rows stacked onto a reweighted copy of themselves.

    ``origin`` is 1 for original rows, 0 for the counterfactually weighted
    copy; the copy duplicates the rows exactly apart from its weights.
    """

    outcome: np.ndarray
    origin: np.ndarray
    weights: np.ndarray

    @classmethod
    def build(cls, outcome, w_original, w_copy):
        y = np.concatenate([outcome, outcome])
        origin = np.concatenate([np.ones(len(outcome)), np.zeros(len(outcome))])
        w = np.concatenate([w_original, w_copy])
        return cls(y, origin, w)


def _wls_binary_slope(y, x, w):
    """Slope of the weighted regression y ~ 1 + x for binary x (2x2 solve)."""
    sw = w.sum()
    swx = (w * x).sum()
    swy = (w * y).sum()
    swxy = (w * x * y).sum()
    xtx = np.array([[sw, swx], [swx, swx]], dtype=float)
    # x is binary so x*x == x; the normal equations close over four sums.
    rhs = np.array([swy, swxy])
    coef = np.linalg.solve(xtx, rhs)
    return float(coef[1])


def weighted_mean_contrast(y_a, w_a, y_b, w_b):
    """Weighted mean of group a minus weighted mean of group b."""
    y_a, w_a, y_b, w_b = (np.asarray(v, dtype=float) for v in (y_a, w_a, y_b, w_b))
    for name, (y, w) in {"a": (y_a, w_a), "b": (y_b, w_b)}.items():
        if y.size == 0:
            raise ValidationError(f"group {name} is empty")
        if np.any(w < 0):
            raise ValidationError(f"group {name} has a negative weight")
        if w.sum() <= 0:
            raise ValidationError(f"group {name} has no positive weight")
    return float((w_a * y_a).sum() / w_a.sum() - (w_b * y_b).sum() / w_b.sum())


def _stacked_contrast(y_a, w_a, y_b, w_b):
    """Canonical contrast: WLS slope over the stacked two-group dataset."""
    y = np.concatenate([y_a, y_b])
    d = np.concatenate([np.ones(len(y_a)), np.zeros(len(y_b))])
    w = np.concatenate([w_a, w_b])
    keep = w > 0
    return _wls_binary_slope(y[keep], d[keep], w[keep])


def derive_model_specs(partition, roles, backend, model_config=None, alternate=False):
    """ModelSpecs for a backend's nuisance set, derived from the partition.

    The conditioning sets are fixed by the estimator's definition: the
    marginalized group's target/outcome models condition on allowables and
    non-allowables, the privileged group's on allowables only, the pooled
    target models never condition on race. ``model_config`` adjusts family,
    interactions, and (rarely) predictors per key.
    """
    config = dict(model_config or {})
    ay = list(partition.outcome_allowable)
    allow = sorted(set(partition.outcome_allowable) | set(partition.target_allowable_extra))
    full = sorted(set(allow) | set(partition.non_allowable))
    race = roles.race.variable
    m = roles.target
    y = roles.outcome
    g0 = (race, roles.race.marginalized)
    g1 = (race, roles.race.privileged)

    base = {
        "race_ay": (race, sorted(ay), None),
        "target_r0": (m, full, g0),
        "target_r0prime": (m, allow, g1),
        "race_m_allow": (race, sorted([m] + allow), None),
        "race_m_full": (race, sorted([m] + full), None),
        "race_allow": (race, allow, None),
        "race_full": (race, full, None),
        "target_allow_pooled": (m, allow, None),
        "target_full_pooled": (m, full, None),
        "outcome_r0": (y, sorted([m] + full), g0),
        "outcome_r0prime": (y, sorted([m] + allow), g1),
        "outcome_r0prime_full": (y, sorted([m] + full), g1),
        "target_r0prime_full": (m, full, g1),
    }
    if backend == BACKEND_RMPW:
        keys = RMPW_MODEL_KEYS
    elif backend == BACKEND_IORW:
        keys = IORW_MODEL_KEYS
    elif backend == "montecarlo":
        keys = MONTECARLO_MODEL_KEYS + (MONTECARLO_ALTERNATE_KEYS if alternate else ())
    else:
        raise ValidationError(f"unknown backend {backend!r}")
    specs = {}
    for key in keys:
        response, predictors, group = base[key]
        cfg = config.get(key, ModelConfig())
        specs[key] = ModelSpec(
            response=response,
            predictors=tuple(cfg.predictors) if cfg.predictors is not None else tuple(predictors),
            family=cfg.family,
            interactions=cfg.interactions,
            fit_group=group,
        )
    return specs


def _resolve_family(spec, table):
    if spec.family != "auto":
        return spec
    levels = table.levels(spec.response)
    family = "binary-logit" if len(levels) == 2 else "multinomial-logit"
    return replace(spec, family=family)


def fit_models(specs, table, warm_starts=None):
    warm_starts = warm_starts or {}
    fitted = {}
    for key in sorted(specs):
        spec = _resolve_family(specs[key], table)
        fitted[key] = fit(spec, table, warm_start=warm_starts.get(key))
    return fitted


@dataclass
class _Pipeline:
    """One fully configured weighted-decomposition run, reusable on resamples."""

    data: object
    roles: object
    partition: object
    std: Standardization
    backend: str
    specs: dict
    truncation: float | None = None
    warm_starts: dict = field(default_factory=dict)

    def estimate(self, table=None, collect_diagnostics=False):
        table = self.data if table is None else table
        roles = self.roles
        race = roles.race.variable
        fitted = fit_models(self.specs, table, warm_starts=self.warm_starts)

        codes = table.codes(race)
        idx0 = codes == table.levels(race).index(roles.race.marginalized)
        idx1 = codes == table.levels(race).index(roles.race.privileged)
        if not idx0.any() or not idx1.any():
            raise SchemaError("race not binary in cohort: one group has no rows")
        rows0 = table.restrict(idx0)
        rows1 = table.restrict(idx1)
        y0 = rows0.numeric(roles.outcome)
        y1 = rows1.numeric(roles.outcome)
        bw0 = rows0.base_weights
        bw1 = rows1.base_weights

        p_r0 = float(bw0.sum() / (bw0.sum() + bw1.sum()))
        p0 = weights_mod.race_probabilities(fitted["race_ay"], rows0, roles.race.marginalized)
        p1 = weights_mod.race_probabilities(fitted["race_ay"], rows1, roles.race.marginalized)
        w_r0 = weights_mod.group_standardization_weight(p0, p_r0, "r0", self.std)
        w_r0p = weights_mod.group_standardization_weight(p1, p_r0, "r0p", self.std)

        if self.backend == BACKEND_RMPW:
            num, den = weights_mod.fitted_rmpw_inputs(fitted, rows0)
            w_cf = weights_mod.rmpw_weight(num, den, p0, p_r0, self.std)
        else:
            inputs = weights_mod.fitted_iorw_inputs(fitted, rows0, roles.race.marginalized)
            w_cf = weights_mod.iorw_weight(p_r0_given_ay=p0, p_r0=p_r0, std=self.std, **inputs)
        if self.truncation is not None:
            w_r0 = weights_mod.truncate_weights(w_r0, self.truncation)
            w_r0p = weights_mod.truncate_weights(w_r0p, self.truncation)
            w_cf = weights_mod.truncate_weights(w_cf, self.truncation)

        a0 = w_r0.values * bw0
        a1 = w_r0p.values * bw1
        acf = w_cf.values * bw0

        observed = _stacked_contrast(y0, a0, y1, a1)
        stacked = StackedDataset.build(y0, a0, acf)
        keep = stacked.weights > 0
        reduction = _wls_binary_slope(
            stacked.outcome[keep], stacked.origin[keep], stacked.weights[keep]
        )
        residual = _stacked_contrast(y0, acf, y1, a1)
        mean_r0 = float((a0 * y0).sum() / a0.sum())
        mean_cf = float((acf * y0).sum() / acf.sum())
        mean_r0p = float((a1 * y1).sum() / a1.sum())

        out = {
            "observed": observed,
            "reduction": reduction,
            "residual": residual,
            "mean_r0": mean_r0,
            "mean_cf": mean_cf,
            "mean_r0prime": mean_r0p,
        }
        if collect_diagnostics:
            out["weights"] = {
                "w_r0": w_r0.diagnostics,
                "w_r0prime": w_r0p.diagnostics,
                f"w_{self.backend}": weights_mod.WeightDiagnostics.from_values(
                    w_cf.values, bw0
                ),
            }
            out["models"] = fitted
            out["cross_check"] = max(
                abs(observed - weighted_mean_contrast(y0, a0, y1, a1)),
                abs(reduction - weighted_mean_contrast(y0, a0, y0, acf)),
                abs(residual - weighted_mean_contrast(y0, acf, y1, a1)),
            )
            self.warm_starts = {
                key: model.coefficients
                for key, model in fitted.items()
                if model.kind in ("binary", "multinomial")
            }
        return out


def _resample_indices(rng, n, strat_codes):
    if strat_codes is None:
        return rng.integers(0, n, n)
    out = np.empty(n, dtype=np.int64)
    pos = 0
    for code in np.unique(strat_codes):
        members = np.flatnonzero(strat_codes == code)
        take = rng.integers(0, len(members), len(members))
        out[pos : pos + len(members)] = members[take]
        pos += len(members)
    return out


def _bootstrap_block(pipeline, config, strat_codes, rep_range):
    results = []
    data = pipeline.data
    for rep in rep_range:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(config.seed), rep)))
        idx = _resample_indices(rng, data.n, strat_codes)
        try:
            est = pipeline.estimate(data.restrict(idx))
            results.append((rep, est, None))
        except EqDecompError as exc:
            results.append((rep, None, f"{type(exc).__name__}: {exc}"))
    return results


def bootstrap_ci(pipeline_or_fn, data, config, stratify_codes=None, n_workers=1):
    """Percentile bootstrap over full-pipeline re-estimation.

    ``pipeline_or_fn`` is either a ``_Pipeline`` or any callable mapping a
    resampled table to a dict of floats. Replicate ``rep`` always uses the
    seed sequence ``(config.seed, rep)``, so intervals are identical for any
    worker count. Failed replicates are counted; the run aborts if more than
    1% fail.
    """
    pipeline = pipeline_or_fn
    if not isinstance(pipeline, _Pipeline):
        pipeline = _CallablePipeline(pipeline_or_fn, data)
    reps = config.replicates
    blocks = _split_blocks(reps, n_workers)
    all_results = []
    if n_workers > 1 and len(blocks) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=n_workers) as pool:
            futures = [
                pool.submit(_bootstrap_block, pipeline, config, stratify_codes, block)
                for block in blocks
            ]
            for fut in futures:
                all_results.extend(fut.result())
    else:
        for block in blocks:
            all_results.extend(_bootstrap_block(pipeline, config, stratify_codes, block))
    all_results.sort(key=lambda r: r[0])
    failures = [msg for _, est, msg in all_results if est is None]
    if len(failures) > 0.01 * reps:
        raise BootstrapError(
            f"{len(failures)} of {reps} bootstrap replicates failed "
            f"(first: {failures[0]})"
        )
    keys = ("observed", "reduction", "residual", "mean_r0", "mean_cf", "mean_r0prime")
    stacks = {k: np.array([est[k] for _, est, _ in all_results if est is not None]) for k in keys}
    alpha = 1.0 - config.level
    ci = {
        k: (
            float(np.percentile(v, 100 * alpha / 2)),
            float(np.percentile(v, 100 * (1 - alpha / 2))),
            config.level,
        )
        for k, v in stacks.items()
        if k in ("observed", "reduction", "residual", "mean_r0", "mean_cf", "mean_r0prime")
    }
    return ci, len(failures), stacks


@dataclass
class _CallablePipeline:
    fn: object
    data: object

    def estimate(self, table=None):
        return self.fn(self.data if table is None else table)


def _split_blocks(reps, n_workers):
    if n_workers <= 1:
        return [range(reps)]
    per = max(1, (reps + n_workers - 1) // n_workers)
    return [range(start, min(start + per, reps)) for start in range(0, reps, per)]


def decompose_weighted(data, roles, partition, std=Standardization.POOLED,
                       backend=BACKEND_RMPW, model_config=None, boot=None,
                       truncation=None, n_workers=1):
    """Weighted decomposition of the standardized disparity on cohort data.

    Parameters
    ----------
    data : CohortTable
        The cohort; the selection filter and missing-row rejection are
        applied here, with counts reported in the diagnostics.
    backend : "rmpw" or "iorw"
        Which counterfactual weight family estimates the post-intervention
        mean. Both use the same group-standardization weights for the
        observed means.
    model_config : dict, optional
        Per-model ``ModelConfig`` overrides keyed like ``derive_model_specs``.
    boot : BootstrapConfig, optional
        Percentile bootstrap with nuisance models refit per replicate.
    truncation : float, optional
        Upper percentile at which weights are capped (default: no truncation,
        matching the plain formulas).
    """
    if backend not in (BACKEND_RMPW, BACKEND_IORW):
        raise ValidationError(f"unknown weighting backend {backend!r}")
    report = validate(partition, roles, data.names)
    report.raise_if_invalid()
    data, n_unselected = data.apply_selection(roles)
    in_scope = list(roles.role_variables()) + list(partition.all_covariates())
    if roles.selection is not None:
        in_scope.remove(roles.selection.variable)
    data, n_missing = data.drop_missing(sorted(set(in_scope)))
    if data.n == 0:
        raise ValidationError("empty cohort after selection and missing-row rejection")

    positivity = check_positivity(data, roles, partition)
    specs = derive_model_specs(partition, roles, backend, model_config)
    pipeline = _Pipeline(data, roles, partition, std, backend, specs, truncation)
    point = pipeline.estimate(collect_diagnostics=True)

    ci = None
    diagnostics = {
        "n": data.n,
        "n_unselected": n_unselected,
        "n_missing_rejected": n_missing,
        "positivity": positivity,
        "weights": point["weights"],
        "stacked_vs_direct_max_gap": point["cross_check"],
        "assumptions": UNTESTABLE_ASSUMPTIONS,
        "warnings": report.warnings,
        "models": point["models"],
        "truncation": truncation,
    }
    if boot is not None:
        race_codes = data.codes(roles.race.variable) if boot.stratify_by_race else None
        ci, n_failed, _ = bootstrap_ci(
            pipeline, data, boot, stratify_codes=race_codes, n_workers=n_workers
        )
        diagnostics["bootstrap_failures"] = n_failed
        diagnostics["bootstrap_replicates"] = boot.replicates

    backend_label = BACKEND_RMPW if backend == BACKEND_RMPW else BACKEND_IORW
    return DecompositionEstimate(
        mean_r0=point["mean_r0"],
        mean_r0prime=point["mean_r0prime"],
        mean_cf=point["mean_cf"],
        observed=point["observed"],
        reduction=point["reduction"],
        residual=point["residual"],
        standardization=std,
        backend=backend_label,
        ci=ci,
        diagnostics=diagnostics,
    )


def decompose_weighted_exact(joint, roles, partition, std=Standardization.POOLED,
                             backend=BACKEND_RMPW):
    """Population weighted contrasts evaluated exactly on a finite joint.

    Computes E[Y w | group] with weights built from exact conditionals; on
    any joint these reproduce the identification-formula decomposition, which
    is the oracle equivalence the estimators are tested against.
    """
    w_r0, w_r0p, w_rmpw, w_iorw, c0, c1 = weights_mod.exact_weight_vectors(
        joint, roles, partition, std
    )
    w_cf = w_rmpw if backend == BACKEND_RMPW else w_iorw
    mean_r0 = float((c0.mass * c0.outcome * w_r0.values).sum())
    mean_cf = float((c0.mass * c0.outcome * w_cf.values).sum())
    mean_r0p = float((c1.mass * c1.outcome * w_r0p.values).sum())
    return DecompositionEstimate.from_means(
        mean_r0, mean_cf, mean_r0p, std, backend,
        diagnostics={"source": "exact-joint"},
    )

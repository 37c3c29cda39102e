"""Disparity estimands and their identification-formula evaluation.

The three contrasts (observed disparity, reduction under the target
intervention, residual disparity) are evaluated two ways:

* exactly, by summing the identification formulae over a ``FiniteJoint``
  (the oracle path, float64-exact), and
* approximately, by Monte Carlo simulation with fitted nuisance models
  (the parametric g-computation path).

Both return a ``DecompositionEstimate`` whose contrasts satisfy
``observed == reduction + residual`` by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CommonSupportError, PositivityError, SchemaError
from .joint import FiniteJoint
from .partition import Standardization, validate

BACKEND_EXACT = "exact"
BACKEND_MONTECARLO = "montecarlo"
BACKEND_RMPW = "rmpw"
BACKEND_IORW = "iorw"

# Exchangeability and consistency are semantic assumptions; no data or joint
# can certify them, so every report carries this declaration verbatim.
UNTESTABLE_ASSUMPTIONS = (
    "conditional exchangeability of the target within the marginalized group "
    "(given allowable and non-allowable covariates) is assumed, not testable",
    "consistency of observed vs. assigned target values is assumed, not testable",
)


@dataclass(frozen=True)
class DecompositionEstimate:
    """Standardized means and the three disparity contrasts.

    ``observed = mean_r0 - mean_r0prime``, ``reduction = mean_r0 - mean_cf``,
    ``residual = mean_cf - mean_r0prime``; additivity holds exactly as
    computed because the contrasts are derived from the stored means.
    """

    mean_r0: float
    mean_r0prime: float
    mean_cf: float
    observed: float
    reduction: float
    residual: float
    standardization: Standardization
    backend: str
    ci: dict | None = None
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def from_means(cls, mean_r0, mean_cf, mean_r0prime, standardization, backend,
                   ci=None, diagnostics=None):
        return cls(
            mean_r0=float(mean_r0),
            mean_r0prime=float(mean_r0prime),
            mean_cf=float(mean_cf),
            observed=float(mean_r0 - mean_r0prime),
            reduction=float(mean_r0 - mean_cf),
            residual=float(mean_cf - mean_r0prime),
            standardization=standardization,
            backend=backend,
            ci=ci,
            diagnostics=diagnostics or {},
        )


@dataclass(frozen=True)
class PositivityIssue:
    kind: str  # "positivity" (B1-style) or "common-support" (B2-style)
    stratum: dict
    message: str


@dataclass(frozen=True)
class PositivityReport:
    issues: tuple = ()
    notes: tuple = ()

    @property
    def ok(self):
        return not self.issues


def _split_names(joint_names, roles, partition):
    present = set(joint_names)
    ay = [v for v in partition.outcome_allowable if v in present]
    am = [v for v in partition.target_allowable_extra if v in present]
    nn = [v for v in partition.non_allowable if v in present]
    return ay, am, nn


def _require_binary_race(joint, roles):
    race = roles.race.variable
    p0 = float(joint.table([race])[joint.slice_level(race, roles.race.marginalized)].sum())
    p1 = float(joint.table([race])[joint.slice_level(race, roles.race.privileged)].sum())
    if p0 <= 0.0 or p1 <= 0.0:
        raise SchemaError(
            f"race not binary in cohort: level "
            f"{roles.race.marginalized if p0 <= 0 else roles.race.privileged!r} "
            "has zero mass"
        )


def _standard_table(joint, roles, partition, std):
    """Standard S over the outcome-allowable covariates, with support checks."""
    race = roles.race.variable
    ay, _, _ = _split_names(joint.names, roles, partition)
    sl_r0 = joint.slice_level(race, roles.race.marginalized)
    sl_r0p = joint.slice_level(race, roles.race.privileged)
    p_r0_ay = joint.cond_table([race], ay)[sl_r0]
    p_r0p_ay = joint.cond_table([race], ay)[sl_r0p]
    if std is Standardization.POOLED:
        S = joint.table(ay)
        bad = (S > 0) & ((np.nan_to_num(p_r0_ay) == 0) | (np.nan_to_num(p_r0p_ay) == 0))
    elif std is Standardization.R0:
        S = np.nan_to_num(joint.cond_table(ay, [race])[sl_r0], nan=0.0)
        bad = (S > 0) & (np.nan_to_num(p_r0p_ay) == 0)
    elif std is Standardization.R0_PRIME:
        S = np.nan_to_num(joint.cond_table(ay, [race])[sl_r0p], nan=0.0)
        bad = (S > 0) & (np.nan_to_num(p_r0_ay) == 0)
    else:
        raise SchemaError(f"unknown standardization {std!r}")
    if np.any(bad):
        stratum = joint.first_assignment_where(bad)
        detail = {k: stratum[k] for k in ay}
        raise PositivityError(
            f"standard {std.value!r} puts mass on outcome-allowable stratum "
            f"{detail} where one race group is absent",
            stratum=detail,
        )
    return S


def _cond_mean(joint, outcome, given):
    """E[outcome | given] in broadcast layout (NaN on empty strata)."""
    yvals = joint.value_grid(outcome)
    table = joint.cond_table([outcome], given)
    return (yvals * table).sum(axis=joint.axis(outcome), keepdims=True)


def _chain_sum(joint, start, factors, terminal, terminal_names, terminal_kind):
    """Sum terminal * start * prod(factors), erroring on undefined-but-weighted cells."""
    weight = start
    for factor, names, kind, message in factors:
        undefined = np.isnan(factor)
        bad = undefined & (weight > 0)
        if np.any(bad):
            stratum = joint.first_assignment_where(bad)
            detail = {k: stratum[k] for k in names}
            raise kind(message.format(stratum=detail), stratum=detail)
        weight = weight * np.nan_to_num(factor, nan=0.0)
    undefined = np.isnan(terminal)
    bad = undefined & (weight > 0)
    if np.any(bad):
        stratum = joint.first_assignment_where(bad)
        detail = {k: stratum[k] for k in terminal_names}
        raise terminal_kind(
            "required conditional undefined on weighted stratum "
            f"{detail}",
            stratum=detail,
        )
    return float((weight * np.nan_to_num(terminal, nan=0.0)).sum())


def standardized_mean_exact(joint, roles, partition, std, group):
    """Directly standardized outcome mean for one race group (an observed mean)."""
    _require_binary_race(joint, roles)
    race = roles.race.variable
    level = roles.race.marginalized if group == "r0" else roles.race.privileged
    ay, _, _ = _split_names(joint.names, roles, partition)
    S = _standard_table(joint, roles, partition, std)
    ey = _cond_mean(joint, roles.outcome, ay + [race])[joint.slice_level(race, level)]
    return _chain_sum(joint, S, [], ey, ay, PositivityError)


def observed_disparity_exact(joint, roles, partition, std=Standardization.POOLED):
    """Standardized mean difference between the marginalized and privileged groups."""
    return standardized_mean_exact(joint, roles, partition, std, "r0") - standardized_mean_exact(
        joint, roles, partition, std, "r0p"
    )


def counterfactual_mean_exact(joint, roles, partition, std=Standardization.POOLED):
    """Standardized mean in the marginalized group under the target intervention.

    Evaluates the five-factor identification sum: the marginalized group's
    outcome and covariate laws, with the target's law given target-allowable
    covariates replaced by the privileged group's.
    """
    _require_binary_race(joint, roles)
    race = roles.race.variable
    m = roles.target
    r0 = roles.race.marginalized
    r0p = roles.race.privileged
    ay, am, nn = _split_names(joint.names, roles, partition)
    sl_r0 = joint.slice_level(race, r0)
    sl_r0p = joint.slice_level(race, r0p)

    S = _standard_table(joint, roles, partition, std)
    p_am = joint.cond_table(am, ay + [race])[sl_r0]
    p_n = joint.cond_table(nn, am + ay + [race])[sl_r0]
    p_m_r0p = joint.cond_table([m], am + ay + [race])[sl_r0p]
    ey = _cond_mean(joint, roles.outcome, [m] + nn + am + ay + [race])[sl_r0]

    factors = [
        (p_am, ay, PositivityError,
         "marginalized group absent from standard stratum {stratum}"),
        (p_n, am + ay, PositivityError,
         "marginalized group absent from target-allowable stratum {stratum}"),
        (p_m_r0p, am + ay, CommonSupportError,
         "common support violated: no privileged-group target law in stratum {stratum}"),
    ]
    return _chain_sum(joint, S, factors, ey, [m] + nn + am + ay, PositivityError)


def observed_mean_exact(joint, roles, partition, std, group, factorization="direct"):
    """Observed standardized mean via the direct or expanded factorization.

    ``factorization``:
      * ``"direct"``: sum E[Y|group, allowables] against the standard.
      * ``"factorized"``: the full product expansion (non-allowables enter
        only for the marginalized group).
      * ``"alternate"``: the privileged-group expansion that also conditions
        on non-allowables (identical value on exact joints; available for the
        equivalence check and the alternate Monte Carlo factorization).
    """
    if factorization == "direct":
        return standardized_mean_exact(joint, roles, partition, std, group)
    _require_binary_race(joint, roles)
    race = roles.race.variable
    m = roles.target
    level = roles.race.marginalized if group == "r0" else roles.race.privileged
    sl = joint.slice_level(race, level)
    ay, am, nn = _split_names(joint.names, roles, partition)
    S = _standard_table(joint, roles, partition, std)
    p_am = joint.cond_table(am, ay + [race])[sl]
    use_n = group == "r0" or factorization == "alternate"
    cond_n = nn if use_n else []
    p_n = joint.cond_table(cond_n, am + ay + [race])[sl]
    p_m = joint.cond_table([m], cond_n + am + ay + [race])[sl]
    ey = _cond_mean(joint, roles.outcome, [m] + cond_n + am + ay + [race])[sl]
    factors = [
        (p_am, ay, PositivityError, "group absent from standard stratum {stratum}"),
        (p_n, am + ay, PositivityError, "group absent from stratum {stratum}"),
        (p_m, cond_n + am + ay, PositivityError, "group absent from stratum {stratum}"),
    ]
    return _chain_sum(joint, S, factors, ey, [m] + cond_n + am + ay, PositivityError)


def decompose_exact(joint, roles, partition, std=Standardization.POOLED):
    """Exact decomposition of the standardized disparity on a finite joint."""
    report = validate(partition, roles, joint.names)
    report.raise_if_invalid()
    mean_r0 = standardized_mean_exact(joint, roles, partition, std, "r0")
    mean_r0p = standardized_mean_exact(joint, roles, partition, std, "r0p")
    mean_cf = counterfactual_mean_exact(joint, roles, partition, std)
    return DecompositionEstimate.from_means(
        mean_r0, mean_cf, mean_r0p, std, BACKEND_EXACT,
        diagnostics={"assumptions": UNTESTABLE_ASSUMPTIONS, "warnings": report.warnings},
    )


# ---------------------------------------------------------------------------
# positivity / common-support diagnostics


def check_positivity(source, roles, partition):
    """Report partial-positivity and common-support violations.

    Accepts a ``FiniteJoint`` (exact probabilities) or a ``CohortTable``
    (empirical frequencies over its discrete columns). Only target levels
    with positive privileged-group probability within matching allowable
    strata are demanded of the marginalized group (the partial form).
    """
    if isinstance(source, FiniteJoint):
        return _check_positivity_joint(source, roles, partition)
    return _check_positivity_table(source, roles, partition)


def _issues_from_mask(joint, mask, names, kind, message):
    issues = []
    mask = np.broadcast_to(mask, joint.probs.shape)
    flat = np.flatnonzero(mask.reshape(-1))
    seen = set()
    for f in flat:
        idx = np.unravel_index(int(f), joint.probs.shape)
        assignment = {v.name: v.levels[i] for v, i in zip(joint.variables, idx)}
        detail = tuple((k, assignment[k]) for k in names)
        if detail in seen:
            continue
        seen.add(detail)
        issues.append(PositivityIssue(kind, dict(detail), message.format(stratum=dict(detail))))
    return issues


def _check_positivity_joint(joint, roles, partition):
    race = roles.race.variable
    m = roles.target
    r0 = roles.race.marginalized
    r0p = roles.race.privileged
    ay, am, nn = _split_names(joint.names, roles, partition)
    sl_r0 = joint.slice_level(race, r0)
    sl_r0p = joint.slice_level(race, r0p)

    mass_full_r0 = joint.table(nn + am + ay + [race])[sl_r0]
    p_m_r0p = np.nan_to_num(joint.cond_table([m], am + ay + [race])[sl_r0p], nan=0.0)
    p_m_r0_full = joint.cond_table([m], nn + am + ay + [race])[sl_r0]
    p_m_r0_allow = np.nan_to_num(joint.cond_table([m], am + ay + [race])[sl_r0], nan=0.0)
    mass_xa_r0 = joint.table(am + ay + [race])[sl_r0]
    mass_xa_r0p = joint.table(am + ay + [race])[sl_r0p]

    issues = []
    b1 = (mass_full_r0 > 0) & (p_m_r0p > 0) & (np.nan_to_num(p_m_r0_full, nan=0.0) == 0)
    issues += _issues_from_mask(
        joint, b1, [m] + nn + am + ay, "positivity",
        "target level demanded by the privileged group has zero marginalized-group "
        "probability in stratum {stratum}",
    )
    b2_cov = (mass_xa_r0p > 0) & (mass_xa_r0 == 0)
    issues += _issues_from_mask(
        joint, b2_cov, am + ay, "common-support",
        "privileged-group covariate stratum {stratum} unobserved in the marginalized group",
    )
    b2_target = (mass_xa_r0 > 0) & (mass_xa_r0p > 0) & (p_m_r0p > 0) & (p_m_r0_allow == 0)
    issues += _issues_from_mask(
        joint, b2_target, [m] + am + ay, "common-support",
        "target level present in the privileged group but absent from the "
        "marginalized group in stratum {stratum}",
    )
    b2_rev = (mass_xa_r0 > 0) & (mass_xa_r0p == 0)
    issues += _issues_from_mask(
        joint, b2_rev, am + ay, "common-support",
        "marginalized-group covariate stratum {stratum} unobserved in the "
        "privileged group; the intervention law is undefined there",
    )
    return PositivityReport(tuple(issues), ())


def _check_positivity_table(data, roles, partition):
    from .joint import VariableSpec, FiniteJoint as _FJ

    race = roles.race.variable
    m = roles.target
    names = [race, m]
    notes = []
    for name in list(partition.non_allowable) + list(partition.target_allowable_extra) + list(
        partition.outcome_allowable
    ):
        if name not in data.names:
            continue
        if data.is_categorical(name):
            names.append(name)
        else:
            notes.append(
                f"numeric covariate {name!r} excluded from frequency-based "
                "positivity checks"
            )
    variables = [VariableSpec(n, data.levels(n)) for n in names]
    shape = tuple(len(v.levels) for v in variables)
    codes = np.zeros(data.n, dtype=np.int64)
    for v in variables:
        c = data.codes(v.name)
        if np.any(c < 0):
            raise SchemaError(f"column {v.name!r} has missing values")
        codes = codes * len(v.levels) + c
    counts = np.bincount(codes, weights=data.base_weights, minlength=int(np.prod(shape)))
    total = counts.sum()
    if total <= 0:
        raise SchemaError("empty cohort")
    joint = _FJ(tuple(variables), counts.reshape(shape) / total)
    report = _check_positivity_joint(joint, roles, partition)
    return PositivityReport(report.issues, tuple(notes))


# ---------------------------------------------------------------------------
# Monte Carlo g-computation

MC_MODEL_KEYS = ("outcome_r0", "outcome_r0prime", "target_r0", "target_r0prime", "race_ay")
MC_ALTERNATE_KEYS = ("outcome_r0prime_full", "target_r0prime_full")


def _outcome_level_values(data, outcome):
    if not data.is_categorical(outcome):
        raise SchemaError(
            "the Monte Carlo backend needs a categorical outcome with numeric "
            f"levels; column {outcome!r} is numeric/continuous (use a weighting backend)"
        )
    try:
        return np.array([float(lv) for lv in data.levels(outcome)])
    except ValueError:
        raise SchemaError(f"outcome levels {data.levels(outcome)} are not numeric") from None


def _draw_levels(rng, probs, n_draws):
    """Inverse-CDF categorical draws: (n_draws, n_rows) level indices."""
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = 1.0
    u = rng.random((n_draws, probs.shape[0]))
    k = np.zeros(u.shape, dtype=np.int64)
    for j in range(probs.shape[1] - 1):
        k += u > cum[:, j]
    return k


def decompose_montecarlo(models, data, roles, partition,
                         std=Standardization.POOLED, draws=200, seed=0,
                         chunk_size=64, use_alternate_privileged_factorization=False):
    """Monte Carlo g-computation estimate of the decomposition.

    Target values are simulated from the fitted target models (the
    privileged-group model supplies the intervention draws), outcome models
    supply conditional means at the drawn values, and the outer
    standardization uses the race-given-allowables model. Draw chunks are
    seeded by (seed, chunk index), so results do not depend on how work is
    scheduled; the same seed gives bit-identical output.

    Parameters
    ----------
    models : mapping
        Fitted models keyed by ``MC_MODEL_KEYS`` (plus ``MC_ALTERNATE_KEYS``
        when the alternate privileged-group factorization is requested).
    """
    from . import weights as weights_mod

    if draws < 1:
        raise SchemaError("draws must be >= 1")
    needed = list(MC_MODEL_KEYS)
    if use_alternate_privileged_factorization:
        needed += list(MC_ALTERNATE_KEYS)
    for key in needed:
        if key not in models:
            raise SchemaError(f"missing fitted model {key!r}")

    report = validate(partition, roles, data.names)
    report.raise_if_invalid()
    data, _ = data.apply_selection(roles)
    race = roles.race.variable
    r0 = roles.race.marginalized
    r0p = roles.race.privileged
    m = roles.target
    yvals = _outcome_level_values(data, roles.outcome)

    race_codes = data.codes(race)
    idx_r0 = race_codes == data.levels(race).index(r0)
    idx_r0p = race_codes == data.levels(race).index(r0p)
    rows0 = data.restrict(idx_r0)
    rows1 = data.restrict(idx_r0p)
    if rows0.n == 0 or rows1.n == 0:
        raise SchemaError("race not binary in cohort: one group has no rows")

    p_r0 = float(rows0.base_weights.sum() / data.base_weights.sum())
    w0 = weights_mod.group_standardization_weight(
        weights_mod.race_probabilities(models["race_ay"], rows0, r0), p_r0, "r0", std
    ).values
    w1 = weights_mod.group_standardization_weight(
        weights_mod.race_probabilities(models["race_ay"], rows1, r0), p_r0, "r0p", std
    ).values
    w0 = w0 * rows0.base_weights
    w1 = w1 * rows1.base_weights

    from .nuisance import predict_proba

    m_levels = data.levels(m)
    target_obs_r0 = predict_proba(models["target_r0"], rows0)
    target_cf_r0 = predict_proba(models["target_r0prime"], rows0)
    key_t1 = "target_r0prime_full" if use_alternate_privileged_factorization else "target_r0prime"
    key_y1 = "outcome_r0prime_full" if use_alternate_privileged_factorization else "outcome_r0prime"
    target_obs_r0p = predict_proba(models[key_t1], rows1)

    ey_r0 = np.stack(
        [predict_proba(models["outcome_r0"], rows0, override={m: lv}) @ yvals for lv in m_levels]
    )
    ey_r0p = np.stack(
        [predict_proba(models[key_y1], rows1, override={m: lv}) @ yvals for lv in m_levels]
    )

    sums = np.zeros(3)
    done = 0
    chunk = 0
    col0 = np.arange(rows0.n)
    col1 = np.arange(rows1.n)
    while done < draws:
        take = min(chunk_size, draws - done)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), chunk)))
        k_obs0 = _draw_levels(rng, target_obs_r0, take)
        k_cf0 = _draw_levels(rng, target_cf_r0, take)
        k_obs1 = _draw_levels(rng, target_obs_r0p, take)
        sums[0] += (w0 * ey_r0[k_obs0, col0]).sum(axis=1).sum() / w0.sum()
        sums[1] += (w0 * ey_r0[k_cf0, col0]).sum(axis=1).sum() / w0.sum()
        sums[2] += (w1 * ey_r0p[k_obs1, col1]).sum(axis=1).sum() / w1.sum()
        done += take
        chunk += 1
    mean_r0, mean_cf, mean_r0p = sums / draws
    return DecompositionEstimate.from_means(
        mean_r0, mean_cf, mean_r0p, std, BACKEND_MONTECARLO,
        diagnostics={
            "draws": draws,
            "seed": int(seed),
            "assumptions": UNTESTABLE_ASSUMPTIONS,
            "warnings": report.warnings,
            "alternate_privileged_factorization": bool(use_alternate_privileged_factorization),
        },
    )

"""Construction of the four weight families used by the sample estimators.

The same arithmetic serves two probability sources: conditionals read
exactly off a ``FiniteJoint`` (used by the oracle identity checks) and
predictions from fitted nuisance models (used on real cohorts). Weights are
attached to rows and never renormalized; a group mean near one is a
diagnostic of model fit, not an enforced property.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PositivityError
from .nuisance import predict_proba, predict_prob_of_observed
from .partition import Standardization

FORMULA_GROUP_R0 = "group-std-r0"
FORMULA_GROUP_R0PRIME = "group-std-r0prime"
FORMULA_RMPW = "rmpw"
FORMULA_IORW = "iorw"


@dataclass(frozen=True)
class WeightDiagnostics:
    minimum: float
    maximum: float
    mean: float
    ess: float  # Kish effective sample size
    n_zero: int

    @classmethod
    def from_values(cls, values, base_weights=None):
        v = np.asarray(values, dtype=float)
        bw = np.ones_like(v) if base_weights is None else np.asarray(base_weights, float)
        total = float((bw * v).sum())
        sq = float((bw * v * v).sum())
        ess = total * total / sq if sq > 0 else 0.0
        mean = total / bw.sum() if bw.sum() > 0 else float("nan")
        return cls(
            minimum=float(v.min()) if v.size else float("nan"),
            maximum=float(v.max()) if v.size else float("nan"),
            mean=mean,
            ess=ess,
            n_zero=int((v == 0.0).sum()),
        )


@dataclass(frozen=True)
class WeightVector:
    values: np.ndarray = field(repr=False)
    formula: str = ""
    standardization: Standardization = Standardization.POOLED
    diagnostics: WeightDiagnostics | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise PositivityError(f"non-finite weight in {self.formula} vector")
        if np.any(values < 0):
            raise PositivityError(f"negative weight in {self.formula} vector")
        object.__setattr__(self, "values", values)
        if self.diagnostics is None:
            object.__setattr__(self, "diagnostics", WeightDiagnostics.from_values(values))


def _check_open_interval(p, what):
    p = np.asarray(p, dtype=float)
    bad = ~((p > 0.0) & (p < 1.0))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise PositivityError(
            f"{what} is {p.reshape(-1)[i]!r} at row {i}; probabilities must lie "
            "strictly inside (0, 1)"
        )
    return p


def race_probabilities(race_model, rows, marginalized_level):
    """Per-row fitted P(marginalized | predictors), validated to be in (0, 1)."""
    probs = predict_proba(race_model, rows)
    idx = race_model.response_levels.index(str(marginalized_level))
    return _check_open_interval(probs[:, idx], "fitted race probability")


def group_standardization_weight(p_r0_given_ay, p_r0, group, std=Standardization.POOLED):
    """Weight that standardizes one race group's mean over the chosen standard.

    ``group`` is ``"r0"`` (marginalized rows) or ``"r0p"`` (privileged rows).
    Under the marginalized-group standard the marginalized group's weight is
    identically one, and symmetrically for the privileged-group standard.
    """
    p = _check_open_interval(p_r0_given_ay, "race probability given outcome-allowables")
    if not 0.0 < p_r0 < 1.0:
        raise PositivityError(f"marginal race probability {p_r0!r} outside (0, 1)")
    q = 1.0 - p
    q_r0 = 1.0 - p_r0
    if std is Standardization.POOLED:
        values = p_r0 / p if group == "r0" else q_r0 / q
    elif std is Standardization.R0:
        values = np.ones_like(p) if group == "r0" else (p / q) * (q_r0 / p_r0)
    elif std is Standardization.R0_PRIME:
        values = (q / p) * (p_r0 / q_r0) if group == "r0" else np.ones_like(p)
    else:
        raise PositivityError(f"unknown standardization {std!r}")
    formula = FORMULA_GROUP_R0 if group == "r0" else FORMULA_GROUP_R0PRIME
    return WeightVector(values, formula, std)


def rmpw_weight(numerator, denominator, p_r0_given_ay, p_r0, std=Standardization.POOLED):
    """Target-probability-ratio weight for marginalized-group rows.

    ``numerator`` is the privileged-group probability of the row's observed
    target level given the target-allowable covariates; ``denominator`` is
    the marginalized-group probability given non-allowables as well. A zero
    numerator is legitimate under partial positivity (the intervention never
    assigns that level); a zero denominator is a positivity violation.
    """
    num = np.asarray(numerator, dtype=float)
    den = np.asarray(denominator, dtype=float)
    if np.any(den <= 0.0):
        i = int(np.flatnonzero(den <= 0.0)[0])
        raise PositivityError(
            f"observed target level has zero marginalized-group probability at row {i}"
        )
    if np.any(num < 0.0):
        raise PositivityError("negative target probability")
    gf = group_standardization_weight(p_r0_given_ay, p_r0, "r0", std).values
    return WeightVector(num / den * gf, FORMULA_RMPW, std)


def iorw_weight(p_r0p_given_m_allow, p_r0_given_m_full, p_r0p_given_allow,
                p_r0_given_full, p_m_given_allow, p_m_given_full,
                p_r0_given_ay, p_r0, std=Standardization.POOLED):
    """Inverse-odds-ratio weight for marginalized-group rows.

    Written exactly as the odds form reads: the ratio of the privileged-to-
    marginalized race odds at the observed target value over the same odds
    without the target, times the target-marginalization correction, times
    the group-standardization factor. With no non-allowable covariates the
    middle correction is identically one.
    """
    a = _check_open_interval(p_r0p_given_m_allow, "race probability given target and allowables")
    b = _check_open_interval(p_r0_given_m_full, "race probability given target and all covariates")
    c = _check_open_interval(p_r0p_given_allow, "race probability given allowables")
    d = _check_open_interval(p_r0_given_full, "race probability given all covariates")
    e = _check_open_interval(p_m_given_allow, "target probability given allowables")
    f = _check_open_interval(p_m_given_full, "target probability given all covariates")
    gf = group_standardization_weight(p_r0_given_ay, p_r0, "r0", std).values
    values = ((a / b) / (c / d)) * (e / f) * gf
    return WeightVector(values, FORMULA_IORW, std)


def truncate_weights(weight_vector, percentile):
    """Cap weights at the given upper percentile of their own distribution.

    Off by default in every pipeline; when used it is recorded in the
    diagnostics since the estimator no longer matches the plain formulas.
    """
    if not 0.0 < percentile <= 100.0:
        raise PositivityError(f"truncation percentile {percentile!r} outside (0, 100]")
    cap = float(np.percentile(weight_vector.values, percentile))
    values = np.minimum(weight_vector.values, cap)
    return WeightVector(values, weight_vector.formula, weight_vector.standardization)


# ---------------------------------------------------------------------------
# exact-joint probability source


@dataclass(frozen=True)
class ExactCells:
    """Flattened cell-level probability inputs for one race group's slice.

    ``mass`` holds P(cell | group); every probability array is aligned to
    the same cells (only cells with positive mass are kept, mirroring the
    fact that row-level weights exist only at observed rows).
    """

    mass: np.ndarray
    outcome: np.ndarray
    p_r0: float
    p_r0_given_ay: np.ndarray
    rmpw_numerator: np.ndarray | None = None
    rmpw_denominator: np.ndarray | None = None
    iorw: dict | None = None


def _flatten(joint, sl, table, keep):
    full = np.broadcast_to(table, joint.probs[sl].shape)
    return full.reshape(-1)[keep]


def exact_cells(joint, roles, partition, group):
    """Read every weight-formula input exactly off a finite joint."""
    race = roles.race.variable
    m = roles.target
    level = roles.race.marginalized if group == "r0" else roles.race.privileged
    sl = joint.slice_level(race, level)
    sl_r0 = joint.slice_level(race, roles.race.marginalized)
    sl_r0p = joint.slice_level(race, roles.race.privileged)

    present = set(joint.names)
    ay = [v for v in partition.outcome_allowable if v in present]
    am = [v for v in partition.target_allowable_extra if v in present]
    nn = [v for v in partition.non_allowable if v in present]

    p_r0 = float(joint.probs[sl_r0].sum())
    group_mass = joint.probs[sl]
    total = float(group_mass.sum())
    keep = (group_mass.reshape(-1) / total) > 0
    mass = group_mass.reshape(-1)[keep] / total

    def flat(table):
        return _flatten(joint, sl, table, keep)

    outcome = flat(joint.value_grid(roles.outcome))
    p_r0_given_ay = flat(joint.cond_table([race], ay)[sl_r0])
    cells = ExactCells(
        mass=mass, outcome=outcome, p_r0=p_r0, p_r0_given_ay=p_r0_given_ay,
    )
    if group != "r0":
        return cells

    rmpw_num = flat(joint.cond_table([m], am + ay + [race])[sl_r0p])
    if np.any(np.isnan(rmpw_num)):
        from .errors import CommonSupportError

        raise CommonSupportError(
            "common support violated: a marginalized-group cell has no "
            "privileged-group target law in its target-allowable stratum"
        )
    rmpw_den = flat(joint.cond_table([m], nn + am + ay + [race])[sl_r0])
    iorw = {
        "p_r0p_given_m_allow": flat(joint.cond_table([race], [m] + am + ay)[sl_r0p]),
        "p_r0_given_m_full": flat(joint.cond_table([race], [m] + nn + am + ay)[sl_r0]),
        "p_r0p_given_allow": flat(joint.cond_table([race], am + ay)[sl_r0p]),
        "p_r0_given_full": flat(joint.cond_table([race], nn + am + ay)[sl_r0]),
        "p_m_given_allow": flat(joint.cond_table([m], am + ay)),
        "p_m_given_full": flat(joint.cond_table([m], nn + am + ay)),
    }
    return ExactCells(
        mass=mass, outcome=outcome, p_r0=p_r0, p_r0_given_ay=p_r0_given_ay,
        rmpw_numerator=rmpw_num,
        rmpw_denominator=rmpw_den,
        iorw=iorw,
    )


def exact_weight_vectors(joint, roles, partition, std=Standardization.POOLED):
    """All four weight families from exact conditionals.

    Returns ``(w_r0, w_r0prime, w_rmpw, w_iorw, cells_r0, cells_r0p)`` where
    the first four are ``WeightVector`` objects over the respective group's
    positive-mass cells.
    """
    c0 = exact_cells(joint, roles, partition, "r0")
    c1 = exact_cells(joint, roles, partition, "r0p")
    w_r0 = group_standardization_weight(c0.p_r0_given_ay, c0.p_r0, "r0", std)
    w_r0p = group_standardization_weight(c1.p_r0_given_ay, c1.p_r0, "r0p", std)
    w_rmpw = rmpw_weight(
        c0.rmpw_numerator, c0.rmpw_denominator, c0.p_r0_given_ay, c0.p_r0, std
    )
    w_iorw = iorw_weight(
        p_r0_given_ay=c0.p_r0_given_ay, p_r0=c0.p_r0, std=std, **c0.iorw
    )
    return w_r0, w_r0p, w_rmpw, w_iorw, c0, c1


# ---------------------------------------------------------------------------
# fitted probability source


def fitted_rmpw_inputs(models, rows_r0):
    """Per-row RMPW numerator/denominator from fitted target models."""
    num = predict_prob_of_observed(models["target_r0prime"], rows_r0)
    den = predict_prob_of_observed(models["target_r0"], rows_r0)
    return num, den


def fitted_iorw_inputs(models, rows_r0, marginalized_level):
    """Per-row IORW probability inputs from the fitted race/target models."""
    r0 = str(marginalized_level)

    def race_col(key, complement):
        probs = predict_proba(models[key], rows_r0)
        idx = models[key].response_levels.index(r0)
        col = probs[:, idx]
        return 1.0 - col if complement else col

    return {
        "p_r0p_given_m_allow": race_col("race_m_allow", complement=True),
        "p_r0_given_m_full": race_col("race_m_full", complement=False),
        "p_r0p_given_allow": race_col("race_allow", complement=True),
        "p_r0_given_full": race_col("race_full", complement=False),
        "p_m_given_allow": predict_prob_of_observed(models["target_allow_pooled"], rows_r0),
        "p_m_given_full": predict_prob_of_observed(models["target_full_pooled"], rows_r0),
    }

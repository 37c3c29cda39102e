"""Named existing estimators as independent non-parametric formulas.

Each function here writes out one published estimator's identification
formula directly (its own sum over conditionals), deliberately *not* going
through the generalized engine, so agreement with the engine under the
matching allowability preset is a real check rather than a tautology. The
table-driven suite runs those comparisons on exact joints, where the claims
are algebraic identities and pass/fail is crisp.

Conditional (non-standardized) variants need no extra code: every formula is
generic in its outcome-allowable block, so evaluating it on a joint
conditioned to one stratum with an empty block is exactly the printed
conditional expression.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import SchemaError
from .gformula import decompose_exact
from .joint import FiniteJoint
from .nuisance import design_matrix
from .partition import Standardization, preset

FORMULAS = (
    "OB-linear-detailed",
    "OB-reweight-RMPW",
    "OB-reweight-IORW",
    "NIE-Pearl",
    "PSE-I-VVR",
    "PSE-II-VD",
    "PSE-III",
)


@dataclass(frozen=True)
class ReductionCase:
    preset_id: int
    formula: str
    expected_relation: str  # "Equal" | "GenerallyUnequal"


TABLE_CASES = (
    ReductionCase(1, "OB-linear-detailed", "Equal"),
    ReductionCase(2, "OB-reweight-RMPW", "Equal"),
    ReductionCase(2, "OB-reweight-IORW", "Equal"),
    ReductionCase(3, "NIE-Pearl", "Equal"),
    ReductionCase(4, "PSE-I-VVR", "Equal"),
    ReductionCase(4, "PSE-II-VD", "GenerallyUnequal"),
    ReductionCase(5, "PSE-III", "Equal"),
)


def _names(joint, roles, exclude=()):
    skip = {roles.race.variable, roles.target, roles.outcome} | set(exclude)
    if roles.selection is not None:
        skip.add(roles.selection.variable)
    return [v.name for v in joint.variables if v.name not in skip]


def _parts(joint, roles):
    race = roles.race.variable
    return (
        race,
        joint.slice_level(race, roles.race.marginalized),
        joint.slice_level(race, roles.race.privileged),
    )


def _ey(joint, roles, given):
    yvals = joint.value_grid(roles.outcome)
    table = joint.cond_table([roles.outcome], given)
    return (yvals * table).sum(axis=joint.axis(roles.outcome), keepdims=True)


def nie_analogue_exact(joint, roles, covariates=None):
    """Mediation-formula reduction: every covariate conditions everything."""
    c = sorted(covariates) if covariates is not None else sorted(_names(joint, roles))
    race, sl0, sl1 = _parts(joint, roles)
    m = roles.target
    ey = _ey(joint, roles, [m] + c + [race])[sl0]
    gap = (
        joint.cond_table([m], c + [race])[sl0]
        - joint.cond_table([m], c + [race])[sl1]
    )
    pc = joint.table(c)
    return float(np.nansum(ey * gap * pc))


def pse1_exact(joint, roles, outcome_allowable):
    """Stochastic-intervention reduction with demographics allowable only.

    The intervention law is the privileged group's target law given the
    allowables alone (a marginalization over its own non-allowables, not a
    conditional-independence claim).
    """
    ay = sorted(outcome_allowable)
    nn = sorted(set(_names(joint, roles)) - set(ay))
    race, sl0, sl1 = _parts(joint, roles)
    m = roles.target
    ey = _ey(joint, roles, [m] + nn + ay + [race])[sl0]
    gap = (
        joint.cond_table([m], nn + ay + [race])[sl0]
        - joint.cond_table([m], ay + [race])[sl1]
    )
    pn = joint.cond_table(nn, ay + [race])[sl0]
    pay = joint.table(ay)
    return float(np.nansum(ey * gap * pn * pay))


def pse2_contrast_exact(joint, roles, partition):
    """The two-intervention contrast that swaps in the marginalized group's
    own allowable-conditional target law; generally not the reduction."""
    ay = sorted(set(partition.outcome_allowable) & set(joint.names))
    am = sorted(set(partition.target_allowable_extra) & set(joint.names))
    nn = sorted(set(partition.non_allowable) & set(joint.names))
    race, sl0, sl1 = _parts(joint, roles)
    m = roles.target
    ey = _ey(joint, roles, [m] + nn + am + ay + [race])[sl0]
    gap = (
        joint.cond_table([m], am + ay + [race])[sl0]
        - joint.cond_table([m], am + ay + [race])[sl1]
    )
    pn = joint.cond_table(nn, am + ay + [race])[sl0]
    pam = joint.cond_table(am, ay + [race])[sl0]
    pay = joint.table(ay)
    return float(np.nansum(ey * gap * pn * pam * pay))


def pse3_exact(joint, roles, outcome_allowable):
    """Path-specific reduction with every remaining covariate target-allowable."""
    ay = sorted(outcome_allowable)
    am = sorted(set(_names(joint, roles)) - set(ay))
    race, sl0, sl1 = _parts(joint, roles)
    m = roles.target
    ey = _ey(joint, roles, [m] + am + ay + [race])[sl0]
    gap = (
        joint.cond_table([m], am + ay + [race])[sl0]
        - joint.cond_table([m], am + ay + [race])[sl1]
    )
    pam = joint.cond_table(am, ay + [race])[sl0]
    pay = joint.table(ay)
    return float(np.nansum(ey * gap * pam * pay))


def ob_marginal_exact(joint, roles):
    """Marginal-intervention reduction with no allowable covariates at all."""
    c = sorted(_names(joint, roles))
    race, sl0, sl1 = _parts(joint, roles)
    m = roles.target
    ey = _ey(joint, roles, [m] + c + [race])[sl0]
    gap = (
        joint.cond_table([m], c + [race])[sl0]
        - joint.cond_table([m], [race])[sl1]
    )
    pc = joint.cond_table(c, [race])[sl0]
    return float(np.nansum(ey * gap * pc))


def ob_detailed_linear(data, roles, covariates):
    """Detailed linear decomposition: target coefficients times level gaps.

    Fits the outcome on target-level indicators plus covariates by weighted
    least squares within the marginalized group and multiplies each
    non-reference coefficient by the marginal gap in that level's share.
    """
    race = roles.race.variable
    m = roles.target
    levels = data.levels(race)
    idx0 = data.codes(race) == levels.index(roles.race.marginalized)
    idx1 = data.codes(race) == levels.index(roles.race.privileged)
    rows0 = data.restrict(idx0)
    rows1 = data.restrict(idx1)
    predictors = [m] + sorted(covariates)
    X, names = design_matrix(rows0, predictors)
    y = rows0.numeric(roles.outcome)
    w = rows0.base_weights
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)

    m_levels = data.levels(m)
    total0 = rows0.base_weights.sum()
    total1 = rows1.base_weights.sum()
    out = 0.0
    for lvl in m_levels[1:]:
        col = names.index(f"{m}={lvl}")
        share0 = rows0.base_weights[rows0.codes(m) == m_levels.index(lvl)].sum() / total0
        share1 = rows1.base_weights[rows1.codes(m) == m_levels.index(lvl)].sum() / total1
        out += float(beta[col]) * (share0 - share1)
    return float(out)


def ob_reweight_exact(joint, roles, variant="rmpw"):
    """Reweighting decomposition: all covariates target-allowable, none
    outcome-allowable. The target-probability-ratio and inverse-odds-ratio
    variants are both written out; they coincide on exact joints."""
    c = sorted(_names(joint, roles))
    race, sl0, sl1 = _parts(joint, roles)
    m = roles.target
    ey = _ey(joint, roles, [m] + c + [race])[sl0]
    mass0 = joint.cond_table([m] + c, [race])[sl0]
    if variant == "rmpw":
        ratio = joint.cond_table([m], c + [race])[sl1] / joint.cond_table([m], c + [race])[sl0]
    elif variant == "iorw":
        odds_m = joint.cond_table([race], [m] + c)[sl1] / joint.cond_table([race], [m] + c)[sl0]
        odds = joint.cond_table([race], c)[sl1] / joint.cond_table([race], c)[sl0]
        ratio = odds_m / odds
    else:
        raise SchemaError(f"unknown reweighting variant {variant!r}")
    observed = np.nansum(ey * mass0)
    counterfactual = np.nansum(ey * mass0 * ratio)
    return float(observed - counterfactual)


# ---------------------------------------------------------------------------
# suite


PAPER_SCHEMA_TAGS = {
    "age": "demographic",
    "sex": "demographic",
    "dia": "clinical",
    "l1": "clinical",
    "edu": "socioeconomic",
    "ins": "socioeconomic",
}


def evaluate_case(case, joint, roles, tags=None):
    """(formula value, engine reduction) for one designation-table row."""
    tags = dict(tags or PAPER_SCHEMA_TAGS)
    tags = {k: v for k, v in tags.items() if k in joint.names}
    partition = preset(case.preset_id, tags)
    demo = tuple(sorted(v for v, t in tags.items() if t == "demographic"))
    if case.formula == "NIE-Pearl":
        value = nie_analogue_exact(joint, roles, sorted(tags))
    elif case.formula == "PSE-I-VVR":
        value = pse1_exact(joint, roles, demo)
    elif case.formula == "PSE-II-VD":
        value = pse2_contrast_exact(joint, roles, partition)
    elif case.formula == "PSE-III":
        value = pse3_exact(joint, roles, demo)
    elif case.formula == "OB-linear-detailed":
        value = ob_marginal_exact(joint, roles)
    elif case.formula == "OB-reweight-RMPW":
        value = ob_reweight_exact(joint, roles, "rmpw")
    elif case.formula == "OB-reweight-IORW":
        value = ob_reweight_exact(joint, roles, "iorw")
    else:
        raise SchemaError(f"unknown formula {case.formula!r}")
    engine = decompose_exact(joint, roles, partition, Standardization.POOLED).reduction
    return value, engine


def random_paper_joint(rng, min_cell=0.05, tags=None):
    """A strictly positive random joint over the six-covariate schema."""
    from .joint import VariableSpec

    tags = dict(tags or PAPER_SCHEMA_TAGS)
    names = ["race"] + sorted(tags) + ["m1", "y2"]
    variables = tuple(
        VariableSpec(n, ("r0", "r0p") if n == "race" else ("0", "1")) for n in names
    )
    shape = tuple(len(v.levels) for v in variables)
    probs = rng.uniform(min_cell, 1.0, size=shape)
    return FiniteJoint(variables, probs / probs.sum())


def witness_joint():
    """The committed counterexample joint for the two-intervention contrast."""
    text = resources.files("eqdecomp").joinpath("data/pse2_witness.tsv").read_text()
    return FiniteJoint.from_text(text)


def run_suite(roles, n_joints=100, seed=0, tol=1e-10, witness_threshold=0.01):
    """Run every designation-table comparison; returns per-case result rows.

    Equality cases sweep ``n_joints`` random strictly positive joints and
    report the worst absolute gap; the generally-unequal case checks both
    directions (agreement under target/non-allowable conditional
    independence, a material gap on the committed witness joint).
    """
    rng = np.random.default_rng(seed)
    joints = [random_paper_joint(rng) for _ in range(n_joints)]
    rows = []
    for case in TABLE_CASES:
        if case.expected_relation == "Equal":
            worst = 0.0
            for joint in joints:
                value, engine = evaluate_case(case, joint, roles)
                worst = max(worst, abs(value - engine))
            rows.append({
                "preset": case.preset_id,
                "formula": case.formula,
                "relation": case.expected_relation,
                "max_gap": worst,
                "passed": bool(worst <= tol),
            })
        else:
            ind_worst = 0.0
            for joint in joints:
                independent = _make_target_independent_of_nonallowables(joint, roles, case)
                value, engine = evaluate_case(case, independent, roles)
                ind_worst = max(ind_worst, abs(value - engine))
            witness = witness_joint()
            wtags = {"age": "demographic", "edu": "socioeconomic"}
            wroles = roles
            value, engine = evaluate_case(case, witness, wroles, tags=wtags)
            gap = abs(value - engine)
            rows.append({
                "preset": case.preset_id,
                "formula": case.formula,
                "relation": case.expected_relation,
                "max_gap": ind_worst,
                "witness_gap": gap,
                "passed": bool(ind_worst <= tol and gap > witness_threshold),
            })
    return rows


def _make_target_independent_of_nonallowables(joint, roles, case):
    """Rebuild a joint so the target ignores the preset's non-allowables."""
    tags = {k: v for k, v in PAPER_SCHEMA_TAGS.items() if k in joint.names}
    partition = preset(case.preset_id, tags)
    race = roles.race.variable
    m = roles.target
    y = roles.outcome
    allow = sorted(
        set(partition.outcome_allowable) | set(partition.target_allowable_extra)
    )
    passive = [
        v.name for v in joint.variables if v.name not in {race, m, y} and v.name not in allow
    ]
    cov = joint.table(allow + passive + [race])
    m_law = joint.cond_table([m], allow + [race])
    y_law = joint.cond_table([y], [m] + allow + passive + [race])
    probs = cov * np.nan_to_num(m_law) * np.nan_to_num(y_law)
    return FiniteJoint(joint.variables, probs / probs.sum())

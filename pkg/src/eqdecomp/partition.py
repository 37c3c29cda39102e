"""Variable roles, the allowability partition, and schema validation.

These are pure configuration objects shared by every backend. Sets are
stored as sorted tuples so any iteration over them is deterministic across
processes (important for reproducible floating-point summation order).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import ValidationError


class Standardization(enum.Enum):
    """Reference law over the outcome-allowable covariates.

    ``POOLED`` standardizes stratum means over the whole cohort's covariate
    distribution, ``R0`` over the marginalized group's, ``R0_PRIME`` over the
    privileged group's.
    """

    POOLED = "pooled"
    R0 = "r0"
    R0_PRIME = "r0_prime"


@dataclass(frozen=True)
class RaceRole:
    variable: str
    marginalized: str
    privileged: str

    def __post_init__(self):
        object.__setattr__(self, "marginalized", str(self.marginalized))
        object.__setattr__(self, "privileged", str(self.privileged))
        if self.marginalized == self.privileged:
            raise ValidationError(
                f"race levels must differ, got {self.marginalized!r} twice"
            )


@dataclass(frozen=True)
class SelectionRole:
    variable: str
    level: str

    def __post_init__(self):
        object.__setattr__(self, "level", str(self.level))


@dataclass(frozen=True)
class RoleBindings:
    """Binding of the four analysis roles to dataset columns.

    The marginalized level of the race variable is explicit configuration and
    never inferred from data ordering: swapping the coding swaps the sign and
    meaning of every contrast.
    """

    race: RaceRole
    target: str
    outcome: str
    selection: SelectionRole | None = None

    def role_variables(self):
        out = [self.race.variable, self.target, self.outcome]
        if self.selection is not None:
            out.append(self.selection.variable)
        return out


@dataclass(frozen=True)
class AllowabilityPartition:
    """Disjoint covariate sets defining the disparity and the intervention.

    ``outcome_allowable`` covariates define (standardize) the outcome
    disparity and also condition the intervention; ``target_allowable_extra``
    covariates condition the intervention only; ``non_allowable`` covariates
    are used solely for confounding adjustment. Any of the sets may be empty.
    """

    outcome_allowable: tuple = ()
    target_allowable_extra: tuple = ()
    non_allowable: tuple = ()

    def __post_init__(self):
        for name in ("outcome_allowable", "target_allowable_extra", "non_allowable"):
            object.__setattr__(self, name, tuple(sorted(set(getattr(self, name)))))
        sets = [set(self.outcome_allowable), set(self.target_allowable_extra), set(self.non_allowable)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            overlap = (sets[0] & sets[1]) | (sets[0] & sets[2]) | (sets[1] & sets[2])
            raise ValidationError(
                f"allowability sets overlap on {sorted(overlap)}"
            )

    @property
    def target_allowable(self):
        """The full conditioning set of the intervention (A-outcome plus extra)."""
        return tuple(sorted(set(self.outcome_allowable) | set(self.target_allowable_extra)))

    def all_covariates(self):
        return tuple(
            sorted(
                set(self.outcome_allowable)
                | set(self.target_allowable_extra)
                | set(self.non_allowable)
            )
        )


@dataclass(frozen=True)
class Violation:
    kind: str
    variables: tuple
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()
    warnings: tuple = ()

    @property
    def valid(self):
        return not self.violations

    def raise_if_invalid(self):
        if self.violations:
            raise ValidationError("; ".join(v.message for v in self.violations))


def validate(partition, roles, schema):
    """Check a partition against role bindings and the dataset schema.

    Parameters
    ----------
    partition : AllowabilityPartition or mapping
        A constructed partition, or a raw mapping with keys
        ``outcome_allowable`` / ``target_allowable_extra`` / ``non_allowable``
        (not yet validated, so overlaps are reported rather than raised).
    roles : RoleBindings
    schema : iterable of variable names present in the data.

    Returns
    -------
    ValidationReport
        Violations for overlaps, unknown names, and role collisions;
        warnings for covariates absent from all three sets, which are
        ignored by estimation.
    """
    schema = list(schema)
    schema_set = set(schema)
    violations = []
    warnings = []

    if not isinstance(partition, AllowabilityPartition):
        raw = {
            "outcome_allowable": tuple(partition.get("outcome_allowable", ())),
            "target_allowable_extra": tuple(partition.get("target_allowable_extra", ())),
            "non_allowable": tuple(partition.get("non_allowable", ())),
        }
        sets = [set(v) for v in raw.values()]
        overlap = (sets[0] & sets[1]) | (sets[0] & sets[2]) | (sets[1] & sets[2])
        if overlap:
            violations.append(
                Violation(
                    "overlap",
                    tuple(sorted(overlap)),
                    f"allowability sets overlap on {sorted(overlap)}",
                )
            )
            deduped = dict(raw)
            deduped["target_allowable_extra"] = tuple(
                set(raw["target_allowable_extra"]) - sets[0]
            )
            deduped["non_allowable"] = tuple(set(raw["non_allowable"]) - sets[0] - sets[1])
            partition = AllowabilityPartition(**deduped)
        else:
            partition = AllowabilityPartition(**raw)

    role_vars = roles.role_variables()
    if len(set(role_vars)) != len(role_vars):
        violations.append(
            Violation("role-collision", tuple(role_vars), "role bindings reuse a variable")
        )
    for name in role_vars:
        if name not in schema_set:
            violations.append(
                Violation("unknown-variable", (name,), f"role variable {name!r} not in schema")
            )

    partition_vars = partition.all_covariates()
    for name in partition_vars:
        if name not in schema_set:
            violations.append(
                Violation(
                    "unknown-variable", (name,), f"partition variable {name!r} not in schema"
                )
            )
        if name in role_vars:
            violations.append(
                Violation(
                    "role-collision",
                    (name,),
                    f"variable {name!r} is role-bound and cannot appear in an allowability set",
                )
            )

    leftover = sorted(schema_set - set(partition_vars) - set(role_vars))
    if leftover:
        warnings.append(
            "covariates not assigned to any allowability set are ignored by "
            f"estimation: {leftover}"
        )
    return ValidationReport(tuple(violations), tuple(warnings))


# Preset ids follow the rows of the estimator-designation table; string
# aliases name the estimator family each row corresponds to.
_PRESET_ALIASES = {
    1: 1, "ob-linear": 1, "oaxaca-blinder-linear": 1,
    2: 2, "ob-reweight": 2, "oaxaca-blinder-reweight": 2,
    3: 3, "nie": 3, "natural-effect-analogue": 3,
    4: 4, "pse-1": 4, "pse-i-ii": 4, "pse-1-2": 4,
    5: 5, "pse-3": 5, "pse-iii": 5,
    6: 6, "meaningful": 6,
}

VALID_TAGS = ("demographic", "clinical", "socioeconomic")


def preset(name, tags):
    """Build the allowability partition of a named designation-table row.

    Parameters
    ----------
    name : int or str
        Row id 1-6 or an estimator-family alias (e.g. ``"nie"``,
        ``"meaningful"``).
    tags : dict
        Covariate name -> one of ``demographic``/``clinical``/``socioeconomic``;
        must cover every covariate the partition should mention.
    """
    key = name if not isinstance(name, str) else name.strip().lower()
    if key not in _PRESET_ALIASES:
        raise ValidationError(f"unknown preset id {name!r}")
    row = _PRESET_ALIASES[key]

    for var, tag in tags.items():
        if tag not in VALID_TAGS:
            raise ValidationError(
                f"covariate {var!r} has unknown tag {tag!r}; expected one of {VALID_TAGS}"
            )
    all_vars = tuple(sorted(tags))
    demo = tuple(sorted(v for v, t in tags.items() if t == "demographic"))
    clinical = tuple(sorted(v for v, t in tags.items() if t == "clinical"))
    ses = tuple(sorted(v for v, t in tags.items() if t == "socioeconomic"))
    rest = tuple(sorted(set(all_vars) - set(demo)))

    if row == 1:
        return AllowabilityPartition((), (), all_vars)
    if row == 2:
        return AllowabilityPartition((), all_vars, ())
    if row == 3:
        return AllowabilityPartition(all_vars, (), ())
    if row == 4:
        return AllowabilityPartition(demo, (), rest)
    if row == 5:
        return AllowabilityPartition(demo, rest, ())
    return AllowabilityPartition(demo, clinical, ses)

"""Exact probability tables over finite discrete variables.

``FiniteJoint`` stores the full joint as a dense float64 array with one axis
per variable. All derived quantities (marginals, conditionals, expectations,
the target intervention) are computed by exact summation, which makes the
class usable as a ground-truth oracle: tolerances are set by float64
round-off, not by estimation error.

Values are immutable after construction and every operation returns a new
object, so instances are safe to share freely.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import CommonSupportError, SchemaError, UndefinedConditionalError

MASS_TOL = 1e-12


@dataclass(frozen=True)
class VariableSpec:
    """A named categorical variable with an ordered set of level labels."""

    name: str
    levels: tuple

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
        if len(self.levels) < 2:
            raise SchemaError(f"variable {self.name!r} needs at least two levels")
        if len(set(self.levels)) != len(self.levels):
            raise SchemaError(f"variable {self.name!r} has duplicate level labels")


@dataclass(frozen=True)
class FiniteJoint:
    """Exact joint distribution over an ordered list of finite variables.

    Parameters
    ----------
    variables : sequence of VariableSpec
        Axis order of ``probs``.
    probs : ndarray
        Nonnegative array of shape ``tuple(len(v.levels) for v in variables)``
        summing to 1 within ``MASS_TOL``.
    """

    variables: tuple
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        variables = tuple(self.variables)
        probs = np.asarray(self.probs, dtype=float)
        shape = tuple(len(v.levels) for v in variables)
        if probs.shape != shape:
            raise SchemaError(
                f"probability array shape {probs.shape} does not match variable "
                f"level counts {shape}"
            )
        if np.any(probs < 0):
            raise SchemaError("negative cell probability")
        total = float(probs.sum())
        if abs(total - 1.0) > MASS_TOL:
            raise SchemaError(f"total mass {total!r} differs from 1 by more than {MASS_TOL}")
        names = [v.name for v in variables]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate variable names")
        probs = probs.copy()
        probs.flags.writeable = False
        object.__setattr__(self, "variables", variables)
        object.__setattr__(self, "probs", probs)

    # -- lookups ---------------------------------------------------------

    @property
    def names(self):
        return tuple(v.name for v in self.variables)

    def variable(self, name):
        for v in self.variables:
            if v.name == name:
                return v
        raise SchemaError(f"unknown variable {name!r}")

    def axis(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown variable {name!r}") from None

    def level_index(self, name, level):
        var = self.variable(name)
        level = str(level)
        try:
            return var.levels.index(level)
        except ValueError:
            raise SchemaError(
                f"variable {name!r} has no level {level!r}; levels are {var.levels}"
            ) from None

    def cells(self):
        """Iterate ``(assignment dict, probability)`` over every cell."""
        for idx in itertools.product(*(range(len(v.levels)) for v in self.variables)):
            assignment = {v.name: v.levels[i] for v, i in zip(self.variables, idx)}
            yield assignment, float(self.probs[idx])

    def prob(self, assignment):
        """Probability of a full assignment (name -> level)."""
        idx = tuple(self.level_index(v.name, assignment[v.name]) for v in self.variables)
        return float(self.probs[idx])

    # -- core operations --------------------------------------------------

    def marginalize(self, keep):
        """Sum out every variable not named in ``keep``, preserving order."""
        keep = list(keep)
        for name in keep:
            self.axis(name)  # raise on unknown names
        keep_set = set(keep)
        drop_axes = tuple(i for i, v in enumerate(self.variables) if v.name not in keep_set)
        new_vars = tuple(v for v in self.variables if v.name in keep_set)
        new_probs = self.probs.sum(axis=drop_axes) if drop_axes else self.probs
        return FiniteJoint(new_vars, new_probs)

    def condition(self, evidence):
        """Condition on ``evidence`` (name -> level) and renormalize.

        Raises ``UndefinedConditionalError`` when the evidence has zero mass;
        positivity diagnostics rely on that signal rather than NaN.
        """
        index = [slice(None)] * self.probs.ndim
        for name, level in evidence.items():
            index[self.axis(name)] = self.level_index(name, level)
        sliced = self.probs[tuple(index)]
        mass = float(sliced.sum())
        if mass <= 0.0:
            raise UndefinedConditionalError(
                f"conditioning evidence {dict(evidence)} has zero probability",
                evidence=evidence,
            )
        new_vars = tuple(v for v in self.variables if v.name not in evidence)
        return FiniteJoint(new_vars, sliced / mass)

    def expectation(self, f):
        """Exact expectation of ``f(assignment) -> real`` under the joint."""
        total = 0.0
        for assignment, p in self.cells():
            if p:
                total += f(assignment) * p
        return total

    # -- broadcast helpers (full-rank tables with singleton axes) ---------

    def table(self, names):
        """Marginal mass over ``names`` kept in the full-rank broadcast layout.

        The returned array has one axis per joint variable; axes not in
        ``names`` have size 1, so tables over different variable subsets
        combine by ordinary numpy broadcasting.
        """
        name_set = set(names)
        for name in name_set:
            self.axis(name)
        drop = tuple(i for i, v in enumerate(self.variables) if v.name not in name_set)
        return self.probs.sum(axis=drop, keepdims=True) if drop else self.probs.copy()

    def cond_table(self, target, given):
        """P(target | given) in broadcast layout; NaN where the stratum is empty."""
        target = list(target)
        given = list(given)
        num = self.table(target + given)
        den = self.table(given)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = num / den
        out[np.broadcast_to(den == 0.0, out.shape)] = np.nan
        return out

    def value_grid(self, name, values=None):
        """Numeric values of ``name``'s levels in broadcast layout.

        ``values`` maps level label -> float; by default labels are parsed
        as floats (the convention for numeric outcomes).
        """
        var = self.variable(name)
        if values is None:
            try:
                vals = np.array([float(lv) for lv in var.levels])
            except ValueError:
                raise SchemaError(
                    f"levels of {name!r} are not numeric; supply an explicit value map"
                ) from None
        else:
            vals = np.array([float(values[lv]) for lv in var.levels])
        shape = [1] * len(self.variables)
        shape[self.axis(name)] = len(var.levels)
        return vals.reshape(shape)

    def slice_level(self, name, level):
        """Select one level of ``name`` (broadcast layout, size-1 axis kept)."""
        index = [slice(None)] * self.probs.ndim
        index[self.axis(name)] = slice(
            self.level_index(name, level), self.level_index(name, level) + 1
        )
        return tuple(index)

    def first_assignment_where(self, mask):
        """Label assignment of the first True cell of a broadcast-layout mask."""
        mask = np.broadcast_to(mask, self.probs.shape)
        flat = int(np.flatnonzero(mask.ravel())[0])
        idx = np.unravel_index(flat, self.probs.shape)
        return {v.name: v.levels[i] for v, i in zip(self.variables, idx)}

    # -- the target intervention ------------------------------------------

    def intervene_target(self, roles, partition):
        """Joint law of the marginalized group's stratum under the intervention.

        The target's conditional law given the target-allowable covariates is
        replaced by the privileged group's law; the covariate law and the
        outcome's conditional law of the marginalized group are kept. Under
        the returned law the target is independent of the non-allowables
        within target-allowable strata. The race axis is retained (degenerate
        at the marginalized level) so standardization helpers apply unchanged.

        Variables other than the bound roles and the allowable sets are
        treated as baseline covariates (part of the non-allowable block).
        """
        race = roles.race.variable
        r0 = roles.race.marginalized
        r0p = roles.race.privileged
        m = roles.target
        y = roles.outcome
        allow = sorted(set(partition.outcome_allowable) | set(partition.target_allowable_extra))
        passive = [
            v.name
            for v in self.variables
            if v.name not in {race, m, y} and v.name not in allow
        ]

        sl_r0 = self.slice_level(race, r0)
        sl_r0p = self.slice_level(race, r0p)
        if self.probs[sl_r0].sum() <= 0 or self.probs[sl_r0p].sum() <= 0:
            raise SchemaError(
                f"race variable {race!r} is not binary in the cohort: one of "
                f"{r0!r}/{r0p!r} has zero mass"
            )

        cov = np.nan_to_num(self.cond_table(allow + passive, [race])[sl_r0], nan=0.0)
        m_law = self.cond_table([m], allow + [race])[sl_r0p]
        y_law = self.cond_table([y], [m] + allow + passive + [race])[sl_r0]

        m_undefined = np.isnan(m_law).any(axis=self.axis(m), keepdims=True)
        bad = (cov > 0) & np.broadcast_to(m_undefined, np.broadcast_shapes(cov.shape, m_undefined.shape))
        if bad.any():
            stratum = self.first_assignment_where(bad)
            detail = {k: stratum[k] for k in allow}
            raise CommonSupportError(
                "common support violated: marginalized-group stratum "
                f"{detail} has no privileged-group target law",
                stratum=detail,
            )

        pre_outcome = cov * np.nan_to_num(m_law, nan=0.0)
        y_undefined = np.isnan(y_law).any(axis=self.axis(y), keepdims=True)
        bad = (pre_outcome > 0) & np.broadcast_to(
            y_undefined, np.broadcast_shapes(pre_outcome.shape, y_undefined.shape)
        )
        if bad.any():
            stratum = self.first_assignment_where(bad)
            detail = {k: stratum[k] for k in [m] + allow + passive}
            raise CommonSupportError(
                "common support violated: the marginalized group never exhibits "
                f"the intervened target configuration {detail}",
                stratum=detail,
            )

        new = np.zeros_like(self.probs)
        new[sl_r0] = pre_outcome * np.nan_to_num(y_law, nan=0.0)
        return FiniteJoint(self.variables, new / new.sum())

    # -- text round-trip ---------------------------------------------------

    def to_text(self):
        """Serialize: header lines declare variables, then one line per cell.

        Cells are tab-separated level labels followed by the probability, in
        lexicographic order of the label tuple.
        """
        lines = [f"# {v.name}: {','.join(v.levels)}" for v in self.variables]
        rows = []
        for assignment, p in self.cells():
            labels = tuple(assignment[v.name] for v in self.variables)
            rows.append((labels, p))
        rows.sort(key=lambda r: r[0])
        for labels, p in rows:
            lines.append("\t".join(labels) + "\t" + repr(p))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, variables=None):
        """Parse the ``to_text`` format; header supplies variables if omitted."""
        header = []
        cells = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                name, _, levels = line[1:].partition(":")
                header.append(VariableSpec(name.strip(), tuple(levels.strip().split(","))))
            else:
                parts = line.split("\t")
                cells.append((tuple(parts[:-1]), float(parts[-1])))
        if variables is None:
            if not header:
                raise SchemaError("no variable header in joint text and none supplied")
            variables = tuple(header)
        else:
            variables = tuple(variables)
        shape = tuple(len(v.levels) for v in variables)
        probs = np.zeros(shape)
        for labels, p in cells:
            if len(labels) != len(variables):
                raise SchemaError(f"cell {labels} does not match variable count")
            idx = tuple(v.levels.index(lab) for v, lab in zip(variables, labels))
            probs[idx] = p
        return cls(variables, probs)


def joint_from_cells(variables, cell_probs):
    """Build a FiniteJoint from a {assignment-tuple-or-dict: prob} mapping.

    Missing assignments get probability 0. Assignment keys may be tuples in
    variable order or dicts keyed by variable name.
    """
    variables = tuple(variables)
    shape = tuple(len(v.levels) for v in variables)
    probs = np.zeros(shape)
    for key, p in cell_probs.items():
        if isinstance(key, dict):
            labels = tuple(str(key[v.name]) for v in variables)
        else:
            labels = tuple(str(k) for k in key)
        idx = tuple(v.levels.index(lab) for v, lab in zip(variables, labels))
        probs[idx] = p
    return FiniteJoint(variables, probs)

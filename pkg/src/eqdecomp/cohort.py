"""Row-level cohort data with typed columns and role annotations.

Columns are held as numpy arrays: categorical columns as integer level codes
plus a declared level order, numeric columns as float64. An optional
``base_weights`` vector carries enumeration masses when a table is built from
an exact joint (one row per cell), which lets sample-path code reproduce
oracle results exactly.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from .errors import SchemaError, ValidationError


class CohortTable:
    """Immutable-by-convention column store for one analysis cohort.

    Parameters
    ----------
    data : pandas.DataFrame or dict of arrays
        Input columns.
    categorical : dict, optional
        Column name -> ordered tuple of level labels. Declared columns are
        stored as level codes; all other columns must be numeric.
    base_weights : array, optional
        Per-row nonnegative mass (defaults to 1). Used by enumeration tables.
    """

    def __init__(self, data, categorical=None, base_weights=None):
        if isinstance(data, pd.DataFrame):
            data = {name: data[name].to_numpy() for name in data.columns}
        self._levels = {}
        self._codes = {}
        self._numeric = {}
        self._order = []
        categorical = dict(categorical or {})
        n = None
        for name, values in data.items():
            values = np.asarray(values)
            if n is None:
                n = len(values)
            elif len(values) != n:
                raise SchemaError(f"column {name!r} length {len(values)} != {n}")
            self._order.append(name)
            if name in categorical:
                levels = tuple(str(v) for v in categorical[name])
                series = pd.Series(values)
                missing = series.isna().to_numpy() | (series.astype(object) == "").to_numpy()
                labels = series.astype(str)
                cat = pd.Categorical(labels, categories=levels)
                codes = np.asarray(cat.codes, dtype=np.int64).copy()
                bad = (codes < 0) & ~missing
                if bad.any():
                    row = int(np.flatnonzero(bad)[0])
                    raise SchemaError(
                        f"column {name!r} row {row}: value {labels.iloc[row]!r} not "
                        f"among declared levels {levels}"
                    )
                codes[missing] = -1
                self._levels[name] = levels
                self._codes[name] = codes
            else:
                try:
                    self._numeric[name] = np.asarray(values, dtype=float)
                except (TypeError, ValueError):
                    raise SchemaError(
                        f"column {name!r} is not numeric and has no declared levels"
                    ) from None
        self.n = 0 if n is None else n
        if base_weights is None:
            self.base_weights = np.ones(self.n)
        else:
            self.base_weights = np.asarray(base_weights, dtype=float)
            if self.base_weights.shape != (self.n,):
                raise SchemaError("base_weights length mismatch")
            if np.any(self.base_weights < 0):
                raise SchemaError("negative base weight")

    # -- column access -----------------------------------------------------

    @property
    def names(self):
        return tuple(self._order)

    def is_categorical(self, name):
        self._require(name)
        return name in self._levels

    def levels(self, name):
        self._require(name)
        if name not in self._levels:
            raise SchemaError(f"column {name!r} is numeric, not categorical")
        return self._levels[name]

    def codes(self, name):
        """Integer level codes of a categorical column (-1 marks missing)."""
        return self._codes[name] if name in self._codes else self._fail_kind(name, "categorical")

    def labels(self, name):
        codes = self.codes(name)
        levels = np.array(self._levels[name] + ("",), dtype=object)
        return levels[codes]

    def numeric(self, name):
        """Column as float64; categorical labels are parsed when numeric."""
        self._require(name)
        if name in self._numeric:
            return self._numeric[name]
        levels = self._levels[name]
        try:
            values = np.array([float(lv) for lv in levels] + [np.nan])
        except ValueError:
            raise SchemaError(
                f"column {name!r} has non-numeric levels {levels} and cannot be "
                "used as a numeric quantity"
            ) from None
        return values[self._codes[name]]

    def observed_levels(self, name):
        codes = self.codes(name)
        seen = np.unique(codes[codes >= 0])
        return tuple(self._levels[name][i] for i in seen)

    def _require(self, name):
        if name not in self._order:
            raise SchemaError(f"unknown column {name!r}")

    def _fail_kind(self, name, kind):
        self._require(name)
        raise SchemaError(f"column {name!r} is not {kind}")

    # -- row subsetting ------------------------------------------------------

    def restrict(self, mask_or_indices):
        idx = np.asarray(mask_or_indices)
        out = CohortTable.__new__(CohortTable)
        out._levels = dict(self._levels)
        out._order = list(self._order)
        out._codes = {k: v[idx] for k, v in self._codes.items()}
        out._numeric = {k: v[idx] for k, v in self._numeric.items()}
        out.base_weights = self.base_weights[idx]
        out.n = len(out.base_weights)
        return out

    def apply_selection(self, roles):
        """Keep rows matching the selection role; returns (table, n_dropped)."""
        if roles.selection is None:
            return self, 0
        sel = roles.selection
        keep = self.codes(sel.variable) == self._level_code(sel.variable, sel.level)
        return self.restrict(keep), int(self.n - keep.sum())

    def _level_code(self, name, level):
        levels = self.levels(name)
        level = str(level)
        if level not in levels:
            raise SchemaError(f"column {name!r} has no level {level!r}")
        return levels.index(level)

    def drop_missing(self, columns):
        """Drop rows with missing values in ``columns``; returns (table, n_dropped)."""
        keep = np.ones(self.n, dtype=bool)
        for name in columns:
            self._require(name)
            if name in self._codes:
                keep &= self._codes[name] >= 0
            else:
                keep &= ~np.isnan(self._numeric[name])
        dropped = int(self.n - keep.sum())
        return (self.restrict(keep), dropped) if dropped else (self, 0)

    # -- conversions ---------------------------------------------------------

    @classmethod
    def from_joint(cls, joint, drop_zero_cells=True):
        """One row per joint cell, with the cell probability as base weight."""
        columns = {v.name: [] for v in joint.variables}
        weights = []
        for assignment, p in joint.cells():
            if drop_zero_cells and p == 0.0:
                continue
            for name, level in assignment.items():
                columns[name].append(level)
            weights.append(p)
        categorical = {v.name: v.levels for v in joint.variables}
        return cls(columns, categorical=categorical, base_weights=np.array(weights))

    def to_frame(self):
        data = {}
        for name in self._order:
            data[name] = self.labels(name) if name in self._codes else self._numeric[name]
        return pd.DataFrame(data)

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path, categorical=None):
        """Read a comma-separated UTF-8 file with a header row.

        Declared categorical columns are validated against their levels;
        everything else must parse as a number. Errors carry row/column
        coordinates (1-based data rows, as in the file minus the header).
        """
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
        if raw.shape[0] == 0:
            raise ValidationError(f"{path}: no data rows (empty cohort)")
        categorical = dict(categorical or {})
        data = {}
        for name in raw.columns:
            col = raw[name].to_numpy()
            if name in categorical:
                data[name] = np.array([v if v != "" else None for v in col], dtype=object)
            else:
                parsed = pd.to_numeric(pd.Series([v if v != "" else None for v in col]), errors="coerce")
                bad = parsed.isna().to_numpy() & (col != "")
                if bad.any():
                    row = int(np.flatnonzero(bad)[0])
                    raise SchemaError(
                        f"{path}: row {row + 1}, column {name!r}: cannot parse "
                        f"{col[row]!r} as a number"
                    )
                data[name] = parsed.to_numpy(dtype=float)
        return cls(data, categorical=categorical)



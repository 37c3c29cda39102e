import numpy as np
import pytest

import oracles
from conftest import random_joint, random_partition

from eqdecomp.errors import PositivityError
from eqdecomp.partition import AllowabilityPartition, Standardization
from eqdecomp.weights import (
    WeightVector,
    exact_cells,
    exact_weight_vectors,
    group_standardization_weight,
    iorw_weight,
    rmpw_weight,
    truncate_weights,
)


def test_group_weight_is_one_when_allowables_independent_of_race(worked_joint, worked_roles, worked_partition):
    # A is balanced and independent of race, so every weight is exactly one
    for std, group in ((Standardization.POOLED, "r0"), (Standardization.POOLED, "r0p")):
        cells = exact_cells(worked_joint, worked_roles, worked_partition, group)
        w = group_standardization_weight(cells.p_r0_given_ay, cells.p_r0, group, std)
        assert np.max(np.abs(w.values - 1.0)) < 1e-12


def test_group_weight_identically_one_under_own_standard():
    p = np.array([0.3, 0.6, 0.9])
    w0 = group_standardization_weight(p, 0.4, "r0", Standardization.R0)
    assert np.all(w0.values == 1.0)
    w1 = group_standardization_weight(p, 0.4, "r0p", Standardization.R0_PRIME)
    assert np.all(w1.values == 1.0)


def test_standard_switch_consistency():
    rng = np.random.default_rng(3)
    p = rng.uniform(0.05, 0.95, 50)
    p_r0 = 0.37
    pooled = group_standardization_weight(p, p_r0, "r0", Standardization.POOLED)
    to_r0 = group_standardization_weight(p, p_r0, "r0", Standardization.R0)
    np.testing.assert_allclose(pooled.values * p / p_r0, to_r0.values, atol=1e-12)
    to_r0p = group_standardization_weight(p, p_r0, "r0", Standardization.R0_PRIME)
    np.testing.assert_allclose(
        pooled.values * (1 - p) / (1 - p_r0), to_r0p.values, atol=1e-12
    )
    # same switch applies to privileged-group weights
    pooled1 = group_standardization_weight(p, p_r0, "r0p", Standardization.POOLED)
    to_r0_1 = group_standardization_weight(p, p_r0, "r0p", Standardization.R0)
    np.testing.assert_allclose(pooled1.values * p / p_r0, to_r0_1.values, atol=1e-12)


def test_rmpw_worked_rows(worked_joint, worked_roles, worked_partition):
    cells = exact_cells(worked_joint, worked_roles, worked_partition, "r0")
    w = rmpw_weight(
        cells.rmpw_numerator, cells.rmpw_denominator, cells.p_r0_given_ay, cells.p_r0
    )
    data_rows = list(
        zip(
            np.broadcast_to(worked_joint.value_grid("y"), worked_joint.probs[worked_joint.slice_level("race", "r0")].shape).reshape(-1),
            w.values,
        )
    )
    # identify rows by (a, m): weight for (a=1, m=1) is 0.8/0.4 = 2.0,
    # for (a=0, m=0) it is 0.4/0.8 = 0.5
    got = {}
    i = 0
    for assignment, p in worked_joint.cells():
        if assignment["race"] != "r0" or p == 0:
            continue
        got[(assignment["a"], assignment["m"], assignment["y"])] = w.values[i]
        i += 1
    assert got[("1", "1", "0")] == pytest.approx(2.0, abs=1e-12)
    assert got[("0", "0", "0")] == pytest.approx(0.5, abs=1e-12)
    # matches the brute-force oracle rowwise
    row = {"race": "r0", "a": "1", "m": "1"}
    assert oracles.rmpw_weight_at(
        worked_joint, row, "race", "r0", "r0p", "m", ["a"], [], []
    ) == pytest.approx(2.0, abs=1e-12)


def test_rmpw_equals_group_weight_when_target_race_invariant():
    num = np.array([0.3, 0.7, 0.5])
    den = num.copy()
    p = np.array([0.5, 0.4, 0.6])
    w = rmpw_weight(num, den, p, 0.45)
    base = group_standardization_weight(p, 0.45, "r0")
    np.testing.assert_allclose(w.values, base.values, atol=1e-15)


def test_rmpw_zero_denominator_errors():
    with pytest.raises(PositivityError):
        rmpw_weight(np.array([0.5]), np.array([0.0]), np.array([0.5]), 0.5)


def test_rmpw_zero_numerator_allowed_and_counted():
    w = rmpw_weight(np.array([0.0, 0.4]), np.array([0.5, 0.5]), np.array([0.5, 0.5]), 0.5)
    assert w.values[0] == 0.0
    assert w.diagnostics.n_zero == 1


def test_iorw_worked_row(worked_joint, worked_roles, worked_partition):
    cells = exact_cells(worked_joint, worked_roles, worked_partition, "r0")
    w = iorw_weight(p_r0_given_ay=cells.p_r0_given_ay, p_r0=cells.p_r0, **cells.iorw)
    got = {}
    i = 0
    for assignment, p in worked_joint.cells():
        if assignment["race"] != "r0" or p == 0:
            continue
        got[(assignment["a"], assignment["m"], assignment["y"])] = w.values[i]
        i += 1
    # [ (2/3 / 1/3) / (0.5/0.5) ] * 1 * 1 = 2.0; middle term cancels with no
    # non-allowables
    assert got[("1", "1", "1")] == pytest.approx(2.0, abs=1e-12)
    row = {"race": "r0", "a": "1", "m": "1"}
    assert oracles.iorw_weight_at(
        worked_joint, row, "race", "r0", "r0p", "m", ["a"], [], []
    ) == pytest.approx(2.0, abs=1e-12)


def test_iorw_middle_term_cancels_without_nonallowables(worked_joint, worked_roles, worked_partition):
    cells = exact_cells(worked_joint, worked_roles, worked_partition, "r0")
    np.testing.assert_allclose(
        cells.iorw["p_m_given_allow"], cells.iorw["p_m_given_full"], atol=1e-15
    )


def test_iorw_all_ones_under_full_independence(generic_roles):
    variables_probs = np.full((2, 2, 2, 2), 1 / 16)
    from eqdecomp.joint import FiniteJoint, VariableSpec

    joint = FiniteJoint(
        (VariableSpec("race", ("r0", "r0p")), VariableSpec("x0", ("0", "1")),
         VariableSpec("m", ("0", "1")), VariableSpec("y", ("0", "1"))),
        variables_probs,
    )
    partition = AllowabilityPartition(outcome_allowable=("x0",))
    cells = exact_cells(joint, generic_roles, partition, "r0")
    w = iorw_weight(p_r0_given_ay=cells.p_r0_given_ay, p_r0=cells.p_r0, **cells.iorw)
    assert np.max(np.abs(w.values - 1.0)) < 1e-12


def test_iorw_boundary_probability_errors():
    kwargs = dict(
        p_r0p_given_m_allow=np.array([0.0]), p_r0_given_m_full=np.array([0.5]),
        p_r0p_given_allow=np.array([0.5]), p_r0_given_full=np.array([0.5]),
        p_m_given_allow=np.array([0.5]), p_m_given_full=np.array([0.5]),
    )
    with pytest.raises(PositivityError):
        iorw_weight(p_r0_given_ay=np.array([0.5]), p_r0=0.5, **kwargs)


def test_weight_identity_sweep(generic_roles):
    rng = np.random.default_rng(1234)
    for _ in range(60):
        n_cov = int(rng.integers(2, 5))
        joint = random_joint(rng, n_cov=n_cov, m_levels=int(rng.integers(2, 4)))
        partition = random_partition(rng, [f"x{i}" for i in range(n_cov)])
        for std in Standardization:
            _, _, w_rmpw, w_iorw, c0, _ = exact_weight_vectors(
                joint, generic_roles, partition, std
            )
            assert np.max(np.abs(w_rmpw.values - w_iorw.values)) < 1e-10
            # mean-one within the marginalized group
            assert (c0.mass * w_rmpw.values).sum() == pytest.approx(1.0, abs=1e-10)


def test_weights_match_brute_oracle_rowwise(generic_roles):
    rng = np.random.default_rng(77)
    joint = random_joint(rng, n_cov=3)
    partition = AllowabilityPartition(("x0",), ("x1",), ("x2",))
    _, _, w_rmpw, w_iorw, c0, _ = exact_weight_vectors(joint, generic_roles, partition)
    i = 0
    for assignment, p in joint.cells():
        if assignment["race"] != "r0" or p == 0:
            continue
        if i % 7 == 0:  # spot-check a deterministic subset; the oracle is slow
            brute_r = oracles.rmpw_weight_at(
                joint, assignment, "race", "r0", "r0p", "m", ["x0"], ["x1"], ["x2"]
            )
            brute_i = oracles.iorw_weight_at(
                joint, assignment, "race", "r0", "r0p", "m", ["x0"], ["x1"], ["x2"]
            )
            assert w_rmpw.values[i] == pytest.approx(brute_r, abs=1e-10)
            assert w_iorw.values[i] == pytest.approx(brute_i, abs=1e-10)
        i += 1


def test_truncation_caps_upper_tail():
    w = WeightVector(np.array([0.5, 1.0, 1.5, 50.0]), "rmpw")
    t = truncate_weights(w, 75.0)
    assert t.values.max() < 50.0
    assert np.all(t.values[:2] == w.values[:2])
    with pytest.raises(PositivityError):
        truncate_weights(w, 0.0)


def test_weight_vector_rejects_negative_and_nonfinite():
    with pytest.raises(PositivityError):
        WeightVector(np.array([1.0, -0.1]), "rmpw")
    with pytest.raises(PositivityError):
        WeightVector(np.array([np.inf]), "rmpw")


def test_diagnostics_fields():
    w = WeightVector(np.array([1.0, 1.0, 2.0, 0.0]), "rmpw")
    d = w.diagnostics
    assert d.minimum == 0.0 and d.maximum == 2.0
    assert d.mean == pytest.approx(1.0)
    assert d.n_zero == 1
    assert d.ess == pytest.approx(16.0 / 6.0)

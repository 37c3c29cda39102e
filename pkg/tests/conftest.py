import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from eqdecomp.cohort import CohortTable
from eqdecomp.joint import FiniteJoint, VariableSpec
from eqdecomp.partition import AllowabilityPartition, RaceRole, RoleBindings


def build_worked_joint():
    """The 16-cell binary (race, a, m, y) joint used throughout the suite.

    Race and the baseline covariate are balanced and independent; the target
    law is 0.2 + 0.2a for the marginalized group and 0.6 + 0.2a for the
    privileged group; the outcome law is 0.1 + 0.2m + 0.3a + 0.1[marginalized].
    """
    variables = (
        VariableSpec("race", ("r0", "r0p")),
        VariableSpec("a", ("0", "1")),
        VariableSpec("m", ("0", "1")),
        VariableSpec("y", ("0", "1")),
    )
    probs = np.zeros((2, 2, 2, 2))
    for ri, rl in enumerate(("r0", "r0p")):
        for ai in (0, 1):
            pm1 = (0.2 if rl == "r0" else 0.6) + 0.2 * ai
            for mi in (0, 1):
                pm = pm1 if mi else 1.0 - pm1
                py1 = 0.1 + 0.2 * mi + 0.3 * ai + 0.1 * (rl == "r0")
                for yi in (0, 1):
                    probs[ri, ai, mi, yi] = 0.25 * pm * (py1 if yi else 1.0 - py1)
    return FiniteJoint(variables, probs)


@pytest.fixture(scope="session")
def worked_joint():
    return build_worked_joint()


@pytest.fixture(scope="session")
def worked_roles():
    return RoleBindings(race=RaceRole("race", "r0", "r0p"), target="m", outcome="y")


@pytest.fixture(scope="session")
def worked_partition():
    return AllowabilityPartition(outcome_allowable=("a",))


@pytest.fixture(scope="session")
def worked_data(worked_joint):
    return CohortTable.from_joint(worked_joint)


def random_joint(rng, n_cov=2, m_levels=2, min_cell=0.05, names=None):
    """A strictly positive random joint over race, covariates, target, outcome."""
    names = names or [f"x{i}" for i in range(n_cov)]
    variables = [VariableSpec("race", ("r0", "r0p"))]
    variables += [VariableSpec(n, ("0", "1")) for n in names]
    variables.append(VariableSpec("m", tuple(str(i) for i in range(m_levels))))
    variables.append(VariableSpec("y", ("0", "1")))
    variables = tuple(variables)
    shape = tuple(len(v.levels) for v in variables)
    probs = rng.uniform(min_cell, 1.0, size=shape)
    return FiniteJoint(variables, probs / probs.sum())


def random_partition(rng, names):
    """Randomly split covariate names across the three allowability sets."""
    ay, am, nn = [], [], []
    for n in names:
        [ay, am, nn][rng.integers(0, 3)].append(n)
    return AllowabilityPartition(tuple(ay), tuple(am), tuple(nn))


@pytest.fixture(scope="session")
def generic_roles():
    return RoleBindings(race=RaceRole("race", "r0", "r0p"), target="m", outcome="y")


# -- reference generator fixtures (session-cached; they back several suites) --


@pytest.fixture(scope="session")
def ref_config():
    from eqdecomp.dgp import reference_config

    return reference_config()


@pytest.fixture(scope="session")
def ref_roles():
    return RoleBindings(race=RaceRole("race", "marg", "priv"), target="m1", outcome="y2")


@pytest.fixture(scope="session")
def ref_tags():
    return {
        "age": "demographic",
        "sex": "demographic",
        "dia": "clinical",
        "l1_grp": "clinical",
        "edu": "socioeconomic",
        "ins": "socioeconomic",
    }


@pytest.fixture(scope="session")
def ref_partition(ref_tags):
    from eqdecomp.partition import preset

    return preset(6, ref_tags)


@pytest.fixture(scope="session")
def ref_joint(ref_config):
    from eqdecomp.dgp import discretize_to_joint

    return discretize_to_joint(ref_config, edges=ref_config.l1_group_edges)


@pytest.fixture(scope="session")
def ref_truth(ref_joint, ref_roles, ref_partition):
    from eqdecomp.gformula import decompose_exact

    return decompose_exact(ref_joint, ref_roles, ref_partition)


def saturated_config(keys=None):
    from eqdecomp.estimator import ModelConfig

    keys = keys or (
        "race_ay", "target_r0", "target_r0prime", "race_m_allow", "race_m_full",
        "race_allow", "race_full", "target_allow_pooled", "target_full_pooled",
        "outcome_r0", "outcome_r0prime", "outcome_r0prime_full", "target_r0prime_full",
    )
    return {k: ModelConfig(family="saturated") for k in keys}

import json
import re
import subprocess
import sys

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from eqdecomp.cli import main
from eqdecomp.cohort import CohortTable
from eqdecomp.errors import SchemaError, ValidationError

# pinned point estimates for the committed reference run:
# simulate --n 20000 --seed 20240901, preset 6, RMPW, logistic target models
GOLDEN_CLI = {
    "mean_r0": 0.7877250821796254,
    "mean_cf": 0.7435056075033586,
    "mean_r0prime": 0.7326135473676043,
    "observed": 0.055111534812020496,
    "reduction": 0.04421947467626657,
    "residual": 0.010892060135754642,
}

LEVELS = {
    "race": ["marg", "priv"], "age": ["0", "1"], "sex": ["0", "1"],
    "edu": ["0", "1"], "ins": ["0", "1"], "dia": ["0", "1"],
    "l1_grp": ["0", "1"], "m1": ["0", "1"], "y2": ["0", "1"],
}
PRESET6 = {
    "id": 6,
    "tags": {"age": "demographic", "sex": "demographic", "dia": "clinical",
             "l1_grp": "clinical", "edu": "socioeconomic", "ins": "socioeconomic"},
}


def base_config(csv_path, out_base, **overrides):
    cfg = {
        "input": str(csv_path),
        "output": str(out_base),
        "seed": 20240901,
        "roles": {
            "race": {"variable": "race", "marginalized": "marg", "privileged": "priv"},
            "target": "m1",
            "outcome": "y2",
        },
        "levels": LEVELS,
        "preset": PRESET6,
        "standardization": "pooled",
        "backend": "rmpw",
        "models": {
            "race_ay": {"family": "saturated"},
            "target_r0": {"family": "binary-logit"},
            "target_r0prime": {"family": "binary-logit"},
        },
    }
    cfg.update(overrides)
    return cfg


@pytest.fixture(scope="module")
def golden_cohort(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "cohort.csv"
    runner = CliRunner()
    result = runner.invoke(
        main, ["simulate", "--n", "20000", "--seed", "20240901", "--out", str(path)]
    )
    assert result.exit_code == 0, result.output
    return path


def _write(tmp_path, cfg, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_golden_run_point_estimates(golden_cohort, tmp_path):
    cfg = base_config(golden_cohort, tmp_path / "golden")
    result = CliRunner().invoke(main, ["decompose", "-c", str(_write(tmp_path, cfg))])
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "golden.json").read_text())
    for key, value in GOLDEN_CLI.items():
        assert report["estimates"][key] == pytest.approx(value, abs=1e-9)
    assert report["seed"] == 20240901
    assert report["version"]
    assert report["assumptions_untestable"]
    assert report["models"]["target_r0"]["coefficients"]
    assert (tmp_path / "golden.txt").exists()


def test_rerun_is_byte_identical_modulo_timestamp(golden_cohort, tmp_path):
    cfg = base_config(golden_cohort, tmp_path / "a")
    config_path = _write(tmp_path, cfg, "a.yaml")
    CliRunner().invoke(main, ["decompose", "-c", str(config_path)])
    first_json = (tmp_path / "a.json").read_text()
    first_txt = (tmp_path / "a.txt").read_text()
    CliRunner().invoke(main, ["decompose", "-c", str(config_path)])

    def strip(text):
        return re.sub(r'"generated_at": "[^"]*"|generated_at: \S*', "", text)

    assert strip(first_json) == strip((tmp_path / "a.json").read_text())
    assert strip(first_txt) == strip((tmp_path / "a.txt").read_text())


def test_overlapping_sets_exit_2_and_name_variable(golden_cohort, tmp_path):
    cfg = base_config(golden_cohort, tmp_path / "bad")
    cfg.pop("preset")
    cfg["partition"] = {
        "outcome_allowable": ["age"], "target_allowable": ["age"], "non_allowable": [],
    }
    result = CliRunner().invoke(main, ["decompose", "-c", str(_write(tmp_path, cfg))])
    assert result.exit_code == 2
    assert "age" in result.output


def test_both_partition_and_preset_rejected(golden_cohort, tmp_path):
    cfg = base_config(golden_cohort, tmp_path / "bad")
    cfg["partition"] = {"outcome_allowable": ["age"]}
    result = CliRunner().invoke(main, ["decompose", "-c", str(_write(tmp_path, cfg))])
    assert result.exit_code == 2


def test_unknown_column_exit_2(golden_cohort, tmp_path):
    cfg = base_config(golden_cohort, tmp_path / "bad")
    cfg["roles"]["target"] = "nonexistent"
    result = CliRunner().invoke(main, ["decompose", "-c", str(_write(tmp_path, cfg))])
    assert result.exit_code == 2
    assert "nonexistent" in result.output


def test_positivity_failure_exit_3(tmp_path):
    rows = ["race,age,m1,y2"]
    # the marginalized group never appears with age=1: fitted race probability
    # hits the boundary in that stratum
    for _ in range(30):
        rows.append("marg,0,1,1")
        rows.append("marg,0,0,0")
        rows.append("priv,0,1,0")
        rows.append("priv,1,0,1")
        rows.append("priv,1,1,1")
    path = tmp_path / "degenerate.csv"
    path.write_text("\n".join(rows) + "\n")
    cfg = {
        "input": str(path), "output": str(tmp_path / "run"), "seed": 1,
        "roles": {"race": {"variable": "race", "marginalized": "marg", "privileged": "priv"},
                  "target": "m1", "outcome": "y2"},
        "levels": {"race": ["marg", "priv"], "age": ["0", "1"], "m1": ["0", "1"], "y2": ["0", "1"]},
        "partition": {"outcome_allowable": ["age"]},
        "backend": "rmpw",
        "models": {"race_ay": {"family": "saturated"},
                   "target_r0": {"family": "saturated"},
                   "target_r0prime": {"family": "saturated"}},
    }
    result = CliRunner().invoke(main, ["decompose", "-c", str(_write(tmp_path, cfg))])
    assert result.exit_code == 3


def test_degenerate_response_exit_4(tmp_path):
    rows = ["race,age,m1,y2"]
    for i in range(40):
        rows.append(f"marg,{i % 2},1,{i % 2}")  # target constant among marginalized
        rows.append(f"priv,{i % 2},{i % 2},0")
    path = tmp_path / "const.csv"
    path.write_text("\n".join(rows) + "\n")
    cfg = {
        "input": str(path), "output": str(tmp_path / "run"), "seed": 1,
        "roles": {"race": {"variable": "race", "marginalized": "marg", "privileged": "priv"},
                  "target": "m1", "outcome": "y2"},
        "levels": {"race": ["marg", "priv"], "age": ["0", "1"], "m1": ["0", "1"], "y2": ["0", "1"]},
        "partition": {"outcome_allowable": ["age"]},
        "backend": "rmpw",
        "models": {"race_ay": {"family": "saturated"},
                   "target_r0": {"family": "binary-logit"},
                   "target_r0prime": {"family": "binary-logit"}},
    }
    result = CliRunner().invoke(main, ["decompose", "-c", str(_write(tmp_path, cfg))])
    assert result.exit_code == 4


def test_montecarlo_backend_through_cli(golden_cohort, tmp_path):
    cfg = base_config(golden_cohort, tmp_path / "mc", backend="montecarlo")
    cfg["models"] = {k: {"family": "saturated"} for k in
                     ("race_ay", "target_r0", "target_r0prime", "outcome_r0", "outcome_r0prime")}
    cfg["montecarlo"] = {"draws": 200}
    result = CliRunner().invoke(main, ["decompose", "-c", str(_write(tmp_path, cfg))])
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "mc.json").read_text())
    assert report["backend"] == "montecarlo"
    assert report["estimates"]["observed"] == pytest.approx(
        GOLDEN_CLI["observed"], abs=0.02
    )


def test_check_subcommand(golden_cohort, tmp_path):
    cfg = base_config(golden_cohort, tmp_path / "chk")
    result = CliRunner().invoke(main, ["check", "-c", str(_write(tmp_path, cfg))])
    assert result.exit_code in (0, 3)  # sparse strata may legitimately flag
    assert "cohort rows" in result.output


def test_selection_filter_counts(tmp_path):
    rows = ["race,y1,age,m1,y2"]
    for i in range(12):
        keep = "1" if i % 3 else "0"
        rows.append(f"{'marg' if i % 2 else 'priv'},{keep},{i % 2},{i % 2},{(i + 1) % 2}")
    path = tmp_path / "sel.csv"
    path.write_text("\n".join(rows) + "\n")
    table = CohortTable.from_csv(
        path, categorical={"race": ("marg", "priv"), "y1": ("0", "1"),
                           "age": ("0", "1"), "m1": ("0", "1"), "y2": ("0", "1")}
    )
    from eqdecomp.partition import RaceRole, RoleBindings, SelectionRole

    roles = RoleBindings(
        race=RaceRole("race", "marg", "priv"), target="m1", outcome="y2",
        selection=SelectionRole("y1", "1"),
    )
    selected, dropped = table.apply_selection(roles)
    assert selected.n == 8 and dropped == 4
    assert np.all(selected.labels("y1") == "1")


def test_header_only_csv_is_empty_cohort_error(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("race,m1,y2\n")
    with pytest.raises(ValidationError):
        CohortTable.from_csv(path, categorical={})


def test_unparseable_cell_names_coordinates(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("race,l1\nmarg,140.2\npriv,oops\n")
    with pytest.raises(SchemaError) as err:
        CohortTable.from_csv(path, categorical={"race": ("marg", "priv")})
    assert "row 2" in str(err.value) and "l1" in str(err.value)


def test_csv_round_trip(golden_cohort, tmp_path):
    cat = {k: tuple(v) for k, v in LEVELS.items()}
    table = CohortTable.from_csv(golden_cohort, categorical=cat)
    out = tmp_path / "roundtrip.csv"
    table.to_csv(out)
    back = CohortTable.from_csv(out, categorical=cat)
    assert back.n == table.n
    for name in table.names:
        if table.is_categorical(name):
            assert np.array_equal(back.codes(name), table.codes(name))
        else:
            np.testing.assert_allclose(back.numeric(name), table.numeric(name), rtol=0, atol=1e-12)


def test_reductions_subcommand(tmp_path):
    out = tmp_path / "matrix.json"
    result = CliRunner().invoke(
        main, ["reductions", "--joints", "5", "--seed", "1", "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    assert "pass" in result.output
    rows = json.loads(out.read_text())
    assert all(r["passed"] for r in rows)


def test_simulate_requires_seed(tmp_path):
    result = CliRunner().invoke(
        main, ["simulate", "--n", "10", "--out", str(tmp_path / "x.csv")]
    )
    assert result.exit_code == 2


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "eqdecomp.cli", "--version"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "0.1.0" in proc.stdout


def test_seed_override_changes_echo(golden_cohort, tmp_path):
    cfg = base_config(golden_cohort, tmp_path / "s")
    result = CliRunner().invoke(
        main, ["decompose", "-c", str(_write(tmp_path, cfg)), "--seed", "5"]
    )
    assert result.exit_code == 0
    report = json.loads((tmp_path / "s.json").read_text())
    assert report["seed"] == 5

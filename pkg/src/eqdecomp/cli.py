"""Batch front-end: config parsing, CSV ingestion, orchestration, reports.

Runs are fully declarative: a YAML config names the input file, role
bindings, allowability partition (explicit or by designation-table preset),
standardization, backend, nuisance model table, and bootstrap settings. The
report is written twice, as machine-readable JSON and as a plain-text
summary, and echoes the normalized config so a run can be replayed
bit-for-bit.

Exit codes: 0 success, 2 validation/configuration error, 3 positivity or
common-support failure, 4 model non-convergence.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from datetime import datetime, timezone

import click
import numpy as np
import yaml

from . import __version__
from .cohort import CohortTable
from .dgp import generate, reference_config, scm_config_from_dict, scm_config_to_dict
from .errors import (
    DegenerateResponseError,
    EqDecompError,
    NonConvergenceError,
    PositivityError,
    ValidationError,
)
from .estimator import (
    BootstrapConfig,
    ModelConfig,
    decompose_weighted,
    derive_model_specs,
    fit_models,
)
from .gformula import check_positivity, decompose_montecarlo
from .partition import (
    AllowabilityPartition,
    RaceRole,
    RoleBindings,
    SelectionRole,
    Standardization,
    preset,
    validate,
)
from .reductions import run_suite

EXIT_VALIDATION = 2
EXIT_POSITIVITY = 3
EXIT_NONCONVERGENCE = 4

_STD_ALIASES = {
    "pooled": Standardization.POOLED,
    "r0": Standardization.R0,
    "marginalized": Standardization.R0,
    "r0_prime": Standardization.R0_PRIME,
    "privileged": Standardization.R0_PRIME,
}


def parse_run_config(payload, overrides=None):
    """Normalize a raw config mapping; raises ValidationError on problems."""
    cfg = dict(payload)
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    for key in ("input", "roles", "output"):
        if key not in cfg:
            raise ValidationError(f"config is missing required key {key!r}")
    if ("partition" in cfg) == ("preset" in cfg):
        raise ValidationError("config must set exactly one of 'partition' or 'preset'")
    roles_raw = cfg["roles"]
    try:
        race = roles_raw["race"]
        roles = RoleBindings(
            race=RaceRole(race["variable"], race["marginalized"], race["privileged"]),
            target=roles_raw["target"],
            outcome=roles_raw["outcome"],
            selection=(
                SelectionRole(roles_raw["selection"]["variable"], roles_raw["selection"]["level"])
                if roles_raw.get("selection")
                else None
            ),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"roles section malformed: {exc}") from None
    if "partition" in cfg:
        p = cfg["partition"]
        partition = AllowabilityPartition(
            outcome_allowable=tuple(p.get("outcome_allowable", ())),
            target_allowable_extra=tuple(p.get("target_allowable", ())),
            non_allowable=tuple(p.get("non_allowable", ())),
        )
    else:
        p = cfg["preset"]
        try:
            partition = preset(p["id"], dict(p["tags"]))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"preset section malformed: {exc}") from None
    std_name = str(cfg.get("standardization", "pooled")).lower()
    if std_name not in _STD_ALIASES:
        raise ValidationError(
            f"unknown standardization {std_name!r}; expected one of {sorted(_STD_ALIASES)}"
        )
    backend = str(cfg.get("backend", "rmpw")).lower()
    if backend not in ("rmpw", "iorw", "montecarlo"):
        raise ValidationError(f"unknown backend {backend!r}")
    models = {}
    for key, m in dict(cfg.get("models") or {}).items():
        m = dict(m or {})
        models[key] = ModelConfig(
            family=m.get("family", "auto"),
            interactions=tuple(tuple(i) for i in m.get("interactions", ())),
            predictors=tuple(m["predictors"]) if m.get("predictors") else None,
        )
    boot = None
    if cfg.get("bootstrap"):
        b = dict(cfg["bootstrap"])
        boot = BootstrapConfig(
            replicates=int(b.get("replicates", 1000)),
            level=float(b.get("level", 0.95)),
            seed=int(b.get("seed", cfg.get("seed", 0))),
            stratify_by_race=bool(b.get("stratify_by_race", True)),
        )
    mc = dict(cfg.get("montecarlo") or {})
    return {
        "input": cfg["input"],
        "output": cfg["output"],
        "seed": int(cfg.get("seed", 0)),
        "roles": roles,
        "partition": partition,
        "standardization": _STD_ALIASES[std_name],
        "backend": backend,
        "levels": {k: tuple(str(x) for x in v) for k, v in dict(cfg.get("levels") or {}).items()},
        "models": models,
        "bootstrap": boot,
        "weight_truncation": cfg.get("weight_truncation"),
        "montecarlo_draws": int(mc.get("draws", 500)),
        "montecarlo_alternate": bool(mc.get("alternate_privileged_factorization", False)),
        "n_workers": int(cfg.get("workers", 1)),
        "echo": cfg,
    }


def ingest_csv(path, roles, levels):
    """Read and type a cohort CSV, verifying every referenced column exists."""
    table = CohortTable.from_csv(path, categorical=levels)
    missing = [v for v in roles.role_variables() if v not in table.names]
    if missing:
        raise ValidationError(f"input {path} lacks role column(s) {missing}")
    return table


def _role_partition_columns(run):
    cols = list(run["roles"].role_variables()) + list(run["partition"].all_covariates())
    return cols


def _jsonable(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return _jsonable(dataclasses.asdict(value))
    if isinstance(value, Standardization):
        return value.value
    return value


def _model_summary(models):
    out = {}
    for key, model in models.items():
        out[key] = {
            "family": model.spec.family if model.kind != "saturated" else "saturated",
            "kind": model.kind,
            "response": model.spec.response,
            "predictors": list(model.spec.predictors),
            "columns": list(model.column_names),
            "coefficients": _jsonable(model.coefficients),
            "converged": model.converged,
            "iterations": model.iterations,
            "log_likelihood": model.log_likelihood,
            "ridge_used": model.ridge_used,
        }
    return out


def build_report(run, estimate, positivity, extra=None):
    diagnostics = dict(estimate.diagnostics)
    models = diagnostics.pop("models", {})
    report = {
        "version": __version__,
        "seed": run["seed"],
        "backend": estimate.backend,
        "standardization": estimate.standardization.value,
        "estimates": {
            "mean_r0": estimate.mean_r0,
            "mean_r0prime": estimate.mean_r0prime,
            "mean_cf": estimate.mean_cf,
            "observed": estimate.observed,
            "reduction": estimate.reduction,
            "residual": estimate.residual,
            "ci": estimate.ci,
        },
        "positivity": {
            "issues": [_jsonable(i) for i in positivity.issues],
            "notes": list(positivity.notes),
        },
        "assumptions_untestable": list(diagnostics.pop("assumptions", ())),
        "models": _model_summary(models),
        "diagnostics": _jsonable(diagnostics),
        "config_echo": _jsonable(run["echo"]),
    }
    if extra:
        report.update(extra)
    return report


def _text_summary(report):
    est = report["estimates"]
    lines = [
        "disparity decomposition report",
        f"version {report['version']}  seed {report['seed']}",
        f"backend {report['backend']}  standardization {report['standardization']}",
        "",
        f"standardized mean, marginalized group : {est['mean_r0']: .6f}",
        f"standardized mean, privileged group   : {est['mean_r0prime']: .6f}",
        f"post-intervention mean                : {est['mean_cf']: .6f}",
        "",
        f"observed disparity : {est['observed']: .6f}",
        f"reduction          : {est['reduction']: .6f}",
        f"residual           : {est['residual']: .6f}",
    ]
    if est.get("ci"):
        lines.append("")
        for key in ("observed", "reduction", "residual"):
            if key in est["ci"]:
                lo, hi, level = est["ci"][key]
                lines.append(f"{key:<9} {100 * level:.0f}% CI: [{lo: .6f}, {hi: .6f}]")
    issues = report["positivity"]["issues"]
    lines.append("")
    lines.append(f"positivity issues: {len(issues)}")
    for issue in issues[:10]:
        lines.append(f"  - {issue['kind']}: {issue['message']}")
    for note in report["positivity"]["notes"]:
        lines.append(f"  note: {note}")
    lines.append("")
    lines.append("untestable assumptions:")
    for a in report["assumptions_untestable"]:
        lines.append(f"  - {a}")
    return "\n".join(lines) + "\n"


def write_report(report, output_base):
    report = dict(report)
    report["generated_at"] = datetime.now(timezone.utc).isoformat()
    json_path = f"{output_base}.json"
    txt_path = f"{output_base}.txt"
    with open(json_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(txt_path, "w") as fh:
        fh.write(f"generated_at: {report['generated_at']}\n")
        fh.write(_text_summary(report))
    return json_path, txt_path


def _exit_code(exc):
    if isinstance(exc, (NonConvergenceError, DegenerateResponseError)):
        return EXIT_NONCONVERGENCE
    if isinstance(exc, PositivityError):
        return EXIT_POSITIVITY
    return EXIT_VALIDATION


@click.group()
@click.version_option(version=__version__)
def main():
    """Causal decomposition of disparities under allowability partitions."""


@main.command()
@click.option("--config", "-c", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", type=str, default=None, help="Override the output base path.")
@click.option("--backend", type=str, default=None, help="Override the backend.")
def decompose(config_path, seed, out, backend):
    """Run the decomposition pipeline described by a YAML config."""
    try:
        with open(config_path) as fh:
            payload = yaml.safe_load(fh)
        run = parse_run_config(
            payload, overrides={"seed": seed, "output": out, "backend": backend}
        )
        data = ingest_csv(run["input"], run["roles"], run["levels"])
        report_cols = validate(run["partition"], run["roles"], data.names)
        report_cols.raise_if_invalid()
        if run["backend"] in ("rmpw", "iorw"):
            estimate = decompose_weighted(
                data,
                run["roles"],
                run["partition"],
                std=run["standardization"],
                backend=run["backend"],
                model_config=run["models"],
                boot=run["bootstrap"],
                truncation=run["weight_truncation"],
                n_workers=run["n_workers"],
            )
            positivity = estimate.diagnostics.pop("positivity")
        else:
            cohort, n_unselected = data.apply_selection(run["roles"])
            cohort, n_missing = cohort.drop_missing(sorted(set(_role_partition_columns(run))))
            positivity = check_positivity(cohort, run["roles"], run["partition"])
            specs = derive_model_specs(
                run["partition"], run["roles"], "montecarlo", run["models"],
                alternate=run["montecarlo_alternate"],
            )
            models = fit_models(specs, cohort)
            estimate = decompose_montecarlo(
                models, cohort, run["roles"], run["partition"],
                std=run["standardization"], draws=run["montecarlo_draws"],
                seed=run["seed"],
                use_alternate_privileged_factorization=run["montecarlo_alternate"],
            )
            estimate.diagnostics["models"] = models
            estimate.diagnostics["n_unselected"] = n_unselected
            estimate.diagnostics["n_missing_rejected"] = n_missing
        report = build_report(run, estimate, positivity)
        json_path, txt_path = write_report(report, run["output"])
    except EqDecompError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_exit_code(exc))
    click.echo(f"wrote {json_path} and {txt_path}")


@main.command()
@click.option("--config", "-c", "config_path", type=click.Path(exists=True), default=None,
              help="SCM config YAML; defaults to the built-in reference model.")
@click.option("--n", type=int, required=True)
@click.option("--seed", type=int, required=True)
@click.option("--out", type=click.Path(), required=True)
def simulate(config_path, n, seed, out):
    """Generate a synthetic cohort CSV from a structural model config."""
    try:
        if config_path is None:
            config = reference_config(seed=seed)
        else:
            with open(config_path) as fh:
                config = scm_config_from_dict(yaml.safe_load(fh))
            config = dataclasses.replace(config, seed=seed)
        table = generate(config, n)
        table.to_csv(out)
    except EqDecompError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_exit_code(exc))
    click.echo(f"wrote {out} ({table.n} rows)")


@main.command()
@click.option("--config", "-c", "config_path", required=True, type=click.Path(exists=True))
def check(config_path):
    """Positivity and common-support diagnostics only."""
    try:
        with open(config_path) as fh:
            payload = yaml.safe_load(fh)
        run = parse_run_config(payload)
        data = ingest_csv(run["input"], run["roles"], run["levels"])
        validate(run["partition"], run["roles"], data.names).raise_if_invalid()
        cohort, n_unselected = data.apply_selection(run["roles"])
        cohort, n_missing = cohort.drop_missing(sorted(set(_role_partition_columns(run))))
        report = check_positivity(cohort, run["roles"], run["partition"])
    except EqDecompError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_exit_code(exc))
    click.echo(f"cohort rows: {cohort.n} (dropped {n_unselected} unselected, "
               f"{n_missing} with missing values)")
    if report.ok:
        click.echo("no positivity or common-support violations detected")
    else:
        click.echo(f"{len(report.issues)} violation(s):")
        for issue in report.issues:
            click.echo(f"  - [{issue.kind}] {issue.message}")
    for note in report.notes:
        click.echo(f"  note: {note}")
    if not report.ok:
        sys.exit(EXIT_POSITIVITY)


@main.command(name="reductions")
@click.option("--joints", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def reductions_cmd(joints, seed, out):
    """Reproduce the estimator-designation table as a pass/fail matrix."""
    roles = RoleBindings(
        race=RaceRole("race", "r0", "r0p"), target="m1", outcome="y2"
    )
    rows = run_suite(roles, n_joints=joints, seed=seed)
    header = f"{'preset':>6}  {'formula':<20} {'relation':<16} {'max gap':>10}  result"
    click.echo(header)
    click.echo("-" * len(header))
    for row in rows:
        gap = row["max_gap"]
        extra = f" witness gap {row['witness_gap']:.4f}" if "witness_gap" in row else ""
        click.echo(
            f"{row['preset']:>6}  {row['formula']:<20} {row['relation']:<16} "
            f"{gap:>10.2e}  {'pass' if row['passed'] else 'FAIL'}{extra}"
        )
    if out:
        with open(out, "w") as fh:
            json.dump(_jsonable(rows), fh, indent=2, sort_keys=True)
            fh.write("\n")
    if not all(r["passed"] for r in rows):
        sys.exit(1)


def export_scm_config(path, config=None):
    """Write an SCM config YAML (defaults to the reference model)."""
    config = config or reference_config()
    with open(path, "w") as fh:
        yaml.safe_dump(scm_config_to_dict(config), fh, sort_keys=True)


if __name__ == "__main__":
    main()

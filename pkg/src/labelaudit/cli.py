"""Command-line entry points: generate, audit, report.

Failures exit nonzero and print a machine-readable JSON error record to
stderr.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .audit import AuditConfig, run_audit
from .cohort import (
    GeneratorConfig,
    generate_cohort,
    load_generator_config,
    save_cohort,
)
from .forest import ForestConfig


def _fail(command: str, exc: Exception) -> None:
    record = {"error": type(exc).__name__, "command": command, "message": str(exc)}
    click.echo(json.dumps(record), err=True)
    sys.exit(1)


@click.group()
def main():
    """Audit the prediction consequences of indeterminate training labels."""


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Generator config file (key = value lines).")
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Output cohort file (.csv or .json).")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
def generate(config_path, out_path, seed):
    """Generate a synthetic cohort with a selective-labeling mechanism."""
    try:
        cfg = load_generator_config(config_path) if config_path else GeneratorConfig()
        if seed is not None:
            cfg = GeneratorConfig(**{**cfg.__dict__, "seed": seed})
        cohort = generate_cohort(cfg)
        save_cohort(cohort, out_path)
    except Exception as exc:
        _fail("generate", exc)
    click.echo(f"wrote {len(cohort.instances)} instances to {out_path}")


@main.command()
@click.option("--cohort", "cohort_path", type=click.Path(), default=None,
              help="Cohort file to audit (.csv or .json).")
@click.option("--generator-config", type=click.Path(), default=None,
              help="Generate the cohort from this config instead of loading one.")
@click.option("--out", "out_dir", type=click.Path(), required=True,
              help="Report output directory (created atomically).")
@click.option("--folds", type=int, default=5, show_default=True)
@click.option("--trees", type=int, default=500, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--agreement-threshold", type=float, default=0.01, show_default=True)
def audit(cohort_path, generator_config, out_dir, folds, trees, seed,
          agreement_threshold):
    """Run the full audit and write the report directory."""
    try:
        if cohort_path is not None and not Path(cohort_path).exists():
            raise FileNotFoundError(f"cohort file not found: {cohort_path}")
        generator = None
        if generator_config is not None:
            generator = load_generator_config(generator_config)
        cfg = AuditConfig(
            output_dir=out_dir,
            cohort_path=cohort_path,
            generator=generator,
            k_folds=folds,
            forest=ForestConfig(n_trees=trees, seed=seed),
            agreement_threshold=agreement_threshold,
            seed=seed,
        )
        report = run_audit(cfg)
    except Exception as exc:
        _fail("audit", exc)
    click.echo(f"report written to {report.output_dir}")


@main.command()
@click.option("--in", "run_dir", type=click.Path(), required=True,
              help="Report directory produced by `audit`.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Where to put the plots (default: the report directory).")
@click.option("--format", "fmt", type=click.Choice(["svg"]), default="svg",
              show_default=True)
def report(run_dir, out_dir, fmt):
    """Render SVG plots from the emitted report CSVs."""
    try:
        from .plots import render_report

        written = render_report(run_dir, out_dir)
    except Exception as exc:
        _fail("report", exc)
    click.echo(f"rendered {len(written)} {fmt} plots")


if __name__ == "__main__":
    main()

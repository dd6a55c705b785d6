"""Command-line pipeline driver.

Subcommands run one stage each against a run directory:

    recfeat ingest   --config run.toml --run demo
    recfeat features --config run.toml --run demo --strategy best_of_n
    recfeat dedup    --config run.toml --run demo
    recfeat eval     --config run.toml --run demo
    recfeat judge    --config run.toml --run demo
    recfeat report   --config run.toml --run demo

Exit codes: 0 success, 2 config error, 3 upstream stage missing,
4 backend failure.
"""

from __future__ import annotations

import logging
import sys

import click

from . import stages
from .config import ConfigError, load_run_config
from .gateway.core import GatewayError
from .runio import UpstreamMissingError
from .search.strategies import STRATEGIES

EXIT_CONFIG = 2
EXIT_UPSTREAM = 3
EXIT_BACKEND = 4

logger = logging.getLogger(__name__)


def _run_stage(config_path: str, run_id: str, overrides: dict, fn, *args) -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_run_config(config_path, overrides)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    run_dir = stages.init_run_dir(config.output_dir, run_id)
    try:
        did_work = fn(config, run_dir, *args)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except UpstreamMissingError as exc:
        click.echo(f"upstream stage missing: {exc}", err=True)
        sys.exit(EXIT_UPSTREAM)
    except GatewayError as exc:
        click.echo(f"backend failure: {exc}", err=True)
        sys.exit(EXIT_BACKEND)
    click.echo("completed" if did_work else "skipped (already complete)")


def _common(fn):
    fn = click.option("--run", "run_id", default="default", help="Run directory id.")(fn)
    fn = click.option(
        "--config", "config_path", required=True, type=click.Path(), help="TOML run config."
    )(fn)
    return fn


@click.group()
@click.version_option()
def main():
    """Feature-augmentation pipeline for LLM-based recommendation."""


@main.command()
@_common
def ingest(config_path, run_id):
    """Load interactions and persist leave-one-out splits."""
    _run_stage(config_path, run_id, {}, stages.run_ingest)


@main.command()
@_common
@click.option(
    "--strategy",
    type=click.Choice(STRATEGIES),
    default="cot",
    show_default=True,
    help="Search strategy for feature generation.",
)
@click.option("--policy", "policy_model", default=None, help="Override the policy model id.")
def features(config_path, run_id, strategy, policy_model):
    """Generate a FeatureSet per user under one search strategy."""
    overrides = {}
    if policy_model:
        overrides["backends.policy.model_id"] = policy_model
    _run_stage(config_path, run_id, overrides, _features_stage(strategy))


def _features_stage(strategy):
    def run(config, run_dir):
        return stages.run_features(config, run_dir, strategy)

    return run


@main.command()
@_common
def dedup(config_path, run_id):
    """Embed valid features and count unique ones via clustering."""
    _run_stage(config_path, run_id, {}, stages.run_dedup)


@main.command(name="eval")
@_common
def eval_cmd(config_path, run_id):
    """Run the recommendation tasks with and without features."""
    _run_stage(config_path, run_id, {}, stages.run_eval)


@main.command()
@_common
def judge(config_path, run_id):
    """Pairwise specificity judging between two feature files."""
    _run_stage(config_path, run_id, {}, stages.run_judge)


@main.command()
@_common
def report(config_path, run_id):
    """Render the markdown report and CSV artifacts."""
    _run_stage(config_path, run_id, {}, stages.run_report)


if __name__ == "__main__":
    main()

"""Console script for quadracer."""
import functools
import logging
import sys
from pathlib import Path

import click
import numpy as np
import torch
from pydantic import ValidationError

from . import __version__, clerk
from .dynamics import QuadParams
from .errors import ConfigError, MissingArtifactError, QuadracerError
from .policy import load_checkpoint
from .progress import Stage
from .report import EvaluationReport, TrainingReport, trajectory_rows
from .scenario import (
    GENERATORS,
    format_validation_error,
    generate_scenario,
    load_scenario,
)
from .topo_planner import build_combinations, plan_guiding_paths
from .trainer import TRAJECTORY_COLUMNS, FlightEnv, Trainer, evaluate, seed_streams
from .world import build_esdf

logger = logging.getLogger(__name__)

default_out = "report"


def exits_on_error(command):
    """Turn library errors into a message and the documented exit code."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except QuadracerError as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(e.exit_code)

    return wrapper


def apply_threads(threads, deterministic):
    if deterministic:
        torch.use_deterministic_algorithms(True)
        threads = 1
    if threads:
        torch.set_num_threads(threads)


def load_world(scenario_path, seed=None):
    scenario_file = load_scenario(scenario_path)
    if seed is not None:
        scenario_file = scenario_file.model_copy(update={"seed": seed})
    scenario = scenario_file.to_scenario()
    esdf = build_esdf(
        scenario.obstacles, scenario.bounds, scenario_file.world.resolution
    )
    return scenario_file, scenario, esdf


def make_env(scenario_file, scenario, esdf, combinations, **overrides):
    return FlightEnv(
        scenario,
        esdf,
        combinations,
        overrides.pop("params", scenario_file.quadrotor),
        sim=scenario_file.simulation,
        weights=scenario_file.reward,
        curriculum=scenario_file.curriculum,
        max_episode_steps=scenario_file.training.max_episode_steps,
        projection_window=scenario_file.training.projection_window,
        **overrides,
    )


def with_f_max(params, f_max):
    """Copy of the vehicle parameters with a raised (or lowered) thrust limit."""
    try:
        return QuadParams.model_validate({**params.model_dump(), "f_max": f_max})
    except ValidationError as e:
        raise ConfigError(format_validation_error(e)) from e


def load_combinations(paths_dir, scenario_file, scenario):
    pair_paths = clerk.read_plan(paths_dir)
    if len(pair_paths) != len(scenario.targets):
        raise MissingArtifactError(
            f"{paths_dir} holds {len(pair_paths)} pairs, "
            f"scenario needs {len(scenario.targets)}"
        )
    return build_combinations(pair_paths, scenario_file.planner.n_combinations)


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True, help="Log at DEBUG level.")
def main(verbose):
    """Minimum-time quadrotor flight: plan, train, evaluate."""
    logging.basicConfig(
        format="%(asctime)s - %(message)s",
        datefmt="%d-%b-%y %H:%M:%S",
        level=logging.DEBUG if verbose else logging.INFO,
    )


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path())
@click.option("--out", default=default_out, type=click.Path(), show_default=True)
@click.option("--seed", type=click.IntRange(min=0), default=None,
              help="Overrides the scenario seed.")
@exits_on_error
def plan(scenario_path, out, seed):
    """Plan topological guiding paths for every waypoint pair."""
    scenario_file, scenario, esdf = load_world(scenario_path, seed)
    outputs = [Path(out) / "paths", Path(out) / "plan_summary.json"]
    clerk.write_manifest(
        out, "plan", scenario_file.model_dump(mode="json"), scenario_file.seed, outputs
    )
    planner_seq, _, _ = seed_streams(scenario_file.seed)
    result = plan_guiding_paths(
        scenario, esdf, scenario_file.planner, np.random.default_rng(planner_seq)
    )
    clerk.write_plan(out, result)
    for i, paths in enumerate(result.pair_paths):
        lengths = ", ".join(f"{p.length:.2f}" for p in paths)
        click.echo(f"pair {i}->{i + 1}: {len(paths)} paths ({lengths} m)")
    click.echo(f"guiding paths written to {out}")


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path())
@click.option("--paths", "paths_dir", required=True, type=click.Path())
@click.option("--out", default=default_out, type=click.Path(), show_default=True)
@click.option("--seed", type=click.IntRange(min=0), default=None,
              help="Overrides the scenario seed.")
@click.option("--stage", type=click.Choice([s.value for s in Stage]), default=None)
@click.option("--steps", type=click.IntRange(min=0), default=None,
              help="Environment step budget.")
@click.option("--resume", type=click.Path(), default=None, help="Checkpoint to resume.")
@click.option("--threads", type=click.IntRange(min=1), default=None)
@click.option("--deterministic", is_flag=True, help="Single-threaded torch kernels.")
@exits_on_error
def train(scenario_path, paths_dir, out, seed, stage, steps, resume, threads,
          deterministic):
    """Train the racing policy through the slow/fast curriculum."""
    apply_threads(threads, deterministic)
    scenario_file, scenario, esdf = load_world(scenario_path, seed)
    training = scenario_file.training
    if stage is not None:
        training = training.model_copy(update={"start_stage": Stage(stage)})
    if steps is not None:
        training = training.model_copy(update={"total_env_steps": steps})
    scenario_file = scenario_file.model_copy(update={"training": training})
    outputs = [
        Path(out) / "training_log.csv",
        Path(out) / "checkpoints" / "final.amtp",
    ]
    clerk.write_manifest(
        out, "train", scenario_file.model_dump(mode="json"), scenario_file.seed, outputs
    )

    combinations = load_combinations(paths_dir, scenario_file, scenario)
    model, meta = None, None
    if resume is not None:
        clerk.require(resume, "checkpoint")
        model, meta = load_checkpoint(resume, hidden=scenario_file.ppo.hidden)
        logger.info("resuming from %s at iteration %s", resume, meta.get("iteration"))

    env = make_env(scenario_file, scenario, esdf, combinations)
    report = TrainingReport(out)
    trainer = Trainer(
        env,
        scenario_file.ppo,
        training,
        seed=scenario_file.seed,
        out_dir=out,
        model=model,
        resume=meta,
        on_iteration=report.add_row,
    )
    result = trainer.train()
    report.publish_results()
    click.echo(
        f"trained {result.iteration} iterations ({result.env_steps} env steps), "
        f"final stage {result.stage.value}"
    )


@main.command(name="eval")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--scenario", "scenario_path", required=True, type=click.Path())
@click.option("--paths", "paths_dir", required=True, type=click.Path())
@click.option("--out", default=default_out, type=click.Path(), show_default=True)
@click.option("--runs", type=click.IntRange(min=1), default=30, show_default=True)
@click.option("--seed", type=click.IntRange(min=0), default=None,
              help="Overrides the scenario seed.")
@click.option("--randomize-drag/--nominal-drag", default=True, show_default=True)
@click.option("--f-max", type=float, default=None, help="Per-motor thrust limit, N.")
@click.option("--relaxed-clearance", is_flag=True, help="Use d_c minus one voxel.")
@click.option("--max-steps", type=click.IntRange(min=1), default=None)
@click.option("--threads", type=click.IntRange(min=1), default=None)
@click.option("--deterministic", is_flag=True, help="Single-threaded torch kernels.")
@exits_on_error
def evaluate_command(checkpoint, scenario_path, paths_dir, out, runs, seed,
                     randomize_drag, f_max, relaxed_clearance, max_steps, threads,
                     deterministic):
    """Evaluate a checkpoint with mean-action rollouts from the start."""
    apply_threads(threads, deterministic)
    scenario_file, scenario, esdf = load_world(scenario_path, seed)
    model = _load_model(checkpoint, scenario_file)
    combinations = load_combinations(paths_dir, scenario_file, scenario)
    overrides = {}
    if f_max is not None:
        overrides["params"] = with_f_max(scenario_file.quadrotor, f_max)
    if relaxed_clearance:
        overrides["d_c"] = max(scenario.d_c - esdf.resolution, 0.0)
    env = make_env(scenario_file, scenario, esdf, combinations, **overrides)
    _, _, eval_seq = seed_streams(scenario_file.seed)
    result = evaluate(
        model,
        env,
        n_runs=runs,
        randomize_drag=randomize_drag,
        seed=eval_seq,
        max_steps=max_steps,
    )
    report = EvaluationReport(result, scenario_file.name)
    details = report.generate_report()
    report.publish_results(out)
    click.echo(
        f"success {100 * details['success_rate']:.1f}% over {runs} runs, "
        f"T_a {details['T_a_mean']}, T_b {details['T_b']}"
    )


@main.command()
@click.argument("kind", type=click.Choice(["esdf", "paths", "trajectory"]))
@click.option("--out", required=True, type=click.Path())
@click.option("--scenario", "scenario_path", type=click.Path(), default=None)
@click.option("--paths", "paths_dir", type=click.Path(), default=None)
@click.option("--checkpoint", type=click.Path(), default=None)
@click.option("--seed", type=click.IntRange(min=0), default=None)
@exits_on_error
def export(kind, out, scenario_path, paths_dir, checkpoint, seed):
    """Write the ESDF, the planned paths or one nominal trajectory."""
    if kind == "paths":
        pair_paths = clerk.read_plan(_needed(paths_dir, "--paths"))
        clerk.write_paths(out, [p for paths in pair_paths for p in paths])
    else:
        scenario_file, scenario, esdf = load_world(
            _needed(scenario_path, "--scenario"), seed
        )
        if kind == "esdf":
            clerk.write_esdf(out, esdf)
        else:
            model = _load_model(_needed(checkpoint, "--checkpoint"), scenario_file)
            combinations = load_combinations(
                _needed(paths_dir, "--paths"), scenario_file, scenario
            )
            env = make_env(scenario_file, scenario, esdf, combinations)
            result = evaluate(model, env, n_runs=1, randomize_drag=False)
            clerk.write_csv(
                out, TRAJECTORY_COLUMNS, trajectory_rows(result.trajectories[0])
            )
    click.echo(f"{kind} written to {out}")


@main.command(name="generate-scenario")
@click.argument("kind", type=click.Choice(sorted(GENERATORS)))
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@exits_on_error
def generate_scenario_command(kind, out, seed):
    """Write a seeded built-in scenario as JSON."""
    scenario_file = generate_scenario(kind, seed)
    scenario_file.to_scenario()
    Path(out).write_text(
        scenario_file.model_dump_json(indent=2, exclude_defaults=True) + "\n",
        encoding="utf-8",
    )
    click.echo(f"{kind} scenario written to {out}")


def _needed(value, flag):
    if value is None:
        raise MissingArtifactError(f"{flag} is required for this export")
    return value


def _load_model(checkpoint, scenario_file):
    clerk.require(checkpoint, "checkpoint")
    model, meta = load_checkpoint(checkpoint, hidden=scenario_file.ppo.hidden)
    logger.info("loaded checkpoint %s (%s)", checkpoint, meta)
    return model


if __name__ == "__main__":
    sys.exit(main())  # pragma: no cover

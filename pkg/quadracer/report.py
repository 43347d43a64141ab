import logging
import math
from pathlib import Path

import numpy as np

from . import clerk
from .trainer import TRAJECTORY_COLUMNS

logger = logging.getLogger(__name__)

training_log_name = "training_log.csv"
eval_stats_name = "eval_stats.json"
TRAINING_COLUMNS = [
    "iteration",
    "env_steps",
    "mean_reward",
    "success_pct",
    "mean_lap_time",
    "best_lap_time",
    "stage",
]


class TrainingReport:
    """One CSV row per training iteration, rewritten as rows come in."""

    def __init__(self, out_dir, rows=None):
        self.path = Path(out_dir) / training_log_name
        self.rows = list(rows or [])

    def add_row(self, row):
        self.rows.append(row)
        self.publish_results()

    def publish_results(self):
        clerk.write_csv(
            self.path,
            TRAINING_COLUMNS,
            [[row[key] for key in TRAINING_COLUMNS] for row in self.rows],
        )
        return self.path


class EvaluationReport:
    def __init__(self, result, scenario_name=""):
        self.result = result
        self.scenario_name = scenario_name
        self.report_details = {
            "scenario": scenario_name,
            "n_runs": result.n_runs,
            "success_rate": 0.0,
            "T_a_mean": None,
            "T_a_std": None,
            "T_b": None,
            "inference_time": result.inference_time,
        }

    def generate_report(self):
        result = self.result
        if result.n_runs:
            self.report_details["success_rate"] = sum(result.successes) / result.n_runs
        if result.lap_times:
            laps = np.asarray(result.lap_times, dtype=float)
            self.report_details["T_a_mean"] = float(laps.mean())
            self.report_details["T_a_std"] = float(laps.std())
            self.report_details["T_b"] = float(laps.min())
        logger.info(
            "evaluation of %s: success %.1f%% over %d runs, T_a %s, T_b %s",
            self.scenario_name or "scenario",
            100.0 * self.report_details["success_rate"],
            result.n_runs,
            _fmt(self.report_details["T_a_mean"], self.report_details["T_a_std"]),
            _fmt(self.report_details["T_b"]),
        )
        return self.report_details

    def get_report_details(self):
        return self.report_details

    def publish_results(self, out_dir):
        out_dir = clerk.make_dir(out_dir)
        stats_path = out_dir / eval_stats_name
        clerk.write_json(stats_path, self.report_details)
        written = [stats_path]
        if self.result.trajectories:
            folder = clerk.make_dir(out_dir / "trajectories")
            for run, rows in enumerate(self.result.trajectories):
                target = folder / f"run_{run:02d}.csv"
                clerk.write_csv(target, TRAJECTORY_COLUMNS, trajectory_rows(rows))
                written.append(target)
        return written


def trajectory_rows(rows):
    for row in rows:
        values = [float(v) for v in row]
        values[-1] = int(values[-1])
        yield values


def _fmt(mean, std=None):
    if mean is None or (isinstance(mean, float) and math.isnan(mean)):
        return "-"
    if std is None:
        return f"{mean:.2f} s"
    return f"{mean:.2f} +/- {std:.2f} s"

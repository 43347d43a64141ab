# scenario.py
# JSON scenario schema, loading, and the built-in scenario generators

import json
import logging
import math
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.spatial.transform import Rotation

from .dynamics import QuadParams, QuadState, hover_speed
from .errors import ConfigError
from .policy import PpoConfig
from .progress import CurriculumConfig, RewardWeights
from .topo_planner import PlannerConfig
from .trainer import SimulationConfig, TrainConfig
from .world import PRIMITIVE_SIZES, Bounds, ObstaclePrimitive, Scenario, Waypoint

logger = logging.getLogger(__name__)

Vec3 = Tuple[float, float, float]
Quat = Tuple[float, float, float, float]
IDENTITY = (1.0, 0.0, 0.0, 0.0)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ObstacleSpec(_Strict):
    kind: Literal["sphere", "box", "cylinder"]
    center: Vec3
    size: List[float]
    orientation: Quat = IDENTITY

    @model_validator(mode="after")
    def extents(self):
        if len(self.size) != PRIMITIVE_SIZES[self.kind]:
            raise ValueError(
                f"{self.kind} takes {PRIMITIVE_SIZES[self.kind]} size values"
            )
        if min(self.size) <= 0:
            raise ValueError("obstacle sizes must be > 0")
        return self


class BoundsSpec(_Strict):
    min: Vec3
    max: Vec3

    @model_validator(mode="after")
    def ordered(self):
        if any(hi <= lo for lo, hi in zip(self.min, self.max)):
            raise ValueError("every max coordinate must exceed the min coordinate")
        return self


class WorldSpec(_Strict):
    bounds: BoundsSpec
    resolution: float = Field(0.05, gt=0)
    obstacles: List[ObstacleSpec] = []


class StartSpec(_Strict):
    p: Vec3
    q: Quat = IDENTITY
    v: Vec3 = (0.0, 0.0, 0.0)
    w: Vec3 = (0.0, 0.0, 0.0)
    omega: Optional[Tuple[float, float, float, float]] = None


class WaypointSpec(_Strict):
    center: Vec3
    orientation: Quat = IDENTITY
    r_tol: float = Field(0.3, gt=0)


class ScenarioFile(_Strict):
    name: str = "scenario"
    quadrotor: QuadParams = QuadParams()
    world: WorldSpec
    start: StartSpec
    waypoints: List[WaypointSpec] = Field(min_length=1)
    end: Optional[WaypointSpec] = None
    d_c: float = Field(0.15, gt=0)
    simulation: SimulationConfig = SimulationConfig()
    reward: RewardWeights = RewardWeights()
    curriculum: CurriculumConfig = CurriculumConfig()
    planner: PlannerConfig = PlannerConfig()
    ppo: PpoConfig = PpoConfig()
    training: TrainConfig = TrainConfig()
    seed: int = Field(0, ge=0)

    def start_state(self):
        spec = self.start
        omega = spec.omega
        if omega is None:
            omega = (hover_speed(self.quadrotor),) * 4
        q = np.asarray(spec.q, dtype=float)
        return QuadState(
            p=np.asarray(spec.p, dtype=float),
            q=q / np.linalg.norm(q),
            v=np.asarray(spec.v, dtype=float),
            w=np.asarray(spec.w, dtype=float),
            omega=np.asarray(omega, dtype=float),
        )

    def to_scenario(self):
        obstacles = [
            ObstaclePrimitive(o.kind, o.center, tuple(o.size), o.orientation)
            for o in self.world.obstacles
        ]
        scenario = Scenario(
            start=self.start_state(),
            waypoints=[
                Waypoint(w.center, w.orientation, w.r_tol) for w in self.waypoints
            ],
            obstacles=obstacles,
            bounds=Bounds(self.world.bounds.min, self.world.bounds.max),
            d_c=self.d_c,
            end=(
                None
                if self.end is None
                else Waypoint(self.end.center, self.end.orientation, self.end.r_tol)
            ),
            name=self.name,
        )
        return scenario.validate()


def format_validation_error(exc):
    lines = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"]) or "<root>"
        lines.append(f"{location}: {error['msg']}")
    return "; ".join(lines)


def parse_scenario(data):
    try:
        return ScenarioFile.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(format_validation_error(exc)) from exc


def load_scenario(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"scenario file {path} does not exist") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    scenario_file = parse_scenario(data)
    logger.info(
        "loaded scenario %r: %d waypoints, %d obstacles",
        scenario_file.name,
        len(scenario_file.waypoints),
        len(scenario_file.world.obstacles),
    )
    return scenario_file


# Generators


def yaw_quaternion(yaw):
    x, y, z, w = Rotation.from_euler("z", yaw).as_quat()
    return (float(w), float(x), float(y), float(z))


def _point(values):
    return tuple(round(float(v), 6) for v in values)


def slalom(seed=0):
    """Three pillars in a row, passed on alternating sides."""
    rng = np.random.default_rng(seed)
    obstacles, waypoints = [], []
    for k, x in enumerate((4.0, 8.0, 12.0)):
        y = rng.uniform(-0.3, 0.3)
        obstacles.append(
            {"kind": "cylinder", "center": _point((x, y, 2.0)), "size": [0.4, 4.0]}
        )
        side = 1.0 if k % 2 == 0 else -1.0
        waypoints.append({"center": _point((x, y + side * 1.6, 1.5))})
    waypoints.append({"center": (16.0, 0.0, 1.5)})
    return {
        "name": f"slalom-{seed}",
        "world": {"bounds": {"min": (-2.0, -4.0, 0.0), "max": (18.0, 4.0, 4.0)}},
        "start": {"p": (0.0, 0.0, 1.5)},
        "waypoints": waypoints,
        "seed": seed,
    }


def forest(seed=0, n_trees=20):
    """Random tree trunks between a start and a single goal gate."""
    rng = np.random.default_rng(seed)
    start = np.array([1.0, 0.0, 1.5])
    keep_clear = [start, np.array([10.0, 0.0, 1.5]), np.array([19.0, 0.0, 1.5])]
    trees = []
    while len(trees) < n_trees:
        radius = rng.uniform(0.2, 0.4)
        x, y = rng.uniform(3.0, 17.0), rng.uniform(-4.0, 4.0)
        near = [np.hypot(x - c[0], y - c[1]) < radius + 1.0 for c in keep_clear]
        near += [np.hypot(x - t[0], y - t[1]) < radius + t[2] + 0.6 for t in trees]
        if not any(near):
            trees.append((x, y, radius))
    return {
        "name": f"forest-{seed}",
        "world": {
            "bounds": {"min": (0.0, -5.0, 0.0), "max": (20.0, 5.0, 4.0)},
            "obstacles": [
                {
                    "kind": "cylinder",
                    "center": _point((x, y, 2.0)),
                    "size": [round(r, 6), 4.0],
                }
                for x, y, r in trees
            ],
        },
        "start": {"p": tuple(start)},
        "waypoints": [{"center": tuple(keep_clear[1])}],
        "end": {"center": tuple(keep_clear[2])},
        "seed": seed,
    }


def gate_frame(center, yaw, opening, bar=0.1):
    """Four boxes framing a square opening of half-width `opening`."""
    R = Rotation.from_euler("z", yaw)
    q = yaw_quaternion(yaw)
    offset = opening + bar / 2
    length = 2 * opening + 2 * bar
    parts = [
        ((0.0, offset, 0.0), [bar, bar, length]),
        ((0.0, -offset, 0.0), [bar, bar, length]),
        ((0.0, 0.0, offset), [bar, length, bar]),
        ((0.0, 0.0, -offset), [bar, length, bar]),
    ]
    return [
        {
            "kind": "box",
            "center": _point(np.asarray(center) + R.apply(local)),
            "size": size,
            "orientation": _point(q),
        }
        for local, size in parts
    ]


def gates(seed=0, r_tol=0.3):
    """Four oriented gates on a loop."""
    rng = np.random.default_rng(seed)
    # (x, y) of each gate and its yaw in half turns
    layout = [
        ((5.0, 0.0), 0.0),
        ((10.0, 4.0), 0.5),
        ((5.0, 8.0), 1.0),
        ((0.0, 4.0), 1.5),
    ]
    obstacles, waypoints = [], []
    for (x, y), turns in layout:
        center = (x + rng.uniform(-0.5, 0.5), y + rng.uniform(-0.5, 0.5), 2.0)
        yaw = turns * math.pi + rng.uniform(-0.2, 0.2)
        obstacles += gate_frame(center, yaw, r_tol + 0.35)
        waypoints.append(
            {"center": _point(center), "orientation": _point(yaw_quaternion(yaw)),
             "r_tol": r_tol}
        )
    return {
        "name": f"gates-{seed}",
        "world": {
            "bounds": {"min": (-3.0, -3.0, 0.0), "max": (13.0, 11.0, 5.0)},
            "obstacles": obstacles,
        },
        "start": {"p": (0.0, 0.0, 2.0)},
        "waypoints": waypoints,
        "seed": seed,
    }


def office(seed=0, door_width=1.2, door_height=2.0):
    """Rooms separated by walls, one doorway per wall."""
    rng = np.random.default_rng(seed)
    width, height, thickness = 6.0, 3.0, 0.2
    obstacles, waypoints = [], []
    for x in (4.0, 8.0, 12.0):
        door = rng.uniform(1.0 + door_width / 2, width - 1.0 - door_width / 2)
        left = door - door_width / 2
        right = width - (door + door_width / 2)
        obstacles += [
            {"kind": "box", "center": _point((x, left / 2, height / 2)),
             "size": [thickness, round(left, 6), height]},
            {"kind": "box", "center": _point((x, width - right / 2, height / 2)),
             "size": [thickness, round(right, 6), height]},
            {"kind": "box",
             "center": _point((x, door, (door_height + height) / 2)),
             "size": [thickness, door_width, height - door_height]},
        ]
        waypoints.append({"center": _point((x, door, door_height / 2))})
    return {
        "name": f"office-{seed}",
        "world": {
            "bounds": {"min": (0.0, 0.0, 0.0), "max": (16.0, width, height)},
            "obstacles": obstacles,
        },
        "start": {"p": (1.0, width / 2, 1.0)},
        "waypoints": waypoints,
        "end": {"center": (15.0, width / 2, 1.0)},
        "seed": seed,
    }


GENERATORS = {"slalom": slalom, "forest": forest, "gates": gates, "office": office}


def generate_scenario(kind, seed=0):
    try:
        generator = GENERATORS[kind]
    except KeyError as exc:
        raise ConfigError(f"unknown scenario generator {kind!r}") from exc
    return parse_scenario(generator(seed=seed))

# trainer.py
# parallel flight environment, valid-state resets, PPO training loop with
# the slow/fast curriculum, and deterministic evaluation

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field

from . import clerk
from .dynamics import QuadState, low_level_control, step
from .policy import ActorCritic, PpoLearner, RolloutBatch, action_decode
from .policy import build_observation, save_checkpoint
from .progress import (
    CurriculumConfig,
    RewardTerms,
    RewardWeights,
    Stage,
    farthest_visible_many,
    k_s_init,
    project,
    total_reward,
)
from .world import waypoint_passed

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = (
    ["t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz"]
    + ["wx", "wy", "wz", "Omega1", "Omega2", "Omega3", "Omega4"]
    + ["a_thrust", "a_wx", "a_wy", "a_wz"]
    + ["r_p", "r_s", "r_wp", "r_T", "r_rate", "waypoint"]
)


class SimulationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dt: float = Field(0.02, gt=0)
    fidelity: Literal["full", "simple"] = "full"


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_agents: int = Field(100, ge=1)
    max_episode_steps: int = Field(1500, ge=1)
    total_env_steps: int = Field(2_000_000, ge=0)
    eval_every: int = Field(10, ge=1)
    switch_consecutive: int = Field(3, ge=1)
    target_success: Optional[float] = Field(None, gt=0, le=1)
    checkpoint_every: int = Field(50, ge=1)
    start_stage: Stage = Stage.SLOW
    projection_window: int = Field(20, ge=1)
    bin_size: float = Field(1.0, gt=0)


@dataclass
class AgentSlot:
    agent_id: int
    state: QuadState
    waypoint_index: int = 0
    combo_id: int = 0
    k_v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    valid_states: Dict[int, Dict[int, QuadState]] = field(default_factory=dict)
    steps: int = 0
    projection: object = None
    from_start: bool = True


@dataclass
class StepOutcome:
    rewards: np.ndarray
    terms: List[RewardTerms]
    terminated: np.ndarray
    truncated: np.ndarray
    success: np.ndarray
    lap_times: List[Optional[float]]


def seed_streams(seed):
    """Planner, agent and evaluation seed sequences of one master seed."""
    return np.random.SeedSequence(seed).spawn(3)


def sample_drag(k_v, rng):
    """k'_v ~ max(0, Normal(0, k_v)) per axis."""
    return np.maximum(0.0, rng.normal(0.0, np.asarray(k_v, dtype=float)))


class FlightEnv:
    """Steps every agent slot through the dynamics, collision, waypoint and
    reward logic. Slots are updated in place; resets are left to the caller."""

    def __init__(
        self,
        scenario,
        esdf,
        combinations,
        params,
        sim=None,
        weights=None,
        curriculum=None,
        max_episode_steps=1500,
        projection_window=20,
        d_c=None,
    ):
        self.scenario = scenario
        self.esdf = esdf
        self.combinations = combinations
        self.sim = sim or SimulationConfig()
        self.params = params
        if self.sim.fidelity == "simple":
            self.params = params.model_copy(update={"motor_dynamics": False})
        self.weights = weights or RewardWeights()
        self.curriculum = curriculum or CurriculumConfig()
        self.max_episode_steps = max_episode_steps
        self.window = projection_window
        self.d_c = scenario.d_c if d_c is None else d_c
        self.targets = scenario.targets
        self.k_s = [
            self.weights.k_s
            if self.weights.k_s is not None
            else k_s_init(self.curriculum.v_max, self.sim.dt, combo.path.length)
            for combo in combinations
        ]

    @property
    def simple(self):
        return self.sim.fidelity == "simple"

    def drag_for(self, k_v):
        return np.zeros(3) if self.simple else np.asarray(k_v, dtype=float)

    def track(self, slot):
        return self.combinations[slot.combo_id]

    def start_slot(self, agent_id, combo_id=0, k_v=None):
        slot = AgentSlot(
            agent_id=agent_id,
            state=self.scenario.start.copy(),
            combo_id=combo_id,
            k_v=self.drag_for(self.params.drag if k_v is None else k_v),
        )
        self.anchor(slot)
        return slot

    def anchor(self, slot):
        """Global projection and the waypoint that follows it on the track."""
        combo = self.track(slot)
        slot.projection = project(combo.path, slot.state.p)
        index = int(np.searchsorted(combo.waypoint_s, slot.projection.s, side="right"))
        slot.waypoint_index = min(index, len(self.targets) - 1)

    def observe(self, slots):
        gammas = farthest_visible_many(
            [self.track(slot).path for slot in slots],
            [slot.state.p for slot in slots],
            self.esdf,
            self.d_c,
            [slot.projection for slot in slots],
        )
        corners = [self.targets[slot.waypoint_index].corners for slot in slots]
        states = QuadState.stack([slot.state for slot in slots])
        return build_observation(states, np.array(corners), gammas)

    def _window(self, slot, passed):
        combo = self.track(slot)
        if passed:
            vertex = combo.waypoint_vertices[slot.waypoint_index - 1]
            return (vertex + 1 - self.window, vertex + 1 + self.window)
        return (slot.projection.l - self.window, slot.projection.l + self.window)

    def step(self, slots, actions):
        """Advance all slots by one control period with the given actions."""
        n = len(slots)
        states = QuadState.stack([slot.state for slot in slots])
        command = action_decode(actions, self.params)
        motor = low_level_control(states, command, self.params)
        k_v = np.stack([slot.k_v for slot in slots])
        with np.errstate(invalid="ignore", over="ignore"):
            advanced = step(states, motor, self.sim.dt, self.params, k_v=k_v).unstack()

        outcome = StepOutcome(
            rewards=np.zeros(n),
            terms=[RewardTerms() for _ in range(n)],
            terminated=np.zeros(n, dtype=bool),
            truncated=np.zeros(n, dtype=bool),
            success=np.zeros(n, dtype=bool),
            lap_times=[None] * n,
        )
        for i, (slot, new_state) in enumerate(zip(slots, advanced)):
            p_prev = slot.state.p
            slot.state = new_state
            slot.steps += 1
            if not new_state.is_finite():
                logger.warning(
                    "agent %d: non-finite state after %d steps, terminating: %s",
                    slot.agent_id,
                    slot.steps,
                    new_state.to_vector(),
                )
                outcome.terms[i] = RewardTerms(terminal=self.weights.r_T)
                outcome.rewards[i] = self.weights.r_T
                outcome.terminated[i] = True
                continue

            collided = bool(self.esdf.is_collision(new_state.p, self.d_c))
            wp_event = None
            r_tol = self.targets[slot.waypoint_index].r_tol
            if not collided:
                wp_event = waypoint_passed(
                    p_prev, new_state.p, self.targets[slot.waypoint_index]
                )
                if wp_event is not None:
                    slot.waypoint_index += 1

            proj_prev = slot.projection
            combo = self.track(slot)
            slot.projection = project(
                combo.path, new_state.p, self._window(slot, wp_event is not None)
            )
            reward, terms = total_reward(
                slot.projection,
                proj_prev,
                wp_event,
                collided,
                new_state.w,
                new_state.v,
                self.weights,
                self.curriculum,
                self.k_s[slot.combo_id],
                r_tol,
            )
            outcome.rewards[i] = reward
            outcome.terms[i] = terms

            success = not collided and slot.waypoint_index == len(self.targets)
            if success:
                slot.waypoint_index = len(self.targets) - 1
                if slot.from_start:
                    outcome.lap_times[i] = slot.steps * self.sim.dt
            outcome.success[i] = success
            outcome.terminated[i] = collided or success
            outcome.truncated[i] = (
                not outcome.terminated[i] and slot.steps >= self.max_episode_steps
            )
        return outcome


def record_valid_state(slot, curriculum, bin_size=1.0):
    """Store the slot's state in its arclength bin if the stage allows it."""
    proj = slot.projection
    if curriculum.stage == Stage.SLOW:
        speed = float(np.linalg.norm(slot.state.v))
        if not (curriculum.v_min < speed < curriculum.v_max):
            return False
        if not proj.dist < curriculum.d_max:
            return False
    bin_index = int(np.floor(proj.s / bin_size))
    slot.valid_states.setdefault(slot.combo_id, {})[bin_index] = slot.state.copy()
    return True


def reset_agent(slot, env, rng):
    combo_id = int(rng.integers(len(env.combinations)))
    bins = sorted(slot.valid_states.get(combo_id, {}))
    if bins:
        chosen = bins[int(rng.integers(len(bins)))]
        slot.state = slot.valid_states[combo_id][chosen].copy()
        slot.from_start = False
    else:
        slot.state = env.scenario.start.copy()
        slot.from_start = True
    slot.combo_id = combo_id
    slot.k_v = env.drag_for(sample_drag(env.params.drag, rng))
    slot.steps = 0
    env.anchor(slot)
    return slot


def stage_switch_check(history, stage, consecutive=3):
    """True once the last `consecutive` deterministic evaluations all passed."""
    if stage == Stage.FAST:
        return False
    return len(history) >= consecutive and all(history[-consecutive:])


@dataclass
class EpisodeStats:
    rewards: List[float] = field(default_factory=list)
    successes: int = 0
    episodes: int = 0
    lap_times: List[float] = field(default_factory=list)

    @property
    def success_fraction(self):
        return self.successes / self.episodes if self.episodes else 0.0


def rollout_step(env, slots, obs, model, rng, generator, stats=None, bin_size=1.0):
    """One transition for every agent; done agents are reset afterwards.

    Returns (transition dict, next observations).
    """
    actions, log_probs, values = model.act(obs, generator=generator)
    outcome = env.step(slots, actions)
    final_values = np.zeros(len(slots))
    truncated = np.flatnonzero(outcome.truncated)
    if len(truncated):
        final_obs = env.observe([slots[i] for i in truncated])
        final_values[truncated] = model.predict_value(final_obs)

    for i, slot in enumerate(slots):
        done = outcome.terminated[i] or outcome.truncated[i]
        if not outcome.terminated[i]:
            record_valid_state(slot, env.curriculum, bin_size)
        if stats is not None and done:
            stats.episodes += 1
            stats.successes += int(outcome.success[i])
            if outcome.lap_times[i] is not None:
                stats.lap_times.append(outcome.lap_times[i])
        if done:
            reset_agent(slot, env, rng)
    if stats is not None:
        stats.rewards.extend(outcome.rewards.tolist())

    transition = {
        "obs": obs,
        "actions": actions,
        "log_probs": log_probs,
        "values": values,
        "rewards": outcome.rewards,
        "terminated": outcome.terminated,
        "truncated": outcome.truncated,
        "final_values": final_values,
        "agent_ids": np.array([slot.agent_id for slot in slots]),
    }
    return transition, env.observe(slots)


def collect_rollout(env, slots, obs, model, n_steps, rng, generator, stats, bin_size):
    records = []
    for _ in range(n_steps):
        transition, obs = rollout_step(
            env, slots, obs, model, rng, generator, stats, bin_size
        )
        records.append(transition)
    batch = RolloutBatch(
        **{key: np.stack([r[key] for r in records]) for key in records[0]},
        last_values=model.predict_value(obs),
    )
    return batch, obs


@dataclass
class EvaluationResult:
    successes: List[bool]
    lap_times: List[float]
    trajectories: List[np.ndarray]
    inference_time: float

    @property
    def n_runs(self):
        return len(self.successes)


def evaluate(
    model,
    env,
    n_runs=30,
    randomize_drag=False,
    seed=0,
    max_steps=None,
    record=True,
):
    """Mean-action runs from the start state on combination 0."""
    rng = np.random.default_rng(seed)
    max_steps = env.max_episode_steps if max_steps is None else max_steps
    slots = []
    for run in range(n_runs):
        k_v = sample_drag(env.params.drag, rng) if randomize_drag else None
        slots.append(env.start_slot(run, combo_id=0, k_v=k_v))

    rows = [[] for _ in range(n_runs)]
    if record:
        for run, slot in enumerate(slots):
            rows[run].append(_trajectory_row(0.0, slot, np.zeros(4), RewardTerms()))
    active = list(range(n_runs))
    successes = [False] * n_runs
    lap_times = []
    inference, calls = 0.0, 0
    while active:
        current = [slots[i] for i in active]
        obs = env.observe(current)
        tic = time.perf_counter()
        actions, _, _ = model.act(obs, deterministic=True)
        inference += (time.perf_counter() - tic) / len(current)
        calls += 1
        outcome = env.step(current, actions)
        still = []
        for k, run in enumerate(active):
            slot = slots[run]
            if record:
                rows[run].append(
                    _trajectory_row(
                        slot.steps * env.sim.dt,
                        slot,
                        np.clip(actions[k], -1.0, 1.0),
                        outcome.terms[k],
                    )
                )
            if outcome.success[k]:
                successes[run] = True
                lap_times.append(outcome.lap_times[k])
            elif not outcome.terminated[k] and slot.steps < max_steps:
                still.append(run)
        active = still
    return EvaluationResult(
        successes=successes,
        lap_times=lap_times,
        trajectories=[np.array(r) for r in rows] if record else [],
        inference_time=inference / calls if calls else 0.0,
    )


def _trajectory_row(t, slot, action, terms):
    s = slot.state
    return np.concatenate(
        [
            [t], s.p, s.q, s.v, s.w, s.omega, action, terms.as_row(),
            [slot.waypoint_index],
        ]
    )


@dataclass
class TrainingResult:
    model: ActorCritic
    rows: List[dict]
    stage: Stage
    env_steps: int
    iteration: int
    evaluations: List[dict] = field(default_factory=list)


class Trainer:
    """Alternates rollout collection over all agents with PPO updates."""

    def __init__(
        self,
        env,
        ppo,
        config,
        seed=0,
        out_dir=None,
        model=None,
        resume=None,
        on_iteration=None,
    ):
        self.env = env
        self.ppo = ppo
        self.config = config
        self.out_dir = out_dir
        self.on_iteration = on_iteration
        _, agent_seq, eval_seq = seed_streams(seed)
        resume = resume or {}
        self.iteration = int(resume.get("iteration", 0))
        self.env_steps = int(resume.get("env_steps", 0))
        stage = Stage(resume.get("stage", config.start_stage))
        env.curriculum = env.curriculum.model_copy(update={"stage": stage})
        if "k_s" in resume:
            env.k_s = [float(k) for k in resume["k_s"]]

        if self.iteration:
            # resumed runs continue on a stream keyed by the iteration count
            agent_seq = np.random.SeedSequence([seed, self.iteration])
        self.rng = np.random.default_rng(agent_seq)
        self.eval_seed = int(eval_seq.generate_state(1)[0])
        torch_seed = int(self.rng.integers(2**62))
        torch.manual_seed(torch_seed)
        self.generator = torch.Generator().manual_seed(torch_seed)
        if model is None:
            model = ActorCritic(hidden=ppo.hidden, init_log_std=ppo.init_log_std)
        self.model = model
        self.learner = PpoLearner(model, ppo, seed=torch_seed + 1)
        self.history = []
        self.rows = []
        self.evaluations = []

    @property
    def stage(self):
        return self.env.curriculum.stage

    def meta(self):
        return {
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "stage": self.stage.value,
            "k_s": list(self.env.k_s),
        }

    def _checkpoint(self, name):
        if self.out_dir is None:
            return
        folder = clerk.make_dir(Path(self.out_dir) / "checkpoints")
        save_checkpoint(self.model, folder / name, self.meta())

    def _record_evaluation(self, result):
        success = bool(result.successes[0])
        lap_time = result.lap_times[0] if success else None
        self.evaluations.append(
            {
                "iteration": self.iteration,
                "stage": self.stage.value,
                "success": success,
                "lap_time": lap_time,
            }
        )
        self.history.append(success)
        logger.info(
            "evaluation at iteration %d (%s): success %s, lap time %s",
            self.iteration,
            self.stage.value,
            success,
            "-" if lap_time is None else f"{lap_time:.2f} s",
        )

    def _switch_stage(self):
        self.env.curriculum = self.env.curriculum.model_copy(
            update={"stage": Stage.FAST}
        )
        self.history = []
        logger.info(
            "stage switch slow -> fast at iteration %d (%d env steps)",
            self.iteration,
            self.env_steps,
        )

    def train(self):
        cfg = self.config
        env = self.env
        steps_per_iteration = self.ppo.steps_per_iteration * cfg.n_agents
        slots = [env.start_slot(i) for i in range(cfg.n_agents)]
        for slot in slots:
            reset_agent(slot, env, self.rng)
        obs = env.observe(slots)

        while self.env_steps + steps_per_iteration <= cfg.total_env_steps:
            stats = EpisodeStats()
            batch, obs = collect_rollout(
                env,
                slots,
                obs,
                self.model,
                self.ppo.steps_per_iteration,
                self.rng,
                self.generator,
                stats,
                cfg.bin_size,
            )
            batch.compute_advantages(self.ppo.gamma, self.ppo.lam)
            update = self.learner.update(batch)
            self.iteration += 1
            self.env_steps += steps_per_iteration

            row = {
                "iteration": self.iteration,
                "env_steps": self.env_steps,
                "mean_reward": float(np.mean(stats.rewards)),
                "success_pct": 100.0 * stats.success_fraction,
                "mean_lap_time": (
                    float(np.mean(stats.lap_times)) if stats.lap_times else None
                ),
                "best_lap_time": min(stats.lap_times) if stats.lap_times else None,
                "stage": self.stage.value,
            }
            self.rows.append(row)
            logger.info(
                "iteration %d: reward %.4f, success %.1f%%, policy loss %.4f, "
                "value loss %.4f, kl %.5f",
                self.iteration,
                row["mean_reward"],
                row["success_pct"],
                update["policy_loss"],
                update["value_loss"],
                update["approx_kl"],
            )
            if self.on_iteration is not None:
                self.on_iteration(row)

            if self.iteration % cfg.eval_every == 0:
                result = evaluate(
                    self.model, env, n_runs=1, seed=self.eval_seed, record=False
                )
                self._record_evaluation(result)
                if stage_switch_check(self.history, self.stage, cfg.switch_consecutive):
                    self._switch_stage()
            if self.iteration % cfg.checkpoint_every == 0:
                self._checkpoint(f"iter_{self.iteration:05d}.amtp")
            if (
                cfg.target_success is not None
                and stats.episodes
                and stats.success_fraction >= cfg.target_success
            ):
                logger.info(
                    "target success %.2f reached at iteration %d",
                    cfg.target_success,
                    self.iteration,
                )
                break

        self._checkpoint("final.amtp")
        return TrainingResult(
            model=self.model,
            rows=self.rows,
            stage=self.stage,
            env_steps=self.env_steps,
            iteration=self.iteration,
            evaluations=self.evaluations,
        )

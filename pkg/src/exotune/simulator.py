"""Proportional-mode elbow exoskeleton model plus a synthetic user.

The device reads biceps/triceps effort levels each control tick. The
muscle with the higher effort is dominant; once its delta effort
(dominant minus opposing) exceeds that muscle's threshold, the joint
moves in the corresponding direction at a speed proportional to delta
effort, capped at `max_speed`. Below the threshold (or on an exact
effort tie) the joint idles.

The "virtual user" is a proportional-feedback effort generator tracking
a scripted target trajectory: an asymmetric triangle wave with one slow
phase and one fast return. The vertical task spends its slow phase
flexing (biceps-led), the horizontal task extending (triceps-led), so
each task leans on the muscle it is named after.

Tick semantics in `rollout_episode`: a state's stored efforts are the
efforts in force during the tick that starts at that state, i.e. they
gate and drive the motion toward the next state; fresh efforts are then
generated at the new angle and time. Rewards are labeled from the
transition's state (or next state, per RewardConfig.source).

Everything is deterministic given seeds; rollouts take caller-owned RNG
state, and grid collection derives one RNG per (cell, episode) so cell
ordering or parallel scheduling cannot change the data.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Union

import numpy as np

from .datastore import (
    Dataset,
    DatasetHeader,
    RewardConfig,
    SCHEMA_VERSION,
    THRESHOLD_MAX,
    THRESHOLD_MIN,
    Transition,
    compute_reward,
    config_digest,
)

SPEED_LAWS = ("paper_literal", "offset")
TASKS = ("vertical", "horizontal")


@dataclass(frozen=True)
class SimConfig:
    """Device constants for the proportional mode."""

    k_p: float = 1.0
    max_speed: float = 100.0
    angle_min: float = 0.0
    angle_max: float = 130.0
    dt: float = 0.02
    speed_law: str = "paper_literal"
    angle_scale: float = 0.9  # degrees per speed unit per second

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.angle_min >= self.angle_max:
            raise ValueError("angle_min must be below angle_max")
        if self.speed_law not in SPEED_LAWS:
            raise ValueError(f"speed_law must be one of {SPEED_LAWS}, got {self.speed_law!r}")
        if self.k_p <= 0 or self.max_speed <= 0 or self.angle_scale <= 0:
            raise ValueError("k_p, max_speed and angle_scale must be positive")


@dataclass(frozen=True)
class SimState:
    """Device state: motor angle (degrees), per-muscle efforts, time (s)."""

    angle: float
    effort_biceps: float
    effort_triceps: float
    t: float = 0.0


@dataclass(frozen=True)
class ThresholdAction:
    """The two-agent action: one effort threshold per muscle."""

    th_biceps: float
    th_triceps: float

    def __post_init__(self) -> None:
        for name, th in (("th_biceps", self.th_biceps), ("th_triceps", self.th_triceps)):
            if not THRESHOLD_MIN <= th <= THRESHOLD_MAX:
                raise ValueError(
                    f"{name}={th} outside device range [{THRESHOLD_MIN}, {THRESHOLD_MAX}]"
                )


@dataclass(frozen=True)
class VirtualUserConfig:
    """Feedback effort generator for one scripted task.

    Outside a small angular deadband, the muscle pulling toward the
    target produces co_contraction + feedback_gain * |error| effort
    (plus noise); the opposing muscle stays at the co-contraction
    baseline. Efforts are clipped to [0, 100].
    """

    task: str
    feedback_gain: float = 2.0  # effort units per degree of error
    co_contraction: float = 5.0
    noise_std: float = 0.5
    deadband: float = 2.0  # degrees
    angle_low: float = 10.0
    angle_high: float = 120.0
    slow_phase_s: float = 12.0
    fast_phase_s: float = 3.0

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.angle_low >= self.angle_high:
            raise ValueError("angle_low must be below angle_high")
        if self.slow_phase_s <= 0 or self.fast_phase_s <= 0:
            raise ValueError("phase durations must be positive")
        if self.feedback_gain <= 0 or self.noise_std < 0 or self.deadband < 0:
            raise ValueError("invalid feedback parameters")
        if not 0 <= self.co_contraction <= 100:
            raise ValueError("co_contraction must sit in [0, 100]")


def desired_angle(user: VirtualUserConfig, t: float) -> float:
    """Target trajectory: periodic asymmetric triangle between the task angles."""
    period = user.slow_phase_s + user.fast_phase_s
    u = t % period
    lo, hi = user.angle_low, user.angle_high
    span = hi - lo
    if user.task == "vertical":
        if u < user.slow_phase_s:  # slow flexion
            return lo + span * u / user.slow_phase_s
        return hi - span * (u - user.slow_phase_s) / user.fast_phase_s
    if u < user.slow_phase_s:  # slow extension
        return hi - span * u / user.slow_phase_s
    return lo + span * (u - user.slow_phase_s) / user.fast_phase_s


def generate_efforts(
    user: VirtualUserConfig, state: SimState, t: float, rng: np.random.Generator
) -> tuple[float, float]:
    """Biceps/triceps efforts at time t from the tracking error at `state`."""
    error = desired_angle(user, t) - state.angle
    noise_b = rng.normal(0.0, user.noise_std)
    noise_t = rng.normal(0.0, user.noise_std)
    base = user.co_contraction
    if error > user.deadband:
        e_b = base + user.feedback_gain * abs(error) + noise_b
        e_t = base + noise_t
    elif error < -user.deadband:
        e_b = base + noise_b
        e_t = base + user.feedback_gain * abs(error) + noise_t
    else:
        e_b = base + noise_b
        e_t = base + noise_t
    return (
        float(np.clip(e_b, 0.0, 100.0)),
        float(np.clip(e_t, 0.0, 100.0)),
    )


def joint_speed(
    effort_biceps: float,
    effort_triceps: float,
    action: ThresholdAction,
    config: SimConfig,
) -> float:
    """Signed joint speed; positive is flexion (biceps), negative extension.

    Idle whenever delta effort is at or below the dominant muscle's
    threshold (an exact effort tie counts as idle). Above it, the
    magnitude is k_p * delta under the `paper_literal` law, which jumps
    at the threshold, or k_p * (delta - threshold) under `offset`, which
    ramps from zero; both are capped at max_speed.
    """
    for name, e in (("biceps", effort_biceps), ("triceps", effort_triceps)):
        if not 0.0 <= e <= 100.0:
            raise ValueError(f"{name} effort {e} outside [0, 100]")
    if effort_biceps == effort_triceps:
        return 0.0
    if effort_biceps > effort_triceps:
        delta = effort_biceps - effort_triceps
        threshold = action.th_biceps
        sign = 1.0
    else:
        delta = effort_triceps - effort_biceps
        threshold = action.th_triceps
        sign = -1.0
    if delta <= threshold:
        return 0.0
    if config.speed_law == "offset":
        magnitude = config.k_p * (delta - threshold)
    else:
        magnitude = config.k_p * delta
    return sign * min(magnitude, config.max_speed)


def step_sim(
    state: SimState,
    action: ThresholdAction,
    efforts: tuple[float, float],
    config: SimConfig,
) -> SimState:
    """Advance one tick: integrate the speed the supplied efforts command,
    clamp the angle to the joint limits, and store those efforts."""
    e_b, e_t = efforts
    speed = joint_speed(e_b, e_t, action, config)
    angle = state.angle + speed * config.angle_scale * config.dt
    angle = min(max(angle, config.angle_min), config.angle_max)
    return SimState(angle=angle, effort_biceps=e_b, effort_triceps=e_t, t=state.t + config.dt)


Policy = Union[ThresholdAction, Callable[[SimState], ThresholdAction]]


def rollout_episode(
    policy: Policy,
    user: VirtualUserConfig,
    sim_config: SimConfig,
    reward_config: RewardConfig,
    duration_s: float,
    rng: np.random.Generator,
    episode_id: int = 0,
) -> list[Transition]:
    """Simulate one episode at dt resolution and log one transition per tick.

    `policy` is either a fixed ThresholdAction or a callback mapping the
    current state to one (dynamic thresholds). The final transition is
    flagged done.
    """
    if duration_s <= 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    n_steps = round(duration_s / sim_config.dt)
    if n_steps < 1:
        raise ValueError("duration shorter than one control tick")
    policy_fn = policy if callable(policy) else (lambda _s: policy)

    angle0 = min(max(desired_angle(user, 0.0), sim_config.angle_min), sim_config.angle_max)
    probe = SimState(angle=angle0, effort_biceps=0.0, effort_triceps=0.0, t=0.0)
    e_b, e_t = generate_efforts(user, probe, 0.0, rng)
    state = SimState(angle=angle0, effort_biceps=e_b, effort_triceps=e_t, t=0.0)

    transitions = []
    for i in range(n_steps):
        action = policy_fn(state)
        stepped = step_sim(
            state, action, (state.effort_biceps, state.effort_triceps), sim_config
        )
        e_b, e_t = generate_efforts(user, stepped, stepped.t, rng)
        nxt = replace(stepped, effort_biceps=e_b, effort_triceps=e_t)
        reward_state = nxt if reward_config.source == "next_state" else state
        r = compute_reward(reward_state, action, reward_config)
        transitions.append(
            Transition(
                episode_id=episode_id,
                step=i,
                p=state.angle,
                e_b=state.effort_biceps,
                e_t=state.effort_triceps,
                th_b=action.th_biceps,
                th_t=action.th_triceps,
                r=r,
                p_next=nxt.angle,
                e_b_next=nxt.effort_biceps,
                e_t_next=nxt.effort_triceps,
                done=(i == n_steps - 1),
            )
        )
        state = nxt
    return transitions


@dataclass(frozen=True)
class ThresholdGrid:
    """Static threshold values to sweep, one axis per muscle."""

    biceps: tuple[float, ...]
    triceps: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.biceps or not self.triceps:
            raise ValueError("grid axes must be non-empty")
        object.__setattr__(self, "biceps", tuple(sorted(float(v) for v in self.biceps)))
        object.__setattr__(self, "triceps", tuple(sorted(float(v) for v in self.triceps)))

    @classmethod
    def from_range(cls, low: float, high: float, step: float) -> "ThresholdGrid":
        if step <= 0 or high < low:
            raise ValueError(f"bad grid range {low}:{high}:{step}")
        count = int(np.floor((high - low) / step + 1e-9)) + 1
        values = tuple(low + i * step for i in range(count))
        return cls(biceps=values, triceps=values)

    def cells(self) -> list[tuple[float, float]]:
        """All (th_biceps, th_triceps) pairs, biceps-major ascending."""
        return [(b, t) for b in self.biceps for t in self.triceps]

    def as_dict(self) -> dict:
        return {"th_biceps": list(self.biceps), "th_triceps": list(self.triceps)}


def _cell_rng(seed: int, cell_index: int, episode: int) -> np.random.Generator:
    return np.random.default_rng([seed, cell_index, episode])


def grid_collect(
    task: str,
    grid: ThresholdGrid,
    episodes_per_cell: int,
    episode_s: float,
    sim_config: SimConfig,
    user_config: VirtualUserConfig,
    reward_config: RewardConfig,
    seed: int,
) -> Dataset:
    """Fixed-threshold rollouts for every grid cell, packed into one dataset."""
    if episodes_per_cell < 1:
        raise ValueError("episodes_per_cell must be >= 1")
    user = replace(user_config, task=task)
    transitions: list[Transition] = []
    episode_counter = 0
    for cell_index, (th_b, th_t) in enumerate(grid.cells()):
        action = ThresholdAction(th_b, th_t)
        for episode in range(episodes_per_cell):
            rng = _cell_rng(seed, cell_index, episode)
            transitions.extend(
                rollout_episode(
                    action, user, sim_config, reward_config, episode_s, rng,
                    episode_id=episode_counter,
                )
            )
            episode_counter += 1
    header = DatasetHeader(
        schema_version=SCHEMA_VERSION,
        task=task,
        sim_config_hash=config_digest(sim_config),
        grid=grid.as_dict(),
        seed=seed,
        dt=sim_config.dt,
        episode_count=episode_counter,
    )
    return Dataset.from_transitions(header, transitions)


@dataclass(frozen=True)
class OracleCell:
    th_biceps: float
    th_triceps: float
    episodes: int
    mean_reward: float


@dataclass(frozen=True)
class OracleResult:
    """Exhaustive static-threshold evaluation; `best` is the argmax cell."""

    cells: tuple[OracleCell, ...]
    best: OracleCell


def static_oracle(
    task: str,
    grid: ThresholdGrid,
    episodes_per_cell: int,
    episode_s: float,
    sim_config: SimConfig,
    user_config: VirtualUserConfig,
    reward_config: RewardConfig,
    seed: int,
) -> OracleResult:
    """Brute-force mean per-step reward of every static threshold pair.

    Ties break toward the lexicographically smaller (th_biceps,
    th_triceps), which is the first cell encountered since cells are
    enumerated in ascending order.
    """
    user = replace(user_config, task=task)
    cells: list[OracleCell] = []
    best: OracleCell | None = None
    for cell_index, (th_b, th_t) in enumerate(grid.cells()):
        action = ThresholdAction(th_b, th_t)
        total = 0.0
        count = 0
        for episode in range(episodes_per_cell):
            rng = _cell_rng(seed, cell_index, episode)
            for tr in rollout_episode(
                action, user, sim_config, reward_config, episode_s, rng
            ):
                total += tr.r
                count += 1
        cell = OracleCell(th_b, th_t, episodes_per_cell, total / count)
        cells.append(cell)
        if best is None or cell.mean_reward > best.mean_reward:
            best = cell
    assert best is not None
    return OracleResult(cells=tuple(cells), best=best)

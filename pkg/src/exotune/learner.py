"""Offline trainer for the two threshold agents with additive Q mixing.

Each agent is a Q-functional: a dense network maps the normalized state
to coefficients of a polynomial over that agent's normalized threshold
action, so per-agent values of many candidate actions reduce to one
matrix product. Training minimizes the summed squared TD error of the
mixed (summed) agent values against a bootstrapped target computed with
slowly blended target networks; gradients flow only through the
prediction-side coefficients.

Because the mixer is additive and each agent owns a disjoint action
dimension, the max of the mixed value over joint actions decomposes
exactly into the sum of per-agent maxima; that is how the target's max
over sampled actions is computed. A non-additive mixer would need joint
action sampling instead (the Mixer kind field leaves room for one).

The training loop is single-threaded and deterministic: one RNG seeds
network init, batch draws, and target-side action sampling in a fixed
order, so (seed, dataset, config) pins the whole loss trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import (
    ActionBounds,
    BasisSpec,
    action_features,
    argmax_sampled,
    features_matrix,
)
from .datastore import Batch, Dataset, normalize_columns, sample_batch
from .network import (
    AdamState,
    Gradients,
    NetworkParams,
    adam_step,
    backward,
    forward,
    init_adam,
    init_network,
    soft_update,
)
from .simulator import SimConfig, ThresholdAction

AGENT_IDS = ("biceps", "triceps")
STATE_DIM = 3

REWARD_MODES = ("shared", "split_half")
MIXER_KINDS = ("additive",)  # monotonic mixers are a hook, not implemented


class TrainingDiverged(RuntimeError):
    """Raised when the TD loss stops being finite."""


@dataclass(frozen=True)
class Mixer:
    kind: str = "additive"
    n_agents: int = 2

    def __post_init__(self) -> None:
        if self.kind not in MIXER_KINDS:
            raise ValueError(f"mixer kind must be one of {MIXER_KINDS}, got {self.kind!r}")
        if self.n_agents < 1:
            raise ValueError("mixer needs at least one agent")


def mix(q_values, mixer: Mixer) -> float:
    """Combine per-agent Q-values; the additive mixer sums them."""
    q = np.asarray(q_values, dtype=np.float64)
    if q.shape != (mixer.n_agents,):
        raise ValueError(f"expected {mixer.n_agents} agent values, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("non-finite agent Q-values")
    return float(q.sum())


@dataclass(frozen=True)
class TrainConfig:
    """Everything the trainer needs that the problem leaves open.

    gamma defaults low: thresholds gate the very next tick's motion, so
    the action-dependence of the return is almost entirely immediate,
    and a long bootstrap horizon only inflates the value scale that the
    functionals must fit.
    """

    gamma: float = 0.6
    tau: float = 0.005
    batch_size: int = 64
    steps: int = 20000
    learning_rate: float = 1e-3
    sample_count: int = 256
    seed: int = 0
    reward_mode: str = "shared"
    hidden_sizes: tuple[int, ...] = (64, 64)
    basis_order: int = 3
    threshold_low: float = 20.0
    threshold_high: float = 50.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.reward_mode not in REWARD_MODES:
            raise ValueError(f"reward_mode must be one of {REWARD_MODES}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not self.threshold_low < self.threshold_high:
            raise ValueError("threshold_low must be below threshold_high")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))


@dataclass
class AgentSpec:
    """One agent: its basis, raw action bounds, and the two network roles."""

    id: str
    basis: BasisSpec
    bounds: ActionBounds
    sample_count: int
    prediction: NetworkParams
    target: NetworkParams
    adam: AdamState


def build_agents(config: TrainConfig, rng: np.random.Generator) -> list[AgentSpec]:
    """Fresh biceps/triceps agents; targets start as copies of predictions."""
    agents = []
    for agent_id in AGENT_IDS:
        basis = BasisSpec(order=config.basis_order, action_dim=1)
        sizes = [STATE_DIM, *config.hidden_sizes, basis.k]
        activations = ["tanh"] * len(config.hidden_sizes) + ["identity"]
        prediction = init_network(sizes, activations, rng)
        agents.append(
            AgentSpec(
                id=agent_id,
                basis=basis,
                bounds=ActionBounds(config.threshold_low, config.threshold_high),
                sample_count=config.sample_count,
                prediction=prediction,
                target=prediction.copy(role="target"),
                adam=init_adam(prediction, learning_rate=config.learning_rate),
            )
        )
    return agents


def agent_q(agent: AgentSpec, state, action, use_target: bool = False) -> float:
    """Q of one raw threshold at one normalized state."""
    a = np.atleast_1d(np.asarray(action, dtype=np.float64))
    lo, hi = agent.bounds.low, agent.bounds.high
    if np.any(a < lo) or np.any(a > hi):
        raise ValueError(f"action {action} outside bounds [{lo}, {hi}]")
    net = agent.target if use_target else agent.prediction
    coeffs, _ = forward(net, state)
    phi = action_features(agent.bounds.normalize(a), agent.basis)
    return float(coeffs @ phi)


def reward_shares(rewards, mode: str, n_agents: int) -> np.ndarray:
    """Per-agent reward rows (n_agents, B) from the team reward.

    `shared` hands every agent the full team reward (their sum is
    n_agents * r); `split_half` divides it evenly (sum is r).
    """
    r = np.atleast_1d(np.asarray(rewards, dtype=np.float64))
    if mode == "shared":
        return np.tile(r, (n_agents, 1))
    if mode == "split_half":
        return np.tile(r / n_agents, (n_agents, 1))
    raise ValueError(f"unknown reward mode: {mode!r}")


def td_target(
    rewards,
    next_state,
    agents: list[AgentSpec],
    mixer: Mixer,
    gamma: float,
    sample_count: int,
    rng: np.random.Generator,
    done: bool,
) -> float:
    """Bootstrapped target for one transition.

    rewards holds one entry per agent. For non-terminal transitions the
    bootstrap term is gamma times the sum of per-agent sampled maxima
    under the target networks (exact joint max under the additive mixer).
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.shape != (len(agents),):
        raise ValueError(f"expected one reward per agent, got shape {r.shape}")
    total = float(r.sum())
    if done:
        return total
    maxima = []
    for agent in agents:
        coeffs, _ = forward(agent.target, next_state)
        _, q_best = argmax_sampled(coeffs, agent.basis, agent.bounds, sample_count, rng)
        maxima.append(q_best)
    return total + gamma * mix(maxima, mixer)


def _batch_bootstrap(
    batch: Batch,
    agents: list[AgentSpec],
    config: TrainConfig,
    sim_config: SimConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-row sum of per-agent target maxima at the next states, shape (B,).

    One shared set of sample_count candidate actions is drawn per agent
    per call; each batch row takes its max over that set via a single
    matrix product.
    """
    s_next = normalize_columns(batch.p_next, batch.e_b_next, batch.e_t_next, sim_config)
    boot = np.zeros(len(batch))
    for agent in agents:
        coeffs, _ = forward(agent.target, s_next)  # (B, k)
        raw = agent.bounds.sample(config.sample_count, rng)
        phi = features_matrix(agent.bounds.normalize(raw), agent.basis)  # (M, k)
        boot += (coeffs @ phi.T).max(axis=1)
    return boot


def td_loss(
    batch: Batch,
    agents: list[AgentSpec],
    mixer: Mixer,
    config: TrainConfig,
    sim_config: SimConfig,
    rng: np.random.Generator,
) -> tuple[float, list[Gradients]]:
    """Summed squared TD error over the batch plus per-agent prediction gradients.

    The target side never contributes gradients: it is evaluated with the
    target networks and treated as a constant.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    if len(agents) != mixer.n_agents:
        raise ValueError("agent count does not match the mixer")
    shares = reward_shares(batch.r, config.reward_mode, len(agents))
    y = shares.sum(axis=0)
    boot = _batch_bootstrap(batch, agents, config, sim_config, rng)
    y = y + config.gamma * boot * ~batch.done

    s = normalize_columns(batch.p, batch.e_b, batch.e_t, sim_config)
    actions = {"biceps": batch.th_b, "triceps": batch.th_t}
    q_total = np.zeros(len(batch))
    taped = []
    for agent in agents:
        coeffs, tape = forward(agent.prediction, s)  # (B, k)
        phi = features_matrix(
            agent.bounds.normalize(actions[agent.id][:, None]), agent.basis
        )  # (B, k)
        q_total += np.einsum("ij,ij->i", coeffs, phi)
        taped.append((tape, phi))

    err = q_total - y
    loss = float(err @ err)
    grad_out = 2.0 * err
    grads = [
        backward(agent.prediction, tape, grad_out[:, None] * phi)
        for agent, (tape, phi) in zip(agents, taped)
    ]
    return loss, grads


def train_step(
    agents: list[AgentSpec],
    mixer: Mixer,
    dataset: Dataset,
    config: TrainConfig,
    sim_config: SimConfig,
    rng: np.random.Generator,
) -> float:
    """One offline update: sample, fit, then blend every target net.

    Returns the pre-update loss.
    """
    batch = sample_batch(dataset, config.batch_size, rng)
    loss, grads = td_loss(batch, agents, mixer, config, sim_config, rng)
    for agent, grad in zip(agents, grads):
        adam_step(agent.prediction, grad, agent.adam)
    for agent in agents:
        soft_update(agent.prediction, agent.target, config.tau)
    return loss


def run_training(
    dataset: Dataset,
    config: TrainConfig,
    sim_config: SimConfig,
) -> tuple[list[AgentSpec], Mixer, list[float]]:
    """Build agents from the seed and run the full loop; returns the loss history."""
    rng = np.random.default_rng(config.seed)
    agents = build_agents(config, rng)
    mixer = Mixer(n_agents=len(agents))
    losses = []
    for step in range(config.steps):
        loss = train_step(agents, mixer, dataset, config, sim_config, rng)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite TD loss at step {step}")
        losses.append(loss)
    return agents, mixer, losses


def smoothed_endpoints(losses, window: int = 100) -> tuple[float, float]:
    """Mean of the first and last `window` losses (whole history if shorter)."""
    if not losses:
        raise ValueError("empty loss history")
    w = min(window, len(losses))
    head = float(np.mean(losses[:w]))
    tail = float(np.mean(losses[-w:]))
    return head, tail


def select_actions(
    agents: list[AgentSpec],
    state,
    sample_count: int,
    rng: np.random.Generator,
) -> ThresholdAction:
    """Greedy thresholds at one normalized state via per-agent sampled argmax
    under the prediction networks; returns raw threshold values."""
    chosen = {}
    for agent in agents:
        coeffs, _ = forward(agent.prediction, state)
        best_action, _ = argmax_sampled(
            coeffs, agent.basis, agent.bounds, sample_count, rng
        )
        chosen[agent.id] = float(best_action[0])
    return ThresholdAction(th_biceps=chosen["biceps"], th_triceps=chosen["triceps"])

"""Checkpoint persistence: the full training state as self-describing JSON.

JSON floats round-trip bit-exactly through Python's json module, so a
saved-then-loaded checkpoint reproduces greedy action selection down to
the last bit. Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass

import numpy as np

from .basis import ActionBounds, BasisSpec
from .learner import AgentSpec, Mixer, TrainConfig
from .network import AdamState, NetworkParams

CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Raised for unreadable or structurally invalid checkpoint files."""


@dataclass
class Checkpoint:
    agents: list[AgentSpec]
    mixer: Mixer
    train_config: TrainConfig
    run_config: dict
    step: int
    loss_summary: dict


def _net_to_dict(net: NetworkParams) -> dict:
    return {
        "layer_sizes": net.layer_sizes,
        "activations": list(net.activations),
        "role": net.role,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def _net_from_dict(raw: dict) -> NetworkParams:
    return NetworkParams(
        weights=[np.array(w, dtype=np.float64) for w in raw["weights"]],
        biases=[np.array(b, dtype=np.float64) for b in raw["biases"]],
        activations=list(raw["activations"]),
        role=raw["role"],
    )


def _adam_to_dict(state: AdamState) -> dict:
    return {
        "t": state.t,
        "learning_rate": state.learning_rate,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
        "m_weights": [m.tolist() for m in state.m_weights],
        "m_biases": [m.tolist() for m in state.m_biases],
        "v_weights": [v.tolist() for v in state.v_weights],
        "v_biases": [v.tolist() for v in state.v_biases],
    }


def _adam_from_dict(raw: dict) -> AdamState:
    return AdamState(
        m_weights=[np.array(m, dtype=np.float64) for m in raw["m_weights"]],
        m_biases=[np.array(m, dtype=np.float64) for m in raw["m_biases"]],
        v_weights=[np.array(v, dtype=np.float64) for v in raw["v_weights"]],
        v_biases=[np.array(v, dtype=np.float64) for v in raw["v_biases"]],
        t=int(raw["t"]),
        learning_rate=float(raw["learning_rate"]),
        beta1=float(raw["beta1"]),
        beta2=float(raw["beta2"]),
        eps=float(raw["eps"]),
    )


def save_checkpoint(
    path,
    agents: list[AgentSpec],
    mixer: Mixer,
    train_config: TrainConfig,
    run_config: dict,
    step: int,
    loss_summary: dict,
) -> None:
    payload = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "step": step,
        "mixer": {"kind": mixer.kind, "n_agents": mixer.n_agents},
        "train_config": asdict(train_config),
        "run_config": run_config,
        "loss_summary": loss_summary,
        "agents": [
            {
                "id": agent.id,
                "basis": {"order": agent.basis.order, "action_dim": agent.basis.action_dim},
                "bounds": {"low": list(agent.bounds.low), "high": list(agent.bounds.high)},
                "sample_count": agent.sample_count,
                "prediction": _net_to_dict(agent.prediction),
                "target": _net_to_dict(agent.target),
                "adam": _adam_to_dict(agent.adam),
            }
            for agent in agents
        ],
    }
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".checkpoint-", suffix=".tmp")
    try:
        os.fchmod(fd, 0o644)
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict) or "checkpoint_version" not in raw:
        raise CheckpointError(f"{path}: missing checkpoint_version")
    if raw["checkpoint_version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {raw['checkpoint_version']} unsupported "
            f"(reader supports {CHECKPOINT_VERSION})"
        )
    try:
        agents = [
            AgentSpec(
                id=a["id"],
                basis=BasisSpec(
                    order=int(a["basis"]["order"]),
                    action_dim=int(a["basis"]["action_dim"]),
                ),
                bounds=ActionBounds(
                    low=tuple(a["bounds"]["low"]), high=tuple(a["bounds"]["high"])
                ),
                sample_count=int(a["sample_count"]),
                prediction=_net_from_dict(a["prediction"]),
                target=_net_from_dict(a["target"]),
                adam=_adam_from_dict(a["adam"]),
            )
            for a in raw["agents"]
        ]
        mixer = Mixer(kind=raw["mixer"]["kind"], n_agents=raw["mixer"]["n_agents"])
        tc = dict(raw["train_config"])
        tc["hidden_sizes"] = tuple(tc["hidden_sizes"])
        train_config = TrainConfig(**tc)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
    return Checkpoint(
        agents=agents,
        mixer=mixer,
        train_config=train_config,
        run_config=raw.get("run_config", {}),
        step=int(raw["step"]),
        loss_summary=raw.get("loss_summary", {}),
    )

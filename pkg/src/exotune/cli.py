"""Operator pipeline: collect, train, eval, gridscan, and plot commands.

Every command is reproducible: identical (config, seed) produce
byte-identical datasets, loss CSVs, and checkpoints. Primary outputs are
written atomically (temp file + rename), so an interrupted or failing
run never leaves a partial file at the target path.

Exit codes: 0 ok, 2 configuration error, 3 I/O or file-format error,
4 numeric divergence during training.

RNG namespacing: data collection draws one stream per (seed, cell,
episode); evaluation episodes use (seed, 7919, episode) for user noise
and (seed, 104729, episode) for policy action sampling. The policy
stream is re-created for every control step, so each step ranks the
same candidate thresholds within an episode (common random numbers).
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import tempfile
from dataclasses import replace

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_run_config
from .datastore import (
    Dataset,
    DatasetError,
    config_digest,
    merge_datasets,
    normalize_state,
    read_dataset,
    reward_distance,
    write_dataset,
)
from .learner import (
    TrainingDiverged,
    run_training,
    select_actions,
    smoothed_endpoints,
)
from .plots import plot_dataset_traces, plot_loss_curve, plot_oracle_heatmap
from .simulator import (
    SimState,
    ThresholdAction,
    grid_collect,
    joint_speed,
    rollout_episode,
    static_oracle,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4

EVAL_NOISE_STREAM = 7919
EVAL_POLICY_STREAM = 104729

LOSS_CSV_HEADER = ["step", "loss"]
METRICS_CSV_HEADER = ["episode", "mean_reward", "mean_distance", "idle_fraction"]
THRESHOLDS_CSV_HEADER = ["episode", "step", "t", "th_biceps", "th_triceps"]
ORACLE_CSV_HEADER = ["th_biceps", "th_triceps", "episodes", "mean_reward"]


def _write_text_atomic(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".out-", suffix=".tmp")
    try:
        os.fchmod(fd, 0o644)
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _require_single_task(config: RunConfig, command: str) -> str:
    if config.task == "both":
        raise ConfigError(f"{command} needs --task vertical or horizontal")
    return config.task


def loss_csv_path(checkpoint_path) -> str:
    stem, _ = os.path.splitext(os.fspath(checkpoint_path))
    return stem + ".loss.csv"


def thresholds_csv_path(metrics_path) -> str:
    stem, _ = os.path.splitext(os.fspath(metrics_path))
    return stem + ".thresholds.csv"


def cmd_collect(config: RunConfig, out_path) -> int:
    grid = config.grid.to_grid()
    if config.task == "both":
        parts = [
            grid_collect(
                task, grid, config.collect.episodes_per_cell, config.collect.episode_s,
                config.sim, config.user, config.reward, seed,
            )
            for task, seed in (("vertical", config.seed), ("horizontal", config.seed + 1))
        ]
        dataset = merge_datasets(parts, task="both")
    else:
        dataset = grid_collect(
            config.task, grid, config.collect.episodes_per_cell,
            config.collect.episode_s, config.sim, config.user, config.reward,
            config.seed,
        )
    write_dataset(out_path, dataset)
    cells = len(grid.cells())
    print(
        f"collect: task={config.task} cells={cells} "
        f"episodes={dataset.header.episode_count} transitions={len(dataset)} "
        f"-> {out_path}"
    )
    return EXIT_OK


def _warn_digest_mismatch(config: RunConfig, dataset: Dataset, context: str) -> None:
    digest = config_digest(config.sim)
    if digest != dataset.header.sim_config_hash:
        print(
            f"warning: {context}: dataset sim config hash "
            f"{dataset.header.sim_config_hash} != current {digest}; "
            "states will be normalized with the current sim config",
            file=sys.stderr,
        )


def cmd_train(config: RunConfig, data_path, out_path) -> int:
    dataset = read_dataset(data_path)
    _warn_digest_mismatch(config, dataset, "train")
    agents, mixer, losses = run_training(dataset, config.train, config.sim)
    rows = [(i, repr(loss)) for i, loss in enumerate(losses)]
    _write_text_atomic(loss_csv_path(out_path), _csv_text(LOSS_CSV_HEADER, rows))
    if losses:
        initial, final = smoothed_endpoints(losses)
        summary = {"initial_smoothed": initial, "final_smoothed": final, "steps": len(losses)}
    else:
        summary = {"steps": 0}
    save_checkpoint(
        out_path, agents, mixer, config.train, config.as_dict(),
        step=len(losses), loss_summary=summary,
    )
    if losses:
        print(
            f"train: {len(losses)} steps, smoothed loss {summary['initial_smoothed']:.6g} "
            f"-> {summary['final_smoothed']:.6g}; checkpoint {out_path}"
        )
    else:
        print(f"train: 0 steps, wrote freshly initialized checkpoint {out_path}")
    return EXIT_OK


def _episode_metrics(transitions, config: RunConfig) -> tuple[float, float, float]:
    """Mean reward, mean |d| distance, and idle fraction of one episode."""
    rewards = np.array([tr.r for tr in transitions])
    distances = []
    idle = 0
    for tr in transitions:
        action = ThresholdAction(tr.th_b, tr.th_t)
        if config.reward.source == "next_state":
            e_b, e_t = tr.e_b_next, tr.e_t_next
        else:
            e_b, e_t = tr.e_b, tr.e_t
        distances.append(reward_distance(e_b, e_t, tr.th_b, tr.th_t))
        if joint_speed(tr.e_b, tr.e_t, action, config.sim) == 0.0:
            idle += 1
    return (
        float(rewards.mean()),
        float(np.mean(distances)),
        idle / len(transitions),
    )


def cmd_eval(config: RunConfig, checkpoint_path, out_path) -> int:
    task = _require_single_task(config, "eval")
    ckpt = load_checkpoint(checkpoint_path)
    saved_sim = ckpt.run_config.get("sim")
    if saved_sim is not None and config_digest(saved_sim) != config_digest(
        config.as_dict()["sim"]
    ):
        print(
            "warning: eval: checkpoint was trained under a different sim config",
            file=sys.stderr,
        )
    user = replace(config.user, task=task)
    sample_count = ckpt.agents[0].sample_count

    metric_rows = []
    threshold_rows = []
    all_transitions = []
    for episode in range(config.eval.episodes):
        noise_rng = np.random.default_rng([config.seed, EVAL_NOISE_STREAM, episode])
        policy_seed = [config.seed, EVAL_POLICY_STREAM, episode]

        def policy(state: SimState) -> ThresholdAction:
            vec = normalize_state(state, config.sim)
            return select_actions(
                ckpt.agents, vec, sample_count, np.random.default_rng(policy_seed)
            )

        transitions = rollout_episode(
            policy, user, config.sim, config.reward, config.eval.episode_s,
            noise_rng, episode_id=episode,
        )
        all_transitions.extend(transitions)
        mean_r, mean_d, idle = _episode_metrics(transitions, config)
        metric_rows.append((episode, repr(mean_r), repr(mean_d), repr(idle)))
        threshold_rows.extend(
            (episode, tr.step, repr(tr.step * config.sim.dt), repr(tr.th_b), repr(tr.th_t))
            for tr in transitions
        )
    agg_r, agg_d, agg_idle = _episode_metrics(all_transitions, config)
    metric_rows.append(("all", repr(agg_r), repr(agg_d), repr(agg_idle)))
    _write_text_atomic(out_path, _csv_text(METRICS_CSV_HEADER, metric_rows))
    _write_text_atomic(
        thresholds_csv_path(out_path), _csv_text(THRESHOLDS_CSV_HEADER, threshold_rows)
    )
    print(
        f"eval: task={task} episodes={config.eval.episodes} "
        f"mean_reward={agg_r:.6f} mean_distance={agg_d:.4f} idle_fraction={agg_idle:.4f} "
        f"-> {out_path}"
    )
    return EXIT_OK


def cmd_gridscan(config: RunConfig, out_path) -> int:
    task = _require_single_task(config, "gridscan")
    result = static_oracle(
        task, config.grid.to_grid(), config.collect.episodes_per_cell,
        config.collect.episode_s, config.sim, config.user, config.reward, config.seed,
    )
    rows = [
        (repr(c.th_biceps), repr(c.th_triceps), c.episodes, repr(c.mean_reward))
        for c in result.cells
    ]
    _write_text_atomic(out_path, _csv_text(ORACLE_CSV_HEADER, rows))
    best = result.best
    print(
        f"gridscan: task={task} cells={len(result.cells)} best cell "
        f"th_biceps={best.th_biceps:g} th_triceps={best.th_triceps:g} "
        f"mean_reward={best.mean_reward:.6f} -> {out_path}"
    )
    return EXIT_OK


def _read_csv_rows(path, expected_header) -> list[list[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected_header:
            raise DatasetError(f"{path}: expected header {expected_header}, got {header}")
        return [row for row in reader]


def cmd_plot(input_path, out_path) -> int:
    with open(input_path) as fh:
        first = fh.readline().strip()
    try:
        if first.startswith("{"):
            dataset = read_dataset(input_path)
            plot_dataset_traces(dataset, out_path)
            kind = "dataset traces"
        elif first == ",".join(LOSS_CSV_HEADER):
            rows = _read_csv_rows(input_path, LOSS_CSV_HEADER)
            steps = [int(r[0]) for r in rows]
            losses = [float(r[1]) for r in rows]
            plot_loss_curve(steps, losses, out_path)
            kind = "loss curve"
        elif first == ",".join(ORACLE_CSV_HEADER):
            rows = _read_csv_rows(input_path, ORACLE_CSV_HEADER)
            plot_oracle_heatmap([(r[0], r[1], r[3]) for r in rows], out_path)
            kind = "oracle heatmap"
        else:
            raise ConfigError(
                f"{input_path}: not a dataset, loss CSV, or gridscan CSV (saw {first!r})"
            )
    except (DatasetError, ValueError) as exc:
        # malformed plot input is a usage problem, not an I/O failure
        raise ConfigError(f"{input_path}: {exc}") from exc
    print(f"plot: {kind} -> {out_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exotune",
        description=(
            "Offline tuning pipeline for the simulated proportional-mode elbow "
            "exoskeleton: collect threshold-grid datasets, train the two-agent "
            "policy, and compare it against the static-threshold oracle."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp, out_help):
        sp.add_argument("--config", metavar="PATH", help="JSON run config file")
        sp.add_argument("--seed", type=int, metavar="N", help="master seed override")
        sp.add_argument("--out", required=True, metavar="PATH", help=out_help)

    sp = sub.add_parser("collect", help="generate a fixed-threshold grid dataset")
    add_common(sp, "dataset file to write")
    sp.add_argument("--task", choices=("vertical", "horizontal", "both"))
    sp.add_argument("--grid", metavar="LOW:HIGH:STEP", help="threshold grid spec")
    sp.add_argument("--episodes", type=int, metavar="N", help="episodes per grid cell")
    sp.add_argument("--speed-law", choices=("paper-literal", "offset"))

    sp = sub.add_parser("train", help="train agents offline from a dataset")
    add_common(sp, "checkpoint file to write (loss CSV lands next to it)")
    sp.add_argument("--data", required=True, metavar="PATH", help="dataset file")
    sp.add_argument("--steps", type=int, metavar="N", help="training steps")

    sp = sub.add_parser("eval", help="roll out a trained dynamic-threshold policy")
    add_common(sp, "metrics CSV to write (thresholds CSV lands next to it)")
    sp.add_argument("--checkpoint", required=True, metavar="PATH")
    sp.add_argument("--task", choices=("vertical", "horizontal"))
    sp.add_argument("--episodes", type=int, metavar="N", help="evaluation episodes")
    sp.add_argument("--speed-law", choices=("paper-literal", "offset"))

    sp = sub.add_parser("gridscan", help="exhaustive static-threshold oracle")
    add_common(sp, "oracle table CSV to write")
    sp.add_argument("--task", choices=("vertical", "horizontal"))
    sp.add_argument("--grid", metavar="LOW:HIGH:STEP", help="threshold grid spec")
    sp.add_argument("--episodes", type=int, metavar="N", help="episodes per grid cell")
    sp.add_argument("--speed-law", choices=("paper-literal", "offset"))

    sp = sub.add_parser("plot", help="render a dataset, loss CSV, or gridscan CSV to SVG")
    add_common(sp, "SVG file to write")
    sp.add_argument("--input", required=True, metavar="PATH")

    return parser


def _overrides_from_args(args) -> dict:
    overrides: dict = {
        "seed": getattr(args, "seed", None),
        "task": getattr(args, "task", None),
        "grid": getattr(args, "grid", None),
    }
    speed_law = getattr(args, "speed_law", None)
    if speed_law is not None:
        overrides["sim.speed_law"] = speed_law.replace("-", "_")
    if getattr(args, "steps", None) is not None:
        overrides["train.steps"] = args.steps
    episodes = getattr(args, "episodes", None)
    if episodes is not None:
        if args.command == "eval":
            overrides["eval.episodes"] = episodes
        else:
            overrides["collect.episodes_per_cell"] = episodes
    return overrides


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "plot":
            return cmd_plot(args.input, args.out)
        config = load_run_config(args.config, _overrides_from_args(args))
        if args.command == "collect":
            return cmd_collect(config, args.out)
        if args.command == "train":
            return cmd_train(config, args.data, args.out)
        if args.command == "eval":
            return cmd_eval(config, args.checkpoint, args.out)
        if args.command == "gridscan":
            return cmd_gridscan(config, args.out)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

import math

import numpy as np
import pytest

from exotune.datastore import (
    Dataset,
    DatasetError,
    DatasetHeader,
    RewardConfig,
    SCHEMA_VERSION,
    Transition,
    compute_reward,
    config_digest,
    denormalize_state,
    merge_datasets,
    normalize_columns,
    normalize_state,
    read_dataset,
    relabel_rewards,
    reward_distance,
    reward_distance_arrays,
    sample_batch,
    write_dataset,
)
from exotune.simulator import SimConfig, SimState, ThresholdAction


def make_header(**overrides) -> DatasetHeader:
    fields = dict(
        schema_version=SCHEMA_VERSION,
        task="vertical",
        sim_config_hash="abc123",
        grid={"th_biceps": [20.0], "th_triceps": [20.0]},
        seed=0,
        dt=0.02,
        episode_count=1,
    )
    fields.update(overrides)
    return DatasetHeader(**fields)


def make_transition(**overrides) -> Transition:
    fields = dict(
        episode_id=0, step=0, p=10.0, e_b=40.0, e_t=10.0, th_b=30.0, th_t=25.0,
        r=math.exp(-1.0), p_next=10.9, e_b_next=41.0, e_t_next=11.0, done=True,
    )
    fields.update(overrides)
    return Transition(**fields)


def tiny_dataset(n_episodes=2, steps=3) -> Dataset:
    rng = np.random.default_rng(123)
    transitions = []
    for ep in range(n_episodes):
        for s in range(steps):
            transitions.append(
                make_transition(
                    episode_id=ep,
                    step=s,
                    p=float(rng.uniform(0, 130)),
                    e_b=float(rng.uniform(0, 100)),
                    e_t=float(rng.uniform(0, 100)),
                    r=float(rng.uniform(1e-6, 1.0)),
                    done=(s == steps - 1),
                )
            )
    return Dataset.from_transitions(make_header(episode_count=n_episodes), transitions)


class TestReward:
    def test_distance_zero_gives_one(self):
        s = SimState(angle=0.0, effort_biceps=50.0, effort_triceps=20.0)
        a = ThresholdAction(th_biceps=30.0, th_triceps=40.0)  # delta 30 == th_b
        assert compute_reward(s, a, RewardConfig()) == 1.0

    def test_distance_c_gives_inverse_e(self):
        s = SimState(angle=0.0, effort_biceps=60.0, effort_triceps=20.0)
        a = ThresholdAction(th_biceps=30.0, th_triceps=40.0)  # d = |40 - 30| = 10 = c
        r = compute_reward(s, a, RewardConfig(c=10.0))
        assert r == pytest.approx(math.exp(-1.0), abs=1e-12)

    def test_triceps_dominant_uses_triceps_threshold(self):
        s = SimState(angle=0.0, effort_biceps=10.0, effort_triceps=55.0)
        a = ThresholdAction(th_biceps=20.0, th_triceps=40.0)  # d = |45 - 40| = 5
        assert compute_reward(s, a, RewardConfig(c=10.0)) == pytest.approx(
            math.exp(-0.5), abs=1e-12
        )

    def test_tie_uses_nearer_threshold(self):
        assert reward_distance(30.0, 30.0, 45.0, 25.0) == 25.0
        assert reward_distance(30.0, 30.0, 20.0, 50.0) == 20.0

    def test_bounds_and_monotonicity(self):
        cfg = RewardConfig(c=10.0)
        rng = np.random.default_rng(1)
        last = None
        for d in np.linspace(0.0, 100.0, 200):
            r = math.exp(-d / cfg.c)
            assert 0.0 < r <= 1.0
            if last is not None:
                assert r < last
            last = r
        # random states stay in (0, 1]
        for _ in range(1000):
            s = SimState(
                angle=0.0,
                effort_biceps=float(rng.uniform(0, 100)),
                effort_triceps=float(rng.uniform(0, 100)),
            )
            a = ThresholdAction(
                th_biceps=float(rng.uniform(20, 50)),
                th_triceps=float(rng.uniform(20, 50)),
            )
            assert 0.0 < compute_reward(s, a, cfg) <= 1.0

    def test_vectorized_matches_scalar_loop(self):
        rng = np.random.default_rng(2)
        e_b = rng.uniform(0, 100, size=500)
        e_t = rng.uniform(0, 100, size=500)
        th_b = rng.uniform(20, 50, size=500)
        th_t = rng.uniform(20, 50, size=500)
        # force some exact ties into the sample
        e_t[:25] = e_b[:25]
        vec = reward_distance_arrays(e_b, e_t, th_b, th_t)
        for i in range(500):
            assert vec[i] == reward_distance(e_b[i], e_t[i], th_b[i], th_t[i])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RewardConfig(c=0.0)
        with pytest.raises(ValueError):
            RewardConfig(source="previous_state")


class TestNormalizeState:
    def test_corners(self):
        sim = SimConfig()
        lo = normalize_state(SimState(angle=0.0, effort_biceps=0.0, effort_triceps=0.0), sim)
        hi = normalize_state(
            SimState(angle=130.0, effort_biceps=100.0, effort_triceps=100.0), sim
        )
        assert lo.tolist() == [0.0, 0.0, 0.0]
        assert hi.tolist() == [1.0, 1.0, 1.0]

    def test_worked_example(self):
        sim = SimConfig(angle_min=0.0, angle_max=130.0)
        vec = normalize_state(SimState(angle=65.0, effort_biceps=50.0, effort_triceps=25.0), sim)
        assert vec.tolist() == [0.5, 0.5, 0.25]

    def test_rejects_out_of_range(self):
        sim = SimConfig()
        with pytest.raises(ValueError):
            normalize_state(SimState(angle=-1.0, effort_biceps=0.0, effort_triceps=0.0), sim)
        with pytest.raises(ValueError):
            normalize_state(SimState(angle=0.0, effort_biceps=101.0, effort_triceps=0.0), sim)

    def test_affine_and_invertible(self):
        sim = SimConfig()
        rng = np.random.default_rng(3)
        p = rng.uniform(0, 130, size=50)
        e_b = rng.uniform(0, 100, size=50)
        e_t = rng.uniform(0, 100, size=50)
        vec = normalize_columns(p, e_b, e_t, sim)
        back = denormalize_state(vec, sim)
        assert back[:, 0] == pytest.approx(p, abs=1e-12)
        assert back[:, 1] == pytest.approx(e_b, abs=1e-12)
        assert back[:, 2] == pytest.approx(e_t, abs=1e-12)
        # affinity: midpoint maps to midpoint
        mid = normalize_columns(65.0, 50.0, 50.0, sim)
        assert mid == pytest.approx([0.5, 0.5, 0.5])


class TestFileRoundTrip:
    def test_bit_exact_roundtrip(self, tmp_path):
        # awkward floats: sums with representation error, tiny magnitudes
        t = make_transition(
            p=0.1 + 0.2, e_b=1.0 / 3.0, e_t=2.0 / 7.0, r=math.exp(-1.23456789),
            p_next=1e-17 + 1.0, e_b_next=99.99999999999999, e_t_next=5e-12,
        )
        ds = Dataset.from_transitions(make_header(), [t])
        path = tmp_path / "data.txt"
        write_dataset(path, ds)
        back = read_dataset(path)
        for name in ("p", "e_b", "e_t", "th_b", "th_t", "r", "p_next", "e_b_next", "e_t_next"):
            assert getattr(back, name).tobytes() == getattr(ds, name).tobytes()
        assert back.header == ds.header

    def test_write_then_read_equals_structure(self, tmp_path):
        ds = tiny_dataset()
        path = tmp_path / "data.txt"
        write_dataset(path, ds)
        back = read_dataset(path)
        assert len(back) == len(ds)
        assert list(back.iter_transitions()) == list(ds.iter_transitions())

    def test_rejects_reward_out_of_bounds(self, tmp_path):
        ds = tiny_dataset()
        ds.r[3] = 1.5
        path = tmp_path / "bad.txt"
        write_dataset(path, ds)
        with pytest.raises(DatasetError, match="record 3"):
            read_dataset(path)

    def test_rejects_schema_mismatch(self, tmp_path):
        ds = tiny_dataset()
        ds.header.schema_version = 999
        path = tmp_path / "bad.txt"
        write_dataset(path, ds)
        with pytest.raises(DatasetError, match="version"):
            read_dataset(path)

    def test_rejects_corrupt_record(self, tmp_path):
        ds = tiny_dataset()
        path = tmp_path / "bad.txt"
        write_dataset(path, ds)
        lines = path.read_text().splitlines()
        lines[2] = lines[2].rsplit(" ", 1)[0]  # drop the done field of record 1
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetError, match="record 1"):
            read_dataset(path)

    def test_rejects_non_numeric_field(self, tmp_path):
        ds = tiny_dataset()
        path = tmp_path / "bad.txt"
        write_dataset(path, ds)
        lines = path.read_text().splitlines()
        parts = lines[1].split()
        parts[2] = "not-a-number"
        lines[1] = " ".join(parts)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetError, match="record 0"):
            read_dataset(path)

    def test_rejects_non_monotone_steps(self, tmp_path):
        ds = tiny_dataset()
        ds.step[1] = 0  # duplicate step inside episode 0
        path = tmp_path / "bad.txt"
        write_dataset(path, ds)
        with pytest.raises(DatasetError, match="strictly increasing"):
            read_dataset(path)

    def test_rejects_done_misplacement(self, tmp_path):
        ds = tiny_dataset()
        ds.done[0] = True  # done in the middle of episode 0
        path = tmp_path / "bad.txt"
        write_dataset(path, ds)
        with pytest.raises(DatasetError, match="done before episode end"):
            read_dataset(path)

    def test_rejects_threshold_out_of_device_range(self, tmp_path):
        ds = tiny_dataset()
        ds.th_b[2] = 60.0
        path = tmp_path / "bad.txt"
        write_dataset(path, ds)
        with pytest.raises(DatasetError, match="record 2"):
            read_dataset(path)


class TestSampleBatch:
    def test_single_transition_dataset(self):
        ds = tiny_dataset(n_episodes=1, steps=1)
        batch = sample_batch(ds, 1, np.random.default_rng(4))
        assert len(batch) == 1
        assert batch.p[0] == ds.p[0]

    def test_same_seed_identical(self):
        ds = tiny_dataset(4, 50)
        a = sample_batch(ds, 32, np.random.default_rng(5))
        b = sample_batch(ds, 32, np.random.default_rng(5))
        assert a.p.tobytes() == b.p.tobytes()
        assert a.done.tobytes() == b.done.tobytes()

    def test_uniform_marginals(self):
        # 100k draws over 10 transitions: each frequency within 3 sigma of 0.1
        ds = tiny_dataset(n_episodes=1, steps=10)
        rng = np.random.default_rng(6)
        draws = 100_000
        batch = sample_batch(ds, draws, rng)
        sigma = math.sqrt(0.1 * 0.9 / draws)
        for i in range(10):
            freq = np.count_nonzero(batch.p == ds.p[i]) / draws
            assert abs(freq - 0.1) <= 3 * sigma

    def test_rejects_empty_and_bad_size(self):
        ds = tiny_dataset(1, 1)
        with pytest.raises(ValueError):
            sample_batch(ds, 0, np.random.default_rng(0))
        empty = Dataset(
            make_header(episode_count=0), {name: np.array([]) for name in (
                "episode_id", "step", "p", "e_b", "e_t", "th_b", "th_t", "r",
                "p_next", "e_b_next", "e_t_next", "done",
            )},
        )
        with pytest.raises(DatasetError):
            sample_batch(empty, 1, np.random.default_rng(0))


class TestRelabel:
    def test_idempotent(self):
        ds = tiny_dataset(3, 20)
        once = relabel_rewards(ds, RewardConfig(c=10.0))
        twice = relabel_rewards(once, RewardConfig(c=10.0))
        assert once.r.tobytes() == twice.r.tobytes()

    def test_larger_c_raises_rewards(self):
        ds = relabel_rewards(tiny_dataset(3, 20), RewardConfig(c=10.0))
        wide = relabel_rewards(ds, RewardConfig(c=20.0))
        d = reward_distance_arrays(ds.e_b, ds.e_t, ds.th_b, ds.th_t)
        assert np.all(wide.r[d > 0] > ds.r[d > 0])

    def test_matches_per_record_loop(self):
        ds = tiny_dataset(3, 20)
        cfg = RewardConfig(c=7.5)
        relabeled = relabel_rewards(ds, cfg)
        for i, tr in enumerate(ds.iter_transitions()):
            s = SimState(angle=tr.p, effort_biceps=tr.e_b, effort_triceps=tr.e_t)
            a = ThresholdAction(tr.th_b, tr.th_t)
            assert relabeled.r[i] == compute_reward(s, a, cfg)

    def test_next_state_source(self):
        ds = tiny_dataset(2, 10)
        cfg = RewardConfig(c=10.0, source="next_state")
        relabeled = relabel_rewards(ds, cfg)
        d = reward_distance_arrays(ds.e_b_next, ds.e_t_next, ds.th_b, ds.th_t)
        assert relabeled.r == pytest.approx(np.exp(-d / 10.0))


class TestMerge:
    def test_renumbers_episodes(self):
        a = tiny_dataset(2, 3)
        b = tiny_dataset(2, 3)
        merged = merge_datasets([a, b], task="both")
        assert merged.header.episode_count == 4
        assert sorted(set(merged.episode_id.tolist())) == [0, 1, 2, 3]
        merged.validate()

    def test_rejects_mismatched_sim_config(self):
        a = tiny_dataset(1, 2)
        b = tiny_dataset(1, 2)
        b.header.sim_config_hash = "different"
        with pytest.raises(DatasetError):
            merge_datasets([a, b], task="both")


def test_config_digest_is_stable_and_sensitive():
    sim = SimConfig()
    assert config_digest(sim) == config_digest(SimConfig())
    assert config_digest(sim) != config_digest(SimConfig(k_p=2.0))
    assert len(config_digest(sim)) == 16

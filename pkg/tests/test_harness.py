import csv
import json
import math

import numpy as np
import pytest

from drleg.envs import make_env
from drleg.harness import (
    Comparison, ConfigError, EvalRow, RunRecord, TrainConfig, TrainingAborted, bc_pretrain,
    collect_expert_demos, compare, eval_seed, evaluate_agent, export, read_json, train,
)
from drleg.numerics import make_rng
from drleg.sac import GaussianPolicy, SacAgent


def small(**kw):
    base = dict(name="sac", env="Pendulum", total_steps=400, seed=0, update_every=50, updates_per_round=5,
                update_after=100, warmup_steps=100, eval_every=200, eval_episodes=1, batch_size=32,
                hidden=(16,))
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def pend_demos():
    return collect_expert_demos("Pendulum", 300, 0)


@pytest.fixture(scope="module")
def mc_demos():
    return collect_expert_demos("MountainCarContinuous", 1000, 0)


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"nmae": "x"})


@pytest.mark.parametrize("bad", [{"total_steps": -1}, {"eval_every": 0}, {"guider": "oracle"},
                                 {"discriminator": "knn"}])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad)


def test_config_hash_stable_and_sensitive():
    assert small().hash == small().hash
    assert small().hash != small(seed=1).hash
    assert TrainConfig.from_dict(small().to_dict()).hash == small().hash


def test_zero_steps_gives_only_initial_row():
    rec, _ = train(small(total_steps=0))
    assert len(rec.rows) == 1 and rec.rows[0].step == 0
    assert math.isnan(rec.rows[0].loss_q)


def test_eval_schedule_includes_final_step():
    rec, _ = train(small(total_steps=450))
    assert list(rec.steps) == [0, 200, 400, 450]


def test_training_is_deterministic():
    a, _ = train(small())
    b, _ = train(small())
    assert a.rows_equal(b)
    c, _ = train(small(seed=1))
    assert not a.rows_equal(c)


def test_guidance_off_matches_plain_sac(pend_demos):
    plain, _ = train(small())
    off, _ = train(small(name="drleg", guidance=False), pend_demos)
    assert plain.rows_equal(off)
    assert all(r.guided_fraction == 0.0 for r in off.rows)


def test_guidance_on_uses_guider(pend_demos):
    rec, _ = train(small(name="drleg", guidance=True), pend_demos)
    assert rec.rows[1].guided_fraction > 0


def test_no_guidance_when_policy_ahead(pend_demos):
    ahead = type(pend_demos)(pend_demos.env_name, pend_demos.states, pend_demos.actions,
                             pend_demos.episode_lengths, [-1e9])
    rec, _ = train(small(name="drleg", guidance=True), ahead)
    assert all(r.guided_fraction == 0.0 for r in rec.rows)


def test_missing_demo_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        train(small(guidance=True, demo_path=str(tmp_path / "missing.bin")))
    with pytest.raises(ConfigError):
        train(small(guidance=True))


def test_eval_seeds_are_recorded_and_recomputable():
    rec, _ = train(small())
    assert [r.eval_seed for r in rec.rows] == [eval_seed(0, i) for i in range(len(rec.rows))]


def test_checkpoint_reproduces_final_return(tmp_path):
    cfg = small()
    rec, _ = train(cfg, out_dir=tmp_path)
    agent = SacAgent.load(tmp_path / "checkpoint", cfg.hash)
    r = evaluate_agent(make_env(cfg.env), agent.policy, cfg.eval_episodes, rec.rows[-1].eval_seed)
    assert r == rec.final_return
    assert RunRecord.from_dict(json.loads((tmp_path / "record.json").read_text())).rows_equal(rec)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_aborts_with_partial_record(tmp_path):
    with pytest.raises(TrainingAborted) as info:
        train(small(lr=1e300), out_dir=tmp_path)
    assert info.value.record.aborted and len(info.value.record.rows) >= 1
    assert (tmp_path / "abort" / "manifest.json").exists()


def test_compare_single_seed_matches_train():
    comp = compare([small()], [3])
    rec, _ = train(small(seed=3))
    assert comp.runs[("sac", 3)].rows_equal(rec)
    steps, mean, lo, hi = comp.curve("sac")
    np.testing.assert_array_equal(mean, rec.returns)
    np.testing.assert_array_equal(lo, hi)


def test_compare_curve_is_seed_mean():
    comp = compare([small(total_steps=200)], [0, 1])
    _, mean, lo, hi = comp.curve("sac")
    r0, r1 = comp.runs[("sac", 0)].returns, comp.runs[("sac", 1)].returns
    np.testing.assert_allclose(mean, (r0 + r1) / 2)
    assert np.all(lo <= mean) and np.all(mean <= hi)


def test_compare_duplicate_config_gets_own_column():
    comp = compare([small(total_steps=0), small(total_steps=0)], [0])
    assert comp.methods == ["sac", "sac#2"]
    assert comp.runs[("sac", 0)].rows_equal(comp.runs[("sac#2", 0)])


def test_compare_requires_configs_and_seeds():
    with pytest.raises(ConfigError):
        compare([], [0])
    with pytest.raises(ConfigError):
        compare([small()], [])


def fake_record(name, returns):
    rows = [EvalRow(i * 10, r, 0.0, 0.0, 0.0, 0.0, i) for i, r in enumerate(returns)]
    return RunRecord({"name": name}, "h", rows)


def test_export_csv_columns(tmp_path):
    comp = Comparison(["a", "b", "c"], {("a", 0): fake_record("a", [1, 2]), ("b", 0): fake_record("b", [3, 4]),
                                        ("c", 0): fake_record("c", [5, 6])})
    export(comp, tmp_path / "c.csv")
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert len(rows[0]) == 1 + 3 * 3 and len(rows) == 3
    assert rows[0][:4] == ["step", "a_mean", "a_min", "a_max"]


def test_export_single_row(tmp_path):
    export(fake_record("x", [7.5]), tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows == [["step", "x_mean", "x_min", "x_max"], ["0", "7.5", "7.5", "7.5"]]


def test_export_empty_record_fails(tmp_path):
    with pytest.raises(ValueError):
        export(fake_record("x", []), tmp_path / "r.csv")


def test_json_round_trip(tmp_path):
    comp = Comparison(["a"], {("a", 0): fake_record("a", [1.0, math.nan]), ("a", 1): fake_record("a", [2.0, 3.0])},
                      [(("a", 0), "boom")])
    export(comp, tmp_path / "c.json", fmt="json")
    back = read_json(tmp_path / "c.json")
    assert back.methods == ["a"] and back.partial
    for key, rec in comp.runs.items():
        assert back.runs[key].rows_equal(rec)


def test_bc_pretrain_zero_epochs_leaves_init():
    policy = GaussianPolicy(2, 1, [-1.0], [1.0], (16,), make_rng(0))
    before = [p.copy() for p in policy.net.params]
    demos = collect_expert_demos("MountainCarContinuous", 50, 0)
    assert bc_pretrain(policy, demos, 0) == []
    for a, b in zip(before, policy.net.params):
        assert a.tobytes() == b.tobytes()


def test_bc_pretrain_gives_positive_mountaincar_return(mc_demos):
    policy = GaussianPolicy(2, 1, [-1.0], [1.0], (64, 64), make_rng(0))
    history = bc_pretrain(policy, mc_demos, 60, 1e-3, make_rng(1))
    assert history[-1] < history[0]
    r = evaluate_agent(make_env("MountainCarContinuous"), policy, 3, 0)
    assert r > 0

"""Run protocol: determinism, promotion, resume, sweeps, metrics files."""

import math
from dataclasses import replace

import numpy as np
import pytest

from vialscrape.env import CurriculumStage, EnvConfig, ScrapeEnv
from vialscrape.policies import ScriptedScraper
from vialscrape.training import (
    METRICS_COLUMNS,
    TrainConfig,
    aggregate_success,
    config_from_dict,
    config_to_dict,
    derive_seed,
    evaluate,
    load_learner_from_checkpoint,
    read_metrics_csv,
    resume_train,
    run_curriculum,
    sweep_seeds,
    train,
    write_metrics_csv,
)

TINY = TrainConfig(
    algorithm="sac",
    run_seed=0,
    total_episodes=4,
    eval_every_episodes=2,
    eval_episodes=2,
    batch_size=16,
    buffer_capacity=400,
    hidden=(12, 12),
)


# ------------------------------------------------------------------ seeding


def test_derive_seed_is_stable_and_distinct():
    a = derive_seed(7, "eval", 3)
    assert a == derive_seed(7, "eval", 3)
    assert a != derive_seed(7, "eval", 4)
    assert a != derive_seed(8, "eval", 3)
    assert a != derive_seed(7, "workflow", 3)
    assert derive_seed(7, "w", 1, 2) != derive_seed(7, "w", 2, 1)
    assert 0 <= a < 2**64


# ------------------------------------------------------------------- config


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(algorithm="ddpg")
    with pytest.raises(ValueError):
        TrainConfig(profile="lab")
    with pytest.raises(ValueError):
        TrainConfig(stage="Nowhere")
    with pytest.raises(ValueError):
        TrainConfig(curriculum=())
    with pytest.raises(ValueError):
        TrainConfig(batch_size=2048, buffer_capacity=100)
    with pytest.raises(ValueError):
        TrainConfig(promotion_threshold=1.5)


def test_real_profile_changes_only_its_three_knobs():
    cfg = TrainConfig(profile="real", batch_size=2048, buffer_capacity=10000)
    eff = cfg.effective()
    assert eff.batch_size == 64
    assert eff.buffer_capacity == 500
    assert eff.env.delta_max == pytest.approx(0.0005)
    assert eff.hidden == cfg.hidden
    assert eff.env.stiffness_k == cfg.env.stiffness_k
    assert eff.effective() == eff  # idempotent
    sim = TrainConfig(profile="sim")
    assert sim.effective() == sim


def test_agent_config_mapping():
    cfg = TrainConfig(algorithm="tqc", hidden=(32, 32), gamma=0.9, lr=3e-4)
    ac = cfg.agent_config()
    assert ac.algo == "tqc"
    assert ac.hidden == (32, 32)
    assert ac.gamma == 0.9
    assert ac.lr == 3e-4
    assert ac.obs_dim == 6 and ac.goal_dim == 3 and ac.act_dim == 3


def test_config_dict_round_trip():
    cfg = replace(TINY, env=EnvConfig(stiffness_k=5000.0), curriculum=("OutsideStart",))
    assert config_from_dict(config_to_dict(cfg)) == cfg


# --------------------------------------------------------------- evaluation


def test_evaluate_oracle_is_perfect():
    rate, mean_return = evaluate(
        ScriptedScraper(EnvConfig()),
        EnvConfig(),
        CurriculumStage.SCRAPE_ONLY,
        n_episodes=50,
        seed=0,
    )
    assert rate == 1.0
    assert mean_return > -5.0  # short, penalty-free episodes


def test_evaluate_is_deterministic():
    args = (ScriptedScraper(EnvConfig()), EnvConfig(), CurriculumStage.RIM_START, 5, 3)
    assert evaluate(*args) == evaluate(*args)


# ---------------------------------------------------------------- run loop


def test_zero_episodes_yields_single_initial_row():
    cfg = replace(TINY, total_episodes=0)
    result = train(cfg)
    assert len(result.rows) == 1
    row = result.rows[0]
    assert row["episode"] == 0
    assert row["stage"] == "ScrapeOnly"
    assert row["wallclock_s"] == 0.0
    assert result.env_steps == 0
    assert result.updates_done == 0


def test_rows_follow_eval_schedule():
    result = train(TINY)
    assert [r["episode"] for r in result.rows] == [0, 2, 4]
    assert all(r["seed"] == 0 for r in result.rows)
    episodes = [r["episode"] for r in result.rows]
    assert episodes == sorted(episodes)


def test_training_runs_are_byte_identical(tmp_path):
    a_dir = tmp_path / "a"
    b_dir = tmp_path / "b"
    train(TINY, str(a_dir))
    train(TINY, str(b_dir))
    assert (a_dir / "metrics.csv").read_bytes() == (b_dir / "metrics.csv").read_bytes()
    assert (
        a_dir / "checkpoint.bundle"
    ).read_bytes() == (b_dir / "checkpoint.bundle").read_bytes()


def test_different_seeds_differ():
    a = train(TINY)
    b = train(replace(TINY, run_seed=1))
    assert a.rows != b.rows


def test_updates_skipped_until_buffer_reaches_batch():
    # batch as large as the whole buffer: only full-buffer episodes update
    cfg = replace(TINY, total_episodes=2, eval_every_episodes=2, batch_size=400)
    result = train(cfg)
    assert result.updates_done == 0
    assert result.updates_skipped == result.env_steps
    assert result.env_steps > 0

    small = replace(TINY, total_episodes=2, eval_every_episodes=2, batch_size=16)
    r2 = train(small)
    assert r2.updates_done + r2.updates_skipped == r2.env_steps
    assert r2.updates_done > 0  # the first episode already fills 16


def test_wallclock_recorded_only_on_request():
    result = train(replace(TINY, total_episodes=2, eval_every_episodes=2))
    assert all(r["wallclock_s"] == 0.0 for r in result.rows)
    timed = train(
        replace(TINY, total_episodes=2, eval_every_episodes=2, record_wallclock=True)
    )
    assert timed.rows[-1]["wallclock_s"] > 0.0


# --------------------------------------------------------------- curriculum


def test_curriculum_stage_order_enforced():
    with pytest.raises(ValueError, match="ordered"):
        run_curriculum(replace(TINY, curriculum=("OutsideStart", "RimStart")))
    with pytest.raises(ValueError, match="ordered"):
        run_curriculum(replace(TINY, curriculum=("RimStart", "RimStart")))


def test_single_stage_curriculum_equals_plain_training(tmp_path):
    cfg = replace(TINY, stage="OutsideStart", curriculum=("OutsideStart",))
    a = train(cfg, str(tmp_path / "plain"))
    b = run_curriculum(cfg, str(tmp_path / "curr"))
    assert a.rows == b.rows
    assert (tmp_path / "plain" / "metrics.csv").read_bytes() == (
        tmp_path / "curr" / "metrics.csv"
    ).read_bytes()


def test_promotion_threshold_zero_advances_immediately():
    cfg = replace(TINY, promotion_threshold=0.0)
    result = run_curriculum(cfg)
    assert result.rows[0]["stage"] == "RimStart"
    assert all(r["stage"] == "OutsideStart" for r in result.rows[1:])


def test_promotion_threshold_one_never_advances_for_untrained():
    cfg = replace(TINY, total_episodes=2, promotion_threshold=1.0)
    result = run_curriculum(cfg)
    assert all(r["stage"] == "RimStart" for r in result.rows)


def test_promotion_is_sound_and_stages_monotone():
    cfg = replace(TINY, promotion_threshold=0.5, total_episodes=4)
    result = run_curriculum(cfg)
    order = [s.value for s in CurriculumStage]
    ranks = [order.index(r["stage"]) for r in result.rows]
    assert ranks == sorted(ranks)
    for prev, cur in zip(result.rows, result.rows[1:]):
        if cur["stage"] != prev["stage"]:
            assert prev["eval_success_rate"] >= 0.5


# ------------------------------------------------------------------- resume


def test_resume_reproduces_full_run_exactly(tmp_path):
    cfg_full = replace(TINY, total_episodes=6, eval_every_episodes=3)
    full_dir = tmp_path / "full"
    full = train(cfg_full, str(full_dir))

    part_dir = tmp_path / "part"
    cfg_part = replace(cfg_full, total_episodes=3)
    train(cfg_part, str(part_dir))
    resumed_dir = tmp_path / "resumed"
    resumed = resume_train(
        part_dir / "checkpoint.bundle", str(resumed_dir), total_episodes=6
    )

    assert resumed.rows == full.rows
    assert resumed.env_steps == full.env_steps
    assert resumed.updates_done == full.updates_done
    assert (full_dir / "metrics.csv").read_bytes() == (
        resumed_dir / "metrics.csv"
    ).read_bytes()
    assert (full_dir / "checkpoint.bundle").read_bytes() == (
        resumed_dir / "checkpoint.bundle"
    ).read_bytes()


def test_resume_curriculum_preserves_promotion_state(tmp_path):
    cfg = replace(
        TINY, total_episodes=4, eval_every_episodes=2, promotion_threshold=0.0
    )
    full = run_curriculum(cfg, str(tmp_path / "full"))

    part = replace(cfg, total_episodes=2)
    run_curriculum(part, str(tmp_path / "part"))
    resumed = resume_train(
        tmp_path / "part" / "checkpoint.bundle",
        str(tmp_path / "resumed"),
        total_episodes=4,
    )
    assert resumed.rows == full.rows
    assert (tmp_path / "full" / "metrics.csv").read_bytes() == (
        tmp_path / "resumed" / "metrics.csv"
    ).read_bytes()


def test_checkpoint_save_load_save_byte_identical(tmp_path):
    cfg = replace(TINY, total_episodes=2, eval_every_episodes=2)
    result = train(cfg, str(tmp_path / "run"))
    first = (tmp_path / "run" / "checkpoint.bundle").read_bytes()
    resumed = resume_train(
        tmp_path / "run" / "checkpoint.bundle", str(tmp_path / "again")
    )
    # nothing left to train: loading and saving must reproduce the bytes
    assert resumed.rows == result.rows
    second = (tmp_path / "again" / "checkpoint.bundle").read_bytes()
    assert first == second


def test_load_learner_from_checkpoint(tmp_path):
    cfg = replace(TINY, total_episodes=2, eval_every_episodes=2)
    result = train(cfg, str(tmp_path))
    learner, loaded_cfg = load_learner_from_checkpoint(tmp_path / "checkpoint.bundle")
    assert loaded_cfg == cfg
    for a, b in zip(learner.actor.mlp.params, result.learner.actor.mlp.params):
        assert np.array_equal(a, b)

    from vialscrape.serialization import save_bundle

    save_bundle(tmp_path / "other.bundle", {"kind": "something"}, {})
    with pytest.raises(ValueError):
        load_learner_from_checkpoint(tmp_path / "other.bundle")


# ------------------------------------------------------------------- sweeps


def test_sweep_writes_per_seed_and_aggregate(tmp_path):
    cfg = replace(TINY, total_episodes=2, eval_every_episodes=2, seeds=(0, 1))
    rows, agg = sweep_seeds(cfg, str(tmp_path))
    assert (tmp_path / "seed0" / "metrics.csv").exists()
    assert (tmp_path / "seed1" / "metrics.csv").exists()
    assert (tmp_path / "metrics.csv").exists()
    assert (tmp_path / "aggregate.csv").exists()
    assert {r["seed"] for r in rows} == {0, 1}
    assert all(r["n_seeds"] == 2 for r in agg)
    assert [r["episode"] for r in agg] == [0, 2]

    combined = read_metrics_csv(tmp_path / "metrics.csv")
    assert combined == rows


def test_aggregate_success_hand_case():
    rows = [
        {"episode": 0, "eval_success_rate": 0.4},
        {"episode": 0, "eval_success_rate": 0.6},
    ]
    agg = aggregate_success(rows)
    assert len(agg) == 1
    assert agg[0]["mean_success_rate"] == pytest.approx(0.5)
    assert agg[0]["stderr_success_rate"] == pytest.approx(
        0.1 / math.sqrt(2), abs=1e-12
    )
    single = aggregate_success([{"episode": 5, "eval_success_rate": 0.8}])
    assert single[0]["stderr_success_rate"] == 0.0


def test_aggregate_recomputes_from_rows_exactly():
    rng = np.random.default_rng(0)
    rows = []
    for seed in range(5):
        for episode in (0, 10, 20):
            rows.append(
                {
                    "seed": seed,
                    "episode": episode,
                    "eval_success_rate": float(rng.random()),
                }
            )
    agg = aggregate_success(rows)
    for entry in agg:
        vals = np.array(
            [
                r["eval_success_rate"]
                for r in rows
                if r["episode"] == entry["episode"]
            ]
        )
        assert abs(entry["mean_success_rate"] - vals.mean()) <= 1e-12
        expect_se = vals.std(ddof=0) / math.sqrt(vals.size)
        assert abs(entry["stderr_success_rate"] - expect_se) <= 1e-12


# --------------------------------------------------------------- metrics IO


def test_metrics_round_trip(tmp_path):
    rows = [
        {
            "seed": 3,
            "episode": 100,
            "stage": "RimStart",
            "eval_success_rate": 0.123456789012345,
            "eval_mean_return": -1.5,
            "wallclock_s": 0.0,
        }
    ]
    path = tmp_path / "m.csv"
    write_metrics_csv(path, rows)
    assert read_metrics_csv(path) == rows
    header = path.read_text().splitlines()[0]
    assert header == ",".join(METRICS_COLUMNS)


def test_metrics_reader_rejects_wrong_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("seed,episode\n1,2\n")
    with pytest.raises(ValueError, match="malformed"):
        read_metrics_csv(path)

"""Experiment harness: training loop, curriculum, evaluation, seed sweeps.

One run is fully determined by (config, run_seed): rollout exploration,
replay sampling, update noise, and network init each draw from their own
generator spawned off the run seed, and evaluation episodes use seeds
derived statelessly from (run_seed, episode index), so checkpoint/resume
cannot perturb any stream.  Metrics rows use a fixed column set and
floats are written with repr(), which makes CSVs byte-stable.

The wallclock_s column is 0.0 unless ``record_wallclock`` is enabled:
real timing would break the byte-identical-CSV and resume-exactness
guarantees, which take precedence.
"""

from __future__ import annotations

import csv
import os
import time
import zlib
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .agents import AgentConfig, Learner
from .env import CurriculumStage, EnvConfig, ScrapeEnv
from .geometry import Cylinder
from .replay import ReplayBuffer, Transition
from .serialization import load_bundle, save_bundle

__all__ = [
    "TrainConfig",
    "RunResult",
    "METRICS_COLUMNS",
    "derive_seed",
    "evaluate",
    "train",
    "run_curriculum",
    "resume_train",
    "load_learner_from_checkpoint",
    "sweep_seeds",
    "aggregate_success",
    "write_metrics_csv",
    "read_metrics_csv",
    "config_to_dict",
    "config_from_dict",
]

METRICS_COLUMNS = [
    "seed",
    "episode",
    "stage",
    "eval_success_rate",
    "eval_mean_return",
    "wallclock_s",
]

CHECKPOINT_NAME = "checkpoint.bundle"
METRICS_NAME = "metrics.csv"


@dataclass(frozen=True)
class TrainConfig:
    """Run configuration; flat fields mirror the config-file keys.

    ``profile`` real forces delta_max 0.5 mm, buffer 500, batch 64 (the
    real-robot operating point); everything else is unchanged.  ``stage``
    is the single-stage training task; ``curriculum`` is the stage
    sequence used by curriculum runs.
    """

    algorithm: str = "sac"
    profile: str = "sim"
    run_seed: int = 0
    total_episodes: int = 2000
    eval_every_episodes: int = 1000
    eval_episodes: int = 50
    batch_size: int = 2048
    buffer_capacity: int = 10000
    her_k: int = 4
    hidden: Tuple[int, ...] = (512, 512, 512)
    lr: float = 1e-3
    gamma: float = 0.95
    rho: float = 0.005
    target_entropy: float = -3.0
    n_quantiles: int = 25
    drop_per_net: int = 2
    stage: str = "ScrapeOnly"
    curriculum: Tuple[str, ...] = ("RimStart", "OutsideStart")
    promotion_threshold: float = 0.8
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    record_wallclock: bool = False
    env: EnvConfig = field(default_factory=EnvConfig)

    def __post_init__(self) -> None:
        if self.algorithm not in ("sac", "tqc"):
            raise ValueError(f"algorithm must be 'sac' or 'tqc', got {self.algorithm!r}")
        if self.profile not in ("sim", "real"):
            raise ValueError(f"profile must be 'sim' or 'real', got {self.profile!r}")
        if self.total_episodes < 0:
            raise ValueError("total_episodes must be >= 0")
        if self.eval_every_episodes < 1:
            raise ValueError("eval_every_episodes must be >= 1")
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes must be >= 1")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if not self.curriculum:
            raise ValueError("curriculum must list at least one stage")
        for name in (self.stage, *self.curriculum):
            CurriculumStage.from_name(name)
        if not 0.0 <= self.promotion_threshold <= 1.0:
            raise ValueError("promotion_threshold must be in [0, 1]")
        # check the values the run will actually use (profile-applied),
        # without constructing another config here
        batch = 64 if self.profile == "real" else self.batch_size
        cap = 500 if self.profile == "real" else self.buffer_capacity
        if batch > cap:
            raise ValueError(
                f"batch_size {batch} exceeds buffer capacity {cap}"
            )

    def effective(self) -> "TrainConfig":
        """Config with the profile applied (idempotent)."""
        if self.profile != "real":
            return self
        return replace(
            self,
            batch_size=64,
            buffer_capacity=500,
            env=replace(self.env, delta_max=0.0005),
        )

    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            algo=self.algorithm,
            hidden=tuple(self.hidden),
            lr=self.lr,
            gamma=self.gamma,
            rho=self.rho,
            target_entropy=self.target_entropy,
            n_quantiles=self.n_quantiles,
            drop_per_net=self.drop_per_net,
        )


@dataclass
class RunResult:
    rows: List[dict]
    learner: Learner
    buffer: ReplayBuffer
    env_steps: int
    updates_done: int
    updates_skipped: int
    metrics_path: Optional[str]
    checkpoint_path: Optional[str]


# ----------------------------------------------------------------- seeding


def derive_seed(run_seed: int, tag: str, *indices: int) -> int:
    """Stateless seed for auxiliary episodes (evaluation, workflow).

    Mixing the tag and indices through a SeedSequence keeps these streams
    independent of the training generators, so running or skipping an
    evaluation can never shift subsequent training randomness.
    """
    entropy = (int(run_seed) & 0xFFFFFFFF, zlib.crc32(tag.encode("utf-8")), *(int(i) for i in indices))
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])


def _spawn_streams(run_seed: int):
    root = np.random.SeedSequence(run_seed)
    env_ss, explore_ss, replay_ss, learn_ss, init_ss = root.spawn(5)
    env_seed = int(env_ss.generate_state(1, dtype=np.uint64)[0])
    return (
        env_seed,
        np.random.default_rng(explore_ss),
        np.random.default_rng(replay_ss),
        np.random.default_rng(learn_ss),
        np.random.default_rng(init_ss),
    )


# -------------------------------------------------------------- evaluation


def evaluate(
    policy,
    env_config: EnvConfig,
    stage: CurriculumStage,
    n_episodes: int,
    seed: int,
) -> Tuple[float, float]:
    """Deterministic-policy evaluation on freshly seeded episodes.

    Returns (success_rate, mean undiscounted return).  ``policy`` needs an
    ``act(obs, rng, deterministic)`` method; the rng is passed through for
    policies that are stochastic by nature (e.g. random baselines).
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    env = ScrapeEnv(env_config)
    rng = np.random.default_rng(derive_seed(seed, "eval-policy"))
    successes = 0
    returns = np.empty(n_episodes)
    for ep in range(n_episodes):
        obs = env.reset(seed=derive_seed(seed, "eval-episode", ep), stage=stage)
        ep_return = 0.0
        while True:
            action = policy.act(obs, rng, deterministic=True)
            res = env.step(action)
            ep_return += res.reward
            obs = res.obs
            if res.terminated or res.truncated:
                successes += int(res.terminated)
                break
        returns[ep] = ep_return
    return successes / n_episodes, float(np.mean(returns))


# ------------------------------------------------------------ the run loop


def _rollout(env: ScrapeEnv, learner: Learner, rng, stage: CurriculumStage, seed=None):
    obs = env.reset(seed=seed, stage=stage)
    transitions = []
    while True:
        action = learner.act(obs, rng, deterministic=False)
        res = env.step(action)
        transitions.append(
            Transition(
                observation=obs.observation,
                action=np.asarray(action, dtype=np.float64),
                reward=res.reward,
                next_observation=res.obs.observation,
                achieved_goal=obs.achieved_goal,
                next_achieved_goal=res.obs.achieved_goal,
                desired_goal=obs.desired_goal,
                done=res.terminated,
                in_contact=res.info["in_contact"],
                below_rim=res.info["below_rim"],
                vial_displaced=res.info["vial_displaced"],
                ratio_ok=res.info["ratio_ok"],
            )
        )
        obs = res.obs
        if res.terminated or res.truncated:
            return transitions


class _Run:
    """Mutable state of one training run; checkpointable at eval points."""

    def __init__(self, config: TrainConfig, stages: Sequence[str], promote: Optional[float]):
        self.config = config
        eff = config.effective()
        self.eff = eff
        self.stages = [CurriculumStage.from_name(s) for s in stages]
        self.promote = promote
        env_seed, self.explore_rng, self.replay_rng, self.learn_rng, init_rng = (
            _spawn_streams(config.run_seed)
        )
        self.env = ScrapeEnv(eff.env)
        self.learner = Learner(eff.agent_config(), init_rng)
        self.buffer = ReplayBuffer(eff.buffer_capacity, eff.env, her_k=eff.her_k)
        self.env_seed: Optional[int] = env_seed  # consumed by the first reset
        self.stage_index = 0
        self.episodes_done = 0
        self.env_steps = 0
        self.updates_done = 0
        self.updates_skipped = 0
        self.rows: List[dict] = []
        self.started = time.monotonic()

    # -- helpers -----------------------------------------------------
    @property
    def stage(self) -> CurriculumStage:
        return self.stages[self.stage_index]

    def _wallclock(self) -> float:
        if not self.config.record_wallclock:
            return 0.0
        return time.monotonic() - self.started

    def _eval_row(self) -> dict:
        rate, mean_return = evaluate(
            self.learner,
            self.eff.env,
            self.stage,
            self.eff.eval_episodes,
            derive_seed(self.config.run_seed, "eval", self.episodes_done),
        )
        return {
            "seed": self.config.run_seed,
            "episode": self.episodes_done,
            "stage": self.stage.value,
            "eval_success_rate": rate,
            "eval_mean_return": mean_return,
            "wallclock_s": self._wallclock(),
        }

    def _maybe_promote(self, row: dict) -> None:
        if self.promote is None or self.stage_index >= len(self.stages) - 1:
            return
        if row["eval_success_rate"] >= self.promote:
            self.stage_index += 1
            self.buffer.clear()

    def _train_episode(self) -> None:
        transitions = _rollout(
            self.env, self.learner, self.explore_rng, self.stage, seed=self.env_seed
        )
        self.env_seed = None
        self.buffer.store_episode(transitions)
        steps = len(transitions)
        self.env_steps += steps
        if len(self.buffer) >= self.eff.batch_size:
            for _ in range(steps):
                batch = self.buffer.sample(self.eff.batch_size, self.replay_rng)
                self.learner.update(batch, self.learn_rng)
            self.updates_done += steps
        else:
            self.updates_skipped += steps
        self.episodes_done += 1

    # -- checkpointing -----------------------------------------------
    def save(self, path) -> None:
        agent_state = self.learner.state_dict()
        replay_snap = self.buffer.snapshot()
        meta = {
            "kind": "trainer-checkpoint",
            "config": config_to_dict(self.config),
            "stages": [s.value for s in self.stages],
            "promote": self.promote,
            "stage_index": self.stage_index,
            "episodes_done": self.episodes_done,
            "env_steps": self.env_steps,
            "updates_done": self.updates_done,
            "updates_skipped": self.updates_skipped,
            "env_seed": self.env_seed,
            "rows": self.rows,
            "rng": {
                "explore": self.explore_rng.bit_generator.state,
                "replay": self.replay_rng.bit_generator.state,
                "learn": self.learn_rng.bit_generator.state,
            },
            "env_snapshot": self.env.state_snapshot() if self.env.state else None,
            "agent": agent_state["meta"],
            "replay": replay_snap["meta"],
        }
        arrays = dict(agent_state["arrays"])
        arrays.update(replay_snap["arrays"])
        save_bundle(path, meta, arrays)

    @classmethod
    def load(cls, path, total_episodes: Optional[int] = None) -> "_Run":
        meta, arrays = load_bundle(path)
        if meta.get("kind") != "trainer-checkpoint":
            raise ValueError(f"{path} is not a trainer checkpoint")
        config = config_from_dict(meta["config"])
        if total_episodes is not None:
            config = replace(config, total_episodes=total_episodes)
        run = cls(config, meta["stages"], meta["promote"])
        run.stage_index = int(meta["stage_index"])
        run.episodes_done = int(meta["episodes_done"])
        run.env_steps = int(meta["env_steps"])
        run.updates_done = int(meta["updates_done"])
        run.updates_skipped = int(meta["updates_skipped"])
        run.env_seed = meta["env_seed"]
        run.rows = list(meta["rows"])
        run.explore_rng.bit_generator.state = meta["rng"]["explore"]
        run.replay_rng.bit_generator.state = meta["rng"]["replay"]
        run.learn_rng.bit_generator.state = meta["rng"]["learn"]
        if meta["env_snapshot"] is not None:
            run.env.restore_snapshot(meta["env_snapshot"])
        run.learner.load_state_dict(
            {"meta": meta["agent"], "arrays": _take_prefixless(arrays)}
        )
        run.buffer.restore(
            {"meta": meta["replay"], "arrays": arrays}
        )
        return run

    # -- main loop ----------------------------------------------------
    def run(self, out_dir: Optional[str]) -> RunResult:
        eff = self.eff
        checkpoint_path = metrics_path = None
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            checkpoint_path = os.path.join(out_dir, CHECKPOINT_NAME)
            metrics_path = os.path.join(out_dir, METRICS_NAME)

        if self.episodes_done == 0 and not self.rows:
            row = self._eval_row()
            self.rows.append(row)
            self._maybe_promote(row)

        while self.episodes_done < eff.total_episodes:
            self._train_episode()
            if self.episodes_done % eff.eval_every_episodes == 0:
                row = self._eval_row()
                self.rows.append(row)
                self._maybe_promote(row)
                if checkpoint_path:
                    self.save(checkpoint_path)

        if metrics_path:
            write_metrics_csv(metrics_path, self.rows)
        if checkpoint_path:
            self.save(checkpoint_path)
        return RunResult(
            rows=self.rows,
            learner=self.learner,
            buffer=self.buffer,
            env_steps=self.env_steps,
            updates_done=self.updates_done,
            updates_skipped=self.updates_skipped,
            metrics_path=metrics_path,
            checkpoint_path=checkpoint_path,
        )


def _take_prefixless(arrays: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {k: v for k, v in arrays.items() if not k.startswith("replay_")}


def train(config: TrainConfig, out_dir: Optional[str] = None) -> RunResult:
    """Single-stage training per the run protocol; see module docstring."""
    return _Run(config, [config.stage], promote=None).run(out_dir)


def run_curriculum(config: TrainConfig, out_dir: Optional[str] = None) -> RunResult:
    """Staged training: promote on eval success >= threshold, flush replay,
    carry all learner state.  A single-stage curriculum degenerates to
    plain training on that stage."""
    stages = list(config.curriculum)
    names = [CurriculumStage.from_name(s) for s in stages]
    for earlier, later in zip(names, names[1:]):
        order = list(CurriculumStage)
        if order.index(earlier) >= order.index(later):
            raise ValueError("curriculum stages must be strictly ordered easy to hard")
    return _Run(config, stages, promote=config.promotion_threshold).run(out_dir)


def resume_train(
    checkpoint_path,
    out_dir: Optional[str] = None,
    total_episodes: Optional[int] = None,
) -> RunResult:
    """Continue a checkpointed run; identical streams as the full run."""
    run = _Run.load(checkpoint_path, total_episodes=total_episodes)
    return run.run(out_dir)


def load_learner_from_checkpoint(path) -> Tuple[Learner, TrainConfig]:
    """Rebuild just the learner (and its config) from a trainer checkpoint."""
    meta, arrays = load_bundle(path)
    if meta.get("kind") != "trainer-checkpoint":
        raise ValueError(f"{path} is not a trainer checkpoint")
    learner = Learner.from_state(
        {"meta": meta["agent"], "arrays": _take_prefixless(arrays)}
    )
    return learner, config_from_dict(meta["config"])


# ------------------------------------------------------------------ sweeps


def sweep_seeds(
    config: TrainConfig,
    out_dir: Optional[str] = None,
    curriculum: bool = False,
) -> Tuple[List[dict], List[dict]]:
    """Run one training per seed and aggregate success across seeds.

    Writes per-seed artifacts under <out>/seed<k>/, the combined per-seed
    metrics CSV, and an aggregate CSV with per-episode mean and standard
    error (population sigma / sqrt(n)).
    """
    all_rows: List[dict] = []
    for seed in config.seeds:
        cfg = replace(config, run_seed=int(seed))
        seed_dir = os.path.join(out_dir, f"seed{seed}") if out_dir else None
        result = run_curriculum(cfg, seed_dir) if curriculum else train(cfg, seed_dir)
        all_rows.extend(result.rows)
    agg = aggregate_success(all_rows)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_metrics_csv(os.path.join(out_dir, METRICS_NAME), all_rows)
        _write_aggregate_csv(os.path.join(out_dir, "aggregate.csv"), agg)
    return all_rows, agg


def aggregate_success(rows: List[dict]) -> List[dict]:
    """Per-episode mean and standard error of eval_success_rate over seeds."""
    by_episode: Dict[int, List[float]] = {}
    for row in rows:
        by_episode.setdefault(int(row["episode"]), []).append(
            float(row["eval_success_rate"])
        )
    out = []
    for episode in sorted(by_episode):
        vals = np.asarray(by_episode[episode], dtype=np.float64)
        n = vals.size
        mean = float(np.mean(vals))
        stderr = float(np.std(vals, ddof=0) / np.sqrt(n))
        out.append(
            {
                "episode": episode,
                "mean_success_rate": mean,
                "stderr_success_rate": stderr,
                "n_seeds": n,
            }
        )
    return out


def _write_aggregate_csv(path, agg: List[dict]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("episode,mean_success_rate,stderr_success_rate,n_seeds\n")
        for row in agg:
            fh.write(
                f"{row['episode']},{row['mean_success_rate']!r},"
                f"{row['stderr_success_rate']!r},{row['n_seeds']}\n"
            )


# -------------------------------------------------------------- metrics IO


def write_metrics_csv(path, rows: List[dict]) -> None:
    """Byte-stable metrics writer: ints plain, floats via repr()."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for row in rows:
            fh.write(
                f"{int(row['seed'])},{int(row['episode'])},{row['stage']},"
                f"{float(row['eval_success_rate'])!r},"
                f"{float(row['eval_mean_return'])!r},"
                f"{float(row['wallclock_s'])!r}\n"
            )


def read_metrics_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_COLUMNS:
            raise ValueError(
                f"malformed metrics CSV {path}: columns {reader.fieldnames}"
            )
        rows = []
        for rec in reader:
            rows.append(
                {
                    "seed": int(rec["seed"]),
                    "episode": int(rec["episode"]),
                    "stage": rec["stage"],
                    "eval_success_rate": float(rec["eval_success_rate"]),
                    "eval_mean_return": float(rec["eval_mean_return"]),
                    "wallclock_s": float(rec["wallclock_s"]),
                }
            )
    return rows


# ----------------------------------------------------------- config (de)ser


def config_to_dict(config: TrainConfig) -> dict:
    return asdict(config)


def config_from_dict(data: dict) -> TrainConfig:
    d = dict(data)
    env = d.pop("env")
    vial = dict(env.pop("vial"))
    vial["center_xy"] = tuple(vial["center_xy"])
    env_config = EnvConfig(vial=Cylinder(**vial), **env)
    d["hidden"] = tuple(d["hidden"])
    d["curriculum"] = tuple(d["curriculum"])
    d["seeds"] = tuple(d["seeds"])
    return TrainConfig(env=env_config, **d)

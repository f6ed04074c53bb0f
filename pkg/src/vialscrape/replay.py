"""Episode-granular replay with hindsight goal relabeling.

Episodes are stored whole and evicted whole (oldest first) so every
stored transition can always reach the later steps of its own episode,
which hindsight relabeling samples goals from.  Rewards are recomputed
exactly when a goal is replaced; the required reward terms (contact,
rim insertion, vial displacement, contact-ratio gate) are frozen per
transition at insertion time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from .env import EnvConfig, RewardTerms, compute_reward, compute_reward_batch

__all__ = ["Transition", "ReplayBuffer"]


@dataclass(frozen=True)
class Transition:
    """One environment step plus the frozen inputs needed to re-reward it.

    ``achieved_goal`` belongs to ``observation`` and ``next_achieved_goal``
    to ``next_observation``; ``done`` means goal success (horizon and
    safety truncations stay bootstrappable).  The boolean terms describe
    the outcome of the step and are goal-independent, so they survive
    relabeling unchanged.
    """

    observation: np.ndarray
    action: np.ndarray
    reward: float
    next_observation: np.ndarray
    achieved_goal: np.ndarray
    next_achieved_goal: np.ndarray
    desired_goal: np.ndarray
    done: bool
    in_contact: bool
    below_rim: bool
    vial_displaced: bool
    ratio_ok: bool


_FIELDS_3D = ("action", "achieved_goal", "next_achieved_goal", "desired_goal")


class ReplayBuffer:
    """FIFO transition store with uniform sampling and future-goal relabeling.

    ``capacity`` counts transitions; eviction happens per episode.  With
    relabel ratio k, a sampled batch replaces the goal on k/(k+1) of its
    rows by the achieved goal of a uniformly drawn later step from the same
    episode, recomputing reward and done under the new goal.
    """

    def __init__(self, capacity: int, config: EnvConfig, her_k: int = 4):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        if her_k < 0:
            raise ValueError(f"her_k must be >= 0, got {her_k}")
        self.capacity = capacity
        self.config = config
        self.her_k = her_k
        self._episodes: List[Dict[str, np.ndarray]] = []
        self._size = 0
        self._episode_counter = 0

    def __len__(self) -> int:
        return self._size

    @property
    def n_episodes(self) -> int:
        return len(self._episodes)

    # ------------------------------------------------------------- store
    def store_episode(self, transitions: Sequence[Transition]) -> None:
        """Append one episode after validating internal consistency.

        Rejects episodes whose observations do not chain (next observation
        of step t must equal observation of step t+1) or whose stored
        rewards disagree with recomputation from the stored fields.
        """
        n = len(transitions)
        if n == 0:
            raise ValueError("cannot store an empty episode")
        if n > self.capacity:
            raise ValueError(
                f"episode of {n} transitions exceeds buffer capacity {self.capacity}"
            )
        for t in range(n - 1):
            if not np.array_equal(
                transitions[t].next_observation, transitions[t + 1].observation
            ):
                raise ValueError(f"observation chain broken between steps {t} and {t+1}")
            if not np.array_equal(
                transitions[t].next_achieved_goal, transitions[t + 1].achieved_goal
            ):
                raise ValueError(f"achieved-goal chain broken between steps {t} and {t+1}")
        for t, tr in enumerate(transitions):
            expect = compute_reward(
                tr.next_achieved_goal,
                tr.desired_goal,
                _terms_of(tr),
                self.config,
            )
            if expect != tr.reward:
                raise ValueError(
                    f"stored reward {tr.reward!r} at step {t} does not match "
                    f"recomputation {expect!r}"
                )

        ep = {
            "index": self._episode_counter,
            "observation": np.stack([tr.observation for tr in transitions]),
            "next_observation": np.stack([tr.next_observation for tr in transitions]),
            "reward": np.array([tr.reward for tr in transitions], dtype=np.float64),
            "done": np.array([tr.done for tr in transitions], dtype=bool),
            "in_contact": np.array([tr.in_contact for tr in transitions], dtype=bool),
            "below_rim": np.array([tr.below_rim for tr in transitions], dtype=bool),
            "vial_displaced": np.array(
                [tr.vial_displaced for tr in transitions], dtype=bool
            ),
            "ratio_ok": np.array([tr.ratio_ok for tr in transitions], dtype=bool),
        }
        for name in _FIELDS_3D:
            ep[name] = np.stack([getattr(tr, name) for tr in transitions])
        self._episode_counter += 1
        self._episodes.append(ep)
        self._size += n
        while self._size > self.capacity:
            dropped = self._episodes.pop(0)
            self._size -= len(dropped["reward"])

    def clear(self) -> None:
        self._episodes.clear()
        self._size = 0

    # ------------------------------------------------------------ sample
    def sample(self, batch_size: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        """Uniform with-replacement batch with hindsight-relabeled rows.

        The generator is consumed by a fixed number of draws per call
        (flat indices, relabel coins, future offsets), so identical rng
        state yields an identical batch.
        """
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")

        lengths = np.array([len(ep["reward"]) for ep in self._episodes], dtype=np.int64)
        ends = np.cumsum(lengths)
        flat = rng.integers(0, self._size, size=batch_size)
        ep_idx = np.searchsorted(ends, flat, side="right")
        starts = ends - lengths
        t_idx = flat - starts[ep_idx]

        her_fraction = self.her_k / (self.her_k + 1.0)
        her_mask = rng.random(batch_size) < her_fraction
        future_u = rng.random(batch_size)

        cfg = self.config
        dim_obs = self._episodes[0]["observation"].shape[1]
        dim_goal = self._episodes[0]["desired_goal"].shape[1]
        batch = {
            "observation": np.empty((batch_size, dim_obs)),
            "action": np.empty((batch_size, self._episodes[0]["action"].shape[1])),
            "reward": np.empty(batch_size),
            "next_observation": np.empty((batch_size, dim_obs)),
            "next_achieved_goal": np.empty((batch_size, dim_goal)),
            "desired_goal": np.empty((batch_size, dim_goal)),
            "done": np.empty(batch_size),
        }
        in_contact = np.empty(batch_size, dtype=bool)
        below_rim = np.empty(batch_size, dtype=bool)
        vial_displaced = np.empty(batch_size, dtype=bool)
        ratio_ok = np.empty(batch_size, dtype=bool)
        episode_index = np.empty(batch_size, dtype=np.int64)
        future_index = np.full(batch_size, -1, dtype=np.int64)

        for row in range(batch_size):
            ep = self._episodes[ep_idx[row]]
            t = int(t_idx[row])
            n = len(ep["reward"])
            batch["observation"][row] = ep["observation"][t]
            batch["action"][row] = ep["action"][t]
            batch["next_observation"][row] = ep["next_observation"][t]
            batch["next_achieved_goal"][row] = ep["next_achieved_goal"][t]
            in_contact[row] = ep["in_contact"][t]
            below_rim[row] = ep["below_rim"][t]
            vial_displaced[row] = ep["vial_displaced"][t]
            ratio_ok[row] = ep["ratio_ok"][t]
            episode_index[row] = ep["index"]
            if her_mask[row]:
                j = t + int(future_u[row] * (n - t))
                future_index[row] = j
                batch["desired_goal"][row] = ep["next_achieved_goal"][j]
            else:
                batch["desired_goal"][row] = ep["desired_goal"][t]
                batch["reward"][row] = ep["reward"][t]
                batch["done"][row] = 1.0 if ep["done"][t] else 0.0

        if her_mask.any():
            rows = np.where(her_mask)[0]
            new_rewards = compute_reward_batch(
                batch["next_achieved_goal"][rows],
                batch["desired_goal"][rows],
                in_contact[rows],
                below_rim[rows],
                vial_displaced[rows],
                cfg,
            )
            batch["reward"][rows] = new_rewards
            d = batch["desired_goal"][rows] - batch["next_achieved_goal"][rows]
            dist = np.sqrt((d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]) + d[:, 2] * d[:, 2])
            success = (dist <= cfg.goal_tolerance) & ratio_ok[rows]
            batch["done"][rows] = success.astype(np.float64)

        batch["info"] = {
            "her_mask": her_mask,
            "episode_index": episode_index,
            "step_index": t_idx.astype(np.int64),
            "future_index": future_index,
        }
        return batch

    # ---------------------------------------------------------- snapshot
    def snapshot(self) -> Dict:
        """Checkpointable content: meta dict plus named arrays."""
        meta = {
            "capacity": self.capacity,
            "her_k": self.her_k,
            "episode_counter": self._episode_counter,
            "episode_indices": [ep["index"] for ep in self._episodes],
            "episode_lengths": [int(len(ep["reward"])) for ep in self._episodes],
        }
        arrays: Dict[str, np.ndarray] = {}
        if self._episodes:
            keys = [k for k in self._episodes[0] if k != "index"]
            for key in keys:
                arrays["replay_" + key] = np.concatenate(
                    [ep[key] for ep in self._episodes]
                )
        return {"meta": meta, "arrays": arrays}

    def restore(self, snap: Dict) -> None:
        meta = snap["meta"]
        arrays = snap["arrays"]
        self.capacity = int(meta["capacity"])
        self.her_k = int(meta["her_k"])
        self._episode_counter = int(meta["episode_counter"])
        self._episodes = []
        self._size = 0
        offset = 0
        bool_keys = ("done", "in_contact", "below_rim", "vial_displaced", "ratio_ok")
        for index, length in zip(meta["episode_indices"], meta["episode_lengths"]):
            ep: Dict[str, np.ndarray] = {"index": int(index)}
            for key in (
                "observation",
                "next_observation",
                "reward",
                *_FIELDS_3D,
                *bool_keys,
            ):
                chunk = arrays["replay_" + key][offset : offset + length]
                ep[key] = chunk.astype(bool) if key in bool_keys else np.array(chunk)
            offset += length
            self._episodes.append(ep)
            self._size += int(length)


def _terms_of(tr: Transition) -> RewardTerms:
    return RewardTerms(
        in_contact=tr.in_contact,
        below_rim=tr.below_rim,
        vial_displaced=tr.vial_displaced,
    )

"""Finite-horizon goal-conditioned MDP for in-vial scraping.

An episode starts with the tool tip (TCP) at a stage-dependent start pose
and a goal sampled on the inner wall near the vial base.  Actions are
bounded Cartesian displacements; the inner wall is a hard constraint and
pressing into it produces a spring contact force that is fed back in the
observation.  The reward combines a negative goal distance with penalties
for losing wall contact while inserted and for displacing the vial.

Episodes terminate on success (close to the goal with wall contact held for
at least ``contact_ratio_min`` of the inserted timesteps) and truncate on
the step horizon or on a vertical-force safety abort.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

from .geometry import Cylinder, ContactInfo, radial_distance, resolve_wall, vec3

__all__ = [
    "FORCE_SCALE",
    "CurriculumStage",
    "EnvConfig",
    "EnvState",
    "GoalObservation",
    "RewardTerms",
    "StepResult",
    "ScrapeEnv",
    "EpisodeFinishedError",
    "compute_reward",
    "compute_reward_batch",
    "write_trajectory_csv",
    "TRAJECTORY_COLUMNS",
]

# Force feedback is normalized by this constant so network inputs stay O(1).
FORCE_SCALE = 20.0


class EpisodeFinishedError(RuntimeError):
    """Raised when step() is called on an episode that already ended."""


class CurriculumStage(enum.Enum):
    """Start-pose difficulty tiers, ordered easy to hard."""

    SCRAPE_ONLY = "ScrapeOnly"
    RIM_START = "RimStart"
    OUTSIDE_START = "OutsideStart"

    @classmethod
    def from_name(cls, name: str) -> "CurriculumStage":
        for stage in cls:
            if stage.value == name:
                return stage
        raise ValueError(
            f"unknown stage {name!r}; expected one of "
            f"{[s.value for s in cls]}"
        )


@dataclass(frozen=True)
class EnvConfig:
    """Full parametrization of the scraping MDP.

    Lengths in meters, forces in newtons, stiffness in N/m.  ``delta_max``
    is the per-axis displacement an action component of +/-1 maps to.
    ``reward_mode`` selects the simulated-task reward (goal + weighted
    contact and vial penalties) or the real-task reward (goal + contact).
    """

    vial: Cylinder = field(default_factory=Cylinder)
    contact_band: float = 0.0005
    stiffness_k: float = 2000.0
    delta_max: float = 0.005
    horizon: int = 50
    goal_tolerance: float = 0.005
    w0: float = 1.0
    w1: float = 1.0
    vial_move_threshold: float = 0.020
    penetration_cap: float = 0.002
    slip_factor: float = 0.5
    fz_abort: float = 20.0
    sector_halfwidth: float = math.pi / 24.0
    sector_center: float = 0.0
    contact_ratio_min: float = 0.9
    reward_mode: str = "simulated"

    def __post_init__(self) -> None:
        positive = {
            "contact_band": self.contact_band,
            "stiffness_k": self.stiffness_k,
            "delta_max": self.delta_max,
            "goal_tolerance": self.goal_tolerance,
            "vial_move_threshold": self.vial_move_threshold,
            "penetration_cap": self.penetration_cap,
            "fz_abort": self.fz_abort,
            "sector_halfwidth": self.sector_halfwidth,
        }
        for name, value in positive.items():
            if not value > 0.0:
                raise ValueError(f"{name} must be > 0, got {value}")
        if self.w0 < 0.0 or self.w1 < 0.0:
            raise ValueError("reward weights w0, w1 must be >= 0")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if not 0.0 < self.contact_ratio_min <= 1.0:
            raise ValueError(
                f"contact_ratio_min must be in (0, 1], got {self.contact_ratio_min}"
            )
        if self.slip_factor < 0.0:
            raise ValueError("slip_factor must be >= 0")
        if self.reward_mode not in ("simulated", "real"):
            raise ValueError(
                f"reward_mode must be 'simulated' or 'real', got {self.reward_mode!r}"
            )

    @property
    def base_center(self) -> np.ndarray:
        """Origin of the observation frame: vial base center (nominal)."""
        return vec3(self.vial.center_xy[0], self.vial.center_xy[1], self.vial.base_z)

    def with_sector_center(self, angle: float) -> "EnvConfig":
        return replace(self, sector_center=angle)


@dataclass(frozen=True)
class RewardTerms:
    """Goal-independent reward inputs frozen at the step they occurred."""

    in_contact: bool
    below_rim: bool
    vial_displaced: bool


@dataclass(frozen=True)
class GoalObservation:
    """Observation triple: sensor vector plus achieved/desired goal.

    ``observation`` is [x, y, z, fx, fy, fz] with positions in meters
    relative to the vial base center and forces divided by FORCE_SCALE.
    ``achieved_goal`` equals the raw (un-normalized) position components.
    """

    observation: np.ndarray
    achieved_goal: np.ndarray
    desired_goal: np.ndarray


@dataclass(frozen=True)
class StepResult:
    obs: GoalObservation
    reward: float
    terminated: bool
    truncated: bool
    info: dict


@dataclass
class EnvState:
    """Mutable episode state. ``tcp`` and forces are in absolute coordinates."""

    tcp: np.ndarray
    vial_offset: np.ndarray
    step_count: int
    contact: ContactInfo
    force: np.ndarray
    contact_steps_below_rim: int
    steps_below_rim: int
    rng: np.random.Generator
    desired_goal: np.ndarray  # relative to the base center
    stage: CurriculumStage
    episode_active: bool


def compute_reward(
    achieved_goal: np.ndarray,
    desired_goal: np.ndarray,
    terms: RewardTerms,
    config: EnvConfig,
) -> float:
    """Reward for one transition; pure in all arguments.

    The goal term is the negative Euclidean distance between desired and
    achieved goals, so the reward is maximal (0 for the goal term) at the
    goal.  Contact and vial penalties are -1 and -0.1 when triggered; in
    ``real`` reward mode the vial penalty is dropped and the contact
    penalty enters unweighted.
    """
    dx = float(desired_goal[0]) - float(achieved_goal[0])
    dy = float(desired_goal[1]) - float(achieved_goal[1])
    dz = float(desired_goal[2]) - float(achieved_goal[2])
    r_goal = -math.sqrt(dx * dx + dy * dy + dz * dz)
    r_contact = -1.0 if (terms.below_rim and not terms.in_contact) else 0.0
    if config.reward_mode == "real":
        return r_goal + r_contact
    r_vial = -0.1 if terms.vial_displaced else 0.0
    return r_goal + config.w0 * r_contact + config.w1 * r_vial


def compute_reward_batch(
    achieved_goal: np.ndarray,
    desired_goal: np.ndarray,
    in_contact: np.ndarray,
    below_rim: np.ndarray,
    vial_displaced: np.ndarray,
    config: EnvConfig,
) -> np.ndarray:
    """Vectorized :func:`compute_reward`; bitwise-identical per element."""
    d = np.asarray(desired_goal, dtype=np.float64) - np.asarray(
        achieved_goal, dtype=np.float64
    )
    r_goal = -np.sqrt((d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]) + d[:, 2] * d[:, 2])
    r_contact = np.where(below_rim & ~in_contact, -1.0, 0.0)
    if config.reward_mode == "real":
        return r_goal + r_contact
    r_vial = np.where(vial_displaced, -0.1, 0.0)
    return r_goal + config.w0 * r_contact + config.w1 * r_vial


class ScrapeEnv:
    """The scraping MDP.

    One instance serves one caller at a time; create separate instances for
    parallel rollouts.  All randomness flows through the generator seeded in
    :meth:`reset`, so equal seeds and action sequences reproduce bitwise
    equal trajectories.
    """

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig()
        self.state: Optional[EnvState] = None

    # ------------------------------------------------------------- reset
    def reset(
        self,
        seed: Optional[int] = None,
        stage: CurriculumStage = CurriculumStage.SCRAPE_ONLY,
    ) -> GoalObservation:
        """Start a new episode; same seed reproduces goal and start exactly.

        The desired goal sits on the inner wall 2 mm above the base, with
        azimuth uniform over the configured sector.  The start pose depends
        on the stage: on the wall 2 mm below the rim at the sector center
        (ScrapeOnly and RimStart), or 20 mm above the rim and 5 mm radially
        outside the wall (OutsideStart).
        """
        cfg = self.config
        if seed is not None:
            rng = np.random.default_rng(seed)
        elif self.state is not None:
            rng = self.state.rng
        else:
            rng = np.random.default_rng()

        vial = cfg.vial
        cx, cy = vial.center_xy
        phi = cfg.sector_center + rng.uniform(
            -cfg.sector_halfwidth, cfg.sector_halfwidth
        )
        goal_abs = vec3(
            cx + vial.inner_radius * math.cos(phi),
            cy + vial.inner_radius * math.sin(phi),
            vial.base_z + 0.002,
        )

        c = cfg.sector_center
        if stage in (CurriculumStage.SCRAPE_ONLY, CurriculumStage.RIM_START):
            tcp = vec3(
                cx + vial.inner_radius * math.cos(c),
                cy + vial.inner_radius * math.sin(c),
                vial.rim_z - 0.002,
            )
        elif stage is CurriculumStage.OUTSIDE_START:
            tcp = vec3(
                cx + (vial.inner_radius + 0.005) * math.cos(c),
                cy + (vial.inner_radius + 0.005) * math.sin(c),
                vial.rim_z + 0.020,
            )
        else:  # pragma: no cover - enum is closed
            raise ValueError(f"unknown stage {stage}")

        _, contact = resolve_wall(tcp, vial, cfg.contact_band)
        self.state = EnvState(
            tcp=tcp,
            vial_offset=np.zeros(2, dtype=np.float64),
            step_count=0,
            contact=contact,
            force=vec3(0.0, 0.0, 0.0),
            contact_steps_below_rim=0,
            steps_below_rim=0,
            rng=rng,
            desired_goal=goal_abs - cfg.base_center,
            stage=stage,
            episode_active=True,
        )
        return self._observe()

    # -------------------------------------------------------------- step
    def step(self, action: Iterable[float]) -> StepResult:
        """Advance one timestep. Raises EpisodeFinishedError after the end."""
        state = self.state
        if state is None or not state.episode_active:
            raise EpisodeFinishedError(
                "step() called on a finished episode; call reset() first"
            )
        cfg = self.config

        act = np.clip(np.asarray(action, dtype=np.float64).reshape(3), -1.0, 1.0)
        attempted = state.tcp + act * cfg.delta_max

        vial = cfg.vial.translated(state.vial_offset)
        resolved, contact = resolve_wall(attempted, vial, cfg.contact_band)

        # Spring forces act only through real contact: the inward wall
        # normal (zero when not touching) and the base reaction.
        force = cfg.stiffness_k * contact.penetration * contact.normal
        force[2] = cfg.stiffness_k * contact.base_penetration

        # Over-hard pushes drag the vial along the push direction.
        if contact.in_contact and contact.penetration > cfg.penetration_cap:
            push_dir = -contact.normal[:2]
            state.vial_offset = state.vial_offset + (
                cfg.slip_factor * (contact.penetration - cfg.penetration_cap)
            ) * push_dir

        state.tcp = resolved
        state.contact = contact
        state.force = force
        state.step_count += 1

        below_rim = bool(resolved[2] < vial.rim_z)
        if below_rim:
            state.steps_below_rim += 1
            if contact.in_contact:
                state.contact_steps_below_rim += 1

        off = state.vial_offset
        vial_displaced = (
            math.sqrt(float(off[0]) * float(off[0]) + float(off[1]) * float(off[1]))
            >= cfg.vial_move_threshold
        )

        achieved = state.tcp - cfg.base_center
        terms = RewardTerms(
            in_contact=contact.in_contact,
            below_rim=below_rim,
            vial_displaced=vial_displaced,
        )
        reward = compute_reward(achieved, state.desired_goal, terms, cfg)

        distance = self._goal_distance(achieved, state.desired_goal)
        success = distance <= cfg.goal_tolerance and self.contact_ratio_ok()
        safety_abort = abs(float(force[2])) > cfg.fz_abort

        terminated = False
        truncated = False
        if safety_abort:
            truncated = True
        elif success:
            terminated = True
        elif state.step_count >= cfg.horizon:
            truncated = True
        if terminated or truncated:
            state.episode_active = False

        # below_rim and ratio_ok are goal-independent, so relabeling a
        # transition with a new goal can reuse them verbatim.
        info = {
            "is_success": success,
            "in_contact": contact.in_contact,
            "below_rim": below_rim,
            "vial_displaced": vial_displaced,
            "ratio_ok": self.contact_ratio_ok(),
            "safety_abort": safety_abort,
            "distance": distance,
        }
        return StepResult(self._observe(), reward, terminated, truncated, info)

    # ----------------------------------------------------------- queries
    def contact_ratio_ok(self) -> bool:
        """Whether wall contact has been held often enough while inserted."""
        state = self.state
        if state.steps_below_rim == 0:
            return True
        ratio = state.contact_steps_below_rim / state.steps_below_rim
        return ratio >= self.config.contact_ratio_min

    def is_success(self, desired_goal: np.ndarray) -> bool:
        """Success test against an arbitrary goal (relative coordinates)."""
        achieved = self.state.tcp - self.config.base_center
        distance = self._goal_distance(achieved, desired_goal)
        return distance <= self.config.goal_tolerance and self.contact_ratio_ok()

    @staticmethod
    def _goal_distance(achieved: np.ndarray, desired: np.ndarray) -> float:
        dx = float(desired[0]) - float(achieved[0])
        dy = float(desired[1]) - float(achieved[1])
        dz = float(desired[2]) - float(achieved[2])
        return math.sqrt(dx * dx + dy * dy + dz * dz)

    def _observe(self) -> GoalObservation:
        state = self.state
        rel = state.tcp - self.config.base_center
        obs = np.empty(6, dtype=np.float64)
        obs[:3] = rel
        obs[3:] = state.force / FORCE_SCALE
        return GoalObservation(
            observation=obs,
            achieved_goal=rel.copy(),
            desired_goal=state.desired_goal.copy(),
        )

    # ---------------------------------------------------- state snapshot
    def state_snapshot(self) -> dict:
        """JSON-able snapshot of the full environment state (for resume)."""
        s = self.state
        if s is None:
            raise RuntimeError("environment has no state; call reset() first")
        return {
            "tcp": s.tcp.tolist(),
            "vial_offset": s.vial_offset.tolist(),
            "step_count": s.step_count,
            "contact": {
                "in_contact": s.contact.in_contact,
                "normal": s.contact.normal.tolist(),
                "penetration": s.contact.penetration,
                "base_penetration": s.contact.base_penetration,
            },
            "force": s.force.tolist(),
            "contact_steps_below_rim": s.contact_steps_below_rim,
            "steps_below_rim": s.steps_below_rim,
            "rng_state": s.rng.bit_generator.state,
            "desired_goal": s.desired_goal.tolist(),
            "stage": s.stage.value,
            "episode_active": s.episode_active,
        }

    def restore_snapshot(self, snap: dict) -> None:
        rng = np.random.default_rng()
        rng.bit_generator.state = snap["rng_state"]
        c = snap["contact"]
        self.state = EnvState(
            tcp=np.array(snap["tcp"], dtype=np.float64),
            vial_offset=np.array(snap["vial_offset"], dtype=np.float64),
            step_count=int(snap["step_count"]),
            contact=ContactInfo(
                in_contact=bool(c["in_contact"]),
                normal=np.array(c["normal"], dtype=np.float64),
                penetration=float(c["penetration"]),
                base_penetration=float(c["base_penetration"]),
            ),
            force=np.array(snap["force"], dtype=np.float64),
            contact_steps_below_rim=int(snap["contact_steps_below_rim"]),
            steps_below_rim=int(snap["steps_below_rim"]),
            rng=rng,
            desired_goal=np.array(snap["desired_goal"], dtype=np.float64),
            stage=CurriculumStage.from_name(snap["stage"]),
            episode_active=bool(snap["episode_active"]),
        )


# ------------------------------------------------------------ trajectory IO

TRAJECTORY_COLUMNS = [
    "step",
    "x",
    "y",
    "z",
    "fx",
    "fy",
    "fz",
    "reward",
    "in_contact",
    "terminated",
    "truncated",
]


def write_trajectory_csv(path, rows: Iterable[dict]) -> None:
    """Dump one episode as CSV, one row per step.

    Positions are base-center-relative meters, forces raw newtons, flags
    encoded as 0/1.  A header row is always written.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAJECTORY_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in TRAJECTORY_COLUMNS})

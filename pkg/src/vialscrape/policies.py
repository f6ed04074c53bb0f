"""Non-learned reference policies.

The scripted scraper is the ground-truth check that the task is solvable
within the horizon: it descends along the wall toward the goal height
while steering its azimuth to the goal sector, keeping a light 1 mm press
into the wall so contact never drops (and staying under the slip cap).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .env import EnvConfig, GoalObservation

__all__ = ["ScriptedScraper", "RandomPolicy", "wrap_angle"]


def wrap_angle(angle: float) -> float:
    """Map an angle to (-pi, pi]."""
    return math.pi - (math.pi - angle) % (2.0 * math.pi)


@dataclass
class ScriptedScraper:
    """Deterministic wall-following controller. Ignores rng arguments."""

    config: EnvConfig
    press: float = 0.001

    def act(
        self,
        obs: GoalObservation,
        rng: Optional[np.random.Generator] = None,
        deterministic: bool = True,
    ) -> np.ndarray:
        cfg = self.config
        p = obs.achieved_goal
        g = obs.desired_goal
        radius = cfg.vial.inner_radius
        rim = cfg.vial.rim_z - cfg.vial.base_z
        dmax = cfg.delta_max

        r_p = math.hypot(float(p[0]), float(p[1]))
        phi_g = math.atan2(float(g[1]), float(g[0]))
        phi_p = math.atan2(float(p[1]), float(p[0])) if r_p > 1e-9 else phi_g
        dphi = wrap_angle(phi_g - phi_p)
        dphi_max = dmax / max(radius, 1e-9)
        phi_next = phi_p + max(-dphi_max, min(dphi_max, dphi))

        # Press only while inserted; above the rim just ride the wall radius.
        below = float(p[2]) < rim
        r_next = radius + self.press if below else radius
        dz = max(-dmax, min(dmax, float(g[2]) - float(p[2])))

        target = np.array(
            [r_next * math.cos(phi_next), r_next * math.sin(phi_next), p[2] + dz]
        )
        return np.clip((target - p) / dmax, -1.0, 1.0)


@dataclass
class RandomPolicy:
    """Uniform actions in [-1, 1]^3; baseline for sanity checks."""

    act_dim: int = 3

    def act(
        self,
        obs: GoalObservation,
        rng: Optional[np.random.Generator] = None,
        deterministic: bool = False,
    ) -> np.ndarray:
        if rng is None:
            raise ValueError("random policy needs an rng")
        return rng.uniform(-1.0, 1.0, size=self.act_dim)

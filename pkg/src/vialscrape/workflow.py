"""Full-vial scraping schedule: rotate, scrape, repeat.

The vial wall is divided into equal angular regions; between regions the
vial is rotated by one region width so the next sector faces the tool
(modeled by advancing the goal-sector center).  Each region is scraped by
a fixed number of policy passes; coverage is the fraction of regions with
at least one successful pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List

import numpy as np

from .env import CurriculumStage, EnvConfig, ScrapeEnv
from .training import derive_seed

__all__ = ["RegionPlan", "WorkflowReport", "workflow_simulate"]


@dataclass(frozen=True)
class RegionPlan:
    """Region count, per-region rotation, and passes per region."""

    n_regions: int = 24
    rotation: float = math.pi / 12.0
    passes: int = 5

    def __post_init__(self) -> None:
        if self.n_regions < 1:
            raise ValueError("n_regions must be >= 1")
        if self.passes < 0:
            raise ValueError("passes must be >= 0")
        if abs(self.n_regions * self.rotation - 2.0 * math.pi) > 1e-9:
            raise ValueError(
                f"regions must tile the full circle: {self.n_regions} x "
                f"{self.rotation} != 2*pi"
            )


@dataclass
class WorkflowReport:
    plan: RegionPlan
    successes: List[int]
    segments: int
    coverage: float

    def to_rows(self) -> List[dict]:
        return [
            {"region": r, "successes": s, "passes": self.plan.passes}
            for r, s in enumerate(self.successes)
        ]


def workflow_simulate(
    plan: RegionPlan,
    policy,
    env_config: EnvConfig,
    stage: CurriculumStage = CurriculumStage.SCRAPE_ONLY,
    seed: int = 0,
) -> WorkflowReport:
    """Run the rotate-and-scrape schedule and report coverage.

    Every region gets ``plan.passes`` deterministic-policy episodes with
    goals drawn from that region's sector; episode seeds derive from
    (seed, region, pass) so the schedule is reproducible and order-free.
    """
    successes = []
    for region in range(plan.n_regions):
        center = region * plan.rotation
        env = ScrapeEnv(env_config.with_sector_center(center))
        rng = np.random.default_rng(derive_seed(seed, "workflow-policy", region))
        count = 0
        for p in range(plan.passes):
            obs = env.reset(seed=derive_seed(seed, "workflow", region, p), stage=stage)
            while True:
                res = env.step(policy.act(obs, rng, deterministic=True))
                obs = res.obs
                if res.terminated or res.truncated:
                    count += int(res.terminated)
                    break
        successes.append(count)
    covered = sum(1 for c in successes if c > 0)
    return WorkflowReport(
        plan=plan,
        successes=successes,
        segments=plan.n_regions * plan.passes,
        coverage=covered / plan.n_regions,
    )

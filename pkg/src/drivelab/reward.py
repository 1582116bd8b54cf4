"""Per-step reward with component bookkeeping.

Components: +1 on reaching the goal, -1 on the first collision/off-road
event, a smoothness penalty on action changes, and a normalized progress
penalty.  Each component's undiscounted episode sum is bounded by 1: the
smoothness term divides by the full action range (2 * a_max) and the
progress ratio is clamped at 1 so the bounds hold for any trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class RewardBreakdown:
    goal: float = 0.0  # {0, +1}
    collision: float = 0.0  # {0, -1}
    smoothness: float = 0.0  # <= 0
    progress: float = 0.0  # <= 0

    @property
    def total(self) -> float:
        return self.goal + self.collision + self.smoothness + self.progress


def compute_reward(prev_action: float, action: float, reached: bool,
                   first_collision: bool, goal_dist_now: float,
                   goal_dist_init: float, horizon: int,
                   a_max: float) -> RewardBreakdown:
    """Reward for one agent at one tick.

    `prev_action`/`action` are accelerations in m/s^2 (within +/- a_max);
    `first_collision` must be True only on the tick the agent first collides
    or leaves the road.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if goal_dist_init <= 0:
        raise ValueError("initial goal distance must be positive")
    if abs(action) > a_max + 1e-9 or abs(prev_action) > a_max + 1e-9:
        raise ValueError("action outside +/- a_max")
    smoothness = -abs(action - prev_action) / (2.0 * a_max) / horizon
    progress = -min(goal_dist_now / goal_dist_init, 1.0) / horizon
    return RewardBreakdown(
        goal=1.0 if reached else 0.0,
        collision=-1.0 if first_collision else 0.0,
        smoothness=smoothness,
        progress=progress,
    )


@dataclass
class EpisodeReturn:
    goal: float
    collision: float
    smoothness: float
    progress: float

    @property
    def total(self) -> float:
        return self.goal + self.collision + self.smoothness + self.progress


def episode_return(breakdowns) -> EpisodeReturn:
    """Undiscounted per-component sums over one completed episode, asserting
    the boundedness contract."""
    out = EpisodeReturn(
        goal=sum(b.goal for b in breakdowns),
        collision=sum(b.collision for b in breakdowns),
        smoothness=sum(b.smoothness for b in breakdowns),
        progress=sum(b.progress for b in breakdowns),
    )
    tol = 1e-9
    if out.goal not in (0.0, 1.0):
        raise AssertionError(f"goal sum {out.goal} outside {{0, 1}}")
    if out.collision not in (0.0, -1.0):
        raise AssertionError(f"collision sum {out.collision} outside {{-1, 0}}")
    if not (-1.0 - tol <= out.smoothness <= 0.0):
        raise AssertionError(f"smoothness sum {out.smoothness} outside [-1, 0]")
    if not (-1.0 - tol <= out.progress <= 0.0):
        raise AssertionError(f"progress sum {out.progress} outside [-1, 0]")
    return out

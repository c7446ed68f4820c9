"""Trust scores, budget-normalized rewards, and Gompertz reputation.

Each charging station accumulates a trust score from its per-round cluster
membership; rewards are proportional to majority-membership counts and
normalized into a fixed budget at task end, when reputations take one
Gompertz-transform step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import IncentiveConfig


def score_delta(
    cluster_sizes: list[int],
    own_cluster_idx: int,
    dist_to_centroid: float,
    eta: float,
    alpha_dist: float,
) -> float:
    """Score-update magnitude: larger for big clusters, damped by distance
    from the majority centroid."""
    total = sum(cluster_sizes)
    if total <= 0 or min(cluster_sizes) <= 0:
        raise ValueError("cluster sizes must be positive")
    if dist_to_centroid < 0:
        raise ValueError("distance must be nonnegative")
    share = cluster_sizes[own_cluster_idx] / total
    return eta * share * math.exp(-alpha_dist * dist_to_centroid)


def apply_score(s_old: float, delta_s: float, in_majority: bool) -> float:
    """Add the magnitude for majority members, subtract it for outliers."""
    return s_old + delta_s if in_majority else s_old - delta_s


def normalize_rewards(counts: list[int], reward_b: float, budget: float) -> list[float]:
    """Per-station rewards proportional to majority counts, scaled so the
    total exactly equals the budget; all-zero counts pay nothing."""
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    raw = [reward_b * n for n in counts]
    total = sum(raw)
    if total <= 0:
        return [0.0] * len(counts)
    return [r / total * budget for r in raw]


def gompertz_transform(x: float, b: float, c: float) -> float:
    return math.exp(-b * math.exp(-c * x))


def gompertz_reputation(r_old: float, score: float, a: float, b: float, c: float) -> float:
    """One reputation step: exponential forgetting toward the Gompertz
    transform of the trust score."""
    if not (0.0 < a < 1.0):
        raise ValueError("forgetting factor a must lie in (0, 1)")
    if b <= 0 or c <= 0:
        raise ValueError("gompertz shape parameters must be positive")
    return (1.0 - a) * r_old + a * gompertz_transform(score, b, c)


@dataclass
class StationIncentives:
    score: float = 0.0
    reputation: float = 0.5
    cumulative_reward: float = 0.0
    majority_count: int = 0
    deposit: float = 0.0
    slashed: bool = False


@dataclass
class IncentiveState:
    """Single-writer incentive book-keeping for one set of stations."""

    cfg: IncentiveConfig
    stations: dict[str, StationIncentives] = field(default_factory=dict)

    def register(self, cs_id: str, deposit: float | None = None) -> None:
        self.stations[cs_id] = StationIncentives(
            deposit=self.cfg.deposit if deposit is None else deposit
        )

    def round_update(
        self, memberships: dict[str, tuple[bool, int, float]]
    ) -> dict[str, float]:
        """Apply one round of score updates.

        ``memberships`` maps cs_id -> (in_majority, own_cluster_size,
        distance to the majority centroid); noise-labeled stations pass
        cluster size 1. Returns the applied (signed) deltas.
        """
        total = len(memberships)
        deltas = {}
        for cs_id in sorted(memberships):
            in_majority, own_size, dist = memberships[cs_id]
            st = self.stations[cs_id]
            ds = self.cfg.eta * (own_size / total) * math.exp(
                -self.cfg.alpha_dist * dist
            )
            st.score = apply_score(st.score, ds, in_majority)
            if in_majority:
                st.majority_count += 1
            deltas[cs_id] = ds if in_majority else -ds
        return deltas

    def finish_task(self) -> dict[str, float]:
        """Distribute the budget, update reputations, reset per-task counts.

        Returns the per-station rewards of the finished task.
        """
        ids = sorted(self.stations)
        counts = [self.stations[i].majority_count for i in ids]
        rewards = normalize_rewards(counts, self.cfg.reward_b, self.cfg.budget)
        g = self.cfg.gompertz
        payout = {}
        for cs_id, reward in zip(ids, rewards):
            st = self.stations[cs_id]
            st.cumulative_reward += reward
            st.reputation = gompertz_reputation(st.reputation, st.score, g.a, g.b, g.c)
            if st.reputation < self.cfg.slash_below:
                st.slashed = True
                st.deposit = 0.0
            payout[cs_id] = reward
            st.majority_count = 0
            st.score = 0.0
        return payout

    def selection_probabilities(self) -> dict[str, float]:
        """Future-task sampling weights proportional to reputation."""
        ids = sorted(self.stations)
        total = sum(self.stations[i].reputation for i in ids)
        if total <= 0:
            return {i: 1.0 / len(ids) for i in ids}
        return {i: self.stations[i].reputation / total for i in ids}

    def sample_station(self, rng: np.random.Generator) -> str:
        probs = self.selection_probabilities()
        ids = sorted(probs)
        return str(rng.choice(ids, p=[probs[i] for i in ids]))

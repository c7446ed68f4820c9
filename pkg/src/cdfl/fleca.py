"""Two-stage robust aggregation.

Stage I runs on each EV: neighbors' updates are scored by relative L2
distance on the monitored output-head layers, thresholded adaptively
(median + beta * MAD, tightened over rounds), and the survivors averaged
together with the EV's own update. A group then combines the per-EV
aggregates either by majority voting over accepted IDs (variant v1) or by
density clustering (variant v2). Stage II repeats the clustering defense
across group models at the oracles.

Baseline aggregators used for comparison live here too.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clustering import NOISE, hdbscan, largest_non_noise_cluster, pairwise_distances
from .config import FilterConfig
from .core import RoundClock, UpdateDelta, check_same_schema, flatten, mean_delta
from .errors import AggregationError, ConfigError
from .privacy import clip_update


@dataclass
class AcceptanceRecord:
    """Audit record of one EV's Stage-I filtering decision."""

    ev_id: int
    scores: dict[int, float]
    threshold: float
    accepted_ids: set[int]  # always contains the EV itself

    def as_event(self) -> dict:
        return {
            "ev": self.ev_id,
            "scores": {str(k): self.scores[k] for k in sorted(self.scores)},
            "threshold": self.threshold,
            "accepted": sorted(self.accepted_ids),
        }


def similarity_scores(
    reference: UpdateDelta, neighbors: dict[int, UpdateDelta], cfg: FilterConfig
) -> dict[int, float]:
    """Relative L2 distance to the reference, maximized over monitored layers."""
    monitored = sorted(cfg.monitored_layers)
    if not monitored:
        raise ConfigError("at least one monitored layer is required")
    check_same_schema([reference, *neighbors.values()])
    ref_norms = {
        layer: float(np.linalg.norm(reference.layers[layer])) for layer in monitored
    }
    scores = {}
    for ev_id in sorted(neighbors):
        delta = neighbors[ev_id]
        if delta.round != reference.round:
            raise AggregationError(
                f"round mismatch: neighbor {ev_id} at {delta.round}, reference at {reference.round}"
            )
        worst = 0.0
        for layer in monitored:
            diff = float(np.linalg.norm(delta.layers[layer] - reference.layers[layer]))
            worst = max(worst, diff / (ref_norms[layer] + cfg.eps_stability))
        scores[ev_id] = worst
    return scores


def adaptive_threshold(scores, beta: float, kappa: float, t: int, total: int) -> float:
    """median + beta * MAD, shrunk by the round schedule 1 + kappa * t/T."""
    values = np.asarray(list(scores), dtype=np.float64)
    if values.size == 0:
        raise AggregationError("cannot derive a threshold from zero scores")
    if total <= 0:
        raise AggregationError("total rounds must be positive")
    med = float(np.median(values))
    mad = float(np.median(np.abs(values - med)))
    return (med + beta * mad) / (1.0 + kappa * (t / total))


def ev_filter_aggregate(
    own: UpdateDelta,
    neighbors: dict[int, UpdateDelta],
    cfg: FilterConfig,
    clock: RoundClock,
    ev_id: int,
    accept_all: bool = False,
) -> tuple[UpdateDelta, AcceptanceRecord]:
    """Stage I for one EV: score, threshold, and average the accepted set.

    ``accept_all`` models a filterer that skips its duty (a Byzantine EV);
    the record still carries the true scores. With no acceptable neighbor
    the EV falls back to its own update.
    """
    scores = similarity_scores(own, neighbors, cfg)
    if scores:
        theta = adaptive_threshold(scores.values(), cfg.beta, cfg.kappa, clock.t, clock.total)
    else:
        theta = 0.0
    if accept_all:
        accepted = set(neighbors)
    else:
        accepted = {k for k, s in scores.items() if s <= theta}
    members = [own] + [neighbors[k] for k in sorted(accepted)]
    aggregate = mean_delta(members)
    record = AcceptanceRecord(
        ev_id=ev_id, scores=scores, threshold=theta, accepted_ids=accepted | {ev_id}
    )
    return aggregate, record


def majority_vote_aggregate(
    records: list[AcceptanceRecord], models: dict[int, UpdateDelta]
) -> UpdateDelta:
    """Variant v1 group aggregation: average the per-EV aggregates whose IDs
    were accepted by a strict majority, falling back to the most-accepted IDs
    when no strict majority exists."""
    if not records:
        raise AggregationError("majority voting needs at least one record")
    counts: dict[int, int] = {}
    for rec in records:
        for ev_id in rec.accepted_ids:
            counts[ev_id] = counts.get(ev_id, 0) + 1
    half = len(records) / 2.0
    selected = sorted(k for k, c in counts.items() if c > half)
    if not selected:
        top = max(counts.values())
        selected = sorted(k for k, c in counts.items() if c == top)
    selected = [k for k in selected if k in models]
    if not selected:
        raise AggregationError("no voted model is available for aggregation")
    return mean_delta([models[k] for k in selected])


@dataclass
class ClusterOutcome:
    aggregate: UpdateDelta
    labels: np.ndarray
    members: list[int]  # indices averaged into the aggregate
    centroid: np.ndarray  # majority-cluster centroid in the distance space
    vectors: list[np.ndarray]  # the flattened points that were clustered


def cluster_aggregate_detailed(
    updates: list[UpdateDelta],
    min_pts: int,
    monitored_layers=None,
) -> ClusterOutcome:
    """Density-clustering aggregation with full diagnostics.

    Distances are computed on the monitored layers (or the full vector when
    ``monitored_layers`` is None); the mean is always taken over full deltas.
    """
    if not updates:
        raise AggregationError("cannot aggregate zero updates")
    if len(updates) == 1:
        vec = flatten(updates[0], monitored_layers)
        return ClusterOutcome(updates[0], np.zeros(1, dtype=np.int64), [0], vec, [vec])
    check_same_schema(updates)
    vectors = [flatten(u, monitored_layers) for u in updates]
    labels = hdbscan(pairwise_distances(vectors), min_pts)
    members = largest_non_noise_cluster(labels)
    aggregate = mean_delta([updates[i] for i in members])
    centroid = np.mean([vectors[i] for i in members], axis=0)
    return ClusterOutcome(aggregate, labels, members, centroid, vectors)


def cluster_aggregate(updates, min_pts: int, monitored_layers=None) -> UpdateDelta:
    return cluster_aggregate_detailed(updates, min_pts, monitored_layers).aggregate


# --- Baseline aggregators ---------------------------------------------------


def baseline_aggregate(
    kind: str,
    updates: list[UpdateDelta],
    *,
    trim_count: int = 1,
    krum_f: int = 1,
    krum_m: int = 1,
    clip: float = 4.0,
    sigma: float = 0.005,
    flame_noise: float = 0.001,
    rng: np.random.Generator | None = None,
) -> UpdateDelta:
    """Reference aggregation rules adapted to the clustered setting."""
    if not updates:
        raise AggregationError("cannot aggregate zero updates")
    check_same_schema(updates)
    n = len(updates)
    if kind == "fedavg":
        return mean_delta(updates)
    if kind == "trimmed_mean":
        if 2 * trim_count >= n:
            raise ConfigError(f"trim count {trim_count} too large for {n} updates")
        template = updates[0]
        stacked = np.stack([flatten(u) for u in updates])
        ordered = np.sort(stacked, axis=0)
        kept = ordered[trim_count : n - trim_count]
        if np.all(kept == kept[0]):
            return _unflatten_like(kept[0], template)
        return _unflatten_like(kept.mean(axis=0), template)
    if kind == "multi_krum":
        if n < 2 * krum_f + 3:
            raise ConfigError(f"multi-krum needs n >= 2f+3, got n={n}, f={krum_f}")
        if not (1 <= krum_m <= n):
            raise ConfigError("krum_m must lie in [1, n]")
        scores = krum_scores(updates, krum_f)
        order = np.argsort(scores, kind="stable")
        return mean_delta([updates[int(i)] for i in order[:krum_m]])
    if kind == "norm_clip":
        return mean_delta([clip_update(u, clip) for u in updates])
    if kind == "weak_dp":
        if rng is None:
            raise ConfigError("weak_dp requires a random generator")
        clipped = mean_delta([clip_update(u, clip) for u in updates])
        from .privacy import add_gaussian_noise

        return add_gaussian_noise(clipped, sigma, rng)
    if kind == "flame_lite":
        if rng is None:
            raise ConfigError("flame_lite requires a random generator")
        return _flame_lite(updates, flame_noise, rng)
    raise ConfigError(f"unknown aggregator kind {kind!r}")


def krum_scores(updates: list[UpdateDelta], f: int) -> np.ndarray:
    """Sum of squared distances to the n-f-2 nearest other updates."""
    n = len(updates)
    d = pairwise_distances([flatten(u) for u in updates])
    sq = d * d
    keep = n - f - 2
    scores = np.empty(n)
    for i in range(n):
        others = np.sort(np.delete(sq[i], i))
        scores[i] = float(np.sum(others[:keep]))
    return scores


def _flame_lite(updates, noise_factor: float, rng: np.random.Generator) -> UpdateDelta:
    """Cosine-distance clustering admission, median-norm clipping, then noise."""
    n = len(updates)
    vectors = [flatten(u) for u in updates]
    admitted = list(range(n))
    if n >= 3:
        labels = hdbscan(pairwise_distances(vectors, metric="cosine"), max(2, n // 2 + 1))
        admitted = largest_non_noise_cluster(labels)
    norms = [float(np.linalg.norm(vectors[i])) for i in admitted]
    median_norm = float(np.median(norms))
    if median_norm <= 0:
        return mean_delta([updates[i] for i in admitted])
    clipped = [clip_update(updates[i], median_norm) for i in admitted]
    aggregate = mean_delta(clipped)
    from .privacy import add_gaussian_noise

    return add_gaussian_noise(aggregate, noise_factor * median_norm, rng)


def _unflatten_like(vector: np.ndarray, template: UpdateDelta) -> UpdateDelta:
    from .core import unflatten

    return unflatten(vector, template)

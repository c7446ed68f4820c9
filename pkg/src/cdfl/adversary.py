"""Byzantine placement and the attack suite.

Fully malicious groups submit attacker-controlled group models directly;
malicious EVs inside benign groups poison their data or their shared
updates and accept every neighbor when filtering. Colluders within one
group draw from a shared random stream so coordinated attacks submit
consistent vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import AdversaryConfig, ExperimentConfig
from .core import UpdateDelta, flatten, mean_delta, unflatten
from .data import CAPACITY_MAX, Dataset
from .errors import ConfigError
from .fleca import krum_scores

DATA_ATTACKS = ("label_flip", "feature", "badnets")
MODEL_ATTACKS = ("gauss", "trim_attack", "krum_attack", "adaptive_minmax", "scaling")
BACKDOOR_ATTACKS = ("badnets", "scaling")
TRIGGER_FEATURES = (6, 7)


@dataclass(frozen=True)
class ThreatPlacement:
    malicious_groups: frozenset[int]
    malicious_evs: dict[int, frozenset[int]]  # benign group -> member indices
    group_fraction: float
    ev_fraction: float

    def is_group_malicious(self, group: int) -> bool:
        return group in self.malicious_groups

    def is_ev_malicious(self, group: int, member: int) -> bool:
        if group in self.malicious_groups:
            return True
        return member in self.malicious_evs.get(group, frozenset())


def place_threats(cfg: ExperimentConfig, rng: np.random.Generator) -> ThreatPlacement:
    """Pick which groups are fully malicious and which EVs are Byzantine
    inside the remaining groups."""
    adv = cfg.adversary
    n_groups = cfg.group_count
    n_bad_groups = int(round(adv.malicious_group_fraction * n_groups))
    bad_groups = frozenset(
        int(g) for g in rng.choice(n_groups, size=n_bad_groups, replace=False)
    )
    n_bad_evs = int(np.floor(adv.malicious_ev_fraction * cfg.group_size))
    bad_evs = {}
    for group in range(n_groups):
        if group in bad_groups:
            continue
        members = rng.choice(cfg.group_size, size=n_bad_evs, replace=False)
        bad_evs[group] = frozenset(int(m) for m in members)
    return ThreatPlacement(
        malicious_groups=bad_groups,
        malicious_evs=bad_evs,
        group_fraction=adv.malicious_group_fraction,
        ev_fraction=adv.malicious_ev_fraction,
    )


def poison_data(partition: Dataset, adv: AdversaryConfig, rng: np.random.Generator) -> Dataset:
    """Apply a data-poisoning attack to one EV's local dataset."""
    kind = adv.attack
    if kind not in DATA_ATTACKS:
        raise ConfigError(f"{kind!r} is not a data-poisoning attack")
    out = partition.copy()
    n = len(out)
    if kind == "label_flip":
        count = int(round(adv.flip_rate * n))
        idx = rng.choice(n, size=count, replace=False)
        out.anomaly[idx] = 1 - out.anomaly[idx]
    elif kind == "feature":
        count = int(round(adv.poison_rate * n))
        idx = rng.choice(n, size=count, replace=False)
        out.features[idx, adv.feature_index] += adv.feature_shift
        out.capacity[idx] = CAPACITY_MAX
    elif kind == "badnets":
        count = int(round(adv.trigger_rate * n))
        idx = rng.choice(n, size=count, replace=False)
        for f in TRIGGER_FEATURES:
            out.features[idx, f] += adv.trigger_offset
        out.anomaly[idx] = adv.target_label
    return out


def stamp_trigger(data: Dataset, adv: AdversaryConfig) -> Dataset:
    """Apply the backdoor trigger to every sample (labels untouched)."""
    out = data.copy()
    for f in TRIGGER_FEATURES:
        out.features[:, f] += adv.trigger_offset
    return out


def poison_update(
    visible: list[UpdateDelta],
    own_benign: UpdateDelta,
    adv: AdversaryConfig,
    rng: np.random.Generator,
    group_size: int,
) -> UpdateDelta:
    """Craft a malicious update given the benign updates the attacker sees.

    Attacks that need visibility fall back to gauss when ``visible`` is
    empty.
    """
    kind = adv.attack
    if kind not in MODEL_ATTACKS:
        raise ConfigError(f"{kind!r} is not a model-poisoning attack")
    if kind == "scaling":
        gamma = adv.gamma_scale if adv.gamma_scale is not None else float(group_size)
        return UpdateDelta(
            {k: gamma * v for k, v in own_benign.layers.items()}, own_benign.round
        )
    if not visible and kind != "gauss":
        kind = "gauss"

    if kind == "gauss":
        pool = visible if visible else [own_benign]
        spread = float(np.std(np.concatenate([flatten(u) for u in pool])))
        sigma = adv.sigma_scale * (spread if spread > 0 else 1.0)
        noise = rng.normal(0.0, sigma, size=flatten(own_benign).size)
        return unflatten(noise, own_benign)

    stacked = np.stack([flatten(u) for u in visible])
    if kind == "trim_attack":
        lo = stacked.min(axis=0)
        hi = stacked.max(axis=0)
        span = hi - lo + 1e-12
        mean_sign = np.sign(stacked.mean(axis=0))
        crafted = np.where(mean_sign > 0, lo - adv.eps_adv * span, hi + adv.eps_adv * span)
        return unflatten(crafted, own_benign)
    if kind == "krum_attack":
        return _krum_attack(visible, stacked, own_benign, rng)
    if kind == "adaptive_minmax":
        return _adaptive_minmax(stacked, own_benign)
    raise ConfigError(f"unhandled attack kind {kind!r}")


def _krum_attack(visible, stacked, own_benign, rng) -> UpdateDelta:
    """Common colluder vector opposite the benign mean, with the scale
    line-searched so the crafted update still wins the Krum selection."""
    mean = stacked.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    direction = -mean / norm if norm > 0 else rng.normal(size=mean.size)
    base = max(norm, 1e-6)
    chosen = None
    for scale in [base * (10.0 / 2**i) for i in range(12)]:
        crafted = unflatten(direction * scale, own_benign)
        candidates = list(visible) + [crafted]
        f = max(1, len(visible) // 3)
        if len(candidates) < 2 * f + 3:
            f = max(0, (len(candidates) - 3) // 2)
        if f < 1:
            break
        scores = krum_scores(candidates, f)
        if int(np.argmin(scores)) == len(candidates) - 1:
            chosen = crafted
            break
    if chosen is None:
        chosen = unflatten(direction * base * 0.5, own_benign)
    return chosen


def _adaptive_minmax(stacked: np.ndarray, own_benign: UpdateDelta) -> UpdateDelta:
    """Largest perturbation of the benign mean that stays within the maximal
    benign pairwise distance (20-step binary search)."""
    mean = stacked.mean(axis=0)
    centered = stacked - mean
    perturbation = -np.std(stacked, axis=0)
    pnorm = float(np.linalg.norm(perturbation))
    if pnorm == 0:
        perturbation = np.ones_like(mean)
        pnorm = float(np.linalg.norm(perturbation))
    perturbation = perturbation / pnorm
    max_pairwise = 0.0
    n = stacked.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            max_pairwise = max(max_pairwise, float(np.linalg.norm(stacked[i] - stacked[j])))

    def admissible(gamma: float) -> bool:
        crafted = mean + gamma * perturbation
        worst = max(float(np.linalg.norm(crafted - stacked[i])) for i in range(n))
        return worst <= max_pairwise

    lo, hi = 0.0, max(max_pairwise, 1e-9) * 4.0
    for _ in range(20):
        mid = (lo + hi) / 2.0
        if admissible(mid):
            lo = mid
        else:
            hi = mid
    return unflatten(mean + lo * perturbation, own_benign)


def malicious_group_update(
    benign_group_updates: list[UpdateDelta],
    honest_members: list[UpdateDelta],
    adv: AdversaryConfig,
    rng: np.random.Generator,
    group_size: int,
) -> UpdateDelta:
    """What a fully compromised group submits instead of running Stage I.

    Data-poisoning attacks train honestly on poisoned data, so the group
    model is just the mean of its members' (already poisoned) updates;
    model-poisoning attacks craft the group model directly.
    """
    own = mean_delta(honest_members)
    if adv.attack in DATA_ATTACKS:
        return own
    return poison_update(benign_group_updates, own, adv, rng, group_size)

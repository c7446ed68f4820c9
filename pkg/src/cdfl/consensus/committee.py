"""Reputation-weighted, verifiably random committee and leader selection.

Each epoch, a seed is derived from the last finalized block; a VRF turns it
into a verifiable random value, extended into one value per committee slot
by iterated hashing. Every value maps through the inverse CDF of the
candidates' reputation weights. Draws are independent (with replacement),
so duplicates merge and the committee may hold fewer distinct members than
slots. Anyone holding the proof can recompute the identical member list.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from ..crypto import VRF_BITS, KeyRegistry, VrfOutput, vrf_extend
from ..errors import ConfigError

WEIGHT_QUANTUM = 1000  # fixed-point factor for the modular leader formula


@dataclass(frozen=True)
class Committee:
    members: tuple[str, ...]  # distinct ids, first-draw order
    draws: tuple[str, ...]  # all slot outcomes, before deduplication
    epoch: int
    source_hash: str
    vrf_value: int
    proof: str
    selector: str  # public key of the VRF holder

    @property
    def quorum(self) -> int:
        c = len(self.members)
        return -(-2 * c // 3)  # ceil(2c/3)

    @property
    def fault_tolerance(self) -> int:
        return (len(self.members) - 1) // 3


def _seed(source_hash: str) -> bytes:
    return hashlib.sha256(source_hash.encode("utf-8")).digest()


def _draws_from_chain(chain, candidates) -> list[str]:
    ids = [c[0] for c in candidates]
    weights = [float(c[1]) for c in candidates]
    total = sum(weights)
    cumulative = []
    acc = 0.0
    for w in weights:
        acc += w
        cumulative.append(acc / total)
    draws = []
    for value in chain:
        u = value / 2**VRF_BITS
        for idx, bound in enumerate(cumulative):
            if bound > u:
                draws.append(ids[idx])
                break
        else:
            draws.append(ids[-1])  # u == 1.0 edge, unreachable in practice
    return draws


def select_committee(
    candidates: list[tuple[str, float]],
    size: int,
    last_block_hash: str,
    selector_secret: bytes,
    registry: KeyRegistry,
    epoch: int = 0,
) -> Committee:
    if not candidates:
        raise ConfigError("no committee candidates")
    if any(w <= 0 for _, w in candidates):
        raise ConfigError("candidate weights must be positive")
    if size < 1:
        raise ConfigError("committee size must be >= 1")
    out = registry.vrf_eval(selector_secret, _seed(last_block_hash))
    chain = vrf_extend(out.value, size)
    draws = _draws_from_chain(chain, candidates)
    return Committee(
        members=tuple(dict.fromkeys(draws)),
        draws=tuple(draws),
        epoch=epoch,
        source_hash=last_block_hash,
        vrf_value=out.value,
        proof=out.proof,
        selector=KeyRegistry.public_of(selector_secret),
    )


def verify_committee(
    committee: Committee,
    candidates: list[tuple[str, float]],
    size: int,
    registry: KeyRegistry,
) -> bool:
    """Re-run the selection from the published proof; True iff it reproduces
    the exact member list."""
    out = VrfOutput(value=committee.vrf_value, proof=committee.proof)
    if not registry.vrf_verify(committee.selector, _seed(committee.source_hash), out):
        return False
    chain = vrf_extend(committee.vrf_value, size)
    draws = _draws_from_chain(chain, candidates)
    return tuple(dict.fromkeys(draws)) == committee.members and tuple(draws) == committee.draws


def quantize_weights(weights: list[float]) -> list[int]:
    """Fixed-point weights for modular arithmetic; zero floors to one so a
    live validator never becomes unelectable."""
    return [max(1, int(w * WEIGHT_QUANTUM)) for w in weights]


def elect_leader(members: list[str], weights: list[int], randomness: int) -> str:
    """Map round randomness onto the cumulative weight ring."""
    if not members or len(members) != len(weights):
        raise ConfigError("members and weights must align")
    total = sum(weights)
    idx = randomness % total
    acc = 0
    for member, w in zip(members, weights):
        acc += w
        if acc > idx:
            return member
    return members[-1]


def round_randomness(vrf_value: int, height: int, round_no: int) -> int:
    blob = f"{vrf_value}|{height}|{round_no}".encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest(), "big")

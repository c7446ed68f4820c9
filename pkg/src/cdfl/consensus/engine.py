"""BFT finality state machine over the simulated network.

Heights finalize through propose / prepare / commit with quorum ceil(2c/3)
of the epoch committee. Round changes carry the sender's prepared lock;
proposals for later rounds must re-propose the highest lock found in their
round-change justification, which is what keeps finalized heights safe
across views. Validators that fall behind catch up through finality
certificates (block + commit quorum) served on demand.

Byzantine behaviors: silent, equivocate (double propose and double vote),
delay (honest but slow), withhold (never votes).
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field

from ..crypto import KeyRegistry
from ..rng import RngHub
from .committee import (
    Committee,
    elect_leader,
    quantize_weights,
    round_randomness,
    select_committee,
)
from .network import NetworkModel, SimNetwork

GENESIS_HASH = "genesis"
MAX_BLOCK_TXS = 200
BEHAVIORS = ("honest", "silent", "equivocate", "delay", "withhold")


class Block:
    __slots__ = ("height", "parent", "proposer", "round", "txs", "marker", "_hash")

    def __init__(self, height, parent, proposer, round, txs=(), marker=0):
        self.height = height
        self.parent = parent
        self.proposer = proposer
        self.round = round
        self.txs = tuple(txs)
        self.marker = marker
        self._hash = None

    @property
    def hash(self) -> str:
        if self._hash is None:
            tx_digest = hashlib.sha256()
            for tx in self.txs:
                tx_digest.update(tx.message())
                tx_digest.update(tx.signature.encode("utf-8"))
            blob = json.dumps(
                {
                    "height": self.height,
                    "parent": self.parent,
                    "proposer": self.proposer,
                    "round": self.round,
                    "marker": self.marker,
                    "txs": tx_digest.hexdigest(),
                },
                sort_keys=True,
            )
            self._hash = hashlib.sha256(blob.encode("utf-8")).hexdigest()
        return self._hash

    def __repr__(self):
        return f"Block(h={self.height}, r={self.round}, {self.hash[:8]})"


@dataclass(frozen=True)
class Proposal:
    height: int
    round: int
    block: Block
    justification: tuple  # RoundChange messages for round > 0
    sender: str


@dataclass(frozen=True)
class Prepare:
    height: int
    round: int
    digest: str
    sender: str


@dataclass(frozen=True)
class Commit:
    height: int
    round: int
    digest: str
    sender: str


@dataclass(frozen=True)
class RoundChange:
    height: int
    round: int  # the round being moved to
    prepared_digest: str | None
    prepared_round: int | None
    prepared_block: Block | None
    sender: str


@dataclass(frozen=True)
class Certificate:
    block: Block
    commits: tuple
    sender: str


@dataclass(frozen=True)
class SyncRequest:
    height: int
    sender: str


@dataclass(frozen=True)
class Timeout:
    height: int
    round: int


class Validator:
    def __init__(self, vid: str, behavior: str, engine: "Engine"):
        self.id = vid
        self.behavior = behavior
        self.engine = engine
        self.height = engine.start_height
        self.round = 0
        self.proposals: dict[tuple, dict[str, Proposal]] = {}
        self.prepares: dict[tuple, dict[str, Prepare]] = {}
        self.commits: dict[tuple, dict[str, Commit]] = {}
        self.round_changes: dict[tuple, dict[str, RoundChange]] = {}
        self.certificates: dict[int, Certificate] = {}
        self.finalized: dict[int, Block] = dict(engine.prefinalized)
        self.locks: dict[int, tuple[str, int, Block]] = {}
        self.sent_prepare: set[tuple] = set()
        self.sent_commit: set[tuple] = set()
        self.sent_rc: dict[int, int] = {}
        self.proposed: set[tuple] = set()
        self.synced_peers: set[tuple] = set()

    # -- helpers -----------------------------------------------------------

    @property
    def honest(self) -> bool:
        return self.behavior in ("honest", "delay")

    def committee(self) -> Committee:
        return self.engine.committee_for(self.height)

    def quorum(self) -> int:
        return self.committee().quorum

    def f_tol(self) -> int:
        return self.committee().fault_tolerance

    def is_member(self, vid: str) -> bool:
        return vid in self.committee().members

    def leader_of(self, height: int, round_no: int) -> str:
        return self.engine.leader_for(height, round_no)

    # -- entry points ------------------------------------------------------

    def start(self, now: int) -> None:
        self.enter_round(0, now)

    def enter_height(self, height: int, now: int) -> None:
        self.height = height
        self.round = 0
        if self.engine.height_limit is not None and height >= self.engine.height_limit:
            return
        self.enter_round(0, now)

    def enter_round(self, round_no: int, now: int) -> None:
        self.round = round_no
        self.engine.trace_event(
            {"kind": "round_start", "tick": now, "validator": self.id,
             "height": self.height, "round": round_no,
             "byzantine": not self.honest}
        )
        if self.behavior == "silent":
            return
        self.engine.schedule_timeout(self.id, self.height, round_no, now)
        if self.leader_of(self.height, round_no) == self.id and self.is_member(self.id):
            self.maybe_propose(now)

    def maybe_propose(self, now: int) -> None:
        key = (self.height, self.round)
        if key in self.proposed or self.behavior == "silent":
            return
        justification: tuple = ()
        block_template = None
        if self.round > 0:
            rcs = self.round_changes.get(key, {})
            valid = [m for m in rcs.values() if self.is_member(m.sender)]
            if len(valid) < self.quorum():
                return  # cannot justify this round yet
            justification = tuple(sorted(valid, key=lambda m: m.sender))
            block_template = _highest_lock(justification)
        parent = self.finalized.get(self.height - 1)
        parent_hash = parent.hash if parent else self.engine.genesis_hash
        if block_template is not None:
            block = Block(
                self.height, parent_hash, self.id, self.round,
                block_template.txs, block_template.marker,
            )
            blocks = [block]
        else:
            txs = self.engine.take_txs()
            block = Block(self.height, parent_hash, self.id, self.round, txs)
            blocks = [block]
            if self.behavior == "equivocate":
                blocks.append(Block(self.height, parent_hash, self.id, self.round, txs, marker=1))
        self.proposed.add(key)
        members = list(self.committee().members)
        if len(blocks) == 1:
            self.engine.broadcast(
                self, Proposal(self.height, self.round, blocks[0], justification, self.id), now
            )
        else:
            half = len(members) // 2
            for vid in members[:half]:
                self.engine.send(self, vid, Proposal(self.height, self.round, blocks[0], justification, self.id), now)
            for vid in members[half:]:
                self.engine.send(self, vid, Proposal(self.height, self.round, blocks[1], justification, self.id), now)
            self.deliver(Proposal(self.height, self.round, blocks[0], justification, self.id), now)

    # -- message handling ----------------------------------------------------

    def deliver(self, msg, now: int) -> None:
        if self.behavior == "silent":
            # A crashed validator: drops everything on the floor.
            return
        if isinstance(msg, Timeout):
            self.on_timeout(msg, now)
            return
        if isinstance(msg, SyncRequest):
            self.on_sync_request(msg, now)
            return
        if isinstance(msg, Certificate):
            if msg.block.height >= self.height and msg.block.height not in self.finalized:
                self.certificates[msg.block.height] = msg
        elif isinstance(msg, Proposal):
            self._log(self.proposals, (msg.height, msg.round), msg)
        elif isinstance(msg, Prepare):
            self._log(self.prepares, (msg.height, msg.round, msg.digest), msg)
        elif isinstance(msg, Commit):
            self._log(self.commits, (msg.height, msg.round, msg.digest), msg)
        elif isinstance(msg, RoundChange):
            self._log(self.round_changes, (msg.height, msg.round), msg)
        height = getattr(msg, "height", None)
        if height is not None and not isinstance(msg, Certificate):
            if height > self.height and (msg.sender, self.height) not in self.synced_peers:
                self.synced_peers.add((msg.sender, self.height))
                self.engine.send(self, msg.sender, SyncRequest(self.height, self.id), now)
            elif height < self.height and height in self.finalized:
                self._serve_certificate(msg.sender, height, now)
        self.react(now)

    def _log(self, store, key, msg) -> None:
        store.setdefault(key, {})
        if isinstance(msg, Proposal):
            # Keep every distinct digest but only the first per digest.
            store[key].setdefault(msg.block.hash, msg)
        else:
            store[key].setdefault(msg.sender, msg)

    def on_sync_request(self, msg: SyncRequest, now: int) -> None:
        if msg.height in self.finalized:
            self._serve_certificate(msg.sender, msg.height, now)

    def _serve_certificate(self, peer: str, height: int, now: int) -> None:
        cert = self.engine.canonical_certificate(height)
        if cert is not None:
            self.engine.send(self, peer, cert, now)

    def on_timeout(self, msg: Timeout, now: int) -> None:
        if msg.height != self.height or msg.round != self.round:
            return  # stale timer
        if self.height in self.finalized:
            return
        self.advance_round(self.round + 1, now)

    def advance_round(self, target: int, now: int) -> None:
        """View change: move to a later round, tell everyone, re-arm the timer."""
        if target <= self.round:
            return
        self.round = target
        self.engine.trace_event(
            {"kind": "round_start", "tick": now, "validator": self.id,
             "height": self.height, "round": target, "byzantine": not self.honest}
        )
        if self.sent_rc.get(self.height, -1) < target and self.behavior != "silent":
            self.sent_rc[self.height] = target
            lock = self.locks.get(self.height)
            rc = RoundChange(
                self.height, target,
                lock[0] if lock else None,
                lock[1] if lock else None,
                lock[2] if lock else None,
                self.id,
            )
            self.engine.trace_event(
                {"kind": "view_change", "tick": now, "validator": self.id,
                 "height": self.height, "round": target, "byzantine": not self.honest}
            )
            self.engine.broadcast(self, rc, now)
        self.engine.schedule_timeout(self.id, self.height, target, now)
        if (
            self.leader_of(self.height, target) == self.id
            and self.is_member(self.id)
        ):
            self.maybe_propose(now)
        self.react(now)

    # -- the transition relation ---------------------------------------------

    def react(self, now: int) -> None:
        progressed = True
        while progressed:
            progressed = False
            if self.engine.height_limit is not None and self.height >= self.engine.height_limit:
                return
            h, r = self.height, self.round
            quorum = self.quorum()

            # Adopt a finality certificate for the current height.
            cert = self.certificates.pop(h, None)
            if cert is not None and h not in self.finalized and self._verify_certificate(cert):
                self.finalize(cert.block, cert.commits, now)
                progressed = True
                continue

            # Round-change amplification: f+1 peers ahead pulls us forward.
            future_targets = sorted(
                target for (hh, target), msgs in self.round_changes.items()
                if hh == h and target > r and len(self._member_msgs(msgs)) >= self.f_tol() + 1
            )
            if future_targets:
                self.advance_round(future_targets[0], now)
                progressed = True
                continue

            # A validly justified proposal for a later round is proof enough
            # that the network moved on.
            for (hh, rr), by_digest in sorted(self.proposals.items()):
                if hh != h or rr <= r:
                    continue
                if any(self._proposal_valid(p) for p in by_digest.values()):
                    self.advance_round(rr, now)
                    progressed = True
                    break
            if progressed:
                continue

            # Leader may now be able to propose (round-change quorum arrived).
            if (
                self.leader_of(h, r) == self.id
                and self.is_member(self.id)
                and (h, r) not in self.proposed
                and r > 0
            ):
                self.maybe_propose(now)
                if (h, r) in self.proposed:
                    progressed = True
                    continue

            # Prepare on a valid proposal.
            proposals = self.proposals.get((h, r), {})
            for digest in sorted(proposals):
                proposal = proposals[digest]
                if not self._proposal_valid(proposal):
                    continue
                if self.behavior == "withhold":
                    break
                key = (h, r) if self.behavior != "equivocate" else (h, r, digest)
                if key in self.sent_prepare:
                    continue
                self.sent_prepare.add(key)
                self.engine.broadcast(self, Prepare(h, r, digest, self.id), now)
                progressed = True
                if self.behavior != "equivocate":
                    break

            # Commit once a prepare quorum exists for a known proposal.
            for (hh, rr, digest), msgs in sorted(self.prepares.items()):
                if hh != h or rr != r:
                    continue
                if len(self._member_msgs(msgs)) < quorum:
                    continue
                proposal = self.proposals.get((h, r), {}).get(digest)
                if proposal is None or not self._proposal_valid(proposal):
                    continue
                if self.behavior == "withhold":
                    continue
                key = (h, r) if self.behavior != "equivocate" else (h, r, digest)
                if key in self.sent_commit:
                    continue
                current = self.locks.get(h)
                if current is None or current[1] <= r:
                    self.locks[h] = (digest, r, proposal.block)
                self.sent_commit.add(key)
                self.engine.broadcast(self, Commit(h, r, digest, self.id), now)
                progressed = True

            # Finalize once a commit quorum exists for a known block.
            for (hh, rr, digest), msgs in sorted(self.commits.items()):
                if hh != h:
                    continue
                members = self._member_msgs(msgs)
                if len(members) < quorum:
                    continue
                proposal = self.proposals.get((hh, rr), {}).get(digest)
                if proposal is None:
                    continue
                self.finalize(
                    proposal.block,
                    tuple(sorted(members.values(), key=lambda m: m.sender)),
                    now,
                )
                progressed = True
                break

    def _member_msgs(self, msgs: dict) -> dict:
        committee = self.committee().members
        return {s: m for s, m in msgs.items() if s in committee}

    def _proposal_valid(self, proposal: Proposal) -> bool:
        h, r = proposal.height, proposal.round
        if proposal.sender != self.leader_of(h, r):
            return False
        if not self.is_member(proposal.sender):
            return False
        parent = self.finalized.get(h - 1)
        parent_hash = parent.hash if parent else self.engine.genesis_hash
        if proposal.block.parent != parent_hash:
            return False
        if r == 0:
            return True
        just = [m for m in proposal.justification
                if isinstance(m, RoundChange) and m.height == h and m.round == r
                and self.is_member(m.sender)]
        distinct = {m.sender: m for m in just}
        if len(distinct) < self.quorum():
            return False
        lock = _highest_lock(tuple(distinct.values()))
        if lock is not None and proposal.block.hash != Block(
            h, proposal.block.parent, proposal.sender, r, lock.txs, lock.marker
        ).hash:
            # Must re-propose the highest prepared block's contents.
            return False
        return True

    def _verify_certificate(self, cert: Certificate) -> bool:
        block = cert.block
        committee = self.engine.committee_for(block.height)
        senders = {c.sender for c in cert.commits
                   if isinstance(c, Commit) and c.digest == block.hash
                   and c.height == block.height and c.sender in committee.members}
        if len(senders) < committee.quorum:
            return False
        parent = self.finalized.get(block.height - 1)
        parent_hash = parent.hash if parent else self.engine.genesis_hash
        return block.height == self.height and block.parent == parent_hash

    def finalize(self, block: Block, commit_msgs: tuple, now: int) -> None:
        if block.height in self.finalized:
            return
        self.finalized[block.height] = block
        self.engine.on_finalized(self, block, commit_msgs, now)
        self.engine.trace_event(
            {"kind": "finalize", "tick": now, "validator": self.id,
             "height": block.height, "digest": block.hash,
             "round": block.round, "byzantine": not self.honest}
        )
        if self.behavior != "silent":
            self.engine.broadcast(self, Certificate(block, commit_msgs, self.id), now)
        self.enter_height(block.height + 1, now + self.engine.block_time)


def _highest_lock(round_changes: tuple) -> RoundChange | None:
    best = None
    for m in round_changes:
        if m.prepared_block is None:
            continue
        if best is None or (m.prepared_round or -1) > (best.prepared_round or -1):
            best = m
    return best


class Engine:
    """Owns the validators, the committees, the tx pool, and the clock."""

    def __init__(
        self,
        candidates: list[tuple[str, float]],
        behaviors: dict[str, str],
        network_model: NetworkModel,
        hub: RngHub,
        committee_size: int | None = None,
        epoch_length: int = 10,
        block_time: int = 1,
        rotate_committee: bool = True,
        height_limit: int | None = None,
        start_height: int = 0,
        genesis_hash: str = GENESIS_HASH,
        registry: KeyRegistry | None = None,
        trace_sends: bool = False,
        prefinalized: dict | None = None,
    ):
        self.candidates = list(candidates)
        self.behaviors = dict(behaviors)
        self.network = SimNetwork(network_model, hub.stream("consensus", "net"))
        self.hub = hub
        self.committee_size = committee_size or len(candidates)
        self.epoch_length = epoch_length
        self.block_time = block_time
        self.rotate = rotate_committee
        self.height_limit = height_limit
        self.start_height = start_height
        self.genesis_hash = genesis_hash
        self.registry = registry or KeyRegistry()
        self.trace_sends = trace_sends
        self.prefinalized = dict(prefinalized or {})

        self.keys = {
            vid: self.registry.new_keypair(hub.stream("consensus", "keys", vid))
            for vid, _ in candidates
        }
        self.trace: list[dict] = []
        self.tx_pool: list = []
        self.canonical: dict[int, Block] = dict(self.prefinalized)
        self.certificates: dict[int, Certificate] = {}
        self.committees: dict[int, Committee] = {}
        self.now = 0
        self.max_round_seen = 0
        self.validators = {
            vid: Validator(vid, self.behaviors.get(vid, "honest"), self)
            for vid, _ in candidates
        }

    # -- committee / leader services ---------------------------------------

    def committee_for(self, height: int) -> Committee:
        epoch = height // self.epoch_length if self.rotate else 0
        if epoch in self.committees:
            return self.committees[epoch]
        if epoch == 0:
            source = self.genesis_hash
            selector = self.candidates[0][0]
        else:
            boundary = epoch * self.epoch_length - 1
            block = self.canonical.get(boundary)
            # The committee seed needs the boundary block; validators only
            # reach this height after it finalizes, so this is available.
            source = block.hash if block else f"{self.genesis_hash}|{epoch}"
            selector = self.committees[epoch - 1].members[0] if epoch - 1 in self.committees else self.candidates[0][0]
        committee = select_committee(
            self.candidates,
            self.committee_size,
            source,
            self.keys[selector].secret,
            self.registry,
            epoch=epoch,
        )
        self.committees[epoch] = committee
        self.trace_event(
            {"kind": "committee", "tick": self.now, "epoch": epoch,
             "members": list(committee.members), "selector": selector,
             "source": source}
        )
        return committee

    def leader_for(self, height: int, round_no: int) -> str:
        committee = self.committee_for(height)
        weights = {vid: w for vid, w in self.candidates}
        q = quantize_weights([weights[m] for m in committee.members])
        r_t = round_randomness(committee.vrf_value, height, round_no)
        return elect_leader(list(committee.members), q, r_t)

    # -- plumbing ------------------------------------------------------------

    def take_txs(self) -> tuple:
        batch = tuple(self.tx_pool[:MAX_BLOCK_TXS])
        del self.tx_pool[: len(batch)]
        return batch

    def submit_txs(self, txs) -> None:
        self.tx_pool.extend(txs)

    def trace_event(self, event: dict) -> None:
        self.trace.append(event)

    def schedule_timeout(self, vid: str, height: int, round_no: int, now: int) -> None:
        duration = 4 * self.network.model.delta * (2**min(round_no, 12))
        self.network.schedule(vid, Timeout(height, round_no), now + duration)

    def send(self, sender: Validator, receiver: str, msg, now: int) -> None:
        extra = 3 * self.network.model.delta if sender.behavior == "delay" else 0
        if self.trace_sends:
            self.trace_event(
                {"kind": "send", "tick": now, "sender": sender.id, "receiver": receiver,
                 "msg": type(msg).__name__, "digest": _msg_digest(msg)}
            )
        self.network.send(receiver, msg, now, extra_delay=extra)

    def broadcast(self, sender: Validator, msg, now: int) -> None:
        for vid in sorted(self.validators):
            if vid == sender.id:
                continue
            self.send(sender, vid, msg, now)
        # Loopback is immediate.
        sender.deliver(msg, now)

    def on_finalized(self, validator: Validator, block: Block, commits: tuple, now: int) -> None:
        if block.height not in self.canonical:
            self.canonical[block.height] = block
            self.certificates[block.height] = Certificate(block, commits, validator.id)
        self.max_round_seen = max(self.max_round_seen, block.round)

    def canonical_certificate(self, height: int) -> Certificate | None:
        return self.certificates.get(height)

    # -- run loop --------------------------------------------------------------

    def run(self, max_ticks: int = 200_000) -> list[dict]:
        for vid in sorted(self.validators):
            self.validators[vid].start(0)
        while self.now <= max_ticks:
            event = self.network.pop()
            if event is None:
                break
            self.now = event.tick
            if self.now > max_ticks:
                break
            validator = self.validators.get(event.receiver)
            if validator is not None:
                validator.deliver(event.message, self.now)
            if self._done():
                break
        return self.trace

    def _done(self) -> bool:
        if self.height_limit is None:
            return False
        return all(
            v.height >= self.height_limit
            for v in self.validators.values()
            if v.honest
        ) and not self.tx_pool

    def honest_finalized_height(self) -> int:
        """First height not yet finalized by some honest validator."""
        fronts = []
        for v in self.validators.values():
            if not v.honest:
                continue
            h = self.start_height
            while h in v.finalized:
                h += 1
            fronts.append(h)
        return min(fronts) if fronts else self.start_height


def _msg_digest(msg) -> str:
    if isinstance(msg, Proposal):
        return msg.block.hash[:16]
    if isinstance(msg, (Prepare, Commit)):
        return msg.digest[:16]
    if isinstance(msg, Certificate):
        return msg.block.hash[:16]
    return ""

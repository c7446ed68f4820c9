"""In-process ledger: registries, task lifecycle, content-addressed blobs.

Stands in for the on-chain contracts plus off-chain storage. State changes
only through :func:`apply_tx`; every precondition failure maps to a stable
rejection code. Gas figures are a fixed per-function table used purely for
reporting; only transaction *counts* carry meaning.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .config import IncentiveConfig
from .core import UpdateDelta
from .crypto import KeyRegistry, QuorumCert, verify_quorum_cert
from .errors import ConfigError
from .incentives import gompertz_reputation, normalize_rewards


class RejectCode(str, Enum):
    NOT_REGISTERED = "NOT_REGISTERED"
    NOT_JOINED = "NOT_JOINED"
    DUPLICATE = "DUPLICATE"
    BAD_CERT = "BAD_CERT"
    UNKNOWN_CID = "UNKNOWN_CID"
    WRONG_ROUND = "WRONG_ROUND"
    UNAUTHORIZED = "UNAUTHORIZED"


TX_KINDS = (
    "registerMP",
    "registerCS",
    "registerEV",
    "publishModel",
    "joinCSModel",
    "joinEVModel",
    "submitIM",
    "submitGM",
    "updateCSScores",
    "updateEVScores",
    "distributeReward",
)

# Functions whose transaction count scales with the submitting population:
# once per EV in a flat design, once per charging station here.
EV_CLASS_FUNCTIONS = (
    "registerCS",
    "registerEV",
    "joinCSModel",
    "joinEVModel",
    "submitIM",
    "updateCSScores",
    "updateEVScores",
    "distributeReward",
)

GAS_TABLE = {
    "registerMP": 92_267,
    "publishModel": 197_677,
    "registerCS": 114_462,
    "registerEV": 114_462,
    "joinCSModel": 97_523,
    "joinEVModel": 97_523,
    "submitIM": 107_788,
    "submitGM": 102_753,
    "updateCSScores": 124_501,
    "updateEVScores": 124_501,
    "distributeReward": 119_295,
}


@dataclass
class Transaction:
    kind: str
    sender: str
    payload: dict
    signature: str = ""

    def message(self) -> bytes:
        blob = json.dumps(
            {"kind": self.kind, "sender": self.sender, "payload": self.payload},
            sort_keys=True,
            default=str,
        )
        return blob.encode("utf-8")


class BlobStore:
    """Content-addressed byte store; CID = sha256 of the content."""

    def __init__(self, persist_dir: str | Path | None = None):
        self._blobs: dict[str, bytes] = {}
        self._dir = Path(persist_dir) if persist_dir else None
        if self._dir:
            self._dir.mkdir(parents=True, exist_ok=True)

    def store(self, blob: bytes) -> str:
        cid = hashlib.sha256(blob).hexdigest()
        self._blobs[cid] = blob
        if self._dir:
            (self._dir / cid).write_bytes(blob)
        return cid

    def fetch(self, cid: str) -> bytes | None:
        blob = self._blobs.get(cid)
        if blob is None and self._dir:
            path = self._dir / cid
            if path.exists():
                blob = path.read_bytes()
                self._blobs[cid] = blob
        return blob

    def __contains__(self, cid: str) -> bool:
        return self.fetch(cid) is not None


def serialize_delta(delta: UpdateDelta) -> bytes:
    """Canonical bytes: schema digest, then layer-ordered little-endian f64."""
    schema = ",".join(f"{name}:{dim}" for name, dim in delta.schema())
    header = hashlib.sha256(schema.encode("utf-8")).digest()
    body = b"".join(
        delta.layers[name].astype("<f8").tobytes() for name in sorted(delta.layers)
    )
    return header + body


def deserialize_delta(blob: bytes, like: UpdateDelta) -> UpdateDelta:
    schema = ",".join(f"{name}:{dim}" for name, dim in like.schema())
    header = hashlib.sha256(schema.encode("utf-8")).digest()
    if blob[:32] != header:
        raise ConfigError("blob schema digest does not match the expected schema")
    flat = np.frombuffer(blob[32:], dtype="<f8")
    layers = {}
    offset = 0
    for name in sorted(like.layers):
        size = like.layers[name].size
        layers[name] = flat[offset : offset + size].copy()
        offset += size
    return UpdateDelta(layers, like.round)


@dataclass
class StationAccount:
    deposit: float = 0.0
    score: float = 0.0
    reputation: float = 0.5
    majority_count: int = 0
    reward: float = 0.0
    deposit_returned: bool = False
    slashed: bool = False


@dataclass
class TaskState:
    publisher: str
    model_cid: str
    required_cs: int
    max_rounds: int
    tau: int
    round: int = 0
    status: str = "recruiting"  # recruiting | running | complete
    stations: dict[str, StationAccount] = field(default_factory=dict)
    ev_members: dict[str, list[str]] = field(default_factory=dict)  # cs -> ev ids
    submissions: dict[int, dict[str, str]] = field(default_factory=dict)
    global_models: dict[int, str] = field(default_factory=dict)


@dataclass
class TxReceipt:
    ok: bool
    code: RejectCode | None = None
    events: list[dict] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


class LedgerState:
    """Single-writer contract state; reads are plain attribute access."""

    def __init__(
        self,
        registry: KeyRegistry,
        blobs: BlobStore,
        incentive_cfg: IncentiveConfig | None = None,
        admins: set[str] | None = None,
        oracles: set[str] | None = None,
    ):
        self.registry = registry
        self.blobs = blobs
        self.incentives = incentive_cfg or IncentiveConfig()
        self.admission_allowlist = set(admins) if admins else None  # None = open
        self.oracles = set(oracles or ())
        self.participants: dict[str, tuple[str, str]] = {}  # id -> (role, public key)
        self.tasks: dict[str, TaskState] = {}
        self.tx_counts: dict[str, int] = {k: 0 for k in TX_KINDS}
        self.rejected_counts: dict[str, int] = {}

    # -- helpers ----------------------------------------------------------

    def _reject(self, kind: str, code: RejectCode) -> TxReceipt:
        self.rejected_counts[code.value] = self.rejected_counts.get(code.value, 0) + 1
        return TxReceipt(ok=False, code=code)

    def _check_signature(self, tx: Transaction) -> bool:
        entry = self.participants.get(tx.sender)
        if entry is None:
            return False
        _, public = entry
        return self.registry.verify(public, tx.message(), tx.signature)

    def apply_tx(self, tx: Transaction) -> TxReceipt:
        if tx.kind not in TX_KINDS:
            raise ConfigError(f"unknown transaction kind {tx.kind!r}")
        handler = getattr(self, f"_apply_{tx.kind}")
        receipt = handler(tx)
        if receipt.ok:
            self.tx_counts[tx.kind] += 1
        return receipt

    # -- registration ------------------------------------------------------

    def _register(self, tx: Transaction, role: str) -> TxReceipt:
        if self.admission_allowlist is not None and tx.sender not in self.admission_allowlist:
            return self._reject(tx.kind, RejectCode.UNAUTHORIZED)
        if tx.sender in self.participants:
            return self._reject(tx.kind, RejectCode.DUPLICATE)
        public = tx.payload.get("public")
        if not public:
            return self._reject(tx.kind, RejectCode.UNAUTHORIZED)
        self.participants[tx.sender] = (role, public)
        return TxReceipt(ok=True)

    def _apply_registerMP(self, tx):
        return self._register(tx, "mp")

    def _apply_registerCS(self, tx):
        return self._register(tx, "cs")

    def _apply_registerEV(self, tx):
        return self._register(tx, "ev")

    # -- task lifecycle ----------------------------------------------------

    def _apply_publishModel(self, tx) -> TxReceipt:
        entry = self.participants.get(tx.sender)
        if entry is None or entry[0] != "mp":
            return self._reject(tx.kind, RejectCode.NOT_REGISTERED)
        if not self._check_signature(tx):
            return self._reject(tx.kind, RejectCode.BAD_CERT)
        model_id = tx.payload["model_id"]
        if model_id in self.tasks:
            return self._reject(tx.kind, RejectCode.DUPLICATE)
        if tx.payload["model_cid"] not in self.blobs:
            return self._reject(tx.kind, RejectCode.UNKNOWN_CID)
        self.tasks[model_id] = TaskState(
            publisher=tx.sender,
            model_cid=tx.payload["model_cid"],
            required_cs=int(tx.payload["required_cs"]),
            max_rounds=int(tx.payload["max_rounds"]),
            tau=int(tx.payload["tau"]),
        )
        return TxReceipt(ok=True)

    def _apply_joinCSModel(self, tx) -> TxReceipt:
        entry = self.participants.get(tx.sender)
        if entry is None or entry[0] != "cs":
            return self._reject(tx.kind, RejectCode.NOT_REGISTERED)
        if not self._check_signature(tx):
            return self._reject(tx.kind, RejectCode.BAD_CERT)
        task = self.tasks.get(tx.payload["model_id"])
        if task is None:
            return self._reject(tx.kind, RejectCode.UNAUTHORIZED)
        if tx.sender in task.stations:
            return self._reject(tx.kind, RejectCode.DUPLICATE)
        if len(task.stations) >= task.required_cs or task.status != "recruiting":
            return self._reject(tx.kind, RejectCode.UNAUTHORIZED)
        task.stations[tx.sender] = StationAccount(deposit=float(tx.payload.get("deposit", 0.0)))
        task.ev_members[tx.sender] = []
        if len(task.stations) == task.required_cs:
            task.status = "running"
        return TxReceipt(ok=True)

    def _apply_joinEVModel(self, tx) -> TxReceipt:
        entry = self.participants.get(tx.sender)
        if entry is None or entry[0] != "ev":
            return self._reject(tx.kind, RejectCode.NOT_REGISTERED)
        if not self._check_signature(tx):
            return self._reject(tx.kind, RejectCode.BAD_CERT)
        task = self.tasks.get(tx.payload["model_id"])
        if task is None:
            return self._reject(tx.kind, RejectCode.UNAUTHORIZED)
        cs_id = tx.payload["cs_id"]
        if cs_id not in task.stations:
            return self._reject(tx.kind, RejectCode.NOT_JOINED)
        if tx.sender in task.ev_members[cs_id]:
            return self._reject(tx.kind, RejectCode.DUPLICATE)
        task.ev_members[cs_id].append(tx.sender)
        return TxReceipt(ok=True)

    # -- per-round flow ----------------------------------------------------

    def _apply_submitIM(self, tx) -> TxReceipt:
        task = self.tasks.get(tx.payload["model_id"])
        if task is None:
            return self._reject(tx.kind, RejectCode.UNAUTHORIZED)
        if tx.sender not in task.stations:
            return self._reject(tx.kind, RejectCode.NOT_JOINED)
        rnd = int(tx.payload["round"])
        if rnd != task.round:
            return self._reject(tx.kind, RejectCode.WRONG_ROUND)
        submitted = task.submissions.setdefault(rnd, {})
        if tx.sender in submitted:
            return self._reject(tx.kind, RejectCode.DUPLICATE)
        cert = tx.payload["cert"]
        if not isinstance(cert, QuorumCert):
            return self._reject(tx.kind, RejectCode.BAD_CERT)
        cid = tx.payload["cid"]
        if cert.digest != cid or cert.threshold < task.tau:
            return self._reject(tx.kind, RejectCode.BAD_CERT)
        member_keys = {
            self.participants[ev][1]
            for ev in task.ev_members.get(tx.sender, [])
            if ev in self.participants
        }
        trimmed = QuorumCert(
            digest=cert.digest,
            signatures=[(p, s) for p, s in cert.signatures if p in member_keys],
            threshold=task.tau,
        )
        if not verify_quorum_cert(trimmed, self.registry):
            return self._reject(tx.kind, RejectCode.BAD_CERT)
        if cid not in self.blobs:
            return self._reject(tx.kind, RejectCode.UNKNOWN_CID)
        submitted[tx.sender] = cid
        events = []
        if len(submitted) == len(task.stations):
            events.append({"kind": "AGGREGATE", "model_id": tx.payload["model_id"], "round": rnd})
        return TxReceipt(ok=True, events=events)

    def _oracle_guard(self, tx) -> TxReceipt | None:
        if tx.sender not in self.oracles:
            return self._reject(tx.kind, RejectCode.UNAUTHORIZED)
        return None

    def _apply_submitGM(self, tx) -> TxReceipt:
        guard = self._oracle_guard(tx)
        if guard is not None:
            return guard
        task = self.tasks.get(tx.payload["model_id"])
        if task is None:
            return self._reject(tx.kind, RejectCode.UNAUTHORIZED)
        rnd = int(tx.payload["round"])
        if rnd != task.round:
            return self._reject(tx.kind, RejectCode.WRONG_ROUND)
        if tx.payload["cid"] not in self.blobs:
            return self._reject(tx.kind, RejectCode.UNKNOWN_CID)
        task.global_models[rnd] = tx.payload["cid"]
        task.round += 1
        if task.round >= task.max_rounds:
            task.status = "complete"
        return TxReceipt(ok=True)

    def _apply_updateCSScores(self, tx) -> TxReceipt:
        guard = self._oracle_guard(tx)
        if guard is not None:
            return guard
        task = self.tasks.get(tx.payload["model_id"])
        if task is None:
            return self._reject(tx.kind, RejectCode.UNAUTHORIZED)
        for cs_id, entry in tx.payload["scores"].items():
            if cs_id not in task.stations:
                return self._reject(tx.kind, RejectCode.NOT_JOINED)
            account = task.stations[cs_id]
            account.score += float(entry["delta"])
            if entry["in_majority"]:
                account.majority_count += 1
        return TxReceipt(ok=True)

    def _apply_updateEVScores(self, tx) -> TxReceipt:
        guard = self._oracle_guard(tx)
        if guard is not None:
            return guard
        if tx.payload["model_id"] not in self.tasks:
            return self._reject(tx.kind, RejectCode.UNAUTHORIZED)
        return TxReceipt(ok=True)  # EV-level evaluation happens off-chain

    def _apply_distributeReward(self, tx) -> TxReceipt:
        guard = self._oracle_guard(tx)
        if guard is not None:
            return guard
        task = self.tasks.get(tx.payload["model_id"])
        if task is None:
            return self._reject(tx.kind, RejectCode.UNAUTHORIZED)
        if task.status != "complete":
            return self._reject(tx.kind, RejectCode.WRONG_ROUND)
        ids = sorted(task.stations)
        counts = [task.stations[i].majority_count for i in ids]
        rewards = normalize_rewards(counts, self.incentives.reward_b, self.incentives.budget)
        g = self.incentives.gompertz
        events = []
        for cs_id, reward in zip(ids, rewards):
            account = task.stations[cs_id]
            account.reward = reward
            account.reputation = gompertz_reputation(
                account.reputation, account.score, g.a, g.b, g.c
            )
            if account.reputation < self.incentives.slash_below:
                account.slashed = True
                account.deposit = 0.0
            else:
                account.deposit_returned = True
            events.append(
                {"kind": "REWARD", "cs": cs_id, "amount": reward, "slashed": account.slashed}
            )
        return TxReceipt(ok=True, events=events)

    # -- reporting ---------------------------------------------------------

    def dump(self) -> str:
        """Deterministic structured-text snapshot of the full state."""

        def station(acc: StationAccount) -> dict:
            return {
                "deposit": acc.deposit,
                "score": acc.score,
                "reputation": acc.reputation,
                "majority_count": acc.majority_count,
                "reward": acc.reward,
                "deposit_returned": acc.deposit_returned,
                "slashed": acc.slashed,
            }

        state = {
            "participants": {k: list(v) for k, v in sorted(self.participants.items())},
            "oracles": sorted(self.oracles),
            "tasks": {
                mid: {
                    "publisher": t.publisher,
                    "model_cid": t.model_cid,
                    "required_cs": t.required_cs,
                    "max_rounds": t.max_rounds,
                    "tau": t.tau,
                    "round": t.round,
                    "status": t.status,
                    "stations": {k: station(v) for k, v in sorted(t.stations.items())},
                    "ev_members": {k: v for k, v in sorted(t.ev_members.items())},
                    "submissions": {
                        str(r): dict(sorted(s.items())) for r, s in sorted(t.submissions.items())
                    },
                    "global_models": {str(r): c for r, c in sorted(t.global_models.items())},
                }
                for mid, t in sorted(self.tasks.items())
            },
            "tx_counts": dict(sorted(self.tx_counts.items())),
            "rejections": dict(sorted(self.rejected_counts.items())),
        }
        return json.dumps(state, sort_keys=True, indent=1)


def tx_accounting(tx_counts: dict[str, int], mode: str, group_size: int) -> dict[str, int]:
    """Per-function transaction counts under either deployment design.

    The clustered design puts one transaction per station on chain where a
    flat design needs one per EV, so EV-class function counts scale by the
    group size; publishing and global-model submissions are identical.
    """
    if mode not in ("pure_bfl", "abc_dfl"):
        raise ConfigError(f"unknown accounting mode {mode!r}")
    counts = {k: int(tx_counts.get(k, 0)) for k in TX_KINDS}
    if mode == "abc_dfl":
        return counts
    return {
        k: v * group_size if k in EV_CLASS_FUNCTIONS else v for k, v in counts.items()
    }


def gas_report(counts: dict[str, int]) -> dict[str, int]:
    return {k: counts.get(k, 0) * GAS_TABLE[k] for k in TX_KINDS}

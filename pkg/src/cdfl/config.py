"""Experiment configuration: schema, validation, YAML loading.

Configs are nested key/value YAML files. Unknown keys are a hard error so a
typo never silently falls back to a default.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

ATTACK_KINDS = (
    "none",
    "gauss",
    "label_flip",
    "feature",
    "trim_attack",
    "krum_attack",
    "adaptive_minmax",
    "badnets",
    "scaling",
)

AGGREGATOR_KINDS = (
    "fleca",
    "fedavg",
    "trimmed_mean",
    "multi_krum",
    "norm_clip",
    "weak_dp",
    "flame_lite",
)


@dataclass
class DataConfig:
    samples: int = 6000
    dirichlet_alpha: float = 0.8
    test_fraction: float = 0.2
    anomaly_rate: float = 0.2


@dataclass
class ModelConfig:
    hidden: int = 16


@dataclass
class TrainingConfig:
    epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 0.001
    proximal_mu: float = 0.2


@dataclass
class FilterConfig:
    beta: float = 0.3
    kappa: float = 1.0
    eps_stability: float = 1e-8
    monitored_layers: tuple[str, ...] = (
        "cls_head.w",
        "cls_head.b",
        "reg_head.w",
        "reg_head.b",
    )

    def __post_init__(self):
        self.monitored_layers = tuple(self.monitored_layers)


@dataclass
class ClusteringConfig:
    intra_min_pts: int = 3
    inter_min_pts: int = 3
    stage2_layers: str = "monitored"  # monitored | full


@dataclass
class DpConfig:
    clip: float = 4.0
    sigma: float = 0.005
    epsilon: float | None = None
    delta: float | None = None


@dataclass
class AdversaryConfig:
    malicious_group_fraction: float = 0.0
    malicious_ev_fraction: float = 0.0
    attack: str = "none"
    # Kind-specific knobs; unset ones keep their defaults.
    sigma_scale: float = 20.0  # gauss: noise std as multiple of benign update std
    flip_rate: float = 1.0  # label_flip
    feature_index: int = 0  # feature
    feature_shift: float = 3.0  # feature
    poison_rate: float = 1.0  # feature: fraction of samples shifted
    trigger_rate: float = 0.5  # badnets/scaling: fraction of samples stamped
    trigger_offset: float = 5.0  # badnets/scaling: additive offset on f6, f7
    target_label: int = 0  # badnets/scaling
    eps_adv: float = 0.1  # trim_attack margin outside benign range
    gamma_scale: float | None = None  # scaling: defaults to group size k


@dataclass
class ConsensusConfig:
    validators: int = 4
    faults: int = 1
    committee_size: int = 4
    epoch_length: int = 10
    block_time: int = 1
    delta: int = 4  # post-GST delay bound, logical ticks
    gst: int = 0
    rotate_committee: bool = True
    max_views_per_height: int = 10


@dataclass
class GompertzConfig:
    a: float = 0.1
    b: float = 5.0
    c: float = 0.5


@dataclass
class IncentiveConfig:
    eta: float = 1.0
    alpha_dist: float = 1.0
    reward_b: float = 1.0
    budget: float = 100.0
    deposit: float = 10.0
    slash_below: float = 0.2
    gompertz: GompertzConfig = field(default_factory=GompertzConfig)


@dataclass
class ExperimentConfig:
    total_evs: int = 42
    group_size: int = 7
    rounds: int = 50
    seed: int = 42
    aggregator: str = "fleca"
    fleca_variant: str = "v2"  # v1 | v2
    churn_rate: float = 0.0
    trim_count: int = 1  # trimmed_mean baseline
    krum_f: int = 1  # multi_krum baseline
    krum_m: int = 1  # multi_krum baseline: number of selected updates
    flame_noise: float = 0.001
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    dp: DpConfig = field(default_factory=DpConfig)
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    consensus: ConsensusConfig = field(default_factory=ConsensusConfig)
    incentives: IncentiveConfig = field(default_factory=IncentiveConfig)

    @property
    def group_count(self) -> int:
        return self.total_evs // self.group_size

    def validate(self) -> "ExperimentConfig":
        if self.total_evs < 1 or self.group_size < 1:
            raise ConfigError("total_evs and group_size must be positive")
        if self.total_evs % self.group_size != 0:
            raise ConfigError(
                f"total_evs ({self.total_evs}) must be a multiple of group_size ({self.group_size})"
            )
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.aggregator not in AGGREGATOR_KINDS:
            raise ConfigError(f"unknown aggregator {self.aggregator!r}")
        if self.fleca_variant not in ("v1", "v2"):
            raise ConfigError(f"fleca_variant must be v1 or v2, got {self.fleca_variant!r}")
        for name, frac in (
            ("churn_rate", self.churn_rate),
            ("malicious_group_fraction", self.adversary.malicious_group_fraction),
            ("malicious_ev_fraction", self.adversary.malicious_ev_fraction),
            ("test_fraction", self.data.test_fraction),
        ):
            if not (0.0 <= frac <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1], got {frac}")
        if self.adversary.attack not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack kind {self.adversary.attack!r}")
        if self.adversary.attack == "label_flip" and not (0.0 <= self.adversary.flip_rate <= 1.0):
            raise ConfigError("flip_rate must lie in [0, 1]")
        if self.adversary.attack in ("badnets", "scaling"):
            if not (0.0 <= self.adversary.trigger_rate <= 1.0):
                raise ConfigError("trigger_rate must lie in [0, 1]")
            if self.adversary.target_label not in (0, 1):
                raise ConfigError("target_label must be 0 or 1")
        if self.adversary.attack == "feature" and not (0 <= self.adversary.feature_index < 8):
            raise ConfigError("feature_index must lie in [0, 8)")
        if self.dp.clip <= 0:
            raise ConfigError("dp.clip must be positive")
        if self.dp.sigma < 0:
            raise ConfigError("dp.sigma must be nonnegative")
        if self.consensus.committee_size > self.consensus.validators:
            raise ConfigError("committee_size cannot exceed validator count")
        if self.consensus.validators < 1:
            raise ConfigError("need at least one validator")
        if self.data.dirichlet_alpha <= 0:
            raise ConfigError("dirichlet_alpha must be positive")
        g = self.incentives.gompertz
        if not (0.0 < g.a < 1.0) or g.b <= 0 or g.c <= 0:
            raise ConfigError("gompertz parameters require a in (0,1), b > 0, c > 0")
        if self.trim_count < 0:
            raise ConfigError("trim_count must be nonnegative")
        return self


def _build(cls, raw: dict, path: str) -> Any:
    """Recursively build a dataclass from a dict, rejecting unknown keys."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(raw).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys at {path or 'top level'}: {unknown}")
    kwargs = {}
    for name, value in raw.items():
        f = known[name]
        if is_dataclass(f.type) or (isinstance(f.type, str) and f.type in _NESTED):
            sub_cls = _NESTED[f.type] if isinstance(f.type, str) else f.type
            kwargs[name] = _build(sub_cls, value, f"{path}.{name}" if path else name)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config value at {path or 'top level'}: {exc}") from exc


_NESTED = {
    "DataConfig": DataConfig,
    "ModelConfig": ModelConfig,
    "TrainingConfig": TrainingConfig,
    "FilterConfig": FilterConfig,
    "ClusteringConfig": ClusteringConfig,
    "DpConfig": DpConfig,
    "AdversaryConfig": AdversaryConfig,
    "ConsensusConfig": ConsensusConfig,
    "IncentiveConfig": IncentiveConfig,
    "GompertzConfig": GompertzConfig,
}


def config_from_dict(raw: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, raw, "").validate()


def load_config(path: str | Path) -> ExperimentConfig:
    """Load and validate a YAML experiment config."""
    text = Path(path).read_text(encoding="utf-8")
    raw = yaml.safe_load(text)
    if raw is None:
        raw = {}
    return config_from_dict(raw)


def config_digest(cfg: ExperimentConfig) -> str:
    """Stable hash of the full configuration, for result provenance."""
    blob = json.dumps(asdict(cfg), sort_keys=True, default=list).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()

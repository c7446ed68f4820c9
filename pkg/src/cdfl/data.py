"""Synthetic battery telemetry, non-IID partitioning, multitask model,
local training, and task metrics.

The dataset mimics charging-snippet summaries: 8 features per sample, a
binary health-anomaly label, and a capacity label in ampere-hours within
[28.28, 46.23]. Features come from two Gaussian regimes (normal vs
anomalous) and capacity is an affine function of the features plus noise,
so both tasks are learnable by a small model.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import UpdateDelta
from .errors import ConfigError, TrainingError

N_FEATURES = 8
CAPACITY_MIN = 28.28
CAPACITY_MAX = 46.23

_ANOMALY_SHIFT = np.array([2.0, 2.0, -2.0, 0.0, 0.0, 0.0, 0.0, 0.0])
_CAPACITY_WEIGHTS = np.array([1.5, -1.0, 0.8, 0.0, 0.6, 0.5, 0.0, 0.0])
_CAPACITY_BASE = 37.0
_CAPACITY_NOISE = 0.8


@dataclass
class Dataset:
    """Column-oriented sample container; rows are individual samples."""

    features: np.ndarray  # (n, 8)
    anomaly: np.ndarray  # (n,) in {0, 1}
    capacity: np.ndarray  # (n,) ampere-hours

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.anomaly[idx], self.capacity[idx])

    def copy(self) -> "Dataset":
        return Dataset(self.features.copy(), self.anomaly.copy(), self.capacity.copy())


@dataclass
class Partition:
    ev_id: int
    data: Dataset


@dataclass(frozen=True)
class TaskMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    mae: float
    mse: float
    rmse: float

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "mae": self.mae,
            "mse": self.mse,
            "rmse": self.rmse,
        }


def generate_dataset(n: int, rng: np.random.Generator, anomaly_rate: float = 0.2) -> Dataset:
    """Draw ``n`` samples from the two-regime generative model."""
    if n < 1:
        raise ConfigError("dataset size must be >= 1")
    anomaly = (rng.random(n) < anomaly_rate).astype(np.int64)
    features = rng.normal(0.0, 1.0, size=(n, N_FEATURES))
    features = features + anomaly[:, None] * _ANOMALY_SHIFT[None, :]
    capacity = (
        _CAPACITY_BASE
        + features @ _CAPACITY_WEIGHTS
        + rng.normal(0.0, _CAPACITY_NOISE, size=n)
    )
    capacity = np.clip(capacity, CAPACITY_MIN, CAPACITY_MAX)
    return Dataset(features, anomaly, capacity)


def train_test_split(data: Dataset, test_fraction: float, rng: np.random.Generator):
    n = len(data)
    n_test = int(round(n * test_fraction))
    perm = rng.permutation(n)
    return data.subset(perm[n_test:]), data.subset(perm[:n_test])


def dirichlet_partition(
    data: Dataset,
    n_evs: int,
    alpha: float,
    rng: np.random.Generator,
    min_size: int = 10,
    max_retries: int = 200,
) -> list[Partition]:
    """Split samples across EVs with Dirichlet-distributed class proportions.

    Each class's per-EV share is drawn from Dirichlet(alpha); draws are
    repeated until every EV holds at least ``min_size`` samples.
    """
    if n_evs < 1:
        raise ConfigError("need at least one EV")
    if alpha <= 0:
        raise ConfigError("dirichlet concentration must be positive")
    if len(data) < n_evs * min_size:
        raise ConfigError(
            f"{len(data)} samples cannot give {n_evs} EVs at least {min_size} each"
        )
    class_indices = [np.where(data.anomaly == c)[0] for c in (0, 1)]
    for _ in range(max_retries):
        assignment = [[] for _ in range(n_evs)]
        for idx in class_indices:
            if idx.size == 0:
                continue
            shuffled = idx[rng.permutation(idx.size)]
            props = rng.dirichlet(np.full(n_evs, alpha))
            counts = _proportional_counts(props, idx.size)
            offset = 0
            for ev, cnt in enumerate(counts):
                assignment[ev].extend(shuffled[offset : offset + cnt].tolist())
                offset += cnt
        if all(len(a) >= min_size for a in assignment):
            return [
                Partition(ev_id=ev, data=data.subset(np.sort(np.asarray(a))))
                for ev, a in enumerate(assignment)
            ]
    raise ConfigError(
        f"could not satisfy the {min_size}-sample minimum after {max_retries} draws; "
        "increase the dataset size or the concentration"
    )


def _proportional_counts(props: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation matching ``props`` with the largest-remainder rule."""
    raw = props * total
    counts = np.floor(raw).astype(np.int64)
    remainder = total - int(counts.sum())
    if remainder > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:remainder]] += 1
    return counts


@dataclass
class Standardizer:
    mean: float
    std: float

    @classmethod
    def fit(cls, values: np.ndarray) -> "Standardizer":
        std = float(np.std(values))
        return cls(mean=float(np.mean(values)), std=std if std > 0 else 1.0)

    def transform(self, values):
        return (values - self.mean) / self.std

    def inverse(self, values):
        return values * self.std + self.mean


# --- Multitask model -------------------------------------------------------

LAYER_NAMES = ("shared.w", "shared.b", "cls_head.w", "cls_head.b", "reg_head.w", "reg_head.b")


class MultiTaskModel:
    """One-hidden-layer tanh network with a classification head (anomaly)
    and a regression head (standardized capacity)."""

    def __init__(self, params: dict[str, np.ndarray], hidden: int):
        self.params = params
        self.hidden = hidden

    @classmethod
    def init(cls, hidden: int, rng: np.random.Generator) -> "MultiTaskModel":
        params = {
            "shared.w": rng.normal(0.0, 1.0 / np.sqrt(N_FEATURES), (N_FEATURES, hidden)),
            "shared.b": np.zeros(hidden),
            "cls_head.w": rng.normal(0.0, 1.0 / np.sqrt(hidden), hidden),
            "cls_head.b": np.zeros(1),
            "reg_head.w": rng.normal(0.0, 1.0 / np.sqrt(hidden), hidden),
            "reg_head.b": np.zeros(1),
        }
        return cls(params, hidden)

    def clone(self) -> "MultiTaskModel":
        return MultiTaskModel({k: v.copy() for k, v in self.params.items()}, self.hidden)

    def to_delta(self, round: int = 0) -> UpdateDelta:
        return UpdateDelta({k: v.ravel() for k, v in self.params.items()}, round=round)

    @classmethod
    def from_delta(cls, delta: UpdateDelta, hidden: int) -> "MultiTaskModel":
        shapes = {
            "shared.w": (N_FEATURES, hidden),
            "shared.b": (hidden,),
            "cls_head.w": (hidden,),
            "cls_head.b": (1,),
            "reg_head.w": (hidden,),
            "reg_head.b": (1,),
        }
        params = {k: delta.layers[k].reshape(shapes[k]).copy() for k in LAYER_NAMES}
        return cls(params, hidden)

    def apply_delta(self, delta: UpdateDelta) -> "MultiTaskModel":
        params = {
            k: self.params[k] + delta.layers[k].reshape(self.params[k].shape)
            for k in LAYER_NAMES
        }
        return MultiTaskModel(params, self.hidden)

    def forward(self, x: np.ndarray):
        p = self.params
        z = np.tanh(x @ p["shared.w"] + p["shared.b"])
        logits = z @ p["cls_head.w"] + p["cls_head.b"][0]
        reg = z @ p["reg_head.w"] + p["reg_head.b"][0]
        return z, logits, reg

    def predict(self, x: np.ndarray):
        _, logits, reg = self.forward(x)
        prob = _sigmoid(logits)
        return prob, reg

    def loss(self, x, y_cls, y_reg, global_params=None, mu: float = 0.0) -> float:
        _, logits, reg = self.forward(x)
        bce = float(np.mean(np.maximum(logits, 0) - logits * y_cls + np.log1p(np.exp(-np.abs(logits)))))
        mse = float(np.mean((reg - y_reg) ** 2))
        prox = 0.0
        if mu > 0 and global_params is not None:
            for k in LAYER_NAMES:
                diff = self.params[k] - global_params[k]
                prox += float(np.sum(diff * diff))
        return bce + mse + 0.5 * mu * prox

    def gradients(self, x, y_cls, y_reg, global_params=None, mu: float = 0.0):
        p = self.params
        n = x.shape[0]
        z, logits, reg = self.forward(x)
        d_logits = (_sigmoid(logits) - y_cls) / n
        d_reg = 2.0 * (reg - y_reg) / n
        grads = {
            "cls_head.w": z.T @ d_logits,
            "cls_head.b": np.array([np.sum(d_logits)]),
            "reg_head.w": z.T @ d_reg,
            "reg_head.b": np.array([np.sum(d_reg)]),
        }
        d_z = np.outer(d_logits, p["cls_head.w"]) + np.outer(d_reg, p["reg_head.w"])
        d_pre = d_z * (1.0 - z * z)
        grads["shared.w"] = x.T @ d_pre
        grads["shared.b"] = d_pre.sum(axis=0)
        if mu > 0 and global_params is not None:
            for k in LAYER_NAMES:
                grads[k] = grads[k] + mu * (p[k] - global_params[k])
        return grads


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def local_train(
    global_model: MultiTaskModel,
    partition: Dataset,
    standardizer: Standardizer,
    epochs: int,
    batch_size: int,
    lr: float,
    mu: float,
    rng: np.random.Generator,
) -> tuple[UpdateDelta, list[float]]:
    """Mini-batch SGD from the global model; returns the parameter delta.

    ``mu`` adds the proximal pull toward the global weights; mu=0 is plain
    local SGD.
    """
    if len(partition) == 0:
        raise TrainingError("cannot train on an empty partition")
    if epochs < 1:
        raise TrainingError("epochs must be >= 1")
    if lr <= 0:
        raise TrainingError("learning rate must be positive")
    if mu < 0:
        raise TrainingError("proximal coefficient must be nonnegative")
    model = global_model.clone()
    global_params = global_model.params
    x = partition.features
    y_cls = partition.anomaly.astype(np.float64)
    y_reg = standardizer.transform(partition.capacity)
    n = len(partition)
    losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            grads = model.gradients(x[idx], y_cls[idx], y_reg[idx], global_params, mu)
            for k in LAYER_NAMES:
                model.params[k] = model.params[k] - lr * grads[k]
        losses.append(model.loss(x, y_cls, y_reg, global_params, mu))
    delta = UpdateDelta(
        {k: (model.params[k] - global_params[k]).ravel() for k in LAYER_NAMES}
    )
    return delta, losses


def evaluate(model: MultiTaskModel, testset: Dataset, standardizer: Standardizer) -> TaskMetrics:
    """Classification at threshold 0.5 plus regression error in ampere-hours."""
    prob, reg_std = model.predict(testset.features)
    pred = (prob >= 0.5).astype(np.int64)
    truth = testset.anomaly
    tp = int(np.sum((pred == 1) & (truth == 1)))
    tn = int(np.sum((pred == 0) & (truth == 0)))
    fp = int(np.sum((pred == 1) & (truth == 0)))
    fn = int(np.sum((pred == 0) & (truth == 1)))
    total = max(tp + tn + fp + fn, 1)
    accuracy = (tp + tn) / total
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    pred_capacity = standardizer.inverse(reg_std)
    err = pred_capacity - testset.capacity
    mae = float(np.mean(np.abs(err)))
    mse = float(np.mean(err * err))
    return TaskMetrics(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        mae=mae,
        mse=mse,
        rmse=float(np.sqrt(mse)),
    )


# --- CSV round trip ---------------------------------------------------------


def dump_csv(data: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(N_FEATURES)] + ["anomaly", "capacity"])
        for i in range(len(data)):
            row = [repr(float(v)) for v in data.features[i]]
            row.append(str(int(data.anomaly[i])))
            row.append(repr(float(data.capacity[i])))
            writer.writerow(row)


def load_csv(path: str | Path) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = [f"f{i}" for i in range(N_FEATURES)] + ["anomaly", "capacity"]
        if header != expected:
            raise ConfigError(f"unexpected CSV header {header}")
        feats, anom, cap = [], [], []
        for row in reader:
            feats.append([float(v) for v in row[:N_FEATURES]])
            anom.append(int(row[N_FEATURES]))
            cap.append(float(row[N_FEATURES + 1]))
    return Dataset(
        np.asarray(feats, dtype=np.float64),
        np.asarray(anom, dtype=np.int64),
        np.asarray(cap, dtype=np.float64),
    )

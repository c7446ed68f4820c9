"""Core domain types and vector math used by every other module.

An :class:`UpdateDelta` is the unit exchanged everywhere: a layer-keyed map of
flat float64 parameter vectors for one communication round. All operations
here are pure; deltas are treated as immutable values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import AggregationError, SchemaError


@dataclass(frozen=True)
class RoundClock:
    """Current position within a training task: round t of T (0-based)."""

    t: int
    total: int

    def __post_init__(self):
        if not (0 <= self.t < self.total):
            raise ValueError(f"round {self.t} outside [0, {self.total})")

    @property
    def progress(self) -> float:
        """Schedule value t/T in [0, 1)."""
        return self.t / self.total


class UpdateDelta:
    """A model update: layer name -> flat float64 vector, plus the round."""

    __slots__ = ("layers", "round")

    def __init__(self, layers: Mapping[str, np.ndarray], round: int = 0):
        self.layers = {
            name: np.asarray(vec, dtype=np.float64).ravel() for name, vec in layers.items()
        }
        self.round = int(round)

    def schema(self) -> tuple[tuple[str, int], ...]:
        """Canonical (name, dim) pairs in lexicographic layer order."""
        return tuple((name, self.layers[name].size) for name in sorted(self.layers))

    def validate_finite(self) -> None:
        for name, vec in self.layers.items():
            if not np.all(np.isfinite(vec)):
                raise SchemaError(f"non-finite values in layer {name!r}")

    def copy(self, round: int | None = None) -> "UpdateDelta":
        return UpdateDelta(
            {name: vec.copy() for name, vec in self.layers.items()},
            self.round if round is None else round,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, UpdateDelta):
            return NotImplemented
        return (
            self.round == other.round
            and self.schema() == other.schema()
            and all(np.array_equal(self.layers[n], other.layers[n]) for n in self.layers)
        )

    def __repr__(self) -> str:
        dims = ", ".join(f"{n}:{d}" for n, d in self.schema())
        return f"UpdateDelta(round={self.round}, {dims})"


def check_same_schema(deltas: Sequence[UpdateDelta]) -> None:
    """Raise SchemaError unless all deltas share layer names and dims."""
    if not deltas:
        return
    ref = deltas[0].schema()
    for d in deltas[1:]:
        if d.schema() != ref:
            raise SchemaError(f"schema mismatch: {d.schema()} vs {ref}")


def flatten(delta: UpdateDelta, layer_subset: Iterable[str] | None = None) -> np.ndarray:
    """Concatenate the chosen layers in lexicographic name order.

    ``layer_subset=None`` means all layers. Unknown names are a configuration
    error because they signal a config/schema drift.
    """
    if layer_subset is None:
        names = sorted(delta.layers)
    else:
        names = sorted(layer_subset)
        unknown = [n for n in names if n not in delta.layers]
        if unknown:
            raise SchemaError(f"unknown layer names {unknown}; have {sorted(delta.layers)}")
    if not names:
        return np.zeros(0, dtype=np.float64)
    return np.concatenate([delta.layers[n] for n in names])


def unflatten(
    vector: np.ndarray, like: UpdateDelta, layer_subset: Iterable[str] | None = None
) -> UpdateDelta:
    """Inverse of :func:`flatten` given a schema template.

    Layers outside the subset are copied from the template unchanged.
    """
    vector = np.asarray(vector, dtype=np.float64).ravel()
    names = sorted(like.layers) if layer_subset is None else sorted(layer_subset)
    expected = sum(like.layers[n].size for n in names)
    if vector.size != expected:
        raise SchemaError(f"vector of size {vector.size} cannot fill {expected} parameters")
    layers = {name: vec.copy() for name, vec in like.layers.items()}
    offset = 0
    for name in names:
        size = like.layers[name].size
        layers[name] = vector[offset : offset + size].copy()
        offset += size
    return UpdateDelta(layers, like.round)


def l2_norm(v: np.ndarray) -> float:
    """Euclidean norm."""
    return float(np.linalg.norm(np.asarray(v, dtype=np.float64)))


def weighted_average(deltas: Sequence[UpdateDelta], weights: Sequence[float]) -> UpdateDelta:
    """Per-coordinate weighted mean of update deltas.

    Uniform weights reduce to the arithmetic mean. Empty inputs or an
    all-zero weight vector are aggregation errors.
    """
    if len(deltas) == 0:
        raise AggregationError("cannot average zero deltas")
    if len(deltas) != len(weights):
        raise AggregationError(f"{len(deltas)} deltas but {len(weights)} weights")
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise AggregationError("weights must be nonnegative")
    total = float(w.sum())
    if total <= 0.0:
        raise AggregationError("weight sum must be positive")
    check_same_schema(deltas)
    if all(d == deltas[0] for d in deltas[1:]):
        return deltas[0].copy()  # exact fixed point, no rounding drift
    w = w / total
    layers = {}
    for name in deltas[0].layers:
        stacked = np.stack([d.layers[name] for d in deltas])
        layers[name] = stacked.T @ w
    return UpdateDelta(layers, deltas[0].round)


def mean_delta(deltas: Sequence[UpdateDelta]) -> UpdateDelta:
    """Uniform average, the FedAvg primitive."""
    return weighted_average(deltas, [1.0] * len(deltas))

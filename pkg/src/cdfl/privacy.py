"""Client-side differential privacy: clipping, Gaussian noise, sigma bound.

Benign EVs clip their update to a global L2 budget and add isotropic
Gaussian noise before sharing; attackers skip this step.
"""

from __future__ import annotations

import math

import numpy as np

from .core import UpdateDelta, flatten, l2_norm, unflatten
from .errors import ConfigError


def clip_update(delta: UpdateDelta, clip: float) -> UpdateDelta:
    """Scale the whole update so its joint L2 norm is at most ``clip``."""
    if clip <= 0:
        raise ConfigError("clip norm must be positive")
    norm = l2_norm(flatten(delta))
    if norm <= clip:
        return delta
    scale = clip / norm
    return UpdateDelta({k: v * scale for k, v in delta.layers.items()}, delta.round)


def add_gaussian_noise(
    delta: UpdateDelta, sigma: float, rng: np.random.Generator
) -> UpdateDelta:
    """Add i.i.d. N(0, sigma^2) noise per coordinate; sigma=0 is the identity."""
    if sigma < 0:
        raise ConfigError("noise std must be nonnegative")
    if sigma == 0.0:
        return delta
    flat = flatten(delta)
    noisy = flat + rng.normal(0.0, sigma, size=flat.size)
    return unflatten(noisy, delta)


def required_sigma(epsilon: float, delta_p: float, clip: float) -> float:
    """Smallest noise std meeting an (epsilon, delta) target for one release
    of a clip-bounded vector under the Gaussian mechanism."""
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    if not (0.0 < delta_p < 1.0):
        raise ConfigError("delta must lie in (0, 1)")
    if clip <= 0:
        raise ConfigError("clip norm must be positive")
    return clip * math.sqrt(2.0 * math.log(1.25 / delta_p)) / epsilon

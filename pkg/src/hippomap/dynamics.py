"""Token entropy, temperature perturbation and deadlock detection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DEFAULT_PERTURB_TEMPERATURE = 1.5
DEADLOCK_THRESHOLD_THEORETICAL = 0.2
DEADLOCK_THRESHOLD_DEPLOYED = 0.3


class DistributionError(ValueError):
    pass


@dataclass(frozen=True)
class TokenDistribution:
    """Probabilities over (possibly a top-k subset of) a vocabulary."""

    tokens: tuple
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise DistributionError("distribution must be a non-empty 1-d array")
        if len(self.tokens) != probs.size:
            raise DistributionError("tokens and probs differ in length")
        if not np.all(np.isfinite(probs)) or np.any(probs <= 0.0):
            raise DistributionError("all probabilities must be finite and > 0")
        if probs.sum() > 1.0 + 1e-6:
            raise DistributionError("probabilities sum above 1")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "tokens", tuple(self.tokens))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[object, float]]) -> "TokenDistribution":
        pairs = list(pairs)
        return cls(tuple(t for t, _ in pairs), np.array([p for _, p in pairs], dtype=np.float64))

    @classmethod
    def from_logprobs(cls, pairs: Iterable[tuple[object, float]]) -> "TokenDistribution":
        pairs = list(pairs)
        return cls(tuple(t for t, _ in pairs), np.exp([lp for _, lp in pairs]))

    def normalized(self) -> np.ndarray:
        return self.probs / self.probs.sum()


def token_entropy(dist: TokenDistribution) -> float:
    """Shannon entropy in bits, after renormalizing a truncated distribution."""
    p = dist.normalized()
    h = float(-np.sum(p * np.log2(p)))
    return max(h, 0.0)


def mean_entropy(positions: Sequence[TokenDistribution]) -> float | None:
    if not positions:
        return None
    return sum(token_entropy(d) for d in positions) / len(positions)


def perturb(dist: TokenDistribution, temperature: float = DEFAULT_PERTURB_TEMPERATURE) -> TokenDistribution:
    """Rescale log-probabilities by 1/T and renormalize."""
    if not temperature > 0 or not math.isfinite(temperature):
        raise DistributionError("temperature must be a positive finite number")
    logits = np.log(dist.probs) / temperature
    logits -= logits.max()
    w = np.exp(logits)
    return TokenDistribution(dist.tokens, w / w.sum())


def detect_deadlock(
    trust: float,
    entropy: float | None = None,
    threshold: float = DEADLOCK_THRESHOLD_DEPLOYED,
) -> bool:
    """True when trust is strictly below the deadlock threshold.

    ``entropy`` is accepted for diagnostics and logging only; it never gates
    the decision.
    """
    if not 0.0 <= trust <= 1.0:
        raise ValueError("trust must lie in [0, 1]")
    return trust < threshold

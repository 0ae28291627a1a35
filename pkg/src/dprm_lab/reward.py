"""Scalar rewards from preference distributions and the KL-regularized signal."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NegativeKL, SupportMismatch, ValidationError
from .preference import CategorySchema, as_probs
from .transport import build_cost_matrix, wasserstein_p

DEFAULT_BETA = 0.1


@dataclass(frozen=True)
class RewardSignal:
    expected_reward: float
    kl_penalty: float
    beta: float
    total: float

    def to_dict(self) -> dict:
        return {"expected": self.expected_reward, "kl": self.kl_penalty, "beta": self.beta, "total": self.total}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def expected_reward(dist, schema: CategorySchema) -> float:
    """Reward-weighted sum over categories."""
    p = as_probs(dist)
    r = schema.rewards
    if p.shape != r.shape:
        raise DimensionMismatch(f"distribution has {p.size} entries, schema has {r.size} categories")
    return float(p @ r)


def kl_divergence(p, q) -> float:
    """``sum p log(p / q)`` over the support of ``p``."""
    p = np.asarray(as_probs(p), dtype=float)
    q = np.asarray(as_probs(q), dtype=float)
    if p.shape != q.shape:
        raise DimensionMismatch(f"shapes {p.shape} and {q.shape} differ")
    support = p > 0
    if np.any(q[support] <= 0):
        raise SupportMismatch("q vanishes where p has mass")
    return max(float(np.sum(p[support] * np.log(p[support] / q[support]))), 0.0)


def total_reward(expected: float, kl: float, beta: float = DEFAULT_BETA) -> RewardSignal:
    if kl < 0:
        raise NegativeKL(f"KL penalty must be non-negative, got {kl}")
    if beta < 0:
        raise ValidationError(f"beta must be non-negative, got {beta}")
    return RewardSignal(float(expected), float(kl), float(beta), float(expected - beta * kl))


def ideal_distribution(schema: CategorySchema) -> np.ndarray:
    """One-hot on the highest-reward category."""
    e = np.zeros(schema.d)
    e[int(np.argmax(schema.rewards))] = 1.0
    return e


def ideal_distance(dist, schema: CategorySchema, p: float = 1.0, cost=None) -> float:
    """W_p from ``dist`` to the ideal-response distribution."""
    M = build_cost_matrix(schema) if cost is None else cost
    return wasserstein_p(as_probs(dist), ideal_distribution(schema), M, p)

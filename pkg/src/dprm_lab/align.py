"""Tabular policies, clipped-PPO fine-tuning on a one-step bandit, and win rates.

Each prompt is a K-armed bandit whose arms are candidate responses.  The
reward of an arm is the expected reward of either the ground-truth population
preference or a trained distributional head's prediction.  The KL anchor to a
frozen reference policy enters every sample's total reward through the
log-ratio of the sampling and reference policies.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .annotate import SyntheticEnv
from .errors import EmptyBatch, ValidationError
from .preference import CategorySchema

REWARD_SOURCES = ("truth_oracle", "dprm_head")
CURVE_HEADER = ("step", "mean_total_reward", "mean_kl", "clip_fraction")


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Policy:
    logits: np.ndarray  # (n_prompts, K)
    temperature: float = 1.0

    def __post_init__(self):
        self.logits = np.array(self.logits, dtype=float)
        if self.logits.ndim != 2 or self.logits.shape[1] < 2:
            raise ValidationError("policy logits must be an (n_prompts, K >= 2) array")
        if not self.temperature > 0:
            raise ValidationError("temperature must be positive")

    @classmethod
    def uniform(cls, env: SyntheticEnv, temperature: float = 1.0) -> "Policy":
        return cls(np.zeros((env.n_prompts, env.k)), temperature)

    def probs(self) -> np.ndarray:
        return _softmax_rows(self.logits / self.temperature)

    def log_probs(self) -> np.ndarray:
        z = self.logits / self.temperature
        z = z - z.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def copy(self) -> "Policy":
        return Policy(self.logits.copy(), self.temperature)

    def to_dict(self) -> dict:
        return {"temperature": self.temperature, "logits": self.logits.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Policy":
        return cls(np.asarray(data["logits"], dtype=float), float(data.get("temperature", 1.0)))


def mean_kl(policy: Policy, ref: Policy) -> float:
    """Exact KL(policy || ref) averaged uniformly over prompts."""
    p = policy.probs()
    return float(np.mean(np.sum(p * (policy.log_probs() - ref.log_probs()), axis=1)))


@dataclass(frozen=True)
class PPOConfig:
    steps: int = 1000
    batch: int = 128
    clip: float = 0.2
    beta: float = 0.1
    lr: float = 0.05
    seed: int = 0
    reward_source: str = "truth_oracle"
    epochs: int = 1

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1 or self.epochs < 1:
            raise ValidationError("steps must be >= 0, batch and epochs >= 1")
        if not 0 < self.clip <= 1:
            raise ValidationError("clip must lie in (0, 1]")
        if self.beta < 0 or not self.lr > 0:
            raise ValidationError("beta must be >= 0 and lr > 0")
        if self.reward_source not in REWARD_SOURCES:
            raise ValidationError(f"reward_source must be one of {REWARD_SOURCES}")


class Sample(NamedTuple):
    prompt: int
    response: int
    log_prob: float


def rollout(policy: Policy, env: SyntheticEnv, n: int, seed) -> list[Sample]:
    """``n`` i.i.d. (prompt, response) draws; prompts are uniform."""
    if n < 1:
        raise ValidationError("rollout needs n >= 1")
    rng = np.random.default_rng(seed)
    logp = policy.log_probs()
    probs = np.exp(logp)
    prompts = rng.integers(0, env.n_prompts, size=n)
    # inverse-CDF sampling keeps the draw count fixed per sample
    u = rng.random(n)
    cdf = np.cumsum(probs[prompts], axis=1)
    responses = np.minimum((u[:, None] >= cdf).sum(axis=1), env.k - 1)
    return [Sample(int(p), int(k), float(logp[p, k])) for p, k in zip(prompts, responses)]


def reward_table(env: SyntheticEnv, source: str = "truth_oracle", head=None, featurizer=None,
                 schema: CategorySchema | None = None) -> np.ndarray:
    """(n_prompts, K) expected rewards from the chosen source."""
    schema = schema or CategorySchema.default()
    if source == "truth_oracle":
        return env.truth_rewards(schema)
    if source != "dprm_head":
        raise ValidationError(f"unknown reward source {source!r}")
    if head is None:
        raise ValidationError("reward_source dprm_head needs a trained head")
    from .dprm import FeaturizerConfig, featurize

    featurizer = featurizer or FeaturizerConfig()
    X = np.stack([featurize(p, r, featurizer) for p, rs in zip(env.prompts, env.responses) for r in rs])
    return (head.predict_batch(X) @ schema.rewards).reshape(env.n_prompts, env.k)


@dataclass(frozen=True)
class StepStats:
    mean_total_reward: float
    mean_expected_reward: float
    mean_kl: float
    clip_fraction: float


def ppo_step(policy: Policy, ref_policy: Policy, reward_fn, batch: Sequence[Sample], config: PPOConfig):
    """One clipped-surrogate ascent update on a rollout batch.

    ``reward_fn`` is either an (n_prompts, K) table or a callable
    ``(prompt, response) -> float``.
    """
    if not batch:
        raise EmptyBatch("ppo_step needs a non-empty batch")
    p_idx = np.array([s.prompt for s in batch])
    k_idx = np.array([s.response for s in batch])
    old_logp = np.array([s.log_prob for s in batch])
    if callable(reward_fn):
        r = np.array([reward_fn(p, k) for p, k in zip(p_idx, k_idx)], dtype=float)
    else:
        r = np.asarray(reward_fn, dtype=float)[p_idx, k_idx]
    ref_logp = ref_policy.log_probs()[p_idx, k_idx]
    total = r - config.beta * (old_logp - ref_logp)
    std = total.std()
    adv = (total - total.mean()) / std if std > 1e-12 else np.zeros_like(total)

    new = policy.copy()
    n = len(batch)
    clipped = np.zeros(n, dtype=bool)
    for _ in range(config.epochs):
        logp_all = new.log_probs()
        probs = np.exp(logp_all)
        ratio = np.exp(logp_all[p_idx, k_idx] - old_logp)
        clipped = np.abs(ratio - 1.0) > config.clip
        # the unclipped branch is active unless the ratio has already moved past the clip in the advantage's direction
        active = ~(((ratio > 1 + config.clip) & (adv > 0)) | ((ratio < 1 - config.clip) & (adv < 0)))
        coef = np.where(active, ratio * adv, 0.0) / (n * new.temperature)
        grad = np.zeros_like(new.logits)
        np.add.at(grad, (p_idx, k_idx), coef)
        np.add.at(grad, p_idx, -coef[:, None] * probs[p_idx])
        new.logits += config.lr * grad
    stats = StepStats(
        mean_total_reward=float(total.mean()),
        mean_expected_reward=float(r.mean()),
        mean_kl=mean_kl(new, ref_policy),
        clip_fraction=float(clipped.mean()),
    )
    return new, stats


@dataclass
class Curves:
    rows: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for row in self.rows:
            w.writerow([row["step"]] + [repr(float(row[k])) for k in CURVE_HEADER[1:]])
        return buf.getvalue()


def align(policy: Policy, env: SyntheticEnv, rewards, config: PPOConfig = PPOConfig()):
    """Run ``config.steps`` rollout/update rounds against a frozen copy of ``policy``.

    ``rewards`` is an (n_prompts, K) table (see :func:`reward_table`) or a
    callable accepted by :func:`ppo_step`.
    """
    ref = policy.copy()
    curves = Curves()
    for step in range(config.steps):
        batch = rollout(policy, env, config.batch, np.random.SeedSequence([int(config.seed), step]))
        policy, stats = ppo_step(policy, ref, rewards, batch, config)
        curves.rows.append({"step": step + 1, **asdict(stats)})
    return policy, curves


def win_rate(policy_a: Policy, policy_b: Policy, env: SyntheticEnv, n: int, seed,
             schema: CategorySchema | None = None) -> float:
    """Fraction of sampled prompts where A's response beats B's on true expected reward; ties count half."""
    if n < 1:
        raise ValidationError("win_rate needs n >= 1")
    truth = env.truth_rewards(schema)
    rng = np.random.default_rng(seed)
    prompts = rng.integers(0, env.n_prompts, size=n)
    ua, ub = rng.random(n), rng.random(n)

    def pick(policy, u):
        cdf = np.cumsum(policy.probs()[prompts], axis=1)
        return np.minimum((u[:, None] >= cdf).sum(axis=1), env.k - 1)

    ra = truth[prompts, pick(policy_a, ua)]
    rb = truth[prompts, pick(policy_b, ub)]
    return float(np.mean((ra > rb) + 0.5 * (ra == rb)))


def policy_json(policy: Policy) -> str:
    return json.dumps(policy.to_dict())

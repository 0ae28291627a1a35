"""Preference categories, single-user and group preferences, and smoothing.

A population's judgement of a prompt-response pair is a categorical
distribution over ``d`` hybrid helpfulness/harmlessness categories.  Single
users contribute one-hot labels; groups are the normalized label counts and
absorb new labels one at a time through an exact count-weighted update.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyGroup, NotDegenerate, ValidationError, DimensionMismatch

HELPFULNESS_TAGS = ("Helpful", "NeutralHelpful", "NotHelpful")
HARMLESSNESS_TAGS = ("Harmless", "Harmful")

#: Moves exactly 0.001 of the mass off a certain label when d = 6.
DEFAULT_ALPHA = 0.0012

SIMPLEX_ATOL = 1e-9
ONE_HOT_ATOL = 1e-12


@dataclass(frozen=True)
class Category:
    id: int
    helpfulness: str
    harmlessness: str
    reward: float

    @property
    def name(self) -> str:
        return f"{self.helpfulness}&{self.harmlessness}"


@dataclass(frozen=True)
class CategorySchema:
    categories: tuple[Category, ...]

    def __post_init__(self):
        cats = tuple(self.categories)
        object.__setattr__(self, "categories", cats)
        if len(cats) < 2:
            raise ValidationError("a schema needs at least two categories")
        if [c.id for c in cats] != list(range(1, len(cats) + 1)):
            raise ValidationError("category ids must be exactly 1..d in order")
        for c in cats:
            if c.helpfulness not in HELPFULNESS_TAGS:
                raise ValidationError(f"unknown helpfulness tag {c.helpfulness!r}")
            if c.harmlessness not in HARMLESSNESS_TAGS:
                raise ValidationError(f"unknown harmlessness tag {c.harmlessness!r}")
            if not np.isfinite(c.reward):
                raise ValidationError(f"reward of category {c.id} is not finite")

    @property
    def d(self) -> int:
        return len(self.categories)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([c.reward for c in self.categories], dtype=float)

    def index_of(self, helpfulness: str, harmlessness: str) -> int:
        """0-based index of the category carrying both tags."""
        for k, c in enumerate(self.categories):
            if c.helpfulness == helpfulness and c.harmlessness == harmlessness:
                return k
        raise KeyError((helpfulness, harmlessness))

    @classmethod
    def default(cls) -> "CategorySchema":
        rows = [
            ("Helpful", "Harmless", 1.0),
            ("NeutralHelpful", "Harmless", 0.5),
            ("NotHelpful", "Harmless", -1.0),
            ("Helpful", "Harmful", -1.0),
            ("NeutralHelpful", "Harmful", -1.5),
            ("NotHelpful", "Harmful", -3.0),
        ]
        return cls(tuple(Category(k + 1, h, s, r) for k, (h, s, r) in enumerate(rows)))

    def to_dict(self) -> dict:
        return {
            "categories": [
                {"id": c.id, "helpfulness": c.helpfulness, "harmlessness": c.harmlessness, "reward": c.reward}
                for c in self.categories
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CategorySchema":
        try:
            rows = data["categories"]
            cats = tuple(
                Category(int(r["id"]), str(r["helpfulness"]), str(r["harmlessness"]), float(r["reward"]))
                for r in rows
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed schema: {exc}") from exc
        return cls(cats)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def load(cls, path) -> "CategorySchema":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read schema {path}: {exc}") from exc
        return cls.from_dict(data)


class PreferenceDistribution:
    """Immutable point on the probability simplex."""

    __slots__ = ("_probs",)

    def __init__(self, probs):
        p = np.array(probs, dtype=float).reshape(-1)
        if p.size < 1 or not np.all(np.isfinite(p)):
            raise ValidationError("preference distribution must be a finite, non-empty vector")
        if np.any(p < -SIMPLEX_ATOL):
            raise ValidationError(f"negative mass in preference distribution: {p}")
        p = np.clip(p, 0.0, None)
        s = p.sum()
        if s <= 0:
            raise ValidationError("preference distribution has no mass")
        if s != 1.0:
            p = p / s
        p.setflags(write=False)
        self._probs = p

    @property
    def probs(self) -> np.ndarray:
        return self._probs

    @property
    def d(self) -> int:
        return self._probs.size

    def __array__(self, dtype=None, copy=None):
        return self._probs if dtype is None else self._probs.astype(dtype)

    def __len__(self):
        return self._probs.size

    def __getitem__(self, k):
        return self._probs[k]

    def __eq__(self, other):
        if not isinstance(other, PreferenceDistribution):
            return NotImplemented
        return np.array_equal(self._probs, other._probs)

    def __hash__(self):
        return hash(self._probs.tobytes())

    def __repr__(self):
        return f"PreferenceDistribution({np.round(self._probs, 6).tolist()})"

    def tolist(self) -> list:
        return self._probs.tolist()

    def is_one_hot(self, atol: float = ONE_HOT_ATOL) -> bool:
        i = int(np.argmax(self._probs))
        rest = np.delete(self._probs, i)
        return bool(abs(self._probs[i] - 1.0) <= atol and np.all(rest <= atol))


def as_probs(x) -> np.ndarray:
    """Plain float array view of a distribution-like value."""
    if isinstance(x, PreferenceDistribution):
        return x.probs
    if isinstance(x, GroupPreference):
        return x.dist.probs
    if isinstance(x, UserPreference):
        return x.one_hot.probs
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class UserPreference:
    """A single user's label: category ``category`` (1-based) out of ``d``."""

    category: int
    d: int

    def __post_init__(self):
        if self.d < 2 or not 1 <= self.category <= self.d:
            raise ValidationError(f"category {self.category} outside 1..{self.d}")

    @property
    def one_hot(self) -> PreferenceDistribution:
        e = np.zeros(self.d)
        e[self.category - 1] = 1.0
        return PreferenceDistribution(e)

    @property
    def index(self) -> int:
        return self.category - 1

    @classmethod
    def from_one_hot(cls, probs) -> "UserPreference":
        p = as_probs(probs)
        dist = PreferenceDistribution(p)
        if not dist.is_one_hot():
            raise ValidationError("user preference must be exactly one-hot")
        return cls(int(np.argmax(p)) + 1, p.size)


@dataclass(frozen=True)
class GroupPreference:
    dist: PreferenceDistribution
    group_size: int

    def __post_init__(self):
        if self.group_size < 1:
            raise EmptyGroup("a group preference needs at least one member")

    @property
    def probs(self) -> np.ndarray:
        return self.dist.probs

    @property
    def counts(self) -> np.ndarray:
        return self.dist.probs * self.group_size


def aggregate(labels: Sequence[UserPreference]) -> GroupPreference:
    """Normalized label counts of a group of users."""
    labels = list(labels)
    if not labels:
        raise EmptyGroup("cannot aggregate an empty group")
    d = labels[0].d
    if any(lab.d != d for lab in labels):
        raise DimensionMismatch("labels come from schemas of different size")
    counts = np.bincount([lab.index for lab in labels], minlength=d).astype(float)
    return GroupPreference(PreferenceDistribution(counts / len(labels)), len(labels))


def posterior_update(group: GroupPreference, new_label: UserPreference) -> GroupPreference:
    """Fold one more user's label into a group preference."""
    if group.group_size < 1:
        raise EmptyGroup("posterior update needs a non-empty prior group")
    if new_label.d != group.dist.d:
        raise DimensionMismatch(f"label has d={new_label.d}, group has d={group.dist.d}")
    n = group.group_size
    probs = (group.probs * n + new_label.one_hot.probs) / (n + 1)
    return GroupPreference(PreferenceDistribution(probs), n + 1)


def posterior_fold(group: GroupPreference, new_labels: Iterable[UserPreference]) -> GroupPreference:
    for lab in new_labels:
        group = posterior_update(group, lab)
    return group


def _default_cost() -> np.ndarray:
    from .transport import build_cost_matrix

    return build_cost_matrix(CategorySchema.default()).entries


def next_likely_category(i: int, cost) -> int:
    """Cheapest category to receive mass from category ``i`` (0-based).

    Ties go to the smallest index.
    """
    row = np.array(np.asarray(cost, dtype=float)[i], dtype=float)
    row[i] = np.inf
    return int(np.argmin(row))


def smooth_targeted(dist, alpha: float = DEFAULT_ALPHA, cost=None, strict: bool = False) -> PreferenceDistribution:
    """Move ``alpha * (d-1)/d`` of a certain label's mass to its cheapest neighbour.

    Only exactly one-hot inputs are smoothed.  Anything else is returned
    unchanged, or rejected with :class:`NotDegenerate` when ``strict``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    dist = dist if isinstance(dist, PreferenceDistribution) else PreferenceDistribution(as_probs(dist))
    if not dist.is_one_hot():
        if strict:
            raise NotDegenerate(f"targeted smoothing needs a one-hot distribution, got {dist}")
        return dist
    cost = _default_cost() if cost is None else np.asarray(cost, dtype=float)
    d = dist.d
    if cost.shape != (d, d):
        raise DimensionMismatch(f"cost matrix {cost.shape} does not match d={d}")
    i = int(np.argmax(dist.probs))
    j = next_likely_category(i, cost)
    # Exact rational arithmetic, rounded once, so 0.0012 * 5/6 is exactly 0.001.
    moved = Fraction(alpha) * (d - 1) / d
    out = np.zeros(d)
    out[i] = float(1 - moved)
    out[j] = float(moved)
    return PreferenceDistribution(out)


def smooth_uniform(dist, alpha: float) -> PreferenceDistribution:
    """Classic label smoothing ``p * (1 - alpha) + alpha / d``."""
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    p = as_probs(dist)
    return PreferenceDistribution(p * (1.0 - alpha) + alpha / p.size)

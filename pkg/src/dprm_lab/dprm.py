"""Distributional reward model: featurizer, softmax head, losses and training.

The head maps a fixed-size text feature vector to a distribution over
preference categories.  It can be fitted with cross-entropy, with an
index-distance Wasserstein loss, or with the reward-difference OT loss.
Gradients of the transport losses come from Sinkhorn potentials; reported
evaluation numbers always use the exact solver.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import re
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyDataset, EmptyResponse, ValidationError
from .preference import CategorySchema, PreferenceDistribution, as_probs
from .reward import expected_reward
from .transport import build_cost_matrix, index_cost_matrix, ot_value_and_grad, solve_exact, wasserstein_p

CE_CLAMP = 1e-12
LOSS_KINDS = ("CE", "W", "OT")
SOURCE_TAGS = ("helpfulness", "harmlessness", "synthetic")
METRICS_HEADER = ("epoch", "split", "loss_kind", "mean_loss", "mean_w1", "mean_ce", "reward_mae")

_TOKEN = re.compile(r"[a-z0-9']+")


@dataclass
class PreferenceRecord:
    id: str
    prompt: str
    response: str
    target: PreferenceDistribution
    group_size: int
    source_tag: str = "synthetic"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.target, PreferenceDistribution):
            self.target = PreferenceDistribution(self.target)
        if self.source_tag not in SOURCE_TAGS:
            raise ValidationError(f"unknown source tag {self.source_tag!r}")
        if self.group_size < 0:
            raise ValidationError("group_size must be non-negative")

    def to_json(self) -> str:
        row = {
            "id": self.id,
            "prompt": self.prompt,
            "response": self.response,
            "target": self.target.tolist(),
            "group_size": self.group_size,
            "source": self.source_tag,
        }
        row.update(self.meta)
        return json.dumps(row, sort_keys=False)

    @classmethod
    def from_json(cls, line: str) -> "PreferenceRecord":
        row = json.loads(line)
        if not isinstance(row, dict):
            raise ValidationError("record is not a JSON object")
        try:
            core = {k: row.pop(k) for k in ("id", "prompt", "response", "target", "group_size", "source")}
        except KeyError as exc:
            raise ValidationError(f"record is missing field {exc}") from exc
        target = np.asarray(core["target"], dtype=float)
        if target.ndim != 1 or abs(target.sum() - 1.0) > 1e-9 or np.any(target < 0):
            raise ValidationError("record target is not a simplex vector")
        return cls(
            id=str(core["id"]),
            prompt=str(core["prompt"]),
            response=str(core["response"]),
            target=PreferenceDistribution(target),
            group_size=int(core["group_size"]),
            source_tag=str(core["source"]),
            meta=row,
        )


def dumps_jsonl(records: Sequence[PreferenceRecord]) -> str:
    return "".join(r.to_json() + "\n" for r in records)


def load_jsonl(path) -> list[PreferenceRecord]:
    """Read a dataset; malformed lines raise ``ValidationError`` naming the line."""
    records, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = PreferenceRecord.from_json(line)
            except (ValueError, TypeError) as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
            if rec.id in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate record id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return records


# ---------------------------------------------------------------------------
# featurizer


@dataclass(frozen=True)
class FeaturizerConfig:
    dim: int = 512
    prompt_dim: int = 128
    max_ngram: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.prompt_dim < self.dim:
            raise ValidationError("prompt_dim must lie strictly between 0 and dim")
        if self.max_ngram < 1:
            raise ValidationError("max_ngram must be >= 1")


def _ngrams(text: str, n: int):
    toks = _TOKEN.findall(text.lower())
    for k in range(1, n + 1):
        for i in range(len(toks) - k + 1):
            yield " ".join(toks[i : i + k])


def _bucket(space: str, gram: str, size: int, seed: int) -> int:
    h = hashlib.blake2b(f"{space}\x1f{gram}".encode(), digest_size=8, salt=seed.to_bytes(8, "little"))
    return int.from_bytes(h.digest(), "little") % size


def featurize(prompt: str, response: str, config: FeaturizerConfig = FeaturizerConfig()) -> np.ndarray:
    """L2-normalized hashed n-gram counts; prompt and response use disjoint buckets."""
    if not response or not response.strip():
        raise EmptyResponse("cannot featurize an empty response")
    x = np.zeros(config.dim)
    for gram in _ngrams(prompt or "", config.max_ngram):
        x[_bucket("p", gram, config.prompt_dim, config.seed)] += 1.0
    resp_dim = config.dim - config.prompt_dim
    for gram in _ngrams(response, config.max_ngram):
        x[config.prompt_dim + _bucket("r", gram, resp_dim, config.seed)] += 1.0
    return x / np.linalg.norm(x)


def featurize_records(records: Sequence[PreferenceRecord], config: FeaturizerConfig) -> np.ndarray:
    return np.stack([featurize(r.prompt, r.response, config) for r in records])


# ---------------------------------------------------------------------------
# head


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class DistHead:
    weights: np.ndarray  # (F, d)
    bias: np.ndarray  # (d,)

    @classmethod
    def zeros(cls, n_features: int, d: int) -> "DistHead":
        return cls(np.zeros((n_features, d)), np.zeros(d))

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1]

    def logits(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        if x.shape[-1] != self.n_features:
            raise DimensionMismatch(f"features have {x.shape[-1]} entries, head expects {self.n_features}")
        return x @ self.weights + self.bias

    def predict_batch(self, features: np.ndarray) -> np.ndarray:
        return softmax(self.logits(features))

    def copy(self) -> "DistHead":
        return DistHead(self.weights.copy(), self.bias.copy())

    def to_dict(self, featurizer: FeaturizerConfig | None = None, seed: int | None = None) -> dict:
        return {
            "F": self.n_features,
            "d": self.d,
            "weights": self.weights.ravel().tolist(),
            "bias": self.bias.tolist(),
            "featurizer": asdict(featurizer) if featurizer else None,
            "seed": seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DistHead":
        try:
            F, d = int(data["F"]), int(data["d"])
            w = np.asarray(data["weights"], dtype=float).reshape(F, d)
            b = np.asarray(data["bias"], dtype=float).reshape(d)
        except (KeyError, ValueError, TypeError) as exc:
            raise ValidationError(f"malformed checkpoint: {exc}") from exc
        return cls(w, b)


def load_checkpoint(path):
    """``(head, featurizer_config)`` from a checkpoint JSON file."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read checkpoint {path}: {exc}") from exc
    cfg = FeaturizerConfig(**data["featurizer"]) if data.get("featurizer") else FeaturizerConfig()
    return DistHead.from_dict(data), cfg


def predict(head: DistHead, features) -> PreferenceDistribution:
    return PreferenceDistribution(softmax(head.logits(features)))


# ---------------------------------------------------------------------------
# losses


def loss_ce(pred, target) -> float:
    p = np.maximum(as_probs(pred), CE_CLAMP)
    return float(-(as_probs(target) * np.log(p)).sum())


def loss_ot(pred, target, M=None, differentiable: bool = False, eps: float = 0.05) -> float:
    """Exact OT cost, or the Sinkhorn-regularized value when ``differentiable``."""
    M = build_cost_matrix(CategorySchema.default()) if M is None else M
    if differentiable:
        return ot_value_and_grad(as_probs(pred), as_probs(target), M, "sinkhorn", eps)[0]
    return solve_exact(as_probs(pred), as_probs(target), M)[0].cost


def loss_w(pred, target, p: float = 1.0) -> float:
    """W_p under the index-distance ground metric ``|i - j|``."""
    q = as_probs(pred)
    return wasserstein_p(q, as_probs(target), index_cost_matrix(q.size), p)


def _softmax_backward(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    return p * (grad_p - (p * grad_p).sum(axis=-1, keepdims=True))


def loss_and_logit_grad(kind: str, pred: np.ndarray, target: np.ndarray, M=None, eps: float = 0.05):
    """Loss value and its gradient with respect to the head logits for one example."""
    if kind == "CE":
        clamped = np.maximum(pred, CE_CLAMP)
        value = float(-(target * np.log(clamped)).sum())
        grad_p = np.where(pred > CE_CLAMP, -target / clamped, 0.0)
    elif kind in ("OT", "W"):
        value, grad_p = ot_value_and_grad(pred, target, M, "sinkhorn", eps, tol=1e-10)
    else:
        raise ValidationError(f"unknown loss kind {kind!r}")
    return value, _softmax_backward(pred, grad_p)


def _exact_loss(kind: str, pred, target, reward_cost, index_cost) -> float:
    if kind == "CE":
        return loss_ce(pred, target)
    M = reward_cost if kind == "OT" else index_cost
    return solve_exact(pred, target, M)[0].cost


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr_start: float = 2e-5
    lr_end: float = 2e-7
    batch_size: int = 12
    loss_kind: str = "OT"
    sinkhorn_eps: float = 0.05
    seed: int = 0
    heldout_fraction: float = 0.1
    optimizer: str = "adam"

    def __post_init__(self):
        object.__setattr__(self, "loss_kind", self.loss_kind.upper())
        if self.loss_kind not in LOSS_KINDS:
            raise ValidationError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if not self.lr_start >= self.lr_end > 0:
            raise ValidationError("need lr_start >= lr_end > 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValidationError("batch_size must be >= 1 and epochs >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if not 0 < self.heldout_fraction < 1:
            raise ValidationError("heldout_fraction must lie in (0, 1)")

    def lr_at(self, epoch: int) -> float:
        """Geometric decay from ``lr_start`` (first epoch) to ``lr_end`` (last)."""
        if self.epochs <= 1:
            return self.lr_start
        return self.lr_start * (self.lr_end / self.lr_start) ** (epoch / (self.epochs - 1))


@dataclass
class LossCurve:
    rows: list = field(default_factory=list)
    best_epoch: int = 0

    def heldout(self, column: str = "mean_loss") -> list:
        return [r[column] for r in self.rows if r["split"] == "heldout"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in self.rows:
            w.writerow([r["epoch"], r["split"], r["loss_kind"]] + [repr(float(r[k])) for k in METRICS_HEADER[3:]])
        return buf.getvalue()


class _Adam:
    def __init__(self, shapes, b1=0.9, b2=0.999, eps=1e-8):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.b1, self.b2, self.eps, self.t = b1, b2, eps, 0

    def step(self, params, grads, lr):
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mhat = m / (1 - self.b1**self.t)
            vhat = v / (1 - self.b2**self.t)
            p -= lr * mhat / (np.sqrt(vhat) + self.eps)


def split_indices(n: int, heldout_fraction: float, seed: int):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    perm = rng.permutation(n)
    n_held = max(1, int(round(n * heldout_fraction))) if n > 1 else 0
    return np.sort(perm[n_held:]), np.sort(perm[:n_held])


def _split_metrics(head, X, T, kind, reward_cost, index_cost, rewards):
    P = head.predict_batch(X)
    w1 = np.array([solve_exact(p, t, reward_cost)[0].cost for p, t in zip(P, T)])
    ce = np.array([loss_ce(p, t) for p, t in zip(P, T)])
    if kind == "OT":
        loss = w1
    elif kind == "CE":
        loss = ce
    else:
        loss = np.array([solve_exact(p, t, index_cost)[0].cost for p, t in zip(P, T)])
    mae = np.abs(P @ rewards - T @ rewards)
    return {"mean_loss": loss.mean(), "mean_w1": w1.mean(), "mean_ce": ce.mean(), "reward_mae": mae.mean()}


def train(
    head: DistHead | None,
    dataset: Sequence[PreferenceRecord],
    config: TrainConfig = TrainConfig(),
    featurizer: FeaturizerConfig = FeaturizerConfig(),
    schema: CategorySchema | None = None,
    features: np.ndarray | None = None,
):
    """Mini-batch training; returns the best held-out checkpoint and the loss curve.

    Epoch 0 of the curve is the untrained head.  Held-out selection uses the
    configured loss evaluated exactly (no entropic smoothing).
    """
    if not dataset:
        raise EmptyDataset("cannot train on an empty dataset")
    schema = schema or CategorySchema.default()
    reward_cost = build_cost_matrix(schema)
    index_cost = index_cost_matrix(schema.d)
    train_cost = reward_cost if config.loss_kind == "OT" else index_cost
    rewards = schema.rewards
    X = featurize_records(dataset, featurizer) if features is None else np.asarray(features, dtype=float)
    T = np.stack([r.target.probs for r in dataset])
    if T.shape[1] != schema.d:
        raise DimensionMismatch(f"targets have {T.shape[1]} categories, schema has {schema.d}")
    head = DistHead.zeros(X.shape[1], schema.d) if head is None else head.copy()
    if head.n_features != X.shape[1]:
        raise DimensionMismatch(f"head expects {head.n_features} features, data has {X.shape[1]}")
    tr, ho = split_indices(len(dataset), config.heldout_fraction, config.seed)
    if ho.size == 0:
        ho = tr
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 2]))
    opt = _Adam([head.weights.shape, head.bias.shape])
    curve = LossCurve()

    def record(epoch, train_loss):
        m_tr = _split_metrics(head, X[tr], T[tr], config.loss_kind, reward_cost, index_cost, rewards)
        if train_loss is not None:
            m_tr["mean_loss"] = train_loss
        m_ho = _split_metrics(head, X[ho], T[ho], config.loss_kind, reward_cost, index_cost, rewards)
        for split, m in (("train", m_tr), ("heldout", m_ho)):
            curve.rows.append({"epoch": epoch, "split": split, "loss_kind": config.loss_kind, **m})
        return m_ho["mean_loss"]

    best_loss = record(0, None)
    best = head.copy()
    for epoch in range(1, config.epochs + 1):
        lr = config.lr_at(epoch - 1)
        order = rng.permutation(tr)
        losses = []
        for start in range(0, order.size, config.batch_size):
            idx = order[start : start + config.batch_size]
            P = head.predict_batch(X[idx])
            gz = np.empty_like(P)
            for k, (p, t) in enumerate(zip(P, T[idx])):
                value, gz[k] = loss_and_logit_grad(config.loss_kind, p, t, train_cost, config.sinkhorn_eps)
                losses.append(value)
            gz /= idx.size
            gw, gb = X[idx].T @ gz, gz.sum(axis=0)
            if config.optimizer == "adam":
                opt.step([head.weights, head.bias], [gw, gb], lr)
            else:
                head.weights -= lr * gw
                head.bias -= lr * gb
        held = record(epoch, float(np.mean(losses)))
        if held < best_loss:
            best_loss, best = held, head.copy()
            curve.best_epoch = epoch
    return best, curve


# ---------------------------------------------------------------------------
# evaluation


def evaluate(head: DistHead, dataset: Sequence[PreferenceRecord], featurizer: FeaturizerConfig = FeaturizerConfig(),
             schema: CategorySchema | None = None, features: np.ndarray | None = None) -> dict:
    """Per-category predicted mass (mean, std) plus mean W1, CE and reward error."""
    if not dataset:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    schema = schema or CategorySchema.default()
    X = featurize_records(dataset, featurizer) if features is None else features
    T = np.stack([r.target.probs for r in dataset])
    m = _split_metrics(head, X, T, "OT", build_cost_matrix(schema), None, schema.rewards)
    P = head.predict_batch(X)
    return {
        "n": len(dataset),
        "categories": [c.name for c in schema.categories],
        "mean_mass": P.mean(axis=0).tolist(),
        "std_mass": P.std(axis=0).tolist(),
        "mean_w1": float(m["mean_w1"]),
        "mean_ce": float(m["mean_ce"]),
        "reward_mae": float(m["reward_mae"]),
        "mean_expected_reward": float(np.mean([expected_reward(p, schema) for p in P])),
    }


def metrics_csv_row(metrics: dict, epoch: int = 0, split: str = "eval", loss_kind: str = "-") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    w.writerow([epoch, split, loss_kind, repr(metrics["mean_w1"]), repr(metrics["mean_w1"]),
                repr(metrics["mean_ce"]), repr(metrics["reward_mae"])])
    return buf.getvalue()

"""Synthetic preference-distribution datasets.

Each synthetic response carries a hidden :class:`LatentQuality` that is
rendered into its text through quality-indicative tokens, so a reader (the
synthetic annotator) and a learner (the featurizer + head) see the same
signal.  Personas turn a latent quality into a categorical label with
persona-specific thresholds and noise.

Dataset construction runs three steps per chosen/rejected pair: a prior
panel aggregate (resampled until the chosen response is favoured), posterior
correction with one label per persona, and targeted smoothing of any
distribution that is still fully certain.
"""

from __future__ import annotations

import json
import logging
import os
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import ClientFailure, ValidationError
from .preference import (
    DEFAULT_ALPHA,
    CategorySchema,
    GroupPreference,
    UserPreference,
    aggregate,
    posterior_fold,
    smooth_targeted,
)
from .reward import expected_reward
from .transport import build_cost_matrix

log = logging.getLogger(__name__)

REMOTE_URL_ENV = "DPRM_LAB_REMOTE_URL"
MAX_PRIOR_RESAMPLES = 10

# Helpfulness score at which each helpfulness tag fits best.
_HELP_CENTERS = {"Helpful": 0.5, "NeutralHelpful": 0.0, "NotHelpful": -0.5}
_AFFINITY_SCALE = 5.0


@dataclass(frozen=True)
class LatentQuality:
    helpfulness: float
    harm: float

    def __post_init__(self):
        if not -1.0 <= self.helpfulness <= 1.0:
            raise ValidationError(f"helpfulness {self.helpfulness} outside [-1, 1]")
        if not 0.0 <= self.harm <= 1.0:
            raise ValidationError(f"harm {self.harm} outside [0, 1]")


@dataclass(frozen=True)
class Persona:
    name: str
    helpfulness_threshold: float = 0.0
    harm_sensitivity: float = 1.0
    noise_temp: float = 0.5
    seed_offset: int = 0

    def __post_init__(self):
        if not self.noise_temp > 0:
            raise ValidationError(f"persona {self.name}: noise_temp must be positive")


DEFAULT_PANEL: tuple[Persona, ...] = (
    Persona("StrictScientist", 0.30, 1.2, 0.5, 1),
    Persona("KindergartenTeacher", -0.20, 1.6, 0.6, 2),
    Persona("Politician", 0.10, 0.7, 0.8, 3),
    Persona("Teenager", -0.30, 0.6, 1.0, 4),
    Persona("CEO", 0.20, 1.0, 0.6, 5),
    Persona("Artist", -0.10, 0.8, 0.9, 6),
    Persona("GeneralAssistant", 0.00, 1.0, 0.5, 7),
)


def persona_affinities(persona: Persona, quality: LatentQuality, schema: CategorySchema) -> np.ndarray:
    help_score = quality.helpfulness - persona.helpfulness_threshold
    harm_score = persona.harm_sensitivity * quality.harm - 0.5
    aff = np.empty(schema.d)
    for k, c in enumerate(schema.categories):
        gap = help_score - _HELP_CENTERS[c.helpfulness]
        # the end categories absorb everything beyond their centre
        if c.helpfulness == "Helpful":
            gap = min(gap, 0.0)
        elif c.helpfulness == "NotHelpful":
            gap = max(gap, 0.0)
        aff[k] = -_AFFINITY_SCALE * gap**2
        if c.harmlessness == "Harmful":
            aff[k] += _AFFINITY_SCALE * harm_score
    return aff


def persona_probs(persona: Persona, quality: LatentQuality, schema: CategorySchema | None = None) -> np.ndarray:
    """Category probabilities of one persona for one latent quality."""
    schema = schema or CategorySchema.default()
    z = persona_affinities(persona, quality, schema) / persona.noise_temp
    z -= z.max()
    p = np.exp(z)
    return p / p.sum()


def population_preference(quality: LatentQuality, panel: Sequence[Persona] = DEFAULT_PANEL, schema=None) -> np.ndarray:
    """Ground-truth population preference: the panel-average label law."""
    return np.mean([persona_probs(p, quality, schema) for p in panel], axis=0)


def sample_label(persona: Persona, quality: LatentQuality, seed, schema: CategorySchema | None = None) -> UserPreference:
    schema = schema or CategorySchema.default()
    rng = np.random.default_rng(_seed_words(seed, persona.seed_offset))
    k = int(rng.choice(schema.d, p=persona_probs(persona, quality, schema)))
    return UserPreference(k + 1, schema.d)


def _seed_words(*parts) -> list[int]:
    words = []
    for p in parts:
        if isinstance(p, (list, tuple)):
            words.extend(int(x) for x in p)
        else:
            words.append(int(p))
    return words


# ---------------------------------------------------------------------------
# text rendering

GOOD_WORDS = ("accurate", "detailed", "clear", "specific", "correct", "thorough", "practical", "precise")
MID_WORDS = ("basic", "general", "okay", "brief", "partial", "simple", "generic", "plain")
BAD_WORDS = ("vague", "irrelevant", "wrong", "unrelated", "confusing", "evasive", "incorrect", "useless")
HARM_WORDS = ("dangerous", "insulting", "illegal", "toxic", "misleading", "reckless")
SAFE_WORDS = ("safe", "respectful", "careful", "lawful", "kind", "honest")
TOPICS = (
    "garden", "taxes", "python", "recipe", "travel", "sleep", "budget", "chemistry", "history", "fitness",
    "music", "car", "resume", "poetry", "weather", "physics", "dog", "medicine", "startup", "climate",
    "chess", "painting", "loan", "language", "router", "camping", "baking", "election", "vaccine", "bicycle",
)
VERBS = ("explain", "fix", "plan", "improve", "choose", "learn", "describe", "compare")

HELP_SLOTS = 8
HARM_SLOTS = 6


def quantize(quality: LatentQuality) -> LatentQuality:
    """Latent quality at the resolution the rendered text can express."""
    k = round(quality.helpfulness * HELP_SLOTS)
    z = round(quality.harm * HARM_SLOTS)
    return LatentQuality(k / HELP_SLOTS, z / HARM_SLOTS)


def render_prompt(rng: np.random.Generator) -> str:
    a, b = rng.choice(len(TOPICS), size=2, replace=False)
    verb = VERBS[int(rng.integers(len(VERBS)))]
    return f"please {verb} {TOPICS[a]} and {TOPICS[b]} for me"


def render_response(quality: LatentQuality, rng: np.random.Generator, prompt: str = "") -> str:
    """Text whose quality tokens encode ``quantize(quality)`` exactly."""
    q = quantize(quality)
    k = round(q.helpfulness * HELP_SLOTS)
    n_good, n_bad = max(k, 0), max(-k, 0)
    n_mid = HELP_SLOTS - n_good - n_bad
    n_harm = round(q.harm * HARM_SLOTS)
    words = (
        [GOOD_WORDS[i] for i in rng.integers(len(GOOD_WORDS), size=n_good)]
        + [BAD_WORDS[i] for i in rng.integers(len(BAD_WORDS), size=n_bad)]
        + [MID_WORDS[i] for i in rng.integers(len(MID_WORDS), size=n_mid)]
        + [HARM_WORDS[i] for i in rng.integers(len(HARM_WORDS), size=n_harm)]
        + [SAFE_WORDS[i] for i in rng.integers(len(SAFE_WORDS), size=HARM_SLOTS - n_harm)]
    )
    topic = [w for w in prompt.split() if w in TOPICS]
    words += [topic[i] for i in rng.integers(len(topic), size=3)] if topic else []
    order = rng.permutation(len(words))
    return " ".join(words[i] for i in order)


def decode_quality(response: str) -> LatentQuality:
    toks = response.split()
    good = sum(t in GOOD_WORDS for t in toks)
    bad = sum(t in BAD_WORDS for t in toks)
    harm = sum(t in HARM_WORDS for t in toks)
    if good + bad + sum(t in MID_WORDS for t in toks) != HELP_SLOTS:
        raise ValidationError("response was not rendered from a latent quality")
    return LatentQuality((good - bad) / HELP_SLOTS, harm / HARM_SLOTS)


# ---------------------------------------------------------------------------
# annotator clients


class AnnotatorClient(Protocol):
    def label(self, prompt: str, response: str, persona: Persona, seed=None) -> int:
        """Category id in 1..d chosen by ``persona`` for the pair."""


@dataclass
class SyntheticSampler:
    """Reads the latent quality back from rendered text and samples a persona label."""

    seed: int = 0
    schema: CategorySchema = field(default_factory=CategorySchema.default)

    def label(self, prompt: str, response: str, persona: Persona, seed=None) -> int:
        quality = decode_quality(response)
        words = [self.seed] + ([] if seed is None else _seed_words(seed))
        return sample_label(persona, quality, words, self.schema).category


@dataclass
class RemoteJson:
    """POSTs ``{"prompt", "response", "persona"}`` and expects ``{"category": id}``."""

    url: str | None = None
    timeout: float = 10.0
    d: int = 6

    def __post_init__(self):
        self.url = self.url or os.environ.get(REMOTE_URL_ENV)
        if not self.url:
            raise ValidationError(f"no remote annotator URL (pass one or set {REMOTE_URL_ENV})")

    def label(self, prompt: str, response: str, persona: Persona, seed=None) -> int:
        body = json.dumps({"prompt": prompt, "response": response, "persona": persona.name}).encode()
        req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"}, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                raw = resp.read()
        except urllib.error.HTTPError as exc:
            raise ClientFailure(f"annotator returned HTTP {exc.code}", payload=None) from exc
        except (urllib.error.URLError, OSError) as exc:
            raise ClientFailure(f"annotator unreachable at {self.url}: {exc}") from exc
        try:
            payload = json.loads(raw)
            category = payload["category"]
        except (ValueError, KeyError, TypeError) as exc:
            log.error("malformed annotator payload: %r", raw[:500])
            raise ClientFailure("malformed annotator response", payload=raw[:500]) from exc
        if isinstance(category, bool) or not isinstance(category, int) or not 1 <= category <= self.d:
            log.error("annotator returned invalid category: %r", payload)
            raise ClientFailure(f"category {category!r} outside 1..{self.d}", payload=payload)
        return category


# ---------------------------------------------------------------------------
# dataset construction


@dataclass(frozen=True)
class DatasetSpec:
    n_pairs: int = 1000
    helpfulness_fraction: float = 2 / 3
    panel: tuple[Persona, ...] = DEFAULT_PANEL
    prior_panel_size: int = 5
    posterior_labels_per_record: int = 7
    alpha_smooth: float = DEFAULT_ALPHA
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.helpfulness_fraction <= 1.0:
            raise ValidationError("helpfulness_fraction must lie in [0, 1]")
        if min(self.n_pairs, self.prior_panel_size, len(self.panel)) < 1:
            raise ValidationError("n_pairs, prior_panel_size and the panel must be non-empty")
        if self.posterior_labels_per_record < 0:
            raise ValidationError("posterior_labels_per_record must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["panel"] = [asdict(p) for p in self.panel]
        return d


def _panel_labels(client, prompt, response, personas, seed_words, d) -> list[UserPreference]:
    labels = []
    for k, persona in enumerate(personas):
        cid = client.label(prompt, response, persona, seed=seed_words + [k])
        if not isinstance(cid, (int, np.integer)) or not 1 <= cid <= d:
            raise ClientFailure(f"client returned category {cid!r} outside 1..{d}", payload=cid)
        labels.append(UserPreference(int(cid), d))
    return labels


def build_prior(prompt, chosen_response, rejected_response, client, spec: DatasetSpec, schema=None, seed=0):
    """Prior group preferences for a pair, favouring the chosen response.

    Returns ``(chosen, rejected, resamples, consistent)``.  The panel is drawn
    again (up to ten times) while the chosen response does not strictly win
    on expected reward; a pair that never does is returned flagged.
    """
    schema = schema or CategorySchema.default()
    panel = spec.panel
    personas = [panel[k % len(panel)] for k in range(spec.prior_panel_size)]
    base = _seed_words(seed)
    for attempt in range(MAX_PRIOR_RESAMPLES + 1):
        words = base + [attempt]
        chosen = aggregate(_panel_labels(client, prompt, chosen_response, personas, words + [0], schema.d))
        rejected = aggregate(_panel_labels(client, prompt, rejected_response, personas, words + [1], schema.d))
        if expected_reward(chosen.dist, schema) > expected_reward(rejected.dist, schema):
            return chosen, rejected, attempt, True
    return chosen, rejected, MAX_PRIOR_RESAMPLES, False


def apply_posterior(prior: GroupPreference, new_labels: Sequence[UserPreference]) -> GroupPreference:
    return posterior_fold(prior, new_labels)


@dataclass(frozen=True)
class SyntheticPair:
    prompt: str
    chosen: str
    rejected: str
    chosen_quality: LatentQuality
    rejected_quality: LatentQuality
    source: str


def draw_pair(rng: np.random.Generator, helpfulness_fraction: float = 2 / 3) -> SyntheticPair:
    """Prompt plus chosen/rejected responses; chosen latents dominate pointwise."""
    prompt = render_prompt(rng)
    if rng.random() < helpfulness_fraction:
        source = "helpfulness"
        h_r = rng.uniform(-1.0, 0.5)
        h_c = min(1.0, h_r + rng.uniform(0.6, 1.3))
        z_r = rng.uniform(0.0, 0.3)
        z_c = z_r * rng.uniform(0.0, 1.0)
    else:
        source = "harmlessness"
        z_r = rng.uniform(0.5, 1.0)
        z_c = max(0.0, z_r - rng.uniform(0.4, 0.9))
        h_r = rng.uniform(-0.6, 1.0)
        h_c = min(1.0, h_r + rng.uniform(0.0, 0.3))
    qc = quantize(LatentQuality(h_c, z_c))
    qr = quantize(LatentQuality(h_r, z_r))
    return SyntheticPair(prompt, render_response(qc, rng, prompt), render_response(qr, rng, prompt), qc, qr, source)


def pair_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(index)])


def generate_dataset(spec: DatasetSpec, client=None, seed: int | None = None, schema=None):
    """``2 * n_pairs`` preference records (chosen and rejected) plus a manifest dict.

    Every pair is driven by its own seed derived from ``(seed, pair index)``,
    so pairs are independent of each other and of evaluation order.
    On a :class:`ClientFailure` the exception is re-raised with the records
    completed so far attached as ``exc.partial``.
    """
    from .dprm import PreferenceRecord

    schema = schema or CategorySchema.default()
    seed = spec.seed if seed is None else seed
    client = client or SyntheticSampler(seed=seed, schema=schema)
    cost = build_cost_matrix(schema).entries
    records: list[PreferenceRecord] = []
    counts = {"pairs": 0, "records": 0, "smoothed": 0, "degenerate": 0, "prior_resampled": 0,
              "prior_inconsistent": 0, "inconsistent": 0}
    for idx in range(spec.n_pairs):
        ss = pair_seed(seed, idx)
        rng = np.random.default_rng(ss)
        pair = draw_pair(rng, spec.helpfulness_fraction)
        words = [seed, idx]
        try:
            prior_c, prior_r, resamples, prior_ok = build_prior(
                pair.prompt, pair.chosen, pair.rejected, client, spec, schema, seed=words
            )
            posterior_personas = [spec.panel[k % len(spec.panel)] for k in range(spec.posterior_labels_per_record)]
            post = []
            for role, response, prior in ((0, pair.chosen, prior_c), (1, pair.rejected, prior_r)):
                labels = _panel_labels(client, pair.prompt, response, posterior_personas, words + [99, role], schema.d)
                post.append(apply_posterior(prior, labels))
        except ClientFailure as exc:
            exc.partial = records
            exc.counts = counts
            raise
        finals = []
        for group in post:
            degenerate = group.dist.is_one_hot()
            target = smooth_targeted(group.dist, spec.alpha_smooth, cost) if degenerate else group.dist
            finals.append((group, target, degenerate))
        ordered = bool(expected_reward(finals[0][1], schema) > expected_reward(finals[1][1], schema))
        inconsistent = not (prior_ok and ordered)
        counts["pairs"] += 1
        counts["prior_resampled"] += int(resamples > 0)
        counts["prior_inconsistent"] += int(not prior_ok)
        counts["inconsistent"] += int(inconsistent)
        for role, (group, target, degenerate), response, quality in zip(
            ("chosen", "rejected"), finals, (pair.chosen, pair.rejected), (pair.chosen_quality, pair.rejected_quality)
        ):
            counts["records"] += 1
            counts["degenerate"] += int(degenerate)
            counts["smoothed"] += int(degenerate)
            records.append(
                PreferenceRecord(
                    id=f"{seed}-{idx:06d}-{role}",
                    prompt=pair.prompt,
                    response=response,
                    target=target,
                    group_size=group.group_size,
                    source_tag=pair.source,
                    meta={
                        "pair": idx,
                        "role": role,
                        "smoothed": degenerate,
                        "inconsistent": inconsistent,
                        "resamples": resamples,
                        "quality": [quality.helpfulness, quality.harm],
                    },
                )
            )
    manifest = {"spec": spec.to_dict(), "seed": seed, "counts": counts, "status": "complete"}
    return records, manifest


# ---------------------------------------------------------------------------
# alignment environment


@dataclass(frozen=True)
class SyntheticEnv:
    prompts: tuple[str, ...]
    responses: tuple[tuple[str, ...], ...]
    qualities: tuple[tuple[LatentQuality, ...], ...]
    truth: np.ndarray  # (n_prompts, K, d) population preferences
    seed: int = 0

    def __post_init__(self):
        if min(len(r) for r in self.responses) < 2:
            raise ValidationError("every prompt needs at least two candidate responses")
        t = np.asarray(self.truth)
        if np.any(t < 0) or not np.allclose(t.sum(axis=-1), 1.0, atol=1e-9):
            raise ValidationError("truth distributions must lie on the simplex")

    @property
    def n_prompts(self) -> int:
        return len(self.prompts)

    @property
    def k(self) -> int:
        return len(self.responses[0])

    def truth_rewards(self, schema: CategorySchema | None = None) -> np.ndarray:
        schema = schema or CategorySchema.default()
        return np.asarray(self.truth) @ schema.rewards


def make_env(
    n_prompts: int = 24,
    k: int = 4,
    seed: int = 0,
    panel: Sequence[Persona] = DEFAULT_PANEL,
    schema: CategorySchema | None = None,
) -> SyntheticEnv:
    schema = schema or CategorySchema.default()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7919]))
    prompts, responses, qualities, truth = [], [], [], []
    for _ in range(n_prompts):
        prompt = render_prompt(rng)
        qs = [quantize(LatentQuality(rng.uniform(-1, 1), rng.uniform(0, 1) ** 2)) for _ in range(k)]
        prompts.append(prompt)
        qualities.append(tuple(qs))
        responses.append(tuple(render_response(q, rng, prompt) for q in qs))
        truth.append([population_preference(q, panel, schema) for q in qs])
    return SyntheticEnv(tuple(prompts), tuple(responses), tuple(qualities), np.array(truth), seed)

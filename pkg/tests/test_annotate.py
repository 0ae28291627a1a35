import http.server
import json
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dprm_lab import (
    ClientFailure,
    GroupPreference,
    LatentQuality,
    Persona,
    PreferenceDistribution,
    UserPreference,
    ValidationError,
    aggregate,
)
from dprm_lab.annotate import (
    DEFAULT_PANEL,
    DatasetSpec,
    RemoteJson,
    SyntheticSampler,
    apply_posterior,
    build_prior,
    decode_quality,
    generate_dataset,
    persona_probs,
    quantize,
    render_response,
    sample_label,
)
from dprm_lab.dprm import dumps_jsonl
from dprm_lab.reward import expected_reward

BEST = LatentQuality(1.0, 0.0)
WORST = LatentQuality(-1.0, 1.0)


class TestPersona:
    @pytest.mark.parametrize("quality, category", [(BEST, 1), (WORST, 6)])
    def test_saturated(self, quality, category):
        cold = Persona("cold", noise_temp=1e-3)
        assert {sample_label(cold, quality, s).category for s in range(50)} == {category}

    def test_seeded(self):
        p = DEFAULT_PANEL[0]
        q = LatentQuality(0.1, 0.4)
        assert [sample_label(p, q, s).category for s in range(20)] == [sample_label(p, q, s).category for s in range(20)]

    def test_harm_sensitivity_can_disagree(self):
        q = LatentQuality(0.5, 0.45)
        calm, wary = Persona("calm", harm_sensitivity=0.3), Persona("wary", harm_sensitivity=2.0)
        differ = sum(sample_label(calm, q, s).category != sample_label(wary, q, s).category for s in range(200))
        assert differ > 0

    @pytest.mark.parametrize("harm", [0.2, 0.5, 0.9])
    def test_harm_sensitivity_monte_carlo(self, harm, schema):
        q = LatentQuality(0.2, harm)
        harmless = np.array([c.harmlessness == "Harmless" for c in schema.categories])
        n = 4000
        rates = []
        for sens in (0.5, 1.0, 1.5):
            p = Persona("p", harm_sensitivity=sens, noise_temp=0.6)
            hits = sum(harmless[sample_label(p, q, s).index] for s in range(n))
            rates.append(hits / n)
        for lo, hi in zip(rates, rates[1:]):
            sigma = np.sqrt(max(lo * (1 - lo), 1e-4) / n) * np.sqrt(2)
            assert hi <= lo + 3 * sigma

    def test_probs_smooth_in_quality(self):
        p = DEFAULT_PANEL[1]
        a = persona_probs(p, LatentQuality(0.30, 0.2))
        b = persona_probs(p, LatentQuality(0.31, 0.2))
        assert np.abs(a - b).max() < 0.05

    def test_bad_noise(self):
        with pytest.raises(ValidationError):
            Persona("x", noise_temp=0.0)

    @pytest.mark.parametrize("h, z", [(1.5, 0.0), (0.0, -0.1)])
    def test_quality_range(self, h, z):
        with pytest.raises(ValidationError):
            LatentQuality(h, z)


class TestRendering:
    @settings(max_examples=100, deadline=None)
    @given(st.floats(-1, 1), st.floats(0, 1), st.integers(0, 2**32 - 1))
    def test_decode_inverts_render(self, h, z, seed):
        q = LatentQuality(h, z)
        text = render_response(q, np.random.default_rng(seed), "please explain garden and taxes for me")
        assert decode_quality(text) == quantize(q)

    def test_decode_rejects_free_text(self):
        with pytest.raises(ValidationError):
            decode_quality("hello there")


class _Handler(http.server.BaseHTTPRequestHandler):
    reply = b'{"category": 2}'
    seen = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append(body)
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(type(self).reply)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    srv = http.server.HTTPServer(("127.0.0.1", 0), _Handler)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    _Handler.seen = []
    yield f"http://127.0.0.1:{srv.server_address[1]}/", _Handler
    srv.shutdown()
    srv.server_close()


class TestRemote:
    def test_label(self, server):
        url, handler = server
        handler.reply = b'{"category": 2}'
        assert RemoteJson(url).label("p", "r", DEFAULT_PANEL[0]) == 2
        assert handler.seen == [{"prompt": "p", "response": "r", "persona": "StrictScientist"}]

    @pytest.mark.parametrize("reply", [b'{"category": 9}', b"not json", b'{"cat": 1}', b'{"category": true}'])
    def test_bad_reply(self, server, reply):
        url, handler = server
        handler.reply = reply
        with pytest.raises(ClientFailure):
            RemoteJson(url).label("p", "r", DEFAULT_PANEL[0])

    def test_unreachable(self):
        with pytest.raises(ClientFailure):
            RemoteJson("http://127.0.0.1:9/", timeout=0.5).label("p", "r", DEFAULT_PANEL[0])

    def test_needs_url(self, monkeypatch):
        monkeypatch.delenv("DPRM_LAB_REMOTE_URL", raising=False)
        with pytest.raises(ValidationError):
            RemoteJson()

    def test_env_url(self, monkeypatch):
        monkeypatch.setenv("DPRM_LAB_REMOTE_URL", "http://example.invalid/")
        assert RemoteJson().url == "http://example.invalid/"

    def test_abort_keeps_partial(self, server):
        url, handler = server
        handler.reply = b'{"category": 9}'
        with pytest.raises(ClientFailure) as info:
            generate_dataset(DatasetSpec(n_pairs=3), RemoteJson(url))
        assert info.value.partial == []


class TestPrior:
    def test_single_persona_saturated(self):
        from dprm_lab.annotate import render_prompt

        rng = np.random.default_rng(0)
        prompt = render_prompt(rng)
        spec = DatasetSpec(panel=(Persona("cold", noise_temp=1e-3),), prior_panel_size=1)
        c, r, resamples, ok = build_prior(prompt, render_response(BEST, rng, prompt), render_response(WORST, rng, prompt),
                                          SyntheticSampler(), spec)
        assert c.probs.tolist() == [1, 0, 0, 0, 0, 0] and r.probs.tolist() == [0, 0, 0, 0, 0, 1]
        assert resamples == 0 and ok

    def test_posterior_example(self):
        prior = GroupPreference(PreferenceDistribution([1, 0, 0, 0, 0, 0]), 5)
        post = apply_posterior(prior, [UserPreference(2, 6)] * 5)
        assert post.group_size == 10 and post.probs.tolist() == [0.5, 0.5, 0, 0, 0, 0]
        assert apply_posterior(prior, []) == prior

    def test_posterior_order_free(self):
        prior = aggregate([UserPreference(3, 6)] * 2)
        new = [UserPreference(k, 6) for k in (1, 2, 2, 6, 4)]
        assert apply_posterior(prior, new).dist == apply_posterior(prior, new[::-1]).dist


class TestDataset:
    def test_invariants(self, small_corpus, schema):
        records, manifest = small_corpus
        counts = manifest["counts"]
        assert len(records) == 200 == counts["records"]
        smoothed = sum(r.meta["smoothed"] for r in records)
        assert smoothed == counts["smoothed"] == counts["degenerate"]
        for r in records:
            p = r.target.probs
            assert abs(p.sum() - 1) <= 1e-9 and p.min() >= 0
            if r.meta["smoothed"]:
                assert sorted(p)[-2:] == pytest.approx([0.001, 0.999])
            else:
                np.testing.assert_allclose(p * r.group_size, np.round(p * r.group_size), atol=1e-9)
        for c, rj in zip(records[::2], records[1::2]):
            assert c.meta["role"] == "chosen" and rj.meta["role"] == "rejected"
            if not c.meta["inconsistent"]:
                assert expected_reward(c.target, schema) > expected_reward(rj.target, schema)

    def test_byte_identical(self):
        a, _ = generate_dataset(DatasetSpec(n_pairs=30, seed=5))
        b, _ = generate_dataset(DatasetSpec(n_pairs=30, seed=5))
        assert dumps_jsonl(a) == dumps_jsonl(b)

    def test_pairs_independent_of_count(self):
        a, _ = generate_dataset(DatasetSpec(n_pairs=10, seed=2))
        b, _ = generate_dataset(DatasetSpec(n_pairs=25, seed=2))
        assert dumps_jsonl(a) == dumps_jsonl(b[:20])

    def test_helpfulness_fraction(self):
        records, _ = generate_dataset(DatasetSpec(n_pairs=300, seed=0))
        frac = np.mean([r.source_tag == "helpfulness" for r in records[::2]])
        assert abs(frac - 2 / 3) < 0.08

    def test_prior_mostly_consistent(self):
        _, manifest = generate_dataset(DatasetSpec(n_pairs=1000, seed=0))
        counts = manifest["counts"]
        assert counts["records"] == 2000
        assert 1 - counts["prior_resampled"] / counts["pairs"] > 0.95

    @pytest.mark.parametrize("kw", [{"helpfulness_fraction": 1.5}, {"n_pairs": 0}, {"prior_panel_size": 0}])
    def test_spec_validation(self, kw):
        with pytest.raises(ValidationError):
            DatasetSpec(**kw)

import json

import numpy as np
import pytest

from dprm_lab import verify as vf
from dprm_lab.preference import smooth_targeted, smooth_uniform


@pytest.fixture(scope="module")
def clean():
    return {r.name: r for r in vf.run_checks(0)}


@pytest.fixture(scope="module")
def faulty():
    names = ["preference.targeted_smoothing_bias", "transport.w1_symmetry", "reward.ideal_distance_ordering",
             "dprm.loss_separation", "transport.line_oracle_equivalence"]
    return {r.name: r for r in vf.run_checks(0, inject_fault=True, only=names)}


class TestSuite:
    def test_all_pass(self, clean):
        failed = [f"{n}: {r.detail}" for n, r in clean.items() if not r.passed]
        assert not failed

    def test_every_module_covered(self, clean):
        assert {n.split(".")[0] for n in clean} == {"preference", "transport", "dprm", "reward", "annotate", "align"}
        assert list(clean) == vf.check_names()

    @pytest.mark.parametrize("name", ["preference.targeted_smoothing_bias", "transport.w1_symmetry",
                                      "reward.ideal_distance_ordering", "dprm.loss_separation"])
    def test_fault_is_caught(self, faulty, name):
        assert not faulty[name].passed

    def test_report_json(self, clean):
        rep = vf.report(list(clean.values()), 0)
        text = json.dumps(rep)
        back = json.loads(text)
        assert back["all_passed"] and back["notes"]["ce_clamp"] == 1e-12
        row = back["checks"][0]
        assert set(row) >= {"name", "status", "worst_residual", "seeds"}

    def test_crash_becomes_failure(self, monkeypatch):
        def boom(ctx):
            raise RuntimeError("kaput")

        monkeypatch.setattr(vf, "_CHECKS", [("x.boom", boom)])
        (res,) = vf.run_checks(0)
        assert not res.passed and "kaput" in res.detail


class TestHelpers:
    @pytest.mark.parametrize("i", range(6))
    @pytest.mark.parametrize("alpha", vf.SMOOTHING_ALPHAS)
    def test_smoothing_bias_closed_forms(self, cost, i, alpha):
        t, u = vf.smoothing_biases(cost, 6, i, alpha)
        row = np.delete(cost.entries[i], i)
        assert t == pytest.approx(alpha * 5 / 6 * row.min(), abs=1e-9)
        assert u == pytest.approx(alpha / 6 * row.sum(), abs=1e-9)
        assert t <= u + 1e-9

    def test_ordering_counterexamples_found_under_fault(self, schema):
        bad, _ = vf.ordering_counterexamples(vf.faulty_cost(schema), schema, np.random.default_rng(0), 2000)
        assert bad > 0

    def test_faulty_cost_is_asymmetric(self, schema):
        assert not vf.faulty_cost(schema).is_symmetric()

    def test_corpus_audit(self, small_corpus, schema):
        simplex, integral, order = vf.corpus_audit(small_corpus[0], schema)
        assert simplex <= 1e-9 and integral <= 1e-9 and order == 0

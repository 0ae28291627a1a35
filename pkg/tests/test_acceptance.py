"""Acceptance criteria 1-12, one test each.

Every test records a PASS/FAIL line (printed in the terminal summary) before
asserting, so a failing criterion still shows its measured numbers.
"""

import hashlib
import json
import time
from pathlib import Path

import numpy as np
import pytest

from dprm_lab import (
    CategorySchema,
    FeaturizerConfig,
    Policy,
    PPOConfig,
    TrainConfig,
    build_cost_matrix,
    loss_ce,
    loss_ot,
    smooth_targeted,
    solve_exact,
    solve_sinkhorn,
    train,
    w1_line_oracle,
    win_rate,
)
from dprm_lab import align as al
from dprm_lab import verify as vf
from dprm_lab.annotate import DatasetSpec, generate_dataset, make_env
from dprm_lab.cli import main
from dprm_lab.dprm import featurize_records

import conftest

SCHEMA = CategorySchema.default()
COST = build_cost_matrix(SCHEMA)


def verdict(n, title, ok, detail, elapsed, budget=None):
    in_time = budget is None or elapsed < budget
    status = "PASS" if ok and in_time else "FAIL"
    limit = f" (budget {budget:g}s)" if budget else ""
    conftest.ACCEPTANCE[n] = f"[{status}] {n:>2}. {title}: {detail}; {elapsed:.2f}s{limit}"
    assert ok, conftest.ACCEPTANCE[n]
    assert in_time, conftest.ACCEPTANCE[n]


def pairs(seed, n):
    g = np.random.default_rng(seed)
    return g.dirichlet(np.ones(6), size=n), g.dirichlet(np.ones(6), size=n)


def test_01_reward_table():
    t = time.perf_counter()
    names = [c.name for c in SCHEMA.categories]
    ok = (
        SCHEMA.d == 6
        and SCHEMA.rewards.tolist() == [1, 0.5, -1, -1, -1.5, -3]
        and COST.entries[0].tolist() == [0, 0.5, 2, 2, 2.5, 4]
        and len(set(names)) == 6
    )
    verdict(1, "reward table and cost row", ok, f"rewards {SCHEMA.rewards.tolist()}, row 1 {COST.entries[0].tolist()}",
            time.perf_counter() - t, 1)


def test_02_smoothing_example():
    t = time.perf_counter()
    out = smooth_targeted([1, 0, 0, 0, 0, 0], 0.0012).tolist()
    verdict(2, "targeted smoothing example", out == [0.999, 0.001, 0, 0, 0, 0], f"got {out}", time.perf_counter() - t, 1)


def test_03_targeted_bias():
    t = time.perf_counter()
    worst_gap, worst_closed = -np.inf, 0.0
    M = COST.entries
    for i in range(6):
        row = np.delete(M[i], i)
        for alpha in (0.01, 0.1, 0.3, 0.6, 0.9):
            tb, ub = vf.smoothing_biases(COST, 6, i, alpha)
            worst_gap = max(worst_gap, tb - ub)
            worst_closed = max(worst_closed, abs(tb - alpha * 5 / 6 * row.min()), abs(ub - alpha / 6 * row.sum()))
    spot = vf.smoothing_biases(COST, 6, 0, 0.6)
    ok = worst_gap <= 1e-9 and worst_closed <= 1e-9 and abs(spot[0] - 0.25) <= 1e-9 and abs(spot[1] - 1.1) <= 1e-9
    verdict(3, "targeted vs uniform smoothing bias", ok,
            f"spot {spot[0]:.12g} vs {spot[1]:.12g}, max(targeted-uniform) {worst_gap:.3g}, closed-form err {worst_closed:.1e}",
            time.perf_counter() - t, 1)


def test_04_loss_separation():
    t = time.perf_counter()
    target = [0.9, 0.1, 0, 0, 0, 0]
    near, far = [0.9, 0, 0.1, 0, 0, 0], [0.9, 0, 0, 0, 0, 0.1]
    ce = loss_ce(near, target), loss_ce(far, target)
    ot = loss_ot(near, target, COST), loss_ot(far, target, COST)
    ok = abs(ce[0] - ce[1]) <= 1e-9 and abs(ot[0] - 0.15) <= 1e-9 and abs(ot[1] - 0.35) <= 1e-9
    verdict(4, "CE blind, OT separates", ok, f"CE {ce[0]:.6f} / {ce[1]:.6f}, OT {ot[0]:.12g} / {ot[1]:.12g}",
            time.perf_counter() - t, 1)


def test_05_exact_vs_line_oracle():
    t = time.perf_counter()
    mus, nus = pairs(5, 1000)
    worst = max(abs(solve_exact(m, n, COST)[0].cost - w1_line_oracle(m, n, SCHEMA)) for m, n in zip(mus, nus))
    verdict(5, "exact solver = CDF oracle (1000 pairs)", worst <= 1e-9, f"max |diff| {worst:.2e}",
            time.perf_counter() - t, 5)


def test_06_sinkhorn_convergence():
    t = time.perf_counter()
    ladder = (1.0, 0.3, 0.1, 0.03, 0.01)
    worst_err, worst_rise = 0.0, -np.inf
    for mu, nu in zip(*pairs(6, 200)):
        exact = solve_exact(mu, nu, COST)[0].cost
        errs = [abs(solve_sinkhorn(mu, nu, COST, e, tol=1e-12)[0].cost - exact) for e in ladder]
        worst_err = max(worst_err, errs[-1])
        worst_rise = max(worst_rise, max(b - a for a, b in zip(errs, errs[1:])))
    ok = worst_err <= 0.02 and worst_rise <= 1e-10
    verdict(6, "Sinkhorn approaches exact (200 pairs)", ok,
            f"max error at eps=0.01 {worst_err:.2e}, largest rise along ladder {worst_rise:.2e}",
            time.perf_counter() - t, 30)


def test_07_gradient_checks():
    t = time.perf_counter()
    worst = vf.logit_grad_errors(np.random.default_rng(7), COST, n_cases=50)
    ok = max(worst.values()) <= 1e-3
    verdict(7, "logit gradients vs central differences (50 cases)", ok,
            f"max rel err CE {worst['CE']:.2e}, OT {worst['OT']:.2e}", time.perf_counter() - t, 30)


def test_08_ideal_distance_ordering():
    t = time.perf_counter()
    bad, _ = vf.ordering_counterexamples(COST, SCHEMA, np.random.default_rng(8), 10_000)
    verdict(8, "reward order = reversed ideal-distance order (10000 pairs)", bad == 0, f"{bad} counterexamples",
            time.perf_counter() - t, 10)


def test_09_dominance_and_same_pattern():
    t = time.perf_counter()
    premise, bad_dom = vf.dominance_violations(SCHEMA, 0)
    bad_same, flagged = vf.same_pattern_violations(SCHEMA, 0)
    ok = premise > 0 and bad_dom == 0 and bad_same == 0
    verdict(9, "unanimous dominance and shared-pattern ranking", ok,
            f"{premise} dominated pairs with {bad_dom} violations; same-pattern {bad_same} violations "
            f"({flagged} flagged pairs excluded)", time.perf_counter() - t, 30)


# The TrainConfig default lr 2e-5 -> 2e-7 barely moves a linear head in 20 epochs (about 3% W1
# reduction); this desk-scale schedule keeps the same 100:1 decay, epochs and batch.
DESK_LR = (3e-3, 3e-5)


def test_10_training_smoke():
    t = time.perf_counter()
    records, _ = generate_dataset(DatasetSpec(n_pairs=1000, seed=0))
    X = featurize_records(records, FeaturizerConfig())
    held = {}
    for kind in ("OT", "CE"):
        cfg = TrainConfig(epochs=20, lr_start=DESK_LR[0], lr_end=DESK_LR[1], loss_kind=kind, seed=0)
        _, curve = train(None, records, cfg, features=X)
        w1 = curve.heldout("mean_w1")
        held[kind] = (w1[0], w1[curve.best_epoch])
    reduction = 1 - held["OT"][1] / held["OT"][0]
    ok = len(records) == 2000 and reduction >= 0.30 and held["OT"][1] <= held["CE"][1]
    verdict(10, "OT training on 2000 records", ok,
            f"held-out W1 {held['OT'][0]:.4f} -> {held['OT'][1]:.4f} ({100 * reduction:.1f}% lower); "
            f"CE-trained W1 {held['CE'][1]:.4f}", time.perf_counter() - t, 300)


def test_11_alignment_smoke():
    t = time.perf_counter()
    lines, ok = [], True
    for seed in (0, 1, 2):
        env = make_env(seed=seed)
        ref = Policy.uniform(env)
        pol, curves = al.align(ref, env, al.reward_table(env), PPOConfig(seed=seed))
        r = curves.column("mean_total_reward")
        tenth = len(r) // 10
        first, last = r[:tenth].mean(), r[-tenth:].mean()
        wr = win_rate(pol, ref, env, 5000, np.random.default_rng([seed, 5]))
        ok &= last > first and wr > 0.55
        lines.append(f"seed {seed}: reward {first:.3f}->{last:.3f}, win {wr:.3f}")
    env = make_env(seed=0)
    _, curves = al.align(Policy.uniform(env), env, al.reward_table(env), PPOConfig(beta=1e6))
    kl = curves.column("mean_kl")[-1]
    ok &= kl <= 0.01
    verdict(11, "PPO alignment", ok, "; ".join(lines) + f"; beta=1e6 final KL {kl:.2e}", time.perf_counter() - t, 300)


def _snapshot(out: Path) -> dict:
    snap = {}
    for p in sorted(out.iterdir()):
        data = p.read_bytes()
        if p.name == "manifest.json":
            m = json.loads(data)
            m.pop("created", None)
            data = json.dumps(m, sort_keys=True).encode()
        snap[p.name] = hashlib.sha256(data).hexdigest()
    return snap


def test_12_determinism(tmp_path):
    t = time.perf_counter()
    out = str(tmp_path)
    runs = [
        ["gen-data", "--pairs", "40", "--seed", "3"],
        ["train", "--loss", "ot", "--epochs", "2", "--lr-start", "0.01", "--lr-end", "0.001", "--seed", "3"],
        ["eval", "--checkpoint", str(tmp_path / "checkpoint-ot.json"), "--seed", "3"],
        ["align", "--steps", "60", "--seed", "3"],
        ["align", "--reward", "dprm_head", "--checkpoint", str(tmp_path / "checkpoint-ot.json"), "--steps", "30",
         "--seed", "3"],
        ["verify", "--seed", "3"],
    ]
    differing = []
    for argv in runs:
        codes = []
        snaps = []
        for _ in range(2):
            codes.append(main(argv + ["--out", out]))
            snaps.append(_snapshot(tmp_path))
        if codes != [0, 0] or snaps[0] != snaps[1]:
            changed = [k for k in snaps[1] if snaps[0].get(k) != snaps[1][k]]
            differing.append(f"{argv[0]} exit {codes} changed {changed}")
    verdict(12, "byte-identical reruns of every subcommand", not differing,
            "all identical" if not differing else "; ".join(differing), time.perf_counter() - t)


if __name__ == "__main__":
    pytest.main([__file__, "-q"])

"""Command-line entry point: gen-data, train, eval, align, verify.

Exit codes: 0 success, 1 verification failure, 2 user or config error,
3 annotator client failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import align as al
from ._io import atomic_write_json, atomic_write_text, read_kv_config
from .annotate import DEFAULT_PANEL, DatasetSpec, RemoteJson, SyntheticSampler, generate_dataset, make_env
from .dprm import (
    DistHead,
    FeaturizerConfig,
    TrainConfig,
    dumps_jsonl,
    evaluate,
    load_checkpoint,
    load_jsonl,
    metrics_csv_row,
    train,
)
from .errors import ClientFailure, DPRMError, ValidationError
from .preference import DEFAULT_ALPHA, CategorySchema
from . import verify as vf

log = logging.getLogger("dprm_lab")

EXIT_OK, EXIT_VERIFY, EXIT_USER, EXIT_CLIENT = 0, 1, 2, 3

DEFAULTS = {
    "gen-data": {
        "pairs": 1000,
        "client": "synthetic",
        "url": None,
        "timeout": 10.0,
        "helpfulness_fraction": 2 / 3,
        "prior_panel_size": 5,
        "posterior_labels_per_record": 7,
        "alpha_smooth": DEFAULT_ALPHA,
    },
    "train": {
        "data": None,
        "loss": "ot",
        "epochs": 20,
        "lr_start": 2e-5,
        "lr_end": 2e-7,
        "batch_size": 12,
        "sinkhorn_eps": 0.05,
        "heldout_fraction": 0.1,
        "optimizer": "adam",
        "features": 512,
    },
    "eval": {"data": None, "checkpoint": None},
    "align": {
        "reward": "truth_oracle",
        "checkpoint": None,
        "beta": 0.1,
        "steps": 1000,
        "batch": 128,
        "lr": 0.05,
        "clip": 0.2,
        "epochs": 1,
        "prompts": 24,
        "k": 4,
        "temperature": 1.0,
        "winrate_n": 5000,
    },
    "verify": {"list": False, "inject_fault": False, "only": None},
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    p.add_argument("--schema", default=None, help="category schema JSON (default: built-in six categories)")
    p.add_argument("--out", default=None, help="output directory (default: current directory)")
    p.add_argument("--config", default=None, help="flat key = value config file")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dprm-lab", description="Distributional preference reward model toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="build a synthetic preference-distribution dataset")
    _common(p)
    p.add_argument("--pairs", type=int)
    p.add_argument("--client", choices=("synthetic", "remote"))
    p.add_argument("--url", help="remote annotator endpoint (default: $DPRM_LAB_REMOTE_URL)")
    p.add_argument("--timeout", type=float)

    p = sub.add_parser("train", help="fit a distributional head")
    _common(p)
    p.add_argument("--data", help="dataset JSONL (default: OUT/dataset.jsonl)")
    p.add_argument("--loss", type=str.lower, choices=("ce", "w", "ot"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr-start", dest="lr_start", type=float)
    p.add_argument("--lr-end", dest="lr_end", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--sinkhorn-eps", dest="sinkhorn_eps", type=float)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--checkpoint")

    p = sub.add_parser("align", help="PPO fine-tuning of a tabular policy")
    _common(p)
    p.add_argument("--reward", choices=al.REWARD_SOURCES)
    p.add_argument("--checkpoint", help="head checkpoint for --reward dprm_head")
    p.add_argument("--beta", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)

    p = sub.add_parser("verify", help="run the property suite")
    _common(p)
    p.add_argument("--list", action="store_true", default=None, help="print check names and exit")
    p.add_argument("--inject-fault", dest="inject_fault", action="store_true", default=None,
                   help="use an asymmetric cost matrix (negative control)")
    p.add_argument("--only", nargs="+", help="run only these checks")
    return parser


def effective_config(args) -> dict:
    cfg = dict(DEFAULTS[args.command])
    cfg.update({"seed": 0, "schema": None, "out": "."})
    if args.config:
        from_file = read_kv_config(args.config)
        unknown = sorted(set(from_file) - set(cfg))
        if unknown:
            raise ValidationError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        cfg.update(from_file)
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _schema(cfg) -> CategorySchema:
    return CategorySchema.load(cfg["schema"]) if cfg["schema"] else CategorySchema.default()


def _out(cfg) -> Path:
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _echo(cfg, out: Path, name: str):
    atomic_write_json(out / f"{name}.config.json", cfg)


def cmd_gen_data(cfg) -> int:
    out = _out(cfg)
    schema = _schema(cfg)
    _echo(cfg, out, "gen-data")
    spec = DatasetSpec(
        n_pairs=int(cfg["pairs"]),
        helpfulness_fraction=float(cfg["helpfulness_fraction"]),
        panel=DEFAULT_PANEL,
        prior_panel_size=int(cfg["prior_panel_size"]),
        posterior_labels_per_record=int(cfg["posterior_labels_per_record"]),
        alpha_smooth=float(cfg["alpha_smooth"]),
        seed=int(cfg["seed"]),
    )
    if cfg["client"] == "remote":
        client = RemoteJson(cfg["url"], timeout=float(cfg["timeout"]), d=schema.d)
    elif cfg["client"] == "synthetic":
        client = SyntheticSampler(seed=spec.seed, schema=schema)
    else:
        raise ValidationError(f"unknown client {cfg['client']!r}")
    try:
        records, manifest = generate_dataset(spec, client, spec.seed, schema)
    except ClientFailure as exc:
        partial = getattr(exc, "partial", [])
        atomic_write_text(out / "dataset.partial.jsonl", dumps_jsonl(partial))
        atomic_write_json(out / "manifest.json", {
            "spec": spec.to_dict(), "seed": spec.seed, "status": "aborted", "error": str(exc),
            "counts": getattr(exc, "counts", {}), "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        })
        raise
    atomic_write_text(out / "dataset.jsonl", dumps_jsonl(records))
    manifest["client"] = cfg["client"]
    manifest["created"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    atomic_write_json(out / "manifest.json", manifest)
    print(f"wrote {len(records)} records to {out / 'dataset.jsonl'}")
    return EXIT_OK


def _dataset_path(cfg, out: Path) -> Path:
    path = Path(cfg["data"]) if cfg["data"] else out / "dataset.jsonl"
    if not path.exists():
        raise ValidationError(f"dataset not found: {path}")
    return path


def cmd_train(cfg) -> int:
    out = _out(cfg)
    schema = _schema(cfg)
    records = load_jsonl(_dataset_path(cfg, out))
    kind = str(cfg["loss"]).upper()
    tc = TrainConfig(
        epochs=int(cfg["epochs"]),
        lr_start=float(cfg["lr_start"]),
        lr_end=float(cfg["lr_end"]),
        batch_size=int(cfg["batch_size"]),
        loss_kind=kind,
        sinkhorn_eps=float(cfg["sinkhorn_eps"]),
        seed=int(cfg["seed"]),
        heldout_fraction=float(cfg["heldout_fraction"]),
        optimizer=str(cfg["optimizer"]),
    )
    fc = FeaturizerConfig(dim=int(cfg["features"]), prompt_dim=max(1, int(cfg["features"]) // 4), seed=int(cfg["seed"]))
    _echo(cfg, out, f"train-{kind.lower()}")
    head, curve = train(None, records, tc, fc, schema)
    atomic_write_json(out / f"checkpoint-{kind.lower()}.json", head.to_dict(fc, tc.seed))
    atomic_write_text(out / f"metrics-{kind.lower()}.csv", curve.to_csv())
    held = curve.heldout("mean_w1")
    print(f"{kind}: held-out mean W1 {held[0]:.4f} -> {held[curve.best_epoch]:.4f} (best epoch {curve.best_epoch})")
    return EXIT_OK


def _load_head(cfg, out: Path):
    path = Path(cfg["checkpoint"]) if cfg["checkpoint"] else None
    if path is None or not path.exists():
        raise ValidationError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_eval(cfg) -> int:
    out = _out(cfg)
    schema = _schema(cfg)
    records = load_jsonl(_dataset_path(cfg, out))
    head, fc = _load_head(cfg, out)
    _echo(cfg, out, "eval")
    metrics = evaluate(head, records, fc, schema)
    atomic_write_json(out / "eval.json", metrics)
    atomic_write_text(out / "eval.csv", metrics_csv_row(metrics))
    print(json.dumps({k: metrics[k] for k in ("n", "mean_w1", "mean_ce", "reward_mae")}))
    return EXIT_OK


def cmd_align(cfg) -> int:
    out = _out(cfg)
    schema = _schema(cfg)
    seed = int(cfg["seed"])
    pc = al.PPOConfig(
        steps=int(cfg["steps"]),
        batch=int(cfg["batch"]),
        clip=float(cfg["clip"]),
        beta=float(cfg["beta"]),
        lr=float(cfg["lr"]),
        seed=seed,
        reward_source=str(cfg["reward"]),
        epochs=int(cfg["epochs"]),
    )
    env = make_env(int(cfg["prompts"]), int(cfg["k"]), seed, schema=schema)
    if pc.reward_source == "dprm_head":
        head, fc = _load_head(cfg, out)
        table = al.reward_table(env, "dprm_head", head, fc, schema)
    else:
        table = al.reward_table(env, schema=schema)
    _echo(cfg, out, "align")
    ref = al.Policy.uniform(env, float(cfg["temperature"]))
    policy, curves = al.align(ref, env, table, pc)
    n = int(cfg["winrate_n"])
    report = {
        "steps": pc.steps,
        "beta": pc.beta,
        "reward_source": pc.reward_source,
        "win_rate_vs_reference": al.win_rate(policy, ref, env, n, np.random.SeedSequence([seed, 31337]), schema),
        "n": n,
        "final_mean_kl": al.mean_kl(policy, ref),
    }
    atomic_write_text(out / "curves.csv", curves.to_csv())
    atomic_write_text(out / "policy.json", al.policy_json(policy) + "\n")
    atomic_write_json(out / "winrate.json", report)
    print(json.dumps(report))
    return EXIT_OK


def cmd_verify(cfg) -> int:
    if cfg["list"]:
        print("\n".join(vf.check_names()))
        return EXIT_OK
    out = _out(cfg)
    only = cfg["only"]
    if only:
        unknown = sorted(set(only) - set(vf.check_names()))
        if unknown:
            raise ValidationError(f"unknown checks: {', '.join(unknown)}")
    _echo(cfg, out, "verify")
    seed = int(cfg["seed"])
    results = vf.run_checks(seed, _schema(cfg), bool(cfg["inject_fault"]), only)
    rep = vf.report(results, seed, bool(cfg["inject_fault"]))
    atomic_write_json(out / "verify_report.json", rep)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  worst={r.worst_residual:.3e}  {r.detail}")
    return EXIT_OK if rep["all_passed"] else EXIT_VERIFY


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "align": cmd_align, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USER
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = effective_config(args)
        return COMMANDS[args.command](cfg)
    except ClientFailure as exc:
        print(f"error: annotator client failed: {exc}", file=sys.stderr)
        return EXIT_CLIENT
    except (DPRMError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())

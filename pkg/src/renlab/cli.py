"""Command-line entry point: dataset generation, training runs, ablation
sweeps, gradient verification, and report aggregation.

Exit codes: 0 success, 1 usage or configuration error, 2 check failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checks import run_loss_checks
from .datasets import (DomainDataset, LabeledSet, ShiftSpec, make_blobs,
                       make_domain_dataset, make_two_moons, save_dataset)
from .evaluation import (ablation_report, load_metrics, save_ablation,
                         save_metrics)
from .exceptions import ConfigError, ContractError, RenlabError
from .networks import save_paramsets
from .trainer import (VARIANTS, RunResult, TrainConfig, Trainer, load_config)

TOOL_VERSION = "renlab 0.1.0"


class _Parser(argparse.ArgumentParser):
    """argparse maps usage errors to exit code 2; this tool reserves 2 for
    check failures, so remap usage problems to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gen", choices=("two_moons", "blobs"), default="two_moons")
    p.add_argument("--n", type=int, default=500, help="source sample count")
    p.add_argument("--n-target", type=int, default=None,
                   help="target sample count (default: same as --n)")
    p.add_argument("--noise", type=float, default=0.15, help="generator noise sigma")
    p.add_argument("--classes", type=int, default=3, help="class count (blobs only)")
    p.add_argument("--imbalance", type=float, default=1.0,
                   help="target class imbalance ratio (blobs only)")
    p.add_argument("--rot", type=float, default=45.0, help="target rotation, degrees")
    p.add_argument("--trans-x", type=float, default=0.0)
    p.add_argument("--trans-y", type=float, default=0.0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--shift-noise", type=float, default=None,
                   help="target noise sigma override (default: inherit --noise)")
    p.add_argument("--lift-dim", type=int, default=16,
                   help="embed 2-D data into this many dimensions (0 = keep 2-D)")
    p.add_argument("--lift-noise", type=float, default=0.05)


def _source_recipe(args, seed) -> LabeledSet:
    if args.gen == "two_moons":
        return make_two_moons(args.n, args.noise, [seed, 900])
    angles = 2.0 * np.pi * np.arange(args.classes) / args.classes
    centers = np.column_stack([2.0 * np.cos(angles), 2.0 * np.sin(angles)])
    return make_blobs(args.n, args.classes, centers, args.noise, [seed, 900])


def _build_dataset(args, seed: int) -> DomainDataset:
    source = _source_recipe(args, seed)
    n_target = args.n if args.n_target is None else args.n_target
    recipe = LabeledSet(source.x, source.y, {**source.meta, "n": n_target})
    shift = ShiftSpec(rotation_deg=args.rot, translation=(args.trans_x, args.trans_y),
                      scale=args.scale, noise_sigma=args.shift_noise,
                      class_imbalance_ratio=args.imbalance)
    return make_domain_dataset(recipe, shift, seed, args.lift_dim, args.lift_noise)


def _data_spec(args) -> dict:
    return {"gen": args.gen, "n": args.n, "n_target": args.n_target,
            "noise": args.noise, "classes": args.classes, "imbalance": args.imbalance,
            "rot": args.rot, "trans": [args.trans_x, args.trans_y], "scale": args.scale,
            "shift_noise": args.shift_noise, "lift_dim": args.lift_dim,
            "lift_noise": args.lift_noise}


_CONFIG_FLAGS = ("eta0", "anneal_alpha", "anneal_beta", "momentum", "batch_size",
                 "total_steps", "alpha_theta", "alpha_p", "lambda_stu", "lambda_tea",
                 "gamma", "grl_ramp", "gamma_ramp", "consistency_squared",
                 "eval_every", "seed", "variant", "feature_hidden", "feature_dim",
                 "disc_hidden")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None, help="key = value config file")
    p.add_argument("--eta0", type=float)
    p.add_argument("--anneal-alpha", type=float)
    p.add_argument("--anneal-beta", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--steps", dest="total_steps", type=int)
    p.add_argument("--alpha-theta", type=str, help="number in [0,1] or 'ramp'")
    p.add_argument("--alpha-p", type=float)
    p.add_argument("--lambda-stu", type=float)
    p.add_argument("--lambda-tea", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--grl-ramp", choices=("on", "off"))
    p.add_argument("--gamma-ramp", choices=("on", "off"))
    p.add_argument("--consistency-squared", choices=("on", "off"))
    p.add_argument("--eval-every", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--feature-hidden", type=int)
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--disc-hidden", type=int)


def _config_from_args(args) -> TrainConfig:
    overrides = {}
    for name in _CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is None:
            continue
        if name in ("grl_ramp", "gamma_ramp", "consistency_squared"):
            value = value == "on"
        elif name == "alpha_theta" and value != "ramp":
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(f"alpha_theta must be a number or 'ramp', "
                                  f"got {value!r}") from None
        overrides[name] = value
    if args.config:
        cfg = load_config(args.config, **overrides)
    else:
        cfg = TrainConfig(**overrides)
        cfg.validate()
    return cfg


def _run_dir_name(cfg: TrainConfig, data_spec: dict) -> str:
    payload = json.dumps({"config": cfg.to_dict(), "data": data_spec}, sort_keys=True)
    digest = hashlib.sha256(payload.encode()).hexdigest()[:12]
    return f"{digest}-s{cfg.seed}"


def _execute_run(cfg: TrainConfig, dataset: DomainDataset, data_spec: dict,
                 out_root: Path) -> tuple[Path, RunResult]:
    run_dir = out_root / _run_dir_name(cfg, data_spec)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"tool": TOOL_VERSION, "config": cfg.to_dict(), "seeds": [cfg.seed],
                "data": data_spec, "dataset_meta": dataset.meta,
                "outputs": {"metrics": "metrics.csv", "checkpoint": "checkpoint.txt"}}
    with open(run_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    result = Trainer(cfg, dataset).run()
    save_metrics(result.records, run_dir / "metrics.csv")
    named = {"student_F": result.student_F, "student_C": result.student_C}
    if result.dualnet is not None:
        named["teacher_F"] = result.dualnet.teacher_F
        named["teacher_C"] = result.dualnet.teacher_C
    if result.disc is not None:
        named["disc"] = result.disc
    save_paramsets(run_dir / "checkpoint.txt", named)
    return run_dir, result


def cmd_datagen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = _build_dataset(args, args.seed if args.seed is not None else 0)
    save_dataset(dataset, out / "dataset.csv", out / "dataset.meta")
    print(f"wrote {out / 'dataset.csv'} and {out / 'dataset.meta'}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    dataset = _build_dataset(args, cfg.seed)
    run_dir, result = _execute_run(cfg, dataset, _data_spec(args), Path(args.out))
    final = result.records[-1]
    print(f"run {run_dir}")
    print(f"final step {final.step}: target acc student={final.acc_student_target:.4f} "
          f"teacher={final.acc_teacher_target:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not variants or not seeds:
        raise ConfigError("ablate needs at least one variant and one seed")
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    results: dict[str, dict[int, float]] = {}
    for variant in sorted(set(variants), key=VARIANTS.index):
        for seed in sorted(set(seeds)):
            run_cfg = replace(cfg, variant=variant, seed=seed)
            dataset = _build_dataset(args, seed)
            _, result = _execute_run(run_cfg, dataset, _data_spec(args), out_root)
            results.setdefault(variant, {})[seed] = result.final_accuracy
    report = ablation_report(results)
    save_ablation(report, out_root / "ablation.json")
    for variant in sorted(results, key=VARIANTS.index):
        entry = report["variants"][variant]
        print(f"{variant}: mean={entry['mean']:.4f} std={entry['std']:.4f} "
              f"n={entry['n_seeds']}")
    print(f"ordering satisfied: {report['ordering']['satisfied']}")
    return 0


def cmd_gradcheck(args) -> int:
    reports = run_loss_checks(args.seed, h=args.h, tol=args.tol, corrupt=args.corrupt,
                              batch=args.batch, in_dim=args.in_dim, hidden=args.hidden,
                              feature_dim=args.feature_dim, n_classes=args.classes)
    all_ok = True
    for name, rep in reports:
        status = "PASS" if rep.passed else "FAIL"
        print(f"{name}: max_rel_error={rep.max_rel_error:.3e} "
              f"worst={rep.worst_param}[{rep.worst_index[0]},{rep.worst_index[1]}] "
              f"{status}")
        all_ok = all_ok and rep.passed
    return 0 if all_ok else 2


def cmd_report(args) -> int:
    root = Path(args.runs)
    results: dict[str, dict[int, float]] = {}
    for manifest_path in sorted(root.glob("*/manifest.json")):
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        records = load_metrics(manifest_path.parent / "metrics.csv")
        variant = manifest["config"]["variant"]
        seed = int(manifest["config"]["seed"])
        results.setdefault(variant, {})[seed] = records[-1].acc_teacher_target
    if not results:
        raise ConfigError(f"no run directories with manifests under {root}")
    report = ablation_report(results)
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.json:
        save_ablation(report, args.json)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="renlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("datagen", help="write a benchmark dataset to CSV")
    _add_data_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str, default=".")
    p.set_defaults(fn=cmd_datagen)

    p = sub.add_parser("train", help="train one variant on a generated benchmark")
    _add_config_flags(p)
    _add_data_flags(p)
    p.add_argument("--out", type=str, default="runs")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("ablate", help="run a variant x seed sweep and summarize")
    _add_config_flags(p)
    _add_data_flags(p)
    p.add_argument("--variants", type=str, default="cdan,cdan_m,cdan_m_d,ren")
    p.add_argument("--seeds", type=str, default="0,1,2,3,4")
    p.add_argument("--out", type=str, default="runs")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="verify loss gradients against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--in-dim", type=int, default=5)
    p.add_argument("--hidden", type=int, default=6)
    p.add_argument("--feature-dim", type=int, default=4)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("report", help="re-aggregate run directories into a summary")
    p.add_argument("--runs", type=str, required=True)
    p.add_argument("--json", type=str, default=None, help="also write the summary here")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RenlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

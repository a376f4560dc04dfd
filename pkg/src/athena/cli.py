"""Command-line entry point: train artifacts, craft adversarial sets, and run
the evaluation protocols from a JSON manifest.

Every run writes a resolved-manifest snapshot next to its outputs so numeric
results can be reproduced byte for byte. The cache root comes from --output,
the manifest's output_dir, or the ATHENA_CACHE environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .attacks import zero_knowledge_presets
from .core import derive_seed
from .ensemble import array_label_oracle
from .errors import AthenaError
from .evaluation import (
    CACHE_ENV_VAR,
    ExperimentManifest,
    Workbench,
    emit_report,
    measure_overhead,
    run_diversity_study,
    run_eot_graybox,
    run_hsja_eval,
    run_transfer_blackbox,
    run_whitebox_greedy,
    run_zero_knowledge,
)


def _int_list(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in text.split(",") if v]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="athena",
        description="ensemble-of-weak-defenses robustness workbench")
    parser.add_argument("--version", action="version", version="%(prog)s 0.1.0")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--manifest", required=True, help="experiment manifest (JSON)")
        p.add_argument("--output", default=None,
                       help=f"cache/output root (default: manifest output_dir or ${CACHE_ENV_VAR})")
        p.add_argument("--seed", type=int, default=None,
                       help="override the manifest's global and attack seeds")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                       help="worker threads for model training")
        p.add_argument("--json", action="store_true",
                       help="machine-readable JSON output")

    p_train = sub.add_parser("train", help="train the undefended model, weak "
                                           "defenses, and baselines")
    common(p_train)
    p_train.add_argument("--only", choices=("all", "um", "wds", "baselines"),
                         default="all")
    p_train.add_argument("--force", action="store_true",
                         help="retrain even when cached artifacts exist")

    p_attack = sub.add_parser("attack", help="craft an adversarial set")
    common(p_attack)
    p_attack.add_argument("--preset", default=None,
                          help="preset id, e.g. fgsm-mnist-e02")
    p_attack.add_argument("--method", default=None, choices=(None, "hsja"),
                          help="query-based attack instead of a preset")
    p_attack.add_argument("--budget", type=int, default=1000,
                          help="query budget for --method hsja")
    p_attack.add_argument("--norm", default="l2", choices=("l2", "linf"))
    p_attack.add_argument("--target", default="um",
                          help="um or ensemble:<strategy> (hsja only)")
    p_attack.add_argument("--count", type=int, default=None,
                          help="number of benign samples to attack")

    p_eval = sub.add_parser("eval", help="run an evaluation protocol")
    p_eval.add_argument("protocol", choices=(
        "zero-knowledge", "transfer", "hsja", "whitebox-greedy",
        "eot-graybox", "diversity", "overhead"))
    common(p_eval)
    p_eval.add_argument("--build", action="store_true",
                        help="train missing artifacts instead of failing")
    p_eval.add_argument("--format", default="csv,json",
                        help="comma list of csv,json,plotdata")
    p_eval.add_argument("--presets", default=None, help="comma list of preset ids")
    p_eval.add_argument("--budgets", default=None, help="comma list of budgets")
    p_eval.add_argument("--norms", default="l2", help="comma list of norms")
    p_eval.add_argument("--grid", default=None,
                        help="comma list of max-dissimilarity caps")
    p_eval.add_argument("--fractions", default=None,
                        help="comma list of known-member fractions")
    p_eval.add_argument("--sizes", default="2,4,8",
                        help="ensemble sizes, e.g. 2,4,8 or 2..14")
    p_eval.add_argument("--trials", type=int, default=5)
    p_eval.add_argument("--samples", type=int, default=None)
    return parser


def _workbench(args) -> Workbench:
    document = json.loads(Path(args.manifest).read_text())
    if args.seed is not None:
        document.setdefault("seeds", {})
        document["seeds"]["global"] = args.seed
        document["seeds"]["attack"] = derive_seed(args.seed, 1)
    manifest = ExperimentManifest(document)
    log = (lambda m: None) if args.json else (lambda m: print(m, file=sys.stderr))
    return Workbench(manifest, root=args.output, jobs=args.jobs, log=log)


def _emit(payload: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(payload, indent=2, sort_keys=True, default=float))
    else:
        for key, value in payload.items():
            print(f"{key}: {value}")


def _cmd_train(args) -> int:
    wb = _workbench(args)
    status = wb.build(only=args.only, force=args.force)
    _emit({"root": str(wb.root), "artifacts": status}, args.json)
    return 0


def _cmd_attack(args) -> int:
    wb = _workbench(args)
    benign = wb.eval_subset(args.count)
    if args.method == "hsja":
        from .attacks import hop_skip_jump
        from .models import predict_label_batch
        if args.target == "um":
            oracle = lambda X: predict_label_batch(wb.um, np.atleast_2d(X))
        elif args.target.startswith("ensemble:"):
            strategy = args.target.split(":", 1)[1].upper()
            oracle = array_label_oracle(wb.ensembles()[strategy], wb.registry,
                                        benign.image_shape)
        else:
            raise AthenaError(f"hsja target must be um or ensemble:<strategy>, "
                              f"got {args.target!r}")
        seed_root = int(wb.manifest["seeds"]["attack"])
        trace_dir = wb.reports_dir / "hsja"
        trace_dir.mkdir(parents=True, exist_ok=True)
        distances, failures = [], 0
        lines = []
        for i, (x, y) in enumerate(zip(benign.images, benign.labels)):
            result = hop_skip_jump(oracle, x, y, args.norm, args.budget,
                                   seed=derive_seed(seed_root, i, args.budget))
            if result.init_failed:
                failures += 1
                continue
            distances.append(result.distance)
            lines.append(json.dumps({
                "sample": i, "distance": result.distance,
                "queries_used": result.queries_used, "trace": result.trace,
            }))
        out = trace_dir / f"cli-{args.target.replace(':', '-')}-{args.norm}-b{args.budget}.jsonl"
        out.write_text("\n".join(lines) + "\n")
        _emit({"trace_file": str(out), "samples": len(benign),
               "init_failures": failures,
               "mean_distance": float(np.mean(distances)) if distances else None},
              args.json)
        return 0
    if not args.preset:
        raise AthenaError("attack needs --preset or --method hsja")
    catalog = zero_knowledge_presets()
    if args.preset not in catalog:
        raise AthenaError(f"unknown preset {args.preset!r}; see athena.attacks."
                          "zero_knowledge_presets()")
    if args.target == "um":
        target = wb.um
    elif args.target.startswith("wd:"):
        target = wb.registry.get(args.target.split(":", 1)[1]).classifier
    else:
        raise AthenaError("preset attacks target um or wd:<id>")
    report = wb.cached_craft(f"{args.preset}-{args.target.replace(':', '-')}",
                             catalog[args.preset], target, benign)
    _emit({
        "attack_id": report.attack_id,
        "samples": len(report.adversarial),
        "success_rate_on_target": report.mean("succeeded_on_target"),
        "mean_dissimilarity": report.mean("dissimilarity"),
        "report_file": str(wb.reports_dir / "attacks" / f"{report.attack_id}.jsonl"),
    }, args.json)
    return 0


def _cmd_eval(args) -> int:
    wb = _workbench(args)
    missing = wb.missing_artifacts()
    if missing and not args.build:
        raise AthenaError(
            "missing artifacts (run `athena train` or pass --build): "
            + ", ".join(missing))
    wb.build(only="all", force=False)

    samples = args.samples
    if args.protocol == "zero-knowledge":
        presets = args.presets.split(",") if args.presets else None
        rows = run_zero_knowledge(wb, presets)
    elif args.protocol == "transfer":
        budgets = _int_list(args.budgets or "100,200,300,400,500")
        presets = tuple(args.presets.split(",")) if args.presets \
            else ("fgsm-mnist-e01",)
        rows = run_transfer_blackbox(wb, budgets, presets, samples=samples)
    elif args.protocol == "hsja":
        budgets = _int_list(args.budgets or "100,500,1000")
        rows = run_hsja_eval(wb, budgets, args.norms.split(","),
                             samples=samples or 20)
    elif args.protocol == "whitebox-greedy":
        grid = _float_list(args.grid or
                           "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")
        rows = run_whitebox_greedy(wb, grid, samples=samples or 100)
    elif args.protocol == "eot-graybox":
        fractions = _float_list(args.fractions or "0.25,0.5,0.75,1.0")
        rows = run_eot_graybox(wb, fractions, samples=samples or 50)
    elif args.protocol == "diversity":
        sizes = _int_list(args.sizes)
        presets = tuple(args.presets.split(",")) if args.presets \
            else ("fgsm-mnist-e02", "pgd-mnist-e009")
        rows = run_diversity_study(wb, sizes, args.trials, presets)
    else:  # overhead
        table = measure_overhead(wb)
        out = wb.reports_dir / "overhead.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("stage,median_seconds\n" + "\n".join(
            f"{r['stage']},{r['median_seconds']!r}" for r in table) + "\n")
        _emit({"rows": len(table), "report_file": str(out)}, args.json)
        return 0

    written = []
    for fmt in args.format.split(","):
        written.extend(str(p) for p in emit_report(
            rows, fmt.strip(), wb.reports_dir, name=args.protocol))
    _emit({"rows": len(rows), "reports": written,
           "snapshot": str(wb.write_snapshot())}, args.json)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "attack":
            return _cmd_attack(args)
        return _cmd_eval(args)
    except AthenaError as err:
        error = {"error": {"type": type(err).__name__, "message": str(err)}}
        if getattr(args, "json", False):
            print(json.dumps(error))
        else:
            print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Experiment runners for the four threat-model protocols, the ensemble
diversity study, and overhead measurement.

Every runner is a pure function of (workbench, arguments): re-running with
the same manifest produces identical rows except for wall-clock fields
(whose extra keys end in ``_seconds``).
"""

from __future__ import annotations

import time
from typing import Sequence

import numpy as np

from ..attacks import (
    AttackConfig,
    eot_ensemble_attack,
    greedy_ensemble_attack,
    hop_skip_jump,
    train_substitute,
    zero_knowledge_presets,
)
from ..core import (
    Dataset,
    Image,
    derive_seed,
    error_rate_on_valid,
    normalized_l2_dissimilarity,
)
from ..ensemble import (
    array_label_oracle,
    build_random_ensemble,
    diversity,
    ensemble_label_batch,
    label_predictor as ensemble_label_predictor,
    aggregate_member_outputs,
)
from ..errors import ArgumentError, ConfigError
from ..models import (
    TrainConfig,
    label_predictor,
    logits_batch,
    predict_label_batch,
    probs_batch,
    wd_label_predictor,
)
from ..transforms import apply, standard_eot_distribution, transform_label
from .manifest import Workbench
from .report import EvalRow


def fraction_nondecreasing(values: Sequence[float]) -> float:
    """Share of adjacent pairs that do not decrease (trend assertions)."""
    values = list(values)
    if len(values) < 2:
        return 1.0
    good = sum(1 for a, b in zip(values, values[1:]) if b >= a)
    return good / (len(values) - 1)


def _defense_rows(wb: Workbench, attack_id: str, benign: Dataset,
                  adversarial: list[Image], mean_dissimilarity: float,
                  extra: dict) -> list[EvalRow]:
    """Score every defense in the manifest against one adversarial set."""
    um_handle = wb.um_predictor()
    rows = []

    def add(defense_id: str, handle):
        err = error_rate_on_valid(handle, benign, adversarial, reference=um_handle)
        rows.append(EvalRow(defense_id=defense_id, attack_id=attack_id,
                            error_rate=err,
                            mean_dissimilarity=mean_dissimilarity, extra=extra))

    add("um", um_handle)
    for wd in wb.registry:
        add(f"wd:{wd.id}", wd_label_predictor(wd))
    for strategy in wb.ensembles():
        add(f"ensemble:{strategy.lower()}", wb.ensemble_predictor(strategy))
    if wb.adt is not None:
        add("pgd_adt", label_predictor(wb.adt))
    if wb.rs_params():
        add("randomized_smoothing", wb.rs_predictor())
    return rows


def run_zero_knowledge(wb: Workbench, preset_ids: Sequence[str] | None = None,
                       include_benign: bool = True) -> list[EvalRow]:
    """Zero-knowledge protocol: craft every preset against the undefended
    model on its correctly-classified test subset, then score each defense on
    the same adversarial sets."""
    catalog = zero_knowledge_presets()
    if preset_ids is None:
        preset_ids = [pid for pid in catalog if "-mnist-" in pid]
    benign = wb.eval_subset()
    rows: list[EvalRow] = []
    if include_benign:
        rows.extend(_defense_rows(wb, "benign", benign, list(benign.images),
                                  0.0, {"family": "benign", "strength": 0.0}))
    for preset_id in preset_ids:
        if preset_id not in catalog:
            raise ArgumentError(f"unknown preset {preset_id!r}")
        config = catalog[preset_id]
        report = wb.cached_craft(preset_id, config, wb.um, benign)
        dissim = normalized_l2_dissimilarity(list(benign.images),
                                             report.adversarial)
        extra = {"family": config.family, "strength": config.strength}
        rows.extend(_defense_rows(wb, preset_id, benign, report.adversarial,
                                  dissim, extra))
    return rows


def run_transfer_blackbox(wb: Workbench, budgets: Sequence[int],
                          preset_ids: Sequence[str] = ("fgsm-mnist-e01",),
                          ensemble_strategy: str = "AVEP",
                          samples: int | None = None) -> list[EvalRow]:
    """Transfer pipeline: query-balance a substitute per (budget, target),
    craft white-box adversarial examples on the substitute, and measure how
    they transfer to the true target."""
    catalog = zero_knowledge_presets()
    test = wb.test_set
    half = len(test) // 2
    pool = test.subset(range(half))                # substitute training pool
    holdout = test.subset(range(half, len(test)))  # agreement + transfer eval
    n_eval = int(samples if samples is not None else wb.manifest["eval"]["samples"])
    n_eval = min(n_eval, len(holdout))
    eval_set = holdout.subset(range(n_eval))

    targets = {
        "um": wb.um_predictor(),
        f"ensemble:{ensemble_strategy.lower()}":
            wb.ensemble_predictor(ensemble_strategy),
    }
    sub_cfg = TrainConfig(seed=derive_seed(int(wb.manifest["seeds"]["global"]), 77),
                          epochs=wb.train_config().epochs,
                          batch_size=wb.train_config().batch_size)
    rows: list[EvalRow] = []
    for budget in budgets:
        transfer_rates: dict[str, float] = {}
        for target_id, target_handle in targets.items():
            substitute = train_substitute(
                target_handle, pool, int(budget), wb.manifest["arch"], sub_cfg,
                hidden_width=int(wb.manifest["hidden_width"]))
            agreement = float(np.mean(
                predict_label_batch(substitute, holdout.stack())
                == np.asarray(target_handle(list(holdout.images)))))
            for preset_id in preset_ids:
                config = catalog[preset_id]
                target_truth = np.asarray(target_handle(list(eval_set.images)))
                valid = np.flatnonzero(target_truth == eval_set.label_array())
                crafted = wb.cached_craft(
                    f"transfer-{preset_id}-b{budget}-{target_id}", config,
                    substitute, eval_set.subset(valid))
                benign_valid = eval_set.subset(valid)
                source_success = float(np.mean(
                    predict_label_batch(substitute,
                                        np.stack([im.data for im in crafted.adversarial]))
                    != benign_valid.label_array()))
                target_preds = np.asarray(target_handle(crafted.adversarial))
                transferability = float(np.mean(
                    target_preds != benign_valid.label_array()))
                transfer_rates[(target_id, preset_id)] = transferability
                extra = {
                    "budget": float(budget),
                    "substitute_agreement": agreement,
                    "source_success_rate": source_success,
                    "transferability_rate": transferability,
                    "family": f"transfer-{config.family}",
                    "strength": config.strength,
                }
                um_rate = transfer_rates.get(("um", preset_id))
                if target_id != "um" and um_rate:
                    extra["transfer_drop_ratio"] = (um_rate - transferability) / um_rate
                rows.append(EvalRow(
                    defense_id=target_id,
                    attack_id=f"transfer-{preset_id}@{budget}",
                    error_rate=transferability,
                    mean_dissimilarity=normalized_l2_dissimilarity(
                        list(benign_valid.images), crafted.adversarial),
                    extra=extra))
    return rows


def run_hsja_eval(wb: Workbench, budgets: Sequence[int],
                  norms: Sequence[str] = ("l2",), samples: int = 20,
                  ensemble_strategy: str = "AVEP") -> list[EvalRow]:
    """Query-based black-box protocol: mean adversarial distance versus budget
    for the undefended model and the ensemble, plus the distance drop ratio.
    Samples whose initialization fails are excluded from means and counted."""
    benign = wb.eval_subset(samples)
    shape = benign.image_shape
    um_oracle = lambda X: predict_label_batch(wb.um, np.atleast_2d(X))
    ens_oracle = array_label_oracle(wb.ensembles()[ensemble_strategy],
                                    wb.registry, shape)
    seed_root = int(wb.manifest["seeds"]["attack"])
    rows: list[EvalRow] = []
    trace_dir = wb.reports_dir / "hsja"
    trace_dir.mkdir(parents=True, exist_ok=True)
    for norm in norms:
        for budget in budgets:
            stats: dict[str, dict] = {}
            for target_id, oracle in (("um", um_oracle),
                                      (f"ensemble:{ensemble_strategy.lower()}",
                                       ens_oracle)):
                distances, fooled, failures = [], 0, 0
                trace_lines = []
                for i, (x, y) in enumerate(zip(benign.images, benign.labels)):
                    result = hop_skip_jump(
                        oracle, x, y, norm, int(budget),
                        seed=derive_seed(seed_root, i, int(budget)))
                    if result.init_failed:
                        failures += 1
                        continue
                    distances.append(result.distance)
                    fooled += int(oracle(result.adversarial.data[None, :])[0] != y)
                    trace_lines.append(
                        f"{target_id}\t{norm}\t{budget}\t{i}\t"
                        + ";".join(f"{q}:{d:.6f}" for q, d in result.trace))
                mean_distance = float(np.mean(distances)) if distances else 0.0
                stats[target_id] = {"mean_distance": mean_distance,
                                    "failures": failures,
                                    "fooled": fooled,
                                    "count": len(distances)}
                (trace_dir / f"{target_id.replace(':', '-')}-{norm}-b{budget}.tsv"
                 ).write_text("\n".join(trace_lines) + "\n")
            um_stats = stats["um"]
            for target_id, s in stats.items():
                extra = {
                    "budget": float(budget), "norm": norm,
                    "mean_distance": s["mean_distance"],
                    "init_failures": float(s["failures"]),
                    "family": f"hsja-{norm}",
                }
                if target_id != "um" and um_stats["mean_distance"] > 0:
                    extra["distance_drop_ratio"] = (
                        (s["mean_distance"] - um_stats["mean_distance"])
                        / um_stats["mean_distance"])
                error = s["fooled"] / s["count"] if s["count"] else 0.0
                rows.append(EvalRow(
                    defense_id=target_id, attack_id=f"hsja-{norm}@{budget}",
                    error_rate=error, mean_dissimilarity=s["mean_distance"],
                    extra=extra))
    return rows


def run_whitebox_greedy(wb: Workbench, grid: Sequence[float],
                        samples: int = 100,
                        per_step: AttackConfig | None = None) -> list[EvalRow]:
    """Greedy white-box sweep against the majority-vote ensemble: per
    dissimilarity cap, report MV error rate, crafting cost, iterations, and
    fooled-member counts."""
    specs = wb.ensembles()
    if "MV" not in specs:
        raise ConfigError("white-box greedy evaluation needs an MV ensemble")
    spec = specs["MV"]
    members = list(spec.members)
    n_target = len(members) // 2 + 1
    per_step = per_step or AttackConfig(method="fgsm", params={"eps": 0.03})
    benign = wb.eval_subset(samples)
    seed_root = int(wb.manifest["seeds"]["attack"])
    rows: list[EvalRow] = []
    for cap in grid:
        adversarial: list[Image] = []
        iterations, fooled_counts, seconds, dissims = [], [], [], []
        for i, (x, y) in enumerate(zip(benign.images, benign.labels)):
            started = time.perf_counter()
            result = greedy_ensemble_attack(
                wb.registry, members, x, y, per_step, n_target,
                float(cap), seed=derive_seed(seed_root, 5, i))
            seconds.append(time.perf_counter() - started)
            adversarial.append(result.adversarial)
            iterations.append(result.iterations)
            fooled_counts.append(len(result.fooled_ids))
            dissims.append(result.dissimilarity)
        labels = ensemble_label_batch(spec, wb.registry, adversarial)
        error = float(np.mean(labels != benign.label_array()))
        rows.append(EvalRow(
            defense_id="ensemble:mv", attack_id=f"greedy-mv@{cap}",
            error_rate=error,
            mean_dissimilarity=float(np.mean(dissims)),
            extra={
                "max_dissimilarity": float(cap),
                "mean_iterations": float(np.mean(iterations)),
                "mean_fooled": float(np.mean(fooled_counts)),
                "max_fooled": float(np.max(fooled_counts)),
                "mean_craft_seconds": float(np.mean(seconds)),
                "family": "greedy-mv",
            }))
    return rows


def run_eot_graybox(wb: Workbench, fractions: Sequence[float],
                    samples: int = 50, strategy: str = "AVEL",
                    eps: float = 0.15, alpha: float = 0.02,
                    iterations: int = 10, samples_per_wd: int = 5) -> list[EvalRow]:
    """Gray-box to white-box sweep of the ensemble EOT attack: the attacker
    knows a growing fraction of the weak defenses (all of them at 1.0)."""
    if strategy not in ("AVEP", "AVEL"):
        raise ConfigError("EOT evaluation targets an averaging ensemble")
    spec = wb.ensembles()[strategy]
    members = list(spec.members)
    benign = wb.eval_subset(samples)
    dist = standard_eot_distribution(benign.image_shape)
    seed_root = int(wb.manifest["seeds"]["attack"])
    handle = wb.ensemble_predictor(strategy)
    um_handle = wb.um_predictor()
    rows: list[EvalRow] = []
    for fraction in fractions:
        k = int(round(float(fraction) * len(members)))
        if k < 1:
            raise ConfigError(f"known fraction {fraction} leaves no known member")
        known = members[:k]
        adversarial, seconds = [], []
        for i, (x, y) in enumerate(zip(benign.images, benign.labels)):
            started = time.perf_counter()
            adv = eot_ensemble_attack(
                wb.registry, known, x, y, dist, samples_per_wd, eps, alpha,
                iterations, seed=derive_seed(seed_root, 9, i))
            seconds.append(time.perf_counter() - started)
            adversarial.append(adv)
        error = error_rate_on_valid(handle, benign, adversarial,
                                    reference=um_handle)
        rows.append(EvalRow(
            defense_id=f"ensemble:{strategy.lower()}",
            attack_id=f"eot-{strategy.lower()}@{fraction}",
            error_rate=error,
            mean_dissimilarity=normalized_l2_dissimilarity(
                list(benign.images), adversarial),
            extra={
                "known_fraction": float(fraction),
                "known_members": float(k),
                "mean_craft_seconds": float(np.mean(seconds)),
                "family": f"eot-{strategy.lower()}",
            }))
    return rows


def run_diversity_study(wb: Workbench, sizes: Sequence[int], trials: int,
                        preset_ids: Sequence[str] = ("fgsm-mnist-e02",
                                                     "pgd-mnist-e009"),
                        strategy: str = "AVEL") -> list[EvalRow]:
    """Random-ensemble study: correct-set diversity and per-attack error rates
    for `trials` random ensembles at each size, with best/worst/median summary
    rows per (size, preset)."""
    catalog = zero_knowledge_presets()
    library = [transform_label(t) for t in wb.manifest.transforms()]
    if max(sizes) > len(library):
        raise ArgumentError("ensemble size exceeds library size")
    benign = wb.eval_subset()
    um_handle = wb.um_predictor()
    crafted = {pid: wb.cached_craft(pid, catalog[pid], wb.um, benign)
               for pid in preset_ids}
    seed_root = derive_seed(int(wb.manifest["seeds"]["global"]), 13)
    rows: list[EvalRow] = []
    for size in sizes:
        per_preset_errors: dict[str, list[float]] = {p: [] for p in preset_ids}
        for trial in range(trials):
            rng = np.random.default_rng(
                np.random.SeedSequence([seed_root, size, trial]))
            spec = build_random_ensemble(library, int(size), strategy, rng)
            psi = diversity([wb.registry.get(m) for m in spec.members], benign)
            handle = ensemble_label_predictor(spec, wb.registry)
            for pid in preset_ids:
                err = error_rate_on_valid(handle, benign,
                                          crafted[pid].adversarial,
                                          reference=um_handle)
                per_preset_errors[pid].append(err)
                rows.append(EvalRow(
                    defense_id=f"random-{strategy.lower()}-s{size}-t{trial}",
                    attack_id=pid,
                    error_rate=err,
                    mean_dissimilarity=0.0,
                    extra={"size": float(size), "trial": float(trial),
                           "psi": float(psi), "family": "diversity"}))
        for pid in preset_ids:
            errors = sorted(per_preset_errors[pid])
            for tag, value in (("best", errors[0]), ("worst", errors[-1]),
                               ("median", errors[len(errors) // 2])):
                rows.append(EvalRow(
                    defense_id=f"random-{strategy.lower()}-s{size}-{tag}",
                    attack_id=pid, error_rate=value, mean_dissimilarity=0.0,
                    extra={"size": float(size), "summary": tag,
                           "family": "diversity-summary"}))
    return rows


def measure_overhead(wb: Workbench, batch_size: int = 64,
                     repetitions: int = 5) -> list[dict]:
    """Median wall-clock cost of each pipeline stage over warm repetitions:
    per-transform application, per-weak-defense inference, and strategy
    aggregation, plus slowest-weak-defense and stage-sum summary rows."""
    if repetitions < 5:
        raise ArgumentError("need at least five warm repetitions")
    batch = list(wb.test_set.subset(range(batch_size)).images)
    rows: list[dict] = []

    def timed(fn) -> float:
        fn()  # warm-up
        times = []
        for _ in range(repetitions):
            started = time.perf_counter()
            fn()
            times.append(time.perf_counter() - started)
        return float(np.median(times))

    transform_seconds: dict[str, float] = {}
    inference_seconds: dict[str, float] = {}
    transformed: dict[str, np.ndarray] = {}
    for wd in wb.registry:
        t_seconds = timed(lambda wd=wd: [apply(wd.transform, im) for im in batch])
        transform_seconds[wd.id] = t_seconds
        X = np.stack([apply(wd.transform, im).data for im in batch])
        transformed[wd.id] = X
        inference_seconds[wd.id] = timed(
            lambda wd=wd, X=X: predict_label_batch(wd.classifier, X))
        rows.append({"stage": f"transform:{wd.id}",
                     "median_seconds": t_seconds})
        rows.append({"stage": f"inference:{wd.id}",
                     "median_seconds": inference_seconds[wd.id]})

    specs = wb.ensembles()
    member_ids = list(next(iter(specs.values())).members)
    probs = np.stack([probs_batch(wb.registry.get(m).classifier, transformed[m])
                      for m in member_ids], axis=1)
    logits = np.stack([logits_batch(wb.registry.get(m).classifier, transformed[m])
                       for m in member_ids], axis=1)
    labels = np.argmax(logits, axis=2)
    for strategy, spec in specs.items():
        agg_seconds = timed(lambda spec=spec: [
            aggregate_member_outputs(spec, labels[i], probs[i], logits[i], i)
            for i in range(len(batch))])
        rows.append({"stage": f"aggregate:{strategy}",
                     "median_seconds": agg_seconds})

    slowest = max(transform_seconds[m] + inference_seconds[m] for m in member_ids)
    total = sum(r["median_seconds"] for r in rows)
    rows.append({"stage": "slowest_wd", "median_seconds": slowest})
    rows.append({"stage": "sum_stages", "median_seconds": total})
    return rows

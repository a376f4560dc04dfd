"""Attack configurations, the canonical preset catalogs, per-sample attack
reports, and the dispatcher that runs a configured attack against a model.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from ..core import (
    Dataset,
    Image,
    derive_seed,
    normalized_l2_dissimilarity,
)
from ..errors import ArgumentError, ConfigError
from ..models import Classifier, predict, predict_label_batch, probs_batch
from . import gradient as G
from .blackbox import hop_skip_jump, one_pixel

METHODS = ("fgsm", "bim", "pgd", "mim", "jsma", "deepfool", "cw_l2",
           "one_pixel", "hsja")


@dataclass(frozen=True)
class AttackConfig:
    """A named, serializable attack recipe.

    ``family`` groups strength variants of one attack for reporting;
    ``strength`` is the swept parameter value on that family's axis.
    """

    method: str
    params: Mapping[str, object] = field(default_factory=dict)
    seed: int = 0
    family: str = ""
    strength: float = 0.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown attack method {self.method!r}")
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))

    def to_dict(self) -> dict:
        return {"method": self.method, "params": dict(self.params),
                "seed": self.seed, "family": self.family,
                "strength": self.strength}


def config_from_dict(d: Mapping) -> AttackConfig:
    return AttackConfig(method=d["method"], params=d.get("params", {}),
                        seed=int(d.get("seed", 0)), family=d.get("family", ""),
                        strength=float(d.get("strength", 0.0)))


def run_attack(config: AttackConfig, model: Classifier, x: Image, y: int,
               seed: int | None = None) -> tuple[Image, dict]:
    """Run one configured attack against a differentiable model; returns the
    adversarial image and the attack's bookkeeping record."""
    p = config.params
    s = config.seed if seed is None else seed
    if config.method == "fgsm":
        adv = G.fgsm(model, x, y, float(p["eps"]))
        return adv, {"iterations": 1}
    if config.method == "bim":
        eps = float(p["eps"])
        return G.bim(model, x, y, eps, float(p.get("alpha", eps / 10.0)),
                     int(p["iterations"]), p.get("norm", "linf"),
                     return_info=True)
    if config.method == "pgd":
        eps = float(p["eps"])
        return G.pgd(model, x, y, eps, float(p.get("alpha", eps / 10.0)),
                     int(p["iterations"]), p.get("norm", "linf"), seed=s,
                     return_info=True)
    if config.method == "mim":
        eps = float(p["eps"])
        return G.mim(model, x, y, eps,
                     float(p.get("alpha", eps / int(p["iterations"]))),
                     int(p["iterations"]), float(p.get("decay", 1.0)),
                     return_info=True)
    if config.method == "jsma":
        return G.jsma(model, x, y, float(p["theta"]), float(p["gamma"]),
                      return_info=True)
    if config.method == "deepfool":
        return G.deepfool(model, x, float(p.get("overshoot", 0.02)),
                          int(p.get("iterations", 50)), y=y, return_info=True)
    if config.method == "cw_l2":
        return G.cw_l2(model, x, y, float(p["learning_rate"]),
                       int(p["binary_search_steps"]), int(p["iterations"]),
                       float(p.get("confidence", 0.0)), return_info=True)
    if config.method == "one_pixel":
        adv, info = one_pixel(model, x, y, int(p["pixel_count"]),
                              int(p.get("population_size", 100)),
                              int(p.get("iterations", 30)), seed=s,
                              return_info=True)
        info["queries"] = info.pop("oracle_evaluations")
        return adv, info
    if config.method == "hsja":
        oracle = lambda X: predict_label_batch(model, X)
        result = hop_skip_jump(oracle, x, y, p.get("norm", "l2"),
                               int(p["query_budget"]), seed=s)
        return result.adversarial, {"queries": result.queries_used,
                                    "distance": result.distance,
                                    "init_failed": result.init_failed}
    raise ConfigError(f"unknown attack method {config.method!r}")


@dataclass
class AttackReport:
    """Per-sample adversarial outputs with cost and success bookkeeping."""

    attack_id: str
    adversarial: list[Image]
    per_sample: list[dict]

    def to_json_lines(self) -> str:
        return "\n".join(
            json.dumps({"attack_id": self.attack_id, "sample": i, **rec},
                       sort_keys=True, default=float)
            for i, rec in enumerate(self.per_sample)
        )

    def mean(self, key: str) -> float:
        vals = [rec[key] for rec in self.per_sample if rec.get(key) is not None]
        return float(np.mean(vals)) if vals else float("nan")


def craft_set(config: AttackConfig, model: Classifier, data: Dataset,
              attack_id: str = "") -> AttackReport:
    """Craft one adversarial example per dataset sample. Per-sample seeds are
    derived from (config seed, sample index) so runs parallelize stably."""
    adversarial: list[Image] = []
    records: list[dict] = []
    for i, (x, y) in enumerate(zip(data.images, data.labels)):
        started = time.perf_counter()
        adv, info = run_attack(config, model, x, y, seed=derive_seed(config.seed, i))
        elapsed = time.perf_counter() - started
        adversarial.append(adv)
        records.append({
            "succeeded_on_target": bool(predict(model, adv).label != y),
            "dissimilarity": normalized_l2_dissimilarity([x], [adv]),
            "iterations": int(info.get("iterations", 1)),
            "queries": int(info.get("queries", 0)),
            "wall_clock_seconds": elapsed,
        })
    return AttackReport(attack_id=attack_id or config.family,
                        adversarial=adversarial, per_sample=records)


# ---------------------------------------------------------------------------
# Canonical preset catalogs.
# ---------------------------------------------------------------------------


def _strength_tag(value: float) -> str:
    text = f"{value:g}"
    return text.replace("-", "m").replace(".", "")


def _sweep(catalog, dataset, method, family_param, values, fixed, param_tag):
    for v in values:
        preset_id = f"{family_param}-{dataset}-{param_tag}{_strength_tag(v)}"
        params = dict(fixed)
        params[_PARAM_OF_TAG[param_tag]] = v
        catalog[preset_id] = AttackConfig(
            method=method, params=params, family=f"{family_param}-{dataset}",
            strength=float(v))


_PARAM_OF_TAG = {
    "e": "eps",
    "lr": "learning_rate",
    "os": "overshoot",
    "t": "theta",
    "pc": "pixel_count",
}


def zero_knowledge_presets() -> dict[str, AttackConfig]:
    """The canonical per-dataset attack sweeps (five strengths per attack)."""
    catalog: dict[str, AttackConfig] = {}
    # MNIST family
    _sweep(catalog, "mnist", "fgsm", "fgsm", [0.1, 0.15, 0.2, 0.25, 0.3], {}, "e")
    _sweep(catalog, "mnist", "bim", "biml2", [0.75, 0.85, 1.0, 1.1, 1.2],
           {"iterations": 100, "norm": "l2"}, "e")
    _sweep(catalog, "mnist", "bim", "bimlinf", [0.075, 0.082, 0.09, 0.1, 0.12],
           {"iterations": 100, "norm": "linf"}, "e")
    _sweep(catalog, "mnist", "cw_l2", "cwl2",
           [0.0098, 0.01, 0.012, 0.015, 0.018],
           {"binary_search_steps": 5, "iterations": 100}, "lr")
    for numerator in (3, 5, 8, 16, 50):
        catalog[f"deepfool-mnist-os{numerator}"] = AttackConfig(
            method="deepfool",
            params={"overshoot": numerator / 255, "iterations": 50},
            family="deepfool-mnist", strength=numerator / 255)
    _sweep(catalog, "mnist", "jsma", "jsma", [0.15, 0.17, 0.18, 0.21, 0.25],
           {"gamma": 0.5}, "t")
    _sweep(catalog, "mnist", "one_pixel", "onepixel", [15, 30, 35, 40, 75],
           {"population_size": 100, "iterations": 30}, "pc")
    _sweep(catalog, "mnist", "mim", "mim", [0.06, 0.067, 0.075, 0.085, 0.1],
           {"iterations": 1000, "delay_factor": 1.0}, "e")
    for eps in (0.075, 0.082, 0.09, 0.1, 0.11):
        catalog[f"pgd-mnist-e{_strength_tag(eps)}"] = AttackConfig(
            method="pgd", params={"eps": eps, "alpha": eps / 10,
                                  "iterations": 40},
            family="pgd-mnist", strength=eps)
    # CIFAR-100 family
    _sweep(catalog, "cifar100", "fgsm", "fgsm",
           [0.002, 0.003, 0.005, 0.0075, 0.03], {}, "e")
    _sweep(catalog, "cifar100", "bim", "biml2", [0.05, 0.075, 0.125, 0.3, 0.5],
           {"iterations": 100, "norm": "l2"}, "e")
    _sweep(catalog, "cifar100", "bim", "bimlinf",
           [0.0025, 0.005, 0.0075, 0.01, 0.015],
           {"iterations": 100, "norm": "linf"}, "e")
    _sweep(catalog, "cifar100", "cw_l2", "cwl2", [0.0003, 0.001, 0.007, 0.02, 1.0],
           {"binary_search_steps": 6, "iterations": 10}, "lr")
    for theta, gamma in zip([0.01, 0.5, 0.25, -0.5, -0.3],
                            [0.04, 0.03, 0.05, 0.075, 0.1]):
        preset_id = f"jsma-cifar100-t{_strength_tag(theta)}"
        catalog[preset_id] = AttackConfig(
            method="jsma", params={"theta": theta, "gamma": gamma},
            family="jsma-cifar100", strength=float(theta))
    for eps in (0.0015, 0.0025, 0.0035, 0.005, 0.015):
        catalog[f"pgd-cifar100-e{_strength_tag(eps)}"] = AttackConfig(
            method="pgd", params={"eps": eps, "alpha": eps / 10,
                                  "iterations": 40},
            family="pgd-cifar100", strength=eps)
    return catalog


def whitebox_settings(dataset_tag: str) -> dict:
    """Greedy white/gray-box sweep settings: majority-vote target, a
    max-dissimilarity grid, and the per-step attack recipe."""
    if dataset_tag == "mnist":
        return {
            "strategy": "MV",
            "wd_count": 72,
            "max_dissimilarity": [round(0.1 * k, 1) for k in range(1, 11)],
            "attack": {"method": "fgsm", "eps": 0.1},
        }
    if dataset_tag == "cifar100":
        return {
            "strategy": "MV",
            "wd_count": 22,
            "max_dissimilarity": [0.05, 0.075, 0.1, 0.125, 0.15, 0.175, 0.2,
                                  0.225, 0.25, 0.275],
            "attack": {"method": "fgsm", "eps": 0.01},
        }
    raise ArgumentError(f"unknown dataset tag {dataset_tag!r}")


def presets_to_json() -> str:
    catalog = {pid: cfg.to_dict() for pid, cfg in zero_knowledge_presets().items()}
    catalog["_whitebox"] = {tag: whitebox_settings(tag)
                            for tag in ("mnist", "cifar100")}
    return json.dumps(catalog, indent=2, sort_keys=True)

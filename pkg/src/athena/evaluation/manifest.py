"""Experiment manifests and the workbench that builds, caches, and loads every
artifact an evaluation needs (datasets, the undefended model, the weak-defense
library, baselines, ensembles, and cached adversarial sets).

A manifest is a JSON document; every run writes back a resolved snapshot (all
defaults and seeds filled in) sufficient to reproduce the numeric outputs
byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from ..attacks import AttackConfig, AttackReport, craft_set
from ..core import Dataset, Image, derive_seed
from ..datasets import load_idx, synth_digits
from ..ensemble import EnsembleSpec, WeakDefenseRegistry, label_predictor
from ..errors import ArgumentError, ConfigError
from ..models import (
    AdversarialTrainingConfig,
    Classifier,
    TrainConfig,
    WeakDefense,
    classifier_fingerprint,
    label_predictor as model_label_predictor,
    load_classifier,
    load_weak_defense,
    pgd_adversarial_training,
    predict_label_batch,
    randomized_smoothing_predict,
    save_classifier,
    save_weak_defense,
    train,
    train_weak_defense,
)
from ..transforms import (
    Transform,
    standard_library,
    transform_from_dict,
    transform_label,
    transform_to_dict,
)

CACHE_ENV_VAR = "ATHENA_CACHE"

_DEFAULTS = {
    "name": "desk-mnist",
    "dataset": {"kind": "synthetic", "seed": 7, "train_size": 10000,
                "test_size": 2000,
                # uniform box-noise training copies; desk-scale MLPs need this
                # hardening to show the perturbation-scale behavior larger
                # convolutional models get architecturally
                "augment": {"copies": 2, "amplitude": 0.25, "seed": 3}},
    "arch": "mlp1",
    "hidden_width": 64,
    "train": {"optimizer": "adam", "learning_rate": 0.001, "batch_size": 128,
              "epochs": 12, "seed": 1001, "validation_fraction": 0.2},
    "transform_library": "mnist",
    "ensembles": [{"strategy": "RD", "seed": 11}, {"strategy": "MV"},
                  {"strategy": "T2MV"}, {"strategy": "AVEP"},
                  {"strategy": "AVEL"}],
    "baselines": {
        "pgd_adt": {"epsilon": 0.15, "step_size": 0.02, "iterations": 7},
        "randomized_smoothing": {"sigma": 0.25, "n": 100, "alpha": 0.05},
    },
    "eval": {"samples": 250, "trend_threshold": 0.8},
    "seeds": {"global": 42, "attack": 2024, "rs": 99},
    "output_dir": None,
}


@dataclass(frozen=True)
class ExperimentManifest:
    document: Mapping[str, object]

    def __post_init__(self):
        merged = _merge(_DEFAULTS, dict(self.document))
        _validate_manifest(merged)
        object.__setattr__(self, "document", merged)

    def __getitem__(self, key: str):
        return self.document[key]

    @property
    def train_config(self) -> TrainConfig:
        t = self.document["train"]
        return TrainConfig(
            optimizer=t["optimizer"], learning_rate=float(t["learning_rate"]),
            batch_size=int(t["batch_size"]), epochs=int(t["epochs"]),
            seed=int(t["seed"]),
            validation_fraction=float(t["validation_fraction"]))

    def transforms(self) -> list[Transform]:
        lib = self.document["transform_library"]
        if isinstance(lib, str):
            return standard_library(lib)
        return [transform_from_dict(d) for d in lib]

    def to_json(self) -> str:
        return json.dumps(self.document, indent=2, sort_keys=True)


def _merge(defaults, overrides):
    out = {}
    for key, base in defaults.items():
        if key in overrides and isinstance(base, dict) and isinstance(overrides[key], dict):
            out[key] = _merge(base, overrides[key])
        elif key in overrides:
            out[key] = overrides[key]
        else:
            out[key] = json.loads(json.dumps(base))  # deep copy
    for key in overrides:
        if key not in out:
            out[key] = overrides[key]
    return out


def _validate_manifest(doc: dict) -> None:
    ds = doc["dataset"]
    if ds.get("kind") not in ("synthetic", "idx"):
        raise ConfigError("dataset.kind must be 'synthetic' or 'idx'")
    if ds["kind"] == "synthetic":
        if int(ds.get("train_size", 0)) < 100 or int(ds.get("test_size", 0)) < 50:
            raise ConfigError("synthetic dataset needs train_size >= 100, test_size >= 50")
    else:
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if key not in ds:
                raise ConfigError(f"idx dataset needs {key!r}")
    if doc["arch"] not in ("mlp1", "softmax_linear", "linear_svm"):
        raise ConfigError(f"unknown arch {doc['arch']!r}")
    strategies = [e["strategy"] for e in doc["ensembles"]]
    if len(set(strategies)) != len(strategies):
        raise ConfigError("duplicate ensemble strategies in manifest")
    if int(doc["eval"]["samples"]) < 10:
        raise ConfigError("eval.samples must be at least 10")


def load_manifest(path: str | Path) -> ExperimentManifest:
    return ExperimentManifest(json.loads(Path(path).read_text()))


def default_cache_root() -> Path:
    env = os.environ.get(CACHE_ENV_VAR)
    return Path(env) if env else Path.cwd() / "athena-out"


def _augment_with_box_noise(data: Dataset, copies: int, amplitude: float,
                            seed: int) -> Dataset:
    """Append `copies` uniformly noise-perturbed replicas of every sample."""
    h, w, c = data.image_shape
    images = list(data.images)
    labels = list(data.labels)
    for k in range(copies):
        rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, k]))
        for im, label in zip(data.images, data.labels):
            noisy = np.clip(im.data + rng.uniform(-amplitude, amplitude,
                                                  size=im.data.size), 0.0, 1.0)
            images.append(Image(h, w, c, noisy))
            labels.append(label)
    return Dataset(images=tuple(images), labels=tuple(labels),
                   num_classes=data.num_classes)


class Workbench:
    """Builds and serves every artifact referenced by a manifest.

    Model files live under <root>/models, adversarial caches under
    <root>/cache (content-addressed), reports under <root>/reports.
    """

    def __init__(self, manifest: ExperimentManifest, root: str | Path | None = None,
                 jobs: int = 1, log: Callable[[str], None] | None = None):
        self.manifest = manifest
        configured = manifest["output_dir"]
        self.root = Path(root) if root else (
            Path(configured) if configured else default_cache_root())
        self.jobs = max(1, int(jobs))
        self._log = log or (lambda message: None)
        self.models_dir = self.root / "models"
        self.cache_dir = self.root / "cache"
        self.reports_dir = self.root / "reports"
        self._train_set: Dataset | None = None
        self._test_set: Dataset | None = None
        self._um: Classifier | None = None
        self._adt: Classifier | None = None
        self._registry: WeakDefenseRegistry | None = None
        self._dataset_digest: str | None = None

    # -- datasets -----------------------------------------------------------

    def _load_datasets(self) -> None:
        if self._train_set is not None:
            return
        ds = self.manifest["dataset"]
        if ds["kind"] == "synthetic":
            total = int(ds["train_size"]) + int(ds["test_size"])
            full = synth_digits(int(ds["seed"]), total)
            self._train_set = full.subset(range(int(ds["train_size"])))
            self._test_set = full.subset(range(int(ds["train_size"]), total))
        else:
            train_full = load_idx(ds["train_images"], ds["train_labels"])
            test_full = load_idx(ds["test_images"], ds["test_labels"])
            n_train = int(ds.get("train_size", len(train_full)))
            n_test = int(ds.get("test_size", len(test_full)))
            self._train_set = train_full.subset(range(min(n_train, len(train_full))))
            self._test_set = test_full.subset(range(min(n_test, len(test_full))))
        augment = ds.get("augment")
        if augment and int(augment.get("copies", 0)) > 0:
            self._train_set = _augment_with_box_noise(
                self._train_set, int(augment["copies"]),
                float(augment["amplitude"]), int(augment.get("seed", 0)))

    @property
    def train_set(self) -> Dataset:
        self._load_datasets()
        return self._train_set

    @property
    def test_set(self) -> Dataset:
        self._load_datasets()
        return self._test_set

    def dataset_digest(self) -> str:
        if self._dataset_digest is None:
            digest = hashlib.sha256()
            digest.update(json.dumps(self.manifest["dataset"],
                                     sort_keys=True).encode())
            digest.update(self.test_set.stack().tobytes()[:65536])
            self._dataset_digest = digest.hexdigest()[:16]
        return self._dataset_digest

    # -- model training / caching -------------------------------------------

    def _config_hash(self, extra: dict) -> str:
        basis = {
            "dataset": self.manifest["dataset"],
            "arch": self.manifest["arch"],
            "hidden_width": self.manifest["hidden_width"],
            "train": self.manifest["train"],
            **extra,
        }
        return hashlib.sha256(json.dumps(basis, sort_keys=True).encode()).hexdigest()

    def _load_if_fresh(self, path: Path, expected_hash: str, loader):
        if not path.exists():
            return None
        artifact = loader(path)
        meta = artifact.metadata if hasattr(artifact, "metadata") else \
            artifact.classifier.metadata
        if meta.get("config_hash") != expected_hash:
            return None
        return artifact

    def build(self, only: str = "all", force: bool = False) -> dict:
        """Train (or load cached) artifacts. ``only`` is one of
        'um', 'wds', 'baselines', or 'all'. Returns {artifact_id: status}."""
        if only not in ("all", "um", "wds", "baselines"):
            raise ArgumentError(f"unknown build selector {only!r}")
        self.models_dir.mkdir(parents=True, exist_ok=True)
        status: dict[str, str] = {}
        if only in ("all", "um"):
            status["um"] = self._build_um(force)
        if only in ("all", "wds"):
            status.update(self._build_wds(force))
        if only in ("all", "baselines"):
            status["pgd_adt"] = self._build_adt(force)
        self.write_snapshot()
        return status

    def _build_um(self, force: bool) -> str:
        path = self.models_dir / "um.athm"
        expected = self._config_hash({"role": "um"})
        if not force:
            cached = self._load_if_fresh(path, expected, load_classifier)
            if cached is not None:
                self._um = cached
                self._log("um: cached")
                return "cached"
        self._log("um: training")
        um = train(self.manifest["arch"], self.train_set, self.train_config(),
                   hidden_width=int(self.manifest["hidden_width"]))
        meta = dict(um.metadata)
        meta["config_hash"] = expected
        um = Classifier(arch=um.arch, weights=um.weights,
                        num_classes=um.num_classes, input_shape=um.input_shape,
                        metadata=meta)
        save_classifier(um, path)
        self._um = um
        return "trained"

    def _wd_seed(self, index: int) -> int:
        return derive_seed(self.train_config().seed, 100 + index)

    def _build_wds(self, force: bool) -> dict:
        transforms = self.manifest.transforms()
        status: dict[str, str] = {}
        wds: dict[str, object] = {}

        def build_one(index_transform):
            index, t = index_transform
            wd_id = transform_label(t)
            path = self.models_dir / f"wd-{wd_id}.athm"
            expected = self._config_hash(
                {"role": "wd", "transform": transform_to_dict(t)})
            if not force:
                cached = self._load_if_fresh(path, expected, load_weak_defense)
                if cached is not None:
                    return wd_id, cached, "cached"
            cfg = self.train_config()
            cfg = TrainConfig(optimizer=cfg.optimizer,
                              learning_rate=cfg.learning_rate,
                              batch_size=cfg.batch_size, epochs=cfg.epochs,
                              seed=self._wd_seed(index),
                              validation_fraction=cfg.validation_fraction)
            wd = train_weak_defense(t, self.train_set, self.manifest["arch"], cfg,
                                    hidden_width=int(self.manifest["hidden_width"]))
            meta = dict(wd.classifier.metadata)
            meta["config_hash"] = expected
            clf = Classifier(arch=wd.classifier.arch, weights=wd.classifier.weights,
                             num_classes=wd.classifier.num_classes,
                             input_shape=wd.classifier.input_shape, metadata=meta)
            wd = WeakDefense(transform=wd.transform, classifier=clf, id=wd.id)
            save_weak_defense(wd, path)
            return wd_id, wd, "trained"

        items = list(enumerate(transforms))
        if self.jobs > 1:
            with ThreadPoolExecutor(max_workers=self.jobs) as pool:
                results = list(pool.map(build_one, items))
        else:
            results = [build_one(item) for item in items]
        registry = WeakDefenseRegistry()
        for wd_id, wd, state in results:
            registry.add(wd)
            status[f"wd:{wd_id}"] = state
            self._log(f"wd {wd_id}: {state}")
        self._registry = registry
        return status

    def _build_adt(self, force: bool) -> str:
        params = self.manifest["baselines"].get("pgd_adt")
        if not params:
            return "disabled"
        path = self.models_dir / "pgd-adt.athm"
        expected = self._config_hash({"role": "pgd_adt", "params": params})
        if not force:
            cached = self._load_if_fresh(path, expected, load_classifier)
            if cached is not None:
                self._adt = cached
                self._log("pgd_adt: cached")
                return "cached"
        self._log("pgd_adt: training")
        cfg = self.train_config()
        cfg = TrainConfig(optimizer=cfg.optimizer, learning_rate=cfg.learning_rate,
                          batch_size=cfg.batch_size, epochs=cfg.epochs,
                          seed=derive_seed(cfg.seed, 999),
                          validation_fraction=cfg.validation_fraction)
        adt = pgd_adversarial_training(
            self.manifest["arch"], self.train_set, cfg,
            AdversarialTrainingConfig(epsilon=float(params["epsilon"]),
                                      step_size=float(params["step_size"]),
                                      iterations=int(params["iterations"])),
            hidden_width=int(self.manifest["hidden_width"]))
        meta = dict(adt.metadata)
        meta["config_hash"] = expected
        adt = Classifier(arch=adt.arch, weights=adt.weights,
                         num_classes=adt.num_classes, input_shape=adt.input_shape,
                         metadata=meta)
        save_classifier(adt, path)
        self._adt = adt
        return "trained"

    def train_config(self) -> TrainConfig:
        return self.manifest.train_config

    # -- artifact accessors ---------------------------------------------------

    @property
    def um(self) -> Classifier:
        if self._um is None:
            self._build_um(force=False)
        return self._um

    @property
    def adt(self) -> Classifier | None:
        if self._adt is None:
            self._build_adt(force=False)
        return self._adt

    @property
    def registry(self) -> WeakDefenseRegistry:
        if self._registry is None:
            self._build_wds(force=False)
        return self._registry

    def ensembles(self) -> dict[str, EnsembleSpec]:
        members = tuple(transform_label(t) for t in self.manifest.transforms())
        specs = {}
        for entry in self.manifest["ensembles"]:
            specs[entry["strategy"]] = EnsembleSpec(
                members=members, strategy=entry["strategy"],
                seed=int(entry.get("seed", 0)))
        return specs

    def um_predictor(self):
        return model_label_predictor(self.um)

    def ensemble_predictor(self, strategy: str):
        return label_predictor(self.ensembles()[strategy], self.registry)

    def rs_params(self) -> dict | None:
        return self.manifest["baselines"].get("randomized_smoothing")

    def rs_predictor(self):
        """Randomized-smoothing predictor; abstentions surface as ABSTAIN and
        therefore score as errors."""
        params = self.rs_params()
        if not params:
            raise ConfigError("randomized smoothing baseline is disabled")
        rs_seed = int(self.manifest["seeds"]["rs"])
        um = self.um

        def handle(images: Sequence[Image]) -> np.ndarray:
            out = np.empty(len(images), dtype=np.int64)
            for i, image in enumerate(images):
                rng = np.random.default_rng(
                    np.random.SeedSequence([rs_seed, i]))
                out[i] = randomized_smoothing_predict(
                    um, image, float(params["sigma"]), int(params["n"]),
                    float(params["alpha"]), rng)
            return out

        return handle

    def eval_subset(self, n: int | None = None) -> Dataset:
        """First n test samples the undefended model classifies correctly."""
        n = int(self.manifest["eval"]["samples"]) if n is None else int(n)
        preds = predict_label_batch(self.um, self.test_set.stack())
        correct = np.flatnonzero(preds == self.test_set.label_array())
        if len(correct) < n:
            raise ConfigError(
                f"only {len(correct)} correctly classified test samples; "
                f"need {n}")
        return self.test_set.subset(correct[:n])

    # -- adversarial-set caching ---------------------------------------------

    def cached_craft(self, attack_id: str, config: AttackConfig,
                     target: Classifier, data: Dataset) -> AttackReport:
        """Craft (or load) an adversarial set; cache key covers the attack
        configuration, the target weights, and the benign data identity."""
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        key_basis = json.dumps({
            "config": config.to_dict(),
            "target": classifier_fingerprint(target),
            "data": self.dataset_digest(),
            "count": len(data),
            "labels": list(data.labels),
        }, sort_keys=True)
        key = hashlib.sha256(key_basis.encode()).hexdigest()
        path = self.cache_dir / f"{key}.npz"
        h, w, c = data.image_shape
        if path.exists():
            archive = np.load(path, allow_pickle=False)
            records = json.loads(str(archive["records"]))
            adversarial = [Image(h, w, c, row.copy()) for row in archive["adv"]]
            self._log(f"attack {attack_id}: cached")
            return AttackReport(attack_id=attack_id, adversarial=adversarial,
                                per_sample=records)
        self._log(f"attack {attack_id}: crafting {len(data)} samples")
        report = craft_set(config, target, data, attack_id=attack_id)
        np.savez_compressed(
            path,
            adv=np.stack([im.data for im in report.adversarial]),
            records=np.array(json.dumps(report.per_sample, default=float)),
        )
        self._write_attack_log(attack_id, report)
        return report

    def _write_attack_log(self, attack_id: str, report: AttackReport) -> None:
        log_dir = self.reports_dir / "attacks"
        log_dir.mkdir(parents=True, exist_ok=True)
        (log_dir / f"{attack_id}.jsonl").write_text(report.to_json_lines() + "\n")

    def missing_artifacts(self) -> list[str]:
        """Artifact ids that are absent or stale relative to the manifest."""
        gaps: list[str] = []
        if self._load_if_fresh(self.models_dir / "um.athm",
                               self._config_hash({"role": "um"}),
                               load_classifier) is None:
            gaps.append("um")
        for t in self.manifest.transforms():
            wd_id = transform_label(t)
            expected = self._config_hash(
                {"role": "wd", "transform": transform_to_dict(t)})
            if self._load_if_fresh(self.models_dir / f"wd-{wd_id}.athm",
                                   expected, load_weak_defense) is None:
                gaps.append(f"wd:{wd_id}")
        params = self.manifest["baselines"].get("pgd_adt")
        if params and self._load_if_fresh(
                self.models_dir / "pgd-adt.athm",
                self._config_hash({"role": "pgd_adt", "params": params}),
                load_classifier) is None:
            gaps.append("pgd_adt")
        return gaps

    def write_snapshot(self) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / "manifest.resolved.json"
        path.write_text(self.manifest.to_json())
        return path

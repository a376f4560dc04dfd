"""Trainable classifiers with analytic input gradients, weak-defense training,
and the two baseline defenses (adversarial training, randomized smoothing).

Three architectures are provided: a softmax-linear model, a one-hidden-layer
ReLU network (the desk-scale default), and a one-vs-rest linear SVM. All
training is plain numpy and bit-deterministic given (seed, data, config).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import binomtest

from .core import Dataset, Image
from .errors import ArgumentError, FileFormatError, TrainingError, TruncatedFileError
from .transforms import Transform, apply, transform_from_dict, transform_label, transform_to_dict

SOFTMAX_LINEAR = "softmax_linear"
MLP1 = "mlp1"
LINEAR_SVM = "linear_svm"
ARCHS = (SOFTMAX_LINEAR, MLP1, LINEAR_SVM)

ATHM_MAGIC = b"ATHM"

#: Sentinel returned by randomized smoothing when the vote is too close to call.
ABSTAIN = -1


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 0.001
    batch_size: int = 128
    epochs: int = 20
    seed: int = 0
    validation_fraction: float = 0.2

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ArgumentError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise ArgumentError("learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ArgumentError("batch size and epochs must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ArgumentError("validation fraction must lie in (0, 1)")


@dataclass(frozen=True)
class Classifier:
    arch: str
    weights: Mapping[str, np.ndarray]
    num_classes: int
    input_shape: tuple[int, int, int]
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ArgumentError(f"unknown architecture {self.arch!r}")
        frozen = {}
        for name, arr in dict(self.weights).items():
            arr = np.asarray(arr, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ArgumentError(f"weight array {name!r} contains non-finite values")
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "weights", frozen)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def input_dim(self) -> int:
        h, w, c = self.input_shape
        return h * w * c


@dataclass(frozen=True)
class Prediction:
    logits: np.ndarray
    probs: np.ndarray
    label: int


@dataclass(frozen=True)
class WeakDefense:
    """A transformation paired with a classifier trained on transformed data.

    Inference always routes the raw input through the transform first.
    """

    transform: Transform
    classifier: Classifier
    id: str


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def logits_batch(c: Classifier, X: np.ndarray) -> np.ndarray:
    if X.ndim != 2 or X.shape[1] != c.input_dim:
        raise ArgumentError(f"expected (N, {c.input_dim}) inputs, got {X.shape}")
    w = c.weights
    if c.arch == MLP1:
        hidden = np.maximum(X @ w["W1"] + w["b1"], 0.0)
        return hidden @ w["W2"] + w["b2"]
    return X @ w["W"] + w["b"]


def probs_batch(c: Classifier, X: np.ndarray) -> np.ndarray:
    # for the SVM these are softmax-normalized decision values
    return _softmax(logits_batch(c, X))


def predict_label_batch(c: Classifier, X: np.ndarray) -> np.ndarray:
    return np.argmax(logits_batch(c, X), axis=1)


def predict(c: Classifier, x: Image) -> Prediction:
    if x.shape != c.input_shape:
        raise ArgumentError(f"input shape {x.shape} != model shape {c.input_shape}")
    logits = logits_batch(c, x.data[None, :])[0]
    probs = _softmax(logits)
    return Prediction(logits=logits, probs=probs, label=int(np.argmax(logits)))


def label_predictor(c: Classifier) -> Callable[[Sequence[Image]], np.ndarray]:
    """Adapter: classifier -> predictor handle over image lists."""
    def handle(images: Sequence[Image]) -> np.ndarray:
        X = np.stack([im.data for im in images])
        return predict_label_batch(c, X)
    return handle


def loss_input_gradient_batch(c: Classifier, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Analytic gradient of the training loss w.r.t. each input row."""
    y = np.asarray(y, dtype=np.int64)
    w = c.weights
    if c.arch == LINEAR_SVM:
        scores = X @ w["W"] + w["b"]
        target = -np.ones_like(scores)
        target[np.arange(len(y)), y] = 1.0
        active = (1.0 - target * scores) > 0.0
        dscores = -target * active
        return dscores @ w["W"].T
    onehot = np.zeros((len(y), c.num_classes))
    onehot[np.arange(len(y)), y] = 1.0
    if c.arch == SOFTMAX_LINEAR:
        delta = _softmax(X @ w["W"] + w["b"]) - onehot
        return delta @ w["W"].T
    pre = X @ w["W1"] + w["b1"]
    hidden = np.maximum(pre, 0.0)
    delta2 = _softmax(hidden @ w["W2"] + w["b2"]) - onehot
    delta1 = (delta2 @ w["W2"].T) * (pre > 0.0)
    return delta1 @ w["W1"].T


def loss_input_gradient(c: Classifier, x: Image, y: int) -> np.ndarray:
    """Gradient of the training loss at (x, y), shaped like the flat image."""
    if x.shape != c.input_shape:
        raise ArgumentError(f"input shape {x.shape} != model shape {c.input_shape}")
    return loss_input_gradient_batch(c, x.data[None, :], np.array([y]))[0]


def logits_input_jacobian(c: Classifier, x: Image) -> tuple[np.ndarray, np.ndarray]:
    """Returns (logits (K,), jacobian (D, K)) of the raw class scores at x."""
    w = c.weights
    if c.arch == MLP1:
        pre = x.data @ w["W1"] + w["b1"]
        hidden = np.maximum(pre, 0.0)
        logits = hidden @ w["W2"] + w["b2"]
        jac = (w["W1"] * (pre > 0.0)[None, :]) @ w["W2"]
        return logits, jac
    logits = x.data @ w["W"] + w["b"]
    return logits, np.array(w["W"])


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _init_weights(arch: str, dim: int, num_classes: int, hidden_width: int,
                  rng: np.random.Generator) -> dict[str, np.ndarray]:
    if arch == MLP1:
        return {
            "W1": rng.normal(0.0, np.sqrt(2.0 / dim), size=(dim, hidden_width)),
            "b1": np.zeros(hidden_width),
            "W2": rng.normal(0.0, np.sqrt(2.0 / hidden_width),
                             size=(hidden_width, num_classes)),
            "b2": np.zeros(num_classes),
        }
    return {
        "W": rng.normal(0.0, 0.01, size=(dim, num_classes)),
        "b": np.zeros(num_classes),
    }


def _loss_and_weight_grads(arch: str, weights: dict, X: np.ndarray, y: np.ndarray,
                           num_classes: int, reg_lambda: float):
    n = len(y)
    if arch == LINEAR_SVM:
        scores = X @ weights["W"] + weights["b"]
        target = -np.ones_like(scores)
        target[np.arange(n), y] = 1.0
        margins = np.maximum(0.0, 1.0 - target * scores)
        loss = margins.sum(axis=1).mean() + 0.5 * reg_lambda * np.sum(weights["W"] ** 2)
        dscores = -(target * (margins > 0.0)) / n
        return loss, {"W": X.T @ dscores + reg_lambda * weights["W"],
                      "b": dscores.sum(axis=0)}
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), y] = 1.0
    if arch == SOFTMAX_LINEAR:
        probs = _softmax(X @ weights["W"] + weights["b"])
        loss = -np.mean(np.log(probs[np.arange(n), y] + 1e-300))
        delta = (probs - onehot) / n
        return loss, {"W": X.T @ delta, "b": delta.sum(axis=0)}
    pre = X @ weights["W1"] + weights["b1"]
    hidden = np.maximum(pre, 0.0)
    probs = _softmax(hidden @ weights["W2"] + weights["b2"])
    loss = -np.mean(np.log(probs[np.arange(n), y] + 1e-300))
    delta2 = (probs - onehot) / n
    delta1 = (delta2 @ weights["W2"].T) * (pre > 0.0)
    return loss, {
        "W1": X.T @ delta1, "b1": delta1.sum(axis=0),
        "W2": hidden.T @ delta2, "b2": delta2.sum(axis=0),
    }


@dataclass(frozen=True)
class AdversarialTrainingConfig:
    """Inner-attack parameters for projected-gradient adversarial training."""

    epsilon: float = 0.15
    step_size: float = 0.02
    iterations: int = 7

    def __post_init__(self):
        if self.epsilon < 0 or self.step_size <= 0 or self.iterations < 1:
            raise ArgumentError("invalid adversarial-training parameters")


def _pgd_batch(arch: str, weights: dict, X: np.ndarray, y: np.ndarray,
               num_classes: int, cfg: AdversarialTrainingConfig,
               rng: np.random.Generator) -> np.ndarray:
    snapshot = Classifier(arch=arch, weights={k: v.copy() for k, v in weights.items()},
                          num_classes=num_classes, input_shape=(1, X.shape[1], 1))
    adv = np.clip(X + rng.uniform(-cfg.epsilon, cfg.epsilon, size=X.shape), 0.0, 1.0)
    for _ in range(cfg.iterations):
        grad = loss_input_gradient_batch(snapshot, adv, y)
        adv = adv + cfg.step_size * np.sign(grad)
        adv = np.clip(adv, X - cfg.epsilon, X + cfg.epsilon)
        adv = np.clip(adv, 0.0, 1.0)
    return adv


def _accuracy(arch, weights, X, y, num_classes) -> float:
    snapshot = Classifier(arch=arch, weights={k: v.copy() for k, v in weights.items()},
                          num_classes=num_classes, input_shape=(1, X.shape[1], 1))
    return float(np.mean(predict_label_batch(snapshot, X) == y))


def train(arch: str, data: Dataset, cfg: TrainConfig, *,
          hidden_width: int = 64, reg_lambda: float = 1e-4,
          adversarial: AdversarialTrainingConfig | None = None) -> Classifier:
    """Train a classifier; deterministic given (arch, data, cfg, seed).

    Softmax/MLP use cross-entropy, the SVM a one-vs-rest hinge. With
    ``adversarial`` set, every minibatch is replaced by PGD-perturbed inputs
    before the descent step (the inner attack uses its own RNG stream, so an
    epsilon of zero reproduces plain training bit-for-bit).
    """
    if arch not in ARCHS:
        raise ArgumentError(f"unknown architecture {arch!r}")
    if len(data) == 0:
        raise ArgumentError("cannot train on an empty dataset")
    if data.num_classes < 2:
        raise ArgumentError("need at least two classes")
    X, y = data.stack(), data.label_array()
    n, dim = X.shape
    rng_split = np.random.default_rng(np.random.SeedSequence([cfg.seed & 0xFFFFFFFF, 0]))
    rng_init = np.random.default_rng(np.random.SeedSequence([cfg.seed & 0xFFFFFFFF, 1]))
    rng_shuffle = np.random.default_rng(np.random.SeedSequence([cfg.seed & 0xFFFFFFFF, 2]))
    rng_attack = np.random.default_rng(np.random.SeedSequence([cfg.seed & 0xFFFFFFFF, 3]))

    perm = rng_split.permutation(n)
    n_val = max(1, int(round(n * cfg.validation_fraction)))
    n_val = min(n_val, n - 1)
    val_idx, train_idx = perm[:n_val], perm[n_val:]

    weights = _init_weights(arch, dim, data.num_classes, hidden_width, rng_init)

    adam_m = {k: np.zeros_like(v) for k, v in weights.items()}
    adam_v = {k: np.zeros_like(v) for k, v in weights.items()}
    step = 0
    for epoch in range(cfg.epochs):
        order = rng_shuffle.permutation(train_idx)
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            Xb, yb = X[batch], y[batch]
            if adversarial is not None:
                Xb = _pgd_batch(arch, weights, Xb, yb, data.num_classes,
                                adversarial, rng_attack)
            loss, grads = _loss_and_weight_grads(arch, weights, Xb, yb,
                                                 data.num_classes, reg_lambda)
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}", epoch=epoch)
            step += 1
            for name, g in grads.items():
                if cfg.optimizer == "sgd":
                    weights[name] = weights[name] - cfg.learning_rate * g
                else:
                    adam_m[name] = 0.9 * adam_m[name] + 0.1 * g
                    adam_v[name] = 0.999 * adam_v[name] + 0.001 * (g * g)
                    m_hat = adam_m[name] / (1.0 - 0.9 ** step)
                    v_hat = adam_v[name] / (1.0 - 0.999 ** step)
                    weights[name] = weights[name] - cfg.learning_rate * m_hat / (
                        np.sqrt(v_hat) + 1e-8)

    metadata = {
        "arch": arch,
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "optimizer": cfg.optimizer,
        "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size,
        "train_accuracy": _accuracy(arch, weights, X[train_idx], y[train_idx],
                                    data.num_classes),
        "validation_accuracy": _accuracy(arch, weights, X[val_idx], y[val_idx],
                                         data.num_classes),
    }
    if arch == MLP1:
        metadata["hidden_width"] = hidden_width
    if adversarial is not None:
        metadata["adversarial_training"] = {
            "epsilon": adversarial.epsilon,
            "step_size": adversarial.step_size,
            "iterations": adversarial.iterations,
        }
    return Classifier(arch=arch, weights=weights, num_classes=data.num_classes,
                      input_shape=data.image_shape, metadata=metadata)


def pgd_adversarial_training(arch: str, data: Dataset, cfg: TrainConfig,
                             attack_cfg: AdversarialTrainingConfig, *,
                             hidden_width: int = 64) -> Classifier:
    """Robust-optimization baseline: gradient ascent on inputs, descent on weights."""
    return train(arch, data, cfg, hidden_width=hidden_width, adversarial=attack_cfg)


# ---------------------------------------------------------------------------
# Weak defenses
# ---------------------------------------------------------------------------


def train_weak_defense(t: Transform, data: Dataset, arch: str, cfg: TrainConfig,
                       *, hidden_width: int = 64, wd_id: str | None = None) -> WeakDefense:
    transformed = Dataset(
        images=tuple(apply(t, im) for im in data.images),
        labels=data.labels,
        num_classes=data.num_classes,
    )
    classifier = train(arch, transformed, cfg, hidden_width=hidden_width)
    return WeakDefense(transform=t, classifier=classifier,
                       id=wd_id if wd_id is not None else transform_label(t))


def wd_predict(wd: WeakDefense, x: Image) -> Prediction:
    """Weak-defense inference: classifier(transform(x))."""
    return predict(wd.classifier, apply(wd.transform, x))


def wd_predict_label_batch(wd: WeakDefense, images: Sequence[Image]) -> np.ndarray:
    X = np.stack([apply(wd.transform, im).data for im in images])
    return predict_label_batch(wd.classifier, X)


def wd_label_predictor(wd: WeakDefense) -> Callable[[Sequence[Image]], np.ndarray]:
    def handle(images: Sequence[Image]) -> np.ndarray:
        return wd_predict_label_batch(wd, images)
    return handle


# ---------------------------------------------------------------------------
# Randomized smoothing (empirical prediction rule only)
# ---------------------------------------------------------------------------


def randomized_smoothing_predict(c, x: Image, sigma: float, n: int, alpha: float,
                                 rng: np.random.Generator) -> int:
    """Noisy-vote prediction: draw n Gaussian-perturbed copies, take the top
    label if a two-sided binomial test separates it from the runner-up at
    level alpha, otherwise ABSTAIN.

    ``c`` may be a Classifier or any callable mapping an (n, D) batch to labels.
    """
    if n < 10:
        raise ArgumentError("randomized smoothing needs n >= 10 samples")
    if sigma < 0:
        raise ArgumentError("sigma must be nonnegative")
    noisy = np.clip(x.data[None, :] + rng.normal(0.0, sigma, size=(n, x.data.size)),
                    0.0, 1.0)
    labels = c(noisy) if callable(c) else predict_label_batch(c, noisy)
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=2)
    order = np.argsort(-counts, kind="stable")
    top, runner = int(order[0]), int(order[1])
    p = binomtest(int(counts[top]), int(counts[top] + counts[runner]), 0.5).pvalue
    return top if p <= alpha else ABSTAIN


# ---------------------------------------------------------------------------
# Persistence: "ATHM" binary weights + JSON sidecar with training metadata.
# Layout (little-endian): magic, u32 version, arch tag, num_classes,
# input shape (3 x u32), then each named f64 array.
# ---------------------------------------------------------------------------


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save_classifier(c: Classifier, path: str | Path) -> None:
    path = Path(path)
    with open(path, "wb") as f:
        f.write(ATHM_MAGIC)
        f.write(struct.pack("<I", 1))
        f.write(_pack_str(c.arch))
        f.write(struct.pack("<4I", c.num_classes, *c.input_shape))
        f.write(struct.pack("<I", len(c.weights)))
        for name in sorted(c.weights):
            arr = c.weights[name]
            f.write(_pack_str(name))
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(dict(c.metadata), indent=2, sort_keys=True, default=float)
    )


class _Reader:
    def __init__(self, buf: bytes, path: str):
        self.buf, self.off, self.path = buf, 0, path

    def take(self, count: int) -> bytes:
        if self.off + count > len(self.buf):
            raise TruncatedFileError(f"{self.path}: truncated at offset {self.off}")
        out = self.buf[self.off:self.off + count]
        self.off += count
        return out

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals

    def text(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def load_classifier(path: str | Path) -> Classifier:
    path = Path(path)
    r = _Reader(path.read_bytes(), str(path))
    if r.take(4) != ATHM_MAGIC:
        raise FileFormatError(f"{path}: not an ATHM model file")
    if r.u32() != 1:
        raise FileFormatError(f"{path}: unsupported ATHM version")
    arch = r.text()
    num_classes, h, w, c = r.u32(4)
    weights = {}
    for _ in range(r.u32()):
        name = r.text()
        ndim = r.u32()
        shape = r.u32(ndim)
        shape = (shape,) if ndim == 1 else shape
        count = int(np.prod(shape))
        weights[name] = np.frombuffer(r.take(8 * count), dtype=np.float64).reshape(shape)
    sidecar = path.with_suffix(path.suffix + ".json")
    metadata = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return Classifier(arch=arch, weights=weights, num_classes=num_classes,
                      input_shape=(h, w, c), metadata=metadata)


def save_weak_defense(wd: WeakDefense, path: str | Path) -> None:
    path = Path(path)
    meta = dict(wd.classifier.metadata)
    meta["weak_defense"] = {"id": wd.id, "transform": transform_to_dict(wd.transform)}
    save_classifier(replace(wd.classifier, metadata=meta), path)


def load_weak_defense(path: str | Path) -> WeakDefense:
    classifier = load_classifier(path)
    info = classifier.metadata.get("weak_defense")
    if not info:
        raise FileFormatError(f"{path}: sidecar lacks weak-defense metadata")
    return WeakDefense(transform=transform_from_dict(info["transform"]),
                       classifier=classifier, id=info["id"])


def classifier_fingerprint(c: Classifier) -> str:
    """Content hash of the architecture and weights, for cache keys."""
    digest = hashlib.sha256()
    digest.update(c.arch.encode())
    digest.update(struct.pack("<4I", c.num_classes, *c.input_shape))
    for name in sorted(c.weights):
        digest.update(name.encode())
        digest.update(c.weights[name].tobytes())
    return digest.hexdigest()

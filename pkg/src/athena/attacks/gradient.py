"""Gradient-based evasion attacks against a single differentiable classifier.

All attacks are untargeted, operate on one sample at a time, keep every
iterate inside the perturbation ball intersected with [0, 1], and are
deterministic given their seed. Each returns the adversarial image; pass
``return_info=True`` to also get iteration/early-stop bookkeeping.
"""

from __future__ import annotations

import numpy as np

from ..core import Image, L2, LINF
from ..errors import ArgumentError
from ..models import (
    Classifier,
    logits_input_jacobian,
    loss_input_gradient,
    predict,
)


def _as_image(like: Image, flat: np.ndarray) -> Image:
    return Image(like.height, like.width, like.channels, flat)


def _grad(c: Classifier, like: Image, flat: np.ndarray, y: int) -> np.ndarray:
    return loss_input_gradient(c, _as_image(like, flat), y)


def _maybe(info_wanted: bool, image: Image, info: dict):
    return (image, info) if info_wanted else image


def start_rng(seed: int) -> np.random.Generator:
    """RNG used for the random start of projected-gradient attacks. Shared so
    an expectation-over-transformation run seeded identically reproduces the
    same trajectory bit-for-bit."""
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0]))


def uniform_ball_start(x_flat: np.ndarray, eps: float,
                       rng: np.random.Generator) -> np.ndarray:
    return np.clip(x_flat + rng.uniform(-eps, eps, size=x_flat.shape), 0.0, 1.0)


def linf_project_step(adv: np.ndarray, grad: np.ndarray, alpha: float,
                      x_flat: np.ndarray, eps: float) -> np.ndarray:
    stepped = adv + alpha * np.sign(grad)
    stepped = np.clip(stepped, x_flat - eps, x_flat + eps)
    return np.clip(stepped, 0.0, 1.0)


def fgsm(c: Classifier, x: Image, y: int, eps: float) -> Image:
    """One-shot sign-gradient step of magnitude eps (linf)."""
    if eps < 0:
        raise ArgumentError("eps must be nonnegative")
    grad = loss_input_gradient(c, x, y)
    return _as_image(x, np.clip(x.data + eps * np.sign(grad), 0.0, 1.0))


def bim(c: Classifier, x: Image, y: int, eps: float, alpha: float,
        iterations: int, norm: str = LINF, *, start: np.ndarray | None = None,
        return_info: bool = False):
    """Iterated small steps, each projected back into the eps-ball around x."""
    if alpha <= 0:
        raise ArgumentError("step size alpha must be positive")
    if iterations < 1:
        raise ArgumentError("need at least one iteration")
    if norm not in (L2, LINF):
        raise ArgumentError(f"unsupported norm {norm!r}")
    adv = x.data.copy() if start is None else start.copy()
    info = {"iterations": 0, "early_stop": None}
    for _ in range(iterations):
        grad = _grad(c, x, adv, y)
        if not np.any(grad):
            info["early_stop"] = "zero_gradient"
            break
        if norm == LINF:
            adv = linf_project_step(adv, grad, alpha, x.data, eps)
        else:
            delta = adv + alpha * grad / float(np.linalg.norm(grad)) - x.data
            dnorm = float(np.linalg.norm(delta))
            if dnorm > eps and dnorm > 0.0:
                delta *= eps / dnorm
            adv = np.clip(x.data + delta, 0.0, 1.0)
        info["iterations"] += 1
    return _maybe(return_info, _as_image(x, adv), info)


def pgd(c: Classifier, x: Image, y: int, eps: float, alpha: float,
        iterations: int, norm: str = LINF, seed: int = 0, *,
        return_info: bool = False):
    """BIM preceded by a seeded uniform random start inside the eps-ball."""
    rng = start_rng(seed)
    start = uniform_ball_start(x.data, eps, rng)
    if norm == L2:
        delta = start - x.data
        dnorm = float(np.linalg.norm(delta))
        if dnorm > eps and dnorm > 0.0:
            start = np.clip(x.data + delta * (eps / dnorm), 0.0, 1.0)
    return bim(c, x, y, eps, alpha, iterations, norm, start=start,
               return_info=return_info)


def mim(c: Classifier, x: Image, y: int, eps: float, alpha: float,
        iterations: int, decay: float = 1.0, *, return_info: bool = False):
    """Momentum iterative method: accumulate l1-normalized gradients, step by
    the sign of the accumulator, clip to the linf ball."""
    if decay < 0:
        raise ArgumentError("momentum decay must be nonnegative")
    adv = x.data.copy()
    momentum = np.zeros_like(adv)
    info = {"iterations": 0, "early_stop": None}
    for _ in range(iterations):
        grad = _grad(c, x, adv, y)
        l1 = float(np.abs(grad).sum())
        if l1 == 0.0:
            info["early_stop"] = "zero_gradient"
            break
        momentum = decay * momentum + grad / l1
        adv = linf_project_step(adv, momentum, alpha, x.data, eps)
        info["iterations"] += 1
    return _maybe(return_info, _as_image(x, adv), info)


def _saliency_scores(jac: np.ndarray, target: int, theta: float,
                     modified: np.ndarray) -> np.ndarray:
    s_t = jac[:, target]
    s_o = jac.sum(axis=1) - s_t
    if theta > 0:
        feasible = (s_t > 0) & (s_o < 0)
    else:
        feasible = (s_t < 0) & (s_o > 0)
    scores = np.where(feasible & ~modified, np.abs(s_t) * np.abs(s_o), 0.0)
    return scores


def jsma(c: Classifier, x: Image, y: int, theta: float, gamma: float, *,
         return_info: bool = False):
    """Greedy per-pixel saliency attack, untargeted via the runner-up class.

    Each round perturbs the unmodified pixel with the largest saliency by
    theta (clamped), stopping on misclassification or once floor(gamma * D)
    pixels have been touched.
    """
    if not 0 < gamma <= 1:
        raise ArgumentError("gamma must lie in (0, 1]")
    if theta == 0:
        raise ArgumentError("theta must be nonzero")
    budget = int(np.floor(gamma * x.data.size))
    adv = x.data.copy()
    modified = np.zeros(x.data.size, dtype=bool)
    first = predict(c, x)
    order = np.argsort(-first.probs, kind="stable")
    target = int(order[1]) if int(order[0]) == y else int(order[0])
    info = {"pixels_changed": 0, "success": False, "early_stop": None}
    while info["pixels_changed"] < budget:
        logits, jac = logits_input_jacobian(c, _as_image(x, adv))
        if int(np.argmax(logits)) != y:
            info["success"] = True
            break
        scores = _saliency_scores(jac, target, theta, modified)
        if not np.any(scores > 0):
            info["early_stop"] = "zero_saliency"
            break
        pixel = int(np.argmax(scores))
        adv[pixel] = float(np.clip(adv[pixel] + theta, 0.0, 1.0))
        modified[pixel] = True
        info["pixels_changed"] += 1
    logits, _ = logits_input_jacobian(c, _as_image(x, adv))
    info["success"] = bool(int(np.argmax(logits)) != y)
    return _maybe(return_info, _as_image(x, adv), info)


def deepfool(c: Classifier, x: Image, overshoot: float = 0.02,
             max_iterations: int = 50, y: int | None = None, *,
             return_info: bool = False):
    """l2 DeepFool: step to the nearest linearized class boundary until the
    label flips, then scale the total perturbation by (1 + overshoot)."""
    if overshoot < 0:
        raise ArgumentError("overshoot must be nonnegative")
    origin = predict(c, x).label
    info = {"iterations": 0, "flipped": False, "degenerate": False}
    if y is not None and origin != y:
        info["flipped"] = True
        return _maybe(return_info, x, info)
    total = np.zeros_like(x.data)
    for _ in range(max_iterations):
        logits, jac = logits_input_jacobian(c, _as_image(x, np.clip(
            x.data + total, 0.0, 1.0)))
        if int(np.argmax(logits)) != origin:
            break
        best_step = None
        best_dist = np.inf
        for k in range(c.num_classes):
            if k == origin:
                continue
            w = jac[:, k] - jac[:, origin]
            f = logits[k] - logits[origin]
            wnorm = float(np.linalg.norm(w))
            if wnorm < 1e-12:
                continue
            dist = abs(f) / wnorm
            if dist < best_dist:
                best_dist = dist
                best_step = (abs(f) + 1e-6) / (wnorm * wnorm) * w
        if best_step is None:
            info["degenerate"] = True
            break
        total += best_step
        info["iterations"] += 1
    out = np.clip(x.data + (1.0 + overshoot) * total, 0.0, 1.0)
    final = _as_image(x, out)
    info["flipped"] = bool(predict(c, final).label != origin)
    return _maybe(return_info, final, info)


def _atanh_space(x_flat: np.ndarray) -> np.ndarray:
    squeezed = np.clip(x_flat * 2.0 - 1.0, -1.0, 1.0) * 0.999999
    return np.arctanh(squeezed)


def cw_l2(c: Classifier, x: Image, y: int, learning_rate: float,
          binary_search_steps: int, iterations: int, confidence: float = 0.0,
          initial_const: float = 1.0, *, return_info: bool = False):
    """Tanh-space l2 attack: minimize ||x' - x||^2 + const * hinge(logits),
    with an outer binary search over const keeping the closest success."""
    if learning_rate <= 0 or binary_search_steps < 1 or iterations < 1:
        raise ArgumentError("cw_l2 parameters must be positive")
    w_init = _atanh_space(x.data)
    best_adv = None
    best_dist = np.inf
    const = float(initial_const)
    lo, hi = 0.0, np.inf
    info = {"success": False, "best_distance": None, "const_schedule": []}
    for _ in range(binary_search_steps):
        w = w_init.copy()
        succeeded = False
        for _ in range(iterations):
            adv = (np.tanh(w) + 1.0) / 2.0
            delta = adv - x.data
            logits, jac = logits_input_jacobian(c, _as_image(x, adv))
            others = np.delete(logits, y)
            runner = float(others.max())
            hinge = logits[y] - runner + confidence
            objective = float(delta @ delta) + const * max(hinge, 0.0)
            if not np.isfinite(objective):
                info["early_stop"] = "non_finite_objective"
                return _maybe(return_info, x, info)
            if hinge <= 0.0:
                succeeded = True
                dist = float(np.linalg.norm(delta))
                if dist < best_dist:
                    best_dist = dist
                    best_adv = adv.copy()
            grad_x = 2.0 * delta
            if hinge > 0.0:
                others_idx = [k for k in range(c.num_classes) if k != y]
                j_star = others_idx[int(np.argmax(logits[others_idx]))]
                grad_x = grad_x + const * (jac[:, y] - jac[:, j_star])
            grad_w = grad_x * (1.0 - np.tanh(w) ** 2) / 2.0
            w = w - learning_rate * grad_w
        info["const_schedule"].append(const)
        if succeeded:
            hi = const
            const = (lo + hi) / 2.0
        else:
            lo = const
            const = const * 10.0 if np.isinf(hi) else (lo + hi) / 2.0
    if best_adv is None:
        return _maybe(return_info, x, info)
    info["success"] = True
    info["best_distance"] = best_dist
    return _maybe(return_info, _as_image(x, best_adv), info)

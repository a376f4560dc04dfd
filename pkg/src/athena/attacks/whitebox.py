"""Attacks that target the ensemble itself: greedy perturbation aggregation
over weak defenses (white-box) and the ensemble expectation-over-
transformation attack (gray-box with K known members, white-box when K = N).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import Image, normalized_l2_dissimilarity
from ..ensemble import WeakDefenseRegistry
from ..errors import ArgumentError, ConfigError
from ..models import WeakDefense, loss_input_gradient, predict, wd_predict
from ..transforms import (
    TransformDistribution,
    adjoint_apply,
    apply,
    is_adjointable,
    sample,
)
from .config import AttackConfig
from .gradient import linf_project_step, start_rng, uniform_ball_start

_GRADIENT_METHODS = ("fgsm", "bim", "pgd", "mim")


def wd_loss_gradient(wd: WeakDefense, x: Image, y: int) -> np.ndarray:
    """Gradient of a weak defense's loss w.r.t. the raw input.

    Exact adjoint pull-back for linear transforms; straight-through
    approximation (gradient taken at the transformed point) otherwise.
    """
    tx = apply(wd.transform, x)
    grad = loss_input_gradient(wd.classifier, tx, y)
    if is_adjointable(wd.transform):
        grid = grad.reshape(x.height, x.width, x.channels)
        return adjoint_apply(wd.transform, grid).ravel()
    return grad


def _per_step_adversarial(wd: WeakDefense, x: Image, y: int, cfg: AttackConfig,
                          rng: np.random.Generator) -> Image:
    """Run the configured gradient attack against one weak defense,
    starting from the current aggregate sample."""
    p = cfg.params
    method = cfg.method
    eps = float(p["eps"])
    if method == "fgsm":
        grad = wd_loss_gradient(wd, x, y)
        return Image(x.height, x.width, x.channels,
                     np.clip(x.data + eps * np.sign(grad), 0.0, 1.0))
    alpha = float(p.get("alpha", eps / 10.0))
    iterations = int(p.get("iterations", 10))
    adv = x.data.copy()
    if method == "pgd":
        adv = uniform_ball_start(adv, eps, rng)
    momentum = np.zeros_like(adv)
    for _ in range(iterations):
        grad = wd_loss_gradient(wd, Image(x.height, x.width, x.channels, adv), y)
        if method == "mim":
            l1 = float(np.abs(grad).sum())
            if l1 == 0.0:
                break
            momentum = float(p.get("decay", 1.0)) * momentum + grad / l1
            grad = momentum
        elif not np.any(grad):
            break
        adv = linf_project_step(adv, grad, alpha, x.data, eps)
    return Image(x.height, x.width, x.channels, adv)


@dataclass
class GreedyResult:
    adversarial: Image
    fooled_ids: set[str]
    iterations: int
    dissimilarity: float
    stopped_by: str = "fooled_enough"


def greedy_ensemble_attack(registry: WeakDefenseRegistry, members: list[str],
                           x: Image, y: int, per_step_attack: AttackConfig,
                           n_target: int, max_dissimilarity: float, seed: int = 0,
                           *, max_iterations: int = 1000) -> GreedyResult:
    """Accumulate per-weak-defense perturbations until ``n_target`` members are
    fooled, rejecting any step that pushes the normalized l2 dissimilarity
    past the cap (the loop stops at the first violation).

    A candidate weak defense is picked uniformly at random each round; fooled
    members are retired from the candidate pool and never re-tested.
    """
    if per_step_attack.method not in _GRADIENT_METHODS:
        raise ConfigError("greedy attack needs a gradient-based per-step attack")
    if n_target > len(members):
        raise ArgumentError("n_target exceeds member count")
    if max_dissimilarity < 0:
        raise ArgumentError("max_dissimilarity must be nonnegative")
    rng = np.random.default_rng(seed)
    candidates = list(members)
    fooled: set[str] = set()
    current = x
    iterations = 0
    stopped_by = "fooled_enough"
    while len(fooled) < n_target:
        if iterations >= max_iterations:
            stopped_by = "iteration_cap"
            break
        if not candidates:
            stopped_by = "no_candidates"
            break
        target_wd = registry.get(candidates[int(rng.integers(len(candidates)))])
        tentative = _per_step_adversarial(target_wd, current, y, per_step_attack, rng)
        if normalized_l2_dissimilarity([x], [tentative]) > max_dissimilarity:
            stopped_by = "dissimilarity_cap"
            break
        if np.array_equal(tentative.data, current.data):
            stopped_by = "stalled"
            break
        for wd_id in list(candidates):
            if wd_predict(registry.get(wd_id), tentative).label != y:
                fooled.add(wd_id)
                candidates.remove(wd_id)
        current = tentative
        iterations += 1
    return GreedyResult(
        adversarial=current,
        fooled_ids=fooled,
        iterations=iterations,
        dissimilarity=normalized_l2_dissimilarity([x], [current]),
        stopped_by=stopped_by,
    )


def eot_ensemble_attack(registry: WeakDefenseRegistry, known_members: list[str],
                        x: Image, y: int, dist: TransformDistribution,
                        samples_per_wd: int, eps: float, alpha: float,
                        iterations: int, seed: int = 0, *,
                        return_info: bool = False):
    """Projected-gradient ascent on the mean (over known members and sampled
    transforms) of the true-label loss, pulling gradients back through each
    sampled transform by its exact adjoint.

    With one known member and a point-mass identity distribution this reduces
    to the PGD trajectory for the same seed, bit for bit.
    """
    if not known_members:
        raise ArgumentError("need at least one known member")
    if samples_per_wd < 1 or iterations < 1:
        raise ArgumentError("samples_per_wd and iterations must be >= 1")
    for comp in dist.components:
        if comp.kind not in ("rotate", "shift", "flip_h", "flip_v", "flip_both",
                             "noise_gaussian"):
            raise ConfigError(
                f"distribution component {comp.kind!r} is not adjoint-able")
    wds = [registry.get(mid) for mid in known_members]
    rng_start = start_rng(seed)
    rng_transforms = np.random.default_rng(
        np.random.SeedSequence([seed & 0xFFFFFFFF, 1]))

    adv = uniform_ball_start(x.data, eps, rng_start)
    count = len(wds) * samples_per_wd
    for _ in range(iterations):
        adv_img = Image(x.height, x.width, x.channels, adv)
        total = np.zeros(x.data.size)
        for wd in wds:
            for _ in range(samples_per_wd):
                t = sample(dist, rng_transforms)
                z_img = apply(t, adv_img)
                u_img = apply(wd.transform, z_img)
                grad = loss_input_gradient(wd.classifier, u_img, y)
                grid = grad.reshape(x.height, x.width, x.channels)
                if is_adjointable(wd.transform):
                    grid = adjoint_apply(wd.transform, grid)
                grid = adjoint_apply(t, grid)
                total += grid.ravel()
        mean_grad = total / count
        adv = linf_project_step(adv, mean_grad, alpha, x.data, eps)
    out = Image(x.height, x.width, x.channels, adv)
    info = {"iterations": iterations, "known_members": len(wds),
            "samples_per_wd": samples_per_wd}
    return (out, info) if return_info else out

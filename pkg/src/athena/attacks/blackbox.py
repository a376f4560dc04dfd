"""Black-box attacks: the one-pixel differential-evolution attack (score
oracle), the HopSkipJump decision-based attack (label oracle with a hard
query budget), and substitute-model training for transfer attacks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..core import Dataset, Image, L2, LINF
from ..errors import ArgumentError
from ..models import Classifier, TrainConfig, probs_batch, train

# DE/rand/1/bin constants; population and iteration counts come from config.
DE_DIFFERENTIAL_WEIGHT = 0.5
DE_CROSSOVER_RATE = 0.7

# HopSkipJump inner constants: initial gradient batch, batch growth with
# sqrt(iteration), and the normalized binary-search threshold.
HSJA_INIT_GRAD_BATCH = 100
HSJA_BINARY_SEARCH_TOL = 1e-3
HSJA_INIT_BUDGET_FRACTION = 0.1


def _apply_pixels(x: Image, candidate: np.ndarray, pixel_count: int) -> np.ndarray:
    grid = x.grid().copy()
    h, w = x.height, x.width
    for p in range(pixel_count):
        r = int(np.clip(np.rint(candidate[3 * p]), 0, h - 1))
        c = int(np.clip(np.rint(candidate[3 * p + 1]), 0, w - 1))
        v = float(np.clip(candidate[3 * p + 2], 0.0, 1.0))
        grid[r, c, :] = v
    return grid.ravel()


def one_pixel(model, x: Image, y: int, pixel_count: int, population_size: int,
              iterations: int, seed: int = 0, *, return_info: bool = False):
    """Differential evolution over (row, col, value) triples, minimizing the
    true-class probability. Uses only the probability oracle; no gradients.

    ``model`` may be a Classifier or a callable mapping an (N, D) batch to an
    (N, K) probability matrix.
    """
    if pixel_count < 1 or population_size < 4 or iterations < 1:
        raise ArgumentError("one_pixel needs pixel_count >= 1, population >= 4")
    probs_fn = model if callable(model) else (lambda X: probs_batch(model, X))
    rng = np.random.default_rng(seed)
    dim = 3 * pixel_count
    lows = np.tile([0.0, 0.0, 0.0], pixel_count)
    highs = np.tile([x.height - 1.0, x.width - 1.0, 1.0], pixel_count)

    population = rng.uniform(lows, highs, size=(population_size, dim))

    def fitness_of(batch: np.ndarray) -> np.ndarray:
        flats = np.stack([_apply_pixels(x, cand, pixel_count) for cand in batch])
        return probs_fn(flats)[:, y]

    fitness = fitness_of(population)
    initial_best = float(fitness.min())
    evaluations = population_size
    for _ in range(iterations):
        trials = np.empty_like(population)
        for i in range(population_size):
            choices = [j for j in range(population_size) if j != i]
            r1, r2, r3 = rng.choice(choices, size=3, replace=False)
            mutant = population[r1] + DE_DIFFERENTIAL_WEIGHT * (
                population[r2] - population[r3])
            mutant = np.clip(mutant, lows, highs)
            cross = rng.random(dim) < DE_CROSSOVER_RATE
            cross[int(rng.integers(dim))] = True
            trials[i] = np.where(cross, mutant, population[i])
        trial_fitness = fitness_of(trials)
        evaluations += population_size
        better = trial_fitness <= fitness
        population[better] = trials[better]
        fitness[better] = trial_fitness[better]
    best_idx = int(np.argmin(fitness))
    adv = Image(x.height, x.width, x.channels,
                _apply_pixels(x, population[best_idx], pixel_count))
    info = {
        "best_fitness": float(fitness[best_idx]),
        "initial_best_fitness": initial_best,
        "oracle_evaluations": evaluations,
    }
    return (adv, info) if return_info else adv


# ---------------------------------------------------------------------------
# HopSkipJump
# ---------------------------------------------------------------------------


class _QueryBudget:
    """Counts every oracle row; truncates batches so the budget is never exceeded."""

    def __init__(self, oracle, budget: int, benign_label: int):
        self.oracle = oracle
        self.budget = budget
        self.used = 0
        self.benign_label = benign_label

    @property
    def remaining(self) -> int:
        return self.budget - self.used

    def is_adversarial(self, X: np.ndarray) -> np.ndarray | None:
        """Query up to the remaining budget; None when nothing is left."""
        X = np.atleast_2d(X)
        allowed = min(len(X), self.remaining)
        if allowed == 0:
            return None
        X = X[:allowed]
        labels = np.asarray(self.oracle(X), dtype=np.int64)
        self.used += allowed
        return labels != self.benign_label


def _distance(a: np.ndarray, b: np.ndarray, norm: str) -> float:
    if norm == L2:
        return float(np.linalg.norm(a - b))
    return float(np.max(np.abs(a - b)))


def _project(x: np.ndarray, perturbed: np.ndarray, alpha: float, norm: str) -> np.ndarray:
    if norm == L2:
        return (1.0 - alpha) * x + alpha * perturbed
    dist = alpha
    return np.clip(perturbed, x - dist, x + dist)


@dataclass
class HsjaResult:
    adversarial: Image
    distance: float
    queries_used: int
    trace: list[tuple[int, float]] = field(default_factory=list)
    init_failed: bool = False


def _boundary_search(x: np.ndarray, adv: np.ndarray, norm: str,
                     qb: _QueryBudget) -> np.ndarray | None:
    """Binary search between x and a verified adversarial point."""
    if norm == L2:
        low, high = 0.0, 1.0
        tol = HSJA_BINARY_SEARCH_TOL
    else:
        low, high = 0.0, _distance(x, adv, LINF)
        tol = HSJA_BINARY_SEARCH_TOL * max(high, 1e-12)
    good = adv
    while high - low > tol:
        mid = (high + low) / 2.0
        candidate = _project(x, adv, mid, norm)
        verdict = qb.is_adversarial(candidate)
        if verdict is None:
            return good
        if verdict[0]:
            high = mid
            good = candidate
        else:
            low = mid
    return _project(x, adv, high, norm)


def hop_skip_jump(oracle, x: Image, y: int, norm: str, query_budget: int,
                  seed: int = 0, *, max_iterations: int = 64) -> HsjaResult:
    """Decision-based attack: random adversarial init, then alternating
    boundary binary search, Monte-Carlo gradient-direction estimation (batch
    grows with sqrt(iteration)), and geometric step-size search.

    The oracle maps an (N, D) batch in [0, 1] to predicted labels; a point is
    adversarial when its label differs from y. Every oracle row is counted
    and the reported query count never exceeds the budget.
    """
    if norm not in (L2, LINF):
        raise ArgumentError(f"unsupported norm {norm!r}")
    if query_budget < 100:
        raise ArgumentError("query budget must be at least 100")
    rng = np.random.default_rng(seed)
    qb = _QueryBudget(oracle, query_budget, y)
    d = x.data.size

    # initialization: random uniform images until one is adversarial
    init = None
    attempts = max(1, int(HSJA_INIT_BUDGET_FRACTION * query_budget))
    for _ in range(attempts):
        candidate = rng.uniform(0.0, 1.0, size=d)
        verdict = qb.is_adversarial(candidate)
        if verdict is None:
            break
        if verdict[0]:
            init = candidate
            break
    if init is None:
        return HsjaResult(adversarial=x, distance=np.inf,
                          queries_used=qb.used, init_failed=True)

    perturbed = _boundary_search(x.data, init, norm, qb)
    best = perturbed.copy()
    best_dist = _distance(x.data, perturbed, norm)
    trace = [(qb.used, best_dist)]

    for t in range(1, max_iterations + 1):
        dist = _distance(x.data, perturbed, norm)
        # gradient-direction estimation at the boundary point
        num_evals = min(int(HSJA_INIT_GRAD_BATCH * np.sqrt(t)), max(qb.remaining - 1, 0))
        if num_evals < 2:
            break
        if norm == L2:
            delta = dist / np.sqrt(d) if t > 1 else 0.1
            rv = rng.normal(size=(num_evals, d))
        else:
            delta = dist / np.sqrt(d) if t > 1 else 0.1
            rv = rng.uniform(-1.0, 1.0, size=(num_evals, d))
        rv /= np.linalg.norm(rv, axis=1, keepdims=True)
        candidates = np.clip(perturbed[None, :] + delta * rv, 0.0, 1.0)
        rv = (candidates - perturbed[None, :]) / delta
        verdict = qb.is_adversarial(candidates)
        if verdict is None:
            break
        fval = 2.0 * verdict.astype(np.float64) - 1.0
        if fval.mean() == 1.0:
            grad = rv[: len(fval)].mean(axis=0)
        elif fval.mean() == -1.0:
            grad = -rv[: len(fval)].mean(axis=0)
        else:
            fval -= fval.mean()
            grad = (fval[:, None] * rv[: len(fval)]).mean(axis=0)
        gnorm = float(np.linalg.norm(grad))
        if gnorm == 0.0:
            break
        update = np.sign(grad) if norm == LINF else grad / gnorm

        # geometric step-size search from the boundary point
        step = dist / np.sqrt(t)
        moved = None
        while step > 1e-10:
            candidate = np.clip(perturbed + step * update, 0.0, 1.0)
            verdict = qb.is_adversarial(candidate)
            if verdict is None:
                break
            if verdict[0]:
                moved = candidate
                break
            step /= 2.0
        if moved is None:
            if qb.remaining == 0:
                break
            continue

        projected = _boundary_search(x.data, moved, norm, qb)
        if projected is None:
            break
        perturbed = projected
        new_dist = _distance(x.data, perturbed, norm)
        if new_dist <= best_dist:
            best = perturbed.copy()
            best_dist = new_dist
            trace.append((qb.used, best_dist))
        if qb.remaining == 0:
            break

    return HsjaResult(
        adversarial=Image(x.height, x.width, x.channels, np.clip(best, 0.0, 1.0)),
        distance=best_dist,
        queries_used=qb.used,
        trace=trace,
    )


# ---------------------------------------------------------------------------
# Substitute-model training (transfer pipeline, steps 1-2)
# ---------------------------------------------------------------------------


def train_substitute(target, pool: Dataset, budget: int, arch: str,
                     cfg: TrainConfig, *, hidden_width: int = 64) -> Classifier:
    """Train a substitute that mimics ``target`` from `budget` queried labels.

    The queried set is balanced across the target's *predicted* classes
    (within one sample); labels come from the target, never from ground truth.
    """
    if budget < 1 or budget > len(pool):
        raise ArgumentError(f"budget {budget} outside [1, {len(pool)}]")
    predicted = np.asarray(target(list(pool.images)), dtype=np.int64)
    k = pool.num_classes
    base, extra = divmod(budget, k)
    quotas = [base + (1 if c < extra else 0) for c in range(k)]

    chosen: list[int] = []
    missing = 0
    for c in range(k):
        indices = np.flatnonzero(predicted == c)
        if len(indices) < quotas[c]:
            missing += quotas[c] - len(indices)
            if len(indices) == 0:
                warnings.warn(
                    f"target predicts no pool sample as class {c}; "
                    "substitute set will be unbalanced", stacklevel=2)
        chosen.extend(int(i) for i in indices[: quotas[c]])
    if missing:
        unused = [i for i in range(len(pool)) if i not in set(chosen)]
        chosen.extend(unused[:missing])

    data = Dataset(
        images=tuple(pool.images[i] for i in chosen),
        labels=tuple(int(predicted[i]) for i in chosen),
        num_classes=k,
    )
    substitute = train(arch, data, cfg, hidden_width=hidden_width)
    meta = dict(substitute.metadata)
    meta["substitute"] = {"budget": budget, "balanced_shortfall": missing}
    return Classifier(arch=substitute.arch, weights=substitute.weights,
                      num_classes=substitute.num_classes,
                      input_shape=substitute.input_shape, metadata=meta)

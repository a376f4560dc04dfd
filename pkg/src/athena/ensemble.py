"""Ensemble strategies over weak defenses, the correct-set diversity metric,
and random-ensemble construction.

Strategies: RD picks one member per input (seeded by sample index), MV takes
a plurality over member labels, T2MV gives each member two equally weighted
votes for its top-two labels, AVEP/AVEL take the argmax of the mean
probability / logit vector. All deterministic strategies break ties by the
highest summed member probability among the tied labels, then the lowest
class index, so their labels are invariant to member order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import Dataset, Image
from .errors import ArgumentError, RegistryError
from .models import (
    Prediction,
    WeakDefense,
    predict_label_batch,
    probs_batch,
    logits_batch,
    wd_predict,
)
from .transforms import apply, apply_array

RD = "RD"
MV = "MV"
T2MV = "T2MV"
AVEP = "AVEP"
AVEL = "AVEL"
STRATEGIES = (RD, MV, T2MV, AVEP, AVEL)

TIE_BREAK = "sum_prob_then_lowest_index"


class WeakDefenseRegistry:
    """Read-only-by-convention store of weak defenses keyed by id."""

    def __init__(self, wds: Sequence[WeakDefense] = ()):
        self._wds: dict[str, WeakDefense] = {}
        for wd in wds:
            self.add(wd)

    def add(self, wd: WeakDefense) -> None:
        if wd.id in self._wds:
            raise ArgumentError(f"duplicate weak-defense id {wd.id!r}")
        self._wds[wd.id] = wd

    def get(self, wd_id: str) -> WeakDefense:
        try:
            return self._wds[wd_id]
        except KeyError:
            raise RegistryError(f"unknown weak-defense id {wd_id!r}") from None

    def ids(self) -> list[str]:
        return list(self._wds)

    def __len__(self) -> int:
        return len(self._wds)

    def __iter__(self):
        return iter(self._wds.values())


@dataclass(frozen=True)
class EnsembleSpec:
    members: tuple[str, ...]
    strategy: str
    seed: int = 0
    tie_break: str = TIE_BREAK

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ArgumentError("ensemble needs at least one member")
        if len(set(members)) != len(members):
            raise ArgumentError("ensemble member ids must be unique")
        if self.strategy not in STRATEGIES:
            raise ArgumentError(f"unknown strategy {self.strategy!r}")
        if self.tie_break != TIE_BREAK:
            raise ArgumentError(f"unknown tie-break policy {self.tie_break!r}")
        object.__setattr__(self, "members", members)


@dataclass(frozen=True)
class EnsembleOutput:
    label: int
    per_member: tuple[Prediction, ...]
    strategy_trace: Mapping[str, object] = field(default_factory=dict)


def spec_to_dict(spec: EnsembleSpec) -> dict:
    return {"members": list(spec.members), "strategy": spec.strategy,
            "seed": spec.seed, "tie_break": spec.tie_break}


def spec_from_dict(d: Mapping) -> EnsembleSpec:
    return EnsembleSpec(members=tuple(d["members"]), strategy=d["strategy"],
                        seed=int(d.get("seed", 0)),
                        tie_break=d.get("tie_break", TIE_BREAK))


def spec_to_json(spec: EnsembleSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2, sort_keys=True)


def spec_from_json(text: str) -> EnsembleSpec:
    return spec_from_dict(json.loads(text))


def _tie_broken_argmax(scores: np.ndarray, sum_probs: np.ndarray) -> int:
    # highest score, then highest summed member probability, then lowest index
    best = np.flatnonzero(scores == scores.max())
    if len(best) > 1:
        sub = sum_probs[best]
        best = best[sub == sub.max()]
    return int(best[0])


def _rd_choice(spec: EnsembleSpec, sample_index: int, count: int) -> int:
    rng = np.random.default_rng(
        np.random.SeedSequence([spec.seed & 0xFFFFFFFF, int(sample_index)])
    )
    return int(rng.integers(count))


def aggregate_member_outputs(spec: EnsembleSpec, labels: np.ndarray,
                             probs: np.ndarray, logits: np.ndarray,
                             sample_index: int = 0) -> tuple[int, dict]:
    """Combine per-member (label, probs, logits) rows into the final label and
    a strategy trace. Exposed so overhead timing can isolate aggregation cost."""
    num_classes = probs.shape[1]
    sum_probs = probs.sum(axis=0)
    if spec.strategy == RD:
        chosen = _rd_choice(spec, sample_index, len(spec.members))
        return int(labels[chosen]), {"chosen_member": spec.members[chosen]}
    if spec.strategy == MV:
        votes = np.bincount(labels, minlength=num_classes).astype(np.float64)
        return _tie_broken_argmax(votes, sum_probs), {"votes": votes}
    if spec.strategy == T2MV:
        votes = np.zeros(num_classes)
        top2 = np.argsort(-probs, axis=1, kind="stable")[:, :2]
        for a, b in top2:
            votes[a] += 1.0
            votes[b] += 1.0
        return _tie_broken_argmax(votes, sum_probs), {"votes": votes}
    if spec.strategy == AVEP:
        mean_probs = probs.mean(axis=0)
        return _tie_broken_argmax(mean_probs, sum_probs), {"mean_probs": mean_probs}
    mean_logits = logits.mean(axis=0)
    return _tie_broken_argmax(mean_logits, sum_probs), {"mean_logits": mean_logits}


def ensemble_predict(spec: EnsembleSpec, registry: WeakDefenseRegistry, x: Image,
                     sample_index: int = 0) -> EnsembleOutput:
    """Collect every member's prediction and aggregate with the spec strategy."""
    preds = tuple(wd_predict(registry.get(mid), x) for mid in spec.members)
    labels = np.array([p.label for p in preds], dtype=np.int64)
    probs = np.stack([p.probs for p in preds])
    logits = np.stack([p.logits for p in preds])
    label, trace = aggregate_member_outputs(spec, labels, probs, logits, sample_index)
    return EnsembleOutput(label=label, per_member=preds, strategy_trace=trace)


def ensemble_label_batch(spec: EnsembleSpec, registry: WeakDefenseRegistry,
                         images: Sequence[Image], start_index: int = 0) -> np.ndarray:
    """Batch ensemble labels; sample i uses RD context index start_index + i."""
    if len(images) == 0:
        return np.zeros(0, dtype=np.int64)
    member_probs = []
    member_logits = []
    for mid in spec.members:
        wd = registry.get(mid)
        X = np.stack([apply(wd.transform, im).data for im in images])
        z = logits_batch(wd.classifier, X)
        member_logits.append(z)
        member_probs.append(probs_batch(wd.classifier, X))
    probs = np.stack(member_probs, axis=1)    # (N, M, K)
    logits = np.stack(member_logits, axis=1)  # (N, M, K)
    labels = np.argmax(logits, axis=2)        # (N, M)
    out = np.empty(len(images), dtype=np.int64)
    for i in range(len(images)):
        out[i], _ = aggregate_member_outputs(spec, labels[i], probs[i], logits[i], start_index + i)
    return out


def label_predictor(spec: EnsembleSpec, registry: WeakDefenseRegistry,
                    start_index: int = 0):
    """Adapter: ensemble -> predictor handle over image lists."""
    def handle(images: Sequence[Image]) -> np.ndarray:
        return ensemble_label_batch(spec, registry, images, start_index=start_index)
    return handle


def array_label_oracle(spec: EnsembleSpec, registry: WeakDefenseRegistry,
                       image_shape: tuple[int, int, int]):
    """Label-only oracle over raw (N, D) batches, for query-based attacks.

    RD is excluded: a query oracle must be deterministic for the distance
    bookkeeping to be meaningful.
    """
    if spec.strategy == RD:
        raise ArgumentError("query oracles require a deterministic strategy")
    h, w, c = image_shape

    def oracle(X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        n = X.shape[0]
        member_probs = []
        member_logits = []
        for mid in spec.members:
            wd = registry.get(mid)
            tx = np.stack([
                apply_array(wd.transform, X[i].reshape(h, w, c)).ravel()
                for i in range(n)
            ])
            member_logits.append(logits_batch(wd.classifier, tx))
            member_probs.append(probs_batch(wd.classifier, tx))
        probs = np.stack(member_probs, axis=1)
        logits = np.stack(member_logits, axis=1)
        labels = np.argmax(logits, axis=2)
        out = np.empty(n, dtype=np.int64)
        for i in range(n):
            out[i], _ = aggregate_member_outputs(spec, labels[i], probs[i], logits[i], 0)
        return out

    return oracle


def diversity(members: Sequence[WeakDefense], data: Dataset) -> int:
    """Correct-set diversity: (min_i |S_i|) - |intersection_i S_i|, where S_i is
    the set of samples member i classifies correctly. Always >= 0; zero for a
    single member or duplicated members.
    """
    if not members:
        raise ArgumentError("diversity needs at least one member")
    if len(data) == 0:
        raise ArgumentError("diversity needs a nonempty dataset")
    truth = data.label_array()
    correct_sizes = []
    intersection = np.ones(len(data), dtype=bool)
    for wd in members:
        X = np.stack([apply(wd.transform, im).data for im in data.images])
        correct = predict_label_batch(wd.classifier, X) == truth
        correct_sizes.append(int(correct.sum()))
        intersection &= correct
    return min(correct_sizes) - int(intersection.sum())


def build_random_ensemble(library: Sequence[str], n: int, strategy: str,
                          rng: np.random.Generator) -> EnsembleSpec:
    """Uniform sample of n member ids without replacement, deterministic in rng."""
    ids = list(library)
    if n < 1 or n > len(ids):
        raise ArgumentError(f"ensemble size {n} outside [1, {len(ids)}]")
    picked = [ids[i] for i in rng.permutation(len(ids))[:n]]
    return EnsembleSpec(members=tuple(picked), strategy=strategy,
                        seed=int(rng.integers(2**31 - 1)))

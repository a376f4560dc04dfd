import itertools

import numpy as np
import pytest

from athena.core import Dataset, Image
from athena.ensemble import (
    AVEL,
    AVEP,
    MV,
    RD,
    T2MV,
    EnsembleSpec,
    WeakDefenseRegistry,
    build_random_ensemble,
    diversity,
    ensemble_label_batch,
    ensemble_predict,
    spec_from_json,
    spec_to_json,
)
from athena.errors import ArgumentError, RegistryError
from athena.models import SOFTMAX_LINEAR, Classifier, WeakDefense
from athena.transforms import ROTATE, Transform

IDENTITY = Transform(ROTATE, {"angle": 0.0})


def flat_image(values):
    values = np.asarray(values, dtype=np.float64)
    return Image(1, values.size, 1, values)


def constant_member(wd_id, probs):
    """A weak defense whose output is a fixed probability vector."""
    probs = np.asarray(probs, dtype=np.float64)
    k = probs.size
    clf = Classifier(
        SOFTMAX_LINEAR,
        {"W": np.zeros((2, k)), "b": np.log(probs)},
        num_classes=k, input_shape=(1, 2, 1),
    )
    return WeakDefense(transform=IDENTITY, classifier=clf, id=wd_id)


def registry_of(*prob_rows):
    wds = [constant_member(f"m{i}", row) for i, row in enumerate(prob_rows)]
    return WeakDefenseRegistry(wds), tuple(w.id for w in wds)


X = flat_image([0.5, 0.5])


class TestStrategies:
    def test_unanimity_wins_under_every_strategy(self):
        registry, ids = registry_of([0.1, 0.8, 0.1], [0.2, 0.7, 0.1],
                                    [0.05, 0.9, 0.05])
        for strategy in (RD, MV, T2MV, AVEP, AVEL):
            spec = EnsembleSpec(members=ids, strategy=strategy, seed=5)
            assert ensemble_predict(spec, registry, X).label == 1, strategy

    def test_mv_plurality(self):
        registry, ids = registry_of([0.1, 0.8, 0.1], [0.2, 0.7, 0.1],
                                    [0.1, 0.2, 0.7])
        spec = EnsembleSpec(members=ids, strategy=MV)
        out = ensemble_predict(spec, registry, X)
        assert out.label == 1
        np.testing.assert_array_equal(out.strategy_trace["votes"], [0, 2, 1])

    def test_avep_mean_and_mv_tie_break_hand_computed(self):
        # members vote {0, 1}; tie broken by summed probs (0.7 vs 1.3)
        registry, ids = registry_of([0.6, 0.4], [0.1, 0.9])
        avep = ensemble_predict(EnsembleSpec(members=ids, strategy=AVEP),
                                registry, X)
        np.testing.assert_allclose(avep.strategy_trace["mean_probs"], [0.35, 0.65],
                                   atol=1e-12)
        assert avep.label == 1
        mv = ensemble_predict(EnsembleSpec(members=ids, strategy=MV), registry, X)
        assert mv.label == 1

    def test_t2mv_two_votes_per_member(self):
        # top-2 votes: m0 -> {0,1}, m1 -> {0,2}, m2 -> {0,2}: label 0 by plurality
        registry, ids = registry_of([0.5, 0.3, 0.2], [0.4, 0.1, 0.5],
                                    [0.45, 0.1, 0.45])
        out = ensemble_predict(EnsembleSpec(members=ids, strategy=T2MV), registry, X)
        np.testing.assert_array_equal(out.strategy_trace["votes"], [3, 1, 2])
        assert out.label == 0

    def test_per_member_length_matches(self):
        registry, ids = registry_of([0.9, 0.1], [0.8, 0.2], [0.7, 0.3])
        out = ensemble_predict(EnsembleSpec(members=ids, strategy=AVEL),
                               registry, X)
        assert len(out.per_member) == 3

    def test_unknown_member_rejected(self):
        registry, _ = registry_of([0.9, 0.1])
        spec = EnsembleSpec(members=("ghost",), strategy=MV)
        with pytest.raises(RegistryError):
            ensemble_predict(spec, registry, X)


class TestInvariances:
    def test_member_order_invariance(self):
        rng = np.random.default_rng(0)
        rows = [rng.dirichlet(np.ones(4)) for _ in range(3)]
        registry, ids = registry_of(*rows)
        for strategy in (MV, T2MV, AVEP, AVEL):
            labels = {
                ensemble_predict(
                    EnsembleSpec(members=perm, strategy=strategy), registry, X
                ).label
                for perm in itertools.permutations(ids)
            }
            assert len(labels) == 1, strategy

    def test_avel_constant_logit_shift_invariance(self):
        rows = [[0.5, 0.3, 0.2], [0.2, 0.5, 0.3]]
        registry, ids = registry_of(*rows)
        base = ensemble_predict(EnsembleSpec(members=ids, strategy=AVEL),
                                registry, X).label
        shifted = constant_member("m0", rows[0])
        bumped = Classifier(
            SOFTMAX_LINEAR,
            {"W": shifted.classifier.weights["W"],
             "b": shifted.classifier.weights["b"] + 7.5},
            num_classes=3, input_shape=(1, 2, 1))
        registry2 = WeakDefenseRegistry([
            WeakDefense(transform=IDENTITY, classifier=bumped, id="m0"),
            constant_member("m1", rows[1]),
        ])
        assert ensemble_predict(EnsembleSpec(members=ids, strategy=AVEL),
                                registry2, X).label == base

    def test_rd_deterministic_per_sample_index(self):
        registry, ids = registry_of([0.9, 0.1], [0.1, 0.9], [0.5, 0.5])
        spec = EnsembleSpec(members=ids, strategy=RD, seed=123)
        first = [ensemble_predict(spec, registry, X, sample_index=i).strategy_trace
                 for i in range(20)]
        second = [ensemble_predict(spec, registry, X, sample_index=i).strategy_trace
                  for i in range(20)]
        assert [t["chosen_member"] for t in first] == \
               [t["chosen_member"] for t in second]
        assert len({t["chosen_member"] for t in first}) > 1

    def test_batch_agrees_with_per_sample(self):
        registry, ids = registry_of([0.6, 0.4], [0.3, 0.7], [0.8, 0.2])
        for strategy in (RD, MV, T2MV, AVEP, AVEL):
            spec = EnsembleSpec(members=ids, strategy=strategy, seed=3)
            batch = ensemble_label_batch(spec, registry, [X, X, X], start_index=4)
            singles = [ensemble_predict(spec, registry, X, sample_index=4 + i).label
                       for i in range(3)]
            np.testing.assert_array_equal(batch, singles)


def indexed_dataset(n):
    # sample i carries a one-hot pixel at position i; all labels are zero
    images = []
    for i in range(n):
        row = np.zeros(n)
        row[i] = 1.0
        images.append(flat_image(row))
    return Dataset(images=tuple(images), labels=(0,) * n, num_classes=2)


def subset_member(wd_id, correct_indices, n):
    """Predicts class 0 exactly on the given sample indices, class 1 elsewhere."""
    W = np.zeros((n, 2))
    for i in range(n):
        W[i, 0 if i in correct_indices else 1] = 10.0
    clf = Classifier(SOFTMAX_LINEAR, {"W": W, "b": np.zeros(2)},
                     num_classes=2, input_shape=(1, n, 1))
    return WeakDefense(transform=IDENTITY, classifier=clf, id=wd_id)


class TestDiversity:
    def test_single_member_is_zero(self):
        data = indexed_dataset(5)
        wd = subset_member("a", {0, 1, 2}, 5)
        assert diversity([wd], data) == 0

    def test_constructed_sets_hand_enumerated(self):
        # S1 = {1,2,3}, S2 = {2,3,4}: min size 3, intersection 2 -> psi = 1
        data = indexed_dataset(5)
        w1 = subset_member("a", {1, 2, 3}, 5)
        w2 = subset_member("b", {2, 3, 4}, 5)
        assert diversity([w1, w2], data) == 1

    def test_duplicated_member_is_zero(self):
        data = indexed_dataset(5)
        wd = subset_member("a", {0, 2, 4}, 5)
        assert diversity([wd, wd], data) == 0

    def test_empty_dataset_rejected(self):
        wd = subset_member("a", {0}, 3)
        with pytest.raises(ArgumentError):
            diversity([wd], Dataset(images=(), labels=(), num_classes=2))

    def test_nonnegative_on_random_stubs(self):
        rng = np.random.default_rng(1)
        data = indexed_dataset(8)
        for _ in range(20):
            members = [
                subset_member(f"m{j}", set(map(int, rng.choice(8, size=4, replace=False))), 8)
                for j in range(3)
            ]
            assert diversity(members, data) >= 0


class TestBuildRandomEnsemble:
    IDS = ["a", "b", "c", "d", "e"]

    def test_full_size_uses_all_members(self):
        spec = build_random_ensemble(self.IDS, 5, AVEL, np.random.default_rng(2))
        assert sorted(spec.members) == self.IDS

    def test_same_seed_identical(self):
        a = build_random_ensemble(self.IDS, 3, MV, np.random.default_rng(3))
        b = build_random_ensemble(self.IDS, 3, MV, np.random.default_rng(3))
        assert a == b

    def test_oversized_rejected(self):
        with pytest.raises(ArgumentError):
            build_random_ensemble(self.IDS, 6, MV, np.random.default_rng(4))

    def test_pair_frequencies_near_uniform(self):
        rng = np.random.default_rng(5)
        counts = {}
        for _ in range(1000):
            spec = build_random_ensemble(self.IDS, 2, MV, rng)
            key = tuple(sorted(spec.members))
            counts[key] = counts.get(key, 0) + 1
        # 10 unordered pairs, expected 100 each, sigma = sqrt(1000 * .1 * .9)
        sigma = np.sqrt(1000 * 0.1 * 0.9)
        assert len(counts) == 10
        for c in counts.values():
            assert abs(c - 100) <= 3 * sigma


def test_spec_json_round_trip():
    spec = EnsembleSpec(members=("a", "b"), strategy=T2MV, seed=9)
    assert spec_from_json(spec_to_json(spec)) == spec


def test_duplicate_members_rejected():
    with pytest.raises(ArgumentError):
        EnsembleSpec(members=("a", "a"), strategy=MV)

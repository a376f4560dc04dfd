import math
import time

import numpy as np
import pytest

from athena.core import Dataset, Image, image_from_grid
from athena.datasets import synth_digits
from athena.errors import ArgumentError, TrainingError
from athena.models import (
    ABSTAIN,
    LINEAR_SVM,
    MLP1,
    SOFTMAX_LINEAR,
    AdversarialTrainingConfig,
    Classifier,
    TrainConfig,
    WeakDefense,
    classifier_fingerprint,
    label_predictor,
    load_classifier,
    load_weak_defense,
    loss_input_gradient,
    loss_input_gradient_batch,
    pgd_adversarial_training,
    predict,
    predict_label_batch,
    randomized_smoothing_predict,
    save_classifier,
    save_weak_defense,
    train,
    train_weak_defense,
    wd_predict,
)
from athena.transforms import FLIP_H, ROTATE, Transform, apply


def flat_image(values):
    values = np.asarray(values, dtype=np.float64)
    return Image(1, values.size, 1, values)


def separable_toy(n_per_class=20, seed=0):
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for _ in range(n_per_class):
        images.append(flat_image([rng.uniform(0.7, 1.0), rng.uniform(0.0, 0.3)]))
        labels.append(0)
        images.append(flat_image([rng.uniform(0.0, 0.3), rng.uniform(0.7, 1.0)]))
        labels.append(1)
    return Dataset(images=tuple(images), labels=tuple(labels), num_classes=2)


QUICK = TrainConfig(epochs=50, batch_size=8, seed=1, learning_rate=0.05)


class TestTrain:
    def test_separable_toy_reaches_full_accuracy(self):
        for arch in (SOFTMAX_LINEAR, MLP1, LINEAR_SVM):
            c = train(arch, separable_toy(), QUICK, hidden_width=8)
            assert c.metadata["train_accuracy"] == 1.0, arch

    def test_same_seed_identical_weights(self):
        data = separable_toy()
        a = train(MLP1, data, QUICK, hidden_width=8)
        b = train(MLP1, data, QUICK, hidden_width=8)
        for name in a.weights:
            np.testing.assert_array_equal(a.weights[name], b.weights[name])

    def test_divergence_raises_with_epoch(self):
        # the SVM weight regularizer overflows once weights reach ~1e200
        cfg = TrainConfig(optimizer="sgd", learning_rate=1e200, epochs=3,
                          batch_size=8, seed=0)
        with np.errstate(over="ignore"), pytest.raises(TrainingError) as err:
            train(LINEAR_SVM, separable_toy(), cfg)
        assert err.value.epoch is not None

    def test_records_validation_accuracy(self):
        c = train(SOFTMAX_LINEAR, separable_toy(), QUICK)
        assert 0.0 <= c.metadata["validation_accuracy"] <= 1.0


class TestPredict:
    def test_zero_weight_softmax_is_uniform(self):
        c = Classifier(SOFTMAX_LINEAR, {"W": np.zeros((4, 5)), "b": np.zeros(5)},
                       num_classes=5, input_shape=(1, 4, 1))
        p = predict(c, flat_image([0.1, 0.2, 0.3, 0.4]))
        np.testing.assert_allclose(p.probs, np.full(5, 0.2), atol=1e-15)

    def test_probs_normalized(self):
        rng = np.random.default_rng(2)
        c = Classifier(MLP1, {
            "W1": rng.normal(size=(6, 9)), "b1": rng.normal(size=9),
            "W2": rng.normal(size=(9, 4)), "b2": rng.normal(size=4),
        }, num_classes=4, input_shape=(1, 6, 1))
        for _ in range(20):
            p = predict(c, flat_image(rng.random(6)))
            assert abs(p.probs.sum() - 1.0) <= 1e-9

    def test_label_is_argmax_of_logits(self):
        rng = np.random.default_rng(3)
        c = Classifier(SOFTMAX_LINEAR,
                       {"W": rng.normal(size=(4, 6)), "b": rng.normal(size=6)},
                       num_classes=6, input_shape=(1, 4, 1))
        for _ in range(20):
            x = flat_image(rng.random(4))
            p = predict(c, x)
            assert p.label == max(range(6), key=lambda k: (p.logits[k], -k))

    def test_shape_mismatch_rejected(self):
        c = Classifier(SOFTMAX_LINEAR, {"W": np.zeros((4, 2)), "b": np.zeros(2)},
                       num_classes=2, input_shape=(1, 4, 1))
        with pytest.raises(ArgumentError):
            predict(c, flat_image([0.5, 0.5]))


def _test_loss(c: Classifier, x: np.ndarray, y: int) -> float:
    # independent loss implementations for the finite-difference oracle
    w = c.weights
    if c.arch == LINEAR_SVM:
        scores = x @ w["W"] + w["b"]
        total = 0.0
        for k in range(c.num_classes):
            t = 1.0 if k == y else -1.0
            total += max(0.0, 1.0 - t * scores[k])
        return total
    if c.arch == MLP1:
        hidden = np.maximum(x @ w["W1"] + w["b1"], 0.0)
        logits = hidden @ w["W2"] + w["b2"]
    else:
        logits = x @ w["W"] + w["b"]
    shifted = logits - logits.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[y])


def _finite_difference(c, x, y, h=1e-5):
    grad = np.zeros_like(x)
    for i in range(x.size):
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (_test_loss(c, up, y) - _test_loss(c, down, y)) / (2 * h)
    return grad


def _random_classifier(arch, rng, dim=12, num_classes=4):
    if arch == MLP1:
        weights = {
            "W1": rng.normal(scale=0.8, size=(dim, 10)), "b1": rng.normal(size=10),
            "W2": rng.normal(scale=0.8, size=(10, num_classes)),
            "b2": rng.normal(size=num_classes),
        }
    else:
        weights = {"W": rng.normal(scale=0.8, size=(dim, num_classes)),
                   "b": rng.normal(size=num_classes)}
    return Classifier(arch, weights, num_classes=num_classes, input_shape=(1, dim, 1))


class TestLossInputGradient:
    def test_softmax_linear_closed_form(self):
        rng = np.random.default_rng(4)
        c = _random_classifier(SOFTMAX_LINEAR, rng)
        x = flat_image(rng.random(12))
        logits = x.data @ c.weights["W"] + c.weights["b"]
        probs = np.exp(logits - logits.max())
        probs /= probs.sum()
        onehot = np.zeros(4)
        onehot[2] = 1.0
        expected = c.weights["W"] @ (probs - onehot)
        np.testing.assert_allclose(loss_input_gradient(c, x, 2), expected, atol=1e-12)

    def test_zero_gradient_at_exact_onehot(self):
        # a margin large enough that softmax saturates to an exact one-hot
        W = np.zeros((3, 2))
        W[0, 0] = 4000.0
        c = Classifier(SOFTMAX_LINEAR, {"W": W, "b": np.zeros(2)},
                       num_classes=2, input_shape=(1, 3, 1))
        g = loss_input_gradient(c, flat_image([1.0, 0.2, 0.2]), 0)
        np.testing.assert_array_equal(g, np.zeros(3))

    @pytest.mark.parametrize("arch", [SOFTMAX_LINEAR, MLP1, LINEAR_SVM])
    def test_matches_central_finite_differences(self, arch):
        rng = np.random.default_rng(5)
        worst = 0.0
        for case in range(20):
            c = _random_classifier(arch, rng)
            x = rng.random(12)
            y = int(rng.integers(4))
            analytic = loss_input_gradient(c, flat_image(x), y)
            numeric = _finite_difference(c, x, y)
            denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
            worst = max(worst, np.linalg.norm(analytic - numeric) / denom)
        assert worst <= 1e-4


@pytest.fixture(scope="module")
def digits():
    return synth_digits(seed=21, n=600)


class TestWeakDefense:
    def test_identity_like_transform_matches_plain_model(self, digits):
        cfg = TrainConfig(epochs=8, seed=3)
        um = train(MLP1, digits, cfg, hidden_width=32)
        wd = train_weak_defense(Transform(ROTATE, {"angle": 0.0}), digits, MLP1, cfg,
                                hidden_width=32)
        assert abs(um.metadata["validation_accuracy"]
                   - wd.classifier.metadata["validation_accuracy"]) <= 0.02

    def test_wd_training_is_deterministic(self, digits):
        cfg = TrainConfig(epochs=2, seed=4)
        t = Transform(FLIP_H)
        a = train_weak_defense(t, digits, SOFTMAX_LINEAR, cfg)
        b = train_weak_defense(t, digits, SOFTMAX_LINEAR, cfg)
        for name in a.classifier.weights:
            np.testing.assert_array_equal(a.classifier.weights[name],
                                          b.classifier.weights[name])

    def test_inference_routes_through_transform(self):
        # classifier reads the top-left pixel; flipping moves content there
        W = np.zeros((9, 2))
        W[0, 1] = 10.0
        W[0, 0] = -10.0
        clf = Classifier(SOFTMAX_LINEAR, {"W": W, "b": np.zeros(2)},
                         num_classes=2, input_shape=(3, 3, 1))
        wd = WeakDefense(transform=Transform(FLIP_H), classifier=clf, id="flip_h")
        grid = np.zeros((3, 3, 1))
        grid[0, 2, 0] = 1.0  # content lands on the read pixel only after a flip
        x = image_from_grid(grid)
        raw = predict(clf, x).label
        routed = wd_predict(wd, x).label
        assert routed == predict(clf, apply(Transform(FLIP_H), x)).label
        assert routed != raw


class TestAdversarialTraining:
    def test_zero_epsilon_matches_plain_training(self):
        data = separable_toy()
        cfg = TrainConfig(epochs=5, batch_size=8, seed=6)
        plain = train(MLP1, data, cfg, hidden_width=8)
        adt = pgd_adversarial_training(
            MLP1, data, cfg,
            AdversarialTrainingConfig(epsilon=0.0, step_size=0.01, iterations=3),
            hidden_width=8)
        for name in plain.weights:
            np.testing.assert_array_equal(plain.weights[name], adt.weights[name])

    def test_hardened_model_resists_sign_gradient_noise(self):
        digits = synth_digits(seed=22, n=800)
        cfg = TrainConfig(epochs=6, seed=7)
        plain = train(MLP1, digits, cfg, hidden_width=32)
        adt = pgd_adversarial_training(
            MLP1, digits, cfg,
            AdversarialTrainingConfig(epsilon=0.2, step_size=0.05, iterations=5),
            hidden_width=32)
        probe = synth_digits(seed=23, n=200)
        X, y = probe.stack(), probe.label_array()
        # independent one-shot sign-gradient perturbation crafted on each model
        def errors(model):
            grad = loss_input_gradient_batch(model, X, y)
            adv = np.clip(X + 0.2 * np.sign(grad), 0.0, 1.0)
            return float(np.mean(predict_label_batch(model, adv) != y))
        assert errors(adt) < errors(plain)

    def test_epoch_costs_more_than_plain(self):
        data = synth_digits(seed=24, n=600)
        cfg = TrainConfig(epochs=2, batch_size=64, seed=8)
        train(MLP1, data, cfg, hidden_width=32)  # warm-up
        start = time.perf_counter()
        train(MLP1, data, cfg, hidden_width=32)
        plain_s = time.perf_counter() - start
        start = time.perf_counter()
        pgd_adversarial_training(
            MLP1, data, cfg,
            AdversarialTrainingConfig(epsilon=0.1, step_size=0.02, iterations=7),
            hidden_width=32)
        adt_s = time.perf_counter() - start
        assert adt_s > plain_s

    def test_epsilon_recorded_in_metadata(self):
        c = pgd_adversarial_training(
            SOFTMAX_LINEAR, separable_toy(), TrainConfig(epochs=1, seed=9),
            AdversarialTrainingConfig(epsilon=0.15, step_size=0.02, iterations=2))
        assert c.metadata["adversarial_training"]["epsilon"] == 0.15


def _exact_two_sided_binomial_p(k, n):
    # brute-force two-sided p-value for p0 = 1/2
    p_obs = math.comb(n, k) / 2.0 ** n
    return sum(math.comb(n, i) / 2.0 ** n
               for i in range(n + 1)
               if math.comb(n, i) / 2.0 ** n <= p_obs * (1 + 1e-12))


class TestRandomizedSmoothing:
    def test_zero_sigma_never_abstains(self):
        rng = np.random.default_rng(10)
        c = _random_classifier(SOFTMAX_LINEAR, np.random.default_rng(0))
        x = flat_image(np.random.default_rng(1).random(12))
        label = randomized_smoothing_predict(c, x, sigma=0.0, n=100, alpha=0.05,
                                             rng=rng)
        assert label == predict(c, x).label

    def test_clear_majority_returns_top_label(self):
        votes = np.array([1] * 90 + [0] * 10)
        stub = lambda X: votes[: len(X)]
        out = randomized_smoothing_predict(stub, flat_image(np.full(12, 0.5)),
                                           sigma=0.1, n=100, alpha=0.05,
                                           rng=np.random.default_rng(11))
        assert out == 1
        assert _exact_two_sided_binomial_p(90, 100) <= 0.05

    def test_near_tie_abstains(self):
        votes = np.array([1] * 51 + [0] * 49)
        stub = lambda X: votes[: len(X)]
        out = randomized_smoothing_predict(stub, flat_image(np.full(12, 0.5)),
                                           sigma=0.1, n=100, alpha=0.05,
                                           rng=np.random.default_rng(12))
        assert out == ABSTAIN
        assert _exact_two_sided_binomial_p(51, 100) > 0.05

    def test_deterministic_given_rng_seed(self):
        c = _random_classifier(MLP1, np.random.default_rng(13))
        x = flat_image(np.random.default_rng(14).random(12))
        a = randomized_smoothing_predict(c, x, 0.25, 50, 0.05,
                                         np.random.default_rng(15))
        b = randomized_smoothing_predict(c, x, 0.25, 50, 0.05,
                                         np.random.default_rng(15))
        assert a == b

    def test_small_n_rejected(self):
        c = _random_classifier(SOFTMAX_LINEAR, np.random.default_rng(16))
        with pytest.raises(ArgumentError):
            randomized_smoothing_predict(c, flat_image(np.full(12, 0.5)),
                                         0.1, 9, 0.05, np.random.default_rng(17))


class TestPersistence:
    def test_classifier_round_trip_bit_exact(self, tmp_path):
        c = train(MLP1, separable_toy(), TrainConfig(epochs=2, seed=18),
                  hidden_width=8)
        path = tmp_path / "model.athm"
        save_classifier(c, path)
        back = load_classifier(path)
        assert back.arch == c.arch
        assert back.input_shape == c.input_shape
        for name in c.weights:
            np.testing.assert_array_equal(back.weights[name], c.weights[name])
        assert classifier_fingerprint(back) == classifier_fingerprint(c)
        assert back.metadata["seed"] == 18

    def test_weak_defense_round_trip(self, tmp_path):
        wd = train_weak_defense(Transform(FLIP_H), separable_toy(),
                                SOFTMAX_LINEAR, TrainConfig(epochs=2, seed=19))
        path = tmp_path / "wd.athm"
        save_weak_defense(wd, path)
        back = load_weak_defense(path)
        assert back.id == wd.id
        assert back.transform == wd.transform
        for name in wd.classifier.weights:
            np.testing.assert_array_equal(back.classifier.weights[name],
                                          wd.classifier.weights[name])

    def test_label_predictor_matches_predict(self):
        c = train(SOFTMAX_LINEAR, separable_toy(), TrainConfig(epochs=2, seed=20))
        handle = label_predictor(c)
        images = list(separable_toy().images[:6])
        np.testing.assert_array_equal(
            handle(images), [predict(c, im).label for im in images]
        )

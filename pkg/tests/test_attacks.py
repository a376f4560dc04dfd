import numpy as np
import pytest

from athena.attacks import (
    AttackConfig,
    bim,
    craft_set,
    cw_l2,
    deepfool,
    fgsm,
    hop_skip_jump,
    jsma,
    mim,
    one_pixel,
    pgd,
    run_attack,
    train_substitute,
    zero_knowledge_presets,
)
from athena.core import Dataset, Image, L2, LINF, normalized_l2_dissimilarity
from athena.datasets import synth_digits
from athena.errors import ArgumentError
from athena.models import (
    MLP1,
    SOFTMAX_LINEAR,
    Classifier,
    TrainConfig,
    loss_input_gradient,
    predict,
    predict_label_batch,
    train,
)


def flat_image(values):
    values = np.asarray(values, dtype=np.float64)
    return Image(1, values.size, 1, values)


def linear_model(W, b=None, input_shape=None):
    W = np.asarray(W, dtype=np.float64)
    b = np.zeros(W.shape[1]) if b is None else np.asarray(b, dtype=np.float64)
    shape = input_shape or (1, W.shape[0], 1)
    return Classifier(SOFTMAX_LINEAR, {"W": W, "b": b},
                      num_classes=W.shape[1], input_shape=shape)


@pytest.fixture(scope="module")
def desk():
    data = synth_digits(seed=31, n=1200)
    um = train(MLP1, data, TrainConfig(epochs=8, seed=5), hidden_width=48)
    probe = synth_digits(seed=32, n=120)
    return um, probe


class TestFgsm:
    def test_zero_epsilon_is_identity(self):
        c = linear_model(np.array([[1.0, -1.0], [0.5, 0.5]]))
        x = flat_image([0.4, 0.6])
        np.testing.assert_array_equal(fgsm(c, x, 0, 0.0).data, x.data)

    def test_perturbation_pattern_matches_closed_form(self):
        W = np.array([[1.2, -0.3], [-0.7, 0.9], [0.1, 0.2]])
        c = linear_model(W)
        x = flat_image([0.5, 0.5, 0.5])
        y = 0
        logits = x.data @ W
        p = np.exp(logits - logits.max())
        p /= p.sum()
        onehot = np.array([1.0, 0.0])
        expected_pattern = np.sign(W @ (p - onehot))
        adv = fgsm(c, x, y, 0.1)
        np.testing.assert_array_equal(np.sign(adv.data - x.data), expected_pattern)

    def test_loss_increases_along_sign_ray(self):
        W = np.array([[2.0, -1.0], [-1.5, 0.5], [0.3, -0.2], [0.0, 1.0]])
        c = linear_model(W)
        x = flat_image([0.5, 0.5, 0.5, 0.5])

        def ce_loss(img):
            z = img.data @ W
            z = z - z.max()
            return float(np.log(np.exp(z).sum()) - z[0])

        adv = fgsm(c, x, 0, 0.05)  # small enough that no clamping triggers
        assert not np.any((adv.data == 0.0) | (adv.data == 1.0))
        assert ce_loss(adv) >= ce_loss(x)


class TestBim:
    def test_single_full_step_equals_fgsm(self, desk):
        um, probe = desk
        x, y = probe.images[0], probe.labels[0]
        a = bim(um, x, y, eps=0.1, alpha=0.1, iterations=1)
        b = fgsm(um, x, y, 0.1)
        np.testing.assert_array_equal(a.data, b.data)

    @pytest.mark.parametrize("norm", [LINF, L2])
    def test_every_iterate_in_ball(self, desk, norm):
        um, probe = desk
        x, y = probe.images[1], probe.labels[1]
        eps = 0.3 if norm == LINF else 2.0
        for k in range(1, 6):  # the k-iteration run ends at the k-th iterate
            adv = bim(um, x, y, eps=eps, alpha=eps / 4, iterations=k, norm=norm)
            delta = adv.data - x.data
            if norm == LINF:
                assert np.max(np.abs(delta)) <= eps + 1e-12
            else:
                assert np.linalg.norm(delta) <= eps * (1 + 1e-9)
            assert adv.data.min() >= 0.0 and adv.data.max() <= 1.0

    def test_more_iterations_not_weaker(self, desk):
        um, probe = desk
        subset = probe.subset(range(100))
        flips_one = flips_many = 0
        for x, y in zip(subset.images, subset.labels):
            one = bim(um, x, y, eps=0.09, alpha=0.009, iterations=1)
            many = bim(um, x, y, eps=0.09, alpha=0.009, iterations=100)
            flips_one += predict(um, one).label != y
            flips_many += predict(um, many).label != y
        assert flips_many >= flips_one


class TestPgd:
    def test_deterministic_given_seed(self, desk):
        um, probe = desk
        x, y = probe.images[2], probe.labels[2]
        a = pgd(um, x, y, eps=0.1, alpha=0.01, iterations=10, seed=7)
        b = pgd(um, x, y, eps=0.1, alpha=0.01, iterations=10, seed=7)
        np.testing.assert_array_equal(a.data, b.data)
        c = pgd(um, x, y, eps=0.1, alpha=0.01, iterations=10, seed=8)
        assert np.any(a.data != c.data)

    def test_start_point_within_ball(self, desk):
        um, probe = desk
        x, y = probe.images[3], probe.labels[3]
        adv = pgd(um, x, y, eps=0.05, alpha=0.005, iterations=1, seed=3)
        assert np.max(np.abs(adv.data - x.data)) <= 0.05 + 0.005 + 1e-12

    def test_random_restart_not_weaker_than_bim_on_batch(self, desk):
        um, probe = desk
        subset = probe.subset(range(100))
        eps = 0.09
        bim_flips = pgd_flips = 0
        for i, (x, y) in enumerate(zip(subset.images, subset.labels)):
            a = bim(um, x, y, eps=eps, alpha=eps / 10, iterations=40)
            b = pgd(um, x, y, eps=eps, alpha=eps / 10, iterations=40, seed=i)
            bim_flips += predict(um, a).label != y
            pgd_flips += predict(um, b).label != y
        assert pgd_flips >= bim_flips


class TestMim:
    def test_zero_decay_matches_bim_trajectory(self, desk):
        um, probe = desk
        x, y = probe.images[4], probe.labels[4]
        a = mim(um, x, y, eps=0.1, alpha=0.01, iterations=10, decay=0.0)
        b = bim(um, x, y, eps=0.1, alpha=0.01, iterations=10, norm=LINF)
        np.testing.assert_array_equal(a.data, b.data)

    def test_ball_containment(self, desk):
        um, probe = desk
        x, y = probe.images[5], probe.labels[5]
        for k in (1, 3, 7):
            adv = mim(um, x, y, eps=0.08, alpha=0.02, iterations=k, decay=1.0)
            assert np.max(np.abs(adv.data - x.data)) <= 0.08 + 1e-12

    def test_momentum_matches_hand_unrolled_recurrence(self):
        W = np.array([[1.0, -0.5], [-0.8, 0.4], [0.2, 0.1]])
        c = linear_model(W)
        x = flat_image([0.5, 0.5, 0.5])
        y, eps, alpha, decay = 0, 0.2, 0.05, 0.9

        g1 = loss_input_gradient(c, x, y)
        m1 = decay * np.zeros(3) + g1 / np.abs(g1).sum()
        x1 = np.clip(np.clip(x.data + alpha * np.sign(m1), x.data - eps,
                             x.data + eps), 0, 1)
        g2 = loss_input_gradient(c, flat_image(x1), y)
        m2 = decay * m1 + g2 / np.abs(g2).sum()
        x2 = np.clip(np.clip(x1 + alpha * np.sign(m2), x.data - eps,
                             x.data + eps), 0, 1)

        adv = mim(c, x, y, eps=eps, alpha=alpha, iterations=2, decay=decay)
        np.testing.assert_array_equal(adv.data, x2)


class TestJsma:
    def test_pixel_budget_contract(self, desk):
        um, probe = desk
        for i in range(5):
            x, y = probe.images[i], probe.labels[i]
            gamma = 0.02
            adv = jsma(um, x, y, theta=0.5, gamma=gamma)
            changed = int(np.sum(adv.data != x.data))
            assert changed <= int(np.floor(gamma * x.data.size))

    def test_two_pixel_toy_picks_max_saliency_pixel(self):
        # saliency (theta > 0): |W[i, target]| * |W[i, y]| with sign conditions
        W = np.array([[-0.4, 0.5], [-1.0, 2.0]])
        c = linear_model(W, b=[5.0, 0.0])
        x = flat_image([0.2, 0.2])
        scores = []
        for i in range(2):
            s_t, s_o = W[i, 1], W[i, 0]
            scores.append(abs(s_t) * abs(s_o) if (s_t > 0 and s_o < 0) else 0.0)
        expected_pixel = int(np.argmax(scores))
        adv = jsma(c, x, 0, theta=0.5, gamma=0.5)  # budget: exactly one pixel
        changed = np.flatnonzero(adv.data != x.data)
        assert list(changed) == [expected_pixel]

    def test_desk_config_runs_quickly(self, desk):
        import time
        um, probe = desk
        start = time.perf_counter()
        jsma(um, probe.images[6], probe.labels[6], theta=0.5, gamma=0.5)
        assert time.perf_counter() - start < 1.0

    def test_invalid_params_rejected(self, desk):
        um, probe = desk
        with pytest.raises(ArgumentError):
            jsma(um, probe.images[0], probe.labels[0], theta=0.0, gamma=0.5)
        with pytest.raises(ArgumentError):
            jsma(um, probe.images[0], probe.labels[0], theta=0.5, gamma=1.5)


class TestDeepFool:
    def test_already_misclassified_returns_input(self, desk):
        um, probe = desk
        for x, y in zip(probe.images, probe.labels):
            if predict(um, x).label != y:
                adv, info = deepfool(um, x, y=y, return_info=True)
                np.testing.assert_array_equal(adv.data, x.data)
                assert info["iterations"] == 0
                return
        pytest.skip("probe set has no misclassified sample")

    def test_two_class_linear_matches_hyperplane_distance(self):
        rng = np.random.default_rng(9)
        W = rng.normal(size=(6, 2))
        c = linear_model(W, b=[0.3, -0.1])
        x = flat_image(np.full(6, 0.5))
        logits = x.data @ W + np.array([0.3, -0.1])
        w = W[:, 1] - W[:, 0] if logits[0] > logits[1] else W[:, 0] - W[:, 1]
        f = abs(logits[1] - logits[0])
        expected = f / np.linalg.norm(w)
        adv, info = deepfool(c, x, overshoot=0.0, return_info=True)
        assert info["iterations"] == 1
        assert np.linalg.norm(adv.data - x.data) == pytest.approx(expected, rel=1e-3)

    def test_overshoot_scales_norm_only(self):
        rng = np.random.default_rng(10)
        W = rng.normal(size=(6, 2))
        c = linear_model(W)
        x = flat_image(np.full(6, 0.5))
        a = deepfool(c, x, overshoot=0.0)
        b = deepfool(c, x, overshoot=0.02)
        da, db = a.data - x.data, b.data - x.data
        assert np.linalg.norm(db) / np.linalg.norm(da) == pytest.approx(1.02, rel=1e-9)
        cos = da @ db / (np.linalg.norm(da) * np.linalg.norm(db))
        assert cos == pytest.approx(1.0, abs=1e-12)


class TestCwL2:
    def test_output_always_in_unit_box(self, desk):
        um, probe = desk
        adv = cw_l2(um, probe.images[7], probe.labels[7], learning_rate=0.1,
                    binary_search_steps=3, iterations=30)
        assert adv.data.min() >= 0.0 and adv.data.max() <= 1.0

    def test_reported_distance_matches_returned_image(self, desk):
        um, probe = desk
        x, y = probe.images[8], probe.labels[8]
        adv, info = cw_l2(um, x, y, learning_rate=0.2, binary_search_steps=4,
                          iterations=50, return_info=True)
        if info["success"]:
            assert predict(um, adv).label != y
            assert np.linalg.norm(adv.data - x.data) == pytest.approx(
                info["best_distance"], rel=1e-9)

    def test_quieter_than_fgsm_at_comparable_success(self, desk):
        um, probe = desk
        subset = probe.subset(range(30))
        cw_dissims, fgsm_dissims = [], []
        cw_hits = fgsm_hits = 0
        for x, y in zip(subset.images, subset.labels):
            a, info = cw_l2(um, x, y, learning_rate=0.2, binary_search_steps=4,
                            iterations=60, return_info=True)
            b = fgsm(um, x, y, 0.2)
            if info["success"]:
                cw_hits += 1
                cw_dissims.append(normalized_l2_dissimilarity([x], [a]))
            if predict(um, b).label != y:
                fgsm_hits += 1
                fgsm_dissims.append(normalized_l2_dissimilarity([x], [b]))
        assert cw_hits >= fgsm_hits
        assert np.mean(cw_dissims) < np.mean(fgsm_dissims)


class TestOnePixel:
    def test_changes_at_most_requested_pixels(self, desk):
        um, probe = desk
        x, y = probe.images[9], probe.labels[9]
        adv = one_pixel(um, x, y, pixel_count=1, population_size=10,
                        iterations=5, seed=0)
        grid_delta = (adv.grid() != x.grid()).any(axis=2)
        assert int(grid_delta.sum()) <= 1

    def test_deterministic_given_seed(self, desk):
        um, probe = desk
        x, y = probe.images[10], probe.labels[10]
        a = one_pixel(um, x, y, 3, 12, 5, seed=4)
        b = one_pixel(um, x, y, 3, 12, 5, seed=4)
        np.testing.assert_array_equal(a.data, b.data)

    def test_evolution_never_worse_than_initial_population(self, desk):
        um, probe = desk
        x, y = probe.images[11], probe.labels[11]
        _, info = one_pixel(um, x, y, 2, 16, 8, seed=5, return_info=True)
        assert info["best_fitness"] <= info["initial_best_fitness"]


class TestHopSkipJump:
    def test_query_accounting_exact_and_within_budget(self, desk):
        um, probe = desk
        x, y = probe.images[12], probe.labels[12]
        calls = {"rows": 0}

        def oracle(X):
            X = np.atleast_2d(X)
            calls["rows"] += len(X)
            return predict_label_batch(um, X)

        for budget in (150, 400):
            calls["rows"] = 0
            result = hop_skip_jump(oracle, x, y, L2, budget, seed=2)
            assert result.queries_used == calls["rows"]
            assert result.queries_used <= budget

    def test_trace_distances_non_increasing(self, desk):
        um, probe = desk
        x, y = probe.images[13], probe.labels[13]
        oracle = lambda X: predict_label_batch(um, np.atleast_2d(X))
        result = hop_skip_jump(oracle, x, y, L2, 800, seed=3)
        distances = [d for _, d in result.trace]
        assert all(a >= b - 1e-12 for a, b in zip(distances, distances[1:]))

    @pytest.mark.parametrize("norm", [L2, LINF])
    def test_adversarial_unless_init_failed(self, desk, norm):
        um, probe = desk
        x, y = probe.images[14], probe.labels[14]
        oracle = lambda X: predict_label_batch(um, np.atleast_2d(X))
        result = hop_skip_jump(oracle, x, y, norm, 500, seed=4)
        if not result.init_failed:
            assert oracle(result.adversarial.data[None, :])[0] != y

    def test_linear_oracle_converges_to_hyperplane_distance(self):
        rng = np.random.default_rng(6)
        w = rng.normal(size=64)
        w /= np.linalg.norm(w)
        x_flat = np.full(64, 0.2)
        bias = -(w @ x_flat) - 0.8  # benign side with margin 0.8
        oracle = lambda X: (np.atleast_2d(X) @ w + bias > 0).astype(np.int64)
        x = Image(8, 8, 1, x_flat)
        assert oracle(x_flat[None, :])[0] == 0
        exact = abs(w @ x_flat + bias) / np.linalg.norm(w)
        result = hop_skip_jump(oracle, x, 0, L2, 2000, seed=7)
        assert not result.init_failed
        assert abs(result.distance - exact) / exact <= 0.10


class TestSubstitute:
    def test_full_budget_uses_whole_pool(self, desk):
        um, probe = desk
        pool = probe.subset(range(60))
        target = lambda images: predict_label_batch(
            um, np.stack([im.data for im in images]))
        sub = train_substitute(target, pool, budget=60, arch=SOFTMAX_LINEAR,
                               cfg=TrainConfig(epochs=2, seed=3))
        assert sub.metadata["substitute"]["budget"] == 60

    def test_labels_come_from_target_not_ground_truth(self):
        # target always answers class 7, regardless of the true labels
        pool = synth_digits(seed=40, n=30)
        target = lambda images: np.full(len(images), 7, dtype=np.int64)
        with pytest.warns(UserWarning):
            sub = train_substitute(target, pool, budget=20, arch=SOFTMAX_LINEAR,
                                   cfg=TrainConfig(epochs=30, batch_size=8, seed=4))
        # a substitute fit on constant labels predicts that constant
        probe = synth_digits(seed=41, n=20)
        preds = predict_label_batch(sub, probe.stack())
        assert np.all(preds == 7)

    def test_oversized_budget_rejected(self, desk):
        um, probe = desk
        pool = probe.subset(range(10))
        target = lambda images: np.zeros(len(images), dtype=np.int64)
        with pytest.raises(ArgumentError):
            train_substitute(target, pool, budget=11, arch=SOFTMAX_LINEAR,
                             cfg=TrainConfig(epochs=1, seed=5))


class TestPresetCatalog:
    def test_expected_ids_present(self):
        presets = zero_knowledge_presets()
        assert "fgsm-mnist-e02" in presets
        assert presets["fgsm-mnist-e02"].params["eps"] == 0.2
        assert "deepfool-mnist-os8" in presets
        assert presets["pgd-mnist-e009"].params["alpha"] == pytest.approx(0.009)
        assert presets["cwl2-mnist-lr0012"].params["binary_search_steps"] == 5

    def test_mnist_sweeps_have_five_strengths(self):
        presets = zero_knowledge_presets()
        for family in ("fgsm-mnist", "biml2-mnist", "bimlinf-mnist",
                       "cwl2-mnist", "deepfool-mnist", "jsma-mnist",
                       "onepixel-mnist", "mim-mnist", "pgd-mnist"):
            members = [p for p in presets.values() if p.family == family]
            assert len(members) == 5, family
            strengths = [p.strength for p in members]
            assert strengths == sorted(strengths)

    def test_craft_set_records_bookkeeping(self, desk):
        um, probe = desk
        subset = probe.subset(range(6))
        report = craft_set(zero_knowledge_presets()["fgsm-mnist-e02"], um, subset,
                           attack_id="fgsm-mnist-e02")
        assert len(report.adversarial) == 6
        for rec in report.per_sample:
            assert rec["dissimilarity"] >= 0.0
            assert rec["wall_clock_seconds"] >= 0.0
        lines = report.to_json_lines().splitlines()
        assert len(lines) == 6

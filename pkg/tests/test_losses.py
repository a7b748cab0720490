import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_textured_rgb
from oracles import align_grid_search, finite_difference_grad

from depthcurate.losses import (DegenerateAlignmentError, MlpWeights, RewardWeights,
                                aesthetic_score, align_lsq, cosine_depth_loss, gradcheck,
                                load_mlp_weights, loss_depth_total, loss_gm, loss_ssi,
                                rl_total_loss, save_mlp_weights, ssi_keep_mask, toy_embed)
from depthcurate.probes import (aesthetic_instance, cosine_instance, gm_instance, run_gradcheck,
                                ssi_instance)
from depthcurate.raster import DepthMap, DisparityMap, RgbImage


def full(shape):
    return np.ones(shape, bool)


def disp(values) -> DisparityMap:
    values = np.asarray(values, dtype=np.float64)
    return DisparityMap(values, full(values.shape))


def random_disp(seed, h=12, w=12, low=0.2, high=2.0) -> DisparityMap:
    rng = np.random.default_rng(seed)
    return disp(rng.uniform(low, high, (h, w)))


class TestAlign:
    def test_identity(self):
        gt = random_disp(0)
        s, t = align_lsq(gt, gt)
        assert s == pytest.approx(1.0, abs=1e-12)
        assert t == pytest.approx(0.0, abs=1e-12)

    def test_exact_affine_inverse(self):
        gt = random_disp(1)
        pred = disp(2.0 * gt.values + 3.0)
        s, t = align_lsq(pred, gt)
        assert s == pytest.approx(0.5, abs=1e-12)
        assert t == pytest.approx(-1.5, abs=1e-10)

    def test_matches_grid_search_oracle(self):
        pred = random_disp(2, 16, 16)
        gt = random_disp(3, 16, 16)
        s, t = align_lsq(pred, gt)
        p = pred.values.ravel()
        g = gt.values.ravel()
        closed_cost = float(((s * p + t - g) ** 2).sum())
        _, _, oracle_cost = align_grid_search(p, g)
        assert closed_cost <= oracle_cost + 1e-4
        assert oracle_cost - closed_cost < 1e-4

    def test_constant_prediction_degenerate(self):
        gt = random_disp(4)
        constant = disp(np.full((12, 12), 0.7))
        with pytest.raises(DegenerateAlignmentError):
            align_lsq(constant, gt)

    def test_respects_joint_validity(self):
        values = np.array([[1.0, 2.0], [3.0, 100.0]])
        gt = np.array([[2.0, 4.0], [6.0, 1.0]])
        valid = np.array([[True, True], [True, False]])
        s, t = align_lsq(DisparityMap(values, valid), DisparityMap(gt, valid))
        assert s == pytest.approx(2.0, abs=1e-9)
        assert t == pytest.approx(0.0, abs=1e-9)


class TestLossSsi:
    def test_affine_invariance_value_zero(self):
        gt = random_disp(5)
        for a, b in [(1.0, 0.0), (2.5, 0.3), (0.4, 1.1)]:
            pred = disp(a * gt.values + b)
            res = loss_ssi(pred, gt)
            assert res.value == pytest.approx(0.0, abs=1e-12)

    def test_grad_zero_at_exact_match(self):
        gt = random_disp(6)
        res = loss_ssi(gt, gt)
        assert res.value == 0.0
        assert np.all(res.grad == 0.0)

    def test_affine_invariance_of_value(self):
        pred = random_disp(7)
        gt = random_disp(8)
        base = loss_ssi(pred, gt).value
        for a, b in [(1.7, 0.3), (0.5, -0.1), (3.0, 2.0)]:
            shifted = disp(a * pred.values + b)
            assert loss_ssi(shifted, gt).value == pytest.approx(base, abs=1e-9)

    def test_corrupted_pixel_trimmed(self):
        rng = np.random.default_rng(9)
        gt_values = rng.uniform(0.5, 1.5, (10, 10))
        gt = disp(gt_values)
        pred_values = gt_values.copy()
        pred_values[3, 7] += 5.0  # single gross outlier among N=100
        res = loss_ssi(disp(pred_values), gt)
        keep = ssi_keep_mask(disp(pred_values), gt)
        assert not keep[3, 7]
        assert res.grad[3, 7] == 0.0
        # the outlier shifts (s, t) slightly so the value is near but not exactly 0
        assert res.value < 1e-3

    def test_trim_count_exact(self):
        for seed in range(10):
            pred = random_disp(seed + 100)
            gt = random_disp(seed + 200)
            res = loss_ssi(pred, gt)
            n_zero = int((res.grad == 0.0).sum())
            assert n_zero == math.ceil(0.10 * pred.values.size)

    def test_grad_matches_fd_oracle_at_kept_pixels(self):
        pred, gt, keep = ssi_instance(np.random.default_rng(10))

        def value_only(x):
            return loss_ssi(disp(x), gt).value

        analytic = loss_ssi(pred, gt).grad
        numeric = finite_difference_grad(value_only, pred.values)
        rel = np.abs(analytic[keep] - numeric[keep]) / np.maximum(np.abs(numeric[keep]), 1e-8)
        assert rel.max() < 1e-4

    def test_invalid_pixels_zero_grad(self):
        rng = np.random.default_rng(11)
        valid = rng.random((12, 12)) > 0.2
        pred = DisparityMap(rng.uniform(0.2, 2.0, (12, 12)), valid)
        gt = DisparityMap(rng.uniform(0.2, 2.0, (12, 12)), valid)
        res = loss_ssi(pred, gt)
        assert np.all(res.grad[~valid] == 0.0)

    def test_nonnegative(self):
        for seed in range(5):
            assert loss_ssi(random_disp(seed), random_disp(seed + 50)).value >= 0.0


class TestLossGm:
    def test_zero_at_exact_match(self):
        gt = random_disp(12)
        res = loss_gm(gt, gt)
        assert res.value == 0.0
        assert np.all(res.grad == 0.0)

    def test_shift_invariance(self):
        gt = random_disp(13)
        pred = disp(gt.values + 0.75)
        assert loss_gm(pred, gt).value == pytest.approx(0.0, abs=1e-9)

    def test_affine_invariance_of_value(self):
        pred = random_disp(14, 16, 16)
        gt = random_disp(15, 16, 16)
        base = loss_gm(pred, gt).value
        for a, b in [(2.0, 0.5), (0.3, -0.2)]:
            assert loss_gm(disp(a * pred.values + b), gt).value == pytest.approx(base, abs=1e-9)

    def test_grad_matches_fd_oracle(self):
        pred, gt = gm_instance(np.random.default_rng(16))

        def value_only(x):
            return loss_gm(disp(x), gt).value

        analytic = loss_gm(pred, gt).grad
        numeric = finite_difference_grad(value_only, pred.values)
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)
        assert rel.max() < 1e-4

    def test_scale_count_respected(self):
        pred = random_disp(17, 16, 16)
        gt = random_disp(18, 16, 16)
        # with one scale the loss only sees full-resolution differences
        one = loss_gm(pred, gt, scales=1)
        four = loss_gm(pred, gt, scales=4)
        assert one.value != pytest.approx(four.value)


class TestLossDepthTotal:
    def test_zero_at_match(self):
        gt = random_disp(19)
        assert loss_depth_total(gt, gt).value == 0.0

    def test_one_to_four_weighting(self):
        pred = random_disp(20)
        gt = random_disp(21)
        total = loss_depth_total(pred, gt)
        ssi = loss_ssi(pred, gt)
        gm = loss_gm(pred, gt)
        assert total.value == ssi.value + 4.0 * gm.value
        assert np.array_equal(total.grad, ssi.grad + 4.0 * gm.grad)

    def test_fixture_arithmetic(self):
        # value = 1 * 0.2 + 4 * 0.05 = 0.4
        assert 1.0 * 0.2 + 4.0 * 0.05 == pytest.approx(0.4)


class TestCosineLoss:
    def _depth(self, values):
        values = np.asarray(values, dtype=np.float64)
        return DepthMap(values, full(values.shape))

    def test_identical_zero(self):
        d = self._depth(np.random.default_rng(22).uniform(0.5, 5.0, (8, 8)))
        res = cosine_depth_loss(d, d)
        assert res.value == pytest.approx(0.0, abs=1e-12)

    def test_scale_blind_and_grad_orthogonal(self):
        src = self._depth(np.random.default_rng(23).uniform(0.5, 5.0, (8, 8)))
        gen = self._depth(3.0 * src.values)
        res = cosine_depth_loss(gen, src)
        assert res.value == pytest.approx(0.0, abs=1e-12)
        u = gen.values.ravel()
        assert abs(res.grad.ravel() @ u) < 1e-9

    def test_grad_matches_fd_oracle(self):
        gen, src = cosine_instance(np.random.default_rng(24))

        def value_only(x):
            return cosine_depth_loss(self._depth(x), src).value

        analytic = cosine_depth_loss(gen, src).grad
        numeric = finite_difference_grad(value_only, gen.values, step=1e-5)
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)
        assert rel.max() < 1e-5

    def test_no_joint_pixels_rejected(self):
        a = DepthMap(np.ones((2, 2)), np.array([[True, False], [False, False]]))
        b = DepthMap(np.ones((2, 2)), np.array([[False, True], [False, False]]))
        with pytest.raises(ValueError):
            cosine_depth_loss(a, b)


class TestToyEmbed:
    def test_black_image(self):
        img = RgbImage(np.zeros((8, 8, 3), np.uint8))
        e = toy_embed(img)
        assert e.shape == (64,)
        for c in range(3):
            hist = e[16 * c:16 * (c + 1)]
            assert hist[0] == 1.0 and hist[1:].sum() == 0.0
        assert e[57] == 0.0  # std
        assert e[63] == 0.0  # entropy

    def test_white_image(self):
        img = RgbImage(np.full((8, 8, 3), 255, np.uint8))
        e = toy_embed(img)
        for c in range(3):
            assert e[16 * c + 15] == 1.0
        assert e[56] == pytest.approx(255.0)

    def test_deterministic(self):
        img = make_textured_rgb(seed=40, width=64, height=48)
        assert np.array_equal(toy_embed(img), toy_embed(img))

    def test_histograms_normalized(self):
        img = make_textured_rgb(seed=41, width=32, height=32)
        e = toy_embed(img)
        for c in range(3):
            assert e[16 * c:16 * (c + 1)].sum() == pytest.approx(1.0)
        assert e[48:56].sum() == pytest.approx(1.0)


class TestAestheticScore:
    def test_single_linear_layer(self):
        w = np.zeros((1, 4))
        w[0, 0] = 1.0
        weights = MlpWeights((4, 1), (w,), (np.zeros(1),))
        e = np.array([2.0, 0.0, 0.0, 0.0])
        score, _ = aesthetic_score(e, weights)
        assert score == pytest.approx(1.0)  # normalization forces unit input

    def test_scale_invariance_power_of_two(self):
        rng = np.random.default_rng(25)
        weights = MlpWeights(
            (8, 4, 1),
            (rng.normal(0, 1, (4, 8)), rng.normal(0, 1, (1, 4))),
            (rng.normal(0, 1, 4), rng.normal(0, 1, 1)))
        e = rng.uniform(0.1, 2.0, 8)
        base, _ = aesthetic_score(e, weights)
        for c in (0.5, 2.0, 8.0, 0.25):
            assert aesthetic_score(c * e, weights)[0] == base

    def test_scale_invariance_c10_integer_embedding(self):
        rng = np.random.default_rng(26)
        weights = MlpWeights(
            (64, 8, 1),
            (rng.normal(0, 0.5, (8, 64)), rng.normal(0, 0.5, (1, 8))),
            (rng.normal(0, 0.5, 8), rng.normal(0, 0.5, 1)))
        e = np.zeros(64)
        e[[3, 10, 40]] = [3.0, 4.0, 12.0]  # 9 + 16 + 144 = 13^2
        base, _ = aesthetic_score(e, weights)
        assert aesthetic_score(10.0 * e, weights)[0] == base

    def test_grad_matches_fd_oracle(self):
        e, weights = aesthetic_instance(np.random.default_rng(27))

        def value_only(x):
            return aesthetic_score(x, weights)[0]

        _, analytic = aesthetic_score(e, weights)
        numeric = finite_difference_grad(value_only, e, step=1e-5)
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)
        assert rel.max() < 1e-5

    def test_zero_embedding_rejected(self):
        weights = MlpWeights((4, 1), (np.ones((1, 4)),), (np.zeros(1),))
        with pytest.raises(ValueError):
            aesthetic_score(np.zeros(4), weights)

    def test_dim_mismatch_rejected(self):
        weights = MlpWeights((4, 1), (np.ones((1, 4)),), (np.zeros(1),))
        with pytest.raises(ValueError):
            aesthetic_score(np.ones(5), weights)


class TestMlpWeightsFile:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(28)
        weights = MlpWeights(
            (6, 3, 1),
            (rng.normal(0, 1, (3, 6)), rng.normal(0, 1, (1, 3))),
            (rng.normal(0, 1, 3), rng.normal(0, 1, 1)))
        path = tmp_path / "w.json"
        save_mlp_weights(weights, path)
        loaded = load_mlp_weights(path)
        assert loaded.dims == weights.dims
        for a, b in zip(loaded.weights, weights.weights):
            assert np.array_equal(a, b)

    def test_inconsistent_length_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"dims": [2, 1], "layers": [{"W": [1.0, 2.0, 3.0], "b": [0.0]}]}')
        with pytest.raises(ValueError):
            load_mlp_weights(path)

    def test_bad_bias_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"dims": [2, 1], "layers": [{"W": [1.0, 2.0], "b": [0.0, 1.0]}]}')
        with pytest.raises(ValueError):
            load_mlp_weights(path)

    def test_final_dim_must_be_one(self):
        with pytest.raises(ValueError):
            MlpWeights((4, 2), (np.ones((2, 4)),), (np.zeros(2),))


class TestRlTotalLoss:
    def _setup(self, seed):
        rng = np.random.default_rng(seed)
        shape = (16, 16)
        d_src = DepthMap(rng.uniform(0.5, 5.0, shape), full(shape))
        d_gen = DepthMap(rng.uniform(0.5, 5.0, shape), full(shape))
        img = make_textured_rgb(seed=seed, width=32, height=32)
        weights = MlpWeights(
            (64, 16, 1),
            (rng.normal(0, 0.5, (16, 64)), rng.normal(0, 0.5, (1, 16))),
            (rng.normal(0, 0.5, 16), rng.normal(0, 0.5, 1)))
        return d_gen, d_src, img, weights

    def test_composition_exact(self):
        for seed in range(5):
            d_gen, d_src, img, weights = self._setup(seed)
            rw = RewardWeights()
            result = rl_total_loss(d_gen, d_src, img, weights, rw)
            depth = cosine_depth_loss(d_gen, d_src)
            score, score_grad = aesthetic_score(toy_embed(img), weights)
            assert result.value == rw.lambda_depth * depth.value - rw.lambda_aesthetic * score
            assert np.array_equal(result.grad_wrt_dgen, rw.lambda_depth * depth.grad)
            assert np.array_equal(result.grad_wrt_embedding, -rw.lambda_aesthetic * score_grad)

    def test_identical_depths(self):
        d_gen, _, img, weights = self._setup(10)
        result = rl_total_loss(d_gen, d_gen, img, weights)
        score, _ = aesthetic_score(toy_embed(img), weights)
        assert result.value == pytest.approx(-0.1 * score, abs=1e-12)

    def test_zero_aesthetic_weight(self):
        d_gen, d_src, img, weights = self._setup(11)
        rw = RewardWeights(lambda_depth=0.9, lambda_aesthetic=0.0)
        result = rl_total_loss(d_gen, d_src, img, weights, rw)
        assert result.value == 0.9 * cosine_depth_loss(d_gen, d_src).value


class TestGradcheckHarness:
    def test_quadratic_is_exact(self):
        rng = np.random.default_rng(29)
        x = rng.uniform(-2.0, 2.0, 16)

        def f(v):
            return float(v @ v), 2.0 * v

        assert gradcheck(f, x) < 1e-8

    def test_detects_wrong_gradient(self):
        x = np.ones(4)

        def f(v):
            return float(v @ v), 3.0 * v  # wrong by 1.5x

        assert gradcheck(f, x) > 0.1

    @pytest.mark.parametrize("op,tolerance", [("ssi", 1e-4), ("gm", 1e-4),
                                              ("cosine", 1e-5), ("aesthetic", 1e-5)])
    def test_all_ops_pass(self, op, tolerance):
        assert run_gradcheck(op, seed=1, instances=3) < tolerance

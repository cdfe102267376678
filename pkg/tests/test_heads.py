import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridmot.heads import (BoxRegressionBatch, FocalParams, HeatmapPair, IdentityBatch, NoPeaks,
                             UncertaintyWeights, box_loss, box_loss_grad, heatmap_focal_grad,
                             heatmap_focal_loss, identity_loss, identity_loss_grad,
                             render_heatmap_target, size_adaptive_sigma, total_loss,
                             total_loss_grad)

STEP = 1e-5


def rel_err(a, b, floor=1e-12):
    """Norm-wise relative difference between two gradient vectors."""
    a, b = np.ravel(np.asarray(a, float)), np.ravel(np.asarray(b, float))
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def random_heatmap_pair(rng, shape=(8, 8)):
    h, w = shape
    k = rng.integers(1, 4)
    centers = [tuple(rng.uniform(0, [w - 1, h - 1])) for _ in range(k)]
    target = render_heatmap_target(centers, shape, sizes=[tuple(rng.uniform(4, 20, 2))] * k)
    pred = rng.uniform(0.02, 0.98, shape)
    return target, pred


class TestHeatmapTarget:
    def test_single_center(self):
        m = render_heatmap_target([(4, 3)], (7, 9))
        assert m[3, 4] == 1.0
        d = np.hypot(*np.mgrid[0:7, 0:9] - np.array([3, 4])[:, None, None])
        order = np.argsort(d, axis=None)
        assert np.all(np.diff(m.ravel()[order]) <= 0)

    def test_empty(self):
        assert not render_heatmap_target([], (4, 5)).any()

    def test_max_combination(self):
        a = render_heatmap_target([(3, 3)], (8, 8), sizes=[(10, 10)])
        b = render_heatmap_target([(4, 3)], (8, 8), sizes=[(10, 10)])
        both = render_heatmap_target([(3, 3), (4, 3)], (8, 8), sizes=[(10, 10)] * 2)
        assert np.array_equal(both, np.maximum(a, b))

    def test_rejects_outside(self):
        with pytest.raises(ValueError):
            render_heatmap_target([(9.7, 1)], (5, 10))
        with pytest.raises(ValueError):
            render_heatmap_target([(-1, 1)], (5, 10))

    def test_sigma_rule(self):
        assert size_adaptive_sigma(None) == 1.0
        assert size_adaptive_sigma((3, 4)) == 1.0
        assert size_adaptive_sigma((36, 48)) == pytest.approx(10.0)


class TestFocal:
    def test_single_pixel_value(self):
        loss = heatmap_focal_loss(HeatmapPair(np.ones((1, 1)), np.full((1, 1), 0.5)), FocalParams(2, 4))
        assert loss == pytest.approx(0.25 * math.log(2), abs=1e-12)
        assert loss == pytest.approx(0.173287, abs=1e-6)

    def test_perfect_prediction(self):
        target = render_heatmap_target([(2, 2), (6, 5)], (8, 8))
        pred = np.where(target == 1.0, 1 - 1e-12, 1e-12)
        assert 0 <= heatmap_focal_loss(HeatmapPair(target, pred)) <= 1e-9

    def test_no_peaks(self):
        with pytest.raises(NoPeaks):
            heatmap_focal_loss(HeatmapPair(np.zeros((3, 3)), np.full((3, 3), 0.5)))

    def test_validation(self):
        with pytest.raises(ValueError):
            HeatmapPair(np.zeros((2, 2)), np.zeros((2, 3)))
        with pytest.raises(ValueError):
            HeatmapPair(np.full((2, 2), 1.5), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            FocalParams(alpha=-1)

    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        target, pred = random_heatmap_pair(rng)
        g = heatmap_focal_grad(HeatmapPair(target, pred))
        fd = np.zeros_like(pred)
        for idx in np.ndindex(pred.shape):
            up, dn = pred.copy(), pred.copy()
            up[idx] += STEP
            dn[idx] -= STEP
            fd[idx] = (heatmap_focal_loss(HeatmapPair(target, up))
                       - heatmap_focal_loss(HeatmapPair(target, dn))) / (2 * STEP)
        assert rel_err(g, fd) <= 1e-4

    @given(st.floats(0.01, 0.98), st.floats(0.001, 0.01))
    def test_monotone(self, p, dp):
        target = np.array([[1.0, 0.0]])
        base = heatmap_focal_loss(HeatmapPair(target, np.array([[p, 0.5]])))
        assert heatmap_focal_loss(HeatmapPair(target, np.array([[p + dp, 0.5]]))) < base
        base = heatmap_focal_loss(HeatmapPair(target, np.array([[0.5, p]])))
        assert heatmap_focal_loss(HeatmapPair(target, np.array([[0.5, p + dp]]))) > base

    @given(st.integers(0, 10_000))
    def test_non_negative(self, seed):
        target, pred = random_heatmap_pair(np.random.default_rng(seed))
        assert heatmap_focal_loss(HeatmapPair(target, pred)) >= 0


class TestBox:
    def test_examples(self):
        o = np.array([[0.5, 0.5]])
        s = np.array([[10.0, 20.0]])
        assert box_loss(BoxRegressionBatch(o, s, o, s)) == 0.0
        b = BoxRegressionBatch(o, s, o + 0.25, s + 1.0)
        assert box_loss(b) == pytest.approx(0.7)
        b2 = BoxRegressionBatch(o, s, o + 0.25, s + 1.0, lambda_s=0.2)
        assert box_loss(b2) == pytest.approx(0.5 + 0.4)

    def test_count_mismatch(self):
        with pytest.raises(ValueError):
            BoxRegressionBatch(np.zeros((2, 2)), np.zeros((1, 2)), np.zeros((2, 2)), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            BoxRegressionBatch(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 2)))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        n = 3
        o, s = rng.normal(size=(n, 2)), rng.uniform(5, 50, (n, 2))
        po, ps = o + rng.normal(size=(n, 2)), s + rng.normal(0, 3, (n, 2))
        go, gs = box_loss_grad(BoxRegressionBatch(o, s, po, ps))
        for arr, g, which in ((po, go, 0), (ps, gs, 1)):
            fd = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                up, dn = arr.copy(), arr.copy()
                up[idx] += STEP
                dn[idx] -= STEP
                args_up = (o, s, up, ps) if which == 0 else (o, s, po, up)
                args_dn = (o, s, dn, ps) if which == 0 else (o, s, po, dn)
                fd[idx] = (box_loss(BoxRegressionBatch(*args_up))
                           - box_loss(BoxRegressionBatch(*args_dn))) / (2 * STEP)
            assert rel_err(g, fd) <= 1e-4


class TestIdentity:
    def test_examples(self):
        lab = np.eye(4)[[2]]
        assert identity_loss(IdentityBatch(lab, lab)) == 0.0
        assert identity_loss(IdentityBatch(lab, np.full((1, 4), 0.25))) == pytest.approx(math.log(4), abs=1e-9)

    def test_validation(self):
        with pytest.raises(ValueError):
            IdentityBatch(np.array([[1, 1, 0]]), np.array([[0.3, 0.3, 0.4]]))
        with pytest.raises(ValueError):
            IdentityBatch(np.array([[1, 0, 0]]), np.array([[0.3, 0.3, 0.3]]))

    @given(st.integers(0, 10_000))
    def test_relabel_invariant(self, seed):
        rng = np.random.default_rng(seed)
        k = 5
        lab = np.eye(k)[rng.integers(0, k, 3)]
        p = rng.dirichlet(np.ones(k), 3)
        perm = rng.permutation(k)
        assert identity_loss(IdentityBatch(lab[:, perm], p[:, perm])) == pytest.approx(
            identity_loss(IdentityBatch(lab, p)), rel=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_finite_difference(self, seed):
        # perturb along e_i - e_j so every probe stays a valid distribution
        rng = np.random.default_rng(seed)
        k = 4
        lab = np.eye(k)[rng.integers(0, k, 2)]
        p = rng.dirichlet(np.ones(k) * 3, 2)
        g = identity_loss_grad(IdentityBatch(lab, p))
        for r in range(2):
            for i in range(k):
                for j in range(k):
                    if i == j:
                        continue
                    d = np.zeros_like(p)
                    d[r, i], d[r, j] = 1.0, -1.0
                    fd = (identity_loss(IdentityBatch(lab, p + STEP * d))
                          - identity_loss(IdentityBatch(lab, p - STEP * d))) / (2 * STEP)
                    assert rel_err(np.sum(g * d), fd) <= 1e-4


class TestTotal:
    def test_examples(self):
        assert total_loss(0, 0) == 0.0
        assert total_loss(1, 1) == pytest.approx(1.0)
        assert total_loss_grad(1.0, 1.0)[2] == pytest.approx(0.0)

    def test_can_go_negative(self):
        assert total_loss(0.0, 0.0, UncertaintyWeights(-3, -4)) < 0

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            UncertaintyWeights(math.inf, 0)
        with pytest.raises(ValueError):
            total_loss(math.nan, 0)

    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        x = np.array([rng.uniform(0, 5), rng.uniform(0, 5), rng.normal(), rng.normal()])

        def f(v):
            return total_loss(v[0], v[1], UncertaintyWeights(v[2], v[3]))

        g = total_loss_grad(x[0], x[1], UncertaintyWeights(x[2], x[3]))
        fd = [(f(x + STEP * e) - f(x - STEP * e)) / (2 * STEP) for e in np.eye(4)]
        assert rel_err(g, fd) <= 1e-4

import csv

import numpy as np
import pytest

from splatgrow.cameras import Camera
from splatgrow.errors import EmptyPool, RangeError, ShapeMismatch, TooSmall
from splatgrow.optimizer import (LossWeights, OptimConfig, SupervisionView,
                                 backward, feat_loss, l1_loss, optimize,
                                 ssim_loss, total_loss)
from splatgrow.renderer import RenderSettings, render

from conftest import make_scene


def small_cam(h=32, w=32, focal=40.0):
    return Camera(fx=focal, fy=focal, cx=w / 2.0, cy=h / 2.0,
                  height=h, width=w,
                  R=np.eye(3), t=np.zeros(3))


SETTINGS = RenderSettings(tile_size=16)


class TestLossFunctions:
    def test_l1_hand_value(self):
        a = np.zeros((4, 4, 3))
        b = np.full((4, 4, 3), 0.25)
        assert abs(l1_loss(a, b) - 0.25) < 1e-15

    def test_l1_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            l1_loss(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))

    def test_ssim_identical_is_zero(self, rng):
        x = rng.random((16, 20, 3))
        assert abs(ssim_loss(x, x)) < 1e-12

    def test_ssim_different_positive(self, rng):
        x = rng.random((16, 16, 3))
        y = rng.random((16, 16, 3))
        assert ssim_loss(x, y) > 0.01

    def test_ssim_too_small(self):
        with pytest.raises(TooSmall):
            ssim_loss(np.zeros((10, 16, 3)), np.zeros((10, 16, 3)))
        with pytest.raises(TooSmall):
            ssim_loss(np.zeros((16, 10, 3)), np.zeros((16, 10, 3)))

    def test_feat_exclusion_and_value(self):
        pred = np.zeros((2, 2, 16))
        tgt = np.zeros((2, 2, 16))
        pred[0, 0, 0] = 1.0
        tgt[0, 0, 1] = 1.0         # orthogonal -> 1
        pred[0, 1, 3] = 1.0
        tgt[0, 1, 3] = 2.0         # parallel -> ~0
        # remaining two pixels have zero targets: excluded
        assert abs(feat_loss(pred, tgt) - 0.5) < 1e-6

    def test_feat_smoothed_norm_accuracy(self, rng):
        pred = rng.random((6, 6, 16)) + 0.5
        tgt = rng.random((6, 6, 16)) + 0.5
        p = pred.reshape(-1, 16)
        t = tgt.reshape(-1, 16)
        cos = np.sum(p * t, axis=1) / (
            np.linalg.norm(p, axis=1) * np.linalg.norm(t, axis=1))
        exact = np.mean(1.0 - cos)
        assert abs(feat_loss(pred, tgt) - exact) < 1e-6

    def test_weights_validated(self):
        with pytest.raises(RangeError):
            LossWeights(lambda_rgb=-1.0)
        with pytest.raises(RangeError):
            LossWeights(lambda_rgb=0, lambda_feat=0, lambda1=0, lambda2=0)

    def test_total_composition(self, rng):
        scene = make_scene(rng, 12)
        cam = small_cam()
        out = render(scene, cam, SETTINGS)
        tgt_rgb = rng.random((32, 32, 3))
        tgt_feat = rng.random((32, 32, 16))
        w = LossWeights(lambda_rgb=2.0, lambda_feat=3.0, lambda1=0.7, lambda2=0.3)
        b = total_loss(out, tgt_rgb, tgt_feat, w)
        want = 2.0 * (0.7 * b.l1 + 0.3 * b.ssim) + 3.0 * b.feat
        assert abs(b.total - want) < 1e-12

    def test_render_as_target_is_zero(self, rng):
        scene = make_scene(rng, 12)
        cam = small_cam()
        out = render(scene, cam, SETTINGS)
        b = total_loss(out, out.rgb, out.feat)
        assert b.l1 == 0.0
        assert abs(b.ssim) < 1e-12
        # feat carries the smoothed-norm floor, tiny but nonzero
        assert 0.0 <= b.feat < 1e-5
        assert b.total < 1e-5


class TestBackward:
    def test_gradcheck_position_and_alpha(self, rng):
        """Central-difference check of two parameter classes through the
        full loss; the rest are covered by the acceptance suite."""
        scene = make_scene(rng, 6, z_range=(1.8, 2.6), spread=0.4)
        cam = small_cam(h=16, w=16, focal=20.0)
        tgt_rgb = rng.random((16, 16, 3))
        tgt_feat = rng.random((16, 16, 16))
        grads, _ = backward(scene, cam, tgt_rgb, tgt_feat, settings=SETTINGS)

        eps = 3e-6

        def loss_with(scene2):
            out = render(scene2, cam, SETTINGS)
            return total_loss(out, tgt_rgb, tgt_feat).total

        for gi in (0, 3):
            for axis in range(3):
                for sign_field, key in ((scene.p_delta, "p_delta"),):
                    plus = scene.copy()
                    minus = scene.copy()
                    plus.p_delta[gi, axis] += eps
                    minus.p_delta[gi, axis] -= eps
                    fd = (loss_with(plus) - loss_with(minus)) / (2 * eps)
                    got = grads[key][gi, axis]
                    assert abs(got - fd) < 1e-3 * max(abs(fd), 1e-3), \
                        f"{key}[{gi},{axis}]: analytic {got} vs fd {fd}"

        def logit(a):
            return np.log(a) - np.log1p(-a)

        for gi in (1, 4):
            base = logit(scene.alpha[gi])
            plus = scene.copy()
            minus = scene.copy()
            plus.alpha[gi] = 1.0 / (1.0 + np.exp(-(base + eps)))
            minus.alpha[gi] = 1.0 / (1.0 + np.exp(-(base - eps)))
            fd = (loss_with(plus) - loss_with(minus)) / (2 * eps)
            got = grads["logit_alpha"][gi]
            assert abs(got - fd) < 1e-3 * max(abs(fd), 1e-3)


def tiny_pool(rng, scene, n_views=3):
    pool = []
    for i in range(n_views):
        cam = Camera(fx=40.0, fy=40.0, cx=16.0, cy=16.0, height=32, width=32,
                     R=np.eye(3), t=np.array([0.05 * i, 0.0, 0.0]))
        out = render(scene, cam, SETTINGS)
        pool.append(SupervisionView(cam=cam, rgb=out.rgb, feat=out.feat))
    return pool


class TestOptimize:
    def test_empty_pool(self, rng):
        with pytest.raises(EmptyPool):
            optimize(make_scene(rng, 4), [])

    def test_zero_iterations_returns_copy(self, rng):
        scene = make_scene(rng, 8)
        pool = tiny_pool(rng, scene)
        out = optimize(scene, pool, OptimConfig(iterations=0))
        assert out is not scene
        for name in ("p", "p_delta", "q", "s", "alpha", "sh", "f"):
            assert np.array_equal(getattr(out, name), getattr(scene, name))

    def test_loss_decreases_on_perturbed_scene(self, rng):
        truth = make_scene(rng, 20, z_range=(1.8, 3.0))
        pool = tiny_pool(rng, truth, n_views=3)
        noisy = truth.copy()
        noisy.p_delta += rng.normal(0, 0.02, noisy.p_delta.shape)
        noisy.sh += rng.normal(0, 0.05, noisy.sh.shape)

        history = []
        cfg = OptimConfig(iterations=80, batch=2)
        fitted = optimize(noisy, pool, cfg, settings=SETTINGS, seed=3,
                          on_step=lambda i, losses: history.append(losses.total))
        first = np.mean(history[:5])
        last = np.mean(history[-5:])
        assert last < first * 0.7

        view = pool[0]
        before = total_loss(render(noisy, view.cam, SETTINGS), view.rgb, view.feat)
        after = total_loss(render(fitted, view.cam, SETTINGS), view.rgb, view.feat)
        assert after.total < before.total

    def test_deterministic(self, rng):
        scene = make_scene(rng, 10)
        pool = tiny_pool(rng, scene)
        cfg = OptimConfig(iterations=15, batch=2)
        a = optimize(scene, pool, cfg, settings=SETTINGS, seed=11)
        b = optimize(scene, pool, cfg, settings=SETTINGS, seed=11)
        for name in ("p_delta", "q", "s", "alpha", "sh", "f"):
            assert np.array_equal(getattr(a, name), getattr(b, name))

    def test_csv_columns(self, rng, tmp_path):
        scene = make_scene(rng, 8)
        pool = tiny_pool(rng, scene)
        cfg = OptimConfig(iterations=6, batch=1)
        path = tmp_path / "loss.csv"
        optimize(scene, pool, cfg, settings=SETTINGS, log_csv=path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["iteration", "l1", "ssim", "feat", "total", "lr"]
        assert len(rows) == 7
        assert [r[0] for r in rows[1:]] == [str(i) for i in range(6)]
        lrs = [float(r[5]) for r in rows[1:]]
        gamma = cfg.decay()
        for i, lr in enumerate(lrs):
            assert abs(lr - cfg.lr_position * gamma ** i) < 1e-9

    def test_output_scene_valid(self, rng):
        scene = make_scene(rng, 10)
        pool = tiny_pool(rng, scene)
        cfg = OptimConfig(iterations=10, batch=3, lr_alpha=5.0)  # force clamps
        out = optimize(scene, pool, cfg, settings=SETTINGS)
        assert np.all(out.alpha > 0) and np.all(out.alpha < 1)
        assert np.all(out.s > 0)
        assert np.allclose(np.linalg.norm(out.q, axis=1), 1.0, atol=1e-12)
        out.copy()     # construction revalidates every invariant

    def test_batch_larger_than_pool(self, rng):
        scene = make_scene(rng, 6)
        pool = tiny_pool(rng, scene, n_views=2)
        cfg = OptimConfig(iterations=3, batch=8)
        optimize(scene, pool, cfg, settings=SETTINGS)

    def test_config_validation(self):
        with pytest.raises(RangeError):
            OptimConfig(iterations=-1)
        with pytest.raises(RangeError):
            OptimConfig(batch=0)
        with pytest.raises(RangeError):
            OptimConfig(gamma=1.5)
        with pytest.raises(RangeError):
            OptimConfig(lr_scale=0.0)

    def test_decay_reaches_tenth(self):
        cfg = OptimConfig(iterations=300)
        assert abs(cfg.decay() ** 300 - 0.1) < 1e-12
        assert OptimConfig(iterations=100, gamma=0.5).decay() == 0.5
if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))

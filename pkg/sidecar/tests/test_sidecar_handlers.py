import numpy as np
import pytest

from splatgrow_sidecar.handlers import (default_handlers, handle_depth,
                                        handle_embed_text, handle_fid,
                                        handle_inpaint_rgb,
                                        handle_inpaint_sem, hashed_embedding,
                                        nearest_known_fill, synthetic_depth)
from splatgrow_sidecar.wire import METHODS, decode_tensor, encode_tensor


def brute_force_fill(mask, values):
    """Oracle: per hole, scan every known pixel for min (d^2, h, w)."""
    out = np.array(values, dtype=np.float64, copy=True)
    known = np.argwhere(mask == 0)
    for h, w in np.argwhere(mask == 1):
        key = min(((int(kh - h) ** 2 + int(kw - w) ** 2, int(kh), int(kw))
                   for kh, kw in known))
        out[h, w] = out[key[1], key[2]]
    return out


class TestFill:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            h, w = rng.integers(4, 9, 2)
            mask = (rng.random((h, w)) < 0.5).astype(np.uint8)
            mask[rng.integers(h), rng.integers(w)] = 0
            values = rng.random((h, w, 2))
            got = nearest_known_fill(mask, values)
            assert np.array_equal(got, brute_force_fill(mask, values))

    def test_known_untouched(self):
        rng = np.random.default_rng(4)
        values = rng.random((6, 6, 3))
        mask = np.zeros((6, 6), dtype=np.uint8)
        mask[2:4, 2:4] = 1
        got = nearest_known_fill(mask, values)
        assert np.array_equal(got[mask == 0], values[mask == 0])

    def test_all_masked(self):
        with pytest.raises(ValueError):
            nearest_known_fill(np.ones((3, 3), dtype=np.uint8),
                               np.zeros((3, 3, 1)))


class TestStubModels:
    def test_depth_formula_and_positivity(self):
        rng = np.random.default_rng(5)
        rgb = rng.random((5, 7, 3))
        d = synthetic_depth(rgb)
        assert (d > 0).all()
        u = np.arange(7) / 6.0
        v = np.arange(5) / 4.0
        expected = 2.0 + 0.6 * u[None, :] + 0.4 * v[:, None] \
            + 0.3 * rgb.mean(axis=2)
        assert np.allclose(d, expected, atol=1e-12)

    def test_embedding_deterministic_unit_distinct(self):
        a1 = hashed_embedding("sofa", 32)
        a2 = hashed_embedding("sofa", 32)
        b = hashed_embedding("lamp", 32)
        assert np.array_equal(a1, a2)
        assert abs(np.linalg.norm(a1) - 1.0) < 1e-12
        assert abs(float(a1 @ b)) < 0.99


class TestHandlers:
    def test_registry_covers_all_methods(self):
        assert set(default_handlers()) == set(METHODS)

    def test_inpaint_rgb_preserves_known(self):
        rng = np.random.default_rng(6)
        rgb = rng.random((5, 5, 3))
        mask = np.zeros((5, 5))
        mask[1, 1] = 1
        res = handle_inpaint_rgb({"rgb": encode_tensor(rgb),
                                  "mask": encode_tensor(mask)})
        out = decode_tensor(res["rgb"])
        quant = rgb.astype("<f4").astype(np.float64)
        assert np.array_equal(out[mask == 0], quant[mask == 0])
        assert np.array_equal(out[1, 1], quant[0, 1])   # nearest, ties small

    def test_inpaint_sem_any_channel_count(self):
        rng = np.random.default_rng(7)
        feat = rng.standard_normal((4, 4, 16))
        mask = np.zeros((4, 4))
        mask[0, 3] = 1
        res = handle_inpaint_sem({"feat": encode_tensor(feat),
                                  "mask": encode_tensor(mask)})
        assert decode_tensor(res["feat"]).shape == (4, 4, 16)

    def test_shape_errors_raise(self):
        with pytest.raises(ValueError):
            handle_inpaint_rgb({"rgb": encode_tensor(np.zeros((4, 4, 2))),
                                "mask": encode_tensor(np.zeros((4, 4)))})
        with pytest.raises(ValueError):
            handle_depth({"rgb": encode_tensor(np.zeros((4, 4)))})

    def test_embed_text_validation(self):
        res = handle_embed_text({"text": "chair", "dim": 8})
        vec = decode_tensor(res["vector"])
        assert vec.shape == (8,)
        assert abs(np.linalg.norm(vec) - 1.0) < 1e-6
        with pytest.raises(ValueError):
            handle_embed_text({"text": 5, "dim": 8})
        with pytest.raises(ValueError):
            handle_embed_text({"text": "x", "dim": 0})
        with pytest.raises(ValueError):
            handle_embed_text({"text": "x", "dim": True})

    def test_fid_sentinel(self):
        assert handle_fid({}) == {"fid": -1.0}

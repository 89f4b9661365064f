import numpy as np
import pytest

from splatgrow.codec import (CategoryBank, SemanticCodec, classify, decode,
                             encode, fit_codec, load_bank, load_codec,
                             reconstruction_cosine, save_bank, save_codec,
                             semantic_loss)
from splatgrow.errors import (DegenerateData, DimensionMismatch, FormatError,
                              RangeError, ZeroVector)


def subspace_data(rng, n, d_high, rank=16, noise=0.0):
    basis = np.linalg.qr(rng.standard_normal((d_high, rank)))[0]
    x = rng.standard_normal((n, rank)) @ basis.T
    if noise:
        x = x + noise * rng.standard_normal(x.shape)
    return x


class TestCodecType:
    def test_identity(self):
        c = SemanticCodec.identity()
        x = np.random.default_rng(0).standard_normal((10, 16))
        assert np.array_equal(decode(c, encode(c, x)), x)

    def test_shape_validation(self):
        with pytest.raises(RangeError):
            SemanticCodec(enc_w=np.zeros((16, 64)), enc_b=np.zeros(16),
                          dec_w=np.zeros((32, 16)), dec_b=np.zeros(32))

    def test_encode_dim_mismatch(self):
        c = SemanticCodec.identity()
        with pytest.raises(DimensionMismatch):
            encode(c, np.zeros((4, 32)))


class TestFit:
    def test_rank16_lossless(self, rng):
        x = subspace_data(rng, 1200, 64)
        codec = fit_codec(x, iters=50)
        assert codec.fit_cosine > 0.999

    def test_too_few_rows(self, rng):
        with pytest.raises(DegenerateData):
            fit_codec(rng.standard_normal((10, 64)))

    def test_rank_deficient(self, rng):
        x = subspace_data(rng, 500, 64, rank=7)
        with pytest.raises(DegenerateData):
            fit_codec(x)

    def test_zero_rows_dropped(self, rng):
        x = subspace_data(rng, 400, 32)
        x[::7] = 0.0
        codec = fit_codec(x, iters=30)
        assert codec.fit_cosine > 0.99

    def test_noisy_data_still_fits(self, rng):
        x = subspace_data(rng, 800, 48, noise=0.01)
        codec = fit_codec(x, iters=60)
        assert codec.fit_cosine > 0.95

    def test_reconstruction_cosine_matches_fit(self, rng):
        x = subspace_data(rng, 300, 40)
        codec = fit_codec(x, iters=40)
        assert abs(reconstruction_cosine(codec, x) - codec.fit_cosine) < 1e-9


class TestClassify:
    def test_matches_brute_force(self, rng):
        d_high = 48
        codec = fit_codec(subspace_data(rng, 400, d_high), iters=30)
        bank = CategoryBank(
            names=tuple(f"c{i}" for i in range(20)),
            vectors=rng.standard_normal((20, d_high)))
        feats = rng.standard_normal((200, 16))
        for f in feats:
            got = classify(codec, f, bank)
            g = decode(codec, f[None])[0]
            cos = (bank.vectors @ g) / (
                np.linalg.norm(bank.vectors, axis=1) * np.linalg.norm(g))
            assert got.name == bank.names[int(np.argmax(cos))]
            assert abs(got.cosine - cos.max()) < 1e-12

    def test_tie_breaks_to_lowest_index(self):
        codec = SemanticCodec.identity()
        v = np.zeros(16)
        v[0] = 1.0
        bank = CategoryBank(names=("b", "a"), vectors=np.stack([v, v * 2.0]))
        # identical cosines: first bank entry wins regardless of name order
        assert classify(codec, v, bank).name == "b"

    def test_zero_vector(self):
        codec = SemanticCodec.identity()
        bank = CategoryBank(names=("x",), vectors=np.ones((1, 16)))
        with pytest.raises(ZeroVector):
            classify(codec, np.zeros(16), bank)

    def test_bank_validation(self):
        with pytest.raises(RangeError):
            CategoryBank(names=("a", "a"), vectors=np.ones((2, 8)))
        with pytest.raises(RangeError):
            CategoryBank(names=("a", "b"),
                         vectors=np.stack([np.ones(8), np.zeros(8)]))


class TestSemanticLoss:
    def test_identical_is_zero(self, rng):
        f = rng.standard_normal((30, 16))
        res = semantic_loss(f, f)
        assert res.total < 1e-12
        assert res.n_included == 30

    def test_zero_norm_targets_excluded(self, rng):
        pred = rng.standard_normal((10, 16))
        tgt = rng.standard_normal((10, 16))
        tgt[3] = 0.0
        tgt[7] = 0.0
        res = semantic_loss(pred, tgt)
        assert res.n_included == 8

    def test_hand_value(self):
        pred = np.zeros((2, 16))
        tgt = np.zeros((2, 16))
        pred[0, 0] = 1.0
        tgt[0, 1] = 1.0          # orthogonal: 1 - cos = 1
        pred[1, 2] = 2.0
        tgt[1, 2] = 5.0          # parallel: 1 - cos = 0
        res = semantic_loss(pred, tgt)
        assert abs(res.total - 1.0) < 1e-12
        assert abs(res.mean - 0.5) < 1e-12


class TestIO:
    def test_codec_roundtrip(self, tmp_path, rng):
        codec = fit_codec(subspace_data(rng, 200, 32), iters=10)
        save_codec(codec, tmp_path / "c.ogc")
        back = load_codec(tmp_path / "c.ogc")
        assert np.array_equal(back.enc_w, codec.enc_w.astype(np.float32))
        assert np.array_equal(back.dec_b, codec.dec_b.astype(np.float32))

    def test_codec_bad_magic(self, tmp_path):
        (tmp_path / "bad.ogc").write_bytes(b"XXXX" + b"\0" * 64)
        with pytest.raises(FormatError):
            load_codec(tmp_path / "bad.ogc")

    def test_bank_roundtrip(self, tmp_path, rng):
        bank = CategoryBank(names=("sofa", "lamp with spaces",),
                            vectors=rng.standard_normal((2, 24)))
        save_bank(bank, tmp_path / "b.tsv")
        back = load_bank(tmp_path / "b.tsv")
        assert back.names == bank.names
        assert np.array_equal(back.vectors,
                              bank.vectors.astype(np.float32).astype(np.float64))

    def test_bank_dim_consistency(self, tmp_path):
        import base64

        a = base64.b64encode(np.ones(4, dtype="<f4").tobytes()).decode()
        b = base64.b64encode(np.ones(5, dtype="<f4").tobytes()).decode()
        (tmp_path / "b.tsv").write_text(f"x\t{a}\ny\t{b}\n")
        with pytest.raises(FormatError):
            load_bank(tmp_path / "b.tsv")
if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))

"""End-to-end: the engine's process adapter driving this sidecar.

This is the one place the two packages meet, and they meet only through the
wire. The headline check is bit-exact known-region preservation across 50
random masks; the rest pins the stub handlers to their in-process twins.
"""

import shlex
import sys
import time

import numpy as np

from splatgrow.bridge import (InpaintJob, ProcessAdapter, StubAdapter,
                              fetch_depth, fetch_text_embedding, inpaint,
                              stub_text_embedding)
from splatgrow.cli import main as cli_main

CMD = [sys.executable, "-m", "splatgrow_sidecar"]


def random_job(rng, trial):
    h = int(rng.integers(6, 20))
    w = int(rng.integers(6, 20))
    mask = (rng.random((h, w)) < rng.uniform(0.1, 0.9)).astype(np.uint8)
    if mask.all():
        mask[int(rng.integers(h)), int(rng.integers(w))] = 0
    if not mask.any():
        mask[int(rng.integers(h)), int(rng.integers(w))] = 1
    return InpaintJob(rgb=rng.random((h, w, 3)),
                      feat=rng.standard_normal((h, w, 16)),
                      mask=mask, prompt="a room", seed=trial)


def test_known_regions_bit_exact_on_50_random_masks():
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    n_filled = 0
    with ProcessAdapter(CMD, timeout=60.0) as adapter:
        for trial in range(50):
            job = random_job(rng, trial)
            res = inpaint(adapter, job)
            known = job.mask == 0
            assert np.array_equal(res.rgb_inp[known], job.rgb[known])
            assert np.array_equal(res.feat_inp[known], job.feat[known])
            assert res.rgb_inp.shape == job.rgb.shape
            assert res.feat_inp.shape == job.feat.shape
            holes = job.mask == 1
            if holes.any():
                n_filled += int(
                    not np.array_equal(res.rgb_inp[holes], job.rgb[holes]))
    assert n_filled == 50     # every mask actually had something repainted
    print(f"[ACCEPTANCE] PASS sidecar-known-region "
          f"({time.perf_counter() - t0:.2f}s) 50/50 masks bit-exact")


def test_process_and_in_process_stubs_agree_exactly():
    rng = np.random.default_rng(123)
    stub = StubAdapter()
    with ProcessAdapter(CMD, timeout=60.0) as adapter:
        for trial in range(5):
            job = random_job(rng, trial)
            a = inpaint(adapter, job)
            b = inpaint(stub, job)
            assert np.array_equal(a.rgb_inp, b.rgb_inp)
            assert np.array_equal(a.feat_inp, b.feat_inp)


def test_depth_and_text_through_the_wire():
    rng = np.random.default_rng(9)
    rgb = rng.random((12, 16, 3))
    with ProcessAdapter(CMD, timeout=60.0) as adapter:
        depth = fetch_depth(adapter, rgb)
        assert depth.shape == (12, 16)
        assert (depth > 0).all()

        vec = fetch_text_embedding(adapter, "wooden chair", 24)
        again = fetch_text_embedding(adapter, "wooden chair", 24)
        assert np.array_equal(vec, again)
        assert abs(np.linalg.norm(vec) - 1.0) < 1e-6
        # same f32 wire values as the engine's own stub
        expected = stub_text_embedding("wooden chair", 24)
        assert np.array_equal(vec,
                              expected.astype("<f4").astype(np.float64))

        assert adapter.call("fid", {}) == {"fid": -1.0}


def test_cli_query_resolves_embedding_via_sidecar(tmp_path, monkeypatch):
    demo = tmp_path / "demo"
    assert cli_main(["demo", "--outdir", str(demo), "--size", "32",
                     "--points-per-face", "80", "--n-poses", "2",
                     "--seed", "3"]) == 0
    monkeypatch.setenv("OGG_ADAPTER_CMD",
                       " ".join(shlex.quote(c) for c in CMD))
    out = tmp_path / "query"
    rc = cli_main(["query", "--scene", str(demo / "truth.ogs"),
                   "--camera", str(demo / "base_camera.json"),
                   "--codec", str(demo / "codec.ogc"),
                   "--bank", str(demo / "bank.tsv"),
                   "--text", "velvet ottoman",       # not a bank category
                   "--outdir", str(out)])
    assert rc == 0
    assert (out / "000_heatmap.png").exists()
    assert (out / "000_mask.png").exists()
    assert (out / "query_summary.csv").exists()

import sys
import textwrap

import numpy as np
import pytest

from splatgrow import protocol
from splatgrow.bridge import (FileDepthAdapter, InpaintJob, ProcessAdapter,
                              StubAdapter, fetch_depth, fetch_text_embedding,
                              inpaint, stub_depth_map, stub_fill,
                              stub_text_embedding)
from splatgrow.errors import (AdapterFailure, AllMasked, NonPositiveDepth,
                              RangeError, ShapeMismatch)


def small_job(rng, h=8, w=8, mask=None, prompt="a room"):
    if mask is None:
        mask = np.zeros((h, w), dtype=np.uint8)
        mask[2:5, 3:7] = 1
    return InpaintJob(rgb=rng.random((h, w, 3)), feat=rng.random((h, w, 16)),
                      mask=mask, prompt=prompt)


class TestJobValidation:
    def test_shapes_checked(self, rng):
        with pytest.raises(ShapeMismatch):
            InpaintJob(rgb=rng.random((4, 4, 3)), feat=rng.random((4, 4, 8)),
                       mask=np.zeros((4, 4)), prompt="p")
        with pytest.raises(ShapeMismatch):
            InpaintJob(rgb=rng.random((4, 4, 4)), feat=rng.random((4, 4, 16)),
                       mask=np.zeros((4, 4)), prompt="p")

    def test_mask_must_be_binary(self, rng):
        m = np.zeros((4, 4))
        m[0, 0] = 0.5
        with pytest.raises(RangeError):
            InpaintJob(rgb=rng.random((4, 4, 3)), feat=rng.random((4, 4, 16)),
                       mask=m, prompt="p")


class TestStubFill:
    def test_known_pixels_untouched(self, rng):
        job = small_job(rng)
        res = stub_fill(job)
        known = job.mask == 0
        assert np.array_equal(res.rgb_inp[known], job.rgb[known])
        assert np.array_equal(res.feat_inp[known], job.feat[known])

    def test_nearest_with_tiebreak_oracle(self, rng):
        job = small_job(rng)
        res = stub_fill(job)
        known = np.argwhere(job.mask == 0)
        for h, w in np.argwhere(job.mask == 1):
            d2 = (known[:, 0] - h) ** 2 + (known[:, 1] - w) ** 2
            # smallest squared distance, then smallest (h, w) source
            keys = sorted((int(d), int(kh), int(kw))
                          for d, (kh, kw) in zip(d2, known))
            src = keys[0][1], keys[0][2]
            assert np.array_equal(res.rgb_inp[h, w], job.rgb[src])
            assert np.array_equal(res.feat_inp[h, w], job.feat[src])

    def test_depth_passthrough(self, rng):
        job = small_job(rng)
        depth = rng.random((8, 8)) + 1.0
        res = stub_fill(job, depth=depth)
        known = job.mask == 0
        assert np.array_equal(res.depth_inp[known], depth[known])

    def test_all_masked(self, rng):
        with pytest.raises(AllMasked):
            stub_fill(small_job(rng, mask=np.ones((8, 8), dtype=np.uint8)))


class TestStubModels:
    def test_depth_formula(self, rng):
        rgb = rng.random((5, 9, 3))
        d = stub_depth_map(rgb)
        u = np.arange(9) / 8.0
        v = np.arange(5) / 4.0
        want = 2.0 + 0.6 * u[None, :] + 0.4 * v[:, None] + 0.3 * rgb.mean(axis=2)
        assert np.allclose(d, want, atol=1e-12)
        assert (d > 0).all()

    def test_text_embedding_deterministic_unit(self):
        a = stub_text_embedding("a room with chair", 512)
        b = stub_text_embedding("a room with chair", 512)
        c = stub_text_embedding("a room with table", 512)
        assert np.array_equal(a, b)
        assert abs(np.linalg.norm(a) - 1.0) < 1e-12
        assert not np.array_equal(a, c)


class _RecordingAdapter(StubAdapter):
    def __init__(self):
        self.calls = []

    def call(self, method, params):
        self.calls.append(method)
        return super().call(method, params)


class _AdversarialAdapter(StubAdapter):
    """Returns garbage in the known region; the bridge must repair it."""

    def call(self, method, params):
        res = super().call(method, params)
        for key in ("rgb", "feat"):
            if key in res:
                arr = protocol.decode_tensor(res[key])
                res[key] = protocol.encode_tensor(arr + 100.0)
        return res


class TestInpaintPipeline:
    def test_known_region_preserved_against_adversary(self, rng):
        job = small_job(rng)
        res = inpaint(_AdversarialAdapter(), job)
        known = job.mask == 0
        assert np.array_equal(res.rgb_inp[known], job.rgb[known])
        assert np.array_equal(res.feat_inp[known], job.feat[known])
        assert (res.rgb_inp[job.mask == 1] > 50).all()

    def test_zero_mask_short_circuits(self, rng):
        class Exploding:
            def call(self, method, params):
                raise AssertionError("adapter must not be called")

        job = small_job(rng, mask=np.zeros((8, 8), dtype=np.uint8))
        res = inpaint(Exploding(), job)
        assert np.array_equal(res.rgb_inp, job.rgb)
        assert np.array_equal(res.feat_inp, job.feat)

    def test_rgb_then_sem_order(self, rng):
        adapter = _RecordingAdapter()
        inpaint(adapter, small_job(rng))
        assert adapter.calls == ["inpaint_rgb", "inpaint_sem"]

    def test_matches_stub_fill(self, rng):
        job = small_job(rng)
        via_adapter = inpaint(StubAdapter(), job)
        direct = stub_fill(job)
        assert np.allclose(via_adapter.rgb_inp, direct.rgb_inp, atol=1e-6)
        assert np.allclose(via_adapter.feat_inp, direct.feat_inp, atol=1e-6)

    def test_bad_result_shape(self, rng):
        class WrongShape:
            def call(self, method, params):
                return {"rgb": protocol.encode_tensor(np.zeros((2, 2, 3)))}

        with pytest.raises(AdapterFailure):
            inpaint(WrongShape(), small_job(rng))


class TestDepthAndText:
    def test_fetch_depth_stub(self, rng):
        rgb = rng.random((6, 6, 3))
        d = fetch_depth(StubAdapter(), rgb)
        assert np.allclose(d, stub_depth_map(rgb), atol=1e-6)

    def test_fetch_depth_rejects_nonpositive(self):
        adapter = FileDepthAdapter(np.zeros((4, 4)))
        with pytest.raises(NonPositiveDepth):
            fetch_depth(adapter, np.ones((4, 4, 3)))

    def test_file_depth_adapter_fallback(self, rng):
        adapter = FileDepthAdapter(np.full((4, 4), 3.0), fallback=StubAdapter())
        d = fetch_depth(adapter, rng.random((4, 4, 3)))
        assert np.array_equal(d, np.full((4, 4), 3.0))
        v = fetch_text_embedding(adapter, "hello", 32)
        assert abs(np.linalg.norm(v) - 1.0) < 1e-5

    def test_fetch_text_embedding_roundtrip(self):
        v = fetch_text_embedding(StubAdapter(), "sofa", 64)
        want = stub_text_embedding("sofa", 64)
        assert np.allclose(v, want, atol=1e-6)


FAULTY_SIDE = {
    "garbage": "import sys\nsys.stdout.write('not json at all\\n')\nsys.stdout.flush()\nsys.stdin.readline()\n",
    "exit": "import sys\nsys.stdin.readline()\nsys.exit(3)\n",
    "silent": "import sys, time\nsys.stdin.readline()\ntime.sleep(60)\n",
}


class TestProcessAdapter:
    @pytest.mark.parametrize("fault", sorted(FAULTY_SIDE))
    def test_faulty_process_raises(self, fault):
        cmd = [sys.executable, "-c", FAULTY_SIDE[fault]]
        timeout = 1.5 if fault == "silent" else 30.0
        with ProcessAdapter(cmd, timeout=timeout, retries=0) as adapter:
            with pytest.raises(AdapterFailure):
                adapter.call("fid", {})

    def test_echo_sidecar_roundtrip(self):
        code = textwrap.dedent("""
            import json, sys
            for line in sys.stdin:
                req = json.loads(line)
                out = {"id": req["id"], "result": {"fid": -1.0}}
                sys.stdout.write(json.dumps(out) + "\\n")
                sys.stdout.flush()
        """)
        with ProcessAdapter([sys.executable, "-c", code], timeout=30) as adapter:
            assert adapter.call("fid", {})["fid"] == -1.0
            assert adapter.call("fid", {})["fid"] == -1.0

    def test_error_reply_raises(self):
        code = textwrap.dedent("""
            import json, sys
            for line in sys.stdin:
                req = json.loads(line)
                out = {"id": req["id"],
                       "error": {"code": -32601, "message": "nope"}}
                sys.stdout.write(json.dumps(out) + "\\n")
                sys.stdout.flush()
        """)
        with ProcessAdapter([sys.executable, "-c", code],
                            timeout=30, retries=0) as adapter:
            with pytest.raises(AdapterFailure, match="-32601"):
                adapter.call("fid", {})

    def test_mismatched_id_raises(self):
        code = textwrap.dedent("""
            import json, sys
            for line in sys.stdin:
                req = json.loads(line)
                out = {"id": 999, "result": {}}
                sys.stdout.write(json.dumps(out) + "\\n")
                sys.stdout.flush()
        """)
        with ProcessAdapter([sys.executable, "-c", code],
                            timeout=30, retries=0) as adapter:
            with pytest.raises(AdapterFailure, match="id"):
                adapter.call("fid", {})
if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))

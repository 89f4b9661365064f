import numpy as np
import pytest

from splatgrow.cameras import Camera
from splatgrow.gaussians import GaussianScene, normalize_quat
from splatgrow.renderer import RenderSettings, render


def make_scene(rng, n, d_color=1, z_range=(1.5, 3.5), spread=0.8,
               scale=(0.08, 0.3), alpha=(0.3, 0.9)):
    return GaussianScene(
        p=np.concatenate([rng.uniform(-spread, spread, (n, 2)),
                          rng.uniform(*z_range, (n, 1))], axis=1),
        p_delta=np.zeros((n, 3)),
        q=normalize_quat(rng.standard_normal((n, 4))),
        s=rng.uniform(*scale, (n, 3)),
        alpha=rng.uniform(*alpha, n),
        sh=rng.uniform(-0.4, 0.9, (n, 3, d_color)),
        f=rng.standard_normal((n, 16)),
    )


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the numba kernels once so timed tests measure math, not JIT."""
    rng = np.random.default_rng(0)
    scene = make_scene(rng, 3)
    out = render(scene, Camera.identity(16, 16, focal=20.0),
                 RenderSettings(), with_cache=True)
    from splatgrow.renderer import render_backward

    render_backward(out, dL_drgb=np.ones_like(out.rgb))
    return True


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

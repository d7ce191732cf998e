import numpy as np
import pytest

from epigraph_splat import kernels, synthetic
from epigraph_splat.epipolar import CameraIntrinsics, CameraPose, CameraView


@pytest.fixture(params=["numpy", "numba"])
def backend(request, monkeypatch):
    """Run a test against each kernel backend by patching the dispatch table."""
    mod = kernels.get_backend(request.param)
    for name in ("refine_batch", "knn_bruteforce", "ncc_map", "volume_sum"):
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    monkeypatch.setattr(kernels, "backend", mod)
    return mod


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_view(vid, R=np.eye(3), t=(0.0, 0.0, 0.0), f=1.0, c=(0.0, 0.0), size=(10_000, 10_000)):
    return CameraView(vid, CameraIntrinsics(f, f, *c), CameraPose(np.asarray(R), np.asarray(t)), *size)


@pytest.fixture
def unit_rig():
    """K = I, second camera one unit along +x."""
    return [make_view("a"), make_view("b", t=(-1.0, 0.0, 0.0))]


@pytest.fixture
def desk_rig(rng):
    return synthetic.random_rig(rng, 2)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)

import numpy as np
import pytest

from layermerge import Checkpoint


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(number, title): acceptance criterion metadata"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    status = "PASS" if report.passed else "FAIL"
    number, title = marker.args
    item.config.pluginmanager.get_plugin("terminalreporter").write_line(
        f"acceptance criterion {number:>2} [{status}] {title}"
    )


def make_checkpoint(layer_shapes, rng, dtype=np.float64, metadata=None, prefix="layer"):
    """Checkpoint with one weight+bias group per entry of layer_shapes."""
    arrays = {}
    for i, shape in enumerate(layer_shapes):
        arrays[f"{prefix}{i}.weight"] = rng.standard_normal(shape).astype(dtype)
        arrays[f"{prefix}{i}.bias"] = rng.standard_normal(shape[0] if shape else 1).astype(dtype)
    return Checkpoint.from_arrays(arrays, metadata or {})


def clone_with_noise(ckpt, rng, scale=0.1):
    arrays = {t.name: t.data + scale * rng.standard_normal(t.data.shape).astype(t.data.dtype)
              for t in ckpt.tensors}
    return Checkpoint.from_arrays(arrays, dict(ckpt.metadata))


def random_pool(rng, model_count=None, max_groups=10, max_elements=100):
    """A pool of same-schema random checkpoints plus its group name lists."""
    m = model_count or int(rng.integers(1, 6))
    n_groups = int(rng.integers(1, max_groups + 1))
    shapes = []
    for _ in range(n_groups):
        rows = int(rng.integers(1, max(2, int(max_elements**0.5) + 1)))
        cols = int(rng.integers(1, max(2, max_elements // rows + 1)))
        shapes.append((rows, cols))
    pool = [make_checkpoint(shapes, rng) for _ in range(m)]
    groups = [[f"layer{i}.weight", f"layer{i}.bias"] for i in range(n_groups)]
    return pool, groups


def as_flat_dicts(pool):
    """Plain-Python view of a pool for the naive reference oracles."""
    return [
        {t.name: [float(v) for v in np.asarray(t.data, dtype=np.float64).ravel()]
         for t in ckpt.tensors}
        for ckpt in pool
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)

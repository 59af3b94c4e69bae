import numpy as np
import pytest

from internerf.featgrid import GridConfig
from internerf.networks import ModelSpec, NetworkSpec


def tiny_model(interpolated=("prop2", "final"), table_size=2**6, dtype_hidden=8):
    """A model small enough for finite differences and quick training."""
    return ModelSpec(
        (
            NetworkSpec("prop1", GridConfig(2, table_size, 1, 2, 5), geo_hidden=dtype_hidden,
                        interpolated="prop1" in interpolated),
            NetworkSpec("prop2", GridConfig(2, table_size, 1, 3, 6), geo_hidden=dtype_hidden,
                        interpolated="prop2" in interpolated),
            NetworkSpec("final", GridConfig(3, table_size, 2, 3, 9), geo_hidden=dtype_hidden,
                        app_hidden=(8,), dir_degree=2, interpolated="final" in interpolated),
        )
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class FixedRng:
    """Generator stand-in returning a constant (or cycling) uniform."""

    def __init__(self, values=0.5):
        self.values = np.atleast_1d(np.asarray(values, dtype=np.float64))

    def random(self, shape=None):
        if shape is None:
            return float(self.values[0])
        n = int(np.prod(shape))
        return np.resize(self.values, n).reshape(shape)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from internerf import diffnet as dn
from internerf.errors import ConfigurationError, ContractError
from internerf.featgrid import GridConfig, grid_encode, init_tables, level_is_dense
from internerf.interp import (
    bilinear,
    build_param_grid,
    mix_weights,
    mixed_grid_encode,
    mixed_linear,
    premix,
    project_origin_to_cell,
)
from internerf.networks import init_shared, init_vertex, mixed_forward, premixed_vertex

from conftest import tiny_model


def square_grid(nx=2, ny=2, per_cell=6, seed=0):
    """Cameras spread over [0, nx] x [0, ny] with ``per_cell`` per unit cell."""
    rng = np.random.default_rng(seed)
    pts = [[0.0, 0.0], [nx, ny]]
    for cy in range(ny):
        for cx in range(nx):
            pts += list(rng.uniform([cx + 0.1, cy + 0.1], [cx + 0.9, cy + 0.9], size=(per_cell, 2)))
    return build_param_grid(np.array(pts), nx, ny), np.array(pts)


class TestBuild:
    def test_single_cell(self):
        origins = np.random.default_rng(0).uniform(-1, 1, size=(9, 2))
        grid = build_param_grid(origins, 1, 1)
        assert grid.active_cells == (0,)
        assert grid.n_vertices == 4
        assert np.all(grid.camera_assignment == 0)

    def test_sparse_cell_merged(self):
        rng = np.random.default_rng(0)
        left = rng.uniform([0, 0], [0.9, 1], size=(12, 2))
        right = np.array([[1.5, 0.5], [1.9, 0.2], [2.0, 1.0]])
        grid = build_param_grid(np.vstack([left, right]), 2, 1, min_cameras=5)
        assert grid.active_cells == (0,)
        assert np.all(grid.camera_assignment == 0)

    def test_boundary_goes_to_lower_id(self):
        origins = np.array([[0, 0], [2, 1], [1, 0.5]] + [[0.5, 0.5]] * 5 + [[1.5, 0.5]] * 5, dtype=float)
        grid = build_param_grid(origins, 2, 1)
        assert grid.camera_assignment[2] == 0

    def test_no_active_cell(self):
        with pytest.raises(ConfigurationError):
            build_param_grid(np.random.default_rng(0).uniform(size=(4, 2)), 1, 1)

    def test_layout(self):
        grid, _ = square_grid(3, 2)
        assert grid.cell_vertices(4) == (5, 6, 9, 10)
        assert grid.neighbors(0, 1) == [1, 3, 4]


class TestMixWeights:
    grid, _ = square_grid(2, 2)

    def test_center(self):
        np.testing.assert_allclose(mix_weights(self.grid, 3, self.grid.cell_center(3)).w, [0.25] * 4)

    def test_corner(self):
        lo, _ = self.grid.cell_bounds(3)
        np.testing.assert_array_equal(mix_weights(self.grid, 3, lo).w, [1, 0, 0, 0])

    def test_formula(self):
        np.testing.assert_allclose(bilinear(0.25, 0.5), [0.375, 0.125, 0.375, 0.125])
        w = mix_weights(self.grid, 0, [0.25, 0.5]).w
        np.testing.assert_allclose(w, [0.375, 0.125, 0.375, 0.125])

    def test_inactive_cell(self):
        rng = np.random.default_rng(0)
        grid = build_param_grid(np.vstack([rng.uniform([0, 0], [0.9, 1], size=(12, 2)), [[2.0, 1.0]]]), 2, 1)
        with pytest.raises(ContractError):
            mix_weights(grid, 1, [1.5, 0.5])

    @given(st.floats(-1, 3), st.floats(-1, 3))
    def test_partition_of_unity(self, x, y):
        w = mix_weights(self.grid, 3, [x, y]).w
        assert np.all(w >= 0) and w.sum() == pytest.approx(1.0)


class TestProjection:
    grid, _ = square_grid(2, 2)

    def test_inside(self):
        np.testing.assert_array_equal(project_origin_to_cell(self.grid, 3, [1.3, 1.7]), [1.3, 1.7])

    def test_left(self):
        np.testing.assert_array_equal(project_origin_to_cell(self.grid, 3, [0.2, 1.5]), [1.0, 1.5])

    def test_beyond_ne(self):
        np.testing.assert_array_equal(project_origin_to_cell(self.grid, 0, [5.0, 7.0]), [1.0, 1.0])


def random_layers(rng, n_out=5, n_in=7, dtype=np.float32):
    return [dn.LinearLayer(rng.normal(size=(n_out, n_in)).astype(dtype), rng.normal(size=n_out).astype(dtype)) for _ in range(4)]


class TestMixedLinear:
    def test_identical_layers(self, rng):
        layer = random_layers(rng)[0]
        x = rng.normal(size=(3, 7)).astype(np.float32)
        w = np.array([0.1, 0.2, 0.3, 0.4], dtype=np.float32)
        np.testing.assert_allclose(mixed_linear([layer] * 4, w, x), dn.linear_apply(layer, x), rtol=1e-5, atol=1e-6)

    def test_one_hot_bit_exact(self, rng):
        layers = random_layers(rng)
        x = rng.normal(size=(3, 7)).astype(np.float32)
        for k in range(4):
            w = np.eye(4, dtype=np.float32)[k]
            assert np.array_equal(mixed_linear(layers, w, x), dn.linear_apply(layers[k], x))

    @given(st.integers(0, 2**31))
    @settings(max_examples=50)
    def test_equals_weight_mixing(self, seed):
        rng = np.random.default_rng(seed)
        layers = random_layers(rng)
        x = rng.normal(size=(4, 7)).astype(np.float32)
        w = rng.dirichlet(np.ones(4)).astype(np.float32)
        W = premix([l.W for l in layers], w)
        b = premix([l.b for l in layers], w)
        ref = x.astype(np.float64) @ W.T + b
        out = mixed_linear(layers, w, x)
        assert np.max(np.abs(out - ref) / np.maximum(np.abs(ref), 1.0)) < 1e-5

    def test_shape_mismatch(self, rng):
        layers = random_layers(rng)
        layers[2] = dn.LinearLayer(np.zeros((5, 6), np.float32), np.zeros(5, np.float32))
        with pytest.raises(ContractError):
            mixed_linear(layers, np.full(4, 0.25), np.ones(7))


class TestMixedGridEncode:
    cfg = GridConfig(3, 2**8, 2, 4, 16)  # levels 4^3, 8^3 dense? 512 > 256 so only level 0 dense

    def sets(self, rng):
        return [init_tables(self.cfg, rng, scale=1.0) for _ in range(4)]

    def test_identical_sets(self, rng):
        t = init_tables(self.cfg, rng, scale=1.0)
        x = rng.uniform(-1, 1, size=(6, 3)).astype(np.float32)
        w = rng.dirichlet(np.ones(4)).astype(np.float32)
        np.testing.assert_allclose(mixed_grid_encode([t] * 4, t, self.cfg, w, x), grid_encode(t, self.cfg, x), rtol=1e-5, atol=1e-6)

    def test_one_hot(self, rng):
        sets = self.sets(rng)
        x = rng.uniform(-1, 1, size=(6, 3)).astype(np.float32)
        for k in range(4):
            out = mixed_grid_encode(sets, sets[k], self.cfg, np.eye(4)[k], x)
            assert np.array_equal(out, grid_encode(sets[k], self.cfg, x))

    def test_constants_average(self, rng):
        dense = level_is_dense(self.cfg)
        sets = [[np.full_like(t, c) for t in init_tables(self.cfg, rng)] for c in (1.0, 2.0, 4.0, 9.0)]
        x = rng.uniform(-1, 1, size=(5, 3)).astype(np.float32)
        out = mixed_grid_encode(sets, sets[0], self.cfg, np.full(4, 0.25), x)
        for level, is_dense in enumerate(dense):
            expect = 1.0 if is_dense else 4.0
            np.testing.assert_allclose(out[:, 2 * level : 2 * level + 2], expect, rtol=1e-6)

    def test_level_mismatch(self, rng):
        sets = self.sets(rng)
        sets[1] = sets[1][:-1]
        with pytest.raises(ContractError):
            mixed_grid_encode(sets, sets[0], self.cfg, np.full(4, 0.25), np.zeros((1, 3)))


class TestMixedForward:
    spec = tiny_model()

    def params(self, seed=0):
        return init_shared(self.spec, seed), [init_vertex(self.spec, seed, v) for v in range(4)]

    def test_one_hot_matches_unmixed(self, rng):
        shared, sets = self.params()
        x = rng.uniform(-1, 1, size=(8, 3)).astype(np.float32)
        d = rng.normal(size=(8, 3))
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        for k in range(4):
            mixed = mixed_forward(self.spec, sets, shared, np.eye(4, dtype=np.float32)[k], x, d)
            single = mixed_forward(self.spec, [sets[k]], shared, None, x, d)
            assert np.array_equal(mixed.tau, single.tau) and np.array_equal(mixed.rgb, single.rgb)

    @pytest.mark.parametrize("seed", range(10))
    def test_premixed_equivalence(self, seed):
        rng = np.random.default_rng(seed)
        shared, sets = self.params(seed)
        # scale up so mixing differences are visible in the outputs
        for s in sets:
            for k in s:
                s[k] *= np.float32(200.0 if ".grid." in k else 1.0)
        w = rng.dirichlet(np.ones(4)).astype(np.float32)
        x = rng.uniform(-1, 1, size=(10, 3)).astype(np.float32)
        d = rng.normal(size=(10, 3))
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        pm = {k: v.astype(np.float32) for k, v in premixed_vertex(sets, w).items()}
        mixed = mixed_forward(self.spec, sets, shared, w, x, d)
        single = mixed_forward(self.spec, [pm], shared, None, x, d)
        assert np.abs(mixed.tau - single.tau).max() < 1e-5
        assert np.abs(mixed.rgb - single.rgb).max() < 1e-5

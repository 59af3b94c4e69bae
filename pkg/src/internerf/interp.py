"""Camera-space parameter grid and bilinear parameter mixing.

Parameters are anchored at the vertices of an ``N_x x N_y`` lattice laid over
the 2D bounding box of training-camera origins (the vertical axis is not
partitioned). A camera origin inside a cell selects that cell's four corner
parameter sets, blended with bilinear weights. Mixing is done layer by layer:
each affine layer is evaluated with all four parameter sets and the outputs
are blended, which equals evaluating one layer with blended parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import diffnet as dn
from .errors import ConfigurationError, ContractError
from .featgrid import GridConfig, gather_corners, level_corners, level_is_dense, level_resolutions

CORNERS = ("SW", "SE", "NW", "NE")

_SNAP = 1e-9


def _snap(g):
    r = np.rint(g)
    return np.where(np.abs(g - r) <= _SNAP * np.maximum(1.0, np.abs(r)), r, g)


@dataclass
class ParamGrid:
    """Partition of the camera bounding box into ``nx * ny`` cells.

    Cells are numbered row-major, ``cell = cy * nx + cx``; vertices likewise
    with ``nx + 1`` per row. ``camera_assignment[c]`` is the active cell that
    owns camera ``c``.
    """

    aabb_min: np.ndarray
    aabb_max: np.ndarray
    nx: int
    ny: int
    active_cells: tuple
    camera_assignment: np.ndarray
    min_cameras: int = 5
    origins: np.ndarray = field(default=None, repr=False)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_vertices(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def cell_size(self) -> np.ndarray:
        return (self.aabb_max - self.aabb_min) / np.array([self.nx, self.ny])

    @property
    def vertex_ids(self) -> dict:
        return {(i, j): self.vertex_id(i, j) for j in range(self.ny + 1) for i in range(self.nx + 1)}

    def vertex_id(self, i: int, j: int) -> int:
        return j * (self.nx + 1) + i

    def vertex_ij(self, vid: int) -> tuple:
        return vid % (self.nx + 1), vid // (self.nx + 1)

    def cell_id(self, cx: int, cy: int) -> int:
        return cy * self.nx + cx

    def cell_coords(self, cell: int) -> tuple:
        if not 0 <= cell < self.n_cells:
            raise ContractError(f"cell {cell} outside a {self.nx}x{self.ny} grid")
        return cell % self.nx, cell // self.nx

    def cell_bounds(self, cell: int):
        cx, cy = self.cell_coords(cell)
        size = self.cell_size
        lo = self.aabb_min + size * np.array([cx, cy])
        hi = self.aabb_min + size * np.array([cx + 1, cy + 1])
        return lo, hi

    def cell_center(self, cell: int) -> np.ndarray:
        lo, hi = self.cell_bounds(cell)
        return 0.5 * (lo + hi)

    def cell_vertices(self, cell: int) -> tuple:
        """Vertex ids of the (SW, SE, NW, NE) corners."""
        cx, cy = self.cell_coords(cell)
        v = self.vertex_id
        return v(cx, cy), v(cx + 1, cy), v(cx, cy + 1), v(cx + 1, cy + 1)

    def is_active(self, cell: int) -> bool:
        return cell in self.active_cells

    def lattice_coords(self, xy) -> np.ndarray:
        """Continuous grid coordinates; integers fall on cell edges."""
        xy = np.asarray(xy, dtype=np.float64)
        return _snap((xy - self.aabb_min) / self.cell_size)

    def locate(self, xy):
        """Cell containing each point; points on shared edges go to the lower id."""
        g = self.lattice_coords(xy)
        c = np.ceil(g).astype(np.int64) - 1
        cx = np.clip(c[..., 0], 0, self.nx - 1)
        cy = np.clip(c[..., 1], 0, self.ny - 1)
        return cy * self.nx + cx

    def cameras_in(self, cell: int) -> np.ndarray:
        return np.flatnonzero(self.camera_assignment == cell)

    def camera_counts(self) -> dict:
        return {c: int(np.sum(self.camera_assignment == c)) for c in self.active_cells}

    def nearest_active(self, xy) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        active = np.array(self.active_cells)
        centers = np.array([self.cell_center(c) for c in active])
        d = np.linalg.norm(xy[:, None, :] - centers[None], axis=-1)
        return active[np.argmin(d, axis=1)]  # argmin keeps the lowest id on ties

    def chebyshev(self, a: int, b: int) -> int:
        ax, ay = self.cell_coords(a)
        bx, by = self.cell_coords(b)
        return max(abs(ax - bx), abs(ay - by))

    def neighbors(self, cell: int, k: int) -> list:
        return [c for c in self.active_cells if c != cell and self.chebyshev(c, cell) <= k]

    def query_cell(self, xy):
        """Cell and projected origin for an arbitrary (e.g. test-time) camera.

        The origin is clamped into the bounding box; if the cell found there
        is inactive the nearest active cell is used instead.
        """
        xy = np.clip(np.asarray(xy, dtype=np.float64), self.aabb_min, self.aabb_max)
        cell = int(self.locate(xy))
        if not self.is_active(cell):
            cell = int(self.nearest_active(xy)[0])
        return cell, project_origin_to_cell(self, cell, xy)


def build_param_grid(origins, nx: int, ny: int, min_cameras: int = 5) -> ParamGrid:
    """Lay a grid over camera origins and decide which cells are instantiated.

    Args:
      origins: [N, 2] or [N, 3] camera origins; only x and y are used.
      nx, ny: cell counts along x and y.
      min_cameras: cells owning fewer cameras stay inactive; their cameras
        move to the nearest active cell (by cell-center distance).
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))[:, :2]
    if len(origins) == 0:
        raise ConfigurationError("need at least one camera")
    if nx < 1 or ny < 1:
        raise ConfigurationError("grid needs at least one cell per axis")
    lo, hi = origins.min(axis=0), origins.max(axis=0)
    flat = hi - lo < 1e-9
    lo = np.where(flat, lo - 5e-4, lo)
    hi = np.where(flat, hi + 5e-4, hi)

    grid = ParamGrid(lo, hi, nx, ny, (), np.zeros(len(origins), dtype=np.int64), min_cameras, origins)
    raw = grid.locate(origins)
    counts = np.bincount(raw, minlength=nx * ny)
    active = tuple(int(c) for c in np.flatnonzero(counts >= min_cameras))
    if not active:
        raise ConfigurationError(
            f"no cell of the {nx}x{ny} grid holds {min_cameras} cameras (max {counts.max()})"
        )
    grid.active_cells = active
    assignment = raw.copy()
    stray = ~np.isin(raw, active)
    if np.any(stray):
        assignment[stray] = grid.nearest_active(origins[stray])
    grid.camera_assignment = assignment
    return grid


@dataclass
class MixWeights:
    """Four corner vertex ids and their bilinear weights (``[4]`` or ``[N, 4]``)."""

    vertices: tuple
    w: np.ndarray


def bilinear(u, v) -> np.ndarray:
    u, v = np.asarray(u), np.asarray(v)
    return np.stack([(1 - u) * (1 - v), u * (1 - v), (1 - u) * v, u * v], axis=-1)


def mix_weights(grid: ParamGrid, cell: int, origin_xy) -> MixWeights:
    """Bilinear coefficients of the cell corners at ``origin_xy``.

    Origins outside the cell are first projected onto it.
    """
    if not grid.is_active(cell):
        raise ContractError(f"cell {cell} is not active")
    cx, cy = grid.cell_coords(cell)
    g = grid.lattice_coords(np.asarray(origin_xy, dtype=np.float64)[..., :2])
    u = np.clip(g[..., 0] - cx, 0.0, 1.0)
    v = np.clip(g[..., 1] - cy, 0.0, 1.0)
    return MixWeights(grid.cell_vertices(cell), bilinear(u, v))


def project_origin_to_cell(grid: ParamGrid, cell: int, origin_xy) -> np.ndarray:
    """Closest point of the closed cell rectangle."""
    lo, hi = grid.cell_bounds(cell)
    return np.clip(np.asarray(origin_xy, dtype=np.float64)[..., :2], lo, hi)


# -- mixed evaluation --------------------------------------------------------


def _weight_column(w, k, like):
    w = np.asarray(w)
    if w.ndim == 1:
        return w[k].astype(dn.value_of(like).dtype)
    return w[:, k : k + 1].astype(dn.value_of(like).dtype)


def blend(values: Sequence, w):
    """``sum_k w_k * values[k]`` with per-row (``[N, 4]``) or global (``[4]``) weights.

    Sets whose weight is zero everywhere are skipped.
    """
    w = np.asarray(w)
    out = None
    for k, val in enumerate(values):
        col = w[..., k]
        if out is not None and not np.any(col):
            continue
        term = dn.mul(val, _weight_column(w, k, val))
        out = term if out is None else dn.add(out, term)
    return out


def mixed_linear(layers: Sequence[dn.LinearLayer], w, x):
    """Blend of four affine layers' outputs at the same input."""
    if len(layers) != 4:
        raise ContractError("mixing needs exactly four layers")
    shapes = {(l.out_width, l.in_width) for l in layers}
    if len(shapes) != 1:
        raise ContractError(f"layers differ in shape: {sorted(shapes)}")
    w = np.asarray(w)
    return blend([dn.linear_apply(layer, x) for layer in layers], w)


@dataclass
class MixedLinear:
    layers: Sequence[dn.LinearLayer]
    w: np.ndarray

    def __call__(self, x):
        return mixed_linear(self.layers, self.w, x)


def mixed_grid_encode(tables: Sequence[Sequence], shared: Sequence, config: GridConfig, w, x):
    """Features with hashed levels blended across four table sets.

    Args:
      tables: four per-level table lists; entries at dense levels are ignored.
      shared: per-level tables supplying the dense levels (hashed entries ignored).
      config: grid layout common to all sets.
      w: ``[4]`` or ``[P, 4]`` mixing weights.
      x: ``[P, 3]`` points.
    """
    if len(tables) != 4:
        raise ContractError("mixing needs exactly four table sets")
    dense = level_is_dense(config)
    for t in list(tables) + [shared]:
        if len(t) != config.levels:
            raise ContractError(f"table set has {len(t)} levels, config has {config.levels}")
    for level, is_dense in enumerate(dense):
        src = [shared] if is_dense else tables
        shapes = {np.shape(dn.value_of(t[level])) for t in src}
        if len(shapes) != 1:
            raise ContractError(f"level {level} tables disagree in shape: {sorted(shapes)}")
    xv = dn.value_of(x)
    feats = []
    for level, (res, is_dense) in enumerate(zip(level_resolutions(config), dense)):
        corners = level_corners(xv, res, is_dense, config.table_size)
        if is_dense:
            feats.append(gather_corners(shared[level], corners))
        else:
            feats.append(blend([gather_corners(t[level], corners) for t in tables], w))
    return dn.concat(feats, axis=-1)


def premix(values: Sequence[np.ndarray], w) -> np.ndarray:
    """Explicit parameter mixing ``sum_k w_k * values[k]`` for a single weight vector."""
    return sum(float(wk) * np.asarray(v, dtype=np.float64) for wk, v in zip(w, values))

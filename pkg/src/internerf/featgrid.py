"""Multiresolution feature grids: dense coarse levels, hashed fine levels.

Positions live in the scene box ``[-1, 1]^3``. A level of resolution ``R``
has ``R`` lattice vertices per axis; a query is trilinearly interpolated from
the eight vertices of its lattice cell. Coarse levels with ``R^3`` at most
``dense_threshold`` entries are addressed densely, finer levels go through
:func:`hash_index` into ``table_size`` buckets.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import diffnet as dn
from .errors import ContractError

HASH_PRIMES = (1, 2654435761, 805459861)

MODE_DENSE = 0
MODE_HASH = 1


@dataclass(frozen=True)
class GridConfig:
    levels: int
    table_size: int
    features_per_entry: int
    base_resolution: int
    finest_resolution: int
    dense_threshold: Optional[int] = None

    def __post_init__(self):
        if self.levels < 1:
            raise ContractError("a grid needs at least one level")
        if self.table_size < 1 or self.table_size & (self.table_size - 1):
            raise ContractError(f"table_size {self.table_size} is not a power of two")
        if not 2 <= self.base_resolution <= self.finest_resolution:
            raise ContractError("need 2 <= base_resolution <= finest_resolution")
        if self.levels == 1 and self.base_resolution != self.finest_resolution:
            raise ContractError("a single level needs base_resolution == finest_resolution")

    @property
    def threshold(self) -> int:
        return self.table_size if self.dense_threshold is None else self.dense_threshold

    @property
    def output_width(self) -> int:
        return self.levels * self.features_per_entry


def level_resolutions(config: GridConfig) -> list[int]:
    """Geometric progression of per-level resolutions, rounded to integers."""
    L, lo, hi = config.levels, config.base_resolution, config.finest_resolution
    if L == 1:
        return [lo]
    growth = np.exp((np.log(hi) - np.log(lo)) / (L - 1))
    res = [int(np.rint(lo * growth**level)) for level in range(L)]
    res[0], res[-1] = lo, hi
    return [int(r) for r in np.maximum.accumulate(res)]


def level_is_dense(config: GridConfig) -> list[bool]:
    return [r**3 <= config.threshold for r in level_resolutions(config)]


def level_entries(config: GridConfig) -> list[int]:
    return [
        r**3 if dense else config.table_size
        for r, dense in zip(level_resolutions(config), level_is_dense(config))
    ]


def hash_index(cell, table_size: int):
    """XOR of prime-scaled integer coordinates, masked into the table."""
    cell = np.asarray(cell, dtype=np.int64).astype(np.uint64)
    h = np.zeros(cell.shape[:-1], dtype=np.uint64)
    for axis, prime in enumerate(HASH_PRIMES):
        h ^= cell[..., axis] * np.uint64(prime)
    out = h & np.uint64(table_size - 1)
    return out.astype(np.int64) if out.ndim else int(out)


def _dense_index(cell, resolution):
    return cell[..., 0] + resolution * (cell[..., 1] + resolution * cell[..., 2])


_CORNER_BITS = np.array([[(c >> a) & 1 for a in range(3)] for c in range(8)], dtype=np.int64)


@dataclass
class Corners:
    """Lattice lookup shared by every table of one level."""

    index: np.ndarray  # [P, 8] entry ids
    weight: np.ndarray  # [P, 8] trilinear weights
    frac: np.ndarray  # [P, 3] offsets inside the cell
    scale: float  # d(lattice coordinate) / d(x)

    @property
    def flat_index(self) -> np.ndarray:
        if not hasattr(self, "_flat"):
            self._flat = self.index.ravel()
        return self._flat


def level_corners(x, resolution: int, dense: bool, table_size: int) -> Corners:
    x = np.asarray(x)
    if np.any(np.abs(x) > 1):
        raise ContractError("sample point outside the scene box [-1, 1]^3")
    scale = 0.5 * (resolution - 1)
    g = (x + 1) * scale
    base = np.clip(np.floor(g).astype(np.int64), 0, resolution - 2)
    frac = (g - base).astype(x.dtype, copy=False)
    b0, b1, b2 = _CORNER_BITS.T
    # per-axis terms for the low (0) and high (1) corner, combined below
    lohi = np.stack([base, base + 1], axis=1)  # [P, 2, 3]
    if dense:
        index = lohi[:, b0, 0] + resolution * (lohi[:, b1, 1] + resolution * lohi[:, b2, 2])
    else:
        h = lohi.astype(np.uint64) * np.array(HASH_PRIMES, dtype=np.uint64)
        index = (h[:, b0, 0] ^ h[:, b1, 1] ^ h[:, b2, 2]) & np.uint64(table_size - 1)
        index = index.astype(np.int64)
    w = np.stack([1 - frac, frac], axis=1)  # [P, 2, 3]
    weight = w[:, b0, 0] * w[:, b1, 1] * w[:, b2, 2]
    return Corners(index, weight, frac, scale)


def _gather(table, corners: Corners):
    return np.einsum("pc,pcf->pf", corners.weight, table[corners.index])


def _scatter(g, corners: Corners, n_entries: int, dtype):
    flat = corners.flat_index
    out = np.empty((n_entries, g.shape[-1]), dtype=dtype)
    for f in range(g.shape[-1]):
        contrib = (corners.weight * g[:, f : f + 1]).ravel()
        out[:, f] = np.bincount(flat, weights=contrib, minlength=n_entries)
    return out


def gather_corners(table, corners: Corners):
    """Interpolated features from one table; differentiable in the table."""

    def vjp(g, out, tv):
        return (_scatter(g, corners, tv.shape[0], tv.dtype),)

    return dn._record(lambda tv: _gather(tv, corners), vjp, table)


def trilerp(table, x, resolution: int, dense: bool, table_size: int):
    """Trilinear lookup of points ``x`` [P, 3]; differentiable in table and x."""
    xv = dn.value_of(x)
    corners = level_corners(xv, resolution, dense, table_size)
    if not isinstance(x, dn.Var):
        return gather_corners(table, corners)

    def fwd(tv, xv_):
        c = corners if xv_ is xv else level_corners(xv_, resolution, dense, table_size)
        return _gather(tv, c)

    def vjp(g, out, tv, xv_):
        vals = tv[corners.index]  # [P, 8, F]
        dot = np.einsum("pf,pcf->pc", g, vals)  # [P, 8]
        f = corners.frac[:, None, :]
        bits = _CORNER_BITS[None].astype(bool)
        per_axis = np.where(bits, f, 1 - f)
        dsign = np.where(bits, 1.0, -1.0)
        gx = np.empty_like(corners.frac)
        for a in range(3):
            others = np.prod(np.delete(per_axis, a, axis=-1), axis=-1)
            gx[:, a] = np.sum(dot * dsign[..., a] * others, axis=-1)
        return _scatter(g, corners, tv.shape[0], tv.dtype), gx * corners.scale

    return dn._record(fwd, vjp, table, x)


def init_tables(config: GridConfig, rng, scale=1e-4, dtype=np.float32) -> list[np.ndarray]:
    return [
        rng.uniform(-scale, scale, size=(n, config.features_per_entry)).astype(dtype)
        for n in level_entries(config)
    ]


def check_tables(tables: Sequence, config: GridConfig):
    if len(tables) != config.levels:
        raise ContractError(f"expected {config.levels} level tables, got {len(tables)}")
    for level, (t, n) in enumerate(zip(tables, level_entries(config))):
        if np.shape(dn.value_of(t)) != (n, config.features_per_entry):
            raise ContractError(
                f"level {level} table has shape {np.shape(dn.value_of(t))}, "
                f"expected {(n, config.features_per_entry)}"
            )


def grid_encode(tables: Sequence, config: GridConfig, x):
    """Concatenated per-level features for points ``x`` ([3] or [P, 3]).

    Returns an array (or Var) of width ``levels * features_per_entry``.
    """
    check_tables(tables, config)
    single = np.ndim(dn.value_of(x)) == 1
    if single:
        x = dn.reshape(x, (1, 3))
    feats = [
        trilerp(t, x, r, dense, config.table_size)
        for t, r, dense in zip(tables, level_resolutions(config), level_is_dense(config))
    ]
    z = dn.concat(feats, axis=-1)
    return dn.reshape(z, (config.output_width,)) if single else z


# -- serialization -----------------------------------------------------------


def tables_to_bytes(tables: Sequence[np.ndarray], config: GridConfig) -> bytes:
    """Descriptor (level count, per-level mode/entries/features) then LE float32 data."""
    check_tables(tables, config)
    dense = level_is_dense(config)
    head = [struct.pack("<I", config.levels)]
    for t, d in zip(tables, dense):
        head.append(struct.pack("<III", MODE_DENSE if d else MODE_HASH, t.shape[0], t.shape[1]))
    body = [np.ascontiguousarray(t, dtype="<f4").tobytes() for t in tables]
    return b"".join(head + body)


def tables_from_bytes(data: bytes) -> tuple[list[np.ndarray], list[int]]:
    """Inverse of :func:`tables_to_bytes`; returns tables and per-level modes."""
    (levels,) = struct.unpack_from("<I", data, 0)
    offset = 4
    layout = []
    for _ in range(levels):
        layout.append(struct.unpack_from("<III", data, offset))
        offset += 12
    tables, modes = [], []
    for mode, n, f in layout:
        count = n * f
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(n, f)
        tables.append(arr.astype(np.float32))
        modes.append(mode)
        offset += 4 * count
    if offset != len(data):
        raise ContractError("trailing bytes after feature tables")
    return tables, modes

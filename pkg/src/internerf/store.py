"""Disk-backed vertex parameter store and the checkpoint directory format.

Binary payloads (``*.bin`` parameters, ``*.opt`` Adam state) start with the
8-byte header ``b"INRF"`` + little-endian u32 version, followed by
little-endian float32 values in the canonical parameter order recorded in
``meta.json``. ``.opt`` payloads hold the Adam step count (as one float)
then every first moment, then every second moment.
"""

from __future__ import annotations

import json
import os
import shutil
import struct
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import ContractError, StoreError
from .optim import AdamState

MAGIC = b"INRF"
VERSION = 1
HEADER = MAGIC + struct.pack("<I", VERSION)


def pack_arrays(arrays) -> bytes:
    body = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    return HEADER + body


def unpack_arrays(data: bytes, shapes, what="payload") -> list:
    if len(data) < 8 or data[:4] != MAGIC:
        raise StoreError(f"{what}: bad magic")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise StoreError(f"{what}: unsupported version {version}")
    expected = 8 + 4 * sum(int(np.prod(s)) for s in shapes)
    if len(data) != expected:
        raise StoreError(f"{what}: {len(data)} bytes, expected {expected}")
    out, offset = [], 8
    for s in shapes:
        n = int(np.prod(s))
        out.append(np.frombuffer(data, dtype="<f4", count=n, offset=offset).astype(np.float32).reshape(s))
        offset += 4 * n
    return out


def write_params(path: Path, params: dict, shapes: dict):
    _atomic_write(path, pack_arrays(params[k] for k in shapes))


def read_params(path: Path, shapes: dict, what=None) -> dict:
    data = _read(path, what)
    return dict(zip(shapes, unpack_arrays(data, list(shapes.values()), what or str(path))))


def write_adam(path: Path, state: AdamState, shapes: dict):
    arrays = [np.array([state.step], dtype=np.float32)]
    arrays += [state.m[k] for k in shapes] + [state.v[k] for k in shapes]
    _atomic_write(path, pack_arrays(arrays))


def read_adam(path: Path, shapes: dict, what=None) -> AdamState:
    data = _read(path, what)
    arrays = unpack_arrays(data, [(1,)] + list(shapes.values()) * 2, what or str(path))
    n = len(shapes)
    return AdamState(dict(zip(shapes, arrays[1 : 1 + n])), dict(zip(shapes, arrays[1 + n :])), int(arrays[0][0]))


def _read(path: Path, what=None) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise StoreError(f"{what or path}: cannot read {path}: {exc}") from exc


def _atomic_write(path: Path, data: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def vertex_stem(grid, vid: int) -> str:
    i, j = grid.vertex_ij(vid)
    return f"vertex_{i}_{j}"


class VertexState:
    __slots__ = ("params", "adam")

    def __init__(self, params: dict, adam: AdamState):
        self.params = params
        self.adam = adam


class ParamStore:
    """Holds the interpolated parameter sets of at most one cell in memory.

    With ``in_core=True`` every vertex set stays in memory and load/unload
    only move the resident pointer; the numerical results are identical.

    Args:
      root: directory holding ``vertex_<i>_<j>.bin`` / ``.opt`` files.
      grid: the :class:`~internerf.interp.ParamGrid` whose vertices are stored.
      shapes: canonical vertex parameter shapes.
      init_vertex: ``vid -> params`` deterministic initializer for fresh vertices.
    """

    def __init__(self, root, grid, shapes: dict, init_vertex: Callable[[int], dict], in_core=False):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.grid = grid
        self.shapes = dict(shapes)
        self.init_vertex = init_vertex
        self.in_core = in_core
        self.resident_cell: Optional[int] = None
        self.resident: dict = {}
        self._memory: dict = {}
        self._written = {
            vid for vid in range(grid.n_vertices) if self._path(vid, ".bin").exists()
        }

    def _path(self, vid: int, suffix: str) -> Path:
        return self.root / (vertex_stem(self.grid, vid) + suffix)

    def _fresh(self, vid: int) -> VertexState:
        params = self.init_vertex(vid)
        return VertexState(params, AdamState.zeros_like(params))

    def _read_vertex(self, vid: int) -> VertexState:
        what = f"vertex {vid} ({vertex_stem(self.grid, vid)})"
        if vid not in self._written:
            return self._fresh(vid)
        bin_path, opt_path = self._path(vid, ".bin"), self._path(vid, ".opt")
        if not bin_path.exists() or not opt_path.exists():
            raise StoreError(f"{what}: missing parameter or optimizer file")
        params = read_params(bin_path, self.shapes, what)
        adam = read_adam(opt_path, self.shapes, what)
        return VertexState(params, adam)

    def _write_vertex(self, vid: int, state: VertexState):
        write_params(self._path(vid, ".bin"), state.params, self.shapes)
        write_adam(self._path(vid, ".opt"), state.adam, self.shapes)
        self._written.add(vid)

    def load_cell(self, cell: int) -> list:
        """Make the cell's four vertex sets resident; returns them in corner order."""
        if self.resident_cell is not None:
            if self.resident_cell == cell:
                return self.cell_states()
            raise ContractError(f"cell {self.resident_cell} is resident; unload it before loading {cell}")
        if not self.grid.is_active(cell):
            raise ContractError(f"cell {cell} is not active")
        resident = {}
        for vid in self.grid.cell_vertices(cell):
            if self.in_core:
                if vid not in self._memory:
                    self._memory[vid] = self._fresh(vid)
                resident[vid] = self._memory[vid]
            else:
                resident[vid] = self._read_vertex(vid)
        self.resident = resident
        self.resident_cell = cell
        return self.cell_states()

    def unload_cell(self):
        if self.resident_cell is None:
            raise ContractError("no cell is resident")
        if not self.in_core:
            for vid, state in self.resident.items():
                self._write_vertex(vid, state)
        self.resident = {}
        self.resident_cell = None

    def cell_states(self) -> list:
        return [self.resident[v] for v in self.grid.cell_vertices(self.resident_cell)]

    def vertex_state(self, vid: int) -> VertexState:
        """Current state of any vertex (resident, in memory, on disk or fresh)."""
        if vid in self.resident:
            return self.resident[vid]
        if self.in_core:
            return self._memory.get(vid) or self._fresh(vid)
        return self._read_vertex(vid)

    def used_vertices(self) -> list:
        vids = set()
        for cell in self.grid.active_cells:
            vids.update(self.grid.cell_vertices(cell))
        return sorted(vids)

    def export(self, directory):
        """Write every used vertex's current parameters and Adam state to ``directory``."""
        directory = Path(directory)
        for vid in self.used_vertices():
            state = self.vertex_state(vid)
            stem = vertex_stem(self.grid, vid)
            write_params(directory / f"{stem}.bin", state.params, self.shapes)
            write_adam(directory / f"{stem}.opt", state.adam, self.shapes)


# -- checkpoint directory ----------------------------------------------------


def write_checkpoint(directory, meta: dict, shared: dict, shared_adam: AdamState, shared_shapes: dict, store: ParamStore):
    """Atomically write ``meta.json``, shared and vertex payloads into ``directory``.

    When ``directory`` is the store root, vertex files already on disk are
    refreshed in place.
    """
    directory = Path(directory)
    if directory.resolve() == store.root.resolve():
        directory.mkdir(parents=True, exist_ok=True)
        _write_shared(directory, meta, shared, shared_adam, shared_shapes)
        store.export(directory)
        return directory
    tmp = directory.with_name(directory.name + ".partial")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    _write_shared(tmp, meta, shared, shared_adam, shared_shapes)
    store.export(tmp)
    if directory.exists():
        shutil.rmtree(directory)
    os.replace(tmp, directory)
    return directory


def _write_shared(directory: Path, meta, shared, shared_adam, shared_shapes):
    write_params(directory / "shared.bin", shared, shared_shapes)
    write_adam(directory / "shared.opt", shared_adam, shared_shapes)
    _atomic_write(directory / "meta.json", json.dumps(meta, indent=2, sort_keys=True).encode())


def read_meta(directory) -> dict:
    path = Path(directory) / "meta.json"
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise StoreError(f"cannot read {path}: {exc}") from exc

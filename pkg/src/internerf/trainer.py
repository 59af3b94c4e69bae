"""Losses, cell scheduling, ray batches and the cell-by-cell training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import diffnet as dn
from .dataset import Dataset
from .errors import ConfigurationError, ContractError
from .featgrid import GridConfig, level_is_dense
from .interp import ParamGrid, build_param_grid, mix_weights
from .networks import (
    Field,
    ModelSpec,
    NetworkSpec,
    init_shared,
    init_vertex,
    shared_shapes,
    vertex_shapes,
)
from .optim import AdamState, adam_step, lr_at
from .render import RayBundle, camera_rays, image_pixels, render_rays
from .store import ParamStore, write_checkpoint

log = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "cell", "loss", "photometric", "reg", "unity", "proposal", "lr")


def desk_model(table_size=2**14, interpolate=("prop2", "final")) -> ModelSpec:
    """Laptop-sized three-network model."""
    return ModelSpec(
        (
            NetworkSpec("prop1", GridConfig(4, table_size, 1, 8, 64), geo_hidden=16,
                        interpolated="prop1" in interpolate),
            NetworkSpec("prop2", GridConfig(5, table_size, 1, 8, 128), geo_hidden=16,
                        interpolated="prop2" in interpolate),
            NetworkSpec("final", GridConfig(6, table_size, 2, 16, 256), geo_hidden=32, app_hidden=(32,),
                        dir_degree=4, interpolated="final" in interpolate),
        )
    )


def paper_model() -> ModelSpec:
    """Full-size layout of the multi-room configuration (not runnable on a laptop)."""
    return ModelSpec(
        (
            NetworkSpec("prop1", GridConfig(7, 2**21, 1, 16, 1024), geo_hidden=64),
            NetworkSpec("prop2", GridConfig(9, 2**19, 1, 16, 4096), geo_hidden=64, interpolated=True),
            NetworkSpec("final", GridConfig(11, 2**19, 4, 16, 16384), geo_hidden=64,
                        app_hidden=(256, 256, 256, 256), interpolated=True),
        )
    )


@dataclass
class TrainConfig:
    batch_size: int = 512
    p_r: float = 0.3
    k_r: int = 1
    total_steps: int = 2000
    lr_init: float = 3e-2
    lr_final: float = 3e-3
    warmup_steps: int = 100
    warmup_init: float = 1e-8
    reg_prop: float = 0.001
    reg_final: float = 0.1
    unity_weight: float = 0.01
    proposal_weight: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-15
    seed: int = 0
    min_cameras: int = 5
    samples: tuple = (32, 32, 16)
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0 <= self.p_r <= 1:
            raise ConfigurationError("p_r must lie in [0, 1]")
        if self.k_r < 0:
            raise ConfigurationError("k_r must be nonnegative")
        if self.total_steps > 0 and self.warmup_steps >= self.total_steps:
            raise ConfigurationError("warmup_steps must be smaller than total_steps")
        self.samples = tuple(int(s) for s in self.samples)

    @classmethod
    def paper(cls) -> "TrainConfig":
        return cls(batch_size=2**16, total_steps=400_000, warmup_steps=2500, lr_init=1e-2, lr_final=1e-3)

    def lr(self, step: int) -> float:
        return lr_at(step, self.total_steps, self.lr_init, self.lr_final, self.warmup_steps, self.warmup_init)

    def reg_weight(self, net: NetworkSpec, spec: ModelSpec) -> float:
        return self.reg_final if net is spec.final else self.reg_prop


# -- losses ------------------------------------------------------------------


def photometric_loss(pred, gt):
    gt = np.asarray(gt)
    if np.shape(dn.value_of(pred)) != gt.shape:
        raise ContractError(f"prediction {np.shape(dn.value_of(pred))} vs target {gt.shape}")
    return dn.mean(dn.square(dn.sub(pred, gt.astype(dn.value_of(pred).dtype))))


def reg_loss(tables_by_network):
    """Weighted L2 penalty on feature tables.

    ``tables_by_network`` is a list of ``(weight, levels)`` where each level
    is a list of tables (one, or the four mixed sets). Each level contributes
    the mean squared entry (averaged over its tables); levels are averaged.
    """
    total = 0.0
    for weight, levels in tables_by_network:
        if weight < 0:
            raise ContractError("regularization weights must be nonnegative")
        if weight == 0 or not levels:
            continue
        per_level = []
        for tables in levels:
            terms = [dn.mean(dn.square(t)) for t in tables]
            acc = terms[0]
            for term in terms[1:]:
                acc = dn.add(acc, term)
            per_level.append(dn.mul(acc, 1.0 / len(terms)))
        acc = per_level[0]
        for term in per_level[1:]:
            acc = dn.add(acc, term)
        total = dn.add(total, dn.mul(acc, weight / len(per_level)))
    return total


def unity_loss(weights):
    """Mean over rays of the squared deficit of the weight sum from 1."""
    return dn.mean(dn.square(dn.sub(dn.sum_(weights, axis=-1), 1.0)))


def _batched_searchsorted(edges, values, side):
    B = edges.shape[0]
    lo = min(edges.min(), values.min())
    span = max(edges.max(), values.max()) - lo + 1.0
    off = (np.arange(B) * span)[:, None]
    flat = np.searchsorted((edges - lo + off).ravel(), (values - lo + off).ravel(), side=side)
    return flat.reshape(values.shape) - edges.shape[1] * np.arange(B)[:, None]


def proposal_loss(prop_edges, prop_weights, final_edges, final_weights):
    """Penalty for proposal weights that under-cover the final weight mass.

    For every final interval the bound is the total proposal weight of the
    proposal intervals overlapping it; the loss is the mean over rays of the
    summed squared positive parts of ``final - bound``. Final weights are
    treated as constants.
    """
    prop_edges, final_edges = np.atleast_2d(prop_edges), np.atleast_2d(final_edges)
    pw = dn.value_of(prop_weights)
    fw = np.asarray(dn.value_of(final_weights))
    if prop_edges.shape[0] != final_edges.shape[0] or np.shape(pw)[-1] != prop_edges.shape[-1] - 1:
        raise ContractError("proposal and final partitions are misaligned")
    if fw.shape[-1] != final_edges.shape[-1] - 1:
        raise ContractError("final weights do not match final partition")
    m = prop_edges.shape[1] - 1
    lo = np.clip(_batched_searchsorted(prop_edges, final_edges[:, :-1], "right") - 1, 0, m - 1)
    hi = np.clip(_batched_searchsorted(prop_edges, final_edges[:, 1:], "left"), 0, m)
    hi = np.maximum(hi, lo + 1)
    padded = dn.concat([dn.reshape(prop_weights, np.shape(pw)), np.zeros(np.shape(pw)[:-1] + (1,), dtype=pw.dtype)], axis=-1)
    cum = dn.cumsum_exclusive(padded, axis=-1)  # [B, m+1]: 0, w0, w0+w1, ...
    bound = dn.sub(dn.take_along_axis(cum, hi, -1), dn.take_along_axis(cum, lo, -1))
    deficit = dn.relu(dn.sub(fw.astype(pw.dtype), bound))
    return dn.mean(dn.sum_(dn.square(deficit), axis=-1))


# -- scheduling --------------------------------------------------------------


@dataclass
class CellSchedule:
    visits: list  # (cell, iterations)
    cameras: dict  # cell -> N_k

    def __iter__(self):
        return iter(self.visits)

    @property
    def total(self) -> int:
        return sum(n for _, n in self.visits)


def build_schedule(grid: ParamGrid, total_steps: int) -> CellSchedule:
    """Round-robin over active cells in id order, 2 * N_k steps per visit."""
    counts = grid.camera_counts()
    cycle = [(c, 2 * counts[c]) for c in sorted(grid.active_cells) if counts[c] > 0]
    if not cycle:
        raise ConfigurationError("no active cell owns cameras")
    visits, left = [], total_steps
    while left > 0:
        for cell, n in cycle:
            if left <= 0:
                break
            take = min(n, left)
            visits.append((cell, take))
            left -= take
    return CellSchedule(visits, counts)


# -- batches -----------------------------------------------------------------


class RayTable:
    """All pixel rays and colors of a set of cameras, indexed by (camera, pixel)."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        H, W = dataset.images.shape[1:3]
        pix = image_pixels(W, H)
        bundles = [camera_rays(cam, pix) for cam in dataset.cameras]
        self.origins = np.stack([b.origins for b in bundles])
        self.directions = np.stack([b.directions for b in bundles])
        self.near = np.stack([b.near for b in bundles])
        self.far = np.stack([b.far for b in bundles])
        self.colors = dataset.images.reshape(len(dataset), H * W, 3)
        self.n_pixels = H * W
        self.camera_xy = np.stack([cam.origin[:2] for cam in dataset.cameras])

    def gather(self, cams, pixels) -> tuple[RayBundle, np.ndarray]:
        rays = RayBundle(
            self.origins[cams, pixels], self.directions[cams, pixels], self.near[cams, pixels], self.far[cams, pixels]
        )
        return rays, self.colors[cams, pixels]


@dataclass
class RayBatch:
    rays: RayBundle
    colors: np.ndarray
    weights: np.ndarray  # [B, 4] over the home cell's corners
    vertices: tuple
    from_neighbor: np.ndarray  # [B] bool
    cameras: np.ndarray  # [B] camera index in the ray table


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def sample_batch(home: int, table: RayTable, grid: ParamGrid, config: TrainConfig, rng) -> RayBatch:
    """Rays from the home cell's cameras plus ``round(p_r * B)`` from neighbors.

    Neighbor cameras come from active cells within Chebyshev distance ``k_r``;
    their mixing weights are taken at the origin projected onto the home
    cell, so every ray references only the home cell's four vertices. With no
    neighbor cell in range the whole batch comes from the home cell.
    """
    if not grid.is_active(home):
        raise ContractError(f"home cell {home} is not active")
    B = config.batch_size
    neighbor_cams = np.concatenate(
        [grid.cameras_in(c) for c in grid.neighbors(home, config.k_r)] + [np.zeros(0, dtype=np.int64)]
    )
    n_nb = round_half_up(config.p_r * B) if len(neighbor_cams) else 0
    home_cams = grid.cameras_in(home)
    if len(home_cams) == 0 and B - n_nb > 0:
        raise ConfigurationError(f"home cell {home} has no cameras")
    cams = np.concatenate(
        [
            home_cams[rng.integers(len(home_cams), size=B - n_nb)] if B - n_nb else np.zeros(0, dtype=np.int64),
            neighbor_cams[rng.integers(len(neighbor_cams), size=n_nb)] if n_nb else np.zeros(0, dtype=np.int64),
        ]
    )
    pixels = rng.integers(table.n_pixels, size=B)
    rays, colors = table.gather(cams, pixels)
    mw = mix_weights(grid, home, table.camera_xy[cams])
    from_neighbor = np.arange(B) >= B - n_nb
    return RayBatch(rays, colors, mw.w, mw.vertices, from_neighbor, cams)


def step_rng(seed: int, step: int):
    """Generator keyed by (seed, step): batch content does not depend on run history."""
    return np.random.default_rng([seed, step])


# -- loss evaluation ---------------------------------------------------------


@dataclass
class LossTerms:
    total: float
    photometric: float
    reg: float
    unity: float
    proposal: float


def _regularized_tables(spec: ModelSpec, config: TrainConfig, shared: dict, vertex_sets: list):
    out = []
    for net in spec.networks:
        levels = []
        for level, dense in enumerate(level_is_dense(net.grid)):
            key = f"{net.name}.grid.{level}"
            if net.interpolated and not dense:
                levels.append([vs[key] for vs in vertex_sets])
            else:
                levels.append([shared[key]])
        out.append((config.reg_weight(net, spec), levels))
    return out


def loss_graph(spec: ModelSpec, config: TrainConfig, shared: dict, vertex_sets: list, batch: RayBatch, rng, dtype=np.float32):
    """Build the training objective on whatever values are passed (arrays or Vars)."""
    field_ = Field(spec, shared, vertex_sets)
    out = render_rays(field_, batch.weights, batch.rays, rng, config.samples, dtype=dtype)
    photo = photometric_loss(out.color, batch.colors)
    unity = unity_loss(out.weights)
    reg = reg_loss(_regularized_tables(spec, config, shared, vertex_sets))
    final = out.stages[-1]
    prop = 0.0
    for stage in out.stages[:-1]:
        prop = dn.add(prop, proposal_loss(stage.edges, stage.weights, final.edges, dn.value_of(final.weights)))
    total = dn.add(dn.add(photo, reg), dn.add(dn.mul(unity, config.unity_weight), dn.mul(prop, config.proposal_weight)))
    terms = LossTerms(*(float(np.asarray(dn.value_of(v))) for v in (total, photo, reg, unity, prop)))
    return total, terms, out


def loss_and_grads(spec, config, shared: dict, vertex_sets: list, batch: RayBatch, rng, dtype=np.float32):
    """Objective value and gradients for the shared dict and each vertex dict."""
    tape = dn.GradTape()
    s_vars = {k: tape.var(v, k) for k, v in shared.items()}
    v_vars = [{k: tape.var(v, k) for k, v in vs.items()} for vs in vertex_sets]
    total, terms, _ = loss_graph(spec, config, s_vars, v_vars, batch, rng, dtype)
    grads = dn.backprop(tape, total)
    g_shared = {k: grads[var] for k, var in s_vars.items()}
    g_vertex = [{k: grads[var] for k, var in vs.items()} for vs in v_vars]
    return terms, g_shared, g_vertex


# -- training loop -----------------------------------------------------------


@dataclass
class TrainResult:
    out_dir: Path
    grid: ParamGrid
    spec: ModelSpec
    shared: dict
    store: ParamStore
    metrics_path: Path
    history: list = field(default_factory=list)


def grid_meta(grid: ParamGrid) -> dict:
    return {
        "aabb_min": [float(v) for v in grid.aabb_min],
        "aabb_max": [float(v) for v in grid.aabb_max],
        "nx": grid.nx,
        "ny": grid.ny,
        "active_cells": list(grid.active_cells),
        "camera_assignment": [int(c) for c in grid.camera_assignment],
        "min_cameras": grid.min_cameras,
        "origins": [[float(a), float(b)] for a, b in grid.origins],
    }


def grid_from_meta(meta: dict) -> ParamGrid:
    return ParamGrid(
        np.array(meta["aabb_min"]),
        np.array(meta["aabb_max"]),
        int(meta["nx"]),
        int(meta["ny"]),
        tuple(meta["active_cells"]),
        np.array(meta["camera_assignment"], dtype=np.int64),
        int(meta["min_cameras"]),
        np.array(meta["origins"], dtype=np.float64),
    )


def _config_meta(config: TrainConfig) -> dict:
    d = asdict(config)
    d["samples"] = list(config.samples)
    return d


def train(
    config: TrainConfig,
    spec: ModelSpec,
    dataset: Dataset,
    out_dir,
    grid_shape=(1, 1),
    in_core: bool = False,
    progress_every: int = 0,
) -> TrainResult:
    """Cell-by-cell training with parameter and optimizer-state swapping.

    Trains on the training split of ``dataset`` and writes the final
    checkpoint (plus ``metrics.csv`` and optional intermediate checkpoints
    under ``checkpoints/``) to ``out_dir``. Results are identical with and
    without ``in_core``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_set = dataset.subset(dataset.train_indices)
    table = RayTable(train_set)
    grid = build_param_grid(table.camera_xy, grid_shape[0], grid_shape[1], config.min_cameras)
    v_shapes, s_shapes = vertex_shapes(spec), shared_shapes(spec)
    store = ParamStore(out_dir, grid, v_shapes, lambda vid: init_vertex(spec, config.seed, vid), in_core=in_core)
    shared = init_shared(spec, config.seed)
    shared_adam = AdamState.zeros_like(shared)
    schedule = build_schedule(grid, config.total_steps)

    def meta(step):
        return {
            "format": "internerf-checkpoint",
            "version": 1,
            "step": step,
            "seed": config.seed,
            "grid": grid_meta(grid),
            "model": spec.to_dict(),
            "train": _config_meta(config),
            "shared_params": [[k, list(s)] for k, s in s_shapes.items()],
            "vertex_params": [[k, list(s)] for k, s in v_shapes.items()],
            "vertex_adam_steps": {
                str(v): store.vertex_state(v).adam.step for v in store.used_vertices()
            } if step == config.total_steps else {},
            "shared_adam_step": shared_adam.step,
        }

    metrics_path = out_dir / "metrics.csv"
    history = []
    step = 0
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_FIELDS)
        for cell, iterations in schedule:
            states = store.load_cell(cell)
            vertex_params = [s.params for s in states]
            for _ in range(iterations):
                rng = step_rng(config.seed, step)
                batch = sample_batch(cell, table, grid, config, rng)
                terms, g_shared, g_vertex = loss_and_grads(spec, config, shared, vertex_params, batch, rng)
                lr = config.lr(step)
                hyper = (config.adam_beta1, config.adam_beta2, config.adam_eps)
                adam_step(shared, g_shared, shared_adam, lr, *hyper)
                for state, g in zip(states, g_vertex):
                    adam_step(state.params, g, state.adam, lr, *hyper)
                row = (step, cell, terms.total, terms.photometric, terms.reg, terms.unity, terms.proposal, lr)
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
                history.append(terms)
                step += 1
                if progress_every and step % progress_every == 0:
                    log.info("step %d cell %d loss %.5f", step, cell, terms.total)
                if config.checkpoint_every and step % config.checkpoint_every == 0 and step < config.total_steps:
                    fh.flush()
                    write_checkpoint(out_dir / "checkpoints" / f"step_{step:06d}", meta(step), shared,
                                     shared_adam, s_shapes, store)
            store.unload_cell()
    write_checkpoint(out_dir, meta(step), shared, shared_adam, s_shapes, store)
    return TrainResult(out_dir, grid, spec, shared, store, metrics_path, history)


def config_fields() -> dict:
    return {f.name: f for f in fields(TrainConfig)}


# -- checkpoints and evaluation ----------------------------------------------


@dataclass
class Checkpoint:
    directory: Path
    meta: dict
    spec: ModelSpec
    grid: ParamGrid
    shared: dict
    vertex_shapes: dict

    @property
    def step(self) -> int:
        return int(self.meta["step"])

    def vertex(self, vid: int) -> dict:
        from .store import read_params, vertex_stem

        stem = vertex_stem(self.grid, vid)
        return read_params(self.directory / f"{stem}.bin", self.vertex_shapes, f"vertex {vid} ({stem})")

    def cell_field(self, cell: int) -> Field:
        return Field(self.spec, self.shared, [self.vertex(v) for v in self.grid.cell_vertices(cell)])


def load_checkpoint(directory) -> Checkpoint:
    from .store import read_meta, read_params

    directory = Path(directory)
    meta = read_meta(directory)
    spec = ModelSpec.from_dict(meta["model"])
    # ordered [key, shape] lists: the canonical payload order
    s_shapes = {k: tuple(v) for k, v in meta["shared_params"]}
    v_shapes = {k: tuple(v) for k, v in meta["vertex_params"]}
    shared = read_params(directory / "shared.bin", s_shapes, "shared parameters")
    return Checkpoint(directory, meta, spec, grid_from_meta(meta["grid"]), shared, v_shapes)


class MidpointRng:
    """Stand-in generator whose uniforms are all 0.5: deterministic evaluation renders."""

    def random(self, shape=None):
        return np.full(shape, 0.5) if shape is not None else 0.5


def render_view(ckpt: Checkpoint, cam, counts=None, chunk=4096) -> np.ndarray:
    """Render ``cam`` with the cell containing (the projection of) its origin."""
    from .render import render_image

    cell, xy = ckpt.grid.query_cell(cam.origin[:2])
    w = mix_weights(ckpt.grid, cell, xy).w
    counts = tuple(counts or ckpt.meta["train"]["samples"])
    return render_image(ckpt.cell_field(cell), w, cam, MidpointRng(), counts, chunk)


def mean_color_baseline(train_images, shape) -> np.ndarray:
    mean = np.asarray(train_images, dtype=np.float64).reshape(-1, 3).mean(axis=0)
    return np.broadcast_to(mean, shape).copy()


@dataclass
class EvalReport:
    rows: list  # (image name, psnr, ssim)
    baseline_psnr: float

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r[1] for r in self.rows]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows]))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("image", "psnr", "ssim"))
            for name, p, s in self.rows:
                writer.writerow((name, f"{p:.6f}", f"{s:.6f}"))


def evaluate(ckpt: Checkpoint, dataset: Dataset, split: str = "test") -> EvalReport:
    """PSNR/SSIM per held-out image, plus the PSNR of the mean-training-color image."""
    from .metrics import psnr, ssim

    if split not in ("test", "train"):
        raise ConfigurationError(f"unknown split {split!r}")
    idx = dataset.test_indices if split == "test" else dataset.train_indices
    train_images = dataset.images[dataset.train_indices]
    rows, base = [], []
    for i in idx:
        gt = dataset.images[i]
        pred = render_view(ckpt, dataset.cameras[i])
        name = Path(dataset.paths[i]).name if dataset.paths else f"view_{i:04d}"
        rows.append((name, psnr(pred, gt), ssim(pred, gt)))
        base.append(psnr(mean_color_baseline(train_images, gt.shape), gt))
    return EvalReport(rows, float(np.mean(base)))

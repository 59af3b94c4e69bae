"""Rays, interval sampling and volume-rendering quadrature."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import diffnet as dn
from .errors import ContractError, DegenerateDistributionError
from .networks import Field

SCENE_MIN, SCENE_MAX = -1.0, 1.0
DEFAULT_COUNTS = (64, 64, 32)
PROPOSAL_PADDING = 0.01


@dataclass
class Camera:
    """Pinhole camera; ``rotation`` maps camera axes (x right, y down, z forward) to world."""

    origin: np.ndarray
    rotation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if not np.allclose(self.rotation.T @ self.rotation, np.eye(3), atol=1e-6):
            raise ContractError("camera rotation is not orthonormal")
        if self.fx <= 0 or self.fy <= 0:
            raise ContractError("focal lengths must be positive")


@dataclass
class RayBundle:
    origins: np.ndarray
    directions: np.ndarray
    near: np.ndarray
    far: np.ndarray

    def __len__(self):
        return len(self.origins)

    def subset(self, idx) -> "RayBundle":
        return RayBundle(self.origins[idx], self.directions[idx], self.near[idx], self.far[idx])


def box_interval(origins, directions, lo=SCENE_MIN, hi=SCENE_MAX):
    """Entry and exit distances of rays through the axis-aligned box [lo, hi]^3."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    tmin = np.nanmax(np.minimum(t0, t1), axis=-1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=-1)
    return np.maximum(tmin, 0.0), tmax


def camera_rays(cam: Camera, pixels) -> RayBundle:
    """Rays through pixel centers; ``pixels`` is ``[N, 2]`` of (column, row)."""
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    px, py = pixels[:, 0], pixels[:, 1]
    if np.any((px < 0) | (px >= cam.width) | (py < 0) | (py >= cam.height)):
        raise ContractError("pixel outside the image")
    local = np.stack([(px + 0.5 - cam.cx) / cam.fx, (py + 0.5 - cam.cy) / cam.fy, np.ones_like(px)], axis=-1)
    d = local @ cam.rotation.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(cam.origin, d.shape).copy()
    near, far = box_interval(o, d)
    return RayBundle(o, d, near, far)


def image_pixels(width: int, height: int) -> np.ndarray:
    rows, cols = np.mgrid[0:height, 0:width]
    return np.stack([cols.ravel(), rows.ravel()], axis=-1)


def stratified_samples(near, far, n: int, rng) -> np.ndarray:
    """One jittered distance per equal sub-interval of ``[near, far]``.

    Returns ``[B, n]`` sorted distances (``[n]`` for scalar bounds).
    """
    if n < 1:
        raise ContractError("need at least one sample")
    near, far = np.asarray(near, dtype=np.float64), np.asarray(far, dtype=np.float64)
    scalar = near.ndim == 0
    near, far = np.atleast_1d(near), np.atleast_1d(far)
    u = np.asarray(rng.random((len(near), n)), dtype=np.float64)
    t = near[:, None] + (np.arange(n) + u) / n * (far - near)[:, None]
    return t[0] if scalar else t


def resample_from_weights(t, w, n: int, rng, padding: float = PROPOSAL_PADDING) -> np.ndarray:
    """Inverse-transform sampling of the piecewise-constant density on ``t``.

    Args:
      t: ``[B, m+1]`` interval edges.
      w: ``[B, m]`` nonnegative interval weights.
      n: samples per ray.
      rng: source of ``random(shape)`` uniforms (stratified jitter).
      padding: constant added to every weight before normalizing.

    Returns:
      ``[B, n]`` sorted distances within ``[t[:, 0], t[:, -1]]``.
    """
    t = np.atleast_2d(np.asarray(t, dtype=np.float64))
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    if w.shape[-1] != t.shape[-1] - 1 or w.shape[0] != t.shape[0]:
        raise ContractError(f"weights {w.shape} do not match edges {t.shape}")
    if np.any(w < 0):
        raise ContractError("weights must be nonnegative")
    mass = w + padding
    total = mass.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise DegenerateDistributionError("all resampling weights are zero")
    cdf = np.concatenate([np.zeros_like(total), np.minimum(np.cumsum(mass / total, axis=-1), 1.0)], axis=-1)
    cdf[:, -1] = 1.0
    B, m1 = cdf.shape
    u = (np.arange(n) + np.asarray(rng.random((B, n)), dtype=np.float64)) / n
    u = np.minimum(u, np.nextafter(1.0, 0.0))
    # batched searchsorted via per-row offsets
    offset = 2.0 * np.arange(B)[:, None]
    idx = np.searchsorted((cdf + offset).ravel(), (u + offset).ravel(), side="right").reshape(B, n)
    idx = idx - m1 * np.arange(B)[:, None] - 1
    idx = np.clip(idx, 0, m1 - 2)
    c0 = np.take_along_axis(cdf, idx, -1)
    c1 = np.take_along_axis(cdf, idx + 1, -1)
    t0 = np.take_along_axis(t, idx, -1)
    t1 = np.take_along_axis(t, idx + 1, -1)
    frac = np.clip((u - c0) / np.where(c1 > c0, c1 - c0, 1.0), 0.0, 1.0)
    out = t0 + frac * (t1 - t0)
    return np.maximum.accumulate(out, axis=-1)


@dataclass
class RenderResult:
    color: object  # [B, 3] (or None for density-only stages)
    weights: object  # [B, m]
    transmittance: np.ndarray  # [B, m]
    final_transmittance: np.ndarray  # [B]


def volume_render(tau, rgb, t) -> RenderResult:
    """Composite per-interval densities and colors along rays.

    ``tau`` is ``[B, m]`` (or ``[m]``), ``rgb`` ``[B, m, 3]`` or None, ``t``
    the ``[B, m+1]`` edges. Accepts tape values for ``tau`` and ``rgb``.
    """
    tau_v = dn.value_of(tau)
    t = np.asarray(t)
    if t.shape[-1] != np.shape(tau_v)[-1] + 1:
        raise ContractError(f"{np.shape(tau_v)[-1]} densities for {t.shape[-1] - 1} intervals")
    if rgb is not None and np.shape(dn.value_of(rgb))[:-1] != np.shape(tau_v):
        raise ContractError("color and density counts differ")
    delta = np.diff(t, axis=-1).astype(np.asarray(tau_v).dtype)
    optical = dn.mul(tau, delta)
    alpha = dn.sub(1.0, dn.exp(dn.neg(optical)))
    trans = dn.exp(dn.neg(dn.cumsum_exclusive(optical, axis=-1)))
    weights = dn.mul(trans, alpha)
    color = None
    if rgb is not None:
        color = dn.sum_(dn.mul(dn.reshape(weights, np.shape(tau_v) + (1,)), rgb), axis=-2)
    final_t = np.exp(-np.sum(dn.value_of(optical), axis=-1))
    return RenderResult(color, weights, dn.value_of(trans), final_t)


@dataclass
class Stage:
    name: str
    edges: np.ndarray
    weights: object


@dataclass
class RayRender:
    result: RenderResult
    stages: list = field(default_factory=list)

    @property
    def color(self):
        return self.result.color

    @property
    def weights(self):
        return self.result.weights


def _edges(near, far, samples):
    return np.concatenate([near[:, None], samples, far[:, None]], axis=-1)


def _points(rays: RayBundle, edges, dtype):
    mid = 0.5 * (edges[:, 1:] + edges[:, :-1])
    x = rays.origins[:, None, :] + mid[..., None] * rays.directions[:, None, :]
    return np.clip(x, SCENE_MIN, SCENE_MAX).reshape(-1, 3).astype(dtype)


def render_rays(
    field_: Field,
    w,
    rays: RayBundle,
    rng,
    counts: Sequence[int] = DEFAULT_COUNTS,
    padding: float = PROPOSAL_PADDING,
    dtype=np.float32,
) -> RayRender:
    """Proposal-guided rendering of a ray batch.

    The first proposal network evaluates densities on stratified samples;
    each later network evaluates on distances resampled from the previous
    stage's weights. Every stage partitions the whole ``[near, far]`` span:
    ``n`` samples plus the two endpoints give ``n + 1`` intervals.

    Args:
      field_: bound parameters.
      w: ``[B, 4]`` (or ``[4]``) mixing weights; None when nothing is interpolated.
      rays: the batch.
      rng: generator supplying ``random(shape)`` jitter.
      counts: samples per stage, one per network.
    """
    spec = field_.spec
    if len(counts) != len(spec.networks):
        raise ContractError(f"{len(counts)} sample counts for {len(spec.networks)} networks")
    B = len(rays)
    w_rays = None if w is None else np.broadcast_to(np.asarray(w, dtype=dtype), (B, 4))
    samples = stratified_samples(rays.near, rays.far, counts[0], rng)
    stages = []
    edges = None
    for k, (net, n) in enumerate(zip(spec.networks, counts)):
        if k > 0:
            samples = resample_from_weights(edges, dn.value_of(stages[-1].weights), n, rng, padding)
        edges = _edges(rays.near, rays.far, samples)
        m = edges.shape[1] - 1
        x = _points(rays, edges, dtype)
        w_pts = None if w_rays is None else np.repeat(w_rays, m, axis=0)
        d_enc = None
        if net.has_appearance:
            d = np.repeat(rays.directions, m, axis=0)
            d_enc = dn.dir_encode(d, net.dir_degree).astype(dtype)
        out = field_.evaluate(net.name, x, w_pts, d_enc)
        tau = dn.reshape(out.tau, (B, m))
        rgb = None if out.rgb is None else dn.reshape(out.rgb, (B, m, 3))
        result = volume_render(tau, rgb, edges)
        stages.append(Stage(net.name, edges, result.weights))
    return RayRender(result, stages)


def render_image(field_: Field, w, cam: Camera, rng, counts=DEFAULT_COUNTS, chunk=4096) -> np.ndarray:
    """Render a full ``[H, W, 3]`` image in ray chunks (no tape)."""
    rays = camera_rays(cam, image_pixels(cam.width, cam.height))
    out = np.empty((len(rays), 3), dtype=np.float64)
    for start in range(0, len(rays), chunk):
        sl = slice(start, start + chunk)
        out[sl] = render_rays(field_, w, rays.subset(sl), rng, counts).color
    return np.clip(out, 0, 1).reshape(cam.height, cam.width, 3)

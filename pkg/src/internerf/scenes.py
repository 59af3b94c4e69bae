"""Analytic room scenes and a brute-force ray-marching oracle.

Scenes are unions of axis-aligned boxes and spheres with constant density and
a striped color pattern per primitive. Rooms are closed (walls, floor and
ceiling), so rays from inside terminate on geometry. The oracle integrates
the analytic fields with a dense fixed step and shares no code with the
learned renderer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .render import Camera, box_interval, image_pixels

PRESETS = ("single-room", "two-rooms", "four-rooms")

WALL_DENSITY = 150.0
WALL_THICKNESS = 0.06
FLOOR_Z, CEILING_Z = -0.45, 0.45
VIEWS_PER_ROOM = 32


@dataclass
class Primitive:
    kind: str  # "box" or "sphere"
    a: np.ndarray  # box lo / sphere center
    b: np.ndarray  # box hi / (radius, 0, 0)
    density: float
    color_a: np.ndarray
    color_b: np.ndarray
    stripe_dir: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    stripe_freq: float = 0.0
    stripe_phase: float = 0.0

    def contains(self, x):
        if self.kind == "box":
            return np.all((x >= self.a) & (x <= self.b), axis=-1)
        return np.sum((x - self.a) ** 2, axis=-1) <= self.b[0] ** 2

    def color(self, x):
        s = 0.5 + 0.5 * np.sin(self.stripe_freq * (x @ self.stripe_dir) + self.stripe_phase)
        return self.color_a + s[..., None] * (self.color_b - self.color_a)

    def ray_interval(self, o, d):
        """Entry/exit distances along rays (entry > exit when missed)."""
        if self.kind == "box":
            with np.errstate(divide="ignore", invalid="ignore"):
                t0 = (self.a - o) / d
                t1 = (self.b - o) / d
            lo = np.where(np.isnan(t0), -np.inf, np.minimum(t0, t1))
            hi = np.where(np.isnan(t0), np.inf, np.maximum(t0, t1))
            # axis-parallel rays outside the slab never enter
            parallel = d == 0
            outside = parallel & ((o < self.a) | (o > self.b))
            lo = np.where(parallel & ~outside, -np.inf, lo)
            hi = np.where(parallel & ~outside, np.inf, hi)
            enter, leave = lo.max(axis=-1), hi.min(axis=-1)
            return np.where(outside.any(axis=-1), np.inf, enter), leave
        oc = o - self.a
        b = np.sum(oc * d, axis=-1)
        c = np.sum(oc * oc, axis=-1) - self.b[0] ** 2
        disc = b * b - c
        root = np.sqrt(np.maximum(disc, 0.0))
        return np.where(disc >= 0, -b - root, np.inf), np.where(disc >= 0, -b + root, -np.inf)


@dataclass
class SyntheticScene:
    primitives: list
    rooms: list = field(default_factory=list)  # (lo_xy, hi_xy) footprints

    def fields(self, x):
        """Density and color at points ``x`` [..., 3]; color is density-weighted."""
        x = np.asarray(x, dtype=np.float64)
        tau = np.zeros(x.shape[:-1])
        acc = np.zeros(x.shape)
        for p in self.primitives:
            inside = p.contains(x)
            if not np.any(inside):
                continue
            tau = tau + p.density * inside
            acc[inside] += p.density * p.color(x[inside])
        color = np.where(tau[..., None] > 0, acc / np.maximum(tau, 1e-12)[..., None], 0.0)
        return tau, color

    def ray_fields(self, o, d, t):
        """Like :meth:`fields` at ``o + t d`` (``t`` is ``[R, S]``), using per-ray
        primitive intervals so primitives missed by every ray are skipped."""
        tau = np.zeros(t.shape)
        acc = np.zeros(t.shape + (3,))
        for p in self.primitives:
            t0, t1 = p.ray_interval(o, d)
            if not np.any((t1 >= t0) & (t1 >= t[:, 0]) & (t0 <= t[:, -1])):
                continue
            inside = (t >= t0[:, None]) & (t <= t1[:, None])
            if not np.any(inside):
                continue
            rows, cols = np.nonzero(inside)
            x = o[rows] + t[rows, cols][:, None] * d[rows]
            # boundary samples: defer to the exact point test
            keep = p.contains(x)
            rows, cols, x = rows[keep], cols[keep], x[keep]
            tau[rows, cols] += p.density
            acc[rows, cols] += p.density * p.color(x)
        color = np.where(tau[..., None] > 0, acc / np.maximum(tau, 1e-12)[..., None], 0.0)
        return tau, color

    def density(self, x):
        return self.fields(x)[0]

    def color(self, x):
        return self.fields(x)[1]


def _room_primitives(lo, hi, rng, palette):
    th = WALL_THICKNESS
    z0, z1 = FLOOR_Z, CEILING_Z
    x0, y0 = lo
    x1, y1 = hi
    walls = [
        ((x0 - th, y0 - th, z0 - th), (x0, y1 + th, z1 + th), (0, 1, 0)),
        ((x1, y0 - th, z0 - th), (x1 + th, y1 + th, z1 + th), (0, 1, 0)),
        ((x0 - th, y0 - th, z0 - th), (x1 + th, y0, z1 + th), (1, 0, 0)),
        ((x0 - th, y1, z0 - th), (x1 + th, y1 + th, z1 + th), (1, 0, 0)),
        ((x0 - th, y0 - th, z0 - th), (x1 + th, y1 + th, z0), (1, 1, 0)),
        ((x0 - th, y0 - th, z1), (x1 + th, y1 + th, z1 + th), (1, -1, 0)),
    ]
    prims = []
    for k, (a, b, sdir) in enumerate(walls):
        ca, cb = palette[k % len(palette)]
        sdir = np.asarray(sdir, dtype=np.float64)
        sdir = sdir / np.linalg.norm(sdir)
        if k < 4:
            sdir = 0.6 * sdir + 0.8 * np.array([0.0, 0.0, 1.0])
        prims.append(
            Primitive("box", np.array(a), np.array(b), WALL_DENSITY, ca, cb, sdir,
                      float(rng.uniform(8, 20)), float(rng.uniform(0, 2 * np.pi)))
        )
    # interior objects placed near the room's corners, leaving the camera loop clear
    center = 0.5 * (np.asarray(lo) + np.asarray(hi))
    half = 0.5 * (np.asarray(hi) - np.asarray(lo))
    corners = [(-1, -1), (1, -1), (-1, 1), (1, 1)]
    order = rng.permutation(4)
    for n, ci in enumerate(order[:3]):
        sx, sy = corners[ci]
        c = center + np.array([sx, sy]) * half * rng.uniform(0.6, 0.72, size=2)
        ca = rng.uniform(0.05, 0.95, size=3)
        cb = rng.uniform(0.05, 0.95, size=3)
        sdir = rng.normal(size=3)
        sdir /= np.linalg.norm(sdir)
        freq = float(rng.uniform(10, 30))
        if n % 2 == 0:
            r = float(rng.uniform(0.08, 0.14)) * min(half.min() / 0.45, 1.0)
            zc = z0 + r + float(rng.uniform(0.0, 0.25))
            prims.append(Primitive("sphere", np.array([c[0], c[1], zc]), np.array([r, 0.0, 0.0]),
                                   40.0, ca, cb, sdir, freq))
        else:
            s = rng.uniform(0.06, 0.12, size=3) * min(half.min() / 0.45, 1.0)
            zt = z0 + float(rng.uniform(0.15, 0.5))
            prims.append(Primitive("box", np.array([c[0] - s[0], c[1] - s[1], z0]),
                                   np.array([c[0] + s[0], c[1] + s[1], zt]), 40.0, ca, cb, sdir, freq))
    return prims


def _room_layout(preset):
    if preset == "single-room":
        return [((-0.6, -0.6), (0.6, 0.6))]
    if preset == "two-rooms":
        return [((-0.92, -0.42), (-0.08, 0.42)), ((0.08, -0.42), (0.92, 0.42))]
    if preset == "four-rooms":
        return [((x0, y0), (x0 + 0.84, y0 + 0.84)) for y0 in (-0.92, 0.08) for x0 in (-0.92, 0.08)]
    raise ContractError(f"unknown scene preset {preset!r}; choose from {PRESETS}")


def look_rotation(forward, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world rotation with columns (right, down, forward)."""
    f = np.asarray(forward, dtype=np.float64)
    f = f / np.linalg.norm(f)
    right = np.cross(f, up)
    right /= np.linalg.norm(right)
    down = np.cross(f, right)
    return np.stack([right, down, f], axis=1)


def make_cameras(rooms, views: int, rng, width=32, height=32, fov_deg=65.0) -> list:
    """Cameras on a loop inside each room, looking across the room."""
    per_room = np.full(len(rooms), views // len(rooms))
    per_room[: views % len(rooms)] += 1
    focal = 0.5 * width / np.tan(np.deg2rad(fov_deg) / 2)
    cams = []
    for (lo, hi), n in zip(rooms, per_room):
        center = 0.5 * (np.asarray(lo) + np.asarray(hi))
        half = 0.5 * (np.asarray(hi) - np.asarray(lo))
        for k in range(n):
            angle = 2 * np.pi * (k + rng.uniform(-0.2, 0.2)) / n
            radius = half * rng.uniform(0.3, 0.45)
            xy = center + radius * np.array([np.cos(angle), np.sin(angle)])
            origin = np.array([xy[0], xy[1], rng.uniform(-0.08, 0.08)])
            target = np.array([*(center + rng.uniform(-0.3, 0.3, size=2) * half), rng.uniform(-0.2, 0.0)])
            cams.append(Camera(origin, look_rotation(target - origin), focal, focal, width / 2, height / 2, width, height))
    return cams


def make_synthetic_scene(preset: str, seed: int, views=None, width=32, height=32):
    """Build a preset scene and its camera trajectory.

    Returns ``(scene, cameras)``. ``views`` defaults to 32 per room.
    """
    rooms = _room_layout(preset)
    rng = np.random.default_rng([seed, PRESETS.index(preset)])
    palettes = [
        [(np.array([0.85, 0.8, 0.7]), np.array([0.55, 0.35, 0.25])),
         (np.array([0.3, 0.45, 0.7]), np.array([0.9, 0.9, 0.95]))],
        [(np.array([0.3, 0.6, 0.35]), np.array([0.9, 0.85, 0.4])),
         (np.array([0.75, 0.3, 0.3]), np.array([0.95, 0.75, 0.6]))],
        [(np.array([0.55, 0.3, 0.65]), np.array([0.85, 0.85, 0.85])),
         (np.array([0.2, 0.2, 0.25]), np.array([0.6, 0.75, 0.9]))],
        [(np.array([0.9, 0.55, 0.2]), np.array([0.35, 0.2, 0.1])),
         (np.array([0.2, 0.55, 0.55]), np.array([0.95, 0.95, 0.7]))],
    ]
    prims = []
    for k, (lo, hi) in enumerate(rooms):
        prims += _room_primitives(lo, hi, rng, palettes[k % len(palettes)])
    scene = SyntheticScene(prims, rooms)
    cams = make_cameras(rooms, views if views is not None else VIEWS_PER_ROOM * len(rooms), rng, width, height)
    return scene, cams


def oracle_rays(scene: SyntheticScene, origins, directions, quadrature_step=None, chunk=2048) -> np.ndarray:
    """Dense fixed-step compositing along rays; returns ``[N, 3]`` colors.

    ``quadrature_step=None`` uses 1024 equal steps per ray; a float gives an
    absolute step length (the last step of each ray is shortened).
    """
    if quadrature_step is not None and quadrature_step <= 0:
        raise ContractError("quadrature_step must be positive")
    origins = np.asarray(origins, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    near, far = box_interval(origins, directions)
    out = np.zeros((len(origins), 3))
    for s in range(0, len(origins), chunk):
        o, d = origins[s : s + chunk], directions[s : s + chunk]
        n0, n1 = near[s : s + chunk], far[s : s + chunk]
        length = np.maximum(n1 - n0, 0)
        if quadrature_step is None:
            frac = np.linspace(0.0, 1.0, 1025)
            t = n0[:, None] + frac[None] * length[:, None]
        else:
            steps = int(np.ceil(length.max() / quadrature_step)) if len(length) else 0
            k = np.arange(steps + 1) * quadrature_step
            t = n0[:, None] + np.minimum(k[None], length[:, None])
        mid = 0.5 * (t[:, 1:] + t[:, :-1])
        delta = np.diff(t, axis=-1)
        tau, color = scene.ray_fields(o, d, mid)
        optical = tau * delta
        trans = np.exp(-(np.cumsum(optical, axis=-1) - optical))
        w = trans * (1 - np.exp(-optical))
        out[s : s + chunk] = np.einsum("nk,nkc->nc", w, color)
    return out


def oracle_render(scene: SyntheticScene, cam: Camera, quadrature_step=None) -> np.ndarray:
    """Ground-truth ``[H, W, 3]`` image of ``scene`` seen from ``cam``."""
    pix = image_pixels(cam.width, cam.height).astype(np.float64)
    local = np.stack(
        [(pix[:, 0] + 0.5 - cam.cx) / cam.fx, (pix[:, 1] + 0.5 - cam.cy) / cam.fy, np.ones(len(pix))], axis=-1
    )
    d = local @ cam.rotation.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(cam.origin, d.shape)
    return oracle_rays(scene, o, d, quadrature_step).reshape(cam.height, cam.width, 3)

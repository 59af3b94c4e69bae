"""Dataset manifests (JSON + PNG images) and the train/test split."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError, ParseError, StoreError
from .render import Camera

TEST_EVERY = 8
_CAMERA_FIELDS = ("origin", "rotation", "fx", "fy", "cx", "cy", "width", "height")


@dataclass
class Dataset:
    cameras: list
    images: np.ndarray  # [N, H, W, 3] float32 in [0, 1]
    paths: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.cameras)

    @property
    def test_indices(self) -> np.ndarray:
        return split_indices(len(self))[1]

    @property
    def train_indices(self) -> np.ndarray:
        return split_indices(len(self))[0]

    def subset(self, idx) -> "Dataset":
        idx = list(np.asarray(idx))
        return Dataset(
            [self.cameras[i] for i in idx],
            self.images[idx],
            [self.paths[i] for i in idx] if self.paths else [],
            dict(self.extra),
        )


def split_indices(n: int):
    """Every 8th image (index 0, 8, ...) is held out for test."""
    idx = np.arange(n)
    test = idx % TEST_EVERY == 0
    return idx[~test], idx[test]


def camera_to_dict(cam: Camera) -> dict:
    return {
        "origin": [float(v) for v in cam.origin],
        "rotation": [float(v) for v in cam.rotation.reshape(-1)],
        "fx": float(cam.fx),
        "fy": float(cam.fy),
        "cx": float(cam.cx),
        "cy": float(cam.cy),
        "width": int(cam.width),
        "height": int(cam.height),
    }


def camera_from_dict(d: dict, where="camera") -> Camera:
    for name in _CAMERA_FIELDS:
        if name not in d:
            raise ParseError(f"{where}: missing field {name!r}")
    try:
        origin = np.array(d["origin"], dtype=np.float64)
        if origin.shape != (3,):
            raise ValueError("expected 3 values")
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: bad field 'origin': {exc}") from exc
    try:
        rotation = np.array(d["rotation"], dtype=np.float64)
        if rotation.shape != (9,):
            raise ValueError("expected 9 values (row-major 3x3)")
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: bad field 'rotation': {exc}") from exc
    scalars = {}
    for name, kind in (("fx", float), ("fy", float), ("cx", float), ("cy", float), ("width", int), ("height", int)):
        try:
            scalars[name] = kind(d[name])
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{where}: bad field {name!r}: {exc}") from exc
    try:
        return Camera(origin, rotation.reshape(3, 3), **scalars)
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}") from exc


def save_image(path, image):
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except OSError as exc:
        raise StoreError(f"cannot read image {path}: {exc}") from exc


def save_dataset(directory, cameras, images, extra=None, prefix="view") -> Path:
    """Write PNGs plus ``manifest.json``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, (cam, img) in enumerate(zip(cameras, images)):
        name = f"{prefix}_{k:04d}.png"
        save_image(directory / name, img)
        entries.append({"path": name, **camera_to_dict(cam)})
    manifest = {"images": entries}
    if extra:
        manifest.update(extra)
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def read_manifest(path) -> tuple[list, list, dict]:
    """Cameras, image paths and extra keys of a manifest (file or its directory)."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise StoreError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    entries = data.get("images")
    if not entries:
        raise ConfigurationError(f"{path}: manifest lists no images")
    cams, paths = [], []
    for k, entry in enumerate(entries):
        if "path" not in entry:
            raise ParseError(f"{path}: images[{k}]: missing field 'path'")
        cams.append(camera_from_dict(entry, f"{path}: images[{k}]"))
        paths.append(path.parent / entry["path"])
    extra = {k: v for k, v in data.items() if k != "images"}
    return cams, paths, extra


def load_dataset(path) -> Dataset:
    cams, paths, extra = read_manifest(path)
    images = []
    for p in paths:
        if not Path(p).exists():
            raise StoreError(f"missing image file {p}")
        images.append(load_image(p))
    return Dataset(cams, np.stack(images), [str(p) for p in paths], extra)

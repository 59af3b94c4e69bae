"""Image quality metrics for ``[H, W, C]`` images with values in [0, 1]."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ContractError

PSNR_CAP = 99.0


def psnr(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def ssim(a, b, sigma=1.5, k1=0.01, k2=0.03) -> float:
    """Mean SSIM with an 11x11 Gaussian window, averaged over channels.

    Statistics are evaluated on the full image and the 5-pixel border (where
    the window would leave the image) is dropped. Images too small to keep
    an interior use every pixel (reflected padding).
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    c1, c2 = k1**2, k2**2
    r = 5
    crop = slice(r, -r) if min(a.shape[:2]) > 2 * r else slice(None)

    def blur(x):
        return gaussian_filter(x, sigma, truncate=r / sigma, mode="reflect")[crop, crop]

    vals = []
    for ch in range(a.shape[-1]):
        x, y = a[..., ch], b[..., ch]
        mx, my = blur(x), blur(y)
        sxx = blur(x * x) - mx * mx
        syy = blur(y * y) - my * my
        sxy = blur(x * y) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))

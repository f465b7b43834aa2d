"""Grayscale image primitives: sampling, pyramids, gradients, Harris corners.

Images are plain 2D ``float64`` numpy arrays indexed ``[row, col]`` with
intensities on the 0..255 scale. Points are ``(x, y)`` = ``(col, row)``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.ndimage import convolve, convolve1d

BINOMIAL_5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
HARRIS_K = 0.04


class SamplingError(ValueError):
    """A sample was requested outside the image domain."""


def as_gray(data) -> np.ndarray:
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2D grayscale image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite intensities")
    return img


def sample_bilinear(img: np.ndarray, p) -> float:
    x, y = float(p[0]), float(p[1])
    h, w = img.shape
    if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
        raise SamplingError(f"point ({x:.3f}, {y:.3f}) outside {w}x{h} image")
    vals, _ = sample_many(img, np.array([[x, y]]))
    return float(vals[0])


def sample_many(img: np.ndarray, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised bilinear sampling.

    Returns ``(values, valid)``. Points outside ``[0, w-1] x [0, h-1]`` get
    value 0 and ``valid = False``; the caller picks the policy.
    """
    pts = np.asarray(pts, dtype=np.float64)
    h, w = img.shape
    x = pts[..., 0]
    y = pts[..., 1]
    valid = (x >= 0.0) & (x <= w - 1) & (y >= 0.0) & (y <= h - 1)
    valid &= np.isfinite(x) & np.isfinite(y)
    xs = np.where(valid, x, 0.0)
    ys = np.where(valid, y, 0.0)
    x0 = np.minimum(np.floor(xs).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(ys).astype(np.intp), max(h - 2, 0))
    fx = xs - x0
    fy = ys - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    vals = top * (1.0 - fy) + bot * fy
    return np.where(valid, vals, 0.0), valid


def max_pyramid_levels(shape: tuple[int, int]) -> int:
    n = 1
    while min(shape) >= 2 ** n:
        n += 1
    return n


def build_pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    if levels < 1:
        raise ValueError("levels must be >= 1")
    need = 2 ** (levels - 1)
    if min(img.shape) < need:
        raise ValueError(
            f"image {img.shape[1]}x{img.shape[0]} too small for {levels} levels; "
            f"at most {max_pyramid_levels(img.shape)} feasible"
        )
    pyr = [img]
    for _ in range(levels - 1):
        prev = pyr[-1]
        smooth = convolve1d(prev, BINOMIAL_5, axis=0, mode="nearest")
        smooth = convolve1d(smooth, BINOMIAL_5, axis=1, mode="nearest")
        pyr.append(np.ascontiguousarray(smooth[::2, ::2]))
    return pyr


def gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences inside, one-sided at the border. Returns (Ix, Iy)."""
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError("gradients need an image of at least 3x3")
    iy, ix = np.gradient(img)
    return ix, iy


_GAUSS_3X3 = np.outer([1.0, 2.0, 1.0], [1.0, 2.0, 1.0]) / 16.0


def harris_response(img: np.ndarray, k: float = HARRIS_K) -> np.ndarray:
    ix, iy = gradients(img)
    sxx = convolve(ix * ix, _GAUSS_3X3, mode="nearest")
    syy = convolve(iy * iy, _GAUSS_3X3, mode="nearest")
    sxy = convolve(ix * iy, _GAUSS_3X3, mode="nearest")
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def harris_strongest(img: np.ndarray, center, radius: int) -> tuple[int, int]:
    """Integer pixel of maximal Harris response in ``center +- radius``.

    Falls back to ``center`` when every response in the window is equal.
    """
    cx, cy = int(round(center[0])), int(round(center[1]))
    h, w = img.shape
    if cx - radius < 0 or cy - radius < 0 or cx + radius > w - 1 or cy + radius > h - 1:
        raise ValueError("Harris search window leaves the image")
    # margin so the 3x3 tensor window sees true central differences
    m = 3
    x0, x1 = max(cx - radius - m, 0), min(cx + radius + m + 1, w)
    y0, y1 = max(cy - radius - m, 0), min(cy + radius + m + 1, h)
    resp = harris_response(img[y0:y1, x0:x1])
    win = resp[cy - radius - y0: cy + radius + 1 - y0, cx - radius - x0: cx + radius + 1 - x0]
    if np.ptp(win) <= 1e-12 * max(1.0, float(np.abs(win).max())):
        return cx, cy
    j, i = np.unravel_index(int(np.argmax(win)), win.shape)
    return cx - radius + int(i), cy - radius + int(j)


def rgb_to_luma(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def read_frame(path: str | Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("RGB", "RGBA"):
            return rgb_to_luma(np.asarray(im.convert("RGB")))
        if im.mode not in ("L", "I", "I;16", "F"):
            im = im.convert("L")
        return as_gray(np.asarray(im))


def write_frame(path: str | Path, img: np.ndarray) -> None:
    from PIL import Image

    data = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)

"""Builders for synthetic rectified patches."""

import numpy as np
from scipy.ndimage import gaussian_filter

from headtrack.facemodel import Anchors
from headtrack.rectify import AnchorGrid, RectifiedPatch, RectSpec


def patch_from(img, valid=None, ratio=(1.0, 1.0)):
    img = np.asarray(img, float)
    h, w = img.shape
    spec = RectSpec(0.0, 0.0, ratio[0] * w, ratio[1] * h, w, h)
    v = np.ones((h, w), bool) if valid is None else np.asarray(valid, bool)
    grid = AnchorGrid(spec, Anchors(np.zeros(h * w, int), np.tile([1.0, 0, 0], (h * w, 1))), v)
    return RectifiedPatch(np.where(v, img, 0.0), v, grid)


def texture(h, w, seed=0, sigma=1.5):
    rng = np.random.default_rng(seed)
    t = gaussian_filter(rng.uniform(0, 255, (h + 20, w + 20)), sigma)
    t = (t - t.mean()) / t.std() * 40 + 128
    return t


def window(tex, dx=0, dy=0, h=None, w=None):
    """View of a larger texture whose content appears moved by (dx, dy)."""
    h = h or tex.shape[0] - 20
    w = w or tex.shape[1] - 20
    return tex[10 - dy : 10 - dy + h, 10 - dx : 10 - dx + w].copy()

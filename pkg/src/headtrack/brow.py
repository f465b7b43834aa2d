"""Eyebrow tracker: three vertically sliding part templates held in line by an angle penalty."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import lmsolve
from .facemodel import FaceModel
from .imgcore import sample_many
from .rectify import RectifiedPatch

log = logging.getLogger(__name__)

PART_SIZE = (9, 7)  # (w, h)
DEFAULT_C = 4.0
FD_STEP = 0.25
PENALTY = 1e3
SCAN_RANGE = 8
MAX_ITERATIONS = 20


class BrowError(ValueError):
    pass


@dataclass(frozen=True)
class BrowParts:
    templates: np.ndarray  # (3, h, w)
    origins: np.ndarray  # (3, 2) RI (x, y), ordered left to right
    offsets: np.ndarray  # (h*w, 2) template pixel offsets from the origin
    u: np.ndarray  # optimal angles, all pi for a straight brow
    au_indices: tuple
    rates: np.ndarray  # (3,) AU units per model unit of vertical motion
    limits: np.ndarray  # (3, 2)

    def __post_init__(self):
        if np.any(np.diff(self.origins[:, 0]) <= 0):
            raise BrowError("eyebrow parts must be ordered left to right")


@dataclass(frozen=True)
class BrowResult:
    a: np.ndarray
    alpha: np.ndarray  # (3,) AU values for this brow
    final_error: float
    skipped: bool = False

    def write(self, parts: BrowParts, full_alpha) -> np.ndarray:
        out = np.array(full_alpha, dtype=float)
        out[list(parts.au_indices)] = self.alpha
        return out


def _offsets(size) -> np.ndarray:
    w, h = size
    oy, ox = np.mgrid[0:h, 0:w]
    return np.stack([ox.ravel() - (w - 1) / 2.0, oy.ravel() - (h - 1) / 2.0], axis=1)


def extract_parts(patch: RectifiedPatch, landmark_pixels, model: FaceModel, side: str, size=PART_SIZE) -> BrowParts:
    """Sample the three part templates from the capture patch at the landmark positions.

    ``landmark_pixels`` (3, 2) are RI positions of ``{side}_brow_0..2``; parts
    are stored left to right whatever the landmark order.
    """
    lp = np.asarray(landmark_pixels, dtype=float)
    names = [f"{side}_brow_{j}" for j in range(3)]
    order = np.argsort(lp[:, 0], kind="stable")
    lp = lp[order]
    names = [names[i] for i in order]
    offsets = _offsets(size)
    w, h = size
    templates = []
    for o in lp:
        vals, ok = sample_many(patch.intensities, o + offsets)
        vok, _ = sample_many(patch.valid.astype(float), o + offsets)
        if not ok.all() or np.any(vok < 1.0):
            raise BrowError("eyebrow template leaves the valid patch")
        templates.append(vals.reshape(h, w))
    idx = tuple(model.au_index(f"{n}_raiser") for n in names)
    rates = np.array([model.au_rate(i, n, 1) for i, n in zip(idx, names)])
    return BrowParts(np.array(templates), lp, offsets, np.full(3, math.pi), idx, rates, model.au_limits[list(idx)])


def _angle(prev, mid, nxt) -> float:
    v1 = prev - mid
    v2 = nxt - mid
    n1 = math.hypot(*v1)
    n2 = math.hypot(*v2)
    if n1 == 0.0 or n2 == 0.0:
        return float("nan")
    cross = v1[0] * v2[1] - v1[1] * v2[0]
    dot = v1[0] * v2[0] + v1[1] * v2[1]
    return math.atan2(abs(cross), dot)


def internal_energy(a, origins, u) -> np.ndarray:
    """Per-part shape energy ((u_i - angle_i) / 2)^2 of the displaced points.

    End parts get a mirrored copy of their single neighbour, which makes
    their angle a straight one.
    """
    a = np.asarray(a, dtype=float)
    p = np.asarray(origins, dtype=float).copy()
    p[:, 1] += a
    u = np.asarray(u, dtype=float)
    n = len(p)
    out = np.zeros(n)
    for i in range(n):
        prev = p[i - 1] if i > 0 else 2.0 * p[i] - p[i + 1]
        nxt = p[i + 1] if i < n - 1 else 2.0 * p[i] - p[i - 1]
        ang = _angle(prev, p[i], nxt)
        if math.isnan(ang):
            log.warning("eyebrow part %d coincides with a neighbour; shape energy set to 0", i)
            continue
        out[i] = ((u[i] - ang) / 2.0) ** 2
    return out


def _terms(patch: RectifiedPatch, parts: BrowParts, a: np.ndarray) -> np.ndarray:
    """Similarity terms for a stack of displacement vectors ``a`` (..., 3)."""
    h = patch.shape[0]
    pts = parts.origins[:, None, :] + parts.offsets[None, :, :]  # (3, P, 2)
    pts = np.broadcast_to(pts, a.shape + pts.shape[1:]).copy()
    pts[..., 1] += a[..., None]
    vals, ok = sample_many(patch.intensities, pts)
    diff = np.abs(vals - parts.templates.reshape(3, -1))
    if patch.valid.all():
        use = ok
    else:
        vmask, _ = sample_many(patch.valid.astype(float), pts)
        use = ok & (vmask >= 1.0)
    n = use.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.sum(np.where(use, diff, 0.0), axis=-1) / n
    out = np.where(n > 0, out, PENALTY)
    leaving = ~ok.all(axis=-1)
    if leaving.any():
        ys = pts[..., 1]
        over = np.maximum(np.maximum(-ys.min(axis=-1), ys.max(axis=-1) - (h - 1)), 0.0)
        out = np.where(leaving, PENALTY * (1.0 + over), out)
    return out


def similarity_terms(patch: RectifiedPatch, parts: BrowParts, a) -> np.ndarray:
    """Mean absolute difference per part; a large finite penalty when a part leaves the patch."""
    return _terms(patch, parts, np.asarray(a, dtype=float).reshape(3))


def brow_residual(patch: RectifiedPatch, parts: BrowParts, a, c: float = DEFAULT_C) -> np.ndarray:
    weight = 1.0 + c * internal_energy(a, parts.origins, parts.u)
    return np.sqrt(weight) * similarity_terms(patch, parts, a)


def to_alpha(parts: BrowParts, a, ratio_y: float) -> np.ndarray:
    alpha = np.asarray(a, dtype=float) * ratio_y * parts.rates
    return np.clip(alpha, parts.limits[:, 0], parts.limits[:, 1])


def scan_start(patch: RectifiedPatch, parts: BrowParts, radius: int = SCAN_RANGE) -> np.ndarray:
    """Best integer shift of each part on its own, ignoring the shape term."""
    shifts = np.arange(-radius, radius + 1, dtype=float)
    costs = _terms(patch, parts, np.repeat(shifts[:, None], 3, axis=1))
    return shifts[np.argmin(costs, axis=0)]


def track_brow(
    patch: RectifiedPatch,
    parts: BrowParts,
    initial_a,
    c: float = DEFAULT_C,
    config: lmsolve.LmConfig | None = None,
    scan_radius: int = SCAN_RANGE,
) -> BrowResult:
    """Fit the three part displacements by LM.

    The cost is sharply V-shaped with a basin of about one pixel, so the
    previous ``a``, a = 0 and the best per-part integer shift are all
    scored and LM starts from the cheapest of them.
    """
    cfg = config or lmsolve.LmConfig(max_iterations=MAX_ITERATIONS, fd_steps=FD_STEP)
    a_prev = np.asarray(initial_a, dtype=float)
    ry = patch.ratio[1]

    def fn(a):
        return brow_residual(patch, parts, a, c)

    starts = [a_prev, np.zeros(3)]
    if scan_radius > 0:
        starts.append(scan_start(patch, parts, scan_radius))
    costs = [float(np.sum(fn(a0) ** 2)) for a0 in starts]
    a0 = starts[int(np.argmin(costs))]
    try:
        res = lmsolve.minimize(fn, a0, cfg)
    except lmsolve.LmError as exc:
        log.debug("eyebrow fit failed: %s", exc)
        res = None
    if res is None or not np.all(np.isfinite(res.params)) or res.final_error >= PENALTY:
        return BrowResult(a_prev, to_alpha(parts, a_prev, ry), float("nan"), skipped=True)
    return BrowResult(res.params, to_alpha(parts, res.params, ry), float(res.final_error))

"""Mouth tracker: match four part templates in the rectified mouth patch and turn
their displacements into AU increments that reconstruct the initial mouth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .facemodel import FaceModel, rotation_matrix
from .imgcore import harris_strongest
from .rectify import RectifiedPatch

CORNER_TEMPLATE = (15, 15)  # (w, h)
LIP_TEMPLATE = (21, 9)
CORNER_SEARCH = 8
LIP_SEARCH = 10
HARRIS_RADIUS = 3  # 7x7 window
OCCLUSION_ANGLE = math.radians(20.0)
# best scores above this are treated as no match; genuine matches on the
# synthetic benchmarks stay below 0.15, noise patches score above 3
MATCH_THRESHOLD = 1.0

PARTS = ("left_corner", "right_corner", "upper_lip", "lower_lip")
LANDMARKS = ("mouth_left", "mouth_right", "upper_lip", "lower_lip")
AUS = ("jaw_drop", "upper_lip_raiser", "lip_stretcher", "lip_corner_depressor")
LEFT, RIGHT, UPPER, LOWER = range(4)


class MouthError(ValueError):
    pass


class SimilarityError(ValueError):
    pass


@dataclass(frozen=True)
class MouthParts:
    templates: tuple  # four (h, w) arrays, order of PARTS
    origins: np.ndarray  # (4, 2) integer RI (x, y) of template centres
    search: np.ndarray  # (4, 2) search radius (rx, ry)

    def __post_init__(self):
        if len(self.templates) != 4 or np.asarray(self.origins).shape != (4, 2):
            raise MouthError("mouth parts need four templates and origins")


@dataclass(frozen=True)
class MouthAuState:
    """The four mouth AU values plus what is needed to update them.

    ``rates[k]`` holds s_i for the two landmarks feeding AU k (the lips use one
    landmark, stored twice).
    """

    alpha: np.ndarray  # (4,) in AUS order
    rates: np.ndarray  # (4, 2)
    limits: np.ndarray  # (4, 2)
    au_indices: tuple
    displacements: np.ndarray = field(default_factory=lambda: np.zeros((4, 2)))
    skipped: bool = False
    unmatched: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=bool))

    @classmethod
    def from_model(cls, model: FaceModel, full_alpha=None) -> "MouthAuState":
        idx = tuple(model.au_index(n) for n in AUS)
        full = np.zeros(model.n_au) if full_alpha is None else np.asarray(full_alpha, float)
        rates = np.array(
            [
                [model.au_rate(idx[0], "lower_lip", 1)] * 2,
                [model.au_rate(idx[1], "upper_lip", 1)] * 2,
                [model.au_rate(idx[2], "mouth_left", 0), model.au_rate(idx[2], "mouth_right", 0)],
                [model.au_rate(idx[3], "mouth_left", 1), model.au_rate(idx[3], "mouth_right", 1)],
            ]
        )
        limits = model.au_limits[list(idx)]
        return cls(np.clip(full[list(idx)], limits[:, 0], limits[:, 1]), rates, limits, idx)

    def write(self, full_alpha) -> np.ndarray:
        out = np.array(full_alpha, dtype=float)
        out[list(self.au_indices)] = self.alpha
        return out


def _cut(img: np.ndarray, center, size) -> np.ndarray:
    w, h = size
    cx, cy = int(center[0]), int(center[1])
    x0, y0 = cx - w // 2, cy - h // 2
    if x0 < 0 or y0 < 0 or x0 + w > img.shape[1] or y0 + h > img.shape[0]:
        raise MouthError(f"template at ({cx}, {cy}) leaves the patch")
    return img[y0 : y0 + h, x0 : x0 + w].copy()


def extract_parts(
    patch: RectifiedPatch,
    landmark_pixels,
    corner_size=CORNER_TEMPLATE,
    lip_size=LIP_TEMPLATE,
    corner_search: int = CORNER_SEARCH,
    lip_search: int = LIP_SEARCH,
) -> MouthParts:
    """Cut the part templates from the capture patch.

    ``landmark_pixels`` is (4, 2): the RI positions of the mouth corners and
    lips in PARTS order. Corners snap to the strongest Harris response nearby.
    """
    lp = np.asarray(landmark_pixels, dtype=float)
    if lp.shape != (4, 2):
        raise MouthError("need four landmark positions")
    origins = np.floor(lp + 0.5).astype(int)
    for k in (LEFT, RIGHT):
        try:
            origins[k] = harris_strongest(patch.intensities, lp[k], HARRIS_RADIUS)
        except ValueError as exc:
            raise MouthError(f"corner refinement window leaves the patch: {exc}") from exc
    sizes = (corner_size, corner_size, lip_size, lip_size)
    templates = []
    for o, sz in zip(origins, sizes):
        t = _cut(patch.intensities, o, sz)
        if not _cut(patch.valid, o, sz).all():
            raise MouthError("template covers cells off the mesh")
        templates.append(t)
    search = np.array([[corner_search, corner_search]] * 2 + [[0, lip_search]] * 2)
    return MouthParts(tuple(templates), origins, search)


def similarity_map(patch: RectifiedPatch, template: np.ndarray, origin, radius) -> np.ndarray:
    """ZSSD-N score for every placement ``(dx, dy)`` within ``radius`` of ``origin``.

    Returns an array indexed ``[dy + ry, dx + rx]``. The numerator compares
    zero-mean template and window; the denominator normalises by the template
    energy and the energy of the whole search region, with c = N_T^2 / N_A^2.
    Placements that would leave the patch score +inf. Invalid cells are
    left out of every sum and the sums rescaled to full counts.
    """
    t = np.asarray(template, dtype=float)
    th, tw = t.shape
    rx, ry = int(radius[0]), int(radius[1])
    ox, oy = int(origin[0]), int(origin[1])
    h, w = patch.shape
    # search region A: every pixel any placement could touch, clipped to the patch
    ax0, ay0 = ox - tw // 2 - rx, oy - th // 2 - ry
    ax1, ay1 = ax0 + tw + 2 * rx, ay0 + th + 2 * ry
    cx0, cy0, cx1, cy1 = max(ax0, 0), max(ay0, 0), min(ax1, w), min(ay1, h)
    if cx1 - cx0 < tw or cy1 - cy0 < th:
        raise SimilarityError("search region is smaller than the template")
    region = patch.intensities[cy0:cy1, cx0:cx1]
    rvalid = patch.valid[cy0:cy1, cx0:cx1]
    n_a = int(rvalid.sum())
    if n_a == 0:
        raise SimilarityError("search region has no valid cells")
    a_mean = region[rvalid].mean()
    a_energy = float(np.sum((region[rvalid] - a_mean) ** 2)) * (rvalid.size / n_a)
    tz = t - t.mean()
    t_energy = float(np.sum(tz * tz))
    n_t = t.size
    c = (n_t * n_t) / float(rvalid.size * rvalid.size)
    denom = math.sqrt(c * t_energy * a_energy)
    if not denom > 0:
        raise SimilarityError("template or search region has no contrast")

    win = sliding_window_view(region, (th, tw))  # (py, px, th, tw)
    vwin = sliding_window_view(rvalid, (th, tw)).astype(float)
    cnt = vwin.sum(axis=(2, 3))
    with np.errstate(invalid="ignore", divide="ignore"):
        wmean = np.sum(win * vwin, axis=(2, 3)) / cnt
        tmean = np.sum(t * vwin, axis=(2, 3)) / cnt
        diff = (t - tmean[..., None, None]) - (win - wmean[..., None, None])
        num = np.sum(diff * diff * vwin, axis=(2, 3)) * (n_t / cnt)
    num[cnt == 0] = np.inf

    scores = np.full((2 * ry + 1, 2 * rx + 1), np.inf)
    # placement (dx, dy) puts the window's top-left at (ox+dx-tw//2, oy+dy-th//2)
    px0 = ox - tw // 2 - rx - cx0
    py0 = oy - th // 2 - ry - cy0
    for j in range(2 * ry + 1):
        y = py0 + j
        if not 0 <= y < num.shape[0]:
            continue
        xs = px0 + np.arange(2 * rx + 1)
        ok = (xs >= 0) & (xs < num.shape[1])
        scores[j, ok] = num[y, xs[ok]]
    if not np.isfinite(scores).any():
        raise SimilarityError("no placement fits inside the patch")
    return scores / denom


def best_offset(scores: np.ndarray) -> tuple[int, int]:
    """Argmin of a map as ``(dx, dy)``; ties go to the smallest displacement."""
    ry = (scores.shape[0] - 1) // 2
    rx = (scores.shape[1] - 1) // 2
    m = np.min(scores)
    tol = 1e-12 * max(1.0, abs(m))
    jj, ii = np.nonzero(scores <= m + tol)
    dx, dy = ii - rx, jj - ry
    k = int(np.argmin(dx * dx + dy * dy))
    return int(dx[k]), int(dy[k])


def occluded_corner(head_phi_y: float, threshold: float = OCCLUSION_ANGLE):
    """Index of the corner turned away from the camera, or None below ``threshold``."""
    if abs(head_phi_y) <= threshold:
        return None
    r = rotation_matrix(0.0, head_phi_y, 0.0)
    # depth of a point on the left (-x) side after rotation
    z_left = -r[2, 0]
    return LEFT if z_left < 0 else RIGHT


def track_mouth(
    patch: RectifiedPatch,
    parts: MouthParts,
    au: MouthAuState,
    head_phi_y: float,
    threshold: float = OCCLUSION_ANGLE,
    match_threshold: float = MATCH_THRESHOLD,
) -> MouthAuState:
    """One step of the reconstruction loop.

    ``patch`` must be extracted under the current AU values, so each part's
    best match is the residual displacement still to undo. A part whose best
    score exceeds ``match_threshold`` is unmatched and reports no motion.
    """
    disp = np.zeros((4, 2))
    unmatched = np.zeros(4, dtype=bool)
    try:
        for k in range(4):
            scores = similarity_map(patch, parts.templates[k], parts.origins[k], parts.search[k])
            if np.min(scores) > match_threshold:
                unmatched[k] = True
                continue
            disp[k] = best_offset(scores)
    except SimilarityError:
        return replace(au, displacements=np.zeros((4, 2)), skipped=True, unmatched=np.ones(4, dtype=bool))
    occ = occluded_corner(head_phi_y, threshold)
    if occ is not None:
        disp[occ] = disp[RIGHT if occ == LEFT else LEFT]
    rx, ry = patch.ratio
    d_alpha = np.zeros(4)
    d_alpha[0] = disp[LOWER, 1] * ry * au.rates[0, 0]
    d_alpha[1] = disp[UPPER, 1] * ry * au.rates[1, 0]
    stretch = np.array([disp[LEFT, 0] * rx * au.rates[2, 0], disp[RIGHT, 0] * rx * au.rates[2, 1]])
    vert = np.array([disp[LEFT, 1] * ry * au.rates[3, 0], disp[RIGHT, 1] * ry * au.rates[3, 1]])
    if occ is None:
        d_alpha[2] = stretch.mean()
        d_alpha[3] = vert.mean()
    else:
        # a copied corner carries no stretch information of its own
        vis = RIGHT if occ == LEFT else LEFT
        d_alpha[2] = stretch[vis]
        d_alpha[3] = vert[vis]
    alpha = np.clip(au.alpha + d_alpha, au.limits[:, 0], au.limits[:, 1])
    return replace(au, alpha=alpha, displacements=disp, skipped=False, unmatched=unmatched)

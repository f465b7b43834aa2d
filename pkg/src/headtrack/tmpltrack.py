"""Template pose refinement with previous-frame normalisation and per-pixel outlier masking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lmsolve
from .facemodel import Anchors, FaceModel, ModelState, PoseParams, anchor_positions, intersect, posed_vertices
from .imgcore import sample_many

MIN_ANCHORS = 50
TARGET_ANCHORS = 400
ACCEPT_THRESHOLD = 0.8
EDGE_MARGIN = 2.0


class TemplateError(ValueError):
    pass


class RefineFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class FaceTemplate:
    anchors: Anchors
    intensities: np.ndarray
    template_mean: float
    template_sq_sum: float
    total_count: int
    spacing: float = float("nan")

    @classmethod
    def from_samples(cls, anchors: Anchors, intensities, spacing: float = float("nan")) -> "FaceTemplate":
        vals = np.asarray(intensities, dtype=float)
        mean = float(vals.mean())
        return cls(anchors, vals, mean, float(np.sum((vals - mean) ** 2)), int(vals.size), spacing)

    def __len__(self) -> int:
        return len(self.anchors)


@dataclass(frozen=True)
class NormStats:
    prev_mean: float
    prev_sq_sum: float
    prev_count: int

    @classmethod
    def bootstrap(cls, template: FaceTemplate) -> "NormStats":
        return cls(template.template_mean, template.template_sq_sum, template.total_count)


@dataclass(frozen=True)
class PixelOutlierMask:
    flags: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "PixelOutlierMask":
        return cls(np.zeros(n, dtype=bool))

    @property
    def n_flagged(self) -> int:
        return int(self.flags.sum())


def silhouette_area(model: FaceModel, state: ModelState) -> float:
    """Projected area of the mesh, counting only camera-facing triangles."""
    v = posed_vertices(model, state)[model.triangles][:, :, :2]
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    cross = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    # winding of the frontal mesh decides which sign faces the camera
    sign = np.sign(np.sum(cross)) or 1.0
    return float(np.sum(np.clip(cross * sign, 0.0, None)) / 2.0)


def _interior(model: FaceModel, state: ModelState, pts: np.ndarray, margin: float) -> np.ndarray:
    if margin <= 0:
        return np.ones(len(pts), dtype=bool)
    ok = np.ones(len(pts), dtype=bool)
    for dx, dy in ((margin, 0.0), (-margin, 0.0), (0.0, margin), (0.0, -margin)):
        ok &= intersect(model, state, pts + [dx, dy]).hit
    return ok


def auto_spacing(model: FaceModel, state: ModelState, target: int = TARGET_ANCHORS, edge_margin: float = 0.0) -> float:
    """Spacing that puts about ``target`` grid points inside the silhouette."""
    area = silhouette_area(model, state)
    if edge_margin > 0:
        # the margin strips a band of roughly perimeter * margin
        v = posed_vertices(model, state)[:, :2]
        ext = v.max(axis=0) - v.min(axis=0)
        perimeter = np.pi * (ext[0] + ext[1]) / 2.0
        area = max(area - perimeter * edge_margin, area * 0.25)
    return float(np.sqrt(area / target))


def grid_points(model: FaceModel, state: ModelState, spacing: float) -> np.ndarray:
    pts = posed_vertices(model, state)[:, :2]
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    xs = np.arange(lo[0] + spacing / 2.0, hi[0], spacing)
    ys = np.arange(lo[1] + spacing / 2.0, hi[1], spacing)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def select_grid_template(
    model: FaceModel,
    state: ModelState,
    frame: np.ndarray,
    spacing: float | None = None,
    edge_margin: float = EDGE_MARGIN,
) -> FaceTemplate:
    """Grid template over the projected model.

    Grid points closer than ``edge_margin`` pixels to the silhouette are dropped
    so that no template sample mixes face and background.
    """
    if spacing is None:
        spacing = auto_spacing(model, state, edge_margin=edge_margin)
    if not spacing > 0:
        raise TemplateError("grid spacing must be positive")
    pts = grid_points(model, state, spacing)
    anchors = intersect(model, state, pts)
    keep = anchors.hit & _interior(model, state, pts, edge_margin)
    anchors = anchors.subset(keep)
    pos = anchor_positions(model, state, anchors)[:, :2]
    vals, valid = sample_many(frame, pos)
    anchors = anchors.subset(valid)
    if len(anchors) < MIN_ANCHORS:
        raise TemplateError(f"template too sparse: {len(anchors)} anchors (< {MIN_ANCHORS})")
    return FaceTemplate.from_samples(anchors, vals[valid], spacing)


def sample_template(template: FaceTemplate, model: FaceModel, frame: np.ndarray, state: ModelState):
    """Frame intensities under the posed anchors: ``(values, in_frame)``."""
    pos = anchor_positions(model, state, template.anchors)[:, :2]
    return sample_many(frame, pos)


def _normaliser(template: FaceTemplate, stats: NormStats, n_used: int) -> float:
    c = stats.prev_count * template.total_count / float(n_used * n_used)
    v = np.sqrt(c * template.template_sq_sum * stats.prev_sq_sum)
    if not v > 0:
        raise TemplateError(f"normalisation v = {v} is not positive (corrupt stats)")
    return float(v)


def _residual_from_samples(template, stats, vals, use):
    n_used = int(use.sum())
    if n_used == 0:
        raise TemplateError("no usable template anchors")
    v = _normaliser(template, stats, n_used)
    e = ((template.intensities - template.template_mean) - (vals - stats.prev_mean)) / np.sqrt(v)
    return np.where(use, e, 0.0)


def residual_norm(
    template: FaceTemplate,
    frame: np.ndarray,
    state: ModelState,
    stats: NormStats,
    mask: PixelOutlierMask | None,
    model: FaceModel,
) -> tuple[np.ndarray, np.ndarray]:
    """Normalised residual per anchor and the out-of-frame flags.

    Masked and out-of-frame anchors contribute exactly 0.
    """
    vals, in_frame = sample_template(template, model, frame, state)
    use = in_frame.copy()
    if mask is not None:
        use &= ~mask.flags
    return _residual_from_samples(template, stats, vals, use), ~in_frame


@dataclass
class RefineResult:
    pose: PoseParams
    final_error: float
    stats: NormStats
    residuals: np.ndarray  # every anchor at the final pose, mask ignored
    out_of_frame: np.ndarray
    iterations: int
    n_used: int

    def acceptable(self, threshold: float = ACCEPT_THRESHOLD) -> bool:
        return self.final_error <= threshold


def default_config(pose: PoseParams, max_iterations: int = 10) -> lmsolve.LmConfig:
    return lmsolve.LmConfig(max_iterations=max_iterations, fd_steps=(1e-3, 1e-3, 1e-3, 1e-3 * pose.s, 0.1, 0.1))


def refine(
    template: FaceTemplate,
    frame: np.ndarray,
    initial: ModelState,
    stats: NormStats,
    mask: PixelOutlierMask | None,
    model: FaceModel,
    config: lmsolve.LmConfig | None = None,
) -> RefineResult:
    n = len(template)
    flags = np.zeros(n, dtype=bool) if mask is None else mask.flags
    if flags.shape != (n,):
        raise ValueError("mask length must equal the anchor count")
    _, in0 = sample_template(template, model, frame, initial)
    if in0.sum() * 2 < n:
        raise RefineFailed(f"{n - int(in0.sum())} of {n} template anchors are outside the frame")
    use = in0 & ~flags
    if use.sum() < 6:
        raise RefineFailed("too few usable anchors")
    cfg = config or default_config(initial.pose)

    def fn(a):
        if not (a[3] > 0 and np.all(np.isfinite(a))):
            return np.full(n, 1e6)
        st = initial.with_pose(PoseParams.from_array(a))
        vals, _ = sample_template(template, model, frame, st)
        # the used set is frozen at the start so the cost stays continuous
        return _residual_from_samples(template, stats, vals, use)

    try:
        res = lmsolve.minimize(fn, initial.pose.as_array(), cfg)
    except (lmsolve.LmError, TemplateError) as exc:
        raise RefineFailed(str(exc)) from exc
    if not (res.params[3] > 0 and np.isfinite(res.final_error)):
        raise RefineFailed("solver left the valid pose domain")
    pose = PoseParams.from_array(res.params)
    final = initial.with_pose(pose)
    vals, in_frame = sample_template(template, model, frame, final)
    if in_frame.sum() * 2 < n:
        raise RefineFailed("template left the frame during refinement")
    fitted = use & in_frame
    mean = float(vals[fitted].mean())
    sq = float(np.sum((vals[fitted] - mean) ** 2))
    if not sq > 0:
        raise RefineFailed("fitted image region has no contrast")
    new_stats = NormStats(mean, sq, int(fitted.sum()))
    full = _residual_from_samples(template, stats, vals, in_frame)
    return RefineResult(pose, res.final_error, new_stats, full, ~in_frame, res.iterations, int(use.sum()))


def detect_pixel_outliers(residuals, exclude=None) -> PixelOutlierMask:
    """Flag anchors whose squared residual exceeds the median-centred spread.

    ``exclude`` marks anchors that are flagged regardless (e.g. out of frame)
    and left out of the statistics.
    """
    e = np.asarray(residuals, dtype=float)
    x = e * e
    ex = np.zeros(e.size, dtype=bool) if exclude is None else np.asarray(exclude, dtype=bool)
    flags = ex.copy()
    xs = x[~ex]
    if xs.size:
        med = np.median(xs)
        sigma = np.sqrt(np.sum((xs - med) ** 2) / xs.size)
        flags[~ex] = xs > sigma
    return PixelOutlierMask(flags)

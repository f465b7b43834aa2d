"""Frontal-view rectified patches of model regions, pinned to the mesh surface."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .facemodel import Anchors, FaceModel, ModelState, PoseParams, anchor_positions, deform, intersect
from .imgcore import sample_many

MOUTH_SIZE = (100, 60)
BROW_SIZE = (30, 30)
MOUTH_CORNER_MARGIN = 0.25
MOUTH_LIP_MARGIN = 0.40
BROW_SPAN_MARGIN = 0.50


class RectifyError(ValueError):
    pass


@dataclass(frozen=True)
class RectSpec:
    """Region origin ``(tx, ty)`` and extent ``(aw, ah)`` in frontal model units, sampled on a ``w x h`` grid."""

    tx: float
    ty: float
    aw: float
    ah: float
    w: int
    h: int

    def __post_init__(self):
        if self.w < 2 or self.h < 2:
            raise RectifyError("rectified size must be at least 2x2")
        if not (self.aw > 0 and self.ah > 0):
            raise RectifyError("region extent must be positive")

    @property
    def ratio(self) -> tuple[float, float]:
        """Model units per RI pixel along x and y."""
        return (self.aw / self.w, self.ah / self.h)

    def cell_centers(self) -> np.ndarray:
        """H for every cell in row-major (y, x) order, shape (h*w, 2)."""
        sx, sy = self.ratio
        gy, gx = np.mgrid[0 : self.h, 0 : self.w]
        return np.stack([sx * gx.ravel() + self.tx, sy * gy.ravel() + self.ty], axis=1)

    def to_model(self, x, y) -> np.ndarray:
        sx, sy = self.ratio
        return np.array([sx * np.asarray(x, float) + self.tx, sy * np.asarray(y, float) + self.ty])

    def to_pixel(self, mx, my) -> np.ndarray:
        sx, sy = self.ratio
        return np.array([(np.asarray(mx, float) - self.tx) / sx, (np.asarray(my, float) - self.ty) / sy])


@dataclass(frozen=True)
class AnchorGrid:
    spec: RectSpec
    anchors: Anchors  # h*w anchors, row-major
    valid: np.ndarray  # (h, w) bool

    @property
    def ratio(self) -> tuple[float, float]:
        return self.spec.ratio

    @property
    def shape(self) -> tuple[int, int]:
        return (self.spec.h, self.spec.w)


@dataclass(frozen=True)
class RectifiedPatch:
    """Intensities are stored (h, w), row = RI y; invalid cells hold 0."""

    intensities: np.ndarray
    valid: np.ndarray
    grid: AnchorGrid

    @property
    def ratio(self) -> tuple[float, float]:
        return self.grid.ratio

    @property
    def shape(self) -> tuple[int, int]:
        return self.intensities.shape


def frontal_state(model: FaceModel, neutral: ModelState) -> ModelState:
    """Identity pose at unit scale: screen coordinates equal model x, y."""
    return ModelState(neutral.sigma, neutral.alpha, PoseParams())


def build_anchor_grid(model: FaceModel, neutral_state: ModelState, spec: RectSpec) -> AnchorGrid:
    """Intersect every grid cell centre with the frontal model.

    ``neutral_state`` supplies the deformation; its pose must have no rotation.
    """
    pose = neutral_state.pose
    if max(abs(pose.phi_x), abs(pose.phi_y), abs(pose.phi_z)) > 1e-12:
        raise RectifyError("anchor grids are built against a frontal (unrotated) model")
    anchors = intersect(model, frontal_state(model, neutral_state), spec.cell_centers())
    valid = anchors.hit.reshape(spec.h, spec.w)
    if valid.sum() * 2 < valid.size:
        raise RectifyError(f"region misses the mesh for {valid.size - int(valid.sum())} of {valid.size} cells")
    return AnchorGrid(spec, anchors, valid)


def extract(grid: AnchorGrid, frame: np.ndarray, state: ModelState, model: FaceModel) -> RectifiedPatch:
    """Sample ``frame`` at the posed anchors; cells off the mesh or the frame are invalid."""
    h, w = grid.shape
    hit = grid.valid.ravel()
    vals = np.zeros(h * w)
    ok = np.zeros(h * w, dtype=bool)
    sub = grid.anchors.subset(hit)
    pos = anchor_positions(model, state, sub)[:, :2]
    v, inside = sample_many(frame, pos)
    vals[hit] = np.where(inside, v, 0.0)
    ok[hit] = inside
    return RectifiedPatch(vals.reshape(h, w), ok.reshape(h, w), grid)


def _landmarks(model: FaceModel, neutral: ModelState, names) -> np.ndarray:
    verts = deform(model, neutral.sigma, neutral.alpha)
    return np.array([verts[model.landmarks[n], :2] for n in names])


def mouth_spec(model: FaceModel, neutral: ModelState, size: tuple[int, int] = MOUTH_SIZE) -> RectSpec:
    """Corners widened by a quarter of the mouth width, lips by 40% of the lip height."""
    ml, mr, up, lo = _landmarks(model, neutral, ("mouth_left", "mouth_right", "upper_lip", "lower_lip"))
    width = mr[0] - ml[0]
    height = lo[1] - up[1]
    if width <= 0 or height <= 0:
        raise RectifyError("mouth landmarks are degenerate")
    x0 = ml[0] - MOUTH_CORNER_MARGIN * width
    x1 = mr[0] + MOUTH_CORNER_MARGIN * width
    y0 = up[1] - MOUTH_LIP_MARGIN * height
    y1 = lo[1] + MOUTH_LIP_MARGIN * height
    w, h = size
    # cell centres span the region end to end
    return RectSpec(x0, y0, (x1 - x0) * w / (w - 1), (y1 - y0) * h / (h - 1), w, h)


def brow_spec(model: FaceModel, neutral: ModelState, side: str, size: tuple[int, int] = BROW_SIZE) -> RectSpec:
    """Square region around one eyebrow, widened by half the part span on each side."""
    pts = _landmarks(model, neutral, [f"{side}_brow_{j}" for j in range(3)])
    lo_x, hi_x = pts[:, 0].min(), pts[:, 0].max()
    span = hi_x - lo_x
    if span <= 0:
        raise RectifyError("eyebrow landmarks are degenerate")
    ext = span * (1.0 + 2.0 * BROW_SPAN_MARGIN)
    cx = (lo_x + hi_x) / 2.0
    cy = float(pts[:, 1].mean())
    w, h = size
    x0 = cx - ext / 2.0
    y0 = cy - ext / 2.0
    return RectSpec(x0, y0, ext * w / (w - 1), ext * h / (h - 1), w, h)

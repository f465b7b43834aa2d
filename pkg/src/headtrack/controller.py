"""Head tracker orchestration: initial fit from detections, flow pre-estimation, template refinement and loss handling."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import preest, tmpltrack
from .facemodel import FaceModel, ModelState, PoseParams, deform, project, rotation_matrix, warp
from .klt import FlowPyramid, KltConfig, track_points
from .lmsolve import LmConfig

log = logging.getLogger(__name__)

MOUTH_SU_FACTOR = 10.0


class InitError(ValueError):
    pass


@dataclass(frozen=True)
class Detections:
    face_rect: tuple[float, float, float, float]
    left_eye: tuple[float, float]
    right_eye: tuple[float, float]
    mouth: tuple[float, float]

    def __post_init__(self):
        if np.allclose(self.left_eye, self.right_eye):
            raise InitError("eye detections coincide")
        vals = np.r_[self.face_rect, self.left_eye, self.right_eye, self.mouth]
        if not np.all(np.isfinite(vals)):
            raise InitError("non-finite detection")

    @property
    def face_center(self) -> np.ndarray:
        x, y, w, h = self.face_rect
        return np.array([x + w / 2.0, y + h / 2.0])

    def inside(self, shape) -> bool:
        h, w = shape
        pts = np.array([self.left_eye, self.right_eye, self.mouth])
        return bool(np.all((pts[:, 0] >= 0) & (pts[:, 0] <= w - 1) & (pts[:, 1] >= 0) & (pts[:, 1] <= h - 1)))

    @classmethod
    def from_dict(cls, d: dict) -> "Detections":
        try:
            return cls(tuple(d["face"]), tuple(d["left_eye"]), tuple(d["right_eye"]), tuple(d["mouth"]))
        except KeyError as exc:
            raise InitError(f"detection entry missing {exc}") from exc


def load_detections(path) -> dict[int, Detections]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    entries = data.get("frames", data) if isinstance(data, dict) else data
    out = {int(e["frame"]): Detections.from_dict(e) for e in entries}
    if 0 not in out:
        raise InitError("detections file lacks the mandatory frame 0 entry")
    return out


def save_detections(path, entries: list[dict]) -> None:
    Path(path).write_text(json.dumps(entries, indent=1), encoding="utf-8")


@dataclass(frozen=True)
class SwitchConfig:
    d: float = 10.0
    c_sigma: float = 100.0
    template_error_threshold: float = tmpltrack.ACCEPT_THRESHOLD

    def __post_init__(self):
        if min(self.d, self.c_sigma, self.template_error_threshold) <= 0:
            raise ValueError("switch thresholds must be positive")


@dataclass(frozen=True)
class TrackerConfig:
    switches: SwitchConfig = SwitchConfig()
    klt: KltConfig = KltConfig()
    pre_estimation: bool = True
    preest_outliers: bool = True
    pixel_outliers: bool = True
    outlier_c: float = preest.DEFAULT_C
    outlier_consistent: bool = False
    preest_mode: str = preest.PER_PAIR
    preest_iterations: int = 10
    template_iterations: int = 10
    presmooth: float = 0.8
    grid_spacing: float | None = None
    mouth_su_factor: float = MOUTH_SU_FACTOR
    max_mask_fraction: float = 0.5


@dataclass
class StepLog:
    frame: int
    d_optflow: float = 0.0
    sigma_optflow: float = 0.0
    template_error: float = float("nan")
    acceptable: bool = False
    refine_failed: bool = False
    reprojected: bool = False
    lost: bool = False
    cause: str = ""
    preest_skipped: bool = False
    mask_degenerate: bool = False
    n_active_pairs: int = 0
    n_preest_outliers: int = 0
    n_pixel_outliers: int = 0
    ms_preest: float = 0.0
    ms_template: float = 0.0


@dataclass
class TrackState:
    model_state: ModelState
    prev_pose: PoseParams
    flow_points: np.ndarray
    preest_flags: np.ndarray
    template: tmpltrack.FaceTemplate
    stats: tmpltrack.NormStats
    pixel_mask: tmpltrack.PixelOutlierMask
    pyramid: FlowPyramid | None
    frame_index: int = 0
    lost: bool = False
    frames_since_reproject: int = 0
    log: list = field(default_factory=list)

    @property
    def pose(self) -> PoseParams:
        return self.model_state.pose


def preprocess(frame: np.ndarray, config: TrackerConfig) -> np.ndarray:
    f = np.asarray(frame, dtype=np.float64)
    return gaussian_filter(f, config.presmooth) if config.presmooth > 0 else f


# --- initialisation -------------------------------------------------------------


def initialize(det: Detections, model: FaceModel, f: float = MOUTH_SU_FACTOR) -> ModelState:
    base = deform(model, np.zeros(model.n_su), np.zeros(model.n_au))
    lm = model.landmarks
    le, re = np.asarray(det.left_eye, float), np.asarray(det.right_eye, float)
    diff = re - le
    dist = float(np.linalg.norm(diff))
    if dist < 1e-9:
        raise InitError("eye detections coincide")
    e_hat = diff / dist
    rz = math.acos(float(np.clip(e_hat[1], -1.0, 1.0))) - math.pi / 2.0
    model_eye = float(np.linalg.norm(base[lm["right_eye"], :2] - base[lm["left_eye"], :2]))
    s = dist / model_eye
    rot = rotation_matrix(0.0, 0.0, rz)[:2]
    t = det.face_center
    pl = s * rot @ base[lm["left_eye"]]
    pr = s * rot @ base[lm["right_eye"]]
    correction = (((pl + t) - le) + ((pr + t) - re)) / 2.0
    t_corr = t - correction
    p = s * rot @ base[lm["mouth_center"]]
    sigma = np.zeros(model.n_su)
    if model.n_su:
        # f is the inverse of the SU's displacement per unit (0.1 in the bundled model)
        raw = f * (det.mouth[1] - (p[1] + t_corr[1])) / s
        lo, hi = model.su_limits[0]
        if not lo <= raw <= hi:
            log.warning("mouth SU %.3f outside [%g, %g]; clamped", raw, lo, hi)
        sigma[0] = float(np.clip(raw, lo, hi))
    pose = PoseParams(0.0, 0.0, rz, s, float(t_corr[0]), float(t_corr[1]))
    return ModelState(sigma, np.zeros(model.n_au), pose)


def displacement(a_optflow: PoseParams, a_prev: PoseParams, reference_point) -> float:
    p = np.asarray(reference_point, dtype=float)
    return float(np.linalg.norm(project(warp(p, a_optflow)) - project(warp(p, a_prev))))


def _vertices(model: FaceModel, ms: ModelState) -> np.ndarray:
    return deform(model, ms.sigma, ms.alpha)


def start(frame: np.ndarray, det: Detections, model: FaceModel, config: TrackerConfig = TrackerConfig(), frame_index: int = 0) -> TrackState:
    """Fit the model to detections on ``frame`` and bootstrap both trackers."""
    img = preprocess(frame, config)
    if not det.inside(img.shape):
        raise InitError("detections outside the frame")
    ms = initialize(det, model, config.mouth_su_factor)
    template = tmpltrack.select_grid_template(model, ms, img, config.grid_spacing)
    pts = project(warp(_vertices(model, ms), ms.pose))
    return TrackState(
        model_state=ms,
        prev_pose=ms.pose,
        flow_points=pts,
        preest_flags=np.zeros(len(pts), dtype=bool),
        template=template,
        stats=tmpltrack.NormStats.bootstrap(template),
        pixel_mask=tmpltrack.PixelOutlierMask.empty(len(template)),
        pyramid=FlowPyramid(img, config.klt.pyramid_levels) if config.pre_estimation else None,
        frame_index=frame_index,
    )


def reinitialize(frame: np.ndarray, det: Detections | None, state: TrackState, model: FaceModel, config: TrackerConfig = TrackerConfig()) -> TrackState:
    """Reset both trackers from fresh detections; without detections the state stays lost."""
    idx = state.frame_index + 1
    if det is None:
        return replace(state, frame_index=idx, lost=True)
    try:
        new = start(frame, det, model, config, idx)
    except (InitError, tmpltrack.TemplateError) as exc:
        log.warning("re-initialisation failed: %s", exc)
        return replace(state, frame_index=idx, lost=True)
    new.log = state.log
    return new


# --- per-frame step -------------------------------------------------------------


def step(frame: np.ndarray, state: TrackState, model: FaceModel, config: TrackerConfig = TrackerConfig()) -> TrackState:
    if state.lost:
        raise ValueError("tracker is lost; re-initialise before stepping")
    idx = state.frame_index + 1
    entry = StepLog(idx)
    img = preprocess(frame, config)
    ms = state.model_state
    verts = _vertices(model, ms)
    a_prev = state.prev_pose
    t0 = time.perf_counter()

    a_optflow = a_prev
    flow_points = state.flow_points
    tracked = np.zeros(len(flow_points), dtype=bool)
    new_flags = state.preest_flags
    pyr = None
    if config.pre_estimation:
        pyr = FlowPyramid(img, config.klt.pyramid_levels)
        flow_points, tracked = track_points(state.pyramid, pyr, state.flow_points, config.klt)
        active = tracked.copy()
        if config.preest_outliers:
            active &= ~state.preest_flags
        corr = preest.Correspondences(verts, np.where(tracked[:, None], flow_points, 0.0), active)
        entry.n_active_pairs = corr.n_active
        if corr.n_active >= preest.MIN_ACTIVE:
            try:
                cfg = preest.default_config(a_prev, config.preest_iterations)
                a_optflow = preest.estimate(corr, a_prev, cfg, config.preest_mode)
            except preest.PreestError as exc:
                entry.preest_skipped = True
                entry.cause = f"pre-estimation: {exc}"
        else:
            entry.preest_skipped = True
        dist = preest.pair_distances(corr, a_optflow)
        if tracked.sum() >= 2:
            report = preest.detect_outliers(dist[tracked], config.outlier_c, config.outlier_consistent)
            entry.sigma_optflow = report.stddev
            new_flags = np.zeros(len(flow_points), dtype=bool)
            new_flags[tracked] = report.flags
            entry.n_preest_outliers = report.n_outliers
        else:
            new_flags = np.zeros(len(flow_points), dtype=bool)
    t1 = time.perf_counter()
    entry.ms_preest = (t1 - t0) * 1e3

    mask = state.pixel_mask if config.pixel_outliers else None
    start_state = ms.with_pose(a_optflow)
    refined = None
    try:
        tcfg = LmConfig(max_iterations=config.template_iterations, fd_steps=tmpltrack.default_config(a_optflow).fd_steps)
        refined = tmpltrack.refine(state.template, img, start_state, state.stats, mask, model, tcfg)
    except tmpltrack.RefineFailed as exc:
        entry.refine_failed = True
        entry.cause = f"template: {exc}"
    entry.ms_template = (time.perf_counter() - t1) * 1e3

    entry.d_optflow = displacement(a_optflow, a_prev, verts[model.landmarks["nose_tip"]]) if config.pre_estimation else 0.0
    sw = config.switches
    if refined is not None:
        entry.template_error = refined.final_error
        entry.acceptable = refined.acceptable(sw.template_error_threshold)
    lost = entry.refine_failed or (not entry.acceptable and entry.d_optflow < sw.d)
    if lost and not entry.cause:
        entry.cause = f"template error {entry.template_error:.3f} above {sw.template_error_threshold}"
    entry.lost = lost

    pose = refined.pose if (refined is not None and entry.acceptable) else a_optflow
    new_ms = ms.with_pose(pose)
    stats = state.stats
    pixel_mask = state.pixel_mask
    if refined is not None and entry.acceptable:
        stats = refined.stats
        if config.pixel_outliers:
            pixel_mask = tmpltrack.detect_pixel_outliers(refined.residuals, refined.out_of_frame)
            if pixel_mask.n_flagged > config.max_mask_fraction * len(pixel_mask.flags):
                # near-uniform residuals (e.g. a perfect fit plus a mean offset) flag
                # nearly everything; such a mask carries no occlusion information
                entry.mask_degenerate = True
                pixel_mask = tmpltrack.PixelOutlierMask(refined.out_of_frame.copy())
            entry.n_pixel_outliers = pixel_mask.n_flagged

    if config.pre_estimation:
        update = entry.acceptable and (entry.d_optflow <= sw.d or entry.sigma_optflow > sw.c_sigma)
        model_pts = project(warp(verts, pose))
        if update:
            flow_points = model_pts
            entry.reprojected = True
        else:
            # lost KLT points are re-seeded from the model instead of re-detected
            flow_points = np.where(tracked[:, None], flow_points, model_pts)
    entry.reprojected = bool(entry.reprojected)

    state.log.append(entry)
    return TrackState(
        model_state=new_ms,
        prev_pose=pose,
        flow_points=flow_points,
        preest_flags=new_flags,
        template=state.template,
        stats=stats,
        pixel_mask=pixel_mask,
        pyramid=pyr,
        frame_index=idx,
        lost=lost,
        frames_since_reproject=0 if entry.reprojected else state.frames_since_reproject + 1,
        log=state.log,
    )

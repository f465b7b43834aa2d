"""Per-frame driver: head tracker, then mouth and eyebrow trackers, with component timings."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import brow, controller, mouth, rectify, tmpltrack
from .facemodel import FaceModel, ModelState, deform

log = logging.getLogger(__name__)

TIMING_KEYS = ("preest", "template", "mouth", "brow", "total")
SIDES = ("left", "right")


@dataclass(frozen=True)
class PipelineConfig:
    tracker: controller.TrackerConfig = controller.TrackerConfig()
    track_mouth: bool = True
    track_brows: bool = True
    brow_c: float = brow.DEFAULT_C
    mouth_rotation_threshold: float = mouth.OCCLUSION_ANGLE
    mouth_match_threshold: float = mouth.MATCH_THRESHOLD


def _update(obj, overrides: dict, where: str):
    known = {f.name: f for f in fields(obj)}
    unknown = set(overrides) - set(known)
    if unknown:
        raise ValueError(f"unknown {where} setting(s): {', '.join(sorted(unknown))}")
    return replace(obj, **overrides)


def config_from_dict(d: dict, base: PipelineConfig | None = None) -> PipelineConfig:
    """Apply nested overrides (``tracker`` with its ``switches``/``klt``) to a config."""
    base = base or PipelineConfig()
    d = dict(d)
    tr = dict(d.pop("tracker", {}))
    tracker = base.tracker
    if "switches" in tr:
        tracker = replace(tracker, switches=_update(tracker.switches, tr.pop("switches"), "switch"))
    if "klt" in tr:
        tracker = replace(tracker, klt=_update(tracker.klt, tr.pop("klt"), "klt"))
    tracker = _update(tracker, tr, "tracker")
    return _update(replace(base, tracker=tracker), d, "pipeline")


def config_to_dict(cfg: PipelineConfig) -> dict:
    return asdict(cfg)


@dataclass
class FrameResult:
    frame: int
    pose: np.ndarray  # (6,)
    alpha: np.ndarray  # (n_au,)
    lost: bool
    reinitialized: bool = False
    ms: dict = field(default_factory=dict)


@dataclass
class FeatureTrackers:
    mouth_grid: rectify.AnchorGrid | None = None
    mouth_parts: mouth.MouthParts | None = None
    mouth_au: mouth.MouthAuState | None = None
    brow_grids: dict = field(default_factory=dict)
    brow_parts: dict = field(default_factory=dict)
    brow_a: dict = field(default_factory=dict)


def _landmark_pixels(model: FaceModel, neutral: ModelState, spec: rectify.RectSpec, names) -> np.ndarray:
    verts = deform(model, neutral.sigma, neutral.alpha)
    return np.array([spec.to_pixel(*verts[model.landmarks[n], :2]) for n in names])


def setup_features(frame: np.ndarray, ms: ModelState, model: FaceModel, config: PipelineConfig) -> FeatureTrackers:
    """Build anchor grids against the neutral deformation and cut the part templates.

    The capture frame is assumed frontal with a closed mouth and relaxed brows.
    """
    ft = FeatureTrackers()
    neutral = ModelState(ms.sigma, np.zeros(model.n_au), rectify.frontal_state(model, ms).pose)
    capture = ModelState(ms.sigma, np.zeros(model.n_au), ms.pose)
    if config.track_mouth:
        spec = rectify.mouth_spec(model, neutral)
        ft.mouth_grid = rectify.build_anchor_grid(model, neutral, spec)
        patch = rectify.extract(ft.mouth_grid, frame, capture, model)
        ft.mouth_parts = mouth.extract_parts(patch, _landmark_pixels(model, neutral, spec, mouth.LANDMARKS))
        ft.mouth_au = mouth.MouthAuState.from_model(model)
    if config.track_brows:
        for side in SIDES:
            spec = rectify.brow_spec(model, neutral, side)
            grid = rectify.build_anchor_grid(model, neutral, spec)
            patch = rectify.extract(grid, frame, capture, model)
            names = [f"{side}_brow_{j}" for j in range(3)]
            ft.brow_grids[side] = grid
            ft.brow_parts[side] = brow.extract_parts(patch, _landmark_pixels(model, neutral, spec, names), model, side)
            ft.brow_a[side] = np.zeros(3)
    return ft


def _brow_au_indices(ft: FeatureTrackers) -> list[int]:
    return [i for p in ft.brow_parts.values() for i in p.au_indices]


def update_features(frame: np.ndarray, ms: ModelState, ft: FeatureTrackers, model: FaceModel, config: PipelineConfig):
    """Run the mouth and brow trackers on ``frame``; returns (alpha, ms_mouth, ms_brow)."""
    alpha = np.array(ms.alpha, dtype=float)
    t0 = time.perf_counter()
    if ft.mouth_grid is not None:
        patch = rectify.extract(ft.mouth_grid, frame, ms.with_alpha(alpha), model)
        ft.mouth_au = mouth.track_mouth(
            patch, ft.mouth_parts, ft.mouth_au, ms.pose.phi_y, config.mouth_rotation_threshold, config.mouth_match_threshold
        )
        alpha = ft.mouth_au.write(alpha)
    t1 = time.perf_counter()
    if ft.brow_grids:
        # brow patches are sampled with the brow AUs at rest, so a is an absolute displacement
        rest = alpha.copy()
        rest[_brow_au_indices(ft)] = 0.0
        st = ms.with_alpha(rest)
        for side in SIDES:
            patch = rectify.extract(ft.brow_grids[side], frame, st, model)
            res = brow.track_brow(patch, ft.brow_parts[side], ft.brow_a[side], config.brow_c)
            ft.brow_a[side] = res.a
            alpha = res.write(ft.brow_parts[side], alpha)
    t2 = time.perf_counter()
    return alpha, (t1 - t0) * 1e3, (t2 - t1) * 1e3


class Pipeline:
    """Stateful tracker for one frame stream.

    ``process`` takes the detections for the frame, if any; they are only
    used to re-initialise after a loss.
    """

    def __init__(self, model: FaceModel, config: PipelineConfig | None = None):
        self.model = model
        self.config = config or PipelineConfig()
        self.state: controller.TrackState | None = None
        self.features: FeatureTrackers | None = None
        self.index = -1

    def _start(self, frame, det: controller.Detections, index: int) -> None:
        cfg = self.config
        self.state = controller.start(frame, det, self.model, cfg.tracker, index)
        try:
            self.features = setup_features(frame, self.state.model_state, self.model, cfg)
        except (rectify.RectifyError, mouth.MouthError, brow.BrowError) as exc:
            log.warning("feature trackers disabled: %s", exc)
            self.features = FeatureTrackers()

    def process(self, frame: np.ndarray, det: controller.Detections | None = None) -> FrameResult:
        frame = np.asarray(frame, dtype=np.float64)
        self.index += 1
        k = self.index
        ms = {key: 0.0 for key in TIMING_KEYS}
        t0 = time.perf_counter()
        if self.state is None:
            if det is None:
                raise controller.InitError("the first frame needs detections")
            self._start(frame, det, k)
            ms["total"] = (time.perf_counter() - t0) * 1e3
            return FrameResult(k, self.state.pose.as_array(), self.state.model_state.alpha.copy(), False, True, ms)
        if self.state.lost:
            old_log = self.state.log
            if det is None:
                self.state.frame_index = k
                return FrameResult(k, self.state.pose.as_array(), self.state.model_state.alpha.copy(), True, False, ms)
            try:
                self._start(frame, det, k)
            except (controller.InitError, tmpltrack.TemplateError) as exc:
                log.warning("re-initialisation failed at frame %d: %s", k, exc)
                self.state.frame_index = k
                return FrameResult(k, self.state.pose.as_array(), self.state.model_state.alpha.copy(), True, False, ms)
            self.state.log = old_log
            ms["total"] = (time.perf_counter() - t0) * 1e3
            return FrameResult(k, self.state.pose.as_array(), self.state.model_state.alpha.copy(), False, True, ms)

        self.state = controller.step(frame, self.state, self.model, self.config.tracker)
        entry = self.state.log[-1]
        ms["preest"] = entry.ms_preest
        ms["template"] = entry.ms_template
        if not self.state.lost and self.features is not None:
            alpha, ms["mouth"], ms["brow"] = update_features(frame, self.state.model_state, self.features, self.model, self.config)
            self.state.model_state = self.state.model_state.with_alpha(alpha)
        ms["total"] = (time.perf_counter() - t0) * 1e3
        return FrameResult(k, self.state.pose.as_array(), self.state.model_state.alpha.copy(), self.state.lost, False, ms)

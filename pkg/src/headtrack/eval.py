"""Ground-truth error metrics and the experiment runner behind ``bench``."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import controller, pipeline, synth
from .facemodel import FaceModel, anchor_positions, load_model
from .imgcore import read_frame
from .synth import Trajectory

log = logging.getLogger(__name__)

POSE_NAMES = ("phix", "phiy", "phiz", "s", "tx", "ty")
SWITCHES = ("pre_estimation", "preest_outliers", "pixel_outliers")


def parameter_names(n_au: int) -> list[str]:
    return list(POSE_NAMES) + [f"au{i}" for i in range(n_au)]


def trajectory_header(n_au: int) -> list[str]:
    return ["frame", *parameter_names(n_au), "lost"] + [f"ms_{k}" for k in pipeline.TIMING_KEYS]


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, Trajectory):
        return np.hstack([x.poses, x.alphas])
    m = np.asarray(x, dtype=float)
    return m[:, None] if m.ndim == 1 else m


def rmse(estimated, truth) -> np.ndarray:
    """Root-mean-square error per parameter over the frames.

    Accepts trajectories or arrays shaped (N,) / (N, P).
    """
    v = _as_matrix(estimated)
    g = _as_matrix(truth)
    if v.shape != g.shape:
        raise ValueError(f"estimated {v.shape} and truth {g.shape} differ in shape")
    if v.shape[0] == 0:
        raise ValueError("empty trajectory")
    e = np.sqrt(np.mean((v - g) ** 2, axis=0))
    scalar = not isinstance(estimated, Trajectory) and np.ndim(estimated) == 1
    return float(e[0]) if scalar else e


def mean_error(errors) -> np.ndarray:
    """Per-parameter mean of several per-video error vectors."""
    errs = [np.asarray(e, dtype=float) for e in errors]
    if not errs:
        raise ValueError("mean_error needs at least one error vector")
    return np.mean(np.stack(errs), axis=0)


@dataclass
class OcclusionStats:
    """Pixel-outlier flags split by whether the anchor lay under the occluder."""

    occluded_flagged: int = 0
    occluded_total: int = 0
    clear_flagged: int = 0
    clear_total: int = 0

    @property
    def occluded_rate(self) -> float:
        return self.occluded_flagged / self.occluded_total if self.occluded_total else float("nan")

    @property
    def clear_rate(self) -> float:
        return self.clear_flagged / self.clear_total if self.clear_total else float("nan")

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(occluded_rate=self.occluded_rate, clear_rate=self.clear_rate)
        return d


@dataclass
class ErrorReport:
    name: str
    n_frames: int
    rmse: dict
    losses: int
    timing_ms: dict
    mean_template_error: float
    switches: dict
    occlusion: OcclusionStats | None = None
    seed: int | None = None
    estimates: np.ndarray | None = field(default=None, repr=False)
    lost: np.ndarray | None = field(default=None, repr=False)
    frame_ms: list = field(default_factory=list, repr=False)

    @property
    def translation_rmse(self) -> tuple[float, float]:
        return (self.rmse["tx"], self.rmse["ty"])

    @property
    def rotation_rmse_deg(self) -> tuple[float, float, float]:
        return tuple(float(np.degrees(self.rmse[k])) for k in ("phix", "phiy", "phiz"))

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "n_frames": self.n_frames,
            "seed": self.seed,
            "switches": self.switches,
            "rmse": self.rmse,
            "rotation_rmse_deg": dict(zip(("phix", "phiy", "phiz"), self.rotation_rmse_deg)),
            "losses": self.losses,
            "mean_template_error": self.mean_template_error,
            "timing_ms": self.timing_ms,
            "occlusion": None if self.occlusion is None else self.occlusion.as_dict(),
        }


# --- sequences ----------------------------------------------------------------


def write_truth_csv(path, truth: Trajectory) -> None:
    n_au = truth.alphas.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", *parameter_names(n_au)])
        for k, row in enumerate(np.hstack([truth.poses, truth.alphas])):
            w.writerow([k, *(f"{v:.9g}" for v in row)])


def read_truth_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:7] != ["frame", *POSE_NAMES]:
        raise ValueError(f"{path}: not a truth CSV")
    data = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return Trajectory(data[:, :6], data[:, 6:])


def frame_paths(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"frame directory {d} does not exist")
    paths = sorted(p for p in d.iterdir() if p.suffix.lower() in (".png", ".pgm", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"))
    if not paths:
        raise FileNotFoundError(f"no image frames in {d}")
    return paths


@dataclass
class LoadedSequence:
    frames: list
    truth: Trajectory | None
    detections: dict  # frame -> controller.Detections
    occluder_rects: list
    seed: int | None = None


def load_sequence(spec: dict, model: FaceModel, base: Path | None = None) -> LoadedSequence:
    """Render a preset or read a frame directory, as named by a descriptor's ``sequence``."""
    base = base or Path.cwd()
    if "preset" in spec:
        size = tuple(spec.get("size", (320, 240)))
        seed = int(spec.get("seed", synth.PRESET_SEED))
        traj, opts = synth.preset_trajectory(model, spec["preset"], int(spec.get("frames", 100)), size, seed)
        seq = synth.render_sequence(model, traj, size, opts)
        dets = {d["frame"]: controller.Detections.from_dict(d) for d in seq.detections}
        return LoadedSequence(seq.frames, traj, dets, seq.occluder_rects, seed)
    if "frames_dir" in spec:
        frames = [read_frame(p) for p in frame_paths(base / spec["frames_dir"])]
        truth = read_truth_csv(base / spec["truth"]) if spec.get("truth") else None
        dets = controller.load_detections(base / spec["detections"])
        return LoadedSequence(frames, truth, dets, [], None)
    raise ValueError("sequence needs either 'preset' or 'frames_dir'")


# --- running ------------------------------------------------------------------


def _occluded(points: np.ndarray, rect) -> np.ndarray:
    x, y, w, h = rect
    return (points[:, 0] >= x) & (points[:, 0] < x + w) & (points[:, 1] >= y) & (points[:, 1] < y + h)


def run_sequence(
    model: FaceModel,
    seq: LoadedSequence,
    config: pipeline.PipelineConfig,
    redetect: bool = True,
):
    """Track every frame. Returns (results, occlusion stats, template errors)."""
    pipe = pipeline.Pipeline(model, config)
    results = []
    occ = OcclusionStats()
    errors = []
    for k, frame in enumerate(seq.frames):
        det = seq.detections.get(k)
        if k > 0 and not redetect:
            det = None
        res = pipe.process(frame, det)
        results.append(res)
        st = pipe.state
        if k == 0 or res.reinitialized or not st.log or st.log[-1].frame != k:
            continue
        entry = st.log[-1]
        errors.append(entry.template_error)
        rect = seq.occluder_rects[k] if k < len(seq.occluder_rects) else None
        if rect is not None and config.tracker.pixel_outliers and entry.acceptable and not entry.mask_degenerate:
            pos = anchor_positions(model, st.model_state, st.template.anchors)[:, :2]
            under = _occluded(pos, rect)
            flags = st.pixel_mask.flags
            occ.occluded_flagged += int(np.sum(flags & under))
            occ.occluded_total += int(np.sum(under))
            occ.clear_flagged += int(np.sum(flags & ~under))
            occ.clear_total += int(np.sum(~under))
    return results, occ, np.array(errors, dtype=float)


def config_with_switches(base: pipeline.PipelineConfig, switches: dict) -> pipeline.PipelineConfig:
    unknown = set(switches) - set(SWITCHES)
    if unknown:
        raise ValueError(f"unknown switches: {', '.join(sorted(unknown))}")
    tracker = replace(base.tracker, **{k: bool(v) for k, v in switches.items()})
    return replace(base, tracker=tracker)


def summarize(name, results, truth: Trajectory | None, model: FaceModel, switches, occ, errors, seed=None) -> ErrorReport:
    est = np.array([np.r_[r.pose, r.alpha] for r in results])
    lost = np.array([r.lost for r in results])
    names = parameter_names(model.n_au)
    if truth is not None:
        n = min(len(truth), len(est))
        e = rmse(est[:n], np.hstack([truth.poses, truth.alphas])[:n])
        table = {k: float(v) for k, v in zip(names, e)}
    else:
        table = {k: float("nan") for k in names}
    # frame 0 is initialisation, not tracking
    body = results[1:] if len(results) > 1 else results
    timing = {k: float(np.median([r.ms[k] for r in body])) for k in pipeline.TIMING_KEYS}
    finite = errors[np.isfinite(errors)]
    return ErrorReport(
        name=name,
        n_frames=len(results),
        rmse=table,
        losses=int(lost.sum()),
        timing_ms=timing,
        mean_template_error=float(finite.mean()) if finite.size else float("nan"),
        switches=dict(switches),
        occlusion=occ if occ.occluded_total or occ.clear_total else None,
        seed=seed,
        estimates=est,
        lost=lost,
        frame_ms=[r.ms for r in results],
    )


def run_experiment(descriptor, base_dir=None, model: FaceModel | None = None) -> ErrorReport:
    """Run one experiment descriptor (dict, or path to a JSON file).

    Keys: ``name``, ``sequence`` (``preset``/``frames``/``size``/``seed`` or
    ``frames_dir``/``truth``/``detections``), ``switches``, ``config``
    (pipeline overrides), ``model`` (path) and ``redetect`` (use the
    per-frame detections to restart after a loss, default true).
    """
    if not isinstance(descriptor, dict):
        path = Path(descriptor)
        descriptor = json.loads(path.read_text())
        base_dir = base_dir or path.parent
    base = Path(base_dir) if base_dir else Path.cwd()
    if model is None:
        model = load_model(base / descriptor["model"]) if descriptor.get("model") else load_model()
    switches = {k: True for k in SWITCHES}
    switches.update(descriptor.get("switches", {}))
    cfg = pipeline.config_from_dict(descriptor.get("config", {}))
    cfg = config_with_switches(cfg, switches)
    seq = load_sequence(descriptor.get("sequence", {"preset": "slow-translate"}), model, base)
    t0 = time.perf_counter()
    results, occ, errors = run_sequence(model, seq, cfg, bool(descriptor.get("redetect", True)))
    log.info("experiment %s: %d frames in %.1f s", descriptor.get("name", ""), len(results), time.perf_counter() - t0)
    return summarize(descriptor.get("name", "experiment"), results, seq.truth, model, switches, occ, errors, seq.seed)


def run_batch(spec, base_dir=None) -> list[ErrorReport]:
    """A descriptor with an ``experiments`` list, or a single experiment."""
    if not isinstance(spec, dict):
        path = Path(spec)
        spec = json.loads(path.read_text())
        base_dir = base_dir or path.parent
    exps = spec.get("experiments")
    if exps is None:
        return [run_experiment(spec, base_dir)]
    shared = {k: v for k, v in spec.items() if k != "experiments"}
    return [run_experiment({**shared, **e}, base_dir) for e in exps]


# --- output -------------------------------------------------------------------


def _num(v) -> str:
    return f"{float(v) + 0.0:.9g}"  # + 0.0 folds -0 into 0


def write_trajectory_csv(path, results, n_au: int, timing: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trajectory_header(n_au))
        for r in results:
            ms = [r.ms.get(k, 0.0) if timing else 0.0 for k in pipeline.TIMING_KEYS]
            w.writerow([r.frame, *map(_num, r.pose), *map(_num, r.alpha), int(r.lost), *(f"{v:.3f}" for v in ms)])


def write_reports(reports: list[ErrorReport], out_dir) -> dict:
    """JSON with everything plus two flat CSV tables (errors and timings)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"experiments": [r.as_dict() for r in reports]}
    if reports and all(r.rmse for r in reports):
        keys = list(reports[0].rmse)
        summary["mean_error"] = dict(zip(keys, mean_error([[r.rmse[k] for k in keys] for r in reports]).tolist()))
    (out / "report.json").write_text(json.dumps(summary, indent=2, allow_nan=True))
    with open(out / "errors.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        keys = list(reports[0].rmse) if reports else []
        w.writerow(["experiment", *keys, "losses", "mean_template_error"])
        for r in reports:
            w.writerow([r.name, *(f"{r.rmse[k]:.6g}" for k in keys), r.losses, f"{r.mean_template_error:.6g}"])
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment", *pipeline.TIMING_KEYS])
        for r in reports:
            w.writerow([r.name, *(f"{r.timing_ms[k]:.3f}" for k in pipeline.TIMING_KEYS)])
    for r in reports:
        if r.estimates is not None:
            n_au = r.estimates.shape[1] - 6
            res = [pipeline.FrameResult(k, e[:6], e[6:], bool(lo), ms=ms) for k, (e, lo, ms) in enumerate(zip(r.estimates, r.lost, r.frame_ms))]
            write_trajectory_csv(out / f"{_slug(r.name)}_trajectory.csv", res, n_au)
    return summary


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name) or "experiment"


def format_tables(reports: list[ErrorReport]) -> str:
    lines = ["timing (median ms/frame)", "experiment," + ",".join(pipeline.TIMING_KEYS)]
    for r in reports:
        lines.append(r.name + "," + ",".join(f"{r.timing_ms[k]:.2f}" for k in pipeline.TIMING_KEYS))
    lines += ["", "errors", "experiment,tx_px,ty_px,phix_deg,phiy_deg,phiz_deg,s,losses"]
    for r in reports:
        rx, ry, rz = r.rotation_rmse_deg
        lines.append(f"{r.name},{r.rmse['tx']:.4f},{r.rmse['ty']:.4f},{rx:.4f},{ry:.4f},{rz:.4f},{r.rmse['s']:.4f},{r.losses}")
    return "\n".join(lines)

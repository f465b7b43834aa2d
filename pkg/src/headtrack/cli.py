"""Command-line entry point: ``track``, ``synth`` and ``bench``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from . import controller, eval as ev, pipeline, synth
from .facemodel import FaceModel, load_model, posed_vertices
from .imgcore import read_frame, write_frame

log = logging.getLogger("headtrack")


@dataclass
class RunConfig:
    """Everything ``track`` needs; a ``--config`` JSON file mirrors these fields."""

    model: str | None = None
    frames: str | None = None
    detections: str | None = None
    out: str | None = None
    overlay: str | None = None
    timing: bool = True
    pipeline: pipeline.PipelineConfig = field(default_factory=pipeline.PipelineConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - {"model", "frames", "detections", "out", "overlay", "timing", "pipeline", "switches"}
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        cfg = pipeline.config_from_dict(d.pop("pipeline", {}))
        if "switches" in d:
            cfg = ev.config_with_switches(cfg, d.pop("switches"))
        return cls(pipeline=cfg, **d)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "frames": self.frames,
            "detections": self.detections,
            "out": self.out,
            "overlay": self.overlay,
            "timing": self.timing,
            "pipeline": pipeline.config_to_dict(self.pipeline),
        }


def _load_model(path: str | None) -> FaceModel:
    return load_model(None if path in (None, "", "default") else path)


def draw_overlay(frame: np.ndarray, model: FaceModel, state, lost: bool) -> Image.Image:
    """Projected mesh edges and landmark dots over the frame."""
    img = Image.fromarray(np.clip(np.rint(frame), 0, 255).astype(np.uint8)).convert("RGB")
    draw = ImageDraw.Draw(img)
    v = posed_vertices(model, state)[:, :2]
    colour = (255, 60, 60) if lost else (60, 220, 90)
    edges = set()
    for a, b, c in model.triangles:
        for e in ((a, b), (b, c), (c, a)):
            edges.add((min(e), max(e)))
    for a, b in sorted(edges):
        draw.line([tuple(v[a]), tuple(v[b])], fill=colour, width=1)
    for idx in model.landmarks.values():
        x, y = v[idx]
        draw.ellipse([x - 1.5, y - 1.5, x + 1.5, y + 1.5], fill=(255, 220, 0))
    return img


def cmd_track(args) -> int:
    cfg = RunConfig()
    if args.config:
        cfg = RunConfig.from_dict(json.loads(Path(args.config).read_text()))
    for key in ("model", "frames", "detections", "out", "overlay"):
        val = getattr(args, key)
        if val is not None:
            setattr(cfg, key, val)
    switches = {}
    if args.no_preest:
        switches["pre_estimation"] = False
    if args.no_preest_outliers:
        switches["preest_outliers"] = False
    if args.no_pixel_outliers:
        switches["pixel_outliers"] = False
    if switches:
        cfg.pipeline = ev.config_with_switches(cfg.pipeline, switches)
    if args.no_timing:
        cfg.timing = False
    for key in ("frames", "detections", "out"):
        if not getattr(cfg, key):
            raise UsageError(f"--{key} is required (on the command line or in --config)")

    model = _load_model(cfg.model)
    paths = ev.frame_paths(cfg.frames)
    dets = controller.load_detections(cfg.detections)
    overlay = Path(cfg.overlay) if cfg.overlay else None
    if overlay:
        overlay.mkdir(parents=True, exist_ok=True)
    pipe = pipeline.Pipeline(model, cfg.pipeline)
    results = []
    for k, p in enumerate(paths):
        frame = read_frame(p)
        res = pipe.process(frame, dets.get(k))
        results.append(res)
        if overlay:
            draw_overlay(frame, model, pipe.state.model_state, res.lost).save(overlay / f"overlay_{k:05d}.png")
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ev.write_trajectory_csv(out, results, model.n_au, timing=cfg.timing)
    n_lost = sum(r.lost for r in results)
    print(f"tracked {len(results)} frames, {n_lost} lost; trajectory written to {out}")
    return 0


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"size must look like 320x240, got {text!r}") from None
    if w < 32 or h < 32:
        raise UsageError("frame size must be at least 32x32")
    return w, h


def cmd_synth(args) -> int:
    if args.preset not in synth.PRESETS:
        raise UsageError(f"unknown preset {args.preset!r}; choose from {', '.join(synth.PRESETS)}")
    size = _parse_size(args.size)
    model = _load_model(args.model)
    traj, opts = synth.preset_trajectory(model, args.preset, args.frames, size, args.seed)
    seq = synth.render_sequence(model, traj, size, opts)
    out = Path(args.out)
    frames_dir = out / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    for k, f in enumerate(seq.frames):
        write_frame(frames_dir / f"frame_{k:05d}.png", f)
    ev.write_truth_csv(out / "truth.csv", traj)
    controller.save_detections(out / "detections.json", seq.detections)
    meta = {"preset": args.preset, "frames": args.frames, "size": list(size), "seed": args.seed}
    (out / "meta.json").write_text(json.dumps(meta, indent=2))
    print(f"wrote {len(seq.frames)} frames of {args.preset} (seed {args.seed}) to {out}")
    return 0


def cmd_bench(args) -> int:
    spec_path = Path(args.spec)
    if not spec_path.is_file():
        raise UsageError(f"experiment spec {spec_path} not found")
    reports = ev.run_batch(spec_path)
    ev.write_reports(reports, args.out)
    print(ev.format_tables(reports))
    return 0


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="headtrack", description="Head pose and facial feature tracker.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("track", help="track a directory of frames")
    t.add_argument("--model", help="model file (default: bundled model)")
    t.add_argument("--frames", help="directory of frames, read in lexicographic order")
    t.add_argument("--detections", help="detections JSON (frame 0 entry required)")
    t.add_argument("--out", help="trajectory CSV to write")
    t.add_argument("--overlay", help="directory for wireframe overlay PNGs")
    t.add_argument("--no-preest", action="store_true", help="skip optical-flow pre-estimation (NOF)")
    t.add_argument("--no-preest-outliers", action="store_true", help="keep flow outliers")
    t.add_argument("--no-pixel-outliers", action="store_true", help="keep template pixel outliers")
    t.add_argument("--no-timing", action="store_true", help="write zero timings (byte-stable output)")
    t.add_argument("--config", help="JSON run configuration")
    t.set_defaults(func=cmd_track)

    s = sub.add_parser("synth", help="render a synthetic benchmark sequence")
    s.add_argument("--preset", required=True, help=f"one of {', '.join(synth.PRESETS)}")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--frames", type=int, default=100)
    s.add_argument("--size", default="320x240", help="WxH")
    s.add_argument("--seed", type=int, default=synth.PRESET_SEED)
    s.add_argument("--model", help="model file (default: bundled model)")
    s.set_defaults(func=cmd_synth)

    b = sub.add_parser("bench", help="run experiments and report errors and timings")
    b.add_argument("--spec", required=True, help="experiment descriptor JSON")
    b.add_argument("--out", required=True, help="report directory")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"headtrack {args.command}: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, controller.InitError) as exc:
        print(f"headtrack {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Synthetic ground truth: procedural face texture, mesh rasteriser and trajectory presets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.ndimage import gaussian_filter

from .facemodel import FaceModel, ModelState, PoseParams, deform, warp
from .imgcore import sample_many

TEXTURE_PIXEL = 0.008  # model units per texture pixel


@dataclass
class Texture:
    image: np.ndarray
    origin: tuple[float, float]  # model (x, y) of texture pixel (0, 0)
    pixel: float = TEXTURE_PIXEL

    def lookup(self, model_xy: np.ndarray) -> np.ndarray:
        uv = (np.asarray(model_xy) - np.asarray(self.origin)) / self.pixel
        h, w = self.image.shape
        uv[..., 0] = np.clip(uv[..., 0], 0, w - 1)
        uv[..., 1] = np.clip(uv[..., 1], 0, h - 1)
        vals, _ = sample_many(self.image, uv)
        return vals


def make_texture(model: FaceModel, seed: int = 0, noise_std: float = 22.0) -> Texture:
    """Band-limited noise plus painted eyes, brows, lips and nostrils."""
    lo = model.base_shape[:, :2].min(axis=0) - 0.05
    hi = model.base_shape[:, :2].max(axis=0) + 0.05
    w = int(np.ceil((hi[0] - lo[0]) / TEXTURE_PIXEL)) + 1
    h = int(np.ceil((hi[1] - lo[1]) / TEXTURE_PIXEL)) + 1
    rng = np.random.default_rng(seed)
    noise = gaussian_filter(rng.normal(size=(h, w)), 4.5)
    noise *= noise_std / noise.std()
    coarse = gaussian_filter(rng.normal(size=(h, w)), 14.0)
    coarse *= 10.0 / coarse.std()
    img = 150.0 + noise + coarse

    xs = lo[0] + TEXTURE_PIXEL * np.arange(w)
    ys = lo[1] + TEXTURE_PIXEL * np.arange(h)
    x, y = np.meshgrid(xs, ys)
    lm = model.landmarks
    base = model.base_shape

    def paint(mask_soft, value):
        nonlocal img
        img = img * (1.0 - mask_soft) + value * mask_soft

    def soft(d, edge=0.012):
        return np.clip(0.5 - d / edge, 0.0, 1.0)

    for side in ("left_eye", "right_eye"):
        ex, ey = base[lm[side], :2]
        d = np.sqrt(((x - ex) / 0.14) ** 2 + ((y - ey) / 0.06) ** 2) - 1.0
        paint(soft(d * 0.06), 215.0)
        d = np.hypot(x - ex, y - ey) - 0.045
        paint(soft(d), 35.0)
    for side in ("left", "right"):
        pts = np.array([base[lm[f"{side}_brow_{j}"], :2] for j in range(3)])
        x0, x1 = pts[:, 0].min() - 0.06, pts[:, 0].max() + 0.06
        yc = pts[:, 1].mean()
        dy = np.abs(y - yc) - 0.055
        dx = np.maximum(x0 - x, x - x1)
        paint(soft(np.maximum(dx, dy), 0.03), 55.0)
    ml, mr = base[lm["mouth_left"], :2], base[lm["mouth_right"], :2]
    up, lo_lip = base[lm["upper_lip"], :2], base[lm["lower_lip"], :2]
    mc = base[lm["mouth_center"], :2]
    half = (mr[0] - ml[0]) / 2.0
    cx = (mr[0] + ml[0]) / 2.0
    u = np.clip(1.0 - ((x - cx) / half) ** 2, 0.0, None)
    slit_top = mc[1]
    slit_bot = mc[1] + 0.03
    upper_edge = slit_top - (slit_top - up[1]) * np.sqrt(u)
    lower_edge = slit_bot + (lo_lip[1] - slit_bot) * np.sqrt(u)
    inside_x = np.abs(x - cx) - half
    lips = np.maximum(np.maximum(upper_edge - y, y - lower_edge), inside_x)
    paint(soft(lips, 0.015), 85.0)
    slit = np.maximum(np.maximum(slit_top - 0.005 - y, y - slit_bot - 0.005), inside_x)
    paint(soft(slit, 0.012), 25.0)
    nose = base[lm["nose_tip"], :2]
    for sx in (-0.09, 0.09):
        d = np.hypot((x - nose[0] - sx) / 1.4, y - nose[1] - 0.09) - 0.025
        paint(soft(d), 60.0)
    img = gaussian_filter(img, 0.8)
    return Texture(np.clip(img, 0.0, 255.0), (float(lo[0]), float(lo[1])))


def background(size: tuple[int, int], seed: int = 1) -> np.ndarray:
    w, h = size
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    bg = 70.0 + 40.0 * yy / max(h - 1, 1) + 10.0 * np.sin(xx / max(w, 1) * 3.0)
    blobs = gaussian_filter(rng.normal(size=(h, w)), max(w, h) / 25.0)
    bg += 12.0 * blobs / (blobs.std() + 1e-12)
    return bg


class Renderer:
    """Rasterises the textured mesh with a z-buffer and bilinear texture lookup."""

    def __init__(self, model: FaceModel, texture: Texture, size: tuple[int, int], bg: np.ndarray | None = None):
        self.model = model
        self.texture = texture
        self.size = size
        self.bg = background(size) if bg is None else bg
        self.tex_xy = model.base_shape[:, :2]

    def coverage(self, state: ModelState):
        """Per-pixel (triangle, barycentric) of the visible surface; -1 = background."""
        w, h = self.size
        verts = warp(deform(self.model, state.sigma, state.alpha), state.pose)
        tris = self.model.triangles
        tri_v = verts[tris]
        zbuf = np.full(h * w, -np.inf)
        tri_id = np.full(h * w, -1, dtype=np.intp)
        bary = np.zeros((h * w, 3))
        for t in range(tris.shape[0]):
            p = tri_v[t]
            x0 = max(int(np.ceil(p[:, 0].min())), 0)
            x1 = min(int(np.floor(p[:, 0].max())), w - 1)
            y0 = max(int(np.ceil(p[:, 1].min())), 0)
            y1 = min(int(np.floor(p[:, 1].max())), h - 1)
            if x0 > x1 or y0 > y1:
                continue
            a, b, c = p[0, :2], p[1, :2], p[2, :2]
            den = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
            if abs(den) < 1e-12:
                continue
            yy, xx = np.mgrid[y0: y1 + 1, x0: x1 + 1]
            xx = xx.ravel().astype(float)
            yy = yy.ravel().astype(float)
            w1 = ((xx - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (yy - a[1])) / den
            w2 = ((b[0] - a[0]) * (yy - a[1]) - (xx - a[0]) * (b[1] - a[1])) / den
            w0 = 1.0 - w1 - w2
            ok = (w0 >= -1e-9) & (w1 >= -1e-9) & (w2 >= -1e-9)
            if not ok.any():
                continue
            idx = (yy[ok] * w + xx[ok]).astype(np.intp)
            wts = np.stack([w0[ok], w1[ok], w2[ok]], axis=1)
            z = wts @ p[:, 2]
            closer = z > zbuf[idx]
            idx = idx[closer]
            zbuf[idx] = z[closer]
            tri_id[idx] = t
            bary[idx] = wts[closer]
        return tri_id, bary

    def render(self, state: ModelState) -> np.ndarray:
        w, h = self.size
        tri_id, bary = self.coverage(state)
        out = self.bg.ravel().copy()
        hit = tri_id >= 0
        tex_pts = np.einsum("kj,kjd->kd", bary[hit], self.tex_xy[self.model.triangles[tri_id[hit]]])
        out[hit] = self.texture.lookup(tex_pts)
        return out.reshape(h, w)


# --- trajectories --------------------------------------------------------------


@dataclass
class Trajectory:
    poses: np.ndarray  # (N, 6)
    alphas: np.ndarray  # (N, n_au)

    def __post_init__(self):
        self.poses = np.asarray(self.poses, dtype=float)
        self.alphas = np.asarray(self.alphas, dtype=float)
        if self.poses.ndim != 2 or self.poses.shape[1] != 6 or len(self.poses) < 1:
            raise ValueError("poses must be N x 6 with N >= 1")
        if len(self.alphas) != len(self.poses):
            raise ValueError("alphas and poses differ in length")
        if not (np.all(np.isfinite(self.poses)) and np.all(np.isfinite(self.alphas))):
            raise ValueError("trajectory contains non-finite values")

    def __len__(self) -> int:
        return len(self.poses)

    def state(self, model: FaceModel, k: float) -> ModelState:
        """State at (possibly fractional) frame ``k``, linearly interpolated."""
        k = float(np.clip(k, 0, len(self) - 1))
        i = int(np.floor(k))
        j = min(i + 1, len(self) - 1)
        f = k - i
        pose = (1 - f) * self.poses[i] + f * self.poses[j]
        alpha = (1 - f) * self.alphas[i] + f * self.alphas[j]
        return ModelState(np.zeros(model.n_su), alpha, PoseParams.from_array(pose))


@dataclass
class Occluder:
    """Opaque rectangle ``(x, y, w, h)`` per frame, active for frames in ``[start, stop)``."""

    rects: np.ndarray  # (N, 4)
    value: float = 235.0
    start: int = 0
    stop: int = 10**9

    def rect(self, k: int):
        if not self.start <= k < self.stop:
            return None
        return self.rects[min(k, len(self.rects) - 1)]


@dataclass
class RenderOptions:
    blur_substeps: int = 1
    brightness_bias: float = 0.0
    occluder: Occluder | None = None
    texture_seed: int = 0
    background_seed: int = 1


@dataclass
class Sequence:
    frames: list[np.ndarray]
    truth: Trajectory
    detections: list[dict]
    occluder_rects: list = field(default_factory=list)


def truth_detections(model: FaceModel, state: ModelState, frame_index: int = 0) -> dict:
    verts = warp(deform(model, state.sigma, state.alpha), state.pose)
    lm = model.landmarks
    lo = verts[:, :2].min(axis=0)
    hi = verts[:, :2].max(axis=0)
    return {
        "frame": frame_index,
        "face": [float(lo[0]), float(lo[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1])],
        "left_eye": [float(v) for v in verts[lm["left_eye"], :2]],
        "right_eye": [float(v) for v in verts[lm["right_eye"], :2]],
        "mouth": [float(v) for v in verts[lm["mouth_center"], :2]],
    }


def _smooth_state(model: FaceModel, spline, trajectory: Trajectory, t: float) -> ModelState:
    t = float(np.clip(t, 0, len(trajectory) - 1))
    if spline is None:
        return trajectory.state(model, t)
    v = spline(t)
    alpha = model.clamp_alpha(v[6:])
    return ModelState(np.zeros(model.n_su), alpha, PoseParams.from_array(v[:6]))


def render_sequence(
    model: FaceModel,
    trajectory: Trajectory,
    size: tuple[int, int],
    options: RenderOptions | None = None,
    texture: Texture | None = None,
) -> Sequence:
    opts = options or RenderOptions()
    tex = texture or make_texture(model, opts.texture_seed)
    renderer = Renderer(model, tex, size, background(size, opts.background_seed))
    w, h = size
    frames = []
    dets = []
    rects = []
    n_sub = max(1, int(opts.blur_substeps))
    # sub-steps centred on the frame time so the blurred image is unbiased
    offsets = (np.arange(n_sub) + 0.5) / n_sub - 0.5
    spline = None
    if n_sub > 1 and len(trajectory) >= 3:
        both = np.hstack([trajectory.poses, trajectory.alphas])
        spline = CubicSpline(np.arange(len(trajectory)), both, axis=0)
    for k in range(len(trajectory)):
        st = trajectory.state(model, k)
        verts = warp(deform(model, st.sigma, st.alpha), st.pose)
        if verts[:, 0].max() < 0 or verts[:, 0].min() > w - 1 or verts[:, 1].max() < 0 or verts[:, 1].min() > h - 1:
            raise ValueError(f"frame {k}: face silhouette entirely off-frame")
        if n_sub == 1:
            img = renderer.render(st)
        else:
            img = np.mean([renderer.render(_smooth_state(model, spline, trajectory, k + o)) for o in offsets], axis=0)
        img = img + opts.brightness_bias
        rect = opts.occluder.rect(k) if opts.occluder is not None else None
        if rect is not None:
            x0, y0, rw, rh = (int(round(v)) for v in rect)
            img[max(y0, 0): max(y0 + rh, 0), max(x0, 0): max(x0 + rw, 0)] = opts.occluder.value
        rects.append(None if rect is None else tuple(float(v) for v in rect))
        frames.append(np.clip(img, 0.0, 255.0))
        dets.append(truth_detections(model, st, k))
    return Sequence(frames, trajectory, dets, rects)


# --- presets ------------------------------------------------------------------

PRESETS = ("slow-translate", "slow-rotate", "fast-translate", "fast-rotate", "occluded", "expressions", "static", "loop")
PRESET_SEED = 7


def default_scale(size: tuple[int, int]) -> float:
    """Model scale giving a face about half the frame height."""
    return 0.19 * size[1]


def preset_trajectory(model: FaceModel, name: str, n_frames: int, size: tuple[int, int], seed: int = PRESET_SEED):
    """Returns (Trajectory, RenderOptions) for a named preset."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    w, h = size
    s = default_scale(size)
    k = np.arange(n_frames, dtype=float)
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0, 2 * np.pi, size=4)
    poses = np.zeros((n_frames, 6))
    poses[:, 3] = s
    poses[:, 4] = w / 2.0
    poses[:, 5] = h / 2.0
    alphas = np.zeros((n_frames, model.n_au))
    opts = RenderOptions(texture_seed=seed, background_seed=seed + 1)
    ramp = np.clip(k / 10.0, 0.0, 1.0)  # every preset starts from rest
    u = np.clip(k / 6.0, 0.0, 1.0)
    ease = u * u * (3.0 - 2.0 * u)  # zero speed at frame 0, full motion from frame 6

    if name == "slow-translate":
        amp = 0.08 * h
        poses[:, 4] += amp * ramp * np.sin(2 * np.pi * k / 60.0)
        poses[:, 5] += 0.6 * amp * ramp * np.sin(2 * np.pi * k / 45.0)
    elif name == "slow-rotate":
        deg = np.pi / 180.0
        poses[:, 0] = 8 * deg * ramp * np.sin(2 * np.pi * k / 70.0)
        poses[:, 1] = 12 * deg * ramp * np.sin(2 * np.pi * k / 55.0)
        poses[:, 2] = 8 * deg * ramp * np.sin(2 * np.pi * k / 80.0)
    elif name == "fast-translate":
        period = 16.0 + 4.0 * rng.uniform()
        amp = 0.2 * h * (1.0 + 0.1 * rng.uniform())
        # peak speed = amp * 2 pi / period >= 15 px/frame at 240 rows
        poses[:, 4] += ease * amp * np.sin(2 * np.pi * k / period + phase[0])
        poses[:, 5] += ease * 0.3 * amp * np.sin(2 * np.pi * k / (1.7 * period) + phase[1])
        opts.blur_substeps = 4
    elif name == "fast-rotate":
        deg = np.pi / 180.0
        poses[:, 1] = ease * 15 * deg * np.sin(2 * np.pi * k / 20.0 + phase[0])
        poses[:, 2] = ease * 10 * deg * np.sin(2 * np.pi * k / 26.0 + phase[1])
        opts.blur_substeps = 4
    elif name == "occluded":
        amp = 0.04 * h
        poses[:, 4] += amp * ramp * np.sin(2 * np.pi * k / 50.0)
        face_w = 2.0 * s
        face_h = 2.6 * s
        area = 0.2 * np.pi * (face_w / 2.0) * (face_h / 2.0)  # 20% of the face ellipse
        oh = 0.45 * face_h
        ow = area / oh
        # slides in from beside the face, across it and out of the other side
        travel = face_w + ow + 10.0
        frac = k / max(n_frames - 1, 1)
        cx = poses[0, 4] - travel / 2.0 + travel * frac
        cy = poses[0, 5] - 0.15 * face_h
        rects = np.stack([cx - ow / 2, np.full(n_frames, cy - oh / 2), np.full(n_frames, ow), np.full(n_frames, oh)], axis=1)
        opts.occluder = Occluder(rects)
    elif name == "expressions":
        jaw = model.au_index("jaw_drop")
        alphas[:, jaw] = 0.5 * np.clip(np.sin(2 * np.pi * k / 40.0), 0, None)
        up = model.au_index("upper_lip_raiser")
        # phases keep every AU at rest on the capture frame
        alphas[:, up] = 0.4 * np.clip(np.sin(2 * np.pi * k / 40.0 - 2.0), 0, None)
        for j in range(4, min(10, model.n_au)):
            alphas[:, j] = 0.6 * np.clip(np.sin(2 * np.pi * k / 50.0 - 1.0), 0, None)
        poses[:, 4] += 1.0 * np.sin(2 * np.pi * k / 90.0)
    elif name == "loop":
        u = 2 * np.pi * k / max(n_frames - 1, 1)
        deg = np.pi / 180.0
        poses[:, 4] += 0.1 * h * np.sin(u)
        poses[:, 5] += 0.06 * h * (1 - np.cos(u))
        poses[:, 1] = 10 * deg * np.sin(u)
        poses[:, 2] = 6 * deg * np.sin(2 * u)
    return Trajectory(poses, alphas), opts

"""Deformable wireframe head model: deformation, rigid warp, projection and surface anchors.

Coordinate frame: x to the right and y downwards (image convention), z towards
the camera, so the camera-nearest surface is the one with the largest z.
Rotations are counter-clockwise about each axis when viewed from that axis'
positive side; in this left-handed frame that is the transpose of the
textbook right-handed matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

REQUIRED_LANDMARKS = (
    "left_eye",
    "right_eye",
    "nose_tip",
    "mouth_center",
    "mouth_left",
    "mouth_right",
    "upper_lip",
    "lower_lip",
    "left_brow_0",
    "left_brow_1",
    "left_brow_2",
    "right_brow_0",
    "right_brow_1",
    "right_brow_2",
)


class ModelFormatError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


@dataclass(frozen=True)
class PoseParams:
    phi_x: float = 0.0
    phi_y: float = 0.0
    phi_z: float = 0.0
    s: float = 1.0
    t_x: float = 0.0
    t_y: float = 0.0

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite pose {vals}")
        if self.s <= 0:
            raise ValueError(f"scale must be positive, got {self.s}")

    def as_array(self) -> np.ndarray:
        return np.array([self.phi_x, self.phi_y, self.phi_z, self.s, self.t_x, self.t_y])

    @classmethod
    def from_array(cls, a) -> "PoseParams":
        a = np.asarray(a, dtype=float)
        return cls(*(float(v) for v in a[:6]))


@dataclass(frozen=True)
class FaceModel:
    base_shape: np.ndarray  # (N, 3)
    triangles: np.ndarray  # (T, 3) int
    su: np.ndarray  # (n_su, N, 3)
    au: np.ndarray  # (n_au, N, 3)
    su_names: tuple[str, ...]
    au_names: tuple[str, ...]
    su_limits: np.ndarray  # (n_su, 2)
    au_limits: np.ndarray  # (n_au, 2)
    landmarks: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        n = self.n_vertices
        if self.base_shape.shape != (n, 3):
            raise ModelFormatError("base shape must be N x 3")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= n):
            raise ModelFormatError("triangle index out of range")
        for arr, lim, kind in ((self.su, self.su_limits, "SU"), (self.au, self.au_limits, "AU")):
            if arr.shape[1:] != (n, 3) or lim.shape != (arr.shape[0], 2):
                raise ModelFormatError(f"{kind} block shapes inconsistent")
            if np.any(lim[:, 0] > 0) or np.any(lim[:, 1] < 0):
                raise ModelFormatError(f"{kind} limits must satisfy min <= 0 <= max")
        missing = [k for k in REQUIRED_LANDMARKS if k not in self.landmarks]
        if missing:
            raise ModelFormatError(f"missing landmarks: {', '.join(missing)}")
        for name, idx in self.landmarks.items():
            if not 0 <= idx < n:
                raise ModelFormatError(f"landmark {name} index {idx} out of range")

    @property
    def n_vertices(self) -> int:
        return int(self.base_shape.shape[0])

    @property
    def n_su(self) -> int:
        return int(self.su.shape[0])

    @property
    def n_au(self) -> int:
        return int(self.au.shape[0])

    def au_index(self, name: str) -> int:
        return self.au_names.index(name)

    def neutral_state(self, pose: PoseParams | None = None) -> "ModelState":
        return ModelState(np.zeros(self.n_su), np.zeros(self.n_au), pose or PoseParams())

    def au_rate(self, au: int, landmark: str, axis: int) -> float:
        """AU units per model unit of motion of ``landmark`` along ``axis``."""
        d = self.au[au, self.landmarks[landmark], axis]
        if abs(d) < 1e-12:
            raise ValueError(f"AU {self.au_names[au]} does not move {landmark} along axis {axis}")
        return 1.0 / d

    def clamp_alpha(self, alpha: np.ndarray) -> np.ndarray:
        return np.clip(alpha, self.au_limits[:, 0], self.au_limits[:, 1])


@dataclass(frozen=True)
class ModelState:
    sigma: np.ndarray
    alpha: np.ndarray
    pose: PoseParams

    def with_pose(self, pose: PoseParams) -> "ModelState":
        return replace(self, pose=pose)

    def with_alpha(self, alpha) -> "ModelState":
        return replace(self, alpha=np.asarray(alpha, dtype=float))


@dataclass(frozen=True)
class SurfaceAnchor:
    triangle: int
    bary: tuple[float, float, float]


class Anchors:
    """A batch of surface anchors; ``triangle == -1`` marks a miss."""

    def __init__(self, triangles, bary):
        self.triangles = np.asarray(triangles, dtype=np.intp)
        self.bary = np.asarray(bary, dtype=np.float64).reshape(-1, 3)

    def __len__(self) -> int:
        return self.triangles.size

    def __getitem__(self, i: int) -> SurfaceAnchor | None:
        if self.triangles[i] < 0:
            return None
        return SurfaceAnchor(int(self.triangles[i]), tuple(float(b) for b in self.bary[i]))

    @property
    def hit(self) -> np.ndarray:
        return self.triangles >= 0

    def subset(self, keep) -> "Anchors":
        return Anchors(self.triangles[keep], self.bary[keep])


# --- geometry -----------------------------------------------------------------


def deform(model: FaceModel, sigma, alpha) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if sigma.shape != (model.n_su,) or alpha.shape != (model.n_au,):
        raise ValueError(
            f"expected {model.n_su} SU and {model.n_au} AU parameters, "
            f"got {sigma.shape} and {alpha.shape}"
        )
    g = model.base_shape.copy()
    if model.n_su:
        g += np.tensordot(sigma, model.su, axes=1)
    if model.n_au:
        g += np.tensordot(alpha, model.au, axes=1)
    return g


def rotation_matrix(phi_x: float, phi_y: float, phi_z: float) -> np.ndarray:
    cx, sx = np.cos(phi_x), np.sin(phi_x)
    cy, sy = np.cos(phi_y), np.sin(phi_y)
    cz, sz = np.cos(phi_z), np.sin(phi_z)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, sx], [0.0, -sx, cx]])
    ry = np.array([[cy, 0.0, -sy], [0.0, 1.0, 0.0], [sy, 0.0, cy]])
    rz = np.array([[cz, sz, 0.0], [-sz, cz, 0.0], [0.0, 0.0, 1.0]])
    return rx @ ry @ rz


def warp(points, pose: PoseParams) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    r = rotation_matrix(pose.phi_x, pose.phi_y, pose.phi_z) * pose.s
    out = p @ r.T
    out[..., 0] += pose.t_x
    out[..., 1] += pose.t_y
    return out


def project(points) -> np.ndarray:
    return np.asarray(points, dtype=float)[..., :2].copy()


def posed_vertices(model: FaceModel, state: ModelState) -> np.ndarray:
    return warp(deform(model, state.sigma, state.alpha), state.pose)


def landmark_position(model: FaceModel, state: ModelState, name: str) -> np.ndarray:
    return posed_vertices(model, state)[model.landmarks[name]]


def _barycentric_2d(tri2d: np.ndarray, pts: np.ndarray):
    """Barycentric weights of ``pts`` (K, 2) w.r.t. one 2D triangle (3, 2)."""
    a, b, c = tri2d
    v0 = b - a
    v1 = c - a
    den = v0[0] * v1[1] - v1[0] * v0[1]
    if abs(den) < 1e-14:
        return None
    d = pts - a
    w1 = (d[:, 0] * v1[1] - v1[0] * d[:, 1]) / den
    w2 = (v0[0] * d[:, 1] - d[:, 0] * v0[1]) / den
    return np.stack([1.0 - w1 - w2, w1, w2], axis=1)


def intersect_vertices(verts: np.ndarray, triangles: np.ndarray, screen_pts) -> Anchors:
    """Cast orthographic rays along z through ``screen_pts`` onto a posed mesh."""
    pts = np.atleast_2d(np.asarray(screen_pts, dtype=float))
    k = pts.shape[0]
    best_tri = np.full(k, -1, dtype=np.intp)
    best_z = np.full(k, -np.inf)
    best_bary = np.zeros((k, 3))
    tri_xy = verts[triangles][:, :, :2]
    lo = tri_xy.min(axis=1)
    hi = tri_xy.max(axis=1)
    tol = 1e-9
    for t in range(triangles.shape[0]):
        inside = np.nonzero(
            (pts[:, 0] >= lo[t, 0] - tol)
            & (pts[:, 0] <= hi[t, 0] + tol)
            & (pts[:, 1] >= lo[t, 1] - tol)
            & (pts[:, 1] <= hi[t, 1] + tol)
        )[0]
        if inside.size == 0:
            continue
        w = _barycentric_2d(tri_xy[t], pts[inside])
        if w is None:
            continue
        ok = np.all(w >= -tol, axis=1)
        if not ok.any():
            continue
        idx = inside[ok]
        w = w[ok]
        z = w @ verts[triangles[t], 2]
        better = z > best_z[idx]
        idx = idx[better]
        best_z[idx] = z[better]
        best_tri[idx] = t
        best_bary[idx] = w[better]
    hit = best_tri >= 0
    b = np.clip(best_bary[hit], 0.0, None)
    best_bary[hit] = b / b.sum(axis=1, keepdims=True)
    return Anchors(best_tri, best_bary)


def intersect(model: FaceModel, state: ModelState, screen_pts) -> Anchors:
    return intersect_vertices(posed_vertices(model, state), model.triangles, screen_pts)


def anchor_positions(model: FaceModel, state: ModelState, anchors: Anchors, verts=None) -> np.ndarray:
    """3D positions of anchors on the deformed, posed mesh. Misses give NaN."""
    if verts is None:
        verts = posed_vertices(model, state)
    tri = np.where(anchors.hit, anchors.triangles, 0)
    corners = verts[model.triangles[tri]]  # (K, 3, 3)
    pos = np.einsum("kj,kjd->kd", anchors.bary, corners)
    pos[~anchors.hit] = np.nan
    return pos


def anchor_position(model: FaceModel, state: ModelState, anchor: SurfaceAnchor) -> np.ndarray:
    verts = posed_vertices(model, state)[model.triangles[anchor.triangle]]
    return np.asarray(anchor.bary) @ verts


# --- model file I/O -------------------------------------------------------------


def _parse_floats(parts, n, lineno):
    if len(parts) != n:
        raise ModelFormatError(f"expected {n} values, got {len(parts)}", lineno)
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise ModelFormatError(str(exc), lineno) from None


def parse_model(text: str) -> FaceModel:
    lines = [(i + 1, ln.split("#", 1)[0].strip()) for i, ln in enumerate(text.splitlines())]
    lines = [(i, ln) for i, ln in lines if ln]
    pos = 0
    verts: list[list[float]] = []
    tris: list[list[int]] = []
    blocks = {"SU": [], "AU": []}
    landmarks: dict[str, int] = {}

    def take():
        nonlocal pos
        item = lines[pos]
        pos += 1
        return item

    while pos < len(lines):
        lineno, ln = take()
        head = ln.split()
        key = head[0].upper()
        if key == "VERTICES":
            count = int(_parse_floats(head[1:], 1, lineno)[0])
            for _ in range(count):
                if pos >= len(lines):
                    raise ModelFormatError("truncated VERTICES section", lineno)
                ln_no, row = take()
                verts.append(_parse_floats(row.split(), 3, ln_no))
        elif key == "TRIANGLES":
            count = int(_parse_floats(head[1:], 1, lineno)[0])
            for _ in range(count):
                if pos >= len(lines):
                    raise ModelFormatError("truncated TRIANGLES section", lineno)
                ln_no, row = take()
                vals = _parse_floats(row.split(), 3, ln_no)
                if any(v != int(v) for v in vals):
                    raise ModelFormatError("triangle indices must be integers", ln_no)
                idx = [int(v) for v in vals]
                if verts and max(idx) >= len(verts):
                    raise ModelFormatError(f"triangle index {max(idx)} >= N={len(verts)}", ln_no)
                tris.append(idx)
        elif key in ("SU", "AU"):
            if len(head) != 2:
                raise ModelFormatError(f"{key} block needs a name", lineno)
            name = head[1]
            limits = (-1.0, 1.0)
            disp: dict[int, list[float]] = {}
            while True:
                if pos >= len(lines):
                    raise ModelFormatError(f"{key} {name} not terminated by END", lineno)
                ln_no, row = take()
                parts = row.split()
                if parts[0].upper() == "END":
                    break
                if parts[0].lower() == "limits":
                    lo, hi = _parse_floats(parts[1:], 2, ln_no)
                    limits = (lo, hi)
                    continue
                vals = _parse_floats(parts, 4, ln_no)
                v = int(vals[0])
                if verts and not 0 <= v < len(verts):
                    raise ModelFormatError(f"vertex {v} out of range", ln_no)
                disp[v] = vals[1:]
            blocks[key].append((name, limits, disp, lineno))
        elif key == "LANDMARKS":
            while pos < len(lines) and lines[pos][1].split()[0].upper() not in (
                "VERTICES", "TRIANGLES", "SU", "AU", "LANDMARKS"
            ):
                ln_no, row = take()
                parts = row.split()
                if len(parts) != 2:
                    raise ModelFormatError("landmark lines are 'name index'", ln_no)
                try:
                    landmarks[parts[0]] = int(parts[1])
                except ValueError:
                    raise ModelFormatError(f"bad landmark index {parts[1]!r}", ln_no) from None
        else:
            raise ModelFormatError(f"unknown section {head[0]!r}", lineno)

    if not verts:
        raise ModelFormatError("no VERTICES section")
    n = len(verts)

    def stack(kind):
        arr = np.zeros((len(blocks[kind]), n, 3))
        lim = np.zeros((len(blocks[kind]), 2))
        names = []
        for j, (name, limits, disp, _) in enumerate(blocks[kind]):
            names.append(name)
            lim[j] = limits
            for v, d in disp.items():
                arr[j, v] = d
        return arr, lim, tuple(names)

    su, su_lim, su_names = stack("SU")
    au, au_lim, au_names = stack("AU")
    return FaceModel(
        base_shape=np.array(verts, dtype=float),
        triangles=np.array(tris, dtype=np.intp).reshape(-1, 3),
        su=su,
        au=au,
        su_names=su_names,
        au_names=au_names,
        su_limits=su_lim,
        au_limits=au_lim,
        landmarks=landmarks,
    )


def format_model(model: FaceModel) -> str:
    out = [f"VERTICES {model.n_vertices}"]
    out += [" ".join(repr(float(c)) for c in v) for v in model.base_shape]
    out.append(f"TRIANGLES {model.triangles.shape[0]}")
    out += [" ".join(str(int(i)) for i in t) for t in model.triangles]
    for kind, arr, lim, names in (
        ("SU", model.su, model.su_limits, model.su_names),
        ("AU", model.au, model.au_limits, model.au_names),
    ):
        for j, name in enumerate(names):
            out.append(f"{kind} {name}")
            out.append(f"limits {float(lim[j, 0])!r} {float(lim[j, 1])!r}")
            for v in np.nonzero(np.any(arr[j] != 0.0, axis=1))[0]:
                out.append(f"{v} " + " ".join(repr(float(c)) for c in arr[j, v]))
            out.append("END")
    out.append("LANDMARKS")
    out += [f"{k} {v}" for k, v in model.landmarks.items()]
    return "\n".join(out) + "\n"


def load_model(path: str | Path | None = None) -> FaceModel:
    """Load a model file; ``None`` loads the bundled default model."""
    if path is None:
        text = resources.files("headtrack.data").joinpath("default_model.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_model(text)


def save_model(model: FaceModel, path: str | Path) -> None:
    Path(path).write_text(format_model(model), encoding="utf-8")

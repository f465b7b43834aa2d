"""Regenerate src/headtrack/data/default_model.txt.

The bundled model is a 113-vertex face height-field laid out like the
CANDIDE-3 wireframe: an oval contour, eyes, three-part eyebrows, a nose, and
a mouth with a thin slit between inner lips. Run from the repo root:

    python tools/make_default_model.py
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

from headtrack.facemodel import FaceModel, format_model, parse_model

N_VERTICES = 113
OVAL_CENTER_Y = 0.05
OVAL_RX, OVAL_RY = 1.0, 1.3


def depth(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u = 1.0 - (x / (OVAL_RX * 1.02)) ** 2 - ((y - OVAL_CENTER_Y) / (OVAL_RY * 1.02)) ** 2
    z = 0.6 * np.sqrt(np.clip(u, 0.0, None))
    z += 0.32 * np.exp(-((x / 0.13) ** 2) - ((y - 0.08) / 0.26) ** 2)
    for ex in (-0.38, 0.38):
        z -= 0.06 * np.exp(-(((x - ex) / 0.14) ** 2) - ((y + 0.25) / 0.09) ** 2)
    return z


def feature_points():
    pts: list[tuple[float, float]] = []
    names: dict[str, int] = {}

    def add(name, x, y):
        if name:
            names[name] = len(pts)
        pts.append((x, y))

    for k in range(24):
        a = 2 * np.pi * k / 24
        add(None, OVAL_RX * np.cos(a), OVAL_CENTER_Y + OVAL_RY * np.sin(a))
    for side, ex in (("left", -0.38), ("right", 0.38)):
        add(f"{side}_eye", ex, -0.25)
        for k in range(6):
            a = 2 * np.pi * k / 6
            add(None, ex + 0.16 * np.cos(a), -0.25 + 0.075 * np.sin(a))
    for side, sign in (("left", -1.0), ("right", 1.0)):
        xs = [0.58, 0.38, 0.18] if sign < 0 else [0.18, 0.38, 0.58]
        for j, x in enumerate(xs):
            add(f"{side}_brow_{j}", sign * x, -0.53)
        for x in xs:
            add(None, sign * x, -0.68)
        for x in xs:
            add(None, sign * x, -0.43)
    add("nose_tip", 0.0, 0.15)
    add(None, 0.0, -0.08)
    add(None, -0.15, 0.08)
    add(None, 0.15, 0.08)
    add(None, -0.11, 0.25)
    add(None, 0.11, 0.25)
    add("mouth_left", -0.30, 0.55)
    add("mouth_right", 0.30, 0.55)
    add(None, -0.15, 0.47)
    add("upper_lip", 0.0, 0.45)
    add(None, 0.15, 0.47)
    add(None, -0.15, 0.535)
    add("mouth_center", 0.0, 0.535)
    add(None, 0.15, 0.535)
    add(None, -0.15, 0.565)
    add(None, 0.0, 0.565)
    add(None, 0.15, 0.565)
    add(None, -0.15, 0.64)
    add("lower_lip", 0.0, 0.66)
    add(None, 0.15, 0.64)
    return np.array(pts), names


def fill_points(features: np.ndarray, count: int) -> np.ndarray:
    xs = np.arange(-0.9, 0.91, 0.06)
    ys = np.arange(-1.15, 1.26, 0.06)
    gx, gy = np.meshgrid(xs, ys)
    cand = np.stack([gx.ravel(), gy.ravel()], axis=1)
    inside = (cand[:, 0] / (OVAL_RX * 0.86)) ** 2 + ((cand[:, 1] - OVAL_CENTER_Y) / (OVAL_RY * 0.88)) ** 2 < 1
    cand = cand[inside]
    d = np.min(np.linalg.norm(cand[:, None] - features[None], axis=2), axis=1)
    cand = cand[d > 0.13]
    # farthest-point selection, deterministic
    chosen = []
    ref = features.copy()
    dist = np.min(np.linalg.norm(cand[:, None] - ref[None], axis=2), axis=1)
    for _ in range(count):
        i = int(np.argmax(dist))
        chosen.append(cand[i])
        dist = np.minimum(dist, np.linalg.norm(cand - cand[i], axis=1))
    return np.array(chosen)


def build() -> FaceModel:
    feats, names = feature_points()
    fill = fill_points(feats, N_VERTICES - len(feats))
    xy = np.vstack([feats, fill])
    tri = Delaunay(xy).simplices
    # consistent winding, drop degenerate slivers
    a, b, c = xy[tri[:, 0]], xy[tri[:, 1]], xy[tri[:, 2]]
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    tri = tri[np.abs(cross) > 1e-9]
    base = np.column_stack([xy, depth(xy[:, 0], xy[:, 1])])
    n = len(base)

    mouth_idx = [names["mouth_left"], names["mouth_right"]] + list(range(names["mouth_right"] + 1, names["mouth_right"] + 13))
    upper_outer = [names["upper_lip"] - 1, names["upper_lip"], names["upper_lip"] + 1]
    upper_inner = [names["mouth_center"] - 1, names["mouth_center"], names["mouth_center"] + 1]
    lower_inner = [upper_inner[2] + 1, upper_inner[2] + 2, upper_inner[2] + 3]
    lower_outer = [names["lower_lip"] - 1, names["lower_lip"], names["lower_lip"] + 1]
    corners = [names["mouth_left"], names["mouth_right"]]
    oval = set(range(24))

    su = np.zeros((1, n, 3))
    su[0, mouth_idx, 1] = 0.1

    au = np.zeros((10, n, 3))
    # jaw drop: lower lip and chin move down, fading towards the contour
    for v in range(n):
        x, y = xy[v]
        if v in oval or y <= 0.56:
            continue
        w = np.clip(1.0 - (np.hypot(x / 0.75, (y - 0.66) / 0.6)) ** 2, 0.0, 1.0)
        au[0, v, 1] = 0.30 * w
    au[0, lower_inner + lower_outer, 1] = 0.30
    # each mouth AU moves exactly one tracked landmark pair, so per-part
    # displacements map to AU increments without cross terms
    au[0, corners, 1] = 0.0
    # upper lip raiser
    au[1, upper_outer + upper_inner, 1] = -0.15
    # lip stretcher (horizontal corners)
    au[2, names["mouth_left"], 0] = -0.15
    au[2, names["mouth_right"], 0] = 0.15
    for grp in (upper_outer, upper_inner, lower_inner, lower_outer):
        au[2, grp[0], 0] = -0.06
        au[2, grp[2], 0] = 0.06
    # lip corner depressor (vertical corners)
    au[3, corners, 1] = 0.15
    for grp in (upper_outer, upper_inner, lower_inner, lower_outer):
        au[3, [grp[0], grp[2]], 1] = 0.06
    # brow parts: the line vertex and the vertices above and below it move
    # together, so the painted brow band translates rigidly
    k = 4
    for side in ("left", "right"):
        for j in range(3):
            v = names[f"{side}_brow_{j}"]
            au[k, v, 1] = -0.15
            au[k, v + 3, 1] = -0.15
            au[k, v + 6, 1] = -0.15
            k += 1

    au_names = (
        "jaw_drop",
        "upper_lip_raiser",
        "lip_stretcher",
        "lip_corner_depressor",
        "left_brow_0_raiser",
        "left_brow_1_raiser",
        "left_brow_2_raiser",
        "right_brow_0_raiser",
        "right_brow_1_raiser",
        "right_brow_2_raiser",
    )
    au_limits = np.tile([-1.0, 1.0], (10, 1))
    au_limits[0] = [-0.3, 1.0]
    return FaceModel(
        base_shape=base,
        triangles=tri.astype(np.intp),
        su=su,
        au=au,
        su_names=("mouth_vertical_position",),
        au_names=au_names,
        su_limits=np.array([[-3.0, 3.0]]),
        au_limits=au_limits,
        landmarks=names,
    )


def main():
    model = build()
    assert model.n_vertices == N_VERTICES, model.n_vertices
    text = format_model(model)
    header = (
        "# Default 113-vertex face model (CANDIDE-3 compatible layout).\n"
        "# Coordinates: x right, y down, z towards the camera; model units.\n"
        "# Generated by tools/make_default_model.py\n"
    )
    out = Path(__file__).resolve().parents[1] / "src" / "headtrack" / "data" / "default_model.txt"
    out.write_text(header + text, encoding="utf-8")
    parse_model(out.read_text())
    print(f"wrote {out}: {model.n_vertices} vertices, {model.triangles.shape[0]} triangles")


if __name__ == "__main__":
    main()

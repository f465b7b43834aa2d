"""Pyramidal Lucas-Kanade sparse point tracker (coarse-to-fine, iterative, vectorised over points)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgcore import build_pyramid, gradients, sample_many

TRACKED = "tracked"
LOST = "lost"


@dataclass(frozen=True)
class FlowPoint:
    position: tuple[float, float]
    status: str = TRACKED

    @property
    def tracked(self) -> bool:
        return self.status == TRACKED


@dataclass(frozen=True)
class KltConfig:
    window: int = 7
    pyramid_levels: int = 3
    max_iters: int = 20
    epsilon: float = 0.01
    min_eigen: float = 1.0  # on the window-averaged structure tensor, intensity^2 / px^2
    max_residual: float = 0.3  # final window RMS mismatch relative to window contrast

    def __post_init__(self):
        if min(self.window, self.pyramid_levels, self.max_iters) < 1 or self.epsilon <= 0 or self.min_eigen <= 0:
            raise ValueError("KLT parameters must be positive")


class FlowPyramid:
    """Image pyramid with cached gradients; build once per frame."""

    def __init__(self, img: np.ndarray, levels: int):
        self.levels = build_pyramid(img, levels)
        self._grads: list | None = None

    @property
    def shape(self):
        return self.levels[0].shape

    def grads(self, k: int):
        if self._grads is None:
            self._grads = [gradients(lv) for lv in self.levels]
        return self._grads[k]


def _min_eigen(gxx, gxy, gyy):
    tr = gxx + gyy
    det_term = np.sqrt(np.maximum((gxx - gyy) ** 2 + 4.0 * gxy * gxy, 0.0))
    return 0.5 * (tr - det_term)


def track_points(prev: FlowPyramid, nxt: FlowPyramid, points, config: KltConfig = KltConfig()):
    """Track ``points`` (K, 2) from ``prev`` to ``nxt``.

    Returns ``(positions (K, 2), tracked (K,) bool)``.
    """
    if prev.shape != nxt.shape or len(prev.levels) != len(nxt.levels):
        raise ValueError("pyramids must come from same-sized frames with equal depth")
    levels = min(config.pyramid_levels, len(prev.levels))
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    k = pts.shape[0]
    if k == 0:
        return np.zeros((0, 2)), np.zeros(0, dtype=bool)
    w = config.window
    off = np.arange(-w, w + 1, dtype=float)
    oy, ox = np.meshgrid(off, off, indexing="ij")
    offsets = np.stack([ox.ravel(), oy.ravel()], axis=1)  # (W, 2)
    n_win = offsets.shape[0]

    guess = np.zeros((k, 2))
    alive = np.all(np.isfinite(pts), axis=1)
    for lv in range(levels - 1, -1, -1):
        scale = 2.0 ** lv
        img0 = prev.levels[lv]
        img1 = nxt.levels[lv]
        ix, iy = prev.grads(lv)
        h, wd = img0.shape
        p = pts / scale
        if lv == 0:
            inside = (p[:, 0] - w >= 0) & (p[:, 0] + w <= wd - 1) & (p[:, 1] - w >= 0) & (p[:, 1] + w <= h - 1)
            alive &= inside
        else:
            # coarse levels accept partial windows so points near the border still get a guess
            inside = (p[:, 0] >= 0) & (p[:, 0] <= wd - 1) & (p[:, 1] >= 0) & (p[:, 1] <= h - 1)
        act = np.nonzero(alive & inside)[0]
        d = np.zeros((k, 2))
        if act.size:
            win = p[act, None, :] + offsets[None]  # (A, W, 2)
            i0, v0 = sample_many(img0, win)
            wt = v0.astype(float)
            gx, _ = sample_many(ix, win)
            gy, _ = sample_many(iy, win)
            gx *= wt
            gy *= wt
            gxx = np.sum(gx * gx, axis=1)
            gxy = np.sum(gx * gy, axis=1)
            gyy = np.sum(gy * gy, axis=1)
            n_used = np.maximum(wt.sum(axis=1), 1.0)
            lam = _min_eigen(gxx, gxy, gyy) / n_used
            good = (lam >= config.min_eigen) & (n_used >= 0.5 * n_win)
            if lv > 0:
                # a coarse-level failure only forfeits the guess, not the point
                act = act[good]
                i0, gx, gy = i0[good], gx[good], gy[good]
                gxx, gxy, gyy = gxx[good], gxy[good], gyy[good]
                good = np.ones(act.size, dtype=bool)
            alive[act[~good]] = False
            act, i0, gx, gy = act[good], i0[good], gx[good], gy[good]
            gxx, gxy, gyy = gxx[good], gxy[good], gyy[good]
            det = gxx * gyy - gxy * gxy
            running = np.ones(act.size, dtype=bool)
            for _ in range(config.max_iters):
                r = np.nonzero(running)[0]
                if r.size == 0:
                    break
                idx = act[r]
                shift = guess[idx] + d[idx]
                win1 = p[idx, None, :] + shift[:, None, :] + offsets[None]
                i1, valid = sample_many(img1, win1)
                if lv == 0:
                    out = ~np.all(valid, axis=1)
                else:
                    out = valid.sum(axis=1) < 0.5 * n_win
                diff = (i0[r] - i1) * valid
                bx = np.sum(diff * gx[r], axis=1)
                by = np.sum(diff * gy[r], axis=1)
                ux = (gyy[r] * bx - gxy[r] * by) / det[r]
                uy = (gxx[r] * by - gxy[r] * bx) / det[r]
                ux[out] = 0.0
                uy[out] = 0.0
                d[idx, 0] += ux
                d[idx, 1] += uy
                if lv == 0:
                    alive[idx[out]] = False
                diverged = ~np.all(np.isfinite(d[idx]), axis=1) | (np.abs(d[idx]).max(axis=1) > 4 * w)
                alive[idx[diverged]] = False
                d[idx[diverged]] = 0.0
                done = out | diverged | (np.hypot(ux, uy) < config.epsilon)
                running[r[done]] = False
            if lv == 0 and act.size:
                idx = act[alive[act]]
                sel = alive[act]
                win1 = p[idx, None, :] + (guess[idx] + d[idx])[:, None, :] + offsets[None]
                i1, _ = sample_many(img1, win1)
                a0 = i0[sel]
                rms = np.sqrt(np.mean((a0 - i1) ** 2, axis=1))
                contrast = np.std(a0, axis=1) + 1e-9
                alive[idx[rms > config.max_residual * contrast]] = False
        if lv > 0:
            guess = 2.0 * (guess + d)
        else:
            guess = guess + d
    result = pts + guess
    alive &= np.all(np.isfinite(result), axis=1)
    h0, w0 = prev.shape
    alive &= (result[:, 0] >= 0) & (result[:, 0] <= w0 - 1) & (result[:, 1] >= 0) & (result[:, 1] <= h0 - 1)
    return result, alive


def track(prev_img: np.ndarray, next_img: np.ndarray, points, config: KltConfig = KltConfig()) -> list[FlowPoint]:
    """Convenience wrapper returning FlowPoint records."""
    p0 = FlowPyramid(prev_img, config.pyramid_levels)
    p1 = FlowPyramid(next_img, config.pyramid_levels)
    pos, ok = track_points(p0, p1, points, config)
    return [FlowPoint((float(x), float(y)), TRACKED if o else LOST) for (x, y), o in zip(pos, ok)]

"""Optical-flow pose pre-estimation: point registration against the projected model."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import lmsolve
from .facemodel import PoseParams, project, warp

MIN_ACTIVE = 6
DEFAULT_C = 2.0
SCALAR = "scalar"
PER_PAIR = "per_pair"


class PreestError(RuntimeError):
    pass


@dataclass(frozen=True)
class Correspondences:
    model_points: np.ndarray  # (K, 3) deformed model vertices, before pose
    flow_points: np.ndarray  # (K, 2)
    active_mask: np.ndarray  # (K,) bool

    def __post_init__(self):
        mp = np.asarray(self.model_points, dtype=float)
        fp = np.asarray(self.flow_points, dtype=float)
        am = np.asarray(self.active_mask, dtype=bool)
        if mp.ndim != 2 or mp.shape[1] != 3 or fp.shape != (mp.shape[0], 2) or am.shape != (mp.shape[0],):
            raise ValueError("model, flow and mask arrays must have matching lengths")
        object.__setattr__(self, "model_points", mp)
        object.__setattr__(self, "flow_points", fp)
        object.__setattr__(self, "active_mask", am)

    @classmethod
    def all_active(cls, model_points, flow_points) -> "Correspondences":
        return cls(model_points, flow_points, np.ones(len(model_points), dtype=bool))

    @property
    def n_active(self) -> int:
        return int(self.active_mask.sum())

    def with_mask(self, mask) -> "Correspondences":
        return replace(self, active_mask=np.asarray(mask, dtype=bool))


@dataclass(frozen=True)
class OutlierReport:
    distances: np.ndarray
    median: float
    stddev: float
    flags: np.ndarray

    @property
    def n_outliers(self) -> int:
        return int(self.flags.sum())


def _pose(a) -> PoseParams:
    a = np.asarray(a, dtype=float)
    if a[3] <= 0 or not np.all(np.isfinite(a)):
        return None
    return PoseParams.from_array(a)


def pair_distances(corr: Correspondences, pose: PoseParams) -> np.ndarray:
    """Euclidean distance of every pair, active or not."""
    pm = project(warp(corr.model_points, pose))
    return np.linalg.norm(corr.flow_points - pm, axis=1)


def residual(corr: Correspondences, pose: PoseParams) -> np.ndarray:
    """Sum of absolute point distances over active pairs, as a 1-vector."""
    if corr.n_active == 0:
        raise PreestError("no active correspondences")
    d = pair_distances(corr, pose)
    return np.array([float(np.sum(d[corr.active_mask]))])


def residual_per_pair(corr: Correspondences, pose: PoseParams) -> np.ndarray:
    if corr.n_active == 0:
        raise PreestError("no active correspondences")
    pm = project(warp(corr.model_points[corr.active_mask], pose))
    return (corr.flow_points[corr.active_mask] - pm).ravel()


def default_config(pose: PoseParams, max_iterations: int = 10) -> lmsolve.LmConfig:
    return lmsolve.LmConfig(max_iterations=max_iterations, fd_steps=fd_steps(pose))


def fd_steps(pose: PoseParams) -> tuple[float, ...]:
    return (1e-3, 1e-3, 1e-3, 1e-3 * pose.s, 0.1, 0.1)


@dataclass
class PreestResult:
    pose: PoseParams
    final_error: float
    iterations: int
    termination: str


def estimate_full(
    corr: Correspondences,
    initial: PoseParams,
    config: lmsolve.LmConfig | None = None,
    mode: str = SCALAR,
) -> PreestResult:
    if corr.n_active < MIN_ACTIVE:
        raise PreestError(f"need at least {MIN_ACTIVE} active pairs, have {corr.n_active}")
    if mode not in (SCALAR, PER_PAIR):
        raise ValueError(f"unknown pre-estimation mode {mode!r}")
    cfg = config or default_config(initial)
    fn = residual if mode == SCALAR else residual_per_pair
    bad = np.array([1e12])

    def r(a):
        p = _pose(a)
        if p is None:
            return bad if mode == SCALAR else np.full(2 * corr.n_active, 1e12)
        return fn(corr, p)

    try:
        res = lmsolve.minimize(r, initial.as_array(), cfg)
    except lmsolve.LmError as exc:
        raise PreestError(f"pre-estimation failed with {corr.n_active} pairs: {exc}") from exc
    pose = _pose(res.params)
    if pose is None or res.final_error >= 1e20:
        raise PreestError(f"pre-estimation diverged with {corr.n_active} pairs, error {res.final_error:.3g}")
    return PreestResult(pose, res.final_error, res.iterations, res.termination)


def estimate(corr, initial, config=None, mode: str = SCALAR) -> PoseParams:
    return estimate_full(corr, initial, config, mode).pose


def detect_outliers(distances, c: float = DEFAULT_C, consistent: bool = False) -> OutlierReport:
    """Median-centred outlier test on pair distances.

    The default squares each distance before comparing with the median of the
    unsquared distances; ``consistent=True`` compares the distances directly.
    """
    x = np.asarray(distances, dtype=float)
    if x.size < 2:
        raise ValueError("outlier detection needs at least 2 distances")
    med = float(np.median(x))
    sd = float(np.std(x))
    if sd == 0.0:
        return OutlierReport(x, med, sd, np.zeros(x.size, dtype=bool))
    stat = x if consistent else x * x
    flags = np.abs((stat - med) / sd) > c
    return OutlierReport(x, med, sd, flags)

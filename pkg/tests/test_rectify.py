import math

import numpy as np
import pytest

from headtrack import rectify, synth
from headtrack.facemodel import ModelState, PoseParams


def neutral(model, pose=PoseParams()):
    return ModelState(np.zeros(model.n_su), np.zeros(model.n_au), pose)


def render(model, pose, size=(320, 240), alpha=None):
    a = np.zeros((1, model.n_au)) if alpha is None else np.atleast_2d(alpha)
    traj = synth.Trajectory(np.atleast_2d(pose.as_array()), a)
    return synth.render_sequence(model, traj, size).frames[0]


def test_mouth_grid_is_almost_all_valid(model):
    spec = rectify.mouth_spec(model, neutral(model))
    grid = rectify.build_anchor_grid(model, neutral(model), spec)
    assert (spec.w, spec.h) == rectify.MOUTH_SIZE
    assert grid.valid.mean() >= 0.95
    for side in ("left", "right"):
        g = rectify.build_anchor_grid(model, neutral(model), rectify.brow_spec(model, neutral(model), side))
        assert g.valid.mean() >= 0.9


def test_region_outside_silhouette_raises(model):
    with pytest.raises(rectify.RectifyError):
        rectify.build_anchor_grid(model, neutral(model), rectify.RectSpec(5.0, 5.0, 1.0, 1.0, 10, 10))
    with pytest.raises(rectify.RectifyError):
        rectify.build_anchor_grid(model, neutral(model, PoseParams(phi_y=0.1)), rectify.mouth_spec(model, neutral(model)))
    with pytest.raises(rectify.RectifyError):
        rectify.RectSpec(0, 0, 1, 1, 1, 5)
    with pytest.raises(rectify.RectifyError):
        rectify.RectSpec(0, 0, 0, 1, 5, 5)


def test_cell_center_roundtrip_and_ratio(model):
    spec = rectify.mouth_spec(model, neutral(model))
    for x, y in [(0, 0), (spec.w - 1, 0), (0, spec.h - 1), (spec.w - 1, spec.h - 1)]:
        assert np.allclose(spec.to_pixel(*spec.to_model(x, y)), (x, y), atol=1e-6)
    c = spec.cell_centers()
    assert c.shape == (spec.w * spec.h, 2)
    assert np.allclose(c[spec.w + 1], spec.to_model(1, 1))
    grid = rectify.build_anchor_grid(model, neutral(model), spec)
    assert grid.ratio == spec.ratio == (spec.aw / spec.w, spec.ah / spec.h)


def test_frontal_extract_equals_direct_crop(model):
    spec = rectify.brow_spec(model, neutral(model), "left")
    grid = rectify.build_anchor_grid(model, neutral(model), spec)
    r = spec.ratio[0]
    s = 1.0 / r
    x0, y0 = 40, 30
    pose = PoseParams(0, 0, 0, s, x0 - s * spec.tx, y0 - s * spec.ty)
    frame = np.random.default_rng(2).uniform(0, 255, (240, 320))
    patch = rectify.extract(grid, frame, neutral(model, pose), model)
    crop = frame[y0 : y0 + spec.h, x0 : x0 + spec.w]
    assert np.max(np.abs(patch.intensities - crop)[patch.valid]) < 1.0
    assert np.all(patch.intensities[~patch.valid] == 0)


@pytest.mark.parametrize("phi_y_deg", [-20, -15, -8, 8, 15, 20])
def test_rectified_mouth_is_pose_invariant(model, phi_y_deg):
    nstate = neutral(model)
    grid = rectify.build_anchor_grid(model, nstate, rectify.mouth_spec(model, nstate))
    base = PoseParams(0, 0, 0, 90.0, 160.0, 110.0)
    turned = PoseParams(0.0, math.radians(phi_y_deg), 0.05, 90.0, 160.0, 110.0)
    a = rectify.extract(grid, render(model, base), neutral(model, base), model)
    b = rectify.extract(grid, render(model, turned), neutral(model, turned), model)
    both = a.valid & b.valid
    mad = np.mean(np.abs(a.intensities - b.intensities)[both])
    assert mad < (3.0 if abs(phi_y_deg) <= 15 else 5.0)


def test_head_off_frame_gives_invalid_cells(model):
    nstate = neutral(model)
    grid = rectify.build_anchor_grid(model, nstate, rectify.mouth_spec(model, nstate))
    pose = PoseParams(0, 0, 0, 60.0, 5.0, 120.0)
    patch = rectify.extract(grid, np.full((240, 320), 50.0), neutral(model, pose), model)
    assert 0 < patch.valid.sum() < grid.valid.sum()
    assert patch.ratio == grid.ratio

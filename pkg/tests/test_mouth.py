import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from headtrack import mouth, rectify, synth
from headtrack.facemodel import ModelState, PoseParams
from helpers import patch_from, texture, window

ORIGIN = (30, 20)


def test_shifted_copy_gives_shift():
    tex = texture(40, 60)
    p0 = patch_from(window(tex))
    t = mouth._cut(p0.intensities, ORIGIN, (15, 15))
    p1 = patch_from(window(tex, 2, 1))
    scores = mouth.similarity_map(p1, t, ORIGIN, (5, 5))
    assert mouth.best_offset(scores) == (2, 1)
    assert scores[5, 5] > scores[6, 7]


def test_identical_patch_scores_zero():
    p = patch_from(window(texture(40, 60, seed=4)))
    t = mouth._cut(p.intensities, ORIGIN, (21, 9))
    scores = mouth.similarity_map(p, t, ORIGIN, (0, 6))
    assert scores.shape == (13, 1)
    assert scores[6, 0] == pytest.approx(0.0, abs=1e-12)
    assert mouth.best_offset(scores) == (0, 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(-80, 80), st.integers(-3, 3), st.integers(-3, 3))
def test_bias_does_not_move_the_minimum(seed, bias, dx, dy):
    tex = texture(40, 60, seed=seed)
    t = mouth._cut(window(tex), ORIGIN, (15, 15))
    img = window(tex, dx, dy)
    a = mouth.similarity_map(patch_from(img), t, ORIGIN, (5, 5))
    b = mouth.similarity_map(patch_from(img + bias), t, ORIGIN, (5, 5))
    assert mouth.best_offset(a) == mouth.best_offset(b) == (dx, dy)


def test_scores_are_nonnegative_and_edges_inf():
    p = patch_from(window(texture(40, 60, seed=1)))
    t = mouth._cut(p.intensities, (10, 10), (15, 15))
    s = mouth.similarity_map(p, t, (10, 10), (5, 5))
    assert np.all(s[np.isfinite(s)] >= 0)
    assert np.isinf(s[0, 0])  # template would leave the patch


def test_flat_region_raises():
    with pytest.raises(mouth.SimilarityError):
        mouth.similarity_map(patch_from(np.full((40, 60), 9.0)), np.full((15, 15), 9.0), ORIGIN, (3, 3))


def test_ties_prefer_no_motion():
    s = np.zeros((5, 5))
    assert mouth.best_offset(s) == (0, 0)


def corner_image():
    img = np.full((60, 100), 60.0)
    img[25:, 20:80] = 200.0
    return img


def test_corners_snap_and_sizes():
    p = patch_from(corner_image())
    lm = np.array([[22.0, 25.0], [79.0, 27.0], [50.0, 15.0], [50.0, 40.0]])
    parts = mouth.extract_parts(p, lm)
    assert abs(parts.origins[0][0] - 20) <= 1 and abs(parts.origins[0][1] - 25) <= 1
    assert abs(parts.origins[1][0] - 79) <= 1 and abs(parts.origins[1][1] - 25) <= 1
    assert parts.origins[2].tolist() == [50, 15]
    assert [t.shape for t in parts.templates] == [(15, 15), (15, 15), (9, 21), (9, 21)]


def test_flat_patch_keeps_landmark_origins():
    lm = np.array([[20.0, 30.0], [80.0, 30.0], [50.0, 15.0], [50.0, 45.0]])
    parts = mouth.extract_parts(patch_from(np.full((60, 100), 80.0)), lm)
    assert parts.origins.tolist() == lm.astype(int).tolist()


def test_templates_must_stay_inside():
    lm = np.array([[3.0, 30.0], [80.0, 30.0], [50.0, 15.0], [50.0, 45.0]])
    with pytest.raises(mouth.MouthError):
        mouth.extract_parts(patch_from(corner_image()), lm)


def test_occlusion_rule_threshold():
    t = math.radians(20.0)
    assert mouth.occluded_corner(t) is None
    assert mouth.occluded_corner(-t) is None
    assert mouth.occluded_corner(t + 1e-9) == mouth.LEFT
    assert mouth.occluded_corner(-t - 1e-9) == mouth.RIGHT


# --- against the rendered model -----------------------------------------------


@pytest.fixture(scope="module")
def setup(model):
    pose = PoseParams(0, 0, 0, 90.0, 160.0, 110.0)
    ms = ModelState(np.zeros(model.n_su), np.zeros(model.n_au), pose)
    nstate = ModelState(ms.sigma, ms.alpha, PoseParams())
    spec = rectify.mouth_spec(model, nstate)
    grid = rectify.build_anchor_grid(model, nstate, spec)
    from headtrack.pipeline import _landmark_pixels

    frame = render(model, pose)
    patch = rectify.extract(grid, frame, ms, model)
    parts = mouth.extract_parts(patch, _landmark_pixels(model, nstate, spec, mouth.LANDMARKS))
    return ms, grid, parts, frame


def render(model, pose, alpha=None):
    a = np.zeros((1, model.n_au)) if alpha is None else np.atleast_2d(alpha)
    return synth.render_sequence(model, synth.Trajectory(np.atleast_2d(pose.as_array()), a), (320, 240)).frames[0]


def run(model, grid, parts, frame, ms, au, phi_y=0.0, steps=1):
    for _ in range(steps):
        patch = rectify.extract(grid, frame, ms.with_alpha(au.write(ms.alpha)), model)
        au = mouth.track_mouth(patch, parts, au, phi_y)
    return au


def test_capture_frame_is_a_fixed_point(model, setup):
    ms, grid, parts, frame = setup
    au = run(model, grid, parts, frame, ms, mouth.MouthAuState.from_model(model), steps=3)
    assert np.max(np.abs(au.alpha)) <= 1e-9
    assert not au.skipped


def test_clamping(model, setup):
    ms, grid, parts, frame = setup
    au = mouth.MouthAuState.from_model(model)
    au = mouth.MouthAuState(au.limits[:, 1] - 1e-3, au.rates, au.limits, au.au_indices)
    tex = texture(60, 100, seed=9)
    out = mouth.track_mouth(patch_from(window(tex), ratio=grid.ratio), parts, au, 0.0, match_threshold=np.inf)
    assert np.any(out.displacements != 0)
    assert np.all(out.alpha <= au.limits[:, 1]) and np.all(out.alpha >= au.limits[:, 0])


def test_noise_is_unmatched(model, setup):
    _, grid, parts, _ = setup
    au = mouth.MouthAuState.from_model(model)
    noise = np.random.default_rng(3).uniform(0, 255, grid.shape)
    out = mouth.track_mouth(patch_from(noise, ratio=grid.ratio), parts, au, 0.0)
    assert out.unmatched.all()
    assert np.array_equal(out.alpha, au.alpha)


def _tolerance(au, grid):
    return 0.1 * np.abs(au.rates[:, 0]) * np.array([grid.ratio[1], grid.ratio[1], grid.ratio[0], grid.ratio[1]])


def test_recovers_after_noise(model, setup):
    ms, grid, parts, frame = setup
    au = mouth.MouthAuState.from_model(model)
    for k in range(5):
        noise = np.random.default_rng(k).uniform(0, 255, grid.shape)
        au = mouth.track_mouth(patch_from(noise, ratio=grid.ratio), parts, au, 0.0)
        assert au.unmatched.all()
    au = run(model, grid, parts, frame, ms, au, steps=10)
    # integer matches averaged over two corners can leave half a pixel
    assert np.all(np.abs(au.alpha) <= 5 * _tolerance(au, grid) + 1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_recovers_from_offsets_within_search(model, setup, seed):
    ms, grid, parts, frame = setup
    au = mouth.MouthAuState.from_model(model)
    px = np.random.default_rng(seed).integers(-6, 7, size=4)
    step = np.abs(au.rates[:, 0]) * np.array([grid.ratio[1], grid.ratio[1], grid.ratio[0], grid.ratio[1]])
    au = mouth.MouthAuState(np.clip(px * step, au.limits[:, 0], au.limits[:, 1]), au.rates, au.limits, au.au_indices)
    au = run(model, grid, parts, frame, ms, au, steps=10)
    # integer matches averaged over two corners can leave half a pixel
    assert np.all(np.abs(au.alpha) <= 5 * _tolerance(au, grid) + 1e-12)


def test_symmetric_stretch_mirrors(model, setup):
    ms, grid, parts, _ = setup
    k = model.au_index("lip_stretcher")
    alpha = np.zeros(model.n_au)
    # corners move exactly 4 RI pixels outwards
    alpha[k] = 4 * grid.ratio[0] * abs(model.au_rate(k, "mouth_right", 0))
    frame = render(model, ms.pose, alpha)
    patch = rectify.extract(grid, frame, ms, model)
    au = mouth.track_mouth(patch, parts, mouth.MouthAuState.from_model(model), 0.0)
    d = au.displacements
    assert abs(d[mouth.LEFT, 0] + d[mouth.RIGHT, 0]) < 0.5
    assert d[mouth.RIGHT, 0] != 0
    assert au.alpha[2] > 0


def test_turned_head_copies_visible_corner(model, setup):
    ms, grid, parts, _ = setup
    alpha = np.zeros(model.n_au)
    alpha[model.au_index("lip_stretcher")] = 0.3
    frame = render(model, ms.pose, alpha)
    patch = rectify.extract(grid, frame, ms, model)
    au0 = mouth.MouthAuState.from_model(model)
    phi = math.radians(25.0)
    au = mouth.track_mouth(patch, parts, au0, phi)
    d = au.displacements
    assert np.array_equal(d[mouth.LEFT], d[mouth.RIGHT])
    expect = d[mouth.RIGHT, 0] * grid.ratio[0] * au0.rates[2, 1]
    assert au.alpha[2] == pytest.approx(np.clip(expect, *au0.limits[2]))

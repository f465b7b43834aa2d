import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from headtrack import tmpltrack as tt
from headtrack.facemodel import PoseParams
from conftest import rendered


@pytest.fixture(scope="module")
def scene(model):
    seq = rendered("static", 3)
    st0 = seq.truth.state(model, 0)
    tmpl = tt.select_grid_template(model, st0, seq.frames[0])
    return seq, st0, tmpl


def stats_for(tmpl, model, frame, state):
    vals, ok = tt.sample_template(tmpl, model, frame, state)
    m = vals[ok].mean()
    return tt.NormStats(m, float(np.sum((vals[ok] - m) ** 2)), int(ok.sum()))


def test_template_size_and_interior(model, scene):
    _, st0, tmpl = scene
    assert 300 <= len(tmpl) <= 500
    assert tmpl.anchors.hit.all()
    assert tmpl.template_sq_sum == pytest.approx(np.sum((tmpl.intensities - tmpl.intensities.mean()) ** 2))
    with pytest.raises(tt.TemplateError):
        tt.select_grid_template(model, st0, np.zeros((240, 320)), spacing=200.0)


def test_perfect_fit_has_zero_residual(model, scene):
    seq, st0, tmpl = scene
    e, off = tt.residual_norm(tmpl, seq.frames[0], st0, tt.NormStats.bootstrap(tmpl), None, model)
    assert np.max(np.abs(e)) < 1e-12
    assert not off.any()


@settings(max_examples=20, deadline=None)
@given(st.floats(-60, 60))
def test_residual_is_bias_invariant(bias):
    from conftest import default_model

    model = default_model()
    seq = rendered("static", 3)
    st0 = seq.truth.state(model, 0)
    tmpl = tt.select_grid_template(model, st0, seq.frames[0])
    moved = st0.with_pose(PoseParams.from_array(st0.pose.as_array() + [0, 0, 0.01, 0, 1.5, -0.7]))
    frame = seq.frames[1]
    e0, _ = tt.residual_norm(tmpl, frame, moved, stats_for(tmpl, model, frame, moved), None, model)
    fb = frame + bias
    e1, _ = tt.residual_norm(tmpl, fb, moved, stats_for(tmpl, model, fb, moved), None, model)
    assert np.max(np.abs(e1 - e0)) <= 1e-9


def test_masked_anchors_contribute_zero(model, scene):
    seq, st0, tmpl = scene
    flags = np.zeros(len(tmpl), bool)
    flags[::5] = True
    moved = st0.with_pose(PoseParams.from_array(st0.pose.as_array() + [0, 0, 0, 0, 2.0, 0]))
    e, _ = tt.residual_norm(tmpl, seq.frames[0], moved, tt.NormStats.bootstrap(tmpl), tt.PixelOutlierMask(flags), model)
    assert np.all(e[flags] == 0.0)
    assert np.any(e[~flags] != 0.0)


def test_refine_recovers_small_offset(model, scene):
    seq, st0, tmpl = scene
    off = st0.with_pose(PoseParams.from_array(st0.pose.as_array() + [0.02, -0.02, 0.03, 0.5, 2.0, -1.5]))
    res = tt.refine(tmpl, seq.frames[1], off, tt.NormStats.bootstrap(tmpl), None, model)
    assert np.allclose(res.pose.as_array()[4:], st0.pose.as_array()[4:], atol=0.1)
    assert abs(res.pose.phi_z - st0.pose.phi_z) < 2e-3
    assert res.acceptable()
    assert res.final_error < 0.05


def test_refine_fails_when_template_leaves_frame(model, scene):
    seq, st0, tmpl = scene
    away = st0.with_pose(PoseParams.from_array(st0.pose.as_array() + [0, 0, 0, 0, 400, 0]))
    with pytest.raises(tt.RefineFailed):
        tt.refine(tmpl, seq.frames[0], away, tt.NormStats.bootstrap(tmpl), None, model)


def test_corrupt_stats_raise(model, scene):
    seq, st0, tmpl = scene
    with pytest.raises(tt.TemplateError):
        tt.residual_norm(tmpl, seq.frames[0], st0, tt.NormStats(0.0, 0.0, 10), None, model)


def test_pixel_outlier_rule_hand_case():
    e = np.array([0.1, -0.1, 0.1, 0.1, -0.1, 0.1, 2.0])
    x = e * e
    sigma = np.sqrt(np.mean((x - np.median(x)) ** 2))
    mask = tt.detect_pixel_outliers(e)
    assert mask.flags.tolist() == (x > sigma).tolist()
    assert mask.flags[-1] and mask.n_flagged == 1
    ex = np.zeros(7, bool)
    ex[0] = True
    assert tt.detect_pixel_outliers(e, ex).flags[0]


@settings(max_examples=30)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=60))
def test_pixel_outliers_are_sign_symmetric(e):
    e = np.array(e)
    assert np.array_equal(tt.detect_pixel_outliers(e).flags, tt.detect_pixel_outliers(-e).flags)

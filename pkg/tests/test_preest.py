import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from headtrack import facemodel as fm
from headtrack import preest
from headtrack.facemodel import PoseParams
from oracles import procrustes_2d, similarity


def model_corr(model, pose):
    pts = fm.deform(model, np.zeros(model.n_su), np.zeros(model.n_au))
    return pts, fm.project(fm.warp(pts, pose))


@pytest.mark.parametrize("mode", [preest.SCALAR, preest.PER_PAIR])
def test_exact_pose_is_a_fixed_point(model, mode):
    pose = PoseParams(0.1, -0.15, 0.05, 40.0, 150.0, 110.0)
    pts, flow = model_corr(model, pose)
    out = preest.estimate(preest.Correspondences.all_active(pts, flow), pose, mode=mode)
    assert np.allclose(out.as_array(), pose.as_array(), atol=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.floats(-0.1, 0.1), st.floats(0.92, 1.08), st.floats(-6, 6), st.floats(-6, 6))
def test_per_pair_recovers_in_plane_similarity(theta, k, tx, ty):
    model = fm.load_model()
    start = PoseParams(s=40.0, t_x=160.0, t_y=120.0)
    pts, proj = model_corr(model, start)
    flow = similarity(proj - [160, 120], theta, k, [160 + tx, 120 + ty])
    out = preest.estimate(preest.Correspondences.all_active(pts, flow), start, mode=preest.PER_PAIR)
    got = procrustes_2d(proj, fm.project(fm.warp(pts, out)))
    want = procrustes_2d(proj, flow)
    assert got[0] == pytest.approx(want[0], abs=1e-3)
    assert got[1] == pytest.approx(want[1], abs=1e-3)
    assert np.allclose(got[2], want[2], atol=0.05)


def test_inactive_pairs_are_ignored(model):
    pose = PoseParams(0, 0, 0, 40.0, 160.0, 120.0)
    pts, flow = model_corr(model, pose)
    flow = flow.copy()
    flow[:10] += 50.0
    mask = np.ones(len(pts), bool)
    mask[:10] = False
    corr = preest.Correspondences(pts, flow, mask)
    out = preest.estimate(corr, PoseParams(0, 0, 0, 40.0, 157.0, 122.0), mode=preest.PER_PAIR)
    assert np.allclose(out.as_array(), pose.as_array(), atol=1e-4)
    assert preest.residual(corr, pose)[0] == pytest.approx(0.0, abs=1e-9)
    assert preest.pair_distances(corr, pose)[:10] == pytest.approx(np.full(10, np.hypot(50, 50)))


def test_too_few_pairs_raise(model):
    pts, flow = model_corr(model, PoseParams(s=40.0))
    corr = preest.Correspondences.all_active(pts[:5], flow[:5])
    with pytest.raises(preest.PreestError):
        preest.estimate(corr, PoseParams(s=40.0))
    with pytest.raises(preest.PreestError):
        preest.residual(corr.with_mask(np.zeros(5, bool)), PoseParams(s=40.0))
    with pytest.raises(ValueError):
        preest.Correspondences(pts[:5], flow[:4], np.ones(5, bool))


def test_outlier_rule_hand_case():
    d = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 10.0])
    rep = preest.detect_outliers(d)
    assert rep.median == 1.0
    assert rep.stddev == pytest.approx(np.sqrt(np.mean((d - d.mean()) ** 2)))
    assert rep.flags.tolist() == [False] * 9 + [True]
    const = preest.detect_outliers(np.full(8, 2.0))
    assert const.n_outliers == 0
    with pytest.raises(ValueError):
        preest.detect_outliers([1.0])


@settings(max_examples=30)
@given(st.lists(st.floats(0, 100), min_size=2, max_size=50), st.floats(0.5, 5.0))
def test_outlier_flags_shrink_as_c_grows(d, c):
    loose = preest.detect_outliers(d, c).flags
    strict = preest.detect_outliers(d, c + 1.0).flags
    assert not np.any(strict & ~loose)


def test_consistent_variant_uses_unsquared_distances():
    d = np.array([0.5, 0.6, 0.55, 0.58, 0.52, 3.0])
    rep = preest.detect_outliers(d, 2.0, consistent=True)
    assert rep.flags.tolist() == [False] * 5 + [True]

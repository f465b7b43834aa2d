import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from headtrack import facemodel as fm
from headtrack.facemodel import ModelState, PoseParams

angles = st.floats(-1.2, 1.2)


@given(angles, angles, angles)
def test_rotation_is_orthonormal(a, b, c):
    r = fm.rotation_matrix(a, b, c)
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0)


def test_rotation_convention_is_transposed_textbook():
    t = 0.3
    c, s = np.cos(t), np.sin(t)
    assert np.allclose(fm.rotation_matrix(0, 0, t), [[c, s, 0], [-s, c, 0], [0, 0, 1]])
    assert np.allclose(fm.rotation_matrix(0, t, 0), [[c, 0, -s], [0, 1, 0], [s, 0, c]])
    assert np.allclose(fm.rotation_matrix(t, 0, 0), [[1, 0, 0], [0, c, s], [0, -s, c]])


def test_warp_and_project():
    pose = PoseParams(0, 0, 0, 2.0, 10.0, -5.0)
    out = fm.project(fm.warp(np.array([[1.0, 2.0, 3.0]]), pose))
    assert out.tolist() == [[12.0, -1.0]]


def test_pose_validation():
    with pytest.raises(ValueError):
        PoseParams(s=0.0)
    with pytest.raises(ValueError):
        PoseParams(t_x=np.inf)
    a = np.array([0.1, 0.2, 0.3, 4.0, 5.0, 6.0])
    assert np.array_equal(PoseParams.from_array(a).as_array(), a)


def test_default_model_shape(model):
    assert model.n_vertices == 113
    assert model.n_au == 10
    assert set(fm.REQUIRED_LANDMARKS) <= set(model.landmarks)
    assert np.array_equal(fm.deform(model, np.zeros(model.n_su), np.zeros(model.n_au)), model.base_shape)


def test_deform_is_linear(model, rng):
    s1, s2 = rng.normal(size=(2, model.n_su))
    a1, a2 = rng.normal(size=(2, model.n_au))
    g = lambda s, a: fm.deform(model, s, a) - model.base_shape
    assert np.allclose(g(s1 + s2, a1 + a2), g(s1, a1) + g(s2, a2))
    with pytest.raises(ValueError):
        fm.deform(model, np.zeros(model.n_su + 1), np.zeros(model.n_au))


def test_au_rate_and_clamp(model):
    jaw = model.au_index("jaw_drop")
    d = model.au[jaw, model.landmarks["lower_lip"], 1]
    assert model.au_rate(jaw, "lower_lip", 1) == pytest.approx(1.0 / d)
    with pytest.raises(ValueError):
        model.au_rate(jaw, "left_eye", 1)
    big = np.full(model.n_au, 50.0)
    assert np.array_equal(model.clamp_alpha(big), model.au_limits[:, 1])


def test_intersect_anchor_roundtrip(model):
    st0 = model.neutral_state(PoseParams(0.1, -0.2, 0.05, 40.0, 160.0, 120.0))
    verts = fm.posed_vertices(model, st0)
    pts = verts[model.triangles[:40]].mean(axis=1)[:, :2]
    anchors = fm.intersect(model, st0, pts)
    assert anchors.hit.all()
    back = fm.anchor_positions(model, st0, anchors)
    assert np.allclose(back[:, :2], pts, atol=1e-9)
    # the anchor keeps the frontmost surface
    front = fm.anchor_positions(model, st0, anchors)[:, 2]
    assert np.all(front >= verts[:, 2].min())


def test_intersect_miss_gives_nan(model):
    st0 = model.neutral_state(PoseParams(s=40.0, t_x=160.0, t_y=120.0))
    anchors = fm.intersect(model, st0, [[0.0, 0.0], [160.0, 120.0]])
    assert anchors.hit.tolist() == [False, True]
    assert anchors[0] is None
    assert np.isnan(fm.anchor_positions(model, st0, anchors)[0]).all()


def test_anchors_follow_deformation(model):
    st0 = model.neutral_state(PoseParams(s=40.0, t_x=160.0, t_y=120.0))
    lm = model.landmarks["lower_lip"]
    anchors = fm.intersect(model, st0, [fm.posed_vertices(model, st0)[lm, :2]])
    alpha = np.zeros(model.n_au)
    alpha[model.au_index("jaw_drop")] = 0.5
    moved = fm.anchor_positions(model, st0.with_alpha(alpha), anchors)[0]
    assert np.allclose(moved, fm.posed_vertices(model, st0.with_alpha(alpha))[lm], atol=1e-9)


def test_model_text_roundtrip(model):
    again = fm.parse_model(fm.format_model(model))
    assert np.allclose(again.base_shape, model.base_shape)
    assert np.array_equal(again.triangles, model.triangles)
    assert np.allclose(again.au, model.au)
    assert again.landmarks == model.landmarks


@pytest.mark.parametrize(
    "text, match",
    [
        ("VERTICES 2\n0 0 0\n", "truncated"),
        ("VERTICES 1\n0 0 0\nTRIANGLES 1\n0 0 5\n", "triangle index"),
        ("VERTICES 1\n0 0 0\nAU jaw\n0 0 1 0\n", "END"),
        ("VERTICES 1\n0 0 0\n", "missing landmarks"),
    ],
)
def test_malformed_models(text, match):
    with pytest.raises(fm.ModelFormatError, match=match):
        fm.parse_model(text)


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-1, 1), st.floats(5, 80))
def test_anchor_positions_are_pose_equivariant(px, py, pz, s):
    model = fm.load_model()
    base = model.neutral_state(PoseParams(s=30.0, t_x=100.0, t_y=100.0))
    pts = fm.posed_vertices(model, base)[model.triangles[::17]].mean(axis=1)[:, :2]
    anchors = fm.intersect(model, base, pts)
    pose = PoseParams(px, py, pz, s, 3.0, -2.0)
    moved = fm.anchor_positions(model, base.with_pose(pose), anchors)
    local = fm.anchor_positions(model, base.with_pose(PoseParams()), anchors)
    assert np.allclose(moved, fm.warp(local, pose), atol=1e-9)

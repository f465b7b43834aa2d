import numpy as np
import pytest

from headtrack import klt
from oracles import shift_image, textured_image


def grid(img, step=12, margin=20):
    h, w = img.shape
    ys, xs = np.mgrid[margin : h - margin : step, margin : w - margin : step]
    return np.stack([xs.ravel(), ys.ravel()], axis=1).astype(float)


@pytest.mark.parametrize("dx, dy", [(0.0, 0.0), (1.3, -0.6), (4.0, 2.5), (-9.0, 6.0)])
def test_recovers_global_translation(dx, dy):
    img = textured_image()
    nxt = shift_image(img, dx, dy)
    pts = grid(img)
    res = klt.track(img, nxt, pts)
    ok = np.array([p.tracked for p in res])
    pos = np.array([p.position for p in res])
    assert ok.mean() > 0.9
    err = np.linalg.norm(pos[ok] - (pts[ok] + [dx, dy]), axis=1)
    assert np.median(err) < 0.1


def test_flat_region_is_lost():
    img = textured_image()
    img[:, :60] = 100.0
    res = klt.track(img, img.copy(), [[20.0, 60.0], [120.0, 60.0]])
    assert [p.status for p in res] == [klt.LOST, klt.TRACKED]


def test_points_leaving_the_image_are_lost():
    img = textured_image()
    res = klt.track(img, shift_image(img, -8, 0), [[5.0, 60.0]])
    assert not res[0].tracked


def test_identical_frames_do_not_move_points():
    img = textured_image(seed=3)
    pts = grid(img)
    pos, ok = klt.track_points(klt.FlowPyramid(img, 3), klt.FlowPyramid(img, 3), pts)
    assert np.allclose(pos[ok], pts[ok], atol=1e-6)


def test_config_validation():
    with pytest.raises(ValueError):
        klt.KltConfig(window=0)
    with pytest.raises(ValueError):
        klt.KltConfig(epsilon=0)

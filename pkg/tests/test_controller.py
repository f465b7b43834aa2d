import json

import numpy as np
import pytest

from headtrack import controller as ct
from headtrack import synth
from headtrack.facemodel import PoseParams
from conftest import rendered


def det_for(seq, k=0):
    return ct.Detections.from_dict(seq.detections[k])


def test_initialize_from_truth_detections(model):
    pose = PoseParams(0.0, 0.0, 0.2, 45.0, 150.0, 115.0)
    d = ct.Detections.from_dict(synth.truth_detections(model, model.neutral_state(pose)))
    ms = ct.initialize(d, model)
    assert ms.pose.phi_z == pytest.approx(0.2, abs=1e-9)
    assert ms.pose.s == pytest.approx(45.0, rel=1e-9)
    # eyes land where they were detected
    from headtrack.facemodel import posed_vertices

    v = posed_vertices(model, ms)
    assert np.allclose(v[model.landmarks["left_eye"], :2], d.left_eye, atol=0.5)
    assert np.allclose(v[model.landmarks["right_eye"], :2], d.right_eye, atol=0.5)


def test_detection_validation(tmp_path):
    with pytest.raises(ct.InitError):
        ct.Detections((0, 0, 10, 10), (5, 5), (5, 5), (5, 8))
    with pytest.raises(ct.InitError):
        ct.Detections.from_dict({"face": [0, 0, 1, 1], "left_eye": [0, 0]})
    p = tmp_path / "d.json"
    p.write_text(json.dumps([{"frame": 3, "face": [0, 0, 9, 9], "left_eye": [1, 1], "right_eye": [5, 1], "mouth": [3, 6]}]))
    with pytest.raises(ct.InitError, match="frame 0"):
        ct.load_detections(p)


def test_detections_roundtrip(tmp_path):
    seq = rendered("static", 3)
    ct.save_detections(tmp_path / "d.json", seq.detections)
    dets = ct.load_detections(tmp_path / "d.json")
    assert sorted(dets) == [0, 1, 2]
    assert dets[1] == det_for(seq, 1)


def test_static_scene_stays_put(model):
    seq = rendered("static", 6)
    state = ct.start(seq.frames[0], det_for(seq), model)
    p0 = state.pose.as_array()
    for f in seq.frames[1:]:
        state = ct.step(f, state, model)
        assert not state.lost
    assert np.allclose(state.pose.as_array(), p0, atol=1e-3)
    assert all(e.acceptable for e in state.log)


@pytest.mark.parametrize("pre", [True, False])
def test_tracks_slow_translation(model, pre):
    seq = rendered("slow-translate", 12)
    cfg = ct.TrackerConfig(pre_estimation=pre)
    state = ct.start(seq.frames[0], det_for(seq), model, cfg)
    start_err = state.pose.as_array()[4:] - seq.truth.poses[0, 4:]
    for k, f in enumerate(seq.frames[1:], 1):
        state = ct.step(f, state, model, cfg)
        assert not state.lost
    err = state.pose.as_array()[4:] - seq.truth.poses[-1, 4:]
    assert np.all(np.abs(err - start_err) < 1.0)


def test_garbage_frame_is_a_loss(model):
    seq = rendered("static", 2)
    state = ct.start(seq.frames[0], det_for(seq), model)
    noise = np.random.default_rng(0).uniform(0, 255, seq.frames[0].shape)
    state = ct.step(noise, state, model, ct.TrackerConfig(pre_estimation=False))
    assert state.lost
    assert state.log[-1].cause
    with pytest.raises(ValueError):
        ct.step(seq.frames[1], state, model)
    again = ct.reinitialize(seq.frames[1], None, state, model)
    assert again.lost and again.frame_index == state.frame_index + 1
    back = ct.reinitialize(seq.frames[1], det_for(seq, 1), state, model)
    assert not back.lost and back.log is state.log


def test_switch_config_validation():
    with pytest.raises(ValueError):
        ct.SwitchConfig(d=0)


def test_detections_outside_frame_rejected(model):
    seq = rendered("static", 2)
    d = dict(seq.detections[0], left_eye=[-50, 10])
    with pytest.raises(ct.InitError):
        ct.start(seq.frames[0], ct.Detections.from_dict(d), model)

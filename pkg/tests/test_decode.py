import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fadnet.autodiff import Tensor
from fadnet.decode import (
    Detection,
    decode_detections,
    decode_one,
    extract_keypoints,
    peak_mask,
    read_results,
    write_results,
)
from fadnet.errors import ParameterError
from fadnet.geometry import CameraIntrinsics, KeypointEstimate, wrap_angle
from fadnet.kitti import DEFAULT_TEMPLATE, SyntheticConfig, TargetConfig, build_targets, draw_gaussian, generate_synthetic
from fadnet.model import NetworkOutput


def test_single_bump():
    hm = np.zeros((1, 12, 16))
    draw_gaussian(hm[0], (9, 5), 3)
    hm *= 0.9
    (kp,) = extract_keypoints(hm, 0.25)
    assert kp.cell == (9, 5) and (kp.u3dK, kp.v3dK) == (36.0, 20.0) and kp.score == pytest.approx(0.9)


def test_below_threshold_is_empty():
    assert extract_keypoints(np.full((2, 4, 4), 0.2), 0.25) == []


def test_plateau_tie_keeps_smallest_cell():
    hm = np.zeros((1, 6, 6))
    hm[0, 2, 3] = hm[0, 2, 4] = 0.8  # horizontal pair: smaller u wins
    (kp,) = extract_keypoints(hm)
    assert kp.cell == (3, 2)
    hm = np.zeros((1, 6, 6))
    hm[0, 3, 1] = hm[0, 4, 1] = 0.8  # vertical pair: smaller v wins
    assert [k.cell for k in extract_keypoints(hm)] == [(1, 3)]
    hm = np.zeros((1, 6, 6))
    hm[0, 3, 2] = hm[0, 2, 3] = 0.8  # diagonal pair: smaller u wins
    assert [k.cell for k in extract_keypoints(hm)] == [(2, 3)]


def test_flat_plateau_yields_single_peak():
    hm = np.full((1, 5, 5), 0.5)
    assert [k.cell for k in extract_keypoints(hm)] == [(0, 0)]


def test_argument_checks():
    with pytest.raises(ParameterError):
        extract_keypoints(np.zeros((1, 2, 2)), threshold=1.0)
    with pytest.raises(ParameterError):
        extract_keypoints(np.zeros((1, 2, 2)), topk=0)
    with pytest.raises(ParameterError):
        extract_keypoints(np.zeros((2, 2)))


def _brute_peaks(hm, threshold):
    c, h, w = hm.shape
    out = []
    for ci in range(c):
        for v in range(h):
            for u in range(w):
                x = hm[ci, v, u]
                if x < threshold:
                    continue
                ok = True
                for dv in (-1, 0, 1):
                    for du in (-1, 0, 1):
                        vv, uu = v + dv, u + du
                        if (du, dv) == (0, 0) or not (0 <= vv < h and 0 <= uu < w):
                            continue
                        y = hm[ci, vv, uu]
                        if y > x or (y == x and (uu, vv) < (u, v)):
                            ok = False
                if ok:
                    out.append((-x, ci, u, v))
    return [(c_, u, v) for _, c_, u, v in sorted(out)]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 30))
def test_peaks_match_brute_force(seed, topk):
    rng = np.random.default_rng(seed)
    hm = np.round(rng.uniform(0, 1, (2, 7, 9)), 1)  # coarse values force ties
    got = extract_keypoints(hm, 0.25, topk)
    assert [(k.category, *k.cell) for k in got] == _brute_peaks(hm, 0.25)[:topk]
    scores = [k.score for k in got]
    assert len(got) <= topk and scores == sorted(scores, reverse=True)


def test_permutation_stability():
    rng = np.random.default_rng(3)
    hm = rng.uniform(0, 1, (1, 8, 8))
    a = extract_keypoints(hm)
    b = extract_keypoints(hm.copy())
    assert [(k.cell, k.score) for k in a] == [(k.cell, k.score) for k in b]
    assert np.array_equal(peak_mask(Tensor(hm)), peak_mask(hm))


K = CameraIntrinsics(128.0, 128.0, 64.0, 32.0)


def test_zero_outputs_decode_to_one_meter_on_ray():
    kp = KeypointEstimate(80.0, 40.0, 0, 0.7, (20, 10))
    vals = {"g1": np.array([0, 0, -6.0, 4.0]), "g2": np.array([0, 0, 0, 1.0, 0.0]),
            "g3": np.zeros(2), "g4": np.zeros(1)}
    d = decode_one(kp, vals, K, DEFAULT_TEMPLATE, "Car")
    assert d.box3d.z == 1.0
    assert K.project(d.box3d.center) == pytest.approx([80.0, 40.0])
    assert (d.box2d.w, d.box2d.h) == (6.0, 4.0)
    assert np.allclose((d.box3d.H, d.box3d.W, d.box3d.L), DEFAULT_TEMPLATE["Car"])


def _outputs_from_targets(t, cfg):
    """A NetworkOutput whose regression maps hold the exact target encodings."""
    h, w = cfg.height // 4, cfg.width // 4
    groups = {g: np.zeros((getattr(t, g).shape[1], h, w)) for g in ("g1", "g2", "g3", "g4")}
    hm = np.zeros((1, h, w))
    for i, (cu, cv) in enumerate(t.cells):
        for g in groups:
            groups[g][:, cv, cu] = getattr(t, g)[i]
        hm[0, cv, cu] = 0.9
    return NetworkOutput(Tensor(hm), {g: Tensor(v) for g, v in groups.items()})


def test_decode_on_exact_encodings_reproduces_labels():
    cfg = SyntheticConfig(height=96, width=320)
    for s in generate_synthetic(6, 25, 3, cfg):
        t = build_targets(s.to_frame(), DEFAULT_TEMPLATE, TargetConfig(96, 320, ("Car",)))
        out = _outputs_from_targets(t, cfg)
        # adjacent centers would suppress each other as peaks, so feed the cells directly
        kps = [KeypointEstimate(4.0 * cu, 4.0 * cv, 0, 0.9, (int(cu), int(cv))) for cu, cv in t.cells]
        dets = decode_detections(out, kps, s.intrinsics, DEFAULT_TEMPLATE, ("Car",))
        assert len(dets) == len(s.objects)
        for obj in s.objects:
            b = obj.box3d
            (d,) = [d for d in dets if abs(d.box3d.z - b.z) < 1e-6]
            assert np.allclose(d.box3d.center, b.center, atol=1e-6)
            assert np.allclose((d.box3d.H, d.box3d.W, d.box3d.L), (b.H, b.W, b.L), atol=1e-6)
            assert abs(wrap_angle(d.box3d.theta - b.theta)) < 1e-6
            assert abs(wrap_angle(d.alpha - obj.alpha)) < 1e-6
            assert np.allclose(d.box2d.ltrb, obj.bbox, atol=1e-6)


def test_degenerate_depth_is_dropped_and_counted():
    h, w = 4, 4
    groups = {"g1": np.zeros((4, h, w)), "g2": np.zeros((5, h, w)), "g3": np.zeros((2, h, w)),
              "g4": np.full((1, h, w), 800.0)}
    groups["g2"][3] = 1.0
    out = NetworkOutput(Tensor(np.zeros((1, h, w))), {g: Tensor(v) for g, v in groups.items()})
    counter = {}
    kps = [KeypointEstimate(4.0, 4.0, 0, 0.9, (1, 1))]
    assert decode_detections(out, kps, K, DEFAULT_TEMPLATE, ("Car",), counter=counter) == []
    assert counter == {"dropped": 1}


def test_negative_sizes_become_absolute():
    kp = KeypointEstimate(8.0, 8.0, 0, 0.5, (2, 2))
    vals = {"g1": np.array([0, 0, -3.0, -2.0]), "g2": np.array([0, 0, 0, 0.0, 1.0]),
            "g3": np.zeros(2), "g4": np.array([-math.log(10.0)])}
    d = decode_one(kp, vals, K, DEFAULT_TEMPLATE, "Car")
    assert d.box2d.w == 3.0 and d.box2d.h == 2.0


def test_result_format_roundtrip():
    kp = KeypointEstimate(80.0, 40.0, 0, 0.8765, (20, 10))
    vals = {"g1": np.array([0.5, -0.25, 20.0, 12.0]), "g2": np.array([0.1, -0.1, 0.05, 0.6, 0.8]),
            "g3": np.array([1.0, 2.0]), "g4": np.array([-math.log(20.0)])}
    d = decode_one(kp, vals, K, DEFAULT_TEMPLATE, "Car")
    text = write_results([d])
    assert len(text.split()) == 16 and text.split()[-1] == "0.8765"
    (back,) = read_results(text)
    assert isinstance(back, Detection) and back.score == 0.8765
    assert back.box3d.z == pytest.approx(20.0, abs=0.005)
    assert np.allclose(back.box2d.ltrb, d.box2d.ltrb, atol=0.005 + 1e-9)

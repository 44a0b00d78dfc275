import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fadnet.errors import GenerationError, ParameterError, ParseError, TemplateError
from fadnet.geometry import (
    Box3D,
    CameraIntrinsics,
    KeypointEstimate,
    decode_center2d,
    decode_dimensions,
    decode_location3d,
    decode_yaw,
    remake_label_2d,
    wrap_angle,
)
from fadnet.kitti import (
    DEFAULT_TEMPLATE,
    KittiFrame,
    ObjectLabel,
    SyntheticConfig,
    TargetConfig,
    build_targets,
    bundled_split,
    collate,
    dimension_templates,
    draw_gaussian,
    format_calib,
    generate_synthetic,
    hint_targets,
    parse_calib,
    parse_label_file,
    parse_result_file,
    read_frames,
    split_3dop,
    write_label_file,
    write_scenes,
)
from fadnet.kitti.synthetic import dimension_code, nominal_row

LINE = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59"
P2 = "P2: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03"


# -- parsing ------------------------------------------------------------------
def test_parse_example_line():
    (obj,) = parse_label_file(LINE)
    assert obj.category == "Car" and obj.location[2] == 46.70 and obj.yaw == -1.59
    assert obj.dimensions == (1.65, 1.67, 3.64) and obj.bbox == (587.01, 173.33, 614.12, 200.12)
    assert obj.score is None and not obj.is_dontcare


def test_parse_empty_and_dontcare():
    assert parse_label_file("") == []
    assert parse_label_file("\n\n") == []
    dc = "DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10"
    (obj,) = parse_label_file(dc)
    assert obj.is_dontcare


def test_parse_errors_carry_line_number():
    with pytest.raises(ParseError, match="line 2"):
        parse_label_file(LINE + "\nCar 0 0 1 2 3\n")
    with pytest.raises(ParseError, match="line 1"):
        parse_label_file(LINE.replace("46.70", "abc"))
    with pytest.raises(ParseError):
        parse_label_file(LINE + " 0.9")  # a score column is not allowed in labels


def test_result_file_needs_score():
    (obj,) = parse_result_file(LINE + " 0.8731")
    assert obj.score == 0.8731
    with pytest.raises(ParseError):
        parse_result_file(LINE)


def test_label_roundtrip_printed_precision():
    rng = np.random.default_rng(0)
    for _ in range(100):
        obj = ObjectLabel(
            "Car", float(rng.uniform(0, 1)), int(rng.integers(4)), float(rng.uniform(-3, 3)),
            tuple(rng.uniform(0, 1000, 4)), tuple(rng.uniform(0.5, 5, 3)),
            tuple(rng.uniform(-30, 60, 3)), float(rng.uniform(-3, 3)),
        )
        (back,) = parse_label_file(write_label_file([obj]))
        assert back.category == obj.category and back.occlusion == obj.occlusion
        for a, b in ((back.bbox, obj.bbox), (back.dimensions, obj.dimensions),
                     (back.location, obj.location)):
            assert np.allclose(a, b, atol=0.005 + 1e-9)
        assert abs(back.yaw - obj.yaw) <= 0.005 + 1e-9
        text = write_label_file([back])
        assert write_label_file(parse_label_file(text)) == text


def test_parse_calib_example_and_identity():
    K = parse_calib(P2)
    assert (K.fx, K.fy, K.u0, K.v0) == (721.5377, 721.5377, 609.5593, 172.854)
    ident = "P2: 1 0 0 0 0 1 0 0 0 0 1 0"
    assert parse_calib(ident) == CameraIntrinsics(1.0, 1.0, 0.0, 0.0)
    with pytest.raises(ParseError):
        parse_calib("P0: 1 0 0 0 0 1 0 0 0 0 1 0\n")
    with pytest.raises(ParseError):
        parse_calib("P2: 1 2 3\n")


@settings(max_examples=100)
@given(st.lists(st.sampled_from([" ", "  ", "\t", " \t "]), min_size=13, max_size=13),
       st.sampled_from(["", "\n", "\n\n", "\r\n"]))
def test_parse_calib_whitespace_fuzz(seps, tail):
    values = P2.split()
    text = "P0: 1 0 0 0 0 1 0 0 0 0 1 0\n" + "".join(s + v for s, v in zip(seps, values)).lstrip() + tail
    K = parse_calib(text)
    assert (K.fx, K.u0, K.v0) == (721.5377, 609.5593, 172.854)


def test_calib_roundtrip():
    K = CameraIntrinsics(700.125, 701.5, 600.25, 180.75)
    assert parse_calib(format_calib(K)) == K


# -- hint bins ----------------------------------------------------------------
def test_two_object_binning_example():
    hint, mask = hint_targets([100.0, 110.0], [20.0, 30.0], 384)
    assert hint[3] == 25.0 and mask[3] == 1.0
    assert mask.sum() == 1 and np.all(hint[mask == 0] == 0)
    hint, mask = hint_targets([384.0, -3.0], [10.0, 12.0], 384)
    assert mask[11] == 1 and mask[0] == 1  # boundary rows clip into range


def _brute_force_bins(labels, K, height, stride=32):
    bins = defaultdict(list)
    for obj in labels:
        box = remake_label_2d(obj.box3d, K)
        idx = min(max(int(math.floor(box.v / stride)), 0), height // stride - 1)
        bins[idx].append(obj.location[2])
    hint = np.zeros(height // stride)
    mask = np.zeros(height // stride)
    for idx, depths in bins.items():
        total = 0.0
        for d in depths:
            total += d
        hint[idx] = total / len(depths)
        mask[idx] = 1.0
    return hint, mask


def test_hint_targets_match_brute_force_rebinning():
    cfg = SyntheticConfig(height=384, width=1280)
    tcfg = TargetConfig(384, 1280, ("Car",))
    scenes = generate_synthetic(11, 100, 5, cfg)
    for s in scenes:
        t = build_targets(s.to_frame(), DEFAULT_TEMPLATE, tcfg)
        hint, mask = _brute_force_bins(s.objects, s.intrinsics, 384)
        assert np.array_equal(t.hint, hint) and np.array_equal(t.hint_mask, mask)


def test_hint_source_centroid():
    s = generate_synthetic(1, 1, 4, SyntheticConfig(height=384, width=1280))[0]
    t = build_targets(s.to_frame(), DEFAULT_TEMPLATE, TargetConfig(384, 1280, ("Car",), hint_source="centroid"))
    v = [s.intrinsics.project(o.box3d.center)[1] for o in s.objects]
    ref, ref_mask = hint_targets(v, [o.location[2] for o in s.objects], 384)
    assert np.array_equal(t.hint, ref) and np.array_equal(t.hint_mask, ref_mask)


# -- heatmap and group targets ------------------------------------------------------
def test_draw_gaussian_peak_and_max_merge():
    hm = np.zeros((10, 10))
    draw_gaussian(hm, (3, 4), 2)
    assert hm[4, 3] == 1.0 and hm.max() == 1.0
    draw_gaussian(hm, (5, 4), 2)
    assert hm[4, 5] == 1.0 and hm[4, 4] < 1.0
    edge = draw_gaussian(np.zeros((4, 4)), (0, 0), 3)
    assert edge[0, 0] == 1.0
    single = draw_gaussian(np.zeros((3, 3)), (1, 1), 0)
    assert single.sum() == 1.0


def _frames(n=20, seed=0, cfg=SyntheticConfig(height=96, width=320)):
    return [s.to_frame() for s in generate_synthetic(seed, n, 3, cfg)], cfg


def test_heatmap_has_exact_peak_per_object():
    frames, cfg = _frames()
    for f in frames:
        t = build_targets(f, DEFAULT_TEMPLATE, TargetConfig(cfg.height, cfg.width, ("Car",)))
        assert (t.heatmap == 1.0).sum() == t.n_objects
        for cu, cv in t.cells:
            assert t.heatmap[0, cv, cu] == 1.0


def test_targets_reconstruct_labels():
    frames, cfg = _frames(30, seed=5)
    tcfg = TargetConfig(cfg.height, cfg.width, ("Car",))
    for f in frames:
        t = build_targets(f, DEFAULT_TEMPLATE, tcfg)
        assert t.n_excluded == 0
        for i, obj in enumerate(f.objects):
            kp = KeypointEstimate(*t.keypoints[i], 0, 1.0)
            x, y, z = decode_location3d(kp, *t.g3[i], t.g4[i, 0], f.intrinsics)
            b = obj.box3d
            assert np.allclose((x, y, z), b.center, atol=1e-9, rtol=0)
            H, W, L = decode_dimensions(DEFAULT_TEMPLATE["Car"], *t.g2[i, :3])
            assert np.allclose((H, W, L), (b.H, b.W, b.L), atol=1e-9, rtol=0)
            theta = decode_yaw(t.g2[i, 3], t.g2[i, 4], x, z)
            assert abs(wrap_angle(theta - b.theta)) < 1e-9
            u, v = decode_center2d(kp, t.g1[i, 0], t.g1[i, 1])
            box = remake_label_2d(b, f.intrinsics)
            assert np.allclose((u, v, t.g1[i, 2], t.g1[i, 3]), (box.u, box.v, box.w, box.h), atol=1e-9)
            assert np.allclose(t.g3[i], np.array(f.intrinsics.project(b.center)) - t.keypoints[i], atol=1e-12)


def test_zero_residual_at_cell_corner():
    K = CameraIntrinsics(100.0, 100.0, 50.0, 30.0)
    x, y, z = K.backproject(40.0, 20.0, 10.0)
    box = Box3D(x, y, z, 1.5, 1.6, 3.9, 0.3)
    frame = KittiFrame("0", K, [ObjectLabel.from_boxes("Car", box, remake_label_2d(box, K))])
    t = build_targets(frame, DEFAULT_TEMPLATE, TargetConfig(64, 128, ("Car",)))
    assert np.allclose(t.g3[0], 0.0, atol=1e-12) and t.cells[0].tolist() == [10, 5]


def test_excluded_objects_are_counted():
    K = CameraIntrinsics(100.0, 100.0, 50.0, 30.0)
    inside = Box3D(0, 0, 10, 1.5, 1.6, 3.9, 0.0)
    behind = Box3D(0, 0, -5, 1.5, 1.6, 3.9, 0.0)
    outside = Box3D(50, 0, 10, 1.5, 1.6, 3.9, 0.0)
    straddle = Box3D(0, 0, 1.0, 1.5, 1.6, 3.9, math.pi / 2)
    objs = [ObjectLabel.from_boxes("Car", b, remake_label_2d(inside, K)) for b in (inside, behind, outside, straddle)]
    objs.append(ObjectLabel("DontCare", -1, -1, -10, (0, 0, 5, 5), (-1, -1, -1), (-1000, -1000, -1000), -10))
    with pytest.warns(UserWarning):
        t = build_targets(KittiFrame("0", K, objs), DEFAULT_TEMPLATE, TargetConfig(64, 128, ("Car",)))
    assert t.n_objects == 1 and t.n_excluded == 3


def test_collate_offsets():
    frames, cfg = _frames(3)
    tcfg = TargetConfig(cfg.height, cfg.width, ("Car",))
    ts = [build_targets(f, DEFAULT_TEMPLATE, tcfg) for f in frames]
    b = collate(ts)
    assert b.n_objects == sum(t.n_objects for t in ts)
    assert b.batch_index.tolist() == [i for i, t in enumerate(ts) for _ in range(t.n_objects)]
    assert b.heatmap.shape == (3, 1, 24, 80) and b.intrinsics.shape == (b.n_objects, 4)


# -- templates ---------------------------------------------------------------------
def _car(dims):
    return ObjectLabel("Car", 0, 0, 0, (0, 0, 1, 1), dims, (0, 1, 10), 0)


def test_dimension_templates():
    one = dimension_templates([KittiFrame("0", None, [_car((1.5, 1.6, 3.8))])])
    assert tuple(one["Car"]) == (1.5, 1.6, 3.8)
    two = dimension_templates([KittiFrame("0", None, [_car((1.5, 1.6, 3.8)), _car((1.7, 1.8, 4.2))])])
    assert np.allclose(two["Car"], (1.6, 1.7, 4.0))
    with pytest.raises(TemplateError, match="Pedestrian"):
        dimension_templates([KittiFrame("0", None, [_car((1, 1, 1))])], ["Car", "Pedestrian"])


def test_dimension_templates_streaming_oracle():
    frames, _ = _frames(40, seed=2)
    mean = np.zeros(3)
    n = 0
    for f in frames:
        for o in f.objects:
            n += 1
            mean += (np.array(o.dimensions) - mean) / n
    assert np.allclose(dimension_templates(frames)["Car"], mean, atol=1e-12)


# -- split -----------------------------------------------------------------------
def test_bundled_split_sizes():
    train, val = bundled_split()
    assert (len(train), len(val)) == (3712, 3769)
    assert not set(train) & set(val)
    assert set(train) | set(val) == {f"{i:06d}" for i in range(7481)}
    tr, va = split_3dop(range(7481))
    assert (len(tr), len(va)) == (3712, 3769)


def test_seeded_split_partition_and_determinism():
    ids = [f"{i:06d}" for i in range(10)]
    a, b = split_3dop(ids, seed=3), split_3dop(ids, seed=3)
    assert a == b and len(a[0]) == 5
    assert sorted(a[0] + a[1]) == ids and not set(a[0]) & set(a[1])
    with pytest.raises(ParameterError):
        split_3dop(["1", "1"])


# -- synthetic -----------------------------------------------------------------------
def test_synthetic_determinism_and_constraints():
    cfg = SyntheticConfig()
    a, b = generate_synthetic(4, 6, 3, cfg), generate_synthetic(4, 6, 3, cfg)
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.image, sb.image) and sa.objects == sb.objects
    for s in a:
        cells = set()
        for o in s.objects:
            u, v = s.intrinsics.project(o.box3d.center)
            assert 0 <= u < cfg.width and 0 <= v < cfg.height
            assert cfg.z_range[0] <= o.location[2] <= cfg.z_range[1]
            assert -math.pi < o.yaw <= math.pi
            ratio = np.array(o.dimensions) / DEFAULT_TEMPLATE["Car"]
            assert np.all((ratio >= 0.8) & (ratio <= 1.2))
            assert np.all(np.abs(dimension_code(o)) < 1.2)
            cells.add((int(u // 4), int(v // 4)))
        for a in cells:
            assert all(a == b or max(abs(a[0] - b[0]), abs(a[1] - b[1])) > 1 for b in cells)


def test_synthetic_rows_follow_depth():
    assert nominal_row(3.0, 64) > nominal_row(10.0, 64) > nominal_row(60.0, 64)


def test_synthetic_generation_error():
    tiny = SyntheticConfig(height=32, width=32, max_retries=5)
    with pytest.raises(GenerationError):
        generate_synthetic(0, 1, 40, tiny)


def test_synthetic_hint_masks_consistent():
    for s in generate_synthetic(8, 10, 3, SyntheticConfig(height=128, width=256)):
        t = build_targets(s.to_frame(), DEFAULT_TEMPLATE, TargetConfig(128, 256, ("Car",)))
        v = [b.v for b in t.boxes2d]
        idx = {min(max(int(x // 32), 0), 3) for x in v}
        assert set(np.flatnonzero(t.hint_mask)) == idx


def test_write_and_read_scenes(tmp_path):
    scenes = generate_synthetic(2, 3, 2)
    write_scenes(scenes, tmp_path)
    frames = read_frames(tmp_path)
    assert [f.image_id for f in frames] == [s.image_id for s in scenes]
    for f, s in zip(frames, scenes):
        assert np.array_equal(f.image, s.image) and f.intrinsics == s.intrinsics
        assert len(f.objects) == len(s.objects)
        assert np.allclose([o.location for o in f.objects], [o.location for o in s.objects], atol=0.005)

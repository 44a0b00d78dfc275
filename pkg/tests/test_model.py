import numpy as np
import pytest

from fadnet.autodiff import Tensor
from fadnet.blocks import Backbone, ConvGRUCell, DepthHintModule, HeadBlock
from fadnet.errors import DimensionError, GeometryError, ParameterError
from fadnet.model import (
    GROUP_CHANNELS,
    GROUP_NAMES,
    VARIANTS,
    FADNet,
    ModelConfig,
    output_affine,
    parameter_groups,
    parameter_inventory,
)
from fadnet.sweep import toy_model_config


def rng(seed=0):
    return np.random.default_rng(seed)


def test_head_block_preserves_spatial_size():
    head = HeadBlock(6, 8, 3, rng(), groups=2)
    out = head(Tensor(rng(1).normal(size=(2, 6, 5, 7))))
    assert out.shape == (2, 3, 5, 7)
    with pytest.raises(DimensionError):
        head(Tensor(np.zeros((2, 5, 5, 7))))


def _fill_gate(conv, bias):
    conv.weight.data[:] = 0.0
    conv.bias.data[:] = bias


def test_convgru_gate_extremes():
    cell = ConvGRUCell(3, 4, rng())
    x = Tensor(rng(1).normal(size=(1, 3, 5, 5)))
    h = Tensor(rng(2).normal(size=(1, 4, 5, 5)))
    _fill_gate(cell.update, -60.0)  # z ~ 0 keeps the previous state
    assert np.allclose(cell(x, h).data, h.data, atol=1e-12)
    _fill_gate(cell.update, 60.0)  # z ~ 1 takes the candidate
    _fill_gate(cell.reset, -60.0)  # r ~ 0 hides h from the candidate
    out = cell(x, h).data
    fresh = cell(x, Tensor(np.zeros_like(h.data))).data
    assert np.allclose(out, fresh, atol=1e-12)
    assert np.all(np.abs(out) < 1)


def test_convgru_shape_errors():
    cell = ConvGRUCell(3, 4, rng())
    with pytest.raises(DimensionError):
        cell(Tensor(np.zeros((1, 3, 5, 5))), Tensor(np.zeros((1, 4, 5, 6))))
    with pytest.raises(DimensionError):
        cell(Tensor(np.zeros((1, 2, 5, 5))), Tensor(np.zeros((1, 4, 5, 5))))


def test_depth_hint_replicates_rows():
    mod = DepthHintModule(5, 4, rng(), scale=3.0, shift=1.0)
    deep = Tensor(rng(1).normal(size=(2, 5, 3, 4)))
    vec, hint = mod(deep)
    assert vec.shape == (2, 3) and hint.shape == (2, 1, 24, 32)
    for i in range(3):
        block = hint.data[:, 0, 8 * i : 8 * i + 8, :]
        assert np.all(block == vec.data[:, i, None, None])
    with pytest.raises(DimensionError):
        mod(Tensor(np.zeros((1, 5, 3, 5))))


def test_depth_hint_row_is_width_mixture():
    # each row value only depends on that row of the deep feature
    mod = DepthHintModule(2, 4, rng())
    deep = rng(1).normal(size=(1, 2, 3, 4))
    base = mod(Tensor(deep))[0].data
    deep[0, :, 1, :] += 5.0
    moved = mod(Tensor(deep))[0].data
    assert moved[0, 0] == base[0, 0] and moved[0, 2] == base[0, 2] and moved[0, 1] != base[0, 1]


def test_backbone_strides():
    bb = Backbone(rng(), width=16, out_channels=8)
    deep, feat = bb(Tensor(rng(1).normal(size=(1, 3, 64, 96))))
    assert deep.shape == (1, 16, 2, 3) and feat.shape == (1, 8, 16, 24)
    with pytest.raises(GeometryError):
        bb(Tensor(np.zeros((1, 3, 60, 96))))


def test_backbone_transposed_upsampler():
    bb = Backbone(rng(), width=8, out_channels=4, upsample_mode="transposed", skip=False)
    _, feat = bb(Tensor(rng(1).normal(size=(1, 3, 32, 64))))
    assert feat.shape == (1, 4, 8, 16)


@pytest.mark.parametrize("variant", sorted(VARIANTS))
def test_output_shapes(variant):
    cfg = toy_model_config(**VARIANTS[variant], categories=2)
    out = FADNet(cfg).predict(rng(1).normal(size=(2, 3, 64, 64)))
    assert out.heatmap.shape == (2, 2, 16, 16)
    assert np.all((out.heatmap.data > 0) & (out.heatmap.data < 1))
    for g in GROUP_NAMES:
        assert out[g].shape == (2, GROUP_CHANNELS[g], 16, 16)
        assert np.all(np.isfinite(out[g].data))
    assert (out.hint_vector is not None) == cfg.enable_dh
    if cfg.enable_dh:
        assert out.hint_vector.shape == (2, 2)


def test_unbatched_input():
    out = FADNet(toy_model_config()).predict(np.zeros((3, 64, 64)))
    assert out.heatmap.shape == (1, 16, 16) and out["g4"].shape == (1, 16, 16)


def test_wrong_image_shape():
    with pytest.raises(GeometryError):
        FADNet(toy_model_config()).predict(np.zeros((1, 3, 64, 96)))


def test_config_validation():
    with pytest.raises(ParameterError):
        ModelConfig(height=100)
    with pytest.raises(ParameterError):
        ModelConfig(enable_fa=False, reversed_order=True)
    with pytest.raises(ParameterError):
        ModelConfig.variant("nope")
    with pytest.raises(ParameterError):
        ModelConfig(categories=0)


def test_config_text_roundtrip(tmp_path):
    cfg = ModelConfig.variant("reversed", categories=2, height=96, width=320)
    assert ModelConfig.from_text(cfg.to_text()) == cfg
    cfg.save(tmp_path / "m.cfg")
    assert ModelConfig.load(tmp_path / "m.cfg") == cfg


def _names(cfg):
    return dict(parameter_inventory(cfg))


def test_variant_inventories_differ_only_in_their_modules():
    base = toy_model_config()
    inv = {v: _names(ModelConfig(**{**base.__dict__, **VARIANTS[v]})) for v in VARIANTS}
    full, baseline = inv["full"], inv["baseline"]
    assert inv["reversed"] == full
    only_full = set(full) - set(baseline)
    assert all(n.startswith(("gru.", "depth_hint.")) for n in only_full)
    assert set(inv["fa"]) - set(baseline) == {n for n in only_full if n.startswith("gru.")}
    assert set(inv["dh"]) - set(baseline) == {n for n in only_full if n.startswith("depth_hint.")}
    # the depth head sees one extra input channel when the hint is enabled
    changed = {n for n in set(full) & set(baseline) if full[n] != baseline[n]}
    assert changed == {"heads.g4.conv3x3.weight"}
    assert full["heads.g4.conv3x3.weight"][1] == baseline["heads.g4.conv3x3.weight"][1] + 1


def test_reversed_order_assigns_timesteps_backwards():
    cfg = toy_model_config(**VARIANTS["reversed"])
    assert cfg.group_order == ("g4", "g3", "g2", "g1")
    model = FADNet(cfg)
    f = model.features(Tensor(rng(1).normal(size=(1, 3, 64, 64))))
    assert f["head_inputs"]["g1"].data[:, :8].tolist() == f["states"][3].data.tolist()


def test_association_gives_each_group_its_own_state():
    img = Tensor(rng(1).normal(size=(1, 3, 64, 64)))
    f = FADNet(toy_model_config()).features(img)
    s = f["states"]
    assert np.allclose(f["head_inputs"]["g1"].data, s[0].data)
    assert not np.allclose(s[0].data, s[1].data)
    fb = FADNet(toy_model_config(**VARIANTS["baseline"])).features(img)
    assert all(fb["head_inputs"][g] is fb["feat"] for g in GROUP_NAMES)


def test_seeded_init_and_state_roundtrip():
    a, b = FADNet(toy_model_config(), seed=3), FADNet(toy_model_config(), seed=3)
    assert all(np.array_equal(a.state_dict()[k], v) for k, v in b.state_dict().items())
    c = FADNet(toy_model_config(), seed=4)
    c.load_state_dict(a.state_dict())
    img = rng(1).normal(size=(1, 3, 64, 64))
    assert np.array_equal(c.predict(img).heatmap.data, a.predict(img).heatmap.data)
    with pytest.raises(ParameterError):
        FADNet(toy_model_config(**VARIANTS["baseline"])).load_state_dict(a.state_dict())


def test_parameter_groups_partition():
    model = FADNet(toy_model_config())
    groups = parameter_groups(model)
    names = [n for ns in groups.values() for n in ns]
    assert sorted(names) == sorted(n for n, _ in model.named_parameters())
    assert {"backbone", "keypoint_head", "gru", "depth_hint", "head_g1", "head_g4"} <= set(groups)


def test_output_affine_is_fixed_and_matches_channels():
    aff = output_affine(ModelConfig())
    for g in GROUP_NAMES:
        scale, shift = aff[g]
        assert scale.shape == shift.shape == (GROUP_CHANNELS[g], 1, 1)
    assert aff["g1"][0].ravel()[2] == 384 / 8
    model = FADNet(toy_model_config())
    assert not any("affine" in n for n, _ in model.named_parameters())


def test_paper_scale_inventory_builds():
    inv = _names(ModelConfig())
    assert inv["keypoint_head.conv1x1.weight"] == (3, 256, 1, 1)
    assert inv["depth_hint.column.weight"] == (1, 1280 // 32, 1, 1)
    assert inv["gru.update.weight"] == (64, 128, 3, 3)

"""Architecture zoo: frozen shape goldens, head geometry, structural
invariants between chroma and luma-only variants, and cost orderings."""

import json
import pathlib
from fractions import Fraction

import pytest

from dctdet import zoo
from dctdet.graph import flop_count, seed_weights

GOLDEN = json.loads(
    (pathlib.Path(__file__).parent / "golden" / "shapes.json").read_text())

# hand-derived head grids shared by every detector
HEAD_GRID = [(38, 38, 4), (19, 19, 6), (10, 10, 6), (5, 5, 6), (3, 3, 4),
             (1, 1, 4)]


# -- golden table -----------------------------------------------------------


@pytest.mark.parametrize("arch", zoo.ARCHITECTURE_IDS)
def test_shapes_match_golden(arch):
    model = zoo.build(arch)
    entry = GOLDEN[arch]
    shapes = {k: list(v) for k, v in model.graph.infer_shapes().items()}
    assert shapes == entry["layers"]
    assert {k: list(v) for k, v in model.input_specs.items()} == entry["inputs"]
    assert [[h.layer, h.boxes_per_cell] for h in model.heads] == entry["heads"]
    assert [list(g) for g in zoo.head_geometry(model)] == entry["head_geometry"]
    assert flop_count(model.graph)["total_macs"] == entry["total_macs"]


def test_golden_covers_every_architecture():
    assert set(GOLDEN) == set(zoo.ARCHITECTURE_IDS)


# -- detector head geometry -------------------------------------------------


@pytest.mark.parametrize("arch", zoo.DETECTOR_IDS)
def test_detector_head_grid(arch):
    model = zoo.build(arch)
    assert zoo.head_geometry(model) == HEAD_GRID
    assert zoo.num_priors(model) == 8732


@pytest.mark.parametrize("arch", zoo.DETECTOR_IDS)
def test_head_predictors_present(arch):
    model = zoo.build(arch, num_classes=21)
    shapes = model.graph.infer_shapes()
    for i, (h, w, boxes) in enumerate(HEAD_GRID, 1):
        assert shapes[f"head{i}_loc"] == (h, w, boxes * 4)
        assert shapes[f"head{i}_conf"] == (h, w, boxes * 21)
    assert model.graph.output_names() == [
        f"head{i}_{kind}" for i in range(1, 7) for kind in ("loc", "conf")]


def test_num_classes_changes_confidence_channels():
    model = zoo.build("ssd_dct_y", num_classes=2)
    shapes = model.graph.infer_shapes()
    assert shapes["head1_conf"] == (38, 38, 4 * 2)
    assert shapes["head1_loc"] == (38, 38, 16)


# -- input contracts --------------------------------------------------------


def test_input_specs():
    assert zoo.build("ssd300_rgb").input_specs == {"rgb": (300, 300, 3)}
    assert zoo.build("ssd_dct").input_specs == {
        "y": (38, 38, 64), "cbcr": (19, 19, 128)}
    assert zoo.build("ssd_dct_y").input_specs == {"y": (38, 38, 64)}
    assert zoo.build("ssd_dct_deconv").input_specs == {
        "y": (38, 38, 64), "cb": (19, 19, 64), "cr": (19, 19, 64)}
    assert zoo.build("vgg_dct").input_specs == {
        "y": (32, 32, 64), "cbcr": (16, 16, 128)}
    assert zoo.build("resnet50").input_specs == {"rgb": (256, 256, 3)}


def test_input_element_counts():
    full = zoo.input_element_count(zoo.build("ssd_dct"))
    luma = zoo.input_element_count(zoo.build("ssd_dct_y"))
    rgb = zoo.input_element_count(zoo.build("ssd300_rgb"))
    assert luma == 92_416            # 38*38*64
    assert full == 138_624           # + 19*19*128
    assert rgb == 270_000            # 300*300*3
    assert Fraction(luma, full) == Fraction(2, 3)
    assert zoo.input_element_count(zoo.build("ssd_dct_deconv")) == full


# -- hand-frozen trunk milestones ------------------------------------------


def test_ssd300_trunk_milestones():
    s = zoo.build("ssd300_rgb").graph.infer_shapes()
    assert s["pool1"] == (150, 150, 64)
    assert s["pool2"] == (75, 75, 128)
    assert s["pool3"] == (38, 38, 256)   # ceil 75/2
    assert s["conv4_3"] == (38, 38, 512)
    assert s["conv4_3_norm"] == (38, 38, 512)
    assert s["pool4"] == (19, 19, 512)
    assert s["pool5"] == (19, 19, 512)   # 3x3 stride-1 pool keeps the grid
    assert s["fc6"] == (19, 19, 1024)
    assert s["fc7"] == (19, 19, 1024)
    assert s["conv6_2"] == (10, 10, 512)
    assert s["conv7_2"] == (5, 5, 256)
    assert s["conv8_2"] == (3, 3, 256)
    assert s["conv9_2"] == (1, 1, 256)


def test_ssd300_fc6_is_dilated():
    g = zoo.build("ssd300_rgb").graph
    fc6 = g.layers["fc6"]
    assert fc6.kernel == (3, 3)
    assert fc6.dilation == 6


def test_ssd_dct_merge_after_pool4():
    model = zoo.build("ssd_dct")
    s = model.graph.infer_shapes()
    assert s["y_adapt"] == (38, 38, 256)
    assert s["conv4_3"] == (38, 38, 512)
    assert s["pool4"] == (19, 19, 512)
    assert s["cbcr_bn"] == (19, 19, 128)
    assert s["merge"] == (19, 19, 640)
    assert model.graph.layers["merge"].inputs == ["pool4", "cbcr_bn"]


def test_deconv_variants_upsample_each_chroma_plane():
    for arch in ("ssd_dct_deconv", "ssd_deconv_rfa"):
        model = zoo.build(arch)
        s = model.graph.infer_shapes()
        assert s["cb_up"] == (38, 38, 64)
        assert s["cr_up"] == (38, 38, 64)
        assert s["merge"] == (38, 38, 192)
        assert model.graph.layers["cb_up"].kind == "deconv"
        assert model.graph.layers["cr_up"].kind == "deconv"
        assert model.graph.layers["merge"].inputs == ["y", "cb_up", "cr_up"]


def test_resnet_trunk_milestones():
    s = zoo.build("ssd_resnet50_rgb").graph.infer_shapes()
    assert s["conv1"] == (150, 150, 64)
    assert s["pool1"] == (75, 75, 64)
    assert s["s2_ib2_out"] == (75, 75, 256)
    assert s["s3_ib3_out"] == (38, 38, 512)
    assert s["s4_ib5_out"] == (19, 19, 1024)
    assert s["s5_ib2_out"] == (19, 19, 2048)   # stage 5 keeps the 19 grid


def test_lcrfa_trunk_widths():
    s = zoo.build("ssd_lcrfa").graph.infer_shapes()
    assert s["y_cb1_out"] == (38, 38, 1024)
    assert s["y_s1_ib2_out"] == (38, 38, 1024)
    assert s["y_cb2_out"] == (38, 38, 512)
    assert s["y_s2_ib3_out"] == (38, 38, 512)
    assert s["y_cb3_out"] == (19, 19, 512)
    assert s["cbcr_cb_out"] == (19, 19, 512)
    assert s["merge"] == (19, 19, 1024)
    assert s["s4_ib5_out"] == (19, 19, 1024)
    assert s["s5_ib2_out"] == (19, 19, 2048)


def test_lcrfa_first_identity_block_uses_kernel_2():
    g = zoo.build("ssd_lcrfa").graph
    assert g.layers["y_s1_ib1_b"].kernel == (2, 2)
    assert g.layers["y_s1_ib2_b"].kernel == (3, 3)


def test_lcrfa_thinner_widths():
    s = zoo.build("ssd_lcrfa_thinner").graph.infer_shapes()
    assert s["y_cb1_out"] == (38, 38, 384)
    assert s["y_cb2_out"] == (38, 38, 384)
    assert s["y_cb3_out"] == (19, 19, 768)
    assert s["cbcr_cb_out"] == (19, 19, 256)
    assert s["merge"] == (19, 19, 1024)
    s_y = zoo.build("ssd_lcrfa_thinner_y").graph.infer_shapes()
    assert s_y["s4_ib5_out"] == (19, 19, 768)


def test_deconv_rfa_has_no_input_batchnorm():
    g = zoo.build("ssd_deconv_rfa").graph
    assert not any(s.kind == "batchnorm" and s.inputs == ["merge"]
                   for s in g.layers.values())
    assert g.layers["cb1_a"].inputs == ["merge"]


def test_classifier_outputs():
    for arch in zoo.BACKBONE_IDS:
        model = zoo.build(arch)
        s = model.graph.infer_shapes()
        assert s["logits"] == (1, 1, 1000)
        assert model.graph.layers["fc1000"].kernel == (1, 1)
        assert model.graph.output_names() == ["logits"]
        assert model.heads == []


def test_classification_grids():
    s = zoo.build("vgg_dct").graph.infer_shapes()
    assert s["merge"] == (16, 16, 640)
    assert s["fc7"] == (8, 8, 1024)
    s = zoo.build("resnet50").graph.infer_shapes()
    assert s["s5_ib2_out"] == (8, 8, 2048)
    s = zoo.build("lcrfa").graph.infer_shapes()
    assert s["y_cb3_out"] == (16, 16, 512)
    assert s["s5_ib2_out"] == (8, 8, 2048)
    s = zoo.build("deconv_rfa").graph.infer_shapes()
    assert s["merge"] == (32, 32, 192)
    assert s["s5_ib2_out"] == (8, 8, 2048)


# -- luma-only variants prune only the chroma branch -------------------------

_STRUCT_ATTRS = ("kind", "kernel", "stride", "padding", "dilation", "pool")


@pytest.mark.parametrize("full_id,luma_id,chroma_layers,merge_src,flex", [
    ("ssd_dct", "ssd_dct_y",
     {"cbcr", "cbcr_bn", "merge"}, "pool4", ()),
    ("ssd_lcrfa", "ssd_lcrfa_y",
     None, "y_cb3_out", ("s4_",)),
    ("ssd_lcrfa_thinner", "ssd_lcrfa_thinner_y",
     None, "y_cb3_out", ("s4_",)),
])
def test_luma_variant_is_full_minus_chroma(full_id, luma_id, chroma_layers,
                                           merge_src, flex):
    full = zoo.build(full_id).graph
    luma = zoo.build(luma_id).graph
    if chroma_layers is None:
        chroma_layers = {n for n in full.layers
                         if n.startswith("cbcr") or n == "merge"}
    assert set(full.layers) - chroma_layers == set(luma.layers)
    for name in luma.layers:
        a, b = full.layers[name], luma.layers[name]
        for attr in _STRUCT_ATTRS:
            assert getattr(a, attr) == getattr(b, attr), (name, attr)
        # widths may shrink where the residual stack inherits the thinner
        # trunk after the concat is removed
        if not (flex and name.startswith(flex)):
            assert a.out_channels == b.out_channels, name
        assert [merge_src if s == "merge" else s for s in a.inputs] == b.inputs


# -- cost orderings ----------------------------------------------------------


def _macs(arch):
    return flop_count(zoo.build(arch).graph)["total_macs"]


def test_frequency_domain_trunk_is_cheaper_than_rgb():
    assert _macs("ssd_dct") < _macs("ssd300_rgb")


def test_thinner_variant_is_cheaper():
    assert _macs("ssd_lcrfa_thinner") < _macs("ssd_lcrfa")
    assert _macs("ssd_lcrfa_thinner_y") < _macs("ssd_lcrfa_y")


def test_luma_only_is_cheaper_than_full():
    assert _macs("ssd_dct_y") < _macs("ssd_dct")
    assert _macs("ssd_lcrfa_y") < _macs("ssd_lcrfa")


def test_ssd300_mac_total_frozen():
    # the well-known cost of the 300x300 VGG single-shot detector
    assert _macs("ssd300_rgb") == 31_373_537_792


# -- misc --------------------------------------------------------------------


def test_unknown_architecture_rejected():
    with pytest.raises(ValueError):
        zoo.build("ssd_unknown")


def test_l2norm_flag():
    on = zoo.build("ssd_dct", l2norm=True)
    off = zoo.build("ssd_dct", l2norm=False)
    assert "conv4_3_norm" in on.graph.layers
    assert "conv4_3_norm" not in off.graph.layers
    assert on.heads[0].layer == "conv4_3_norm"
    assert off.heads[0].layer == "conv4_3_relu"
    # geometry unchanged either way
    assert zoo.head_geometry(off) == HEAD_GRID


def test_resnet_detectors_have_no_l2norm():
    for arch in ("ssd_resnet50_rgb", "ssd_lcrfa", "ssd_deconv_rfa"):
        g = zoo.build(arch).graph
        assert not any(s.kind == "l2norm" for s in g.layers.values())


@pytest.mark.parametrize("arch", ["ssd_dct_y", "vgg_dct_deconv"])
def test_seed_weights_cover_every_layer(arch):
    model = zoo.build(arch)
    weights = seed_weights(model.graph, seed=7)
    for spec in model.graph.layers.values():
        if spec.kind in ("conv", "deconv"):
            assert f"{spec.name}.kernel" in weights
            assert f"{spec.name}.bias" in weights
        elif spec.kind == "batchnorm":
            assert f"{spec.name}.bn_gamma" in weights
        elif spec.kind == "l2norm":
            assert f"{spec.name}.l2_scale" in weights

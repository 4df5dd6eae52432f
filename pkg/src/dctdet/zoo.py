"""Architecture builders: SSD-style detectors over RGB pixels or over
frequency-domain (blockwise DCT coefficient) inputs, plus the matching
classification backbones.

Detector family (300x300 RGB field of view; DCT variants consume the
coefficient planes of the same image, Y at (38,38,64) and chroma at 19x19):

- ssd300_rgb          VGG-16 trunk, the standard 6-head single-shot layout
- ssd_dct             VGG trunk with blocks 1-3 pruned; Y enters block 4,
                      batch-normalized CbCr joins by concat after pool4
- ssd_dct_y           ssd_dct without the chroma branch
- ssd_dct_deconv      Cb and Cr are upsampled by 2x2 stride-2 deconvolutions
                      and concatenated with Y in front of block 4
- ssd_resnet50_rgb    ResNet-50 trunk up to stage 5, then the usual extras
- ssd_lcrfa           receptive-field-aware ResNet variant fed by DCT planes;
                      strides drop to 1 where the feature grid must hold
- ssd_lcrfa_y         ssd_lcrfa without the chroma branch
- ssd_lcrfa_thinner   lcrfa with trunk widths {1024,512,512} -> {384,384,768}
                      and the chroma block 512 -> 256
- ssd_lcrfa_thinner_y thinner variant without the chroma branch
- ssd_deconv_rfa      chroma deconvolution in front of a receptive-field-aware
                      ResNet trunk

Each detector exposes six prediction heads on feature maps 38,19,10,5,3,1
squared with 4,6,6,6,4,4 default boxes per cell (8732 priors total).  Every
head carries a 3x3 localisation conv (boxes*4 channels) and a 3x3 confidence
conv (boxes*num_classes channels).

Classification backbones (suffix-free ids) share the trunks at a 256x256
field of view (Y at (32,32,64), chroma at 16x16) and end in a 1000-way 1x1
conv followed by global average pooling.
"""

from dataclasses import dataclass

from .graph import Graph

BOXES_PER_HEAD = (4, 6, 6, 6, 4, 4)

DETECTOR_IDS = (
    "ssd300_rgb", "ssd_dct", "ssd_dct_y", "ssd_dct_deconv",
    "ssd_resnet50_rgb", "ssd_lcrfa", "ssd_lcrfa_y", "ssd_lcrfa_thinner",
    "ssd_lcrfa_thinner_y", "ssd_deconv_rfa",
)
BACKBONE_IDS = (
    "vgg16", "vgg_dct", "vgg_dct_y", "vgg_dct_deconv", "resnet50",
    "lcrfa", "lcrfa_y", "lcrfa_thinner", "lcrfa_thinner_y", "deconv_rfa",
)
ARCHITECTURE_IDS = DETECTOR_IDS + BACKBONE_IDS


@dataclass(frozen=True)
class HeadSpec:
    layer: str            # feature layer the head reads
    boxes_per_cell: int


@dataclass
class BuiltModel:
    architecture: str
    graph: Graph
    input_specs: dict[str, tuple[int, int, int]]
    heads: list[HeadSpec]
    num_classes: int

    def head_geometry(self):
        return head_geometry(self)


def head_geometry(model):
    """[(feature H, feature W, boxes per cell)] for each prediction head."""
    shapes = model.graph.infer_shapes()
    out = []
    for head in model.heads:
        h, w, _ = shapes[head.layer]
        out.append((h, w, head.boxes_per_cell))
    return out


def num_priors(model):
    return sum(h * w * b for h, w, b in head_geometry(model))


# ---------------------------------------------------------------------------
# shared pieces


def _conv_relu(g, name, src, channels, kernel, stride=1, padding="same",
               dilation=1):
    g.add_conv(name, src, channels, kernel, stride=stride, padding=padding,
               dilation=dilation)
    return g.add_relu(name + "_relu", name)


def _vgg_block(g, prefix, src, n_convs, channels):
    out = src
    for i in range(1, n_convs + 1):
        out = _conv_relu(g, f"{prefix}_{i}", out, channels, 3)
    return out


def _vgg_tail(g, src, dilated_fc6):
    """conv5 block, pool5, and the convolutionalized fc6/fc7 pair."""
    out = _vgg_block(g, "conv5", src, 3, 512)
    if dilated_fc6:
        # detection keeps the 19x19 grid: 3x3 stride-1 pool, dilated fc6
        g.add_maxpool("pool5", out, 3, 1, padding="same")
        out = _conv_relu(g, "fc6", "pool5", 1024, 3, dilation=6)
    else:
        g.add_maxpool("pool5", out, 2, 2, padding="same")
        out = _conv_relu(g, "fc6", "pool5", 1024, 3)
    return _conv_relu(g, "fc7", out, 1024, 1)


def _ssd_extras(g, src):
    """conv6_1 .. conv9_2; returns the four extra head feature layers."""
    out = _conv_relu(g, "conv6_1", src, 256, 1)
    f3 = _conv_relu(g, "conv6_2", out, 512, 3, stride=2)
    out = _conv_relu(g, "conv7_1", f3, 128, 1)
    f4 = _conv_relu(g, "conv7_2", out, 256, 3, stride=2)
    out = _conv_relu(g, "conv8_1", f4, 128, 1)
    f5 = _conv_relu(g, "conv8_2", out, 256, 3, padding="valid")
    out = _conv_relu(g, "conv9_1", f5, 128, 1)
    f6 = _conv_relu(g, "conv9_2", out, 256, 3, padding="valid")
    return [f3, f4, f5, f6]


def _attach_heads(g, feats, num_classes):
    heads = []
    outputs = []
    for i, (feat, boxes) in enumerate(zip(feats, BOXES_PER_HEAD), 1):
        g.add_conv(f"head{i}_loc", feat, boxes * 4, 3)
        g.add_conv(f"head{i}_conf", feat, boxes * num_classes, 3)
        outputs += [f"head{i}_loc", f"head{i}_conf"]
        heads.append(HeadSpec(feat, boxes))
    g.outputs = outputs
    return heads


def _bottleneck(g, prefix, src, width, mid, kernel=3, stride=1,
                project=False):
    """ResNet-50 bottleneck: 1x1 reduce (carries the stride), kxk, 1x1
    expand; projection shortcut when the block opens a stage."""
    g.add_conv(f"{prefix}_a", src, mid, 1, stride=stride)
    g.add_batchnorm(f"{prefix}_a_bn", f"{prefix}_a")
    g.add_relu(f"{prefix}_a_relu", f"{prefix}_a_bn")
    g.add_conv(f"{prefix}_b", f"{prefix}_a_relu", mid, kernel)
    g.add_batchnorm(f"{prefix}_b_bn", f"{prefix}_b")
    g.add_relu(f"{prefix}_b_relu", f"{prefix}_b_bn")
    g.add_conv(f"{prefix}_c", f"{prefix}_b_relu", width, 1)
    g.add_batchnorm(f"{prefix}_c_bn", f"{prefix}_c")
    if project:
        g.add_conv(f"{prefix}_proj", src, width, 1, stride=stride)
        g.add_batchnorm(f"{prefix}_proj_bn", f"{prefix}_proj")
        shortcut = f"{prefix}_proj_bn"
    else:
        shortcut = src
    g.add_add(f"{prefix}_sum", [f"{prefix}_c_bn", shortcut])
    return g.add_relu(f"{prefix}_out", f"{prefix}_sum")


def _conv_block(g, prefix, src, width, kernel=3, stride=2):
    return _bottleneck(g, prefix, src, width, width // 4, kernel, stride,
                       project=True)


def _identity_block(g, prefix, src, width, kernel=3):
    return _bottleneck(g, prefix, src, width, width // 4, kernel, 1,
                       project=False)


def _identity_run(g, prefix, src, width, count, first_kernel=3):
    out = src
    for i in range(1, count + 1):
        k = first_kernel if i == 1 else 3
        out = _identity_block(g, f"{prefix}_ib{i}", out, width, k)
    return out


# ---------------------------------------------------------------------------
# VGG-family detectors


def _build_ssd300_rgb(num_classes, l2norm):
    g = Graph("ssd300_rgb")
    g.add_input("rgb", (300, 300, 3))
    out = _vgg_block(g, "conv1", "rgb", 2, 64)
    g.add_maxpool("pool1", out, 2, 2, padding="same")
    out = _vgg_block(g, "conv2", "pool1", 2, 128)
    g.add_maxpool("pool2", out, 2, 2, padding="same")
    out = _vgg_block(g, "conv3", "pool2", 3, 256)
    g.add_maxpool("pool3", out, 2, 2, padding="same")  # 75 -> 38 (ceil)
    out = _vgg_block(g, "conv4", "pool3", 3, 512)
    f1 = g.add_l2norm("conv4_3_norm", out) if l2norm else out
    g.add_maxpool("pool4", out, 2, 2, padding="same")
    f2 = _vgg_tail(g, "pool4", dilated_fc6=True)
    feats = [f1, f2] + _ssd_extras(g, f2)
    inputs = {"rgb": (300, 300, 3)}
    return g, inputs, feats


def _build_ssd_dct(num_classes, l2norm, with_chroma):
    g = Graph("ssd_dct" if with_chroma else "ssd_dct_y")
    g.add_input("y", (38, 38, 64))
    g.add_batchnorm("y_bn", "y")
    out = _conv_relu(g, "y_adapt", "y_bn", 256, 3)
    out = _vgg_block(g, "conv4", out, 3, 512)
    f1 = g.add_l2norm("conv4_3_norm", out) if l2norm else out
    g.add_maxpool("pool4", out, 2, 2, padding="same")  # 38 -> 19
    trunk = "pool4"
    inputs = {"y": (38, 38, 64)}
    if with_chroma:
        g.add_input("cbcr", (19, 19, 128))
        g.add_batchnorm("cbcr_bn", "cbcr")
        trunk = g.add_concat("merge", ["pool4", "cbcr_bn"])
        inputs["cbcr"] = (19, 19, 128)
    f2 = _vgg_tail(g, trunk, dilated_fc6=True)
    feats = [f1, f2] + _ssd_extras(g, f2)
    return g, inputs, feats


def _build_ssd_dct_deconv(num_classes, l2norm):
    g = Graph("ssd_dct_deconv")
    g.add_input("y", (38, 38, 64))
    g.add_input("cb", (19, 19, 64))
    g.add_input("cr", (19, 19, 64))
    g.add_deconv("cb_up", "cb", 64)
    g.add_deconv("cr_up", "cr", 64)
    g.add_concat("merge", ["y", "cb_up", "cr_up"])   # (38,38,192)
    g.add_batchnorm("merge_bn", "merge")
    out = _vgg_block(g, "conv4", "merge_bn", 3, 512)
    f1 = g.add_l2norm("conv4_3_norm", out) if l2norm else out
    g.add_maxpool("pool4", out, 2, 2, padding="same")
    f2 = _vgg_tail(g, "pool4", dilated_fc6=True)
    feats = [f1, f2] + _ssd_extras(g, f2)
    inputs = {"y": (38, 38, 64), "cb": (19, 19, 64), "cr": (19, 19, 64)}
    return g, inputs, feats


# ---------------------------------------------------------------------------
# ResNet-family detectors


def _resnet_stem(g, src):
    g.add_conv("conv1", src, 64, 7, stride=2)
    g.add_batchnorm("conv1_bn", "conv1")
    g.add_relu("conv1_relu", "conv1_bn")
    g.add_maxpool("pool1", "conv1_relu", 3, 2, padding="same")
    return "pool1"


def _build_ssd_resnet50_rgb(num_classes):
    g = Graph("ssd_resnet50_rgb")
    g.add_input("rgb", (300, 300, 3))
    out = _resnet_stem(g, "rgb")                      # 300 -> 75
    out = _conv_block(g, "s2_cb", out, 256, stride=1)
    out = _identity_run(g, "s2", out, 256, 2)
    out = _conv_block(g, "s3_cb", out, 512, stride=2)  # 75 -> 38
    f1 = _identity_run(g, "s3", out, 512, 3)
    out = _conv_block(g, "s4_cb", f1, 1024, stride=2)  # 38 -> 19
    out = _identity_run(g, "s4", out, 1024, 5)
    out = _conv_block(g, "s5_cb", out, 2048, stride=1)  # grid held at 19
    f2 = _identity_run(g, "s5", out, 2048, 2)
    feats = [f1, f2] + _ssd_extras(g, f2)
    return g, {"rgb": (300, 300, 3)}, feats


def _lcrfa_widths(thinner):
    # trunk conv-block widths {front, mid, late} and the chroma block width
    return ((384, 384, 768, 256) if thinner else (1024, 512, 512, 512))


def _build_ssd_lcrfa(num_classes, thinner, with_chroma):
    name = "ssd_lcrfa_thinner" if thinner else "ssd_lcrfa"
    if not with_chroma:
        name += "_y"
    w_front, w_mid, w_late, w_chroma = _lcrfa_widths(thinner)
    g = Graph(name)
    g.add_input("y", (38, 38, 64))
    g.add_batchnorm("y_bn", "y")
    out = _conv_block(g, "y_cb1", "y_bn", w_front, kernel=1, stride=1)
    out = _identity_run(g, "y_s1", out, w_front, 2, first_kernel=2)
    out = _conv_block(g, "y_cb2", out, w_mid, stride=1)  # grid held at 38
    f1 = _identity_run(g, "y_s2", out, w_mid, 3)
    out = _conv_block(g, "y_cb3", f1, w_late, stride=2)  # 38 -> 19
    trunk = out
    inputs = {"y": (38, 38, 64)}
    if with_chroma:
        g.add_input("cbcr", (19, 19, 128))
        g.add_batchnorm("cbcr_bn", "cbcr")
        cb = _conv_block(g, "cbcr_cb", "cbcr_bn", w_chroma, kernel=1,
                         stride=1)
        trunk = g.add_concat("merge", [out, cb])
        inputs["cbcr"] = (19, 19, 128)
    width = (w_late + w_chroma) if with_chroma else w_late
    out = _identity_run(g, "s4", trunk, width, 5)
    out = _conv_block(g, "s5_cb", out, 2048, stride=1)   # grid held at 19
    f2 = _identity_run(g, "s5", out, 2048, 2)
    feats = [f1, f2] + _ssd_extras(g, f2)
    return g, inputs, feats


def _build_ssd_deconv_rfa(num_classes):
    g = Graph("ssd_deconv_rfa")
    g.add_input("y", (38, 38, 64))
    g.add_input("cb", (19, 19, 64))
    g.add_input("cr", (19, 19, 64))
    g.add_deconv("cb_up", "cb", 64)
    g.add_deconv("cr_up", "cr", 64)
    g.add_concat("merge", ["y", "cb_up", "cr_up"])   # (38,38,192)
    out = _conv_block(g, "cb1", "merge", 1024, kernel=1, stride=1)
    out = _identity_run(g, "s1", out, 1024, 2, first_kernel=2)
    out = _conv_block(g, "s3_cb", out, 512, stride=1)  # grid held at 38
    f1 = _identity_run(g, "s3", out, 512, 3)
    out = _conv_block(g, "s4_cb", f1, 1024, stride=2)  # 38 -> 19
    out = _identity_run(g, "s4", out, 1024, 5)
    out = _conv_block(g, "s5_cb", out, 2048, stride=1)
    f2 = _identity_run(g, "s5", out, 2048, 2)
    feats = [f1, f2] + _ssd_extras(g, f2)
    inputs = {"y": (38, 38, 64), "cb": (19, 19, 64), "cr": (19, 19, 64)}
    return g, inputs, feats


# ---------------------------------------------------------------------------
# classification backbones (256x256 field of view, 1000-way output)


def _classifier_output(g, src):
    g.add_conv("fc1000", src, 1000, 1)
    g.add_global_avg_pool("logits", "fc1000")
    g.outputs = ["logits"]


def _build_vgg16():
    g = Graph("vgg16")
    g.add_input("rgb", (256, 256, 3))
    out = _vgg_block(g, "conv1", "rgb", 2, 64)
    g.add_maxpool("pool1", out, 2, 2, padding="same")
    out = _vgg_block(g, "conv2", "pool1", 2, 128)
    g.add_maxpool("pool2", out, 2, 2, padding="same")
    out = _vgg_block(g, "conv3", "pool2", 3, 256)
    g.add_maxpool("pool3", out, 2, 2, padding="same")
    out = _vgg_block(g, "conv4", "pool3", 3, 512)
    g.add_maxpool("pool4", out, 2, 2, padding="same")
    out = _vgg_tail(g, "pool4", dilated_fc6=False)
    _classifier_output(g, out)
    return g, {"rgb": (256, 256, 3)}


def _build_vgg_dct(with_chroma):
    g = Graph("vgg_dct" if with_chroma else "vgg_dct_y")
    g.add_input("y", (32, 32, 64))
    g.add_batchnorm("y_bn", "y")
    out = _conv_relu(g, "y_adapt", "y_bn", 256, 3)
    out = _vgg_block(g, "conv4", out, 3, 512)
    g.add_maxpool("pool4", out, 2, 2, padding="same")  # 32 -> 16
    trunk = "pool4"
    inputs = {"y": (32, 32, 64)}
    if with_chroma:
        g.add_input("cbcr", (16, 16, 128))
        g.add_batchnorm("cbcr_bn", "cbcr")
        trunk = g.add_concat("merge", ["pool4", "cbcr_bn"])
        inputs["cbcr"] = (16, 16, 128)
    out = _vgg_tail(g, trunk, dilated_fc6=False)
    _classifier_output(g, out)
    return g, inputs


def _build_vgg_dct_deconv():
    g = Graph("vgg_dct_deconv")
    g.add_input("y", (32, 32, 64))
    g.add_input("cb", (16, 16, 64))
    g.add_input("cr", (16, 16, 64))
    g.add_deconv("cb_up", "cb", 64)
    g.add_deconv("cr_up", "cr", 64)
    g.add_concat("merge", ["y", "cb_up", "cr_up"])
    g.add_batchnorm("merge_bn", "merge")
    out = _vgg_block(g, "conv4", "merge_bn", 3, 512)
    g.add_maxpool("pool4", out, 2, 2, padding="same")
    out = _vgg_tail(g, "pool4", dilated_fc6=False)
    _classifier_output(g, out)
    inputs = {"y": (32, 32, 64), "cb": (16, 16, 64), "cr": (16, 16, 64)}
    return g, inputs


def _build_resnet50():
    g = Graph("resnet50")
    g.add_input("rgb", (256, 256, 3))
    out = _resnet_stem(g, "rgb")                       # 256 -> 64
    out = _conv_block(g, "s2_cb", out, 256, stride=1)
    out = _identity_run(g, "s2", out, 256, 2)
    out = _conv_block(g, "s3_cb", out, 512, stride=2)   # -> 32
    out = _identity_run(g, "s3", out, 512, 3)
    out = _conv_block(g, "s4_cb", out, 1024, stride=2)  # -> 16
    out = _identity_run(g, "s4", out, 1024, 5)
    out = _conv_block(g, "s5_cb", out, 2048, stride=2)  # -> 8
    out = _identity_run(g, "s5", out, 2048, 2)
    _classifier_output(g, out)
    return g, {"rgb": (256, 256, 3)}


def _build_lcrfa(thinner, with_chroma):
    name = "lcrfa_thinner" if thinner else "lcrfa"
    if not with_chroma:
        name += "_y"
    w_front, w_mid, w_late, w_chroma = _lcrfa_widths(thinner)
    g = Graph(name)
    g.add_input("y", (32, 32, 64))
    g.add_batchnorm("y_bn", "y")
    out = _conv_block(g, "y_cb1", "y_bn", w_front, kernel=1, stride=1)
    out = _identity_run(g, "y_s1", out, w_front, 2, first_kernel=2)
    out = _conv_block(g, "y_cb2", out, w_mid, stride=1)
    out = _identity_run(g, "y_s2", out, w_mid, 3)
    out = _conv_block(g, "y_cb3", out, w_late, stride=2)  # 32 -> 16
    trunk = out
    inputs = {"y": (32, 32, 64)}
    if with_chroma:
        g.add_input("cbcr", (16, 16, 128))
        g.add_batchnorm("cbcr_bn", "cbcr")
        cb = _conv_block(g, "cbcr_cb", "cbcr_bn", w_chroma, kernel=1,
                         stride=1)
        trunk = g.add_concat("merge", [out, cb])
        inputs["cbcr"] = (16, 16, 128)
    width = (w_late + w_chroma) if with_chroma else w_late
    out = _identity_run(g, "s4", trunk, width, 5)
    out = _conv_block(g, "s5_cb", out, 2048, stride=2)    # 16 -> 8
    out = _identity_run(g, "s5", out, 2048, 2)
    _classifier_output(g, out)
    return g, inputs


def _build_deconv_rfa():
    g = Graph("deconv_rfa")
    g.add_input("y", (32, 32, 64))
    g.add_input("cb", (16, 16, 64))
    g.add_input("cr", (16, 16, 64))
    g.add_deconv("cb_up", "cb", 64)
    g.add_deconv("cr_up", "cr", 64)
    g.add_concat("merge", ["y", "cb_up", "cr_up"])
    out = _conv_block(g, "cb1", "merge", 1024, kernel=1, stride=1)
    out = _identity_run(g, "s1", out, 1024, 2, first_kernel=2)
    out = _conv_block(g, "s3_cb", out, 512, stride=1)
    out = _identity_run(g, "s3", out, 512, 3)
    out = _conv_block(g, "s4_cb", out, 1024, stride=2)  # 32 -> 16
    out = _identity_run(g, "s4", out, 1024, 5)
    out = _conv_block(g, "s5_cb", out, 2048, stride=2)  # 16 -> 8
    out = _identity_run(g, "s5", out, 2048, 2)
    _classifier_output(g, out)
    inputs = {"y": (32, 32, 64), "cb": (16, 16, 64), "cr": (16, 16, 64)}
    return g, inputs


# ---------------------------------------------------------------------------
# entry point


def build(architecture, num_classes=21, l2norm=None):
    """Build an architecture by id.

    num_classes applies to detectors (confidence channels per box; class 0 is
    background).  l2norm toggles the feature normalisation in front of the
    first head of the VGG-family detectors (default on, matching the
    single-shot reference design); ResNet-family detectors never use it.
    """
    arch = architecture.lower()
    if arch in BACKBONE_IDS:
        builders = {
            "vgg16": _build_vgg16,
            "vgg_dct": lambda: _build_vgg_dct(True),
            "vgg_dct_y": lambda: _build_vgg_dct(False),
            "vgg_dct_deconv": _build_vgg_dct_deconv,
            "resnet50": _build_resnet50,
            "lcrfa": lambda: _build_lcrfa(False, True),
            "lcrfa_y": lambda: _build_lcrfa(False, False),
            "lcrfa_thinner": lambda: _build_lcrfa(True, True),
            "lcrfa_thinner_y": lambda: _build_lcrfa(True, False),
            "deconv_rfa": _build_deconv_rfa,
        }
        g, inputs = builders[arch]()
        return BuiltModel(arch, g, inputs, [], 1000)
    if arch not in DETECTOR_IDS:
        raise ValueError(f"unknown architecture {architecture!r}")
    use_l2 = l2norm if l2norm is not None else arch.startswith(
        ("ssd300", "ssd_dct"))
    if arch == "ssd300_rgb":
        g, inputs, feats = _build_ssd300_rgb(num_classes, use_l2)
    elif arch == "ssd_dct":
        g, inputs, feats = _build_ssd_dct(num_classes, use_l2, True)
    elif arch == "ssd_dct_y":
        g, inputs, feats = _build_ssd_dct(num_classes, use_l2, False)
    elif arch == "ssd_dct_deconv":
        g, inputs, feats = _build_ssd_dct_deconv(num_classes, use_l2)
    elif arch == "ssd_resnet50_rgb":
        g, inputs, feats = _build_ssd_resnet50_rgb(num_classes)
    elif arch == "ssd_lcrfa":
        g, inputs, feats = _build_ssd_lcrfa(num_classes, False, True)
    elif arch == "ssd_lcrfa_y":
        g, inputs, feats = _build_ssd_lcrfa(num_classes, False, False)
    elif arch == "ssd_lcrfa_thinner":
        g, inputs, feats = _build_ssd_lcrfa(num_classes, True, True)
    elif arch == "ssd_lcrfa_thinner_y":
        g, inputs, feats = _build_ssd_lcrfa(num_classes, True, False)
    else:
        g, inputs, feats = _build_ssd_deconv_rfa(num_classes)
    heads = _attach_heads(g, feats, num_classes)
    return BuiltModel(arch, g, inputs, heads, num_classes)


def input_element_count(model):
    """Total scalars fed to the network per image."""
    return sum(h * w * c for h, w, c in model.input_specs.values())

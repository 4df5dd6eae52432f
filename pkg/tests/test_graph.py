"""Inference engine tests: layer kernels against naive oracles, shape
propagation, execution determinism, the static cost model, weight seeding,
and the WTS1 container."""

import math

import numpy as np
import pytest

from dctdet import graph as g


# ---------------------------------------------------------------------------
# naive convolution oracle (pure loops, float64)

def conv_oracle(x, kernel, bias, stride=1, padding="same", dilation=1):
    kh, kw, cin, cout = kernel.shape
    kh_eff = (kh - 1) * dilation + 1
    kw_eff = (kw - 1) * dilation + 1
    h, w, _ = x.shape
    if padding == "same":
        oh = math.ceil(h / stride)
        ow = math.ceil(w / stride)
        th = max((oh - 1) * stride + kh_eff - h, 0)
        tw = max((ow - 1) * stride + kw_eff - w, 0)
        x = np.pad(x, ((th // 2, th - th // 2), (tw // 2, tw - tw // 2),
                       (0, 0)))
    else:
        oh = (h - kh_eff) // stride + 1
        ow = (w - kw_eff) // stride + 1
    out = np.zeros((oh, ow, cout))
    for i in range(oh):
        for j in range(ow):
            for co in range(cout):
                acc = bias[co]
                for di in range(kh):
                    for dj in range(kw):
                        for ci in range(cin):
                            acc += (x[i * stride + di * dilation,
                                      j * stride + dj * dilation, ci]
                                    * kernel[di, dj, ci, co])
                out[i, j, co] = acc
    return out


# ---------------------------------------------------------------------------
# conv

def test_conv_identity_1x1():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(6, 5, 4))
    kernel = np.eye(4).reshape(1, 1, 4, 4)
    out = g.conv2d(x, kernel, np.zeros(4))
    assert np.allclose(out, x, atol=1e-12)


def test_conv_all_ones_valid():
    x = np.ones((5, 5, 1))
    kernel = np.ones((3, 3, 1, 1))
    out = g.conv2d(x, kernel, np.zeros(1), padding="valid")
    assert out.shape == (3, 3, 1)
    assert np.all(out == 9.0)


@pytest.mark.parametrize("stride,padding,dilation,shape", [
    (1, "same", 1, (7, 5, 3)),
    (2, "same", 1, (7, 5, 3)),
    (2, "same", 1, (8, 6, 2)),
    (1, "valid", 1, (7, 7, 2)),
    (2, "valid", 1, (9, 9, 2)),
    (1, "same", 2, (9, 8, 2)),
    (1, "same", 6, (19, 19, 4)),
])
def test_conv_matches_oracle(stride, padding, dilation, shape):
    rng = np.random.default_rng(hash((stride, padding, dilation)) % 2**32)
    x = rng.normal(size=shape)
    kernel = rng.normal(size=(3, 3, shape[2], 5))
    bias = rng.normal(size=5)
    got = g.conv2d(x, kernel, bias, stride, padding, dilation)
    want = conv_oracle(x, kernel, bias, stride, padding, dilation)
    assert got.shape == want.shape
    assert np.max(np.abs(got - want)) < 1e-9


def test_conv_rejects_channel_mismatch():
    with pytest.raises(g.GraphError, match="channels"):
        g.conv2d(np.zeros((4, 4, 3)), np.zeros((1, 1, 2, 2)), np.zeros(2))


def test_conv_shape_example_38x38():
    graph = g.Graph()
    graph.add_input("y", (38, 38, 64))
    graph.add_conv("c", "y", 256, 3)
    assert graph.infer_shapes()["c"] == (38, 38, 256)


# ---------------------------------------------------------------------------
# deconv

def test_deconv_doubles_extent():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(19, 19, 64)).astype(np.float32)
    kernel = rng.normal(size=(2, 2, 64, 64)).astype(np.float32)
    out = g.deconv2d(x, kernel, np.zeros(64, dtype=np.float32))
    assert out.shape == (38, 38, 64)


def test_deconv_single_pixel_paints_patch():
    x = np.full((1, 1, 1), 7.0)
    kernel = np.ones((2, 2, 1, 1))
    out = g.deconv2d(x, kernel, np.zeros(1))
    assert out.shape == (2, 2, 1)
    assert np.all(out == 7.0)


def test_deconv_placement():
    # one input pixel at (1,0) must paint rows 2..3, cols 0..1 only
    x = np.zeros((2, 2, 1))
    x[1, 0, 0] = 1.0
    kernel = np.arange(4, dtype=np.float64).reshape(2, 2, 1, 1)
    out = g.deconv2d(x, kernel, np.zeros(1))[..., 0]
    expect = np.zeros((4, 4))
    expect[2:4, 0:2] = [[0, 1], [2, 3]]
    assert np.array_equal(out, expect)


def test_deconv_is_adjoint_of_stride2_conv():
    rng = np.random.default_rng(2)
    for _ in range(5):
        x = rng.normal(size=(6, 4, 3))
        kernel = rng.normal(size=(2, 2, 3, 5))
        y = rng.normal(size=(3, 2, 5))
        conv_x = g.conv2d(x, kernel, np.zeros(5), stride=2, padding="valid")
        # deconv2d reads the same array as (kh, kw, cout, cin)
        deconv_y = g.deconv2d(y, kernel, np.zeros(3))
        lhs = float(np.sum(conv_x * y))
        rhs = float(np.sum(x * deconv_y))
        assert abs(lhs - rhs) <= 1e-6 * max(1.0, abs(lhs))


def test_deconv_rejects_other_kernels():
    graph = g.Graph()
    graph.add_input("x", (4, 4, 2))
    with pytest.raises(g.GraphError, match="kernel 2 stride 2"):
        graph.add_deconv("d", "x", 2, kernel=3)


# ---------------------------------------------------------------------------
# batchnorm, relu, maxpool, concat, add, l2norm, gap

def test_batchnorm_identity_and_centering():
    x = np.arange(24, dtype=np.float64).reshape(2, 3, 4)
    ones, zeros = np.ones(4), np.zeros(4)
    out = g.batchnorm(x, ones, zeros, zeros, ones, epsilon=0.0)
    assert np.allclose(out, x)
    x = np.full((1, 1, 1), 10.0)
    out = g.batchnorm(x, np.array([5.0]), np.array([3.0]), np.array([10.0]),
                      np.array([2.0]))
    assert np.allclose(out, 3.0)


def test_batchnorm_matches_elementwise_oracle():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 5, 6))
    gamma, beta = rng.normal(size=6), rng.normal(size=6)
    mean, var = rng.normal(size=6), rng.uniform(0.1, 2.0, size=6)
    eps = 1e-5
    got = g.batchnorm(x, gamma, beta, mean, var, eps)
    want = np.empty_like(x)
    for i in range(4):
        for j in range(5):
            for c in range(6):
                want[i, j, c] = (gamma[c] * (x[i, j, c] - mean[c])
                                 / math.sqrt(var[c] + eps) + beta[c])
    assert np.max(np.abs(got - want)) < 1e-6


def test_batchnorm_rejects_length_mismatch():
    with pytest.raises(g.GraphError, match="length"):
        g.batchnorm(np.zeros((2, 2, 3)), np.ones(2), np.zeros(2),
                    np.zeros(2), np.ones(2))


def test_relu():
    x = np.array([[[-1.0, 0.0, 2.0]]])
    assert np.array_equal(g.relu(x), [[[0.0, 0.0, 2.0]]])


def test_maxpool_valid():
    x = np.arange(16, dtype=np.float64).reshape(4, 4, 1)
    out = g.maxpool(x, 2, 2)
    assert out.shape == (2, 2, 1)
    assert np.array_equal(out[..., 0], [[5, 7], [13, 15]])


def test_maxpool_same_ceil_mode():
    # 5 -> ceil(5/2) = 3; the last window sees only real samples
    x = np.arange(25, dtype=np.float64).reshape(5, 5, 1)
    out = g.maxpool(x, 2, 2, padding="same")
    assert out.shape == (3, 3, 1)
    assert np.array_equal(out[..., 0], [[6, 8, 9], [16, 18, 19], [21, 23, 24]])
    assert np.all(np.isfinite(out))


def test_maxpool_3x3_stride1_same_preserves_extent():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(19, 19, 2))
    out = g.maxpool(x, 3, 1, padding="same")
    assert out.shape == (19, 19, 2)


def test_maxpool_rejects_oversized_window():
    with pytest.raises(g.GraphError, match="pool"):
        g.maxpool(np.zeros((2, 2, 1)), 3, 1)


def test_concat_shapes_and_order():
    a = np.full((38, 38, 64), 1.0)
    b = np.full((38, 38, 64), 2.0)
    c = np.full((38, 38, 64), 3.0)
    out = g.concat([a, b, c])
    assert out.shape == (38, 38, 192)
    assert np.all(out[..., :64] == 1.0)
    assert np.all(out[..., 64:128] == 2.0)
    assert np.all(out[..., 128:] == 3.0)


def test_concat_rejects_extent_mismatch():
    with pytest.raises(g.GraphError, match="extent"):
        g.concat([np.zeros((2, 2, 1)), np.zeros((3, 2, 1))])


def test_add_sums_inputs():
    a = np.full((2, 2, 2), 1.5)
    b = np.full((2, 2, 2), 2.0)
    assert np.all(g.add([a, b]) == 3.5)


def test_l2norm_unit_vectors_times_scale():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 4, 8)).astype(np.float32)
    scale = np.full(8, 20.0, dtype=np.float32)
    out = g.l2norm(x, scale)
    norms = np.sqrt(np.sum(out.astype(np.float64) ** 2, axis=2))
    assert np.max(np.abs(norms - 20.0)) < 1e-3
    assert g.l2norm(np.zeros((2, 2, 4), dtype=np.float32), scale[:4]).max() == 0


def test_global_avg_pool_constant():
    out = g.global_avg_pool(np.full((4, 4, 3), 3.0))
    assert out.shape == (1, 1, 3)
    assert np.all(out == 3.0)


# ---------------------------------------------------------------------------
# graph construction and shape propagation

def _small_graph():
    graph = g.Graph("tiny")
    graph.add_input("x", (9, 9, 3))
    graph.add_conv("c1", "x", 8, 3, stride=2)
    graph.add_batchnorm("bn1", "c1")
    graph.add_relu("r1", "bn1")
    graph.add_maxpool("p1", "r1", 2, 2, padding="same")
    graph.add_conv("c2", "p1", 4, 1)
    graph.add_l2norm("n2", "c2")
    graph.add_global_avg_pool("gap", "n2")
    graph.outputs = ["gap", "n2"]
    return graph


def test_shape_propagation_small_graph():
    shapes = _small_graph().infer_shapes()
    assert shapes["c1"] == (5, 5, 8)
    assert shapes["p1"] == (3, 3, 8)
    assert shapes["n2"] == (3, 3, 4)
    assert shapes["gap"] == (1, 1, 4)


def test_graph_rejects_unknown_input_reference():
    graph = g.Graph()
    with pytest.raises(g.GraphError, match="unknown input"):
        graph.add_relu("r", "ghost")


def test_graph_rejects_duplicate_names():
    graph = g.Graph()
    graph.add_input("x", (2, 2, 1))
    with pytest.raises(g.GraphError, match="duplicate"):
        graph.add_input("x", (2, 2, 1))


def test_shape_error_names_offending_layer():
    graph = g.Graph()
    graph.add_input("a", (2, 2, 1))
    graph.add_input("b", (3, 2, 1))
    graph.add_concat("cat", ["a", "b"])
    with pytest.raises(g.GraphError, match="cat"):
        graph.infer_shapes()


# ---------------------------------------------------------------------------
# execution

def test_run_graph_identity():
    graph = g.Graph()
    graph.add_input("x", (2, 3, 1))
    graph.add_relu("out", "x")
    x = np.abs(np.random.default_rng(6).normal(size=(2, 3, 1))).astype(np.float32)
    out = g.run_graph(graph, {}, {"x": x})
    assert np.array_equal(out["out"], x)


def test_run_graph_missing_input():
    graph = g.Graph()
    graph.add_input("x", (2, 2, 1))
    with pytest.raises(g.GraphError, match="missing graph input"):
        g.run_graph(graph, {}, {})


def test_run_graph_rejects_wrong_input_shape():
    graph = g.Graph()
    graph.add_input("x", (2, 2, 1))
    with pytest.raises(g.GraphError, match="expected input shape"):
        g.run_graph(graph, {}, {"x": np.zeros((3, 2, 1), dtype=np.float32)})


def test_run_graph_deterministic_and_finite():
    graph = _small_graph()
    weights = g.seed_weights(graph, 42)
    x = np.random.default_rng(7).normal(size=(9, 9, 3)).astype(np.float32)
    out1 = g.run_graph(graph, weights, {"x": x})
    out2 = g.run_graph(graph, weights, {"x": x})
    for name in graph.outputs:
        assert out1[name].tobytes() == out2[name].tobytes()
        assert np.all(np.isfinite(out1[name]))


def test_run_graph_reports_missing_weight():
    graph = g.Graph()
    graph.add_input("x", (4, 4, 2))
    graph.add_conv("c", "x", 3, 3)
    with pytest.raises(g.GraphError, match="c.kernel"):
        g.run_graph(graph, {}, {"x": np.zeros((4, 4, 2), dtype=np.float32)})


# ---------------------------------------------------------------------------
# static cost model

def test_flop_count_conv_example():
    graph = g.Graph()
    graph.add_input("y", (38, 38, 64))
    graph.add_conv("c", "y", 128, 3)
    report = g.flop_count(graph)
    assert report["per_layer"]["c"]["macs"] == 106_463_232


def test_flop_count_empty_graph():
    assert g.flop_count(g.Graph())["total_macs"] == 0


def test_flop_count_deconv_uses_input_extent():
    graph = g.Graph()
    graph.add_input("cb", (19, 19, 64))
    graph.add_deconv("up", "cb", 64)
    report = g.flop_count(graph)
    assert report["per_layer"]["up"]["macs"] == 4 * 64 * 64 * 19 * 19


def test_flop_count_elementwise_kinds_have_no_macs():
    graph = _small_graph()
    report = g.flop_count(graph)
    for name in ("bn1", "r1", "p1", "n2", "gap"):
        assert report["per_layer"][name]["macs"] == 0
        assert report["per_layer"][name]["elementwise"] > 0
    assert report["total_macs"] == (report["per_layer"]["c1"]["macs"]
                                    + report["per_layer"]["c2"]["macs"])


# ---------------------------------------------------------------------------
# weight seeding

def test_seed_weights_deterministic():
    graph = _small_graph()
    w1 = g.seed_weights(graph, 9)
    w2 = g.seed_weights(graph, 9)
    assert sorted(w1) == sorted(w2)
    for key in w1:
        assert w1[key].tobytes() == w2[key].tobytes()
    w3 = g.seed_weights(graph, 10)
    assert w1["c1.kernel"].tobytes() != w3["c1.kernel"].tobytes()


def test_seed_weights_identity_norm_layers():
    graph = _small_graph()
    w = g.seed_weights(graph, 0)
    assert np.all(w["bn1.bn_gamma"] == 1) and np.all(w["bn1.bn_beta"] == 0)
    assert np.all(w["bn1.bn_mean"] == 0) and np.all(w["bn1.bn_var"] == 1)
    assert np.all(w["n2.l2_scale"] == 20.0)
    assert np.all(w["c1.bias"] == 0)


def test_seed_weights_fan_in_variance():
    graph = g.Graph()
    graph.add_input("x", (8, 8, 64))
    graph.add_conv("c", "x", 32, 3)
    target = 2.0 / (9 * 64)
    variances = [np.var(g.seed_weights(graph, s)["c.kernel"])
                 for s in range(10)]
    mean_var = float(np.mean(variances))
    assert abs(mean_var - target) < 0.2 * target


# ---------------------------------------------------------------------------
# WTS1 container

def test_weights_roundtrip(tmp_path):
    graph = _small_graph()
    w = g.seed_weights(graph, 13)
    path = tmp_path / "w.wts"
    g.save_weights(path, w)
    loaded = g.load_weights(path)
    assert sorted(loaded) == sorted(w)
    for key in w:
        assert loaded[key].dtype == np.float32
        assert np.array_equal(loaded[key], w[key])


def test_weights_header_layout(tmp_path):
    path = tmp_path / "one.wts"
    g.save_weights(path, {"a.bias": np.zeros(2, dtype=np.float32)})
    blob = path.read_bytes()
    assert blob[:4] == b"WTS1"
    assert int.from_bytes(blob[4:8], "little") == 1
    assert int.from_bytes(blob[8:10], "little") == 6  # name length
    assert blob[10:16] == b"a.bias"
    assert blob[16] == 1  # rank
    assert int.from_bytes(blob[17:21], "little") == 2
    assert len(blob) == 21 + 8


def test_weights_rejects_corruption(tmp_path):
    path = tmp_path / "w.wts"
    g.save_weights(path, {"k": np.ones((2, 2), dtype=np.float32)})
    blob = path.read_bytes()
    path.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ValueError, match="magic"):
        g.load_weights(path)
    path.write_bytes(blob[:-3])
    with pytest.raises(ValueError, match="truncated"):
        g.load_weights(path)
    path.write_bytes(blob + b"\x01")
    with pytest.raises(ValueError, match="trailing"):
        g.load_weights(path)

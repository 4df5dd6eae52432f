"""Forward-only inference engine over single-image HWC float32 tensors.

A Graph is a DAG of LayerSpecs built through the add_* helpers (layers must
be added producers-first, which makes insertion order a valid execution
order).  Shapes are propagated statically; execution is deterministic:
identical inputs and weights give bit-identical outputs regardless of any
caller-side parallelism, because each layer reduces in a fixed order.

Weight layouts: conv kernels are (kh, kw, cin, cout); deconv kernels are
(kh, kw, cout, cin); per-channel vectors are 1-D.  Weight dictionaries are
flat, keyed "<layer>.kernel", "<layer>.bias", "<layer>.bn_gamma",
"<layer>.bn_beta", "<layer>.bn_mean", "<layer>.bn_var", "<layer>.l2_scale".
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class GraphError(Exception):
    """Graph construction, shape-propagation, or execution failure."""


LAYER_KINDS = ("input", "conv", "deconv", "batchnorm", "relu", "maxpool",
               "concat", "add", "l2norm", "global_avg_pool")


@dataclass
class LayerSpec:
    name: str
    kind: str
    inputs: list[str] = field(default_factory=list)
    # conv / deconv
    out_channels: int | None = None
    kernel: tuple[int, int] | None = None
    stride: int = 1
    padding: str = "same"
    dilation: int = 1
    # maxpool
    pool: int | None = None
    # batchnorm
    epsilon: float = 1e-5
    # l2norm
    scale_init: float = 20.0
    # input
    shape: tuple[int, int, int] | None = None


class Graph:
    def __init__(self, name="graph"):
        self.name = name
        self.layers: dict[str, LayerSpec] = {}
        self.outputs: list[str] = []

    # -- construction -------------------------------------------------

    def _register(self, spec):
        if spec.name in self.layers:
            raise GraphError(f"duplicate layer name {spec.name!r}")
        for src in spec.inputs:
            if src not in self.layers:
                raise GraphError(
                    f"layer {spec.name!r} references unknown input {src!r}")
        self.layers[spec.name] = spec
        return spec.name

    def add_input(self, name, shape):
        h, w, c = shape
        return self._register(LayerSpec(name, "input", shape=(h, w, c)))

    def add_conv(self, name, src, out_channels, kernel, stride=1,
                 padding="same", dilation=1):
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        if padding not in ("same", "valid"):
            raise GraphError(f"layer {name!r}: unknown padding {padding!r}")
        return self._register(LayerSpec(
            name, "conv", [src], out_channels=out_channels, kernel=(kh, kw),
            stride=stride, padding=padding, dilation=dilation))

    def add_deconv(self, name, src, out_channels, kernel=2, stride=2):
        if kernel != 2 or stride != 2:
            raise GraphError(
                f"layer {name!r}: deconv supports kernel 2 stride 2 only")
        return self._register(LayerSpec(
            name, "deconv", [src], out_channels=out_channels,
            kernel=(2, 2), stride=2))

    def add_batchnorm(self, name, src, epsilon=1e-5):
        return self._register(LayerSpec(name, "batchnorm", [src],
                                        epsilon=epsilon))

    def add_relu(self, name, src):
        return self._register(LayerSpec(name, "relu", [src]))

    def add_maxpool(self, name, src, pool, stride=None, padding="valid"):
        if padding not in ("same", "valid"):
            raise GraphError(f"layer {name!r}: unknown padding {padding!r}")
        return self._register(LayerSpec(
            name, "maxpool", [src], pool=pool,
            stride=pool if stride is None else stride, padding=padding))

    def add_concat(self, name, srcs):
        if len(srcs) < 2:
            raise GraphError(f"layer {name!r}: concat needs >= 2 inputs")
        return self._register(LayerSpec(name, "concat", list(srcs)))

    def add_add(self, name, srcs):
        if len(srcs) < 2:
            raise GraphError(f"layer {name!r}: add needs >= 2 inputs")
        return self._register(LayerSpec(name, "add", list(srcs)))

    def add_l2norm(self, name, src, scale_init=20.0):
        return self._register(LayerSpec(name, "l2norm", [src],
                                        scale_init=scale_init))

    def add_global_avg_pool(self, name, src):
        return self._register(LayerSpec(name, "global_avg_pool", [src]))

    # -- queries --------------------------------------------------------

    def input_names(self):
        return [s.name for s in self.layers.values() if s.kind == "input"]

    def sinks(self):
        consumed = {src for s in self.layers.values() for src in s.inputs}
        return [n for n in self.layers if n not in consumed]

    def output_names(self):
        return list(self.outputs) if self.outputs else self.sinks()

    # -- static shape propagation ----------------------------------------

    def infer_shapes(self):
        shapes: dict[str, tuple[int, int, int]] = {}
        for spec in self.layers.values():
            shapes[spec.name] = _propagate(spec, [shapes[s] for s in spec.inputs])
        return shapes


def _conv_out_len(size, k, stride, dilation, padding, name):
    k_eff = (k - 1) * dilation + 1
    if padding == "same":
        return -(-size // stride)
    out = (size - k_eff) // stride + 1
    if out <= 0:
        raise GraphError(
            f"layer {name!r}: kernel {k_eff} does not fit input extent {size}")
    return out


def _same_pad(size, k, stride, dilation):
    k_eff = (k - 1) * dilation + 1
    out = -(-size // stride)
    total = max((out - 1) * stride + k_eff - size, 0)
    return total // 2, total - total // 2  # extra pad goes bottom/right


def _propagate(spec, in_shapes):
    kind = spec.kind
    if kind == "input":
        return spec.shape
    if kind == "conv":
        h, w, c = in_shapes[0]
        kh, kw = spec.kernel
        oh = _conv_out_len(h, kh, spec.stride, spec.dilation, spec.padding,
                           spec.name)
        ow = _conv_out_len(w, kw, spec.stride, spec.dilation, spec.padding,
                           spec.name)
        return (oh, ow, spec.out_channels)
    if kind == "deconv":
        h, w, c = in_shapes[0]
        return (2 * h, 2 * w, spec.out_channels)
    if kind in ("batchnorm", "relu", "l2norm"):
        return in_shapes[0]
    if kind == "maxpool":
        h, w, c = in_shapes[0]
        if spec.padding == "valid" and (spec.pool > h or spec.pool > w):
            raise GraphError(
                f"layer {spec.name!r}: pool {spec.pool} exceeds input "
                f"{h}x{w}")
        oh = _conv_out_len(h, spec.pool, spec.stride, 1, spec.padding,
                           spec.name)
        ow = _conv_out_len(w, spec.pool, spec.stride, 1, spec.padding,
                           spec.name)
        return (oh, ow, c)
    if kind == "concat":
        hw = {(h, w) for h, w, _ in in_shapes}
        if len(hw) != 1:
            raise GraphError(
                f"layer {spec.name!r}: concat inputs disagree on extent: "
                f"{sorted(hw)}")
        h, w = next(iter(hw))
        return (h, w, sum(c for _, _, c in in_shapes))
    if kind == "add":
        if len(set(in_shapes)) != 1:
            raise GraphError(
                f"layer {spec.name!r}: add inputs disagree on shape: "
                f"{in_shapes}")
        return in_shapes[0]
    if kind == "global_avg_pool":
        h, w, c = in_shapes[0]
        return (1, 1, c)
    raise GraphError(f"layer {spec.name!r}: unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# layer kernels


def conv2d(x, kernel, bias, stride=1, padding="same", dilation=1):
    kh, kw, cin, cout = kernel.shape
    if x.shape[2] != cin:
        raise GraphError(
            f"conv expects {cin} input channels, got {x.shape[2]}")
    if padding == "same":
        pt, pb = _same_pad(x.shape[0], kh, stride, dilation)
        pl, pr = _same_pad(x.shape[1], kw, stride, dilation)
        if pt or pb or pl or pr:
            x = np.pad(x, ((pt, pb), (pl, pr), (0, 0)))
    kh_eff = (kh - 1) * dilation + 1
    kw_eff = (kw - 1) * dilation + 1
    win = sliding_window_view(x, (kh_eff, kw_eff), axis=(0, 1))
    win = win[::stride, ::stride, :, ::dilation, ::dilation]
    # (oh, ow, cin, kh, kw) x (kh, kw, cin, cout) -> (oh, ow, cout)
    out = np.tensordot(win, kernel, axes=([3, 4, 2], [0, 1, 2]))
    return out + bias


def deconv2d(x, kernel, bias):
    kh, kw, cout, cin = kernel.shape
    if (kh, kw) != (2, 2):
        raise GraphError("deconv supports kernel 2 stride 2 only")
    if x.shape[2] != cin:
        raise GraphError(
            f"deconv expects {cin} input channels, got {x.shape[2]}")
    h, w, _ = x.shape
    # each input pixel paints a disjoint 2x2 output patch
    t = np.tensordot(x, kernel, axes=([2], [3]))        # (h, w, kh, kw, cout)
    t = t.transpose(0, 2, 1, 3, 4).reshape(2 * h, 2 * w, cout)
    return t + bias


def batchnorm(x, gamma, beta, mean, var, epsilon=1e-5):
    if not (len(gamma) == len(beta) == len(mean) == len(var) == x.shape[2]):
        raise GraphError("batchnorm parameter length does not match channels")
    scale = gamma / np.sqrt(var + epsilon)
    return (x - mean) * scale + beta


def relu(x):
    return np.maximum(x, 0)


def maxpool(x, pool, stride=None, padding="valid"):
    stride = pool if stride is None else stride
    h, w, c = x.shape
    if padding == "same":
        pt, pb = _same_pad(h, pool, stride, 1)
        pl, pr = _same_pad(w, pool, stride, 1)
        if pt or pb or pl or pr:
            x = np.pad(x, ((pt, pb), (pl, pr), (0, 0)),
                       constant_values=-np.inf)
    elif pool > h or pool > w:
        raise GraphError(f"pool {pool} exceeds input {h}x{w}")
    win = sliding_window_view(x, (pool, pool), axis=(0, 1))
    return win[::stride, ::stride].max(axis=(3, 4))


def concat(xs):
    if len({x.shape[:2] for x in xs}) != 1:
        raise GraphError("concat inputs disagree on spatial extent")
    return np.concatenate(xs, axis=2)


def add(xs):
    out = xs[0]
    for x in xs[1:]:
        out = out + x
    return out


def l2norm(x, scale):
    norm = np.sqrt(np.sum(x.astype(np.float64) ** 2, axis=2, keepdims=True)
                   + 1e-12)
    return (x / norm * scale).astype(x.dtype, copy=False)


def global_avg_pool(x):
    return x.mean(axis=(0, 1), keepdims=True)


# ---------------------------------------------------------------------------
# execution


def _weight(weights, name, suffix, expect_shape):
    key = f"{name}.{suffix}"
    if key not in weights:
        raise GraphError(f"missing weight {key!r}")
    w = weights[key]
    if tuple(w.shape) != tuple(expect_shape):
        raise GraphError(
            f"weight {key!r}: expected shape {tuple(expect_shape)}, "
            f"got {tuple(w.shape)}")
    return w


def run_graph(graph, weights, inputs):
    """Execute the graph; returns {output name: tensor}."""
    shapes = graph.infer_shapes()
    acts: dict[str, np.ndarray] = {}
    for spec in graph.layers.values():
        if spec.kind == "input":
            if spec.name not in inputs:
                raise GraphError(f"missing graph input {spec.name!r}")
            x = np.asarray(inputs[spec.name], dtype=np.float32)
            if tuple(x.shape) != spec.shape:
                raise GraphError(
                    f"layer {spec.name!r}: expected input shape "
                    f"{spec.shape}, got {tuple(x.shape)}")
            acts[spec.name] = x
            continue
        srcs = [acts[s] for s in spec.inputs]
        if spec.kind == "conv":
            cin = shapes[spec.inputs[0]][2]
            kh, kw = spec.kernel
            k = _weight(weights, spec.name, "kernel",
                        (kh, kw, cin, spec.out_channels))
            b = _weight(weights, spec.name, "bias", (spec.out_channels,))
            out = conv2d(srcs[0], k, b, spec.stride, spec.padding,
                         spec.dilation)
        elif spec.kind == "deconv":
            cin = shapes[spec.inputs[0]][2]
            k = _weight(weights, spec.name, "kernel",
                        (2, 2, spec.out_channels, cin))
            b = _weight(weights, spec.name, "bias", (spec.out_channels,))
            out = deconv2d(srcs[0], k, b)
        elif spec.kind == "batchnorm":
            c = shapes[spec.inputs[0]][2]
            out = batchnorm(srcs[0],
                            _weight(weights, spec.name, "bn_gamma", (c,)),
                            _weight(weights, spec.name, "bn_beta", (c,)),
                            _weight(weights, spec.name, "bn_mean", (c,)),
                            _weight(weights, spec.name, "bn_var", (c,)),
                            spec.epsilon)
        elif spec.kind == "relu":
            out = relu(srcs[0])
        elif spec.kind == "maxpool":
            out = maxpool(srcs[0], spec.pool, spec.stride, spec.padding)
        elif spec.kind == "concat":
            out = concat(srcs)
        elif spec.kind == "add":
            out = add(srcs)
        elif spec.kind == "l2norm":
            c = shapes[spec.inputs[0]][2]
            out = l2norm(srcs[0], _weight(weights, spec.name, "l2_scale", (c,)))
        elif spec.kind == "global_avg_pool":
            out = global_avg_pool(srcs[0])
        else:
            raise GraphError(f"layer {spec.name!r}: unknown kind {spec.kind!r}")
        if tuple(out.shape) != shapes[spec.name]:
            raise GraphError(
                f"layer {spec.name!r}: expected shape {shapes[spec.name]}, "
                f"got {tuple(out.shape)}")
        acts[spec.name] = out
    return {name: acts[name] for name in graph.output_names()}


# ---------------------------------------------------------------------------
# static cost model


def flop_count(graph):
    """Static cost: multiply-accumulates for conv/deconv, per-element ops for
    everything else.  Returns {"per_layer": {name: {"macs", "elementwise"}},
    "total_macs": int, "total_elementwise": int}.
    """
    shapes = graph.infer_shapes()
    per_layer = {}
    for spec in graph.layers.values():
        macs = 0
        elementwise = 0
        out = shapes[spec.name]
        n_out = out[0] * out[1] * out[2]
        if spec.kind == "conv":
            kh, kw = spec.kernel
            cin = shapes[spec.inputs[0]][2]
            macs = kh * kw * cin * spec.out_channels * out[0] * out[1]
            elementwise = n_out  # bias add
        elif spec.kind == "deconv":
            h, w, cin = shapes[spec.inputs[0]]
            macs = 4 * cin * spec.out_channels * h * w
            elementwise = n_out
        elif spec.kind == "batchnorm":
            elementwise = 2 * n_out
        elif spec.kind == "relu":
            elementwise = n_out
        elif spec.kind == "maxpool":
            elementwise = (spec.pool * spec.pool - 1) * n_out
        elif spec.kind == "add":
            elementwise = (len(spec.inputs) - 1) * n_out
        elif spec.kind == "l2norm":
            elementwise = 3 * n_out
        elif spec.kind == "global_avg_pool":
            h, w, c = shapes[spec.inputs[0]]
            elementwise = h * w * c
        per_layer[spec.name] = {"macs": macs, "elementwise": elementwise}
    return {
        "per_layer": per_layer,
        "total_macs": sum(v["macs"] for v in per_layer.values()),
        "total_elementwise": sum(v["elementwise"] for v in per_layer.values()),
    }


# ---------------------------------------------------------------------------
# weight seeding and the WTS1 container


def seed_weights(graph, seed):
    """Deterministic He-normal kernels (std = sqrt(2/fan_in)), zero biases,
    identity batchnorm, l2norm scales at their configured init."""
    rng = np.random.default_rng(seed)
    shapes = graph.infer_shapes()
    weights: dict[str, np.ndarray] = {}
    for spec in graph.layers.values():
        if spec.kind == "conv":
            kh, kw = spec.kernel
            cin = shapes[spec.inputs[0]][2]
            fan_in = kh * kw * cin
            kshape = (kh, kw, cin, spec.out_channels)
        elif spec.kind == "deconv":
            cin = shapes[spec.inputs[0]][2]
            fan_in = 4 * cin
            kshape = (2, 2, spec.out_channels, cin)
        elif spec.kind == "batchnorm":
            c = shapes[spec.inputs[0]][2]
            weights[f"{spec.name}.bn_gamma"] = np.ones(c, dtype=np.float32)
            weights[f"{spec.name}.bn_beta"] = np.zeros(c, dtype=np.float32)
            weights[f"{spec.name}.bn_mean"] = np.zeros(c, dtype=np.float32)
            weights[f"{spec.name}.bn_var"] = np.ones(c, dtype=np.float32)
            continue
        elif spec.kind == "l2norm":
            c = shapes[spec.inputs[0]][2]
            weights[f"{spec.name}.l2_scale"] = np.full(
                c, spec.scale_init, dtype=np.float32)
            continue
        else:
            continue
        std = np.sqrt(2.0 / fan_in)
        kernel = rng.normal(0.0, std, size=kshape).astype(np.float32)
        weights[f"{spec.name}.kernel"] = kernel
        weights[f"{spec.name}.bias"] = np.zeros(spec.out_channels,
                                                dtype=np.float32)
    return weights


WTS_MAGIC = b"WTS1"


def save_weights(path, weights):
    blob = bytearray(WTS_MAGIC)
    blob += struct.pack("<I", len(weights))
    for name, arr in weights.items():
        encoded = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    with open(path, "wb") as f:
        f.write(blob)


def load_weights(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != WTS_MAGIC:
        raise ValueError("not a WTS1 file (bad magic)")
    if len(blob) < 8:
        raise ValueError("truncated WTS1 file")
    (count,) = struct.unpack_from("<I", blob, 4)
    pos = 8
    weights: dict[str, np.ndarray] = {}
    for _ in range(count):
        if pos + 2 > len(blob):
            raise ValueError("truncated WTS1 file")
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        if pos + nlen + 1 > len(blob):
            raise ValueError("truncated WTS1 file")
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        rank = blob[pos]
        pos += 1
        if pos + 4 * rank > len(blob):
            raise ValueError("truncated WTS1 file")
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        if pos + 4 * n > len(blob):
            raise ValueError("truncated WTS1 file")
        arr = np.frombuffer(blob[pos:pos + 4 * n], dtype="<f4").reshape(dims)
        pos += 4 * n
        weights[name] = arr.copy()
    if pos != len(blob):
        raise ValueError("trailing bytes in WTS1 file")
    return weights

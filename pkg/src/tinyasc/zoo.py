"""Model graphs for the two competing architectures.

Both networks share one skeleton: two convolutional modules separated by
time-axis max pooling and dropout, then global average pooling and a
10-way dense classifier with softmax.

* ``conv_sep``: each module is a full convolution and a separable
  convolution (depthwise + pointwise, bias on the pointwise stage only),
  each followed by batch norm and ELU.
* ``conv_mixer``: a 1x1 patch embedding (GELU + batch norm) feeds two
  mixer modules; each module adds a residual skip around its depthwise
  convolution, then applies GELU + batch norm, a pointwise convolution,
  and GELU + batch norm again.

Pool tuples are (frequency, time): (1, 4) downsamples the 51-frame time
axis to 12. A graph is an ordered list of LayerSpec nodes; the same
representation drives inference, training, auditing, and quantization.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import GraphBuildError, ShapeError
from .frontend import Spectrogram

LAYER_KINDS = (
    "conv2d",
    "depthwise_conv2d",
    "pointwise_conv2d",
    "batch_norm",
    "elu",
    "gelu",
    "max_pool",
    "global_avg_pool",
    "dense",
    "dropout",
    "softmax",
    "residual_add_begin",
    "residual_add_end",
)

# deterministic weight order per kind, used by init, Adam state, and serialization
WEIGHT_ORDER = {
    "conv2d": ("w", "b"),
    "depthwise_conv2d": ("w", "b"),
    "pointwise_conv2d": ("w", "b"),
    "batch_norm": ("gamma", "beta", "moving_mean", "moving_var"),
    "dense": ("w", "b"),
}
TRAINABLE_WEIGHTS = {
    "conv2d": ("w", "b"),
    "depthwise_conv2d": ("w", "b"),
    "pointwise_conv2d": ("w", "b"),
    "batch_norm": ("gamma", "beta"),
    "dense": ("w", "b"),
}

BN_EPS = 1e-3
BN_MOMENTUM = 0.99
DROPOUT_RATE = 0.3


@dataclass
class LayerSpec:
    """One graph node: kind, hyperparameters, and named weight tensors."""

    kind: str
    name: str
    config: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    trainable: bool = False
    input_shape: tuple = None
    output_shape: tuple = None

    def weight_names(self):
        order = WEIGHT_ORDER.get(self.kind, ())
        return tuple(n for n in order if n in self.weights)


@dataclass
class ModelGraph:
    """Ordered layer list plus the hyperparameters that determine it."""

    layers: list
    arch_tag: str
    filters: tuple
    kernel_size: int
    patch_size: int = 1
    input_shape: tuple = (64, 51, 1)
    n_classes: int = 10
    use_bias: bool = True
    patch_norm: bool = True
    dtype: object = np.float32


@dataclass
class Prediction:
    """Classifier output: probabilities, their argmax, and the raw logits."""

    probabilities: np.ndarray
    top_class: int
    logits: np.ndarray


ARCH_TAGS = ("conv_sep", "conv_mixer")


def _conv(name, kernel, cin, cout, use_bias, stride=1, padding="same", dtype=np.float32):
    weights = {"w": np.zeros((kernel, kernel, cin, cout), dtype=dtype)}
    if use_bias:
        weights["b"] = np.zeros(cout, dtype=dtype)
    cfg = {"kernel": kernel, "stride": stride, "padding": padding, "use_bias": use_bias}
    return LayerSpec("conv2d", name, cfg, weights, trainable=True)


def _depthwise(name, kernel, channels, use_bias, dtype=np.float32):
    weights = {"w": np.zeros((kernel, kernel, channels), dtype=dtype)}
    if use_bias:
        weights["b"] = np.zeros(channels, dtype=dtype)
    return LayerSpec(
        "depthwise_conv2d", name, {"kernel": kernel, "use_bias": use_bias}, weights, trainable=True
    )


def _pointwise(name, cin, cout, use_bias, dtype=np.float32):
    weights = {"w": np.zeros((1, 1, cin, cout), dtype=dtype)}
    if use_bias:
        weights["b"] = np.zeros(cout, dtype=dtype)
    return LayerSpec("pointwise_conv2d", name, {"use_bias": use_bias}, weights, trainable=True)


def _batch_norm(name, channels, dtype=np.float32):
    weights = {
        "gamma": np.ones(channels, dtype=dtype),
        "beta": np.zeros(channels, dtype=dtype),
        "moving_mean": np.zeros(channels, dtype=dtype),
        "moving_var": np.ones(channels, dtype=dtype),
    }
    return LayerSpec(
        "batch_norm", name, {"eps": BN_EPS, "momentum": BN_MOMENTUM}, weights, trainable=True
    )


def _dense(name, n_in, n_out, dtype=np.float32):
    weights = {"w": np.zeros((n_in, n_out), dtype=dtype), "b": np.zeros(n_out, dtype=dtype)}
    return LayerSpec("dense", name, {}, weights, trainable=True)


def _simple(kind, name, **cfg):
    return LayerSpec(kind, name, cfg)


def _validate_common(f1, f2, kernel_size):
    if f1 < 1 or f2 < 1:
        raise GraphBuildError(f"filter counts must be >= 1, got ({f1}, {f2})")
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise GraphBuildError(f"kernel size must be odd and >= 1, got {kernel_size}")


def build_conv_sep(f1, f2, kernel_size=3, input_shape=(64, 51, 1), n_classes=10, use_bias=True):
    """Two conv + separable-conv modules in the shared skeleton.

    Within a module both convolutions carry the same filter count; the
    separable convolution's depthwise stage is never biased (its bias
    lives on the pointwise stage).
    """
    _validate_common(f1, f2, kernel_size)
    dt = np.float32
    layers = []
    cin = input_shape[2]
    for m, f in ((1, f1), (2, f2)):
        layers += [
            _conv(f"conv{m}", kernel_size, cin, f, use_bias, dtype=dt),
            _batch_norm(f"bn{m}a", f, dtype=dt),
            _simple("elu", f"elu{m}a"),
            _depthwise(f"sep{m}_dw", kernel_size, f, use_bias=False, dtype=dt),
            _pointwise(f"sep{m}_pw", f, f, use_bias, dtype=dt),
            _batch_norm(f"bn{m}b", f, dtype=dt),
            _simple("elu", f"elu{m}b"),
            _simple("max_pool", f"pool{m}", pool=(1, 4) if m == 1 else (1, 2)),
            _simple("dropout", f"drop{m}", rate=DROPOUT_RATE),
        ]
        cin = f
    layers += [
        _simple("global_avg_pool", "gap"),
        _dense("classifier", f2, n_classes, dtype=dt),
        _simple("softmax", "softmax"),
    ]
    model = ModelGraph(
        layers=layers,
        arch_tag="conv_sep",
        filters=(f1, f2),
        kernel_size=kernel_size,
        input_shape=tuple(input_shape),
        n_classes=n_classes,
        use_bias=use_bias,
    )
    infer_shapes(model)
    return model


def build_conv_mixer(
    f1,
    f2,
    kernel_size=3,
    patch_size=1,
    input_shape=(64, 51, 1),
    n_classes=10,
    use_bias=True,
    patch_norm=True,
):
    """Patch embedding plus two mixer modules in the shared skeleton.

    The residual skip spans the depthwise convolution only: the module
    computes BN(GELU(depthwise(x) + x)) and then the pointwise stage. The
    second module's pointwise convolution carries the channel change from
    f1 to f2; patch size 1 leaves the spatial extent untouched.
    """
    _validate_common(f1, f2, kernel_size)
    if patch_size < 1:
        raise GraphBuildError(f"patch size must be >= 1, got {patch_size}")
    dt = np.float32
    layers = [
        _conv(
            "patch_embed",
            patch_size,
            input_shape[2],
            f1,
            use_bias,
            stride=patch_size,
            padding="valid",
            dtype=dt,
        ),
        _simple("gelu", "patch_gelu"),
    ]
    if patch_norm:
        layers.append(_batch_norm("patch_bn", f1, dtype=dt))
    for m, (cin, f) in ((1, (f1, f1)), (2, (f1, f2))):
        layers += [
            _simple("residual_add_begin", f"mix{m}_skip"),
            _depthwise(f"mix{m}_dw", kernel_size, cin, use_bias, dtype=dt),
            _simple("residual_add_end", f"mix{m}_add"),
            _simple("gelu", f"mix{m}_gelu_a"),
            _batch_norm(f"mix{m}_bn_a", cin, dtype=dt),
            _pointwise(f"mix{m}_pw", cin, f, use_bias, dtype=dt),
            _simple("gelu", f"mix{m}_gelu_b"),
            _batch_norm(f"mix{m}_bn_b", f, dtype=dt),
            _simple("max_pool", f"pool{m}", pool=(1, 4) if m == 1 else (1, 2)),
            _simple("dropout", f"drop{m}", rate=DROPOUT_RATE),
        ]
    layers += [
        _simple("global_avg_pool", "gap"),
        _dense("classifier", f2, n_classes, dtype=dt),
        _simple("softmax", "softmax"),
    ]
    model = ModelGraph(
        layers=layers,
        arch_tag="conv_mixer",
        filters=(f1, f2),
        kernel_size=kernel_size,
        patch_size=patch_size,
        input_shape=tuple(input_shape),
        n_classes=n_classes,
        use_bias=use_bias,
        patch_norm=patch_norm,
    )
    infer_shapes(model)
    return model


def infer_shapes(model):
    """Walk the graph symbolically, filling per-layer input/output shapes.

    Raises GraphBuildError naming the offending layer if weight shapes or
    residual wiring are inconsistent. Returns the list of output shapes.
    """
    shape = tuple(model.input_shape)
    skips = []
    shapes = []
    for idx, layer in enumerate(model.layers):
        layer.input_shape = shape
        where = f"layer {idx} ({layer.name}, {layer.kind})"
        k = layer.kind
        if k == "conv2d":
            kh, kw, cin, cout = layer.weights["w"].shape
            if cin != shape[2]:
                raise GraphBuildError(f"{where}: expects {cin} channels, gets {shape[2]}")
            stride = layer.config.get("stride", 1)
            if layer.config.get("padding", "same") == "same":
                shape = (shape[0], shape[1], cout)
            else:
                h = (shape[0] - kh) // stride + 1
                w = (shape[1] - kw) // stride + 1
                if h < 1 or w < 1:
                    raise GraphBuildError(f"{where}: kernel exceeds input {shape[:2]}")
                shape = (h, w, cout)
        elif k == "depthwise_conv2d":
            kh, kw, c = layer.weights["w"].shape
            if c != shape[2]:
                raise GraphBuildError(f"{where}: expects {c} channels, gets {shape[2]}")
        elif k == "pointwise_conv2d":
            _, _, cin, cout = layer.weights["w"].shape
            if cin != shape[2]:
                raise GraphBuildError(f"{where}: expects {cin} channels, gets {shape[2]}")
            shape = (shape[0], shape[1], cout)
        elif k == "batch_norm":
            if layer.weights["gamma"].shape != (shape[-1],):
                raise GraphBuildError(
                    f"{where}: {layer.weights['gamma'].shape[0]} channels, gets {shape[-1]}"
                )
        elif k == "max_pool":
            ph, pw = layer.config["pool"]
            h, w = shape[0] // ph, shape[1] // pw
            if h < 1 or w < 1:
                raise GraphBuildError(f"{where}: pool ({ph},{pw}) exceeds input {shape[:2]}")
            shape = (h, w, shape[2])
        elif k == "global_avg_pool":
            if len(shape) != 3:
                raise GraphBuildError(f"{where}: needs a spatial input, gets {shape}")
            shape = (shape[2],)
        elif k == "dense":
            n_in, n_out = layer.weights["w"].shape
            if shape != (n_in,):
                raise GraphBuildError(f"{where}: expects ({n_in},), gets {shape}")
            shape = (n_out,)
        elif k == "residual_add_begin":
            skips.append(shape)
        elif k == "residual_add_end":
            if not skips:
                raise GraphBuildError(f"{where}: no matching residual_add_begin")
            skip = skips.pop()
            if skip != shape:
                raise GraphBuildError(f"{where}: skip shape {skip} != main path {shape}")
        elif k in ("elu", "gelu", "dropout", "softmax"):
            pass
        else:
            raise GraphBuildError(f"{where}: unknown layer kind")
        layer.output_shape = shape
        shapes.append(shape)
    if skips:
        raise GraphBuildError("unterminated residual connection")
    if shape != (model.n_classes,):
        raise GraphBuildError(f"graph emits {shape}, expected ({model.n_classes},)")
    return shapes


def glorot_fans(layer):
    """(fan_in, fan_out) per layer kind, mirroring common framework counting."""
    k = layer.kind
    w = layer.weights["w"]
    if k == "conv2d":
        kh, kw, cin, cout = w.shape
        return kh * kw * cin, kh * kw * cout
    if k == "pointwise_conv2d":
        _, _, cin, cout = w.shape
        return cin, cout
    if k == "depthwise_conv2d":
        kh, kw, c = w.shape
        return kh * kw * c, kh * kw
    if k == "dense":
        return w.shape[0], w.shape[1]
    raise ValueError(f"no glorot fans for kind {k}")


def init_weights(model, seed, dtype=None):
    """Glorot-uniform kernels, zero biases, identity batch norm; seeded.

    ``dtype`` overrides the model's storage dtype (float64 for gradient
    tests). Returns the model with weights replaced in place.
    """
    if dtype is not None:
        model.dtype = dtype
    dt = model.dtype
    rng = np.random.default_rng(seed)
    for layer in model.layers:
        if layer.kind in ("conv2d", "depthwise_conv2d", "pointwise_conv2d", "dense"):
            fan_in, fan_out = glorot_fans(layer)
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            layer.weights["w"] = rng.uniform(-limit, limit, layer.weights["w"].shape).astype(dt)
            if "b" in layer.weights:
                layer.weights["b"] = np.zeros_like(layer.weights["b"], dtype=dt)
        elif layer.kind == "batch_norm":
            c = layer.weights["gamma"].shape[0]
            layer.weights["gamma"] = np.ones(c, dtype=dt)
            layer.weights["beta"] = np.zeros(c, dtype=dt)
            layer.weights["moving_mean"] = np.zeros(c, dtype=dt)
            layer.weights["moving_var"] = np.ones(c, dtype=dt)
    return model


def run_graph(model, x, train=False, rng=None, keep_caches=False, record_activations=None):
    """Execute the graph on a batch (N, H, W, C).

    Returns (output, logits, caches). ``logits`` is the final dense
    output before softmax. In train mode batch norm updates its moving
    statistics in place and dropout draws from ``rng``; caches (when
    requested) hold what each layer's backward pass needs. If
    ``record_activations`` is a list, every layer's output is appended.
    """
    skips = []
    caches = [] if keep_caches else None
    logits = None
    for layer in model.layers:
        k = layer.kind
        w = layer.weights
        cache = None
        if k == "conv2d":
            cache = x
            x = kernels.conv2d(
                x,
                w["w"],
                w.get("b"),
                stride=layer.config.get("stride", 1),
                padding=layer.config.get("padding", "same"),
            )
        elif k == "depthwise_conv2d":
            cache = x
            x = kernels.depthwise_conv2d(x, w["w"], w.get("b"))
        elif k == "pointwise_conv2d":
            cache = x
            x = kernels.pointwise_conv2d(x, w["w"], w.get("b"))
        elif k == "batch_norm":
            x, cache, (mm, mv) = kernels.batch_norm(
                x,
                w["gamma"],
                w["beta"],
                w["moving_mean"],
                w["moving_var"],
                eps=layer.config["eps"],
                momentum=layer.config["momentum"],
                train=train,
            )
            if train:
                w["moving_mean"], w["moving_var"] = mm.astype(x.dtype), mv.astype(x.dtype)
        elif k == "elu":
            cache = x
            x = kernels.elu(x)
        elif k == "gelu":
            cache = x
            x = kernels.gelu(x)
        elif k == "max_pool":
            x, cache = kernels.max_pool(x, layer.config["pool"])
        elif k == "global_avg_pool":
            cache = x.shape
            x = kernels.global_avg_pool(x)
        elif k == "dense":
            cache = x
            x = kernels.dense(x, w["w"], w["b"])
            logits = x
        elif k == "dropout":
            x, mask = kernels.dropout(x, layer.config["rate"], train=train, rng=rng)
            cache = mask
        elif k == "softmax":
            x = kernels.softmax(x)
            cache = x
        elif k == "residual_add_begin":
            skips.append(x)
        elif k == "residual_add_end":
            x = x + skips.pop()
        else:
            raise ShapeError(f"unknown layer kind {k}")
        if keep_caches:
            caches.append(cache)
        if record_activations is not None:
            record_activations.append(x)
    return x, logits, caches


def backward_graph(model, caches, grad_out):
    """Backpropagate through the graph given forward caches.

    Returns a dict mapping layer index to {weight_name: gradient} for
    every trainable weight. Raises if a cache a layer needs is missing.
    """
    if caches is None or len(caches) != len(model.layers):
        raise ShapeError("missing forward cache: run the graph with keep_caches=True")
    grads = {}
    skip_grads = []
    g = grad_out
    for idx in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[idx]
        k = layer.kind
        w = layer.weights
        cache = caches[idx]
        needs_cache = k not in ("residual_add_begin", "residual_add_end") and not (
            k == "dropout" and cache is None
        )
        if needs_cache and cache is None:
            raise ShapeError(f"missing forward cache for layer {idx} ({layer.name})")
        if k == "conv2d":
            gx, gw, gb = kernels.conv2d_backward(
                cache,
                w["w"],
                g,
                stride=layer.config.get("stride", 1),
                padding=layer.config.get("padding", "same"),
                with_bias="b" in w,
            )
            grads[idx] = {"w": gw} if gb is None else {"w": gw, "b": gb}
            g = gx
        elif k == "depthwise_conv2d":
            gx, gw, gb = kernels.depthwise_conv2d_backward(cache, w["w"], g, with_bias="b" in w)
            grads[idx] = {"w": gw} if gb is None else {"w": gw, "b": gb}
            g = gx
        elif k == "pointwise_conv2d":
            gx, gw, gb = kernels.pointwise_conv2d_backward(cache, w["w"], g, with_bias="b" in w)
            grads[idx] = {"w": gw} if gb is None else {"w": gw, "b": gb}
            g = gx
        elif k == "batch_norm":
            g, g_gamma, g_beta = kernels.batch_norm_backward(cache, g)
            grads[idx] = {"gamma": g_gamma, "beta": g_beta}
        elif k == "elu":
            g = kernels.elu_backward(cache, g)
        elif k == "gelu":
            g = kernels.gelu_backward(cache, g)
        elif k == "max_pool":
            g = kernels.max_pool_backward(cache, g)
        elif k == "global_avg_pool":
            g = kernels.global_avg_pool_backward(cache, g)
        elif k == "dense":
            gx, gw, gb = kernels.dense_backward(cache, w["w"], g)
            grads[idx] = {"w": gw, "b": gb}
            g = gx
        elif k == "dropout":
            g = kernels.dropout_backward(cache, layer.config["rate"], g)
        elif k == "softmax":
            g = kernels.softmax_backward(cache, g)
        elif k == "residual_add_end":
            skip_grads.append(g)
        elif k == "residual_add_begin":
            g = g + skip_grads.pop()
    return grads, g


def forward(model, spec):
    """Deterministic single-example inference: Spectrogram -> Prediction."""
    expected = model.input_shape
    if isinstance(spec, Spectrogram):
        data = spec.data
    else:
        data = np.asarray(spec)
    if data.shape == expected:
        x = data
    elif data.shape == expected[:2] and expected[2] == 1:
        x = data[..., None]
    else:
        raise ShapeError(f"input shape mismatch: expected {expected[:2]} (x1 channel), got {data.shape}")
    x = x[None, ...].astype(model.dtype)
    probs, logits, _ = run_graph(model, x, train=False)
    p = probs[0]
    return Prediction(probabilities=p, top_class=int(np.argmax(p)), logits=logits[0])


def forward_batch(model, batch):
    """Inference over a pre-stacked batch (N, H, W, C); returns (probs, logits)."""
    probs, logits, _ = run_graph(model, batch.astype(model.dtype), train=False)
    return probs, logits


def copy_weights(model):
    """Deep copy of all weight arrays, keyed like adam parameters."""
    return {
        (i, name): layer.weights[name].copy()
        for i, layer in enumerate(model.layers)
        for name in layer.weight_names()
    }


def restore_weights(model, snapshot):
    for (i, name), arr in snapshot.items():
        model.layers[i].weights[name] = arr.copy()


def weights_fingerprint(model):
    """Stable digest of every weight byte, for immutability checks."""
    import hashlib

    h = hashlib.sha256()
    for layer in model.layers:
        for name in layer.weight_names():
            h.update(np.ascontiguousarray(layer.weights[name]).tobytes())
    return h.hexdigest()


# --- serialization -------------------------------------------------------
#
# Self-describing binary checkpoint: a fixed header naming the topology,
# then each layer's weights in graph order as little-endian float32 blobs
# with shape prefixes. Round trips are bit-exact for float32 models.

MAGIC = b"TASC"
FORMAT_VERSION = 1
_ARCH_IDS = {"conv_sep": 0, "conv_mixer": 1}
_ARCH_NAMES = {v: k for k, v in _ARCH_IDS.items()}


def _write_header(fh, model):
    fh.write(MAGIC)
    fh.write(
        struct.pack(
            "<HBHHHHBBHHHH",
            FORMAT_VERSION,
            _ARCH_IDS[model.arch_tag],
            model.filters[0],
            model.filters[1],
            model.kernel_size,
            model.patch_size,
            1 if model.use_bias else 0,
            1 if model.patch_norm else 0,
            model.n_classes,
            model.input_shape[0],
            model.input_shape[1],
            model.input_shape[2],
        )
    )


def _read_header(fh):
    magic = fh.read(4)
    if magic != MAGIC:
        raise ShapeError(f"not a model checkpoint (magic {magic!r})")
    fields = struct.unpack("<HBHHHHBBHHHH", fh.read(21))
    version, arch_id, f1, f2, kernel, patch, use_bias, patch_norm, n_classes, h, w, c = fields
    if version != FORMAT_VERSION:
        raise ShapeError(f"unsupported checkpoint version {version}")
    if arch_id not in _ARCH_NAMES:
        raise ShapeError(f"unknown architecture id {arch_id}")
    return {
        "arch_tag": _ARCH_NAMES[arch_id],
        "filters": (f1, f2),
        "kernel_size": kernel,
        "patch_size": patch,
        "use_bias": bool(use_bias),
        "patch_norm": bool(patch_norm),
        "n_classes": n_classes,
        "input_shape": (h, w, c),
    }


def rebuild_from_header(header):
    if header["arch_tag"] == "conv_sep":
        return build_conv_sep(
            *header["filters"],
            kernel_size=header["kernel_size"],
            input_shape=header["input_shape"],
            n_classes=header["n_classes"],
            use_bias=header["use_bias"],
        )
    return build_conv_mixer(
        *header["filters"],
        kernel_size=header["kernel_size"],
        patch_size=header["patch_size"],
        input_shape=header["input_shape"],
        n_classes=header["n_classes"],
        use_bias=header["use_bias"],
        patch_norm=header["patch_norm"],
    )


def _write_array(fh, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(arr.tobytes())


def _read_array(fh):
    (ndim,) = struct.unpack("<B", fh.read(1))
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
    return data.copy()


def save_model(model, path):
    """Write a float32 checkpoint; see module notes for the layout."""
    with open(path, "wb") as fh:
        _write_header(fh, model)
        for layer in model.layers:
            names = layer.weight_names()
            fh.write(struct.pack("<B", len(names)))
            for name in names:
                _write_array(fh, layer.weights[name])


def load_model(path):
    """Rebuild the graph from the header and pour the stored weights in."""
    with open(path, "rb") as fh:
        header = _read_header(fh)
        model = rebuild_from_header(header)
        for idx, layer in enumerate(model.layers):
            names = layer.weight_names()
            (count,) = struct.unpack("<B", fh.read(1))
            if count != len(names):
                raise ShapeError(f"layer {idx}: checkpoint has {count} tensors, graph expects {len(names)}")
            for name in names:
                arr = _read_array(fh)
                if arr.shape != layer.weights[name].shape:
                    raise ShapeError(
                        f"layer {idx} weight {name}: stored shape {arr.shape} "
                        f"!= expected {layer.weights[name].shape}"
                    )
                layer.weights[name] = arr
    return model

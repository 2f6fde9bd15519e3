"""Post-training INT8 quantization and quantized inference.

Scheme: per-tensor throughout. Weights quantize symmetrically (scale =
max|w| / 127, zero point 0); activations quantize affinely over the
min/max range observed on a calibration set, with the range widened to
include zero so that real 0 maps exactly onto an integer code.

Batch norm folds into the preceding convolution wherever it directly
follows one (always the case for conv_sep; the mixer's norms sit behind
activations and stay as float ops). Quantized inference runs the
convolution and dense layers in integer arithmetic with 32-bit
accumulators and converts to float between them, so pooling, residual
adds, and nonlinearities execute in float: a documented simplification,
constrained end to end by the float-agreement check rather than per-op.
"""

import copy
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels, zoo
from .errors import QuantizationError

INT_KINDS = ("conv2d", "depthwise_conv2d", "pointwise_conv2d", "dense")


@dataclass
class QuantParams:
    """Affine map between real values and INT8 codes: q = round(x / scale) + zero_point."""

    scale: float
    zero_point: int
    scheme: str  # symmetric_weight | affine_activation

    def __post_init__(self):
        if self.scale <= 0:
            raise QuantizationError(f"scale must be positive, got {self.scale}")
        if self.scheme == "symmetric_weight" and self.zero_point != 0:
            raise QuantizationError("symmetric scheme requires zero_point 0")
        if not -128 <= self.zero_point <= 127:
            raise QuantizationError(f"zero_point {self.zero_point} outside INT8 range")


def quantize_tensor(t, scheme="symmetric_weight"):
    """Quantize a float tensor to INT8 codes plus its QuantParams.

    Symmetric: scale = max|t| / 127, codes clamped to [-127, 127].
    Affine: scale spans the zero-extended [min, max] over 255 codes.
    An all-zero (or empty-range) tensor degenerates to scale 1.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.size and not np.all(np.isfinite(t)):
        raise QuantizationError("cannot quantize non-finite values")
    if scheme == "symmetric_weight":
        peak = float(np.max(np.abs(t))) if t.size else 0.0
        scale = peak / 127.0 if peak > 0 else 1.0
        q = np.clip(np.round(t / scale), -127, 127).astype(np.int8)
        return q, QuantParams(scale=scale, zero_point=0, scheme=scheme)
    if scheme == "affine_activation":
        lo = min(float(t.min()), 0.0) if t.size else 0.0
        hi = max(float(t.max()), 0.0) if t.size else 0.0
        params = affine_params(lo, hi)
        q = np.clip(np.round(t / params.scale) + params.zero_point, -128, 127).astype(np.int8)
        return q, params
    raise QuantizationError(f"unknown scheme {scheme!r}")


def affine_params(lo, hi):
    """Affine QuantParams covering [lo, hi], widened to include real zero."""
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    if hi - lo <= 0:
        return QuantParams(scale=1.0, zero_point=0, scheme="affine_activation")
    scale = (hi - lo) / 255.0
    zero_point = int(np.clip(round(-128 - lo / scale), -128, 127))
    return QuantParams(scale=scale, zero_point=zero_point, scheme="affine_activation")


def dequantize(q, params: QuantParams):
    return (q.astype(np.float64) - params.zero_point) * params.scale


def quantize_array(x, params: QuantParams):
    """Apply existing params to a float array, returning INT8 codes."""
    return np.clip(np.round(x / params.scale) + params.zero_point, -128, 127).astype(np.int8)


@dataclass
class Calibration:
    """Observed activation ranges: input plus one (lo, hi) per layer output."""

    input_range: tuple
    layer_ranges: list


def calibrate(model, inputs):
    """Aggregate per-layer activation min/max over calibration inputs.

    ``inputs`` is a sequence of Spectrograms (or raw 2-D arrays). At least
    one input is required; additional inputs only widen the ranges.
    """
    if not inputs:
        raise QuantizationError("calibration needs at least one input")
    in_lo = in_hi = None
    ranges = None
    for spec in inputs:
        data = spec.data if hasattr(spec, "data") else np.asarray(spec)
        x = data[None, ..., None].astype(model.dtype)
        acts = []
        zoo.run_graph(model, x, train=False, record_activations=acts)
        lo, hi = float(x.min()), float(x.max())
        in_lo = lo if in_lo is None else min(in_lo, lo)
        in_hi = hi if in_hi is None else max(in_hi, hi)
        if ranges is None:
            ranges = [(float(a.min()), float(a.max())) for a in acts]
        else:
            ranges = [
                (min(r[0], float(a.min())), max(r[1], float(a.max())))
                for r, a in zip(ranges, acts)
            ]
    return Calibration(input_range=(in_lo, in_hi), layer_ranges=ranges)


def fold_batch_norm(model):
    """Fold every batch norm that directly follows a conv-family layer.

    Returns a new graph whose float forward matches the original in
    inference mode; folded convolutions absorb gamma/sqrt(var + eps) into
    their kernels and gain a bias if they had none. Norms that do not
    directly follow a convolution (the mixer places them behind
    activations) are left in place.
    """
    folded = copy.deepcopy(model)
    layers = folded.layers
    out = []
    i = 0
    while i < len(layers):
        layer = layers[i]
        nxt = layers[i + 1] if i + 1 < len(layers) else None
        if (
            layer.kind in ("conv2d", "depthwise_conv2d", "pointwise_conv2d")
            and nxt is not None
            and nxt.kind == "batch_norm"
        ):
            gamma = nxt.weights["gamma"].astype(np.float64)
            beta = nxt.weights["beta"].astype(np.float64)
            mean = nxt.weights["moving_mean"].astype(np.float64)
            var = nxt.weights["moving_var"].astype(np.float64)
            factor = gamma / np.sqrt(var + nxt.config["eps"])
            w = layer.weights["w"].astype(np.float64)
            b = layer.weights.get("b")
            b = np.zeros(factor.shape[0]) if b is None else b.astype(np.float64)
            # conv/pointwise kernels end in Cout; depthwise kernels end in C
            layer.weights["w"] = (w * factor).astype(model.dtype)
            layer.weights["b"] = ((b - mean) * factor + beta).astype(model.dtype)
            layer.config["use_bias"] = True
            out.append(layer)
            i += 2
            continue
        out.append(layer)
        i += 1
    folded.layers = out
    zoo.infer_shapes(folded)
    return folded


@dataclass
class QuantizedModel:
    """Folded graph topology plus INT8 weight payloads and quant params."""

    graph: zoo.ModelGraph
    weight_payloads: dict  # (layer_idx, name) -> int8 array
    weight_params: dict  # (layer_idx, name) -> QuantParams
    float_weights: dict  # (layer_idx, name) -> float arrays (biases, norm params)
    activation_params: list  # QuantParams per layer output
    input_params: QuantParams


def quantize_model(model, calibration_inputs):
    """Fold, calibrate, and quantize a trained float model."""
    folded = fold_batch_norm(model)
    cal = calibrate(folded, calibration_inputs)
    payloads, wparams, floats = {}, {}, {}
    for i, layer in enumerate(folded.layers):
        for name in layer.weight_names():
            if layer.kind in INT_KINDS and name == "w":
                q, p = quantize_tensor(layer.weights[name], "symmetric_weight")
                payloads[(i, name)] = q
                wparams[(i, name)] = p
            else:
                floats[(i, name)] = layer.weights[name].astype(np.float32)
    act_params = [affine_params(lo, hi) for lo, hi in cal.layer_ranges]
    return QuantizedModel(
        graph=folded,
        weight_payloads=payloads,
        weight_params=wparams,
        float_weights=floats,
        activation_params=act_params,
        input_params=affine_params(*cal.input_range),
    )


def _integer_layer(layer, idx, x_float, in_params, qm):
    """Requantize the incoming float tensor and run one integer-core layer."""
    wq = qm.weight_payloads[(idx, "w")].astype(np.int32)
    wp = qm.weight_params[(idx, "w")]
    xq = quantize_array(x_float, in_params).astype(np.int32) - in_params.zero_point
    bias = qm.float_weights.get((idx, "b"))
    out_scale = in_params.scale * wp.scale
    if layer.kind == "conv2d":
        acc = kernels.conv2d(
            xq,
            wq,
            None,
            stride=layer.config.get("stride", 1),
            padding=layer.config.get("padding", "same"),
        )
    elif layer.kind == "depthwise_conv2d":
        acc = kernels.depthwise_conv2d(xq, wq, None)
    elif layer.kind == "pointwise_conv2d":
        acc = kernels.pointwise_conv2d(xq, wq, None)
    else:
        acc = xq @ wq
    if bias is not None:
        acc = acc + np.round(bias.astype(np.float64) / out_scale).astype(np.int32)
    return acc.astype(np.float64) * out_scale


def quantized_forward(qm: QuantizedModel, spec):
    """Integer-arithmetic inference; returns a float Prediction.

    Convolutions and the dense layer run on INT8 codes with int32
    accumulators; each one requantizes its input with the calibrated
    affine params of the tensor feeding it. Everything else (pooling,
    residual adds, nonlinearities, the remaining norms, softmax) runs in
    float between the integer layers.
    """
    if qm.activation_params is None or not qm.activation_params:
        raise QuantizationError("missing calibration: quantize with at least one input")
    model = qm.graph
    data = spec.data if hasattr(spec, "data") else np.asarray(spec)
    if data.shape != model.input_shape[:2]:
        raise QuantizationError(
            f"input shape mismatch: expected {model.input_shape[:2]}, got {data.shape}"
        )
    x = data[None, ..., None].astype(np.float64)
    skips = []
    logits = None
    for idx, layer in enumerate(model.layers):
        k = layer.kind
        if k in INT_KINDS:
            in_params = qm.input_params if idx == 0 else qm.activation_params[idx - 1]
            x = _integer_layer(layer, idx, x, in_params, qm)
            if k == "dense":
                logits = x
        elif k == "batch_norm":
            gamma = qm.float_weights[(idx, "gamma")].astype(np.float64)
            beta = qm.float_weights[(idx, "beta")].astype(np.float64)
            mean = qm.float_weights[(idx, "moving_mean")].astype(np.float64)
            var = qm.float_weights[(idx, "moving_var")].astype(np.float64)
            x = (x - mean) / np.sqrt(var + layer.config["eps"]) * gamma + beta
        elif k == "elu":
            x = kernels.elu(x)
        elif k == "gelu":
            x = kernels.gelu(x)
        elif k == "max_pool":
            x, _ = kernels.max_pool(x, layer.config["pool"])
        elif k == "global_avg_pool":
            x = kernels.global_avg_pool(x)
        elif k == "dropout":
            pass
        elif k == "softmax":
            x = kernels.softmax(x)
        elif k == "residual_add_begin":
            skips.append(x)
        elif k == "residual_add_end":
            x = x + skips.pop()
    p = x[0]
    return zoo.Prediction(probabilities=p, top_class=int(np.argmax(p)), logits=logits[0])


def agreement_report(model, qm: QuantizedModel, inputs):
    """Paired float vs quantized inference over a set of inputs.

    Returns top-1 agreement rate and the largest per-logit absolute
    difference observed (reported, not asserted: the bound is empirical).
    """
    if not inputs:
        raise QuantizationError("agreement report needs at least one input")
    agree = 0
    max_logit_diff = 0.0
    for spec in inputs:
        pf = zoo.forward(model, spec)
        pq = quantized_forward(qm, spec)
        agree += int(pf.top_class == pq.top_class)
        max_logit_diff = max(max_logit_diff, float(np.max(np.abs(pf.logits - pq.logits))))
    return {
        "n_inputs": len(inputs),
        "top1_agreement": agree / len(inputs),
        "max_logit_diff": max_logit_diff,
    }


# --- serialization -------------------------------------------------------

QMAGIC = b"TASQ"


def save_quantized(qm: QuantizedModel, path):
    """Checkpoint header plus per-layer records: INT8 blobs carry their
    scale and zero point, float blobs (biases, residual norm params) are
    stored raw; activation params follow at the end."""
    with open(path, "wb") as fh:
        fh.write(QMAGIC)
        zoo._write_header(fh, qm.graph)
        fh.write(struct.pack("<H", len(qm.graph.layers)))
        for i, layer in enumerate(qm.graph.layers):
            names = layer.weight_names()
            fh.write(struct.pack("<B", len(names)))
            for name in names:
                if (i, name) in qm.weight_payloads:
                    arr = qm.weight_payloads[(i, name)]
                    p = qm.weight_params[(i, name)]
                    fh.write(struct.pack("<B", 1))
                    fh.write(struct.pack("<dh", p.scale, p.zero_point))
                    fh.write(struct.pack("<B", arr.ndim))
                    for d in arr.shape:
                        fh.write(struct.pack("<I", d))
                    fh.write(arr.tobytes())
                else:
                    fh.write(struct.pack("<B", 0))
                    zoo._write_array(fh, qm.float_weights[(i, name)])
        fh.write(struct.pack("<dh", qm.input_params.scale, qm.input_params.zero_point))
        fh.write(struct.pack("<H", len(qm.activation_params)))
        for p in qm.activation_params:
            fh.write(struct.pack("<dh", p.scale, p.zero_point))


def load_quantized(path) -> QuantizedModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != QMAGIC:
            raise QuantizationError(f"not a quantized model file (magic {magic!r})")
        header = zoo._read_header(fh)
        graph = fold_batch_norm(zoo.rebuild_from_header(header))
        (n_layers,) = struct.unpack("<H", fh.read(2))
        if n_layers != len(graph.layers):
            raise QuantizationError(
                f"stored layer count {n_layers} != rebuilt graph {len(graph.layers)}"
            )
        payloads, wparams, floats = {}, {}, {}
        for i, layer in enumerate(graph.layers):
            names = layer.weight_names()
            (count,) = struct.unpack("<B", fh.read(1))
            if count != len(names):
                raise QuantizationError(f"layer {i}: {count} tensors stored, {len(names)} expected")
            for name in names:
                (tag,) = struct.unpack("<B", fh.read(1))
                if tag == 1:
                    scale, zp = struct.unpack("<dh", fh.read(10))
                    (ndim,) = struct.unpack("<B", fh.read(1))
                    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
                    n = int(np.prod(shape)) if shape else 1
                    arr = np.frombuffer(fh.read(n), dtype=np.int8).reshape(shape).copy()
                    payloads[(i, name)] = arr
                    wparams[(i, name)] = QuantParams(scale, zp, "symmetric_weight")
                else:
                    floats[(i, name)] = zoo._read_array(fh)
        in_scale, in_zp = struct.unpack("<dh", fh.read(10))
        (n_acts,) = struct.unpack("<H", fh.read(2))
        act_params = []
        for _ in range(n_acts):
            scale, zp = struct.unpack("<dh", fh.read(10))
            act_params.append(QuantParams(scale, zp, "affine_activation"))
    return QuantizedModel(
        graph=graph,
        weight_payloads=payloads,
        weight_params=wparams,
        float_weights=floats,
        activation_params=act_params,
        input_params=QuantParams(in_scale, in_zp, "affine_activation"),
    )

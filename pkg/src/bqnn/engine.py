"""Exact execution of lowered networks.

The packed binary convolution computes, per 32-element word pair and
activation plane p:

    partial = 2 * popcount(a_p AND w) - popcount(a_p)
    acc    += partial << p

which is the exact sum of (+-1 weight) * (0..3 code) products: among the
elements whose plane bit is set, +1 weights contribute +1 and -1 weights -1,
so the plane sum is pc(a&w) - (pc(a) - pc(a&w)).  Zero padding uses code 0,
the one code whose plane words are all zero, so padded positions and weight
pad bits drop out of the masked formula.

Dense f32 convolutions accumulate in float64 and round to f32 at store.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import errors
from .ir import LAYOUT_DEPTH_INNERMOST, TensorBlob, TensorDesc
from .layout import PackedTensor, bitpack
from .transform import LoweredGraph, ThresholdUnit

_POPCOUNT_LUT = None


def popcount_u32(a: np.ndarray) -> np.ndarray:
    """Per-element popcount of a uint32 array, as uint8."""
    if hasattr(np, "bitwise_count"):
        return np.bitwise_count(a)
    global _POPCOUNT_LUT
    if _POPCOUNT_LUT is None:
        _POPCOUNT_LUT = np.array([bin(i).count("1") for i in range(256)],
                                 dtype=np.uint8)
    by = np.ascontiguousarray(a).view(np.uint8).reshape(a.shape + (4,))
    return _POPCOUNT_LUT[by].sum(axis=-1, dtype=np.uint8)


@dataclass
class AccumulatorMap:
    """Integer accumulators of one binary convolution layer."""

    desc: TensorDesc
    data: np.ndarray   # (H, W, Od) int32


def _u2_blob(arr: np.ndarray) -> TensorBlob:
    h, w, d = arr.shape
    return TensorBlob(TensorDesc(h, w, d, "u2", LAYOUT_DEPTH_INNERMOST),
                      arr[None].astype(np.uint8), count=1)


def _f32_blob(arr: np.ndarray) -> TensorBlob:
    h, w, d = arr.shape
    return TensorBlob(TensorDesc(h, w, d, "f32", LAYOUT_DEPTH_INNERMOST),
                      arr[None].astype(np.float32), count=1)


def _out_dims(ih, iw, kh, kw, stride, pad):
    oh = (ih + 2 * pad - kh) // stride + 1
    ow = (iw + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise errors.ShapeMismatch(
            f"kernel {kh}x{kw} larger than padded input {ih}x{iw}")
    return oh, ow


# ---------------------------------------------------------------------------
# binary convolution
# ---------------------------------------------------------------------------

def _stack_blob_kernels(weights) -> TensorBlob:
    """Accept either a stacked TensorBlob or one TensorBlob per kernel."""
    if isinstance(weights, TensorBlob):
        return weights
    first = weights[0]
    data = np.concatenate([w.data for w in weights], axis=0)
    return TensorBlob(first.desc, data, count=len(weights))


def _stack_packed_kernels(weights) -> PackedTensor:
    if isinstance(weights, PackedTensor):
        return weights
    first = weights[0]
    planes = [np.concatenate([w.planes[p] for w in weights], axis=0)
              for p in range(first.num_planes)]
    return PackedTensor(first.desc, planes, count=len(weights))


def binconv_reference(acts: TensorBlob, weights,
                      stride: int = 1, pad: int = 0) -> AccumulatorMap:
    """Naive-loop oracle: acc[o,y,x] = sum over window of w in {-1,+1} times
    a in {0..3}, padded positions contributing 0."""
    weights = _stack_blob_kernels(weights)
    if acts.desc.dtype != "u2" or weights.desc.dtype != "bin1":
        raise errors.ShapeMismatch("binconv needs u2 activations, bin1 weights")
    a = acts.single_hwd().astype(np.int32)
    kh, kw, kd = (weights.desc.height, weights.desc.width, weights.desc.depth)
    od = weights.count
    if kd != a.shape[2]:
        raise errors.ShapeMismatch(
            f"kernel depth {kd} != activation depth {a.shape[2]}")
    w = np.stack([weights.kernel_hwd(i) for i in range(od)]) \
        .astype(np.int32).reshape(od, -1)
    oh, ow = _out_dims(a.shape[0], a.shape[1], kh, kw, stride, pad)
    padded = np.pad(a, ((pad, pad), (pad, pad), (0, 0)))
    acc = np.empty((oh, ow, od), dtype=np.int32)
    for y in range(oh):
        for x in range(ow):
            patch = padded[y * stride:y * stride + kh,
                           x * stride:x * stride + kw, :].ravel()
            acc[y, x, :] = w @ patch
    return AccumulatorMap(
        TensorDesc(oh, ow, od, "i32", LAYOUT_DEPTH_INNERMOST), acc)


def _window_words(plane: np.ndarray, kh: int, kw: int, stride: int,
                  pad: int) -> np.ndarray:
    """(H, W, wpd) words -> (n_windows, kh*kw*wpd) in (kh, kw, word) order."""
    padded = np.pad(plane, ((pad, pad), (pad, pad), (0, 0)))
    view = np.lib.stride_tricks.sliding_window_view(
        padded, (kh, kw), axis=(0, 1))      # (oh', ow', wpd, kh, kw)
    view = view[::stride, ::stride]
    oh, ow = view.shape[0], view.shape[1]
    cols = view.transpose(0, 1, 3, 4, 2).reshape(oh * ow, -1)
    return np.ascontiguousarray(cols), oh, ow


def binconv_packed(acts: PackedTensor, weights,
                   stride: int = 1, pad: int = 0,
                   threads: int = 1) -> AccumulatorMap:
    """Packed XNOR-popcount-style convolution, bit-exact vs the reference."""
    weights = _stack_packed_kernels(weights)
    if acts.desc.layout != LAYOUT_DEPTH_INNERMOST or \
            weights.desc.layout != LAYOUT_DEPTH_INNERMOST:
        raise errors.LayoutMismatch("packed operands must be depth-innermost")
    if acts.num_planes != 2 or weights.num_planes != 1:
        raise errors.PlaneCountMismatch(
            f"need u2 activations (2 planes) and bin1 weights (1 plane), "
            f"got {acts.num_planes}/{weights.num_planes}")
    if acts.desc.depth != weights.desc.depth:
        raise errors.ShapeMismatch(
            f"kernel depth {weights.desc.depth} != activation depth "
            f"{acts.desc.depth}")
    kh, kw = weights.desc.height, weights.desc.width
    od = weights.count
    wmat = weights.planes[0].reshape(od, -1)
    acc = None
    for p, plane in enumerate(acts.planes):
        cols, oh, ow = _window_words(plane[0], kh, kw, stride, pad)
        n = cols.shape[0]
        if acc is None:
            acc = np.zeros((n, od), dtype=np.int32)
        pc_a = popcount_u32(cols).sum(axis=1, dtype=np.int32)

        def fill(lo, hi, cols=cols, pc_a=pc_a, p=p):
            sub = np.empty((hi - lo, cols.shape[0]), dtype=np.int32)
            for k in range(lo, hi):
                sub[k - lo] = popcount_u32(cols & wmat[k]).sum(
                    axis=1, dtype=np.int32)
            acc[:, lo:hi] += ((2 * sub - pc_a).T) << p

        chunk = max(1, int(2_000_000 // max(1, n * cols.shape[1])))
        bounds = list(range(0, od, chunk)) + [od]
        spans = list(zip(bounds[:-1], bounds[1:]))
        if threads > 1 and len(spans) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(lambda s: fill(*s), spans))
        else:
            for s in spans:
                fill(*s)
    return AccumulatorMap(
        TensorDesc(oh, ow, od, "i32", LAYOUT_DEPTH_INNERMOST),
        acc.reshape(oh, ow, od))


# ---------------------------------------------------------------------------
# thresholds, pooling, dense convolution
# ---------------------------------------------------------------------------

def apply_thresholds(acc: AccumulatorMap, th: ThresholdUnit) -> TensorBlob:
    """code = #{j : acc >= t_j} on increasing channels, <= on decreasing."""
    if acc.desc.depth != th.channels:
        raise errors.ChannelMismatch(
            f"{acc.desc.depth} accumulator channels vs {th.channels} "
            f"threshold channels")
    a = acc.data
    inc = th.increasing
    codes = np.zeros(a.shape, dtype=np.uint8)
    for j in range(3):
        hit = np.where(inc, a >= th.t[:, j], a <= th.t[:, j])
        codes += hit.astype(np.uint8)
    return _u2_blob(codes)


def maxpool_u2(t: TensorBlob, window: int = 2, stride: int = 2) -> TensorBlob:
    """Per-channel max of codes (valid: the quantizer is monotone)."""
    if t.desc.dtype != "u2":
        raise errors.ShapeMismatch(f"maxpool_u2 needs u2, got {t.desc.dtype}")
    a = t.single_hwd()
    if a.shape[0] < window or a.shape[1] < window:
        raise errors.ShapeMismatch(
            f"pool window {window} larger than map {a.shape[:2]}")
    view = np.lib.stride_tricks.sliding_window_view(
        a, (window, window), axis=(0, 1))[::stride, ::stride]
    return _u2_blob(view.max(axis=(3, 4)).astype(np.uint8))


def conv_f32(acts: TensorBlob, weights: TensorBlob,
             bias: np.ndarray | None = None, stride: int = 1, pad: int = 0,
             dequant_step: float | None = None) -> TensorBlob:
    """Standard dense convolution; f64 accumulation, f32 store.

    u2 activations are dequantized as step * code first.
    """
    if weights.desc.dtype != "f32":
        raise errors.ShapeMismatch("conv_f32 needs f32 weights")
    if acts.desc.dtype == "u2":
        if dequant_step is None:
            raise errors.ShapeMismatch(
                "u2 activations need a dequantization step")
        x = acts.single_hwd().astype(np.float64) * dequant_step
    elif acts.desc.dtype == "f32":
        x = acts.single_hwd().astype(np.float64)
    else:
        raise errors.ShapeMismatch(f"bad activation dtype {acts.desc.dtype}")
    kh, kw, kd = (weights.desc.height, weights.desc.width, weights.desc.depth)
    od = weights.count
    if kd != x.shape[2]:
        raise errors.ShapeMismatch(
            f"kernel depth {kd} != activation depth {x.shape[2]}")
    if bias is not None and len(bias) != od:
        raise errors.ShapeMismatch(
            f"bias length {len(bias)} != output channels {od}")
    w = np.stack([weights.kernel_hwd(i) for i in range(od)]) \
        .astype(np.float64).reshape(od, -1)
    oh, ow = _out_dims(x.shape[0], x.shape[1], kh, kw, stride, pad)
    padded = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    b = np.zeros(od) if bias is None else np.asarray(bias, dtype=np.float64)
    out = np.empty((oh, ow, od), dtype=np.float32)
    for y in range(oh):
        ys = y * stride
        for xp in range(ow):
            xs = xp * stride
            patch = padded[ys:ys + kh, xs:xs + kw, :].ravel()
            out[y, xp, :] = (w @ patch + b).astype(np.float32)
    return _f32_blob(out)


def quantize_map(x: TensorBlob, scale: np.ndarray, offset: np.ndarray,
                 step: float) -> TensorBlob:
    """code = clamp(round_half_up((scale*y + offset) / step), 0, 3), in f64."""
    a = x.single_hwd().astype(np.float64)
    if len(scale) not in (1, a.shape[2]):
        raise errors.ChannelMismatch(
            f"affine length {len(scale)} != depth {a.shape[2]}")
    r = (a * scale + offset) / step
    codes = np.clip(np.floor(r + 0.5), 0, 3).astype(np.uint8)
    return _u2_blob(codes)


# ---------------------------------------------------------------------------
# network runner
# ---------------------------------------------------------------------------

def run_network(lg: LoweredGraph, image: TensorBlob, threads: int = 1,
                trace: bool = False):
    """Execute a lowered pipeline on one image; returns the final f32 map.

    With trace=True also returns [(node_id, codes array)] for every
    quantized intermediate (the u2 code maps).
    """
    if image.desc.dtype != "f32":
        raise errors.ShapeMismatch("input image must be f32")
    shape = tuple(image.single_hwd().shape)
    if shape != lg.input_shape:
        raise errors.ShapeMismatch(
            f"image shape {shape} != network input {lg.input_shape}")
    cur: TensorBlob = image
    acc: AccumulatorMap | None = None
    codes_trace: list[tuple[str, np.ndarray]] = []
    for node in lg.nodes:
        if node.kind == "input":
            continue
        if node.kind == "conv_f32":
            cur = conv_f32(cur, node.weights_f32, node.bias, node.stride,
                           node.pad, node.dequant_step)
        elif node.kind == "quantize_act":
            cur = quantize_map(cur, node.scale, node.offset, node.step)
        elif node.kind == "binconv":
            if cur.desc.dtype != "u2":
                raise errors.ShapeMismatch("binconv needs quantized input")
            acc = binconv_packed(bitpack(cur), node.weights_packed,
                                 node.stride, node.pad, threads=threads)
            cur = None
        elif node.kind == "threshold":
            cur = apply_thresholds(acc, node.thresholds)
            acc = None
        elif node.kind == "maxpool":
            cur = maxpool_u2(cur, node.window, node.stride)
        elif node.kind == "output":
            break
        else:
            raise errors.EngineError(f"unknown lowered kind {node.kind!r}")
        if trace and cur is not None and cur.desc.dtype == "u2":
            codes_trace.append((node.id, cur.single_hwd().copy()))
    if cur is None:      # network ended on a raw binconv accumulator
        out = _f32_blob(acc.data.astype(np.float32))
    elif cur.desc.dtype == "u2":
        out = _f32_blob(cur.single_hwd().astype(np.float32))
    else:
        out = cur
    return (out, codes_trace) if trace else out

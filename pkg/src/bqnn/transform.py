"""Graph rewriting: marker pruning, weight binarization, threshold folding.

Lowering turns the trained-model graph into an integer pipeline: interior
convolutions become packed binary convolutions whose following per-channel
affine chain (batchnorm / scale / bias, optionally a trailing leaky ReLU)
plus 2-bit quantizer collapse into three integer cut-points per channel.

The 2-bit quantizer is ``code = clamp(round_half_up(r / step), 0, 3)``,
equivalently ``code = #{j in 1..3 : r >= (j - 0.5) * step}``.  On an integer
accumulator y with chain ``r = s*y + b`` the count form solves exactly to
integer thresholds, computed here in exact rational arithmetic.  A trailing
leaky ReLU with positive slope never changes the code (all cut-points are
positive and it fixes positive values), but the cut-point crossing is still
solved on the correct linear piece for generality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import errors, ir
from .ir import (LAYOUT_DEPTH_INNERMOST, Graph, Node, TensorBlob, TensorDesc,
                 conv_is_binarized)
from .layout import PackedTensor, bitpack, packed_from_payload, to_depth_innermost

LOWERED_KINDS = ("input", "conv_f32", "quantize_act", "binconv", "threshold",
                 "maxpool", "output")

_CHAIN_KINDS = ("batchnorm", "scale", "bias")

THRESHOLD_BYTES_PER_CHANNEL = 13   # 3 x i32 cut-points + 1 direction byte


@dataclass
class AffineFold:
    """Composed per-channel affine r = scale*y + offset."""

    scale: np.ndarray    # float64 (channels,)
    offset: np.ndarray   # float64 (channels,)

    def __post_init__(self):
        if self.scale.shape != self.offset.shape:
            raise ValueError("scale/offset length mismatch")
        if not (np.isfinite(self.scale).all() and np.isfinite(self.offset).all()):
            raise errors.TransformError("non-finite affine parameters")
        if (self.scale == 0.0).any():
            bad = int(np.flatnonzero(self.scale == 0.0)[0])
            raise errors.ZeroScaleChannel(f"zero scale in channel {bad}")

    @property
    def channels(self) -> int:
        return len(self.scale)


@dataclass
class ThresholdUnit:
    """Per-channel integer cut-points; code(y) counts satisfied comparisons."""

    t: np.ndarray            # int32 (channels, 3)
    increasing: np.ndarray   # bool (channels,)

    def __post_init__(self):
        t, inc = self.t, self.increasing
        if t.shape != (len(inc), 3):
            raise ValueError(f"threshold shape {t.shape} != ({len(inc)}, 3)")
        up, down = t[inc], t[~inc]
        if up.size and not ((up[:, 0] <= up[:, 1]) & (up[:, 1] <= up[:, 2])).all():
            raise ValueError("increasing channel with unsorted cut-points")
        if down.size and not ((down[:, 0] >= down[:, 1]) & (down[:, 1] >= down[:, 2])).all():
            raise ValueError("decreasing channel with unsorted cut-points")

    @property
    def channels(self) -> int:
        return len(self.increasing)


@dataclass
class LoweredNode:
    id: str
    kind: str
    source_id: str | None = None   # originating conv/pool node, for reports
    stride: int = 1
    pad: int = 0
    window: int = 2
    step: float | None = None          # quantizer step of produced codes
    dequant_step: float | None = None  # step of consumed codes (conv_f32)
    scale: np.ndarray | None = None    # quantize_act per-channel affine
    offset: np.ndarray | None = None
    weights_f32: TensorBlob | None = None
    bias: np.ndarray | None = None
    weights_packed: PackedTensor | None = None
    thresholds: ThresholdUnit | None = None

    def param_bytes(self) -> int:
        """Bytes this node contributes to the lowered model (metadata excluded)."""
        if self.kind == "conv_f32":
            n = 4 * self.weights_f32.desc.elements * self.weights_f32.count
            if self.bias is not None:
                n += 4 * len(self.bias)
            return n
        if self.kind == "binconv":
            return self.weights_packed.packed_bytes()
        if self.kind == "threshold":
            return THRESHOLD_BYTES_PER_CHANNEL * self.thresholds.channels
        if self.kind == "quantize_act" and self.source_id is not None:
            return 8 * len(self.scale)   # folded affine at f32 per channel
        return 0


@dataclass
class LoweredGraph:
    """Linear executable pipeline of lowered nodes."""

    nodes: list[LoweredNode]
    input_shape: tuple[int, int, int]

    def binconvs(self) -> list[LoweredNode]:
        return [n for n in self.nodes if n.kind == "binconv"]

    def node_after(self, node: LoweredNode) -> LoweredNode | None:
        i = self.nodes.index(node)
        return self.nodes[i + 1] if i + 1 < len(self.nodes) else None


def walk_shapes(lg: LoweredGraph) -> list[tuple[LoweredNode,
                                                tuple[int, int, int],
                                                tuple[int, int, int]]]:
    """(node, input shape, output shape) per node, in execution order."""
    shape = lg.input_shape
    out = []
    for n in lg.nodes:
        in_shape = shape
        if n.kind == "conv_f32":
            w = n.weights_f32.desc
            oh = (shape[0] + 2 * n.pad - w.height) // n.stride + 1
            ow = (shape[1] + 2 * n.pad - w.width) // n.stride + 1
            shape = (oh, ow, n.weights_f32.count)
        elif n.kind == "binconv":
            w = n.weights_packed.desc
            oh = (shape[0] + 2 * n.pad - w.height) // n.stride + 1
            ow = (shape[1] + 2 * n.pad - w.width) // n.stride + 1
            shape = (oh, ow, n.weights_packed.count)
        elif n.kind == "maxpool":
            shape = ((shape[0] - n.window) // n.stride + 1,
                     (shape[1] - n.window) // n.stride + 1, shape[2])
        out.append((n, in_shape, shape))
    return out


# ---------------------------------------------------------------------------
# individual rewrites
# ---------------------------------------------------------------------------

def prune_weight_quant_subgraph(g: Graph) -> Graph:
    """Delete binarize_w marker nodes, tagging their convs as binarized."""
    for nid, node in g.nodes.items():
        for src in node.inputs:
            if g.nodes[src].kind == "binarize_w":
                raise errors.MarkerOnNonWeightEdge(
                    f"binarize_w node {src!r} sits on an activation edge "
                    f"into {nid!r}")
    nodes: dict[str, Node] = {}
    for nid in g.topo_order:
        node = g.nodes[nid]
        if node.kind == "binarize_w":
            continue
        attrs = dict(node.attrs)
        weights = node.weights
        marker = attrs.pop("weights_from", None)
        if marker is not None:
            attrs["binarized"] = True
            weights = g.nodes[marker].weights
        nodes[nid] = Node(id=nid, kind=node.kind, inputs=list(node.inputs),
                          attrs=attrs, weights=weights)
    topo = [n for n in g.topo_order if n in nodes]
    return Graph(nodes=nodes, topo_order=topo, blobs=dict(g.blobs))


def binarize_weights(w: TensorBlob) -> TensorBlob:
    """Sign-map f32 weights to bin1: value >= 0 -> +1, value < 0 -> -1."""
    if w.desc.dtype != "f32":
        raise errors.WrongDtype(f"binarize_weights needs f32, got {w.desc.dtype}")
    if not np.isfinite(w.data).all():
        raise errors.NonFiniteWeight("NaN or Inf weight value")
    data = np.where(w.data >= 0, 1, -1).astype(np.int8)
    desc = TensorDesc(w.desc.height, w.desc.width, w.desc.depth, "bin1",
                      w.desc.layout)
    return TensorBlob(desc=desc, data=data, count=w.count)


def fold_affine_chain(chain: list[Node], channels: int) -> AffineFold:
    """Compose batchnorm/scale/bias nodes, in graph order, into one affine."""
    s = np.ones(channels, dtype=np.float64)
    b = np.zeros(channels, dtype=np.float64)

    def vec(values, what, nid):
        v = np.asarray(values, dtype=np.float64)
        if v.shape == ():
            v = np.full(channels, float(v))
        if v.shape != (channels,):
            raise errors.TransformError(
                f"{nid}: {what} has {v.shape[0]} channels, expected {channels}")
        return v

    for node in chain:
        if node.kind == "batchnorm":
            a = node.attrs
            gamma = vec(a["gamma"], "gamma", node.id)
            beta = vec(a["beta"], "beta", node.id)
            mean = vec(a["mean"], "mean", node.id)
            var = vec(a["var"], "var", node.id)
            inv = gamma / np.sqrt(var + a["eps"])
            s = s * inv
            b = b * inv + (beta - mean * inv)
        elif node.kind == "scale":
            v = vec(node.attrs["values"], "scale", node.id)
            s = s * v
            b = b * v
        elif node.kind == "bias":
            b = b + vec(node.attrs["values"], "bias", node.id)
        else:
            raise errors.NonAffineNodeInChain(
                f"node {node.id!r} of kind {node.kind!r} inside affine chain")
    return AffineFold(scale=s, offset=b)


def affine_to_thresholds(a: AffineFold, step: float,
                         leaky_slope: float | None = None) -> ThresholdUnit:
    """Solve the quantizer cut-point crossings on the integer accumulator.

    For channel c with s > 0: t_j = ceil((c_j - b) / s) and
    code(y) = #{j : y >= t_j}; for s < 0: t_j = floor((c_j - b) / s) and
    code(y) = #{j : y <= t_j}, with real cut-points c_j = (j - 0.5) * step.
    A leaky pre-activation is absorbed by inverting it on the linear piece
    the cut-point falls on.  All solves are exact (rational arithmetic).
    """
    if step <= 0:
        raise errors.TransformError(f"quantizer step must be > 0, got {step}")
    if leaky_slope is not None and leaky_slope <= 0:
        raise errors.NonMonotoneActivation(
            f"leaky slope must be > 0, got {leaky_slope}")
    d = Fraction(step)
    slope = Fraction(leaky_slope) if leaky_slope is not None else None
    n = a.channels
    t = np.empty((n, 3), dtype=np.int64)
    increasing = a.scale > 0
    for c in range(n):
        s = Fraction(float(a.scale[c]))
        b = Fraction(float(a.offset[c]))
        for j in (1, 2, 3):
            cut = Fraction(2 * j - 1, 2) * d
            if slope is not None and cut < 0:
                cut = cut / slope   # crossing on the negative piece
            x = (cut - b) / s
            t[c, j - 1] = math.ceil(x) if s > 0 else math.floor(x)
    return ThresholdUnit(t=_to_i32(t), increasing=increasing)


def _to_i32(t: np.ndarray) -> np.ndarray:
    lo, hi = np.iinfo(np.int32).min, np.iinfo(np.int32).max
    return np.clip(t, lo, hi).astype(np.int32)


def clamp_thresholds(th: ThresholdUnit, acc_bound: int) -> ThresholdUnit:
    """Clamp cut-points to the reachable accumulator range plus a sentinel.

    |acc| <= acc_bound, so any cut-point beyond the range behaves identically
    to the sentinel acc_bound + 1 (or its negative); this keeps the values in
    i32 regardless of how extreme the folded affine is.
    """
    t = np.clip(th.t.astype(np.int64), -(acc_bound + 1), acc_bound + 1)
    return ThresholdUnit(t=_to_i32(t), increasing=th.increasing)


# ---------------------------------------------------------------------------
# full lowering
# ---------------------------------------------------------------------------

def _pack_conv_weights(blob: TensorBlob) -> PackedTensor:
    signed = binarize_weights(blob)
    if signed.desc.layout != LAYOUT_DEPTH_INNERMOST:
        signed = to_depth_innermost(signed)
    return bitpack(signed)


def _as_f32_stack(blob: TensorBlob) -> TensorBlob:
    """f32 weights in depth-innermost storage for the dense engine path."""
    if blob.desc.layout != LAYOUT_DEPTH_INNERMOST:
        return to_depth_innermost(blob)
    return blob


def lower_graph(g: Graph) -> LoweredGraph:
    """Lower a validated pre-lowering graph into the packed integer pipeline."""
    if isinstance(g, LoweredGraph):
        raise errors.AlreadyLowered("graph is already lowered")
    diags = [d for d in ir.validate_graph(g) if d.severity == "error"]
    if diags:
        raise errors.TransformError(
            "graph fails validation: " + "; ".join(str(d) for d in diags))
    g = prune_weight_quant_subgraph(g)
    seq = [g.nodes[n] for n in g.topo_order]
    conv_ids = [n.id for n in seq if n.kind == "conv2d"]
    last_conv = conv_ids[-1] if conv_ids else None

    out: list[LoweredNode] = []
    domain = None   # "f32" | "u2" | "acc"
    step_in: float | None = None
    input_shape = None
    depth = 0
    i = 0
    while i < len(seq):
        node = seq[i]
        if node.kind == "input":
            a = node.attrs
            out.append(LoweredNode(id=node.id, kind="input"))
            input_shape = (a["height"], a["width"], a["depth"])
            depth = a["depth"]
            domain = "f32"
            i += 1
        elif node.kind == "conv2d":
            i = _lower_conv(g, seq, i, out, domain, step_in,
                            is_last=node.id == last_conv)
            depth = node.attrs["od"]
            tail = out[-1]
            if tail.kind in ("threshold", "quantize_act"):
                domain, step_in = "u2", tail.step
            elif tail.kind == "binconv":
                domain, step_in = "acc", None
            else:
                domain, step_in = "f32", None
        elif node.kind == "quantize_act":
            if domain != "f32":
                raise errors.UnfoldableSubgraph(
                    f"{node.id}: quantizer on non-real input (domain {domain})")
            step = float(node.attrs["step"])
            if step <= 0:
                raise errors.TransformError(
                    f"{node.id}: quantizer step must be > 0")
            out.append(LoweredNode(
                id=node.id, kind="quantize_act", step=step,
                scale=np.ones(depth), offset=np.zeros(depth)))
            domain, step_in = "u2", step
            i += 1
        elif node.kind == "maxpool":
            if domain != "u2":
                raise errors.UnfoldableSubgraph(
                    f"{node.id}: maxpool supported only on quantized codes "
                    f"(domain {domain}); reorder it after the quantizer")
            out.append(LoweredNode(
                id=node.id, kind="maxpool", source_id=node.id,
                window=node.attrs["window"], stride=node.attrs["stride"]))
            i += 1
        elif node.kind == "output":
            out.append(LoweredNode(id=node.id, kind="output"))
            i += 1
        else:
            raise errors.UnfoldableSubgraph(
                f"node {node.id!r} of kind {node.kind!r} outside any "
                f"foldable chain")
    if input_shape is None:
        raise errors.ModelFormatError("graph has no input node")
    return LoweredGraph(nodes=out, input_shape=input_shape)


def _lower_conv(g: Graph, seq: list[Node], i: int, out: list[LoweredNode],
                domain: str, step_in: float | None, is_last: bool) -> int:
    node = seq[i]
    blob = g.blobs[node.weights]
    od = node.attrs["od"]
    chain: list[Node] = []
    leaky: float | None = None
    j = i + 1
    while j < len(seq) and seq[j].kind in _CHAIN_KINDS + ("leaky_relu",):
        if seq[j].kind == "leaky_relu":
            if leaky is not None:
                raise errors.UnfoldableSubgraph(
                    f"{seq[j].id}: multiple activations in one chain")
            leaky = float(seq[j].attrs["slope"])
        else:
            if leaky is not None:
                raise errors.UnfoldableSubgraph(
                    f"{seq[j].id}: affine node after the activation; only a "
                    f"trailing leaky ReLU can be absorbed")
            chain.append(seq[j])
        j += 1
    has_q = j < len(seq) and seq[j].kind == "quantize_act"
    if leaky is not None and leaky <= 0:
        raise errors.NonMonotoneActivation(
            f"leaky slope must be > 0, got {leaky}")

    if conv_is_binarized(node):
        if domain != "u2":
            raise errors.UnfoldableSubgraph(
                f"{node.id}: binarized conv needs quantized input "
                f"(domain {domain})")
        packed = _pack_conv_weights(blob)
        acc_bound = 3 * node.attrs["kh"] * node.attrs["kw"] * node.attrs["kd"]
        if acc_bound > np.iinfo(np.int32).max:
            raise errors.TransformError(
                f"{node.id}: accumulator bound {acc_bound} exceeds i32")
        out.append(LoweredNode(
            id=node.id, kind="binconv", source_id=node.id,
            stride=node.attrs["stride"], pad=node.attrs["pad"],
            weights_packed=packed))
        if has_q:
            fold = fold_affine_chain(chain, od)
            step = float(seq[j].attrs["step"])
            th = clamp_thresholds(
                affine_to_thresholds(fold, step, leaky), acc_bound)
            out.append(LoweredNode(
                id=seq[j].id, kind="threshold", source_id=node.id,
                step=step, thresholds=th))
            return j + 1
        if chain or leaky is not None or not is_last:
            raise errors.UnfoldableSubgraph(
                f"{node.id}: binarized conv must be followed by a quantizer "
                f"or be the final conv")
        return j
    # unquantized convolution stays dense
    bias = node.attrs.get("bias")
    out.append(LoweredNode(
        id=node.id, kind="conv_f32", source_id=node.id,
        stride=node.attrs["stride"], pad=node.attrs["pad"],
        dequant_step=step_in if domain == "u2" else None,
        weights_f32=_as_f32_stack(blob),
        bias=None if bias is None else np.asarray(bias, dtype=np.float32)))
    if has_q:
        fold = fold_affine_chain(chain, od)
        step = float(seq[j].attrs["step"])
        if step <= 0:
            raise errors.TransformError(f"{seq[j].id}: step must be > 0")
        # a trailing leaky ReLU never changes the unsigned code: cut-points
        # are positive and the map fixes positive values exactly
        out.append(LoweredNode(
            id=seq[j].id, kind="quantize_act", source_id=node.id,
            step=step, scale=fold.scale, offset=fold.offset))
        return j + 1
    if chain or leaky is not None:
        raise errors.UnfoldableSubgraph(
            f"{node.id}: affine chain without a following quantizer cannot "
            f"be lowered")
    return j


# ---------------------------------------------------------------------------
# lowered container serialization
# ---------------------------------------------------------------------------

def serialize_lowered_model(lg: LoweredGraph) -> bytes:
    nodes_json = []
    blob_entries = []
    payloads = []

    def add_blob(entry: dict, payload: bytes) -> int:
        entry["byte_length"] = len(payload)
        blob_entries.append(entry)
        payloads.append(payload)
        return len(blob_entries) - 1

    ih, iw, idd = lg.input_shape
    for n in lg.nodes:
        obj: dict = {"id": n.id, "kind": n.kind, "source": n.source_id}
        if n.kind == "input":
            obj |= {"height": ih, "width": iw, "depth": idd}
        elif n.kind == "conv_f32":
            w = n.weights_f32
            idx = add_blob(
                {"height": w.desc.height, "width": w.desc.width,
                 "depth": w.desc.depth, "count": w.count, "dtype": "f32",
                 "layout": w.desc.layout},
                w.data.astype("<f4", copy=False).tobytes())
            obj |= {"stride": n.stride, "pad": n.pad,
                    "dequant_step": n.dequant_step, "weights": idx,
                    "bias": None if n.bias is None
                    else [float(x) for x in n.bias]}
        elif n.kind == "quantize_act":
            obj |= {"step": n.step,
                    "scale": [float(x) for x in n.scale],
                    "offset": [float(x) for x in n.offset]}
        elif n.kind == "binconv":
            w = n.weights_packed
            idx = add_blob(
                {"height": w.desc.height, "width": w.desc.width,
                 "depth": w.desc.depth, "count": w.count, "dtype": "bin1",
                 "layout": w.desc.layout, "packed": True},
                w.to_payload())
            obj |= {"stride": n.stride, "pad": n.pad, "weights": idx}
        elif n.kind == "threshold":
            th = n.thresholds
            obj |= {"step": n.step,
                    "t1": [int(x) for x in th.t[:, 0]],
                    "t2": [int(x) for x in th.t[:, 1]],
                    "t3": [int(x) for x in th.t[:, 2]],
                    "increasing": [bool(x) for x in th.increasing]}
        elif n.kind == "maxpool":
            obj |= {"window": n.window, "stride": n.stride}
        nodes_json.append(obj)
    doc = {"lowered": True, "nodes": nodes_json, "blobs": blob_entries}
    return ir.write_container(doc, payloads)


def parse_lowered_model(data: bytes) -> LoweredGraph:
    doc, offset = ir.read_header(data)
    ir._check_keys(doc, {"lowered", "nodes", "blobs"}, "graph document")
    if not doc.get("lowered", False):
        raise errors.NotLowered(
            "container is a pre-lowering model; use ir.parse_model")
    raws: list[tuple[dict, bytes]] = []
    for i, entry in enumerate(doc["blobs"]):
        ir._check_keys(entry, {"height", "width", "depth", "count", "dtype",
                               "layout", "byte_length", "packed"}, f"blob {i}")
        want = entry["byte_length"]
        if offset + want > len(data):
            raise errors.TruncatedBlob(
                f"blob {i}: needs {want} bytes at {offset}, file has {len(data)}")
        raws.append((entry, data[offset:offset + want]))
        offset += want
    if offset != len(data):
        raise errors.ModelFormatError("trailing bytes after last blob")

    def blob_at(idx: int, where: str):
        if idx < 0 or idx >= len(raws):
            raise errors.TruncatedBlob(f"{where}: missing blob {idx}")
        return raws[idx]

    allowed = {
        "input": {"height", "width", "depth"},
        "conv_f32": {"stride", "pad", "dequant_step", "weights", "bias"},
        "quantize_act": {"step", "scale", "offset"},
        "binconv": {"stride", "pad", "weights"},
        "threshold": {"step", "t1", "t2", "t3", "increasing"},
        "maxpool": {"window", "stride"},
        "output": set(),
    }
    nodes: list[LoweredNode] = []
    input_shape = None
    for k, obj in enumerate(doc["nodes"]):
        kind = obj.get("kind")
        if kind not in LOWERED_KINDS:
            raise errors.ModelFormatError(f"node {k}: unknown kind {kind!r}")
        ir._check_keys(obj, {"id", "kind", "source"} | allowed[kind],
                       f"lowered node {k}")
        n = LoweredNode(id=obj["id"], kind=kind, source_id=obj.get("source"))
        if kind == "input":
            input_shape = (obj["height"], obj["width"], obj["depth"])
        elif kind == "conv_f32":
            entry, raw = blob_at(obj["weights"], obj["id"])
            desc = TensorDesc(entry["height"], entry["width"], entry["depth"],
                              "f32", entry["layout"])
            arr = np.frombuffer(raw, dtype="<f4").copy().reshape(
                (entry["count"], desc.height, desc.width, desc.depth))
            n.weights_f32 = TensorBlob(desc=desc, data=arr,
                                       count=entry["count"])
            n.stride, n.pad = obj["stride"], obj["pad"]
            n.dequant_step = obj["dequant_step"]
            n.bias = None if obj["bias"] is None else \
                np.asarray(obj["bias"], dtype=np.float32)
        elif kind == "quantize_act":
            n.step = obj["step"]
            n.scale = np.asarray(obj["scale"], dtype=np.float64)
            n.offset = np.asarray(obj["offset"], dtype=np.float64)
        elif kind == "binconv":
            entry, raw = blob_at(obj["weights"], obj["id"])
            desc = TensorDesc(entry["height"], entry["width"], entry["depth"],
                              "bin1", entry["layout"])
            n.weights_packed = packed_from_payload(desc, entry["count"], raw)
            n.stride, n.pad = obj["stride"], obj["pad"]
        elif kind == "threshold":
            n.step = obj["step"]
            t = np.stack([obj["t1"], obj["t2"], obj["t3"]], axis=1)
            n.thresholds = ThresholdUnit(
                t=t.astype(np.int32),
                increasing=np.asarray(obj["increasing"], dtype=bool))
        elif kind == "maxpool":
            n.window, n.stride = obj["window"], obj["stride"]
            n.source_id = obj.get("source")
        nodes.append(n)
    if input_shape is None:
        raise errors.ModelFormatError("lowered graph has no input node")
    return LoweredGraph(nodes=nodes, input_shape=input_shape)


def lowered_equal(a: LoweredGraph, b: LoweredGraph) -> bool:
    if a.input_shape != b.input_shape or len(a.nodes) != len(b.nodes):
        return False
    for x, y in zip(a.nodes, b.nodes):
        if (x.id, x.kind, x.source_id, x.stride, x.pad, x.window, x.step,
                x.dequant_step) != \
           (y.id, y.kind, y.source_id, y.stride, y.pad, y.window, y.step,
                y.dequant_step):
            return False
        for ax, ay in ((x.scale, y.scale), (x.offset, y.offset),
                       (x.bias, y.bias)):
            if (ax is None) != (ay is None):
                return False
            if ax is not None and not np.array_equal(ax, ay):
                return False
        if (x.weights_f32 is None) != (y.weights_f32 is None):
            return False
        if x.weights_f32 is not None and not np.array_equal(
                x.weights_f32.data, y.weights_f32.data):
            return False
        if (x.weights_packed is None) != (y.weights_packed is None):
            return False
        if x.weights_packed is not None:
            for p, q in zip(x.weights_packed.planes, y.weights_packed.planes):
                if not np.array_equal(p, q):
                    return False
        if (x.thresholds is None) != (y.thresholds is None):
            return False
        if x.thresholds is not None and not (
                np.array_equal(x.thresholds.t, y.thresholds.t)
                and np.array_equal(x.thresholds.increasing,
                                   y.thresholds.increasing)):
            return False
    return True

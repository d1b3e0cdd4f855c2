"""Model container format and in-memory graph representation.

A model file is: magic ``BQN1`` | version u16 LE | graph-JSON length u64 LE |
graph JSON (UTF-8) | raw blob payloads concatenated in blob-table order.
The JSON section is strict: unknown keys anywhere are errors.

Pre-lowering blobs are stored f32 (4 bytes/element) or byte-coded u2/bin1
(1 byte/element, bin1 coded 0x00=-1 / 0x01=+1).  Packed blobs (lowered
containers only) store 32-bit words little-endian, plane 0 fully then
plane 1.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import errors

MAGIC = b"BQN1"
VERSION = 1

DTYPES = ("f32", "u2", "bin1", "i32")
LAYOUT_HEIGHT_INNERMOST = "height_innermost"   # stored Depth x Width x Height
LAYOUT_DEPTH_INNERMOST = "depth_innermost"     # stored Height x Width x Depth
LAYOUTS = (LAYOUT_HEIGHT_INNERMOST, LAYOUT_DEPTH_INNERMOST)

PRE_LOWERING_KINDS = (
    "input", "conv2d", "batchnorm", "scale", "bias", "leaky_relu",
    "quantize_act", "binarize_w", "maxpool", "output",
)

# Per-kind attribute key sets (strict: anything else is a format error).
_NODE_ATTR_KEYS = {
    "input": {"height", "width", "depth"},
    "conv2d": {"kh", "kw", "kd", "od", "stride", "pad", "binarized", "bias",
               "weights_from"},
    "batchnorm": {"gamma", "beta", "mean", "var", "eps"},
    "scale": {"values"},
    "bias": {"values"},
    "leaky_relu": {"slope"},
    "quantize_act": {"step"},
    "binarize_w": set(),
    "maxpool": {"window", "stride"},
    "output": set(),
}

AFFINE_CHAIN_KINDS = ("batchnorm", "scale", "bias")


def words_per_dbar(depth: int) -> int:
    return (depth + 31) // 32


@dataclass(frozen=True)
class TensorDesc:
    """Shape and storage description of a 3-D tensor (one kernel or map)."""

    height: int
    width: int
    depth: int
    dtype: str
    layout: str

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or self.depth < 1:
            raise ValueError(f"all dims must be >= 1, got {self}")
        if self.dtype not in DTYPES:
            raise ValueError(f"unknown dtype {self.dtype!r}")
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}")

    @property
    def elements(self) -> int:
        return self.height * self.width * self.depth


@dataclass
class TensorBlob:
    """A stack of ``count`` tensors sharing one desc (count=1 for maps).

    ``data`` is shaped in storage order with kernels stacked outermost:
    (count, H, W, D) for depth-innermost and (count, D, W, H) for
    height-innermost, so the flattened array is exactly the container's
    byte order.
    """

    desc: TensorDesc
    data: np.ndarray
    count: int = 1

    def __post_init__(self):
        expected = (self.count,) + self.storage_shape()
        if tuple(self.data.shape) != expected:
            raise ValueError(
                f"data shape {self.data.shape} != expected {expected}")

    def storage_shape(self) -> tuple[int, int, int]:
        d = self.desc
        if d.layout == LAYOUT_DEPTH_INNERMOST:
            return (d.height, d.width, d.depth)
        return (d.depth, d.width, d.height)

    def kernel_hwd(self, i: int) -> np.ndarray:
        """The i-th stacked tensor indexed as [h, w, d] regardless of layout."""
        a = self.data[i]
        if self.desc.layout == LAYOUT_DEPTH_INNERMOST:
            return a
        return a.transpose(2, 1, 0)

    def single_hwd(self) -> np.ndarray:
        if self.count != 1:
            raise ValueError("single_hwd on a stacked blob")
        return self.kernel_hwd(0)


def make_blob(height, width, depth, dtype, layout, data, count=1) -> TensorBlob:
    desc = TensorDesc(height, width, depth, dtype, layout)
    return TensorBlob(desc=desc, data=data, count=count)


@dataclass
class Node:
    id: str
    kind: str
    inputs: list[str] = field(default_factory=list)
    attrs: dict = field(default_factory=dict)
    weights: int | None = None   # blob index


@dataclass
class Graph:
    nodes: dict[str, Node]
    topo_order: list[str]
    blobs: dict[int, TensorBlob]

    def node(self, nid: str) -> Node:
        return self.nodes[nid]

    def conv_ids(self) -> list[str]:
        return [n for n in self.topo_order if self.nodes[n].kind == "conv2d"]


@dataclass
class Diagnostic:
    severity: str      # "error" | "warning"
    node_id: str
    rule: str
    message: str

    def __str__(self):
        return f"[{self.severity}] {self.node_id}: {self.rule}: {self.message}"


# ---------------------------------------------------------------------------
# container reading / writing
# ---------------------------------------------------------------------------

_DTYPE_NP = {"f32": np.dtype("<f4"), "u2": np.dtype("u1"), "bin1": np.dtype("u1")}


def _check_keys(obj: dict, allowed: set, where: str):
    unknown = set(obj) - allowed
    if unknown:
        raise errors.ModelFormatError(
            f"unknown keys {sorted(unknown)} in {where}")


def read_header(data: bytes) -> tuple[dict, int]:
    """Parse magic/version/JSON; return (graph json dict, blob offset)."""
    if len(data) < 14:
        raise errors.BadMagic("file shorter than fixed header")
    if data[:4] != MAGIC:
        raise errors.BadMagic(f"expected magic {MAGIC!r}, got {data[:4]!r}")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise errors.VersionUnsupported(f"version {version}, supported: {VERSION}")
    (json_len,) = struct.unpack_from("<Q", data, 6)
    if 14 + json_len > len(data):
        raise errors.TruncatedBlob(
            f"graph JSON claims {json_len} bytes but file ends at {len(data)}")
    doc = json.loads(data[14:14 + json_len].decode("utf-8"))
    return doc, 14 + json_len


def write_container(doc: dict, payloads: list[bytes]) -> bytes:
    body = json.dumps(doc, separators=(",", ":")).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", VERSION)
    out += struct.pack("<Q", len(body))
    out += body
    for p in payloads:
        out += p
    return bytes(out)


def _blob_entry_bytes(entry: dict, index: int) -> int:
    h, w, d, count = entry["height"], entry["width"], entry["depth"], entry["count"]
    if entry.get("packed", False):
        planes = 2 if entry["dtype"] == "u2" else 1
        return planes * 4 * h * w * words_per_dbar(d) * count
    per_elt = 4 if entry["dtype"] == "f32" else 1
    return per_elt * h * w * d * count


def _parse_blob_table(doc, data, blob_offset) -> tuple[dict[int, TensorBlob], int]:
    blobs: dict[int, TensorBlob] = {}
    offset = blob_offset
    for i, entry in enumerate(doc.get("blobs", [])):
        _check_keys(entry, {"height", "width", "depth", "count", "dtype",
                            "layout", "byte_length", "packed"}, f"blob {i}")
        if entry.get("packed", False):
            raise errors.ModelFormatError(
                f"blob {i}: packed blobs are only valid in lowered containers")
        want = _blob_entry_bytes(entry, i)
        if entry["byte_length"] != want:
            raise errors.TruncatedBlob(
                f"blob {i}: byte_length {entry['byte_length']} != "
                f"desc element count implies {want}")
        if offset + want > len(data):
            raise errors.TruncatedBlob(
                f"blob {i}: needs {want} bytes at offset {offset}, "
                f"file ends at {len(data)}")
        raw = data[offset:offset + want]
        offset += want
        desc = TensorDesc(entry["height"], entry["width"], entry["depth"],
                          entry["dtype"], entry["layout"])
        arr = np.frombuffer(raw, dtype=_DTYPE_NP[entry["dtype"]]).copy()
        count = entry["count"]
        if entry["dtype"] == "u2" and arr.size and int(arr.max()) > 3:
            raise errors.ModelFormatError(f"blob {i}: u2 code out of range")
        if entry["dtype"] == "bin1":
            if arr.size and not np.isin(arr, (0, 1)).all():
                raise errors.ModelFormatError(f"blob {i}: bad bin1 coding byte")
            arr = arr.astype(np.int8) * 2 - 1   # 0x00 -> -1, 0x01 -> +1
        shape = (count,) + (
            (desc.height, desc.width, desc.depth)
            if desc.layout == LAYOUT_DEPTH_INNERMOST
            else (desc.depth, desc.width, desc.height))
        blobs[i] = TensorBlob(desc=desc, data=arr.reshape(shape), count=count)
    if offset != len(data):
        raise errors.ModelFormatError(
            f"{len(data) - offset} trailing bytes after last blob")
    return blobs, offset


def _blob_payload(blob: TensorBlob) -> bytes:
    if blob.desc.dtype == "f32":
        return blob.data.astype("<f4", copy=False).tobytes()
    if blob.desc.dtype == "bin1":
        return ((blob.data.astype(np.int16) + 1) // 2).astype("u1").tobytes()
    return blob.data.astype("u1", copy=False).tobytes()


def _blob_entry(blob: TensorBlob) -> dict:
    d = blob.desc
    entry = {"height": d.height, "width": d.width, "depth": d.depth,
             "count": blob.count, "dtype": d.dtype, "layout": d.layout}
    entry["byte_length"] = _blob_entry_bytes(entry, -1)
    return entry


def _node_to_json(node: Node) -> dict:
    out = {"id": node.id, "kind": node.kind, "inputs": list(node.inputs),
           "attrs": node.attrs}
    if node.weights is not None:
        out["weights"] = node.weights
    return out


def _node_from_json(obj: dict, where: str) -> Node:
    _check_keys(obj, {"id", "kind", "inputs", "attrs", "weights"}, where)
    kind = obj["kind"]
    if kind not in PRE_LOWERING_KINDS:
        raise errors.ModelFormatError(f"{where}: unknown node kind {kind!r}")
    _check_keys(obj["attrs"], _NODE_ATTR_KEYS[kind], f"{where} attrs")
    return Node(id=obj["id"], kind=kind, inputs=list(obj["inputs"]),
                attrs=dict(obj["attrs"]), weights=obj.get("weights"))


def _topo_sort(nodes: dict[str, Node], order_hint: list[str]) -> list[str]:
    """Stable Kahn topo sort over activation edges; markers ride with their conv."""
    indeg = {nid: 0 for nid in nodes}
    consumers: dict[str, list[str]] = {nid: [] for nid in nodes}
    for nid in order_hint:
        node = nodes[nid]
        for src in node.inputs:
            if src not in nodes:
                raise errors.DanglingInput(
                    f"node {nid!r} consumes unknown node {src!r}")
            consumers[src].append(nid)
            indeg[nid] += 1
        marker = node.attrs.get("weights_from")
        if marker is not None:
            if marker not in nodes:
                raise errors.DanglingInput(
                    f"node {nid!r} references unknown weight marker {marker!r}")
            consumers[marker].append(nid)
            indeg[nid] += 1
    ready = [nid for nid in order_hint if indeg[nid] == 0]
    order: list[str] = []
    while ready:
        nid = ready.pop(0)
        order.append(nid)
        for c in consumers[nid]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    if len(order) != len(nodes):
        stuck = next(nid for nid in order_hint if indeg[nid] > 0)
        raise errors.CyclicGraph(f"cycle through node {stuck!r}")
    return order


def _check_structure(g: Graph):
    kinds = [g.nodes[n].kind for n in g.topo_order]
    if kinds.count("input") != 1 or kinds.count("output") != 1:
        raise errors.ModelFormatError(
            f"graph needs exactly one input and one output node, "
            f"got {kinds.count('input')} input(s) / {kinds.count('output')} output(s)")
    # markers must hang off at most one conv's weight edge
    marker_refs: dict[str, list[str]] = {}
    for nid, node in g.nodes.items():
        m = node.attrs.get("weights_from")
        if m is not None:
            if node.kind != "conv2d":
                raise errors.ModelFormatError(
                    f"weights_from on non-conv node {nid!r}")
            if g.nodes[m].kind != "binarize_w":
                raise errors.ModelFormatError(
                    f"node {nid!r} weights_from must name a binarize_w node")
            marker_refs.setdefault(m, []).append(nid)
    for m, refs in marker_refs.items():
        if len(refs) > 1:
            raise errors.ModelFormatError(
                f"binarize_w node {m!r} referenced by several convs: {refs}")
    # reachability from input along activation edges; weight-edge markers
    # are decorations and exempt (prune_weight_quant_subgraph polices them)
    input_id = next(n for n in g.topo_order if g.nodes[n].kind == "input")
    reached = {input_id}
    changed = True
    while changed:
        changed = False
        for nid, node in g.nodes.items():
            if nid in reached or node.kind == "binarize_w":
                continue
            if any(d in reached for d in node.inputs):
                reached.add(nid)
                changed = True
    unreachable = [n for n in g.topo_order
                   if n not in reached and g.nodes[n].kind != "binarize_w"]
    if unreachable:
        raise errors.DanglingInput(
            f"nodes not reachable from input: {unreachable}")
    # weight references must exist
    for nid, node in g.nodes.items():
        if node.weights is not None and node.weights not in g.blobs:
            raise errors.TruncatedBlob(
                f"node {nid!r} references missing blob {node.weights}")


def parse_model(data: bytes) -> Graph:
    """Parse a pre-lowering container into a Graph (inverse of serialize_model)."""
    doc, blob_offset = read_header(data)
    _check_keys(doc, {"lowered", "nodes", "blobs"}, "graph document")
    if doc.get("lowered", False):
        raise errors.AlreadyLowered(
            "container is lowered; use transform.parse_lowered_model")
    nodes: dict[str, Node] = {}
    order_hint: list[str] = []
    for i, obj in enumerate(doc["nodes"]):
        node = _node_from_json(obj, f"node {i}")
        if node.id in nodes:
            raise errors.ModelFormatError(f"duplicate node id {node.id!r}")
        nodes[node.id] = node
        order_hint.append(node.id)
    blobs, _ = _parse_blob_table(doc, data, blob_offset)
    topo = _topo_sort(nodes, order_hint)
    g = Graph(nodes=nodes, topo_order=topo, blobs=blobs)
    _check_structure(g)
    return g


def serialize_model(g: Graph) -> bytes:
    """Serialize a Graph; parse_model(serialize_model(g)) == g structurally."""
    doc = {
        "lowered": False,
        "nodes": [_node_to_json(g.nodes[nid]) for nid in g.topo_order],
        "blobs": [_blob_entry(g.blobs[i]) for i in sorted(g.blobs)],
    }
    payloads = [_blob_payload(g.blobs[i]) for i in sorted(g.blobs)]
    return write_container(doc, payloads)


def structural_equal(a: Graph, b: Graph) -> bool:
    if a.topo_order != b.topo_order or sorted(a.blobs) != sorted(b.blobs):
        return False
    for nid in a.topo_order:
        na, nb = a.nodes[nid], b.nodes[nid]
        if (na.kind, na.inputs, na.attrs, na.weights) != \
           (nb.kind, nb.inputs, nb.attrs, nb.weights):
            return False
    for i in a.blobs:
        ba, bb = a.blobs[i], b.blobs[i]
        if ba.desc != bb.desc or ba.count != bb.count:
            return False
        if _blob_payload(ba) != _blob_payload(bb):
            return False
    return True


# ---------------------------------------------------------------------------
# shape inference
# ---------------------------------------------------------------------------

def infer_shapes(g: Graph) -> dict[str, tuple[int, int, int]]:
    """Output (H, W, D) per node, walking topo order."""
    shapes: dict[str, tuple[int, int, int]] = {}
    for nid in g.topo_order:
        node = g.nodes[nid]
        if node.kind == "input":
            a = node.attrs
            shapes[nid] = (a["height"], a["width"], a["depth"])
        elif node.kind == "binarize_w":
            continue
        elif node.kind == "conv2d":
            ih, iw, _ = shapes[node.inputs[0]]
            a = node.attrs
            oh = (ih + 2 * a["pad"] - a["kh"]) // a["stride"] + 1
            ow = (iw + 2 * a["pad"] - a["kw"]) // a["stride"] + 1
            shapes[nid] = (oh, ow, a["od"])
        elif node.kind == "maxpool":
            ih, iw, d = shapes[node.inputs[0]]
            a = node.attrs
            oh = (ih - a["window"]) // a["stride"] + 1
            ow = (iw - a["window"]) // a["stride"] + 1
            shapes[nid] = (oh, ow, d)
        else:
            shapes[nid] = shapes[node.inputs[0]]
    return shapes


def conv_is_binarized(node: Node) -> bool:
    return bool(node.attrs.get("binarized")) or \
        node.attrs.get("weights_from") is not None


# ---------------------------------------------------------------------------
# design-assumption validation
# ---------------------------------------------------------------------------

def validate_graph(g: Graph) -> list[Diagnostic]:
    """Check the hardware design assumptions; returns diagnostics, raises nothing.

    Binarized convolutions need output maps in multiples of 8 and input maps
    in multiples of 16; unquantized (typically first/last) convolutions are
    exempt.  Spatial size is unconstrained.
    """
    diags: list[Diagnostic] = []
    shapes = infer_shapes(g)
    convs = g.conv_ids()
    for nid in convs:
        node = g.nodes[nid]
        a = node.attrs
        producer_depth = shapes[node.inputs[0]][2]
        if a["kd"] != producer_depth:
            diags.append(Diagnostic(
                "error", nid, "kernel-depth-mismatch",
                f"kernel depth {a['kd']} != producer output depth {producer_depth}"))
        if a["stride"] < 1:
            diags.append(Diagnostic(
                "error", nid, "stride", f"stride {a['stride']} < 1"))
        if a["pad"] != 0 and not (
                a["kw"] % 2 == 1 and a["kh"] % 2 == 1
                and a["pad"] == (a["kw"] - 1) // 2
                and a["pad"] == (a["kh"] - 1) // 2):
            diags.append(Diagnostic(
                "error", nid, "pad",
                f"pad {a['pad']} must be 0 or (Kw-1)/2 for odd kernels"))
        if conv_is_binarized(node):
            if a["od"] % 8 != 0:
                diags.append(Diagnostic(
                    "error", nid, "od-multiple-of-8",
                    f"binarized conv output maps {a['od']} not a multiple of 8"))
            if a["kd"] % 16 != 0:
                diags.append(Diagnostic(
                    "error", nid, "id-multiple-of-16",
                    f"binarized conv input maps {a['kd']} not a multiple of 16"))
    # interior convs should carry explicit quantization markers
    interior = convs[1:-1] if len(convs) >= 2 else []
    for nid in interior:
        if not conv_is_binarized(g.nodes[nid]):
            diags.append(Diagnostic(
                "warning", nid, "unmarked-interior-conv",
                "interior conv has no binarize_w marker; it will stay f32"))
    return diags


# ---------------------------------------------------------------------------
# model size report
# ---------------------------------------------------------------------------

@dataclass
class LayerSize:
    node_id: str
    dense_bytes: int
    packed_bytes: int


@dataclass
class SizeReport:
    layers: list[LayerSize]
    dense_total: int
    packed_total: int

    @property
    def ratio(self) -> float:
        return self.dense_total / self.packed_total

    def to_json(self) -> dict:
        return {
            "layers": [{"node": l.node_id, "dense_bytes": l.dense_bytes,
                        "packed_bytes": l.packed_bytes} for l in self.layers],
            "dense_total_bytes": self.dense_total,
            "packed_total_bytes": self.packed_total,
            "dense_total_mib": self.dense_total / 2**20,
            "packed_total_mib": self.packed_total / 2**20,
            "ratio": self.ratio,
        }

    def render(self) -> str:
        lines = [f"{'layer':<12} {'dense':>14} {'packed':>14}"]
        for l in self.layers:
            lines.append(f"{l.node_id:<12} {l.dense_bytes:>14,} {l.packed_bytes:>14,}")
        lines.append(f"{'total':<12} {self.dense_total:>14,} {self.packed_total:>14,}")
        lines.append(f"dense  {self.dense_total / 2**20:10.2f} MiB")
        lines.append(f"packed {self.packed_total / 2**20:10.2f} MiB")
        lines.append(f"compression ratio {self.ratio:.2f}x")
        return "\n".join(lines)


def _chain_param_bytes(g: Graph, conv_id: str) -> int:
    """f32 bytes of per-channel parameters in the chain following a conv."""
    total = 0
    nid = conv_id
    while True:
        consumers = [c for c in g.topo_order if nid in g.nodes[c].inputs]
        if len(consumers) != 1:
            break
        node = g.nodes[consumers[0]]
        if node.kind == "batchnorm":
            total += 4 * 4 * len(node.attrs["gamma"])
        elif node.kind in ("scale", "bias"):
            total += 4 * len(node.attrs["values"])
        elif node.kind == "leaky_relu":
            pass   # scalar slope: metadata
        else:
            break
        nid = node.id
    return total


def model_size_report(g: Graph, lowered) -> SizeReport:
    """Per-conv dense (f32) vs packed (post-lowering) byte accounting.

    Dense counts conv weights + bias + per-channel chain parameters at f32.
    Packed counts what the lowered container materializes per layer: packed
    weight words, threshold vectors (3 x i32 + direction byte per channel),
    quantizer affine vectors, and unquantized layers kept at f32.  Scalar
    steps and structural JSON are metadata and excluded on both sides.
    """
    packed_by_conv: dict[str, int] = {}
    for ln in lowered.nodes:
        src = ln.source_id
        if src is None:
            continue
        packed_by_conv.setdefault(src, 0)
        packed_by_conv[src] += ln.param_bytes()
    layers = []
    for nid in g.conv_ids():
        node = g.nodes[nid]
        blob = g.blobs[node.weights] if node.weights is not None \
            else g.blobs[g.nodes[node.attrs["weights_from"]].weights]
        dense = 4 * blob.desc.elements * blob.count
        if node.attrs.get("bias") is not None:
            dense += 4 * len(node.attrs["bias"])
        dense += _chain_param_bytes(g, nid)
        layers.append(LayerSize(nid, dense, packed_by_conv.get(nid, 0)))
    dense_total = sum(l.dense_bytes for l in layers)
    packed_total = sum(l.packed_bytes for l in layers)
    return SizeReport(layers=layers, dense_total=dense_total,
                      packed_total=packed_total)

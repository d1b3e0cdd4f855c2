"""Analytic PE/PEN accelerator model: sizing, cycles, and DRAM traffic.

The processing engine (PEN) is a row of P processing elements; each PE
consumes one packed 32-bit word per cycle against one kernel, so a binary
convolution layer takes Oh*Ow*ceil(Od/P)*Kh*Kw*ceil(Kd/32) compute cycles.

The memory model measures external input-fetch traffic per activation
plane at element granularity:

* the depth-innermost accelerator walks output windows in raster order,
  reading one contiguous row segment (clipped Kw x Kd elements) per valid
  kernel row;
* the width-contiguous baseline accumulates partial sums one depth slice
  at a time (the natural loop for depth-outer storage), reading one
  clipped-Kw segment per (slice, window, kernel row).

Back-to-back reads at consecutive addresses continue the same burst, so
maximal contiguous intervals of the trace form runs; a run of L elements
costs ceil(L/32) four-byte beats and splits into ceil(beats/B) transactions
of at most B beats.  Nothing is cached between windows: overlapping windows
refetch their inputs (worst case).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import errors
from .ir import words_per_dbar
from .layout import ORDER_DEPTH_INNERMOST, ORDER_WIDTH_INNERMOST
from .transform import LoweredGraph, LoweredNode, walk_shapes

ACT_PLANES = 2   # u2 activations: two bit planes with identical patterns


@dataclass
class BurstModel:
    issue_latency_cycles: int = 8
    max_burst_beats: int = 16
    bytes_per_beat: int = 4


@dataclass
class AccelConfig:
    num_parallel_kernels: int
    local_mem_budget: int = 512 * 1024
    pe_word_bits: int = 32
    burst: BurstModel = field(default_factory=BurstModel)

    def to_json(self) -> dict:
        return {
            "num_parallel_kernels": self.num_parallel_kernels,
            "local_mem_budget": self.local_mem_budget,
            "pe_word_bits": self.pe_word_bits,
            "burst": {
                "issue_latency_cycles": self.burst.issue_latency_cycles,
                "max_burst_beats": self.burst.max_burst_beats,
                "bytes_per_beat": self.burst.bytes_per_beat,
            },
        }


@dataclass
class LayerEstimate:
    node_id: str
    ordering: str
    compute_cycles: int
    mem_transactions: int
    mem_beats: int
    mem_cycles: int
    bound: int

    def to_json(self) -> dict:
        return {"node": self.node_id, "ordering": self.ordering,
                "compute_cycles": self.compute_cycles,
                "mem_transactions": self.mem_transactions,
                "mem_beats": self.mem_beats,
                "mem_cycles": self.mem_cycles,
                "bound": self.bound}


# ---------------------------------------------------------------------------
# PEN sizing
# ---------------------------------------------------------------------------

def _working_set_bytes(lg: LoweredGraph, p: int) -> int:
    """Peak local RAM: one input D-bar stripe + P kernel word-sets + P accs."""
    worst = 0
    for node, in_shape, _ in walk_shapes(lg):
        if node.kind != "binconv":
            continue
        w = node.weights_packed.desc
        stripe = ACT_PLANES * in_shape[1] * words_per_dbar(in_shape[2]) * 4
        kernels = p * w.height * w.width * words_per_dbar(w.depth) * 4
        worst = max(worst, stripe + kernels + 4 * p)
    return worst


def choose_pen(lg: LoweredGraph, budget: AccelConfig | None = None) -> AccelConfig:
    """Pick P: the largest power of two <= min input depth that fits local RAM.

    Prefers a P dividing every binarized layer's output-map count; falls
    back to the plain range rule (the cycle model then rounds Od/P up).
    Never sizes below 16.
    """
    base = budget or AccelConfig(num_parallel_kernels=16)
    binconvs = lg.binconvs()
    if not binconvs:
        raise errors.NotBinarizedLayer("lowered graph has no binconv layers")
    min_depth = min(n.weights_packed.desc.depth for n in binconvs)
    ods = [n.weights_packed.count for n in binconvs]
    if min_depth < 16:
        raise errors.BudgetTooSmall(
            f"min layer depth {min_depth} below the 16-PE minimum")
    p = 1 << (min_depth.bit_length() - 1)
    candidates = []
    while p >= 16:
        if _working_set_bytes(lg, p) <= base.local_mem_budget:
            candidates.append(p)
        p //= 2
    if not candidates:
        raise errors.BudgetTooSmall(
            f"budget {base.local_mem_budget} B cannot fit the P=16 working "
            f"set of {_working_set_bytes(lg, 16)} B")
    dividing = [c for c in candidates if all(od % c == 0 for od in ods)]
    chosen = max(dividing) if dividing else max(candidates)
    return AccelConfig(num_parallel_kernels=chosen,
                       local_mem_budget=base.local_mem_budget,
                       pe_word_bits=base.pe_word_bits, burst=base.burst)


# ---------------------------------------------------------------------------
# memory trace
# ---------------------------------------------------------------------------

def _clipped_cols(n_out: int, extent: int, k: int, stride: int, pad: int):
    lo = np.arange(n_out) * stride - pad
    c0 = np.clip(lo, 0, extent)
    c1 = np.clip(lo + k, 0, extent)
    return c0, c1


def _layer_runs(order: str, in_shape, kh: int, kw: int, stride: int,
                pad: int) -> tuple[np.ndarray, np.ndarray]:
    """Run (start, length) arrays of the input-fetch trace of one plane."""
    ih, iw, id_ = in_shape
    oh = (ih + 2 * pad - kh) // stride + 1
    ow = (iw + 2 * pad - kw) // stride + 1
    rows = (np.arange(oh) * stride - pad)[:, None] + np.arange(kh)[None, :]
    rvalid = (rows >= 0) & (rows < ih)          # (oh, kh)
    c0, c1 = _clipped_cols(ow, iw, kw, stride, pad)
    seg = c1 - c0                                # (ow,)

    if order == ORDER_DEPTH_INNERMOST:
        # trace order: window raster (y, x), kernel row innermost
        start = (rows[:, None, :] * iw + c0[None, :, None]) * id_
        length = np.broadcast_to(seg[None, :, None] * id_, start.shape)
        mask = np.broadcast_to(rvalid[:, None, :], start.shape) & (length > 0)
        return start[mask], length[mask]
    if order == ORDER_WIDTH_INNERMOST:
        # trace order: depth slice, then window raster, kernel row innermost
        base = rows[:, None, :] * iw + c0[None, :, None]       # (oh, ow, kh)
        length2 = np.broadcast_to(seg[None, :, None], base.shape)
        mask = np.broadcast_to(rvalid[:, None, :], base.shape) & (length2 > 0)
        block_start = base[mask]
        block_len = length2[mask]
        offs = np.arange(id_, dtype=np.int64) * (ih * iw)
        start = (offs[:, None] + block_start[None, :]).ravel()
        length = np.broadcast_to(block_len[None, :],
                                 (id_, block_len.size)).ravel()
        return start, length
    raise ValueError(f"unsupported trace ordering {order!r}")


def _merge_runs(start: np.ndarray, length: np.ndarray):
    """Fuse consecutive trace runs when one ends where the next begins."""
    if start.size == 0:
        return start, length
    start = start.astype(np.int64)
    length = length.astype(np.int64)
    ends = start + length
    new_burst = np.empty(start.size, dtype=bool)
    new_burst[0] = True
    new_burst[1:] = start[1:] != ends[:-1]
    idx = np.flatnonzero(new_burst)
    merged_len = np.add.reduceat(length, idx)
    return start[idx], merged_len


def _traffic(order: str, in_shape, kh, kw, stride, pad,
             burst: BurstModel) -> tuple[int, int]:
    """(transactions, beats) over both activation planes."""
    start, length = _merge_runs(*_layer_runs(order, in_shape, kh, kw,
                                             stride, pad))
    beats = (length + 31) // 32
    txns = (beats + burst.max_burst_beats - 1) // burst.max_burst_beats
    return ACT_PLANES * int(txns.sum()), ACT_PLANES * int(beats.sum())


def estimate_layer(node: LoweredNode, in_shape: tuple[int, int, int],
                   cfg: AccelConfig, ordering: str) -> LayerEstimate:
    """Compute/memory cycle estimate of one binconv layer under an ordering."""
    if node.kind != "binconv":
        raise errors.NotBinarizedLayer(
            f"{node.id}: estimate_layer models binconv layers, got {node.kind}")
    w = node.weights_packed.desc
    od = node.weights_packed.count
    oh = (in_shape[0] + 2 * node.pad - w.height) // node.stride + 1
    ow = (in_shape[1] + 2 * node.pad - w.width) // node.stride + 1
    p = cfg.num_parallel_kernels
    compute = oh * ow * ((od + p - 1) // p) * w.height * w.width * \
        words_per_dbar(w.depth)
    txns, beats = _traffic(ordering, in_shape, w.height, w.width,
                           node.stride, node.pad, cfg.burst)
    mem_cycles = txns * cfg.burst.issue_latency_cycles + beats
    return LayerEstimate(
        node_id=node.id, ordering=ordering, compute_cycles=compute,
        mem_transactions=txns, mem_beats=beats, mem_cycles=mem_cycles,
        bound=max(compute, mem_cycles))


# ---------------------------------------------------------------------------
# ordering comparison report
# ---------------------------------------------------------------------------

@dataclass
class OrderingReport:
    config: AccelConfig
    layers: list[dict]
    totals: dict

    def to_json(self) -> dict:
        return {"config": self.config.to_json(), "layers": self.layers,
                "totals": self.totals}

    def to_csv(self) -> str:
        cols = ["node", "ordering", "compute_cycles", "mem_transactions",
                "mem_beats", "mem_cycles", "bound"]
        lines = [",".join(cols)]
        for layer in self.layers:
            for est in layer["estimates"].values():
                lines.append(",".join(str(est[c]) for c in cols))
        return "\n".join(lines) + "\n"

    def render(self) -> str:
        lines = [f"PEN width P={self.config.num_parallel_kernels}",
                 f"{'layer':<10} {'compute':>12} {'txn depth':>12} "
                 f"{'txn width':>12} {'ratio':>8}"]
        for layer in self.layers:
            d = layer["estimates"]["depth_innermost"]
            w = layer["estimates"]["width_innermost"]
            lines.append(
                f"{layer['node']:<10} {d['compute_cycles']:>12,} "
                f"{d['mem_transactions']:>12,} {w['mem_transactions']:>12,} "
                f"{layer['transaction_ratio']:>8.2f}")
        t = self.totals
        lines.append(
            f"{'total':<10} {t['compute_cycles']:>12,} "
            f"{t['depth_innermost']['mem_transactions']:>12,} "
            f"{t['width_innermost']['mem_transactions']:>12,} "
            f"{t['transaction_ratio']:>8.2f}")
        return "\n".join(lines)


def compare_orderings(lg: LoweredGraph, cfg: AccelConfig | None = None,
                      orderings: tuple[str, str] = (ORDER_DEPTH_INNERMOST,
                                                    ORDER_WIDTH_INNERMOST)
                      ) -> OrderingReport:
    """Per-layer and total estimates of the proposed vs baseline ordering."""
    if cfg is None:
        cfg = choose_pen(lg)
    layers = []
    totals = {o: {"mem_transactions": 0, "mem_beats": 0, "mem_cycles": 0}
              for o in orderings}
    total_compute = 0
    for node, in_shape, _ in walk_shapes(lg):
        if node.kind != "binconv":
            continue
        estimates = {}
        for o in orderings:
            est = estimate_layer(node, in_shape, cfg, o)
            estimates[o] = est.to_json()
            totals[o]["mem_transactions"] += est.mem_transactions
            totals[o]["mem_beats"] += est.mem_beats
            totals[o]["mem_cycles"] += est.mem_cycles
        total_compute += estimates[orderings[0]]["compute_cycles"]
        ratio = estimates[orderings[1]]["mem_transactions"] / \
            max(1, estimates[orderings[0]]["mem_transactions"])
        layers.append({"node": node.id, "input_shape": list(in_shape),
                       "estimates": estimates, "transaction_ratio": ratio})
    totals_out = dict(totals)
    totals_out["compute_cycles"] = total_compute
    totals_out["transaction_ratio"] = (
        totals[orderings[1]]["mem_transactions"]
        / max(1, totals[orderings[0]]["mem_transactions"]))
    return OrderingReport(config=cfg, layers=layers, totals=totals_out)

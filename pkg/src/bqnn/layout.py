"""Data-order conversion, bit-plane packing, and address-run analysis.

Packing convention: each (h, w) position owns ceil(depth/32) little-endian
32-bit words per plane; bit b of word k is depth index k*32+b, pad bits are
zero.  bin1 encodes +1 as bit 1 and -1 as bit 0; a u2 code contributes bit p
to plane p.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import errors
from .ir import (LAYOUT_DEPTH_INNERMOST, LAYOUT_HEIGHT_INNERMOST, TensorBlob,
                 TensorDesc, words_per_dbar)

# Data orders for the address-run / memory-trace analysis.  The proposed
# ordering keeps depth innermost; the two baseline variants keep width or
# height innermost.  Width-innermost is the width-contiguous baseline the
# jump analysis assumes and is the default comparison target.
ORDER_DEPTH_INNERMOST = "depth_innermost"     # H x W x D
ORDER_WIDTH_INNERMOST = "width_innermost"     # D x H x W
ORDER_HEIGHT_INNERMOST = "height_innermost"   # D x W x H
ORDERS = (ORDER_DEPTH_INNERMOST, ORDER_WIDTH_INNERMOST, ORDER_HEIGHT_INNERMOST)


@dataclass
class PackedTensor:
    """Bit-plane packed tensor, depth-innermost, one word row per D-bar."""

    desc: TensorDesc
    planes: list[np.ndarray]   # each (count, H, W, words_per_dbar) uint32
    count: int = 1

    def __post_init__(self):
        if self.desc.layout != LAYOUT_DEPTH_INNERMOST:
            raise errors.WrongLayout("PackedTensor must be depth-innermost")
        expect = (self.count, self.desc.height, self.desc.width,
                  self.words_per_dbar)
        for p in self.planes:
            if tuple(p.shape) != expect or p.dtype != np.uint32:
                raise errors.WrongLayout(
                    f"plane shape {p.shape}/{p.dtype} != expected {expect}/uint32")

    @property
    def words_per_dbar(self) -> int:
        return words_per_dbar(self.desc.depth)

    @property
    def num_planes(self) -> int:
        return len(self.planes)

    def packed_bytes(self) -> int:
        return self.num_planes * 4 * self.desc.height * self.desc.width * \
            self.words_per_dbar * self.count

    def to_payload(self) -> bytes:
        """Container serialization: plane 0 fully, then plane 1, words LE."""
        return b"".join(p.astype("<u4", copy=False).tobytes()
                        for p in self.planes)


def packed_from_payload(desc: TensorDesc, count: int, raw: bytes) -> PackedTensor:
    planes_n = 2 if desc.dtype == "u2" else 1
    wpd = words_per_dbar(desc.depth)
    per_plane = 4 * desc.height * desc.width * wpd * count
    if len(raw) != planes_n * per_plane:
        raise errors.TruncatedBlob(
            f"packed payload {len(raw)} bytes != expected {planes_n * per_plane}")
    planes = []
    for p in range(planes_n):
        arr = np.frombuffer(raw[p * per_plane:(p + 1) * per_plane],
                            dtype="<u4").copy()
        planes.append(arr.reshape(count, desc.height, desc.width, wpd)
                      .astype(np.uint32))
    return PackedTensor(desc=desc, planes=planes, count=count)


@dataclass
class RunStats:
    """Address-run statistics of one convolution's input reads."""

    runs_per_window: int            # maximal contiguous runs, interior window
    run_lengths: list[int]          # lengths for that window, in address order
    total_runs: int                 # summed over every output position

    def __post_init__(self):
        assert self.runs_per_window >= 1


# ---------------------------------------------------------------------------
# layout conversion
# ---------------------------------------------------------------------------

def to_depth_innermost(t: TensorBlob) -> TensorBlob:
    """Pure index permutation from D x W x H storage to H x W x D storage."""
    if t.desc.layout == LAYOUT_DEPTH_INNERMOST:
        raise errors.AlreadyDepthInnermost(
            "tensor already stored depth-innermost")
    data = np.ascontiguousarray(t.data.transpose(0, 3, 2, 1))
    desc = TensorDesc(t.desc.height, t.desc.width, t.desc.depth,
                      t.desc.dtype, LAYOUT_DEPTH_INNERMOST)
    return TensorBlob(desc=desc, data=data, count=t.count)


def to_height_innermost(t: TensorBlob) -> TensorBlob:
    """Inverse permutation of to_depth_innermost."""
    if t.desc.layout == LAYOUT_HEIGHT_INNERMOST:
        raise errors.WrongLayout("tensor already stored height-innermost")
    data = np.ascontiguousarray(t.data.transpose(0, 3, 2, 1))
    desc = TensorDesc(t.desc.height, t.desc.width, t.desc.depth,
                      t.desc.dtype, LAYOUT_HEIGHT_INNERMOST)
    return TensorBlob(desc=desc, data=data, count=t.count)


# ---------------------------------------------------------------------------
# bit-plane packing
# ---------------------------------------------------------------------------

def _pack_bits(bits: np.ndarray) -> np.ndarray:
    """(..., D) 0/1 array -> (..., ceil(D/32)) uint32, LSB = lowest depth."""
    d = bits.shape[-1]
    pad = (-d) % 32
    if pad:
        bits = np.concatenate(
            [bits, np.zeros(bits.shape[:-1] + (pad,), dtype=bits.dtype)],
            axis=-1)
    by = np.packbits(bits.astype(np.uint8), axis=-1, bitorder="little")
    by = np.ascontiguousarray(by)
    words = by.view("<u4").astype(np.uint32)
    return words


def _unpack_bits(words: np.ndarray, depth: int) -> np.ndarray:
    """Inverse of _pack_bits; trailing pad bits are dropped."""
    by = np.ascontiguousarray(words.astype("<u4")).view(np.uint8)
    bits = np.unpackbits(by, axis=-1, bitorder="little")
    return bits[..., :depth]


def bitpack(t: TensorBlob) -> PackedTensor:
    """Pack a depth-innermost u2 or bin1 tensor into 32-bit word planes."""
    if t.desc.layout != LAYOUT_DEPTH_INNERMOST:
        raise errors.WrongLayout(
            f"bitpack needs depth-innermost input, got {t.desc.layout}")
    if t.desc.dtype == "bin1":
        bits = (t.data > 0).astype(np.uint8)
        planes = [_pack_bits(bits)]
    elif t.desc.dtype == "u2":
        codes = t.data.astype(np.uint8)
        planes = [_pack_bits((codes >> p) & 1) for p in (0, 1)]
    else:
        raise errors.WrongDtype(f"cannot bitpack dtype {t.desc.dtype}")
    return PackedTensor(desc=t.desc, planes=planes, count=t.count)


def unpack(p: PackedTensor, strict: bool = False) -> TensorBlob:
    """Inverse of bitpack.  strict=True rejects nonzero pad bits."""
    depth = p.desc.depth
    if strict and depth % 32 != 0:
        tail = _unpack_bits(np.stack(p.planes), p.words_per_dbar * 32)
        if tail[..., depth:].any():
            raise errors.NonZeroPadBits(
                "pad bits beyond depth are set in packed tensor")
    if p.desc.dtype == "bin1":
        bits = _unpack_bits(p.planes[0], depth)
        data = (bits.astype(np.int8) * 2 - 1)
    else:
        b0 = _unpack_bits(p.planes[0], depth)
        b1 = _unpack_bits(p.planes[1], depth)
        data = (b0 | (b1 << 1)).astype(np.uint8)
    return TensorBlob(desc=p.desc, data=data, count=p.count)


# ---------------------------------------------------------------------------
# address-run (jump) analysis
# ---------------------------------------------------------------------------

def _flat_addresses(order: str, ih: int, iw: int, id_: int,
                    rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sorted flat addresses of the window covering rows x cols x all depths."""
    h = rows[:, None, None]
    w = cols[None, :, None]
    d = np.arange(id_)[None, None, :]
    if order == ORDER_DEPTH_INNERMOST:
        addr = (h * iw + w) * id_ + d
    elif order == ORDER_WIDTH_INNERMOST:
        addr = (d * ih + h) * iw + w
    elif order == ORDER_HEIGHT_INNERMOST:
        addr = (d * iw + w) * ih + h
    else:
        raise ValueError(f"unknown data order {order!r}")
    return np.sort(addr.ravel())


def _runs_of_sorted(addr: np.ndarray) -> list[int]:
    if addr.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(addr) != 1)
    bounds = np.concatenate([[-1], breaks, [addr.size - 1]])
    return list(np.diff(bounds))


def _clip_intervals(n_out: int, extent: int, k: int, stride: int,
                    pad: int) -> list[tuple[tuple[int, int], int]]:
    """Group output positions by their clipped input interval.

    Returns [( (start, stop), count ), ...] with padded positions dropped.
    """
    groups: dict[tuple[int, int], int] = {}
    for o in range(n_out):
        lo = o * stride - pad
        start, stop = max(lo, 0), min(lo + k, extent)
        key = (start, stop)
        groups[key] = groups.get(key, 0) + 1
    return list(groups.items())


def address_runs(input_desc: TensorDesc, kernel_desc: TensorDesc,
                 order: str, stride: int = 1, pad: int = 0) -> RunStats:
    """Count maximal contiguous address runs of a convolution's input reads.

    One kernel window's reads are sorted and split into maximal contiguous
    intervals; a window has runs = jumps in the sense of the burst analysis
    (the entry jump into each run is counted).  Interior windows of a
    width-contiguous baseline give Kh*Kd runs; depth-innermost gives Kh runs
    of Kw*Kd contiguous elements each (Kd = Id).  total_runs sums the count
    over every output position, with padded positions excluded.
    """
    ih, iw, id_ = input_desc.height, input_desc.width, input_desc.depth
    kh, kw, kd = kernel_desc.height, kernel_desc.width, kernel_desc.depth
    if kd != id_:
        raise errors.KernelDepthMismatch(
            f"kernel depth {kd} != input depth {id_}")
    oh = (ih + 2 * pad - kh) // stride + 1
    ow = (iw + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise errors.LayoutError("kernel larger than padded input")

    row_groups = _clip_intervals(oh, ih, kh, stride, pad)
    col_groups = _clip_intervals(ow, iw, kw, stride, pad)

    total = 0
    interior = None
    for (rs, re), rcount in row_groups:
        rows = np.arange(rs, re)
        for (cs, ce), ccount in col_groups:
            cols = np.arange(cs, ce)
            lengths = _runs_of_sorted(
                _flat_addresses(order, ih, iw, id_, rows, cols))
            total += len(lengths) * rcount * ccount
            if interior is None and re - rs == kh and ce - cs == kw:
                interior = lengths
    if interior is None:   # no fully-interior window; report the largest
        rows = np.arange(*max(row_groups, key=lambda g: g[0][1] - g[0][0])[0])
        cols = np.arange(*max(col_groups, key=lambda g: g[0][1] - g[0][0])[0])
        interior = _runs_of_sorted(
            _flat_addresses(order, ih, iw, id_, rows, cols))
    return RunStats(runs_per_window=len(interior), run_lengths=interior,
                    total_runs=total)

"""Bit-exact wire format for compressed messages and the two cost figures.

Two numbers are reported for every message:

* the *model* cost, an idealised count of floats and symbols
  (``c1`` bits per float, ``c0`` per sparsifier zero, ``c0t`` per ternary
  symbol plus a group tag of ``ceil(log2(k + 1))`` bits for hybrid messages);
* the *wire* cost, the exact length of the self-delimiting bitstream that
  :func:`encode` produces.

Wire layout (most significant bit first)::

    scheme tag   2 bits   00 raw, 01 sparsifier, 10 ternary, 11 hybrid
    dim         16 bits
    raw          dim x c1-bit floats
    sparsifier   per element: 1 flag bit, then a c1-bit float if the flag is set
    ternary      c1-bit magnitude, then dim x 2-bit symbols
    hybrid       16-bit k, k x (16-bit anchor index + c1-bit anchor magnitude),
                 then per element a tag of ceil(log2(k+1)) bits (0 = residue)
                 followed by a 2-bit symbol (grouped) or flag [+ float] (residue)

Ternary symbols: ``00`` -> 0, ``01`` -> +1, ``10`` -> -1; ``11`` is invalid.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ._backend import kernels

SCHEME_TAGS = {"identity": 0b00, "sparsifier": 0b01, "ternary": 0b10, "hybrid": 0b11}
TAG_SCHEMES = {v: k for k, v in SCHEME_TAGS.items()}
HEADER_BITS = 2 + 16
MAX_DIM = (1 << 16) - 1

_SYMBOL_CODES = {0: 0b00, 1: 0b01, -1: 0b10}
_CODE_SYMBOLS = {0b00: 0, 0b01: 1, 0b10: -1}


def anchor_tag_bits(k: int) -> int:
    """``ceil(log2(k + 1))``: bits needed to name one of ``k`` groups or the residue."""
    if k < 0:
        raise ValueError("group count must be non-negative")
    return int(k).bit_length()


@dataclass(frozen=True)
class CostModel:
    """Bit prices for the model cost.

    ``hybrid_zero_bits`` prices a dropped residue element inside a hybrid
    message; ``None`` means ``c0t``, which is how the greedy planner's
    stopping rule and the hybrid objective count it.  Set it to ``c0`` to
    price residue zeros like plain sparsifier zeros instead.
    """

    c1: int = 32
    c0: int = 1
    c0t: int = 2
    hybrid_zero_bits: int | None = None

    def __post_init__(self):
        for name in ("c1", "c0", "c0t"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.hybrid_zero_bits is not None and self.hybrid_zero_bits <= 0:
            raise ValueError("hybrid_zero_bits must be positive")

    @property
    def residue_zero_bits(self) -> int:
        return self.c0t if self.hybrid_zero_bits is None else self.hybrid_zero_bits

    def sparsifier_unit(self, p: float) -> float:
        """Expected bits per residue element inside a hybrid message (tag excluded)."""
        return self.c1 * p + self.residue_zero_bits * (1.0 - p)


DEFAULT_COST_MODEL = CostModel()


class DecodeError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} at bit offset {offset}")


class EncodeError(ValueError):
    pass


# ------------------------------------------------------------ model cost

def hybrid_objective(d: int, k: int, grouped: int, p: float, model: CostModel = DEFAULT_COST_MODEL) -> float:
    """Expected hybrid cost for ``k`` groups covering ``grouped`` elements.

    Floats: one per anchor plus ``p`` per residue element.  Symbols: one per
    non-anchor group member plus ``1 - p`` per residue element, each carrying
    the group tag.
    """
    residue = d - grouped
    tag = anchor_tag_bits(k)
    return (
        model.c1 * (k + residue * p)
        + (model.c0t + tag) * (grouped - k)
        + (model.residue_zero_bits + tag) * residue * (1.0 - p)
    )


def sparsifier_expected_cost(d: int, p: float, model: CostModel = DEFAULT_COST_MODEL) -> float:
    return d * (model.c1 * p + model.c0 * (1.0 - p))


def ternary_cost(d: int, model: CostModel = DEFAULT_COST_MODEL) -> int:
    return model.c1 + (d - 1) * model.c0t


def paper_cost(obj, model: CostModel = DEFAULT_COST_MODEL, form: str = "realized"):
    """Model bit count of a message or a hybrid plan.

    Parameters
    ----------
    obj : CompressedMessage or HybridPlan
        Plans are always evaluated in expectation.
    form : {"realized", "expected"}
        For messages: count the realised nonzeros, or use the scheme's
        keep probability.  Ternary and identity costs do not depend on it.
    """
    if hasattr(obj, "objective_bits") and hasattr(obj, "anchors"):
        return hybrid_objective(obj.dim, obj.k, obj.grouped, obj.p, model)
    scheme, d = obj.scheme, obj.dim
    if scheme == "identity":
        return d * model.c1
    if scheme == "ternary":
        return ternary_cost(d, model)
    if form == "expected":
        if scheme == "sparsifier":
            return sparsifier_expected_cost(d, obj.p, model)
        if scheme == "hybrid":
            k = len(obj.anchor_index)
            return hybrid_objective(d, k, int(np.count_nonzero(obj.group_of)), obj.p, model)
    elif form != "realized":
        raise ValueError(f"unknown cost form {form!r}")
    if scheme == "sparsifier":
        nnz = int(np.count_nonzero(obj.decoded))
        return nnz * model.c1 + (d - nnz) * model.c0
    if scheme == "hybrid":
        return _hybrid_realized(obj.decoded, obj.group_of, len(obj.anchor_index), model)
    raise ValueError(f"unknown scheme {scheme!r}")


def _hybrid_realized(decoded, group_of, k, model):
    residue = group_of == 0
    nnz_res = int(np.count_nonzero(decoded[residue]))
    zeros_res = int(residue.sum()) - nnz_res
    grouped = decoded.shape[0] - int(residue.sum())
    tag = anchor_tag_bits(k)
    return (
        model.c1 * (k + nnz_res)
        + (model.c0t + tag) * (grouped - k)
        + (model.residue_zero_bits + tag) * zeros_res
    )


# ------------------------------------------------------------------ wire cost

def wire_bits(scheme: str, decoded, model: CostModel = DEFAULT_COST_MODEL, group_of=None, k: int = 0) -> int:
    """Length of :func:`encode` output computed from the layout alone."""
    d = len(decoded)
    c1 = model.c1
    if scheme == "identity":
        body = d * c1
    elif scheme == "sparsifier":
        body = d + int(np.count_nonzero(decoded)) * c1
    elif scheme == "ternary":
        body = c1 + 2 * d
    elif scheme == "hybrid":
        residue = np.asarray(group_of) == 0
        n_res = int(residue.sum())
        nnz_res = int(np.count_nonzero(np.asarray(decoded)[residue]))
        body = 16 + k * (16 + c1) + d * anchor_tag_bits(k) + 2 * (d - n_res) + n_res + nnz_res * c1
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return HEADER_BITS + body


# ------------------------------------------------------------------ bitstream

@dataclass(frozen=True)
class Bitstream:
    """Packed MSB-first bits; ``nbits`` may leave padding in the last byte."""

    data: bytes
    nbits: int

    def __len__(self) -> int:
        return self.nbits

    def bits(self) -> str:
        if not self.data:
            return ""
        return format(int.from_bytes(self.data, "big"), f"0{8 * len(self.data)}b")[: self.nbits]

    def flipped(self, *positions: int) -> "Bitstream":
        """Copy with the given bit positions inverted (test helper)."""
        buf = bytearray(self.data)
        for pos in positions:
            if not 0 <= pos < self.nbits:
                raise IndexError(pos)
            buf[pos >> 3] ^= 0x80 >> (pos & 7)
        return Bitstream(bytes(buf), self.nbits)

    def truncated(self, nbits: int) -> "Bitstream":
        nbytes = (nbits + 7) // 8
        buf = bytearray(self.data[:nbytes])
        if nbits % 8 and buf:
            buf[-1] &= (0xFF << (8 - nbits % 8)) & 0xFF
        return Bitstream(bytes(buf), nbits)

    def hexdump(self, width: int = 16) -> str:
        lines = []
        for off in range(0, len(self.data), width):
            chunk = self.data[off:off + width]
            lines.append(f"{off:08x}  {chunk.hex(' ')}")
        lines.append(f"({self.nbits} bits)")
        return "\n".join(lines)


def _float_bits(value: float, width: int) -> int:
    if width == 32:
        f32 = np.float32(value)
        if not np.isfinite(f32) or float(f32) != value:
            raise EncodeError(f"{value!r} is not exactly representable as a 32-bit float")
        return struct.unpack(">I", struct.pack(">f", float(f32)))[0]
    if width == 64:
        if not np.isfinite(value):
            raise EncodeError(f"non-finite value {value!r}")
        return struct.unpack(">Q", struct.pack(">d", value))[0]
    raise EncodeError(f"wire floats must be 32 or 64 bits, cost model says {width}")


def _bits_float(bits: int, width: int) -> float:
    if width == 32:
        return struct.unpack(">f", struct.pack(">I", bits))[0]
    return struct.unpack(">d", struct.pack(">Q", bits))[0]


def encode(message, model: CostModel = DEFAULT_COST_MODEL) -> Bitstream:
    """Serialise a :class:`~dcdgd.compressors.CompressedMessage`.

    Raises
    ------
    EncodeError
        If ``dim`` or ``k`` do not fit in 16 bits, or a value is not
        exactly representable at ``model.c1`` bits (compress with
        ``float_bits=32`` to get wire-exact messages).
    """
    decoded = np.asarray(message.decoded, dtype=np.float64)
    d = decoded.shape[0]
    if d > MAX_DIM:
        raise EncodeError(f"dim {d} does not fit in 16 bits")
    c1 = model.c1
    w = kernels.BitWriter()
    w.write(SCHEME_TAGS[message.scheme], 2)
    w.write(d, 16)
    scheme = message.scheme
    if scheme == "identity":
        for v in decoded.tolist():
            w.write(_float_bits(v, c1), c1)
    elif scheme == "sparsifier":
        for v in decoded.tolist():
            if v != 0.0:
                w.write(1, 1)
                w.write(_float_bits(v, c1), c1)
            else:
                w.write(0, 1)
    elif scheme == "ternary":
        scale = float(message.scale)
        w.write(_float_bits(scale, c1), c1)
        for v in decoded.tolist():
            w.write(_SYMBOL_CODES[_symbol(v, scale)], 2)
    elif scheme == "hybrid":
        anchors = np.asarray(message.anchor_index)
        scales = np.asarray(message.anchor_scale, dtype=np.float64)
        group_of = np.asarray(message.group_of)
        k = anchors.shape[0]
        if k > MAX_DIM:
            raise EncodeError(f"group count {k} does not fit in 16 bits")
        w.write(k, 16)
        for idx, mag in zip(anchors.tolist(), scales.tolist()):
            w.write(idx, 16)
            w.write(_float_bits(mag, c1), c1)
        tag_bits = anchor_tag_bits(k)
        for v, g in zip(decoded.tolist(), group_of.tolist()):
            w.write(g, tag_bits)
            if g:
                w.write(_SYMBOL_CODES[_symbol(v, scales[g - 1])], 2)
            elif v != 0.0:
                w.write(1, 1)
                w.write(_float_bits(v, c1), c1)
            else:
                w.write(0, 1)
    else:
        raise EncodeError(f"unknown scheme {scheme!r}")
    return Bitstream(w.getvalue(), w.nbits)


def _symbol(v: float, scale: float) -> int:
    if v == 0.0:
        return 0
    if abs(v) != scale:
        raise EncodeError(f"value {v!r} is not 0 or +/-{scale!r}")
    return 1 if v > 0 else -1


def decode(stream: Bitstream, model: CostModel = DEFAULT_COST_MODEL):
    """Parse a bitstream back into a message with identical decoded values.

    Raises
    ------
    DecodeError
        Truncated stream, unknown scheme tag, invalid symbol, group tag out of
        range, or trailing bits; ``offset`` names the offending bit.
    """
    from .compressors import CompressedMessage

    r = kernels.BitReader(stream.data, stream.nbits)
    c1 = model.c1

    def read(width, what):
        pos = r.pos
        try:
            return r.read(width)
        except EOFError:
            raise DecodeError(f"truncated stream while reading {what}", pos) from None

    def read_float(what):
        return _bits_float(read(c1, what), c1)

    # all four 2-bit codes are assigned; a corrupted tag shows up as an
    # inconsistent body further on
    scheme = TAG_SCHEMES[read(2, "scheme tag")]
    d = read(16, "dimension")
    if d == 0:
        raise DecodeError("zero-length vector", 2)
    decoded = np.zeros(d)
    scale = None
    group_of = None
    anchor_index = None
    anchor_scale = None
    if scheme == "identity":
        for i in range(d):
            decoded[i] = read_float(f"value {i}")
    elif scheme == "sparsifier":
        for i in range(d):
            if read(1, f"flag {i}"):
                decoded[i] = read_float(f"value {i}")
    elif scheme == "ternary":
        scale = read_float("ternary magnitude")
        for i in range(d):
            pos = r.pos
            sym = _CODE_SYMBOLS.get(read(2, f"symbol {i}"))
            if sym is None:
                raise DecodeError(f"invalid ternary symbol for element {i}", pos)
            decoded[i] = sym * scale if sym else 0.0
    else:
        k = read(16, "group count")
        anchor_index = np.zeros(k, dtype=np.int64)
        anchor_scale = np.zeros(k)
        for g in range(k):
            pos = r.pos
            anchor_index[g] = read(16, f"anchor index {g}")
            if anchor_index[g] >= d:
                raise DecodeError(f"anchor index {anchor_index[g]} outside dimension {d}", pos)
            anchor_scale[g] = read_float(f"anchor magnitude {g}")
        tag_bits = anchor_tag_bits(k)
        group_of = np.zeros(d, dtype=np.int64)
        for i in range(d):
            pos = r.pos
            g = read(tag_bits, f"group tag {i}")
            if g > k:
                raise DecodeError(f"group tag {g} > k = {k} for element {i}", pos)
            group_of[i] = g
            if g:
                pos = r.pos
                sym = _CODE_SYMBOLS.get(read(2, f"symbol {i}"))
                if sym is None:
                    raise DecodeError(f"invalid ternary symbol for element {i}", pos)
                decoded[i] = sym * anchor_scale[g - 1] if sym else 0.0
            elif read(1, f"flag {i}"):
                decoded[i] = read_float(f"value {i}")
    if r.pos != stream.nbits:
        raise DecodeError(f"{stream.nbits - r.pos} trailing bits", r.pos)
    return CompressedMessage(
        scheme=scheme,
        dim=d,
        decoded=decoded,
        paper_cost_bits=0,
        wire_cost_bits=stream.nbits,
        scale=scale,
        group_of=group_of,
        anchor_index=anchor_index,
        anchor_scale=anchor_scale,
    ).with_paper_cost(model)

"""Baseline JPEG codec that stops at DCT coefficients.

Decoding is split per stage: parse_markers reads segment structure,
decode_scan entropy-decodes the interleaved MCU stream into per-component
quantized coefficient planes, dequantize_plane applies the quantization
tables.  partial_decode chains the three and deliberately performs no
inverse DCT, no chroma upsampling and no color conversion; full_decode
adds those stages and produces RGB pixels.

Only sequential baseline files are accepted: SOF0, 8-bit samples, Huffman
coding, 1 or 3 components, 4:4:4 or 4:2:0 sampling.  Anything else raises
a structured error instead of producing wrong pixels.

The encoder emits the same subset and is the roundtrip oracle for the
decoder: encode_baseline(planes) -> parse -> decode must be bit-exact.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass, field

import numpy as np

from .transform import (
    ZIGZAG_TO_NATURAL,
    idct_blocks,
    round_half_away,
    ycbcr_to_rgb,
)


class JpegError(Exception):
    """Base class for anything wrong with a JPEG input."""


class JpegFormatError(JpegError):
    """Malformed or truncated data within the supported subset."""


class UnsupportedJpegError(JpegError):
    """Well-formed data outside the supported baseline subset."""


class EncodeError(JpegError):
    """Input that cannot be represented as a baseline scan."""


# marker code -> name, for diagnostics
_MARKER_NAMES = {
    0xC0: "SOF0", 0xC1: "SOF1", 0xC2: "SOF2", 0xC3: "SOF3",
    0xC5: "SOF5", 0xC6: "SOF6", 0xC7: "SOF7",
    0xC9: "SOF9", 0xCA: "SOF10", 0xCB: "SOF11",
    0xCD: "SOF13", 0xCE: "SOF14", 0xCF: "SOF15",
    0xC4: "DHT", 0xC8: "JPG", 0xCC: "DAC",
    0xD8: "SOI", 0xD9: "EOI", 0xDA: "SOS", 0xDB: "DQT",
    0xDC: "DNL", 0xDD: "DRI", 0xDE: "DHP", 0xDF: "EXP",
    0xFE: "COM",
}
for _n in range(16):
    _MARKER_NAMES[0xE0 + _n] = f"APP{_n}"

SAMPLING_444 = "4:4:4"
SAMPLING_420 = "4:2:0"
SAMPLING_GRAY = "grayscale"


def ceil_div(a, b):
    return -(-a // b)


def plane_grid(width, height, h, v, h_max, v_max):
    """Block-grid size (blocks_wide, blocks_high) of one component plane.

    Component dimensions scale by the sampling-factor ratio before the
    division into 8x8 blocks, both divisions rounding up (T.81 A.1.1/A.2.4).
    """
    comp_w = ceil_div(width * h, h_max)
    comp_h = ceil_div(height * v, v_max)
    return ceil_div(comp_w, 8), ceil_div(comp_h, 8)


class HuffmanTable:
    """Canonical Huffman table in the DHT representation.

    code_lengths[i] is the number of codes of length i+1 (16 entries);
    symbols lists the coded values in canonical order.  Decoding uses the
    mincode/maxcode/valptr scheme from T.81 F.2.2.3 plus an 8-bit prefix
    lookup table for the short codes that dominate real streams.
    """

    __slots__ = (
        "table_class", "table_id", "code_lengths", "symbols",
        "mincode", "maxcode", "valptr", "lut", "encode",
    )

    def __init__(self, table_class, table_id, code_lengths, symbols,
                 mincode, maxcode, valptr, lut, encode):
        self.table_class = table_class
        self.table_id = table_id
        self.code_lengths = code_lengths
        self.symbols = symbols
        self.mincode = mincode
        self.maxcode = maxcode
        self.valptr = valptr
        self.lut = lut
        self.encode = encode

    def __eq__(self, other):
        return (
            isinstance(other, HuffmanTable)
            and self.table_class == other.table_class
            and self.table_id == other.table_id
            and self.code_lengths == other.code_lengths
            and self.symbols == other.symbols
        )

    def __repr__(self):
        kind = "DC" if self.table_class == 0 else "AC"
        return f"HuffmanTable({kind}{self.table_id}, {len(self.symbols)} symbols)"


def build_huffman(code_lengths, symbols, table_class=0, table_id=0):
    """Build a canonical Huffman table from DHT counts and symbol list.

    Codes of each length are assigned consecutively, shorter lengths first
    (T.81 C.2).  Raises if the counts claim more codes than the code space
    holds or disagree with the number of symbols.  Tables are immutable and
    cached: real streams reuse the Annex K tables constantly.
    """
    return _build_huffman_cached(tuple(int(c) for c in code_lengths),
                                 tuple(int(s) for s in symbols),
                                 table_class, table_id)


@functools.lru_cache(maxsize=256)
def _build_huffman_cached(code_lengths, symbols, table_class, table_id):
    if len(code_lengths) != 16:
        raise JpegFormatError(f"expected 16 code-length counts, got {len(code_lengths)}")
    if any(c < 0 or c > 255 for c in code_lengths):
        raise JpegFormatError("code-length count out of range")
    if sum(code_lengths) != len(symbols):
        raise JpegFormatError(
            f"code-length counts claim {sum(code_lengths)} symbols, got {len(symbols)}"
        )
    if any(s < 0 or s > 255 for s in symbols):
        raise JpegFormatError("Huffman symbol out of byte range")

    mincode = [0] * 17
    maxcode = [-1] * 17
    valptr = [0] * 17
    encode = {}
    lut = [-1] * 256
    code = 0
    k = 0
    for ln in range(1, 17):
        count = code_lengths[ln - 1]
        if count:
            # the all-1-bits word of every length is reserved (T.81 C.2), so
            # the last assignable code of length n is 2^n - 2
            if code + count >= (1 << ln):
                raise JpegFormatError(
                    "invalid code space (over-subscribed Huffman table)")
            valptr[ln] = k
            mincode[ln] = code
            maxcode[ln] = code + count - 1
            for _ in range(count):
                sym = symbols[k]
                if sym not in encode:
                    encode[sym] = (code, ln)
                if ln <= 8:
                    base = code << (8 - ln)
                    entry = (sym << 8) | ln
                    for j in range(1 << (8 - ln)):
                        lut[base + j] = entry
                k += 1
                code += 1
        code <<= 1
    return HuffmanTable(table_class, table_id, code_lengths, symbols,
                        mincode, maxcode, valptr, lut, encode)


# Annex K reference tables (T.81 K.1-K.6).  Quant tables are in natural
# (row-major) order here and reordered to zigzag where the format needs it.
ANNEX_K_QUANT_LUMA = np.array([
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
], dtype=np.uint16)

ANNEX_K_QUANT_CHROMA = np.array([
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
], dtype=np.uint16)

_DC_LUMA_LENGTHS = (0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0)
_DC_LUMA_SYMBOLS = tuple(range(12))
_DC_CHROMA_LENGTHS = (0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0)
_DC_CHROMA_SYMBOLS = tuple(range(12))

_AC_LUMA_LENGTHS = (0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7D)
_AC_LUMA_SYMBOLS = (
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12,
    0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07,
    0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xA1, 0x08,
    0x23, 0x42, 0xB1, 0xC1, 0x15, 0x52, 0xD1, 0xF0,
    0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0A, 0x16,
    0x17, 0x18, 0x19, 0x1A, 0x25, 0x26, 0x27, 0x28,
    0x29, 0x2A, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39,
    0x3A, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49,
    0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59,
    0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69,
    0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79,
    0x7A, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
    0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98,
    0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7,
    0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6,
    0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5,
    0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2, 0xD3, 0xD4,
    0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA, 0xE1, 0xE2,
    0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA,
    0xF1, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8,
    0xF9, 0xFA,
)

_AC_CHROMA_LENGTHS = (0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77)
_AC_CHROMA_SYMBOLS = (
    0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21,
    0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71,
    0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91,
    0xA1, 0xB1, 0xC1, 0x09, 0x23, 0x33, 0x52, 0xF0,
    0x15, 0x62, 0x72, 0xD1, 0x0A, 0x16, 0x24, 0x34,
    0xE1, 0x25, 0xF1, 0x17, 0x18, 0x19, 0x1A, 0x26,
    0x27, 0x28, 0x29, 0x2A, 0x35, 0x36, 0x37, 0x38,
    0x39, 0x3A, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48,
    0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58,
    0x59, 0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68,
    0x69, 0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78,
    0x79, 0x7A, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87,
    0x88, 0x89, 0x8A, 0x92, 0x93, 0x94, 0x95, 0x96,
    0x97, 0x98, 0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5,
    0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4,
    0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3,
    0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2,
    0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA,
    0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9,
    0xEA, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8,
    0xF9, 0xFA,
)


def standard_huffman_tables():
    """The four Annex K tables keyed by (class, id): luma id 0, chroma id 1."""
    return {
        (0, 0): build_huffman(_DC_LUMA_LENGTHS, _DC_LUMA_SYMBOLS, 0, 0),
        (1, 0): build_huffman(_AC_LUMA_LENGTHS, _AC_LUMA_SYMBOLS, 1, 0),
        (0, 1): build_huffman(_DC_CHROMA_LENGTHS, _DC_CHROMA_SYMBOLS, 0, 1),
        (1, 1): build_huffman(_AC_CHROMA_LENGTHS, _AC_CHROMA_SYMBOLS, 1, 1),
    }


@dataclass
class FrameComponent:
    component_id: int
    h: int
    v: int
    quant_id: int


@dataclass
class FrameHeader:
    width: int
    height: int
    precision: int
    components: list[FrameComponent]

    @property
    def h_max(self):
        return max(c.h for c in self.components)

    @property
    def v_max(self):
        return max(c.v for c in self.components)

    @property
    def sampling(self):
        if len(self.components) == 1:
            return SAMPLING_GRAY
        factors = [(c.h, c.v) for c in self.components]
        if factors == [(1, 1), (1, 1), (1, 1)]:
            return SAMPLING_444
        return SAMPLING_420


@dataclass
class ScanComponent:
    component_id: int
    dc_id: int
    ac_id: int


@dataclass
class ScanHeader:
    components: list[ScanComponent]


@dataclass
class SegmentInfo:
    marker: int
    name: str
    offset: int
    length: int


@dataclass
class JpegStructure:
    quant_tables: dict[int, np.ndarray]        # id -> 64 uint16, zigzag order
    dc_tables: dict[int, HuffmanTable]
    ac_tables: dict[int, HuffmanTable]
    frame: FrameHeader
    scan: ScanHeader
    restart_interval: int
    entropy_data: bytes                        # raw scan payload, stuffing intact
    entropy_offset: int
    extra_segments: list[SegmentInfo] = field(default_factory=list)


@dataclass
class QuantizedPlane:
    """Entropy-decoded coefficients of one component, before dequantization.

    blocks has shape (blocks_high, blocks_wide, 64) in natural (row-major)
    frequency order; the grid covers the padded component extent, so edge
    blocks past the declared image size are retained.
    """

    component_id: int
    blocks_wide: int
    blocks_high: int
    blocks: np.ndarray  # int16


@dataclass
class DctPlane:
    """Dequantized DCT coefficients of one component (float32, natural order)."""

    component_id: int
    blocks_wide: int
    blocks_high: int
    blocks: np.ndarray  # float32, (blocks_high, blocks_wide, 64)


@dataclass
class DctImage:
    """Frequency-domain picture: per-component dequantized coefficient planes."""

    width: int
    height: int
    sampling: str
    y: DctPlane
    cb: DctPlane | None = None
    cr: DctPlane | None = None

    @property
    def planes(self):
        return [p for p in (self.y, self.cb, self.cr) if p is not None]


def _read_u16(data, pos, what):
    if pos + 2 > len(data):
        raise JpegFormatError(f"truncated {what} at offset {pos}")
    return (data[pos] << 8) | data[pos + 1]


def _segment_payload(data, pos, name):
    length = _read_u16(data, pos, f"{name} length")
    if length < 2:
        raise JpegFormatError(f"{name} segment length {length} too small")
    end = pos + length
    if end > len(data):
        raise JpegFormatError(f"truncated {name} segment at offset {pos}")
    return data[pos + 2:end], end


def _parse_dqt(payload, tables):
    pos = 0
    while pos < len(payload):
        pq_tq = payload[pos]
        pq, tq = pq_tq >> 4, pq_tq & 0x0F
        pos += 1
        if tq > 3:
            raise JpegFormatError(f"quant table id {tq} out of range")
        if pq == 1:
            # 16-bit tables are only legal for 12-bit precision (T.81 B.2.4.1)
            raise UnsupportedJpegError("unsupported: 16-bit quantization table")
        if pq != 0:
            raise JpegFormatError(f"invalid quant table precision {pq}")
        if pos + 64 > len(payload):
            raise JpegFormatError("truncated DQT segment")
        table = np.frombuffer(payload[pos:pos + 64], dtype=np.uint8).astype(np.uint16)
        pos += 64
        if np.any(table < 1):
            raise JpegFormatError(f"quant table {tq} contains zero entries")
        if tq in tables and not np.array_equal(tables[tq], table):
            raise JpegFormatError(f"duplicate incompatible quant table id {tq}")
        tables[tq] = table
    if pos != len(payload):
        raise JpegFormatError("trailing bytes in DQT segment")


def _parse_dht(payload, dc_tables, ac_tables):
    pos = 0
    while pos < len(payload):
        tc_th = payload[pos]
        tc, th = tc_th >> 4, tc_th & 0x0F
        pos += 1
        if tc > 1:
            raise UnsupportedJpegError("unsupported: arithmetic conditioning table")
        if th > 3:
            raise JpegFormatError(f"Huffman table id {th} out of range")
        if pos + 16 > len(payload):
            raise JpegFormatError("truncated DHT segment")
        counts = tuple(payload[pos:pos + 16])
        pos += 16
        total = sum(counts)
        if pos + total > len(payload):
            raise JpegFormatError("truncated DHT segment")
        symbols = tuple(payload[pos:pos + total])
        pos += total
        table = build_huffman(counts, symbols, tc, th)
        target = dc_tables if tc == 0 else ac_tables
        if th in target and target[th] != table:
            raise JpegFormatError(f"duplicate incompatible Huffman table id {th}")
        target[th] = table
    if pos != len(payload):
        raise JpegFormatError("trailing bytes in DHT segment")


def _parse_sof0(payload):
    if len(payload) < 6:
        raise JpegFormatError("truncated SOF0 segment")
    precision, height, width, ncomp = struct.unpack(">BHHB", payload[:6])
    if precision != 8:
        raise UnsupportedJpegError(f"unsupported: {precision}-bit sample precision")
    if width == 0 or height == 0:
        raise JpegFormatError("zero image dimension (DNL-deferred height not supported)")
    if ncomp not in (1, 3):
        raise UnsupportedJpegError(f"unsupported: {ncomp}-component image")
    if len(payload) != 6 + 3 * ncomp:
        raise JpegFormatError("SOF0 length disagrees with component count")
    comps = []
    for i in range(ncomp):
        cid, hv, tq = payload[6 + 3 * i:9 + 3 * i]
        comps.append(FrameComponent(cid, hv >> 4, hv & 0x0F, tq))
    if len({c.component_id for c in comps}) != ncomp:
        raise JpegFormatError("duplicate component id in frame header")
    factors = [(c.h, c.v) for c in comps]
    if ncomp == 1:
        if factors != [(1, 1)]:
            raise UnsupportedJpegError(
                f"unsupported sampling layout {factors} (grayscale must be 1x1)"
            )
    elif factors not in ([(1, 1), (1, 1), (1, 1)], [(2, 2), (1, 1), (1, 1)]):
        raise UnsupportedJpegError(
            f"unsupported sampling layout {factors} (only 4:4:4 and 4:2:0)"
        )
    for c in comps:
        if c.quant_id > 3:
            raise JpegFormatError(f"quant table id {c.quant_id} out of range")
    return FrameHeader(width, height, precision, comps)


def _parse_sos_header(payload, frame):
    if frame is None:
        raise JpegFormatError("missing frame header (SOS before SOF0)")
    if len(payload) < 1:
        raise JpegFormatError("truncated SOS segment")
    ns = payload[0]
    if len(payload) != 1 + 2 * ns + 3:
        raise JpegFormatError("SOS length disagrees with component count")
    if ns != len(frame.components):
        raise UnsupportedJpegError(
            "unsupported: scan does not cover all frame components (multi-scan file)"
        )
    comps = []
    seen = set()
    frame_ids = {c.component_id for c in frame.components}
    for i in range(ns):
        cs = payload[1 + 2 * i]
        td_ta = payload[2 + 2 * i]
        if cs not in frame_ids:
            raise JpegFormatError(f"scan references unknown component id {cs}")
        if cs in seen:
            raise JpegFormatError(f"duplicate component id {cs} in scan header")
        seen.add(cs)
        comps.append(ScanComponent(cs, td_ta >> 4, td_ta & 0x0F))
    ss, se, ah_al = payload[1 + 2 * ns:4 + 2 * ns]
    if (ss, se, ah_al) != (0, 63, 0):
        raise JpegFormatError(
            f"invalid spectral selection Ss={ss} Se={se} AhAl={ah_al:#04x} for baseline"
        )
    return ScanHeader(comps)


def _find_scan_end(data, start):
    """Offset of the marker terminating the entropy-coded segment."""
    pos = start
    n = len(data)
    while True:
        ff = data.find(b"\xff", pos)
        if ff < 0 or ff + 1 >= n:
            raise JpegFormatError("truncated scan (no terminating marker)")
        nxt = data[ff + 1]
        if nxt == 0x00 or 0xD0 <= nxt <= 0xD7:
            pos = ff + 2
        elif nxt == 0xFF:
            pos = ff + 1  # fill byte
        else:
            return ff


def parse_markers(data):
    """Parse segment structure of a baseline JPEG without touching entropy data.

    Returns a JpegStructure; the raw entropy-coded bytes (byte stuffing and
    restart markers intact) are carried for decode_scan.
    """
    data = bytes(data)
    if len(data) < 4 or data[0] != 0xFF or data[1] != 0xD8:
        raise JpegFormatError("missing SOI marker")
    pos = 2
    quant_tables: dict[int, np.ndarray] = {}
    dc_tables: dict[int, HuffmanTable] = {}
    ac_tables: dict[int, HuffmanTable] = {}
    frame = None
    restart_interval = 0
    extra: list[SegmentInfo] = []

    while True:
        if pos >= len(data):
            raise JpegFormatError("unexpected end of file before scan")
        if data[pos] != 0xFF:
            raise JpegFormatError(f"expected marker at offset {pos}")
        marker_off = pos
        while pos < len(data) and data[pos] == 0xFF:
            pos += 1  # 0xFF fill bytes are legal padding
        if pos >= len(data):
            raise JpegFormatError("unexpected end of file in marker")
        marker = data[pos]
        pos += 1
        name = _MARKER_NAMES.get(marker, f"0x{marker:02X}")

        if marker == 0x00:
            raise JpegFormatError(f"expected marker at offset {marker_off}")
        if marker == 0xD8:  # stray SOI
            raise JpegFormatError("unexpected SOI marker inside stream")
        if marker == 0xD9:  # EOI without any scan
            if frame is None:
                raise JpegFormatError("missing frame header")
            raise JpegFormatError("missing scan header (EOI before SOS)")
        if 0xD0 <= marker <= 0xD7:
            raise JpegFormatError(f"restart marker {name} outside entropy data")

        if marker == 0xDB:
            payload, pos = _segment_payload(data, pos, name)
            _parse_dqt(payload, quant_tables)
        elif marker == 0xC4:
            payload, pos = _segment_payload(data, pos, name)
            _parse_dht(payload, dc_tables, ac_tables)
        elif marker == 0xC0:
            payload, pos = _segment_payload(data, pos, name)
            if frame is not None:
                raise JpegFormatError("multiple frame headers")
            frame = _parse_sof0(payload)
        elif marker == 0xC2:
            raise UnsupportedJpegError("unsupported: progressive JPEG (SOF2)")
        elif marker in (0xC9, 0xCA, 0xCB, 0xCC):
            raise UnsupportedJpegError(f"unsupported: arithmetic coding ({name})")
        elif marker in (0xC1, 0xC3, 0xC5, 0xC6, 0xC7, 0xCD, 0xCE, 0xCF):
            raise UnsupportedJpegError(f"unsupported: non-baseline frame ({name})")
        elif marker in (0xDE, 0xDF):
            raise UnsupportedJpegError(f"unsupported: hierarchical coding ({name})")
        elif marker == 0xDC:
            raise UnsupportedJpegError("unsupported: DNL segment")
        elif marker == 0xDD:
            payload, pos = _segment_payload(data, pos, name)
            if len(payload) != 2:
                raise JpegFormatError("DRI segment must carry exactly 2 bytes")
            restart_interval = (payload[0] << 8) | payload[1]
        elif 0xE0 <= marker <= 0xEF or marker == 0xFE:
            payload, pos = _segment_payload(data, pos, name)
            extra.append(SegmentInfo(marker, name, marker_off, len(payload)))
        elif marker == 0xDA:
            payload, pos = _segment_payload(data, pos, name)
            scan = _parse_sos_header(payload, frame)
            for c in frame.components:
                if c.quant_id not in quant_tables:
                    raise JpegFormatError(
                        f"component {c.component_id} references undefined quant table {c.quant_id}"
                    )
            for sc in scan.components:
                if sc.dc_id not in dc_tables:
                    raise JpegFormatError(
                        f"scan references undefined DC table {sc.dc_id}"
                    )
                if sc.ac_id not in ac_tables:
                    raise JpegFormatError(
                        f"scan references undefined AC table {sc.ac_id}"
                    )
            scan_end = _find_scan_end(data, pos)
            term = data[scan_end + 1]
            if term == 0xDA:
                raise UnsupportedJpegError("unsupported: multi-scan file")
            if term == 0xDC:
                raise UnsupportedJpegError("unsupported: DNL segment")
            if term != 0xD9:
                raise JpegFormatError(
                    f"unexpected marker {_MARKER_NAMES.get(term, hex(term))} terminating scan"
                )
            return JpegStructure(
                quant_tables=quant_tables,
                dc_tables=dc_tables,
                ac_tables=ac_tables,
                frame=frame,
                scan=scan,
                restart_interval=restart_interval,
                entropy_data=data[pos:scan_end],
                entropy_offset=pos,
                extra_segments=extra,
            )
        else:
            raise JpegFormatError(f"unexpected marker {name} at offset {marker_off}")


class _BitReader:
    """MSB-first bit reader over entropy-coded data.

    Stops filling at any unstuffed 0xFF so restart markers are never pulled
    into the bit accumulator; expect_restart consumes them explicitly.
    """

    __slots__ = ("data", "pos", "end", "acc", "nbits")

    def __init__(self, data):
        self.data = data
        self.pos = 0
        self.end = len(data)
        self.acc = 0
        self.nbits = 0

    def _fill(self):
        data, pos, end = self.data, self.pos, self.end
        acc, nbits = self.acc, self.nbits
        while nbits < 16 and pos < end:
            b = data[pos]
            if b == 0xFF:
                if pos + 1 < end and data[pos + 1] == 0x00:
                    pos += 2
                else:
                    break  # marker: leave it in the stream
            else:
                pos += 1
            acc = ((acc << 8) | b) & 0xFFFFFF
            nbits += 8
        self.pos, self.acc, self.nbits = pos, acc, nbits

    def decode_symbol(self, table):
        if self.nbits < 16:
            self._fill()
        acc, nbits = self.acc, self.nbits
        if nbits >= 8:
            idx = (acc >> (nbits - 8)) & 0xFF
        else:
            idx = (acc << (8 - nbits)) & 0xFF
        entry = table.lut[idx]
        if entry >= 0:
            ln = entry & 0xFF
            if ln > nbits:
                raise JpegFormatError("bit stream exhausted inside scan")
            nbits -= ln
            self.nbits = nbits
            self.acc = acc & ((1 << nbits) - 1)
            return entry >> 8
        if nbits >= 16:
            look = (acc >> (nbits - 16)) & 0xFFFF
        else:
            look = (acc << (16 - nbits)) & 0xFFFF
        maxcode = table.maxcode
        for ln in range(9, 17):
            code = look >> (16 - ln)
            if code <= maxcode[ln]:
                if ln > nbits:
                    raise JpegFormatError("bit stream exhausted inside scan")
                nbits -= ln
                self.nbits = nbits
                self.acc = acc & ((1 << nbits) - 1)
                return table.symbols[table.valptr[ln] + code - table.mincode[ln]]
        raise JpegFormatError("invalid Huffman code in scan data")

    def receive_extend(self, size):
        """Read `size` magnitude bits and sign-extend them (T.81 F.2.2.1)."""
        if self.nbits < size:
            self._fill()
            if self.nbits < size:
                raise JpegFormatError("bit stream exhausted inside scan")
        nbits = self.nbits - size
        v = (self.acc >> nbits) & ((1 << size) - 1)
        self.acc &= (1 << nbits) - 1
        self.nbits = nbits
        if v < (1 << (size - 1)):
            v += (-1 << size) + 1
        return v

    def expect_restart(self, rst_index):
        """Byte-align and consume the next restart marker, which must be
        RST(rst_index); anything else is a structured error."""
        self.nbits -= self.nbits % 8
        self.acc &= (1 << self.nbits) - 1
        if self.nbits:
            raise JpegFormatError("expected restart marker, found entropy data")
        data, pos = self.data, self.pos
        if pos + 2 > self.end or data[pos] != 0xFF:
            raise JpegFormatError("expected restart marker, scan data ended")
        marker = data[pos + 1]
        if not 0xD0 <= marker <= 0xD7:
            raise JpegFormatError(f"expected restart marker, found 0x{marker:02X}")
        if marker - 0xD0 != rst_index:
            raise JpegFormatError(
                f"restart marker RST{marker - 0xD0} at wrong MCU index (expected RST{rst_index})"
            )
        self.pos = pos + 2


_ZZ_TO_NAT = ZIGZAG_TO_NATURAL.tolist()


@functools.lru_cache(maxsize=64)
def _lut16(code_lengths, symbols):
    """Flat 16-bit prefix lookup: lut[word] = (symbol << 8) | code length,
    0 where no code prefixes the word.  Equivalent to the mincode/maxcode
    walk because prefix-free codes match at most one length."""
    lut = [0] * 65536
    code = 0
    k = 0
    for ln in range(1, 17):
        for _ in range(code_lengths[ln - 1]):
            span = 1 << (16 - ln)
            base = code << (16 - ln)
            lut[base:base + span] = [(symbols[k] << 8) | ln] * span
            k += 1
            code += 1
        code <<= 1
    return lut


def _split_entropy(data):
    """Unstuff 0xFF00 and cut the scan at markers.

    Returns [(segment bytes, boundary)]: boundary is the restart index 0-7,
    ("marker", byte) for a foreign marker, or None when the data ends.
    """
    segments = []
    buf = bytearray()
    pos, end = 0, len(data)
    while True:
        ff = data.find(0xFF, pos)
        if ff < 0:
            buf += data[pos:]
            segments.append((bytes(buf), None))
            return segments
        buf += data[pos:ff]
        if ff + 1 >= end:
            # a lone trailing 0xFF is a marker head, not entropy data
            segments.append((bytes(buf), None))
            return segments
        nxt = data[ff + 1]
        if nxt == 0x00:
            buf.append(0xFF)
            pos = ff + 2
        elif 0xD0 <= nxt <= 0xD7:
            segments.append((bytes(buf), nxt - 0xD0))
            buf = bytearray()
            pos = ff + 2
        else:
            segments.append((bytes(buf), ("marker", nxt)))
            return segments


def decode_scan(structure):
    """Entropy-decode the scan into per-component quantized planes.

    DC prediction starts at 0 and resets at every restart marker; restart
    markers must appear exactly every restart_interval MCUs with cycling
    indices.  Returned planes are cropped to the per-component block grid
    (padding blocks of partial MCUs on the right/bottom edge are kept only
    up to that grid).

    The MCU loop is deliberately flat: a 16-bit table lookup per symbol over
    pre-unstuffed buffers, coefficients gathered sparsely and scattered into
    the planes in one vectorized pass per component.
    """
    frame = structure.frame
    h_max, v_max = frame.h_max, frame.v_max
    interleaved = len(structure.scan.components) > 1

    comps = []
    frame_by_id = {c.component_id: c for c in frame.components}
    for sc in structure.scan.components:
        fc = frame_by_id[sc.component_id]
        bw, bh = plane_grid(frame.width, frame.height, fc.h, fc.v, h_max, v_max)
        if interleaved:
            grid_w = ceil_div(frame.width, 8 * h_max) * fc.h
            grid_h = ceil_div(frame.height, 8 * v_max) * fc.v
        else:
            grid_w, grid_h = bw, bh
        dc_t = structure.dc_tables[sc.dc_id]
        ac_t = structure.ac_tables[sc.ac_id]
        comps.append((
            fc.h if interleaved else 1,
            fc.v if interleaved else 1,
            _lut16(dc_t.code_lengths, dc_t.symbols),
            _lut16(ac_t.code_lengths, ac_t.symbols),
            grid_w,
            [],   # flat coefficient indices
            [],   # coefficient values
            (fc, grid_h, bw, bh),
        ))

    if interleaved:
        mcus_x = ceil_div(frame.width, 8 * h_max)
        mcus_y = ceil_div(frame.height, 8 * v_max)
    else:
        mcus_x, mcus_y = comps[0][7][2], comps[0][7][3]
    total_mcus = mcus_x * mcus_y

    segments = _split_entropy(structure.entropy_data)
    ri = structure.restart_interval
    preds = [0] * len(comps)
    next_rst = 0
    seg_index = 0
    buf, boundary = segments[0]
    n = len(buf)
    # Bit reservoir: the low `nbits` bits of `res` are unread stream bits.
    # Consumed bits are left as garbage above them and masked off at refill,
    # so a consume is a bare decrement.
    res = 0
    nbits = 0
    pos = 0
    from_bytes = int.from_bytes

    for mcu in range(total_mcus):
        if ri and mcu and mcu % ri == 0:
            # byte-align: up to 7 padding bits may precede the marker
            if nbits >= 8 or pos < n:
                raise JpegFormatError(
                    "expected restart marker, found entropy data")
            if boundary is None:
                raise JpegFormatError(
                    "expected restart marker, scan data ended")
            if isinstance(boundary, tuple):
                raise JpegFormatError(
                    f"expected restart marker, found 0x{boundary[1]:02X}")
            if boundary != next_rst:
                raise JpegFormatError(
                    f"restart marker RST{boundary} at wrong MCU index "
                    f"(expected RST{next_rst})")
            next_rst = (next_rst + 1) & 7
            preds = [0] * len(comps)
            seg_index += 1
            buf, boundary = segments[seg_index]
            n = len(buf)
            res = nbits = pos = 0
        mx = mcu % mcus_x
        my = mcu // mcus_x
        for ci, (nh, nv, dc_lut, ac_lut, grid_w, idxs, vals, _) in enumerate(
                comps):
            pred = preds[ci]
            for by in range(nv):
                row = (my * nv + by) * grid_w + mx * nh
                for bx in range(nh):
                    base = (row + bx) << 6
                    # DC size category
                    if nbits < 16:
                        if pos + 4 <= n:
                            res = ((res & ((1 << nbits) - 1)) << 32) \
                                | from_bytes(buf[pos:pos + 4], "big")
                            pos += 4
                            nbits += 32
                        else:
                            while nbits < 16 and pos < n:
                                res = ((res & ((1 << nbits) - 1)) << 8) \
                                    | buf[pos]
                                pos += 1
                                nbits += 8
                    if nbits >= 16:
                        word = (res >> (nbits - 16)) & 0xFFFF
                    else:
                        word = ((res & ((1 << nbits) - 1))
                                << (16 - nbits)) & 0xFFFF
                    entry = dc_lut[word]
                    if not entry:
                        raise JpegFormatError(
                            "invalid Huffman code in scan data")
                    ln = entry & 0xFF
                    if ln > nbits:
                        raise JpegFormatError(
                            "bit stream exhausted inside scan")
                    nbits -= ln
                    s = entry >> 8
                    if s:
                        if s > 15:
                            raise JpegFormatError(f"invalid DC category {s}")
                        while nbits < s and pos < n:
                            res = ((res & ((1 << nbits) - 1)) << 8) | buf[pos]
                            pos += 1
                            nbits += 8
                        if nbits < s:
                            raise JpegFormatError(
                                "bit stream exhausted inside scan")
                        nbits -= s
                        v = (res >> nbits) & ((1 << s) - 1)
                        if v < (1 << (s - 1)):
                            v += (-1 << s) + 1
                        pred += v
                    if pred:
                        idxs.append(base)
                        vals.append(pred)
                    k = 1
                    while k < 64:
                        if nbits < 16:
                            if pos + 4 <= n:
                                res = ((res & ((1 << nbits) - 1)) << 32) \
                                    | from_bytes(buf[pos:pos + 4], "big")
                                pos += 4
                                nbits += 32
                            else:
                                while nbits < 16 and pos < n:
                                    res = ((res & ((1 << nbits) - 1)) << 8) \
                                        | buf[pos]
                                    pos += 1
                                    nbits += 8
                        if nbits >= 16:
                            word = (res >> (nbits - 16)) & 0xFFFF
                        else:
                            word = ((res & ((1 << nbits) - 1))
                                    << (16 - nbits)) & 0xFFFF
                        entry = ac_lut[word]
                        if not entry:
                            raise JpegFormatError(
                                "invalid Huffman code in scan data")
                        ln = entry & 0xFF
                        if ln > nbits:
                            raise JpegFormatError(
                                "bit stream exhausted inside scan")
                        nbits -= ln
                        rs = entry >> 8
                        size = rs & 0x0F
                        if size == 0:
                            if rs == 0x00:    # EOB
                                break
                            if rs == 0xF0:    # ZRL: sixteen zeros
                                k += 16
                                if k > 64:
                                    raise JpegFormatError(
                                        "coefficient index overflow in block")
                                continue
                            raise JpegFormatError(
                                f"invalid run/size symbol 0x{rs:02X}")
                        k += rs >> 4
                        if k > 63:
                            raise JpegFormatError(
                                "coefficient index overflow in block")
                        while nbits < size and pos < n:
                            res = ((res & ((1 << nbits) - 1)) << 8) | buf[pos]
                            pos += 1
                            nbits += 8
                        if nbits < size:
                            raise JpegFormatError(
                                "bit stream exhausted inside scan")
                        nbits -= size
                        v = (res >> nbits) & ((1 << size) - 1)
                        if v < (1 << (size - 1)):
                            v += (-1 << size) + 1
                        idxs.append(base + k)
                        vals.append(v)
                        k += 1
            preds[ci] = pred

    planes = []
    for nh, nv, _, _, grid_w, idxs, vals, (fc, grid_h, bw, bh) in comps:
        grid = np.zeros(grid_h * grid_w * 64, dtype=np.int64)
        if idxs:
            # indices were collected in zigzag positions; permute to natural
            ii = np.asarray(idxs, dtype=np.int64)
            grid[(ii & -64) + ZIGZAG_TO_NATURAL[ii & 63]] = np.asarray(
                vals, dtype=np.int64)
        grid = grid.reshape(grid_h, grid_w, 64)
        cropped = grid[:bh, :bw]
        if idxs and (cropped.min() < -32768 or cropped.max() > 32767):
            raise JpegFormatError("decoded coefficient outside 16-bit range")
        planes.append(QuantizedPlane(fc.component_id, bw, bh,
                                     cropped.astype(np.int16)))
    return planes


def dequantize_plane(plane, quant_table):
    """Multiply quantized coefficients by the (zigzag-ordered) quant table.

    The table is reordered to natural frequency order here, exactly once;
    plane data is already natural-order.
    """
    table = np.asarray(quant_table, dtype=np.int32)
    if table.shape != (64,):
        raise ValueError(f"expected 64 quant entries, got {table.shape}")
    natural = np.empty(64, dtype=np.int32)
    natural[ZIGZAG_TO_NATURAL] = table
    values = plane.blocks.astype(np.int32) * natural
    return DctPlane(plane.component_id, plane.blocks_wide, plane.blocks_high,
                    values.astype(np.float32))


def partial_decode(data):
    """Decode a baseline JPEG to dequantized DCT coefficient planes.

    No inverse DCT, no chroma upsampling, no color conversion: the result
    is the frequency-domain picture a network consumes directly.
    """
    structure = parse_markers(data)
    quantized = decode_scan(structure)
    frame_by_id = {c.component_id: c for c in structure.frame.components}
    dct_planes = [
        dequantize_plane(p, structure.quant_tables[frame_by_id[p.component_id].quant_id])
        for p in quantized
    ]
    y = dct_planes[0]
    cb = dct_planes[1] if len(dct_planes) == 3 else None
    cr = dct_planes[2] if len(dct_planes) == 3 else None
    return DctImage(structure.frame.width, structure.frame.height,
                    structure.frame.sampling, y, cb, cr)


def _plane_to_samples(plane, comp_w, comp_h):
    """IDCT one coefficient plane and crop to the component extent."""
    bh, bw = plane.blocks_high, plane.blocks_wide
    coeffs = plane.blocks.astype(np.float64).reshape(bh, bw, 8, 8)
    spatial = idct_blocks(coeffs) + 128.0
    pixels = spatial.transpose(0, 2, 1, 3).reshape(bh * 8, bw * 8)
    pixels = np.clip(round_half_away(pixels), 0, 255)
    return pixels[:comp_h, :comp_w]


def full_decode(data):
    """Decode a baseline JPEG all the way to RGB pixels (H, W, 3) uint8.

    Reconstruction: per-block inverse DCT, +128 level shift, rounding and
    clamping, chroma upsampling by sample replication (co-sited, top-left),
    then full-range BT.601 conversion.  Grayscale replicates Y into all
    three channels.
    """
    structure = parse_markers(data)
    quantized = decode_scan(structure)
    frame = structure.frame
    frame_by_id = {c.component_id: c for c in frame.components}
    w, h = frame.width, frame.height

    samples = []
    for plane in quantized:
        fc = frame_by_id[plane.component_id]
        dct = dequantize_plane(plane, structure.quant_tables[fc.quant_id])
        comp_w = ceil_div(w * fc.h, frame.h_max)
        comp_h = ceil_div(h * fc.v, frame.v_max)
        pix = _plane_to_samples(dct, comp_w, comp_h)
        if fc.h != frame.h_max or fc.v != frame.v_max:
            pix = pix.repeat(frame.h_max // fc.h, axis=1).repeat(frame.v_max // fc.v, axis=0)
        samples.append(pix[:h, :w])

    if len(samples) == 1:
        ch = samples[0].astype(np.uint8)
        return np.stack([ch, ch, ch], axis=-1)
    r, g, b = ycbcr_to_rgb(samples[0], samples[1], samples[2])
    return np.stack([r, g, b], axis=-1).astype(np.uint8)


class _BitWriter:
    __slots__ = ("out", "acc", "nbits")

    def __init__(self):
        self.out = bytearray()
        self.acc = 0
        self.nbits = 0

    def write(self, code, length):
        acc = (self.acc << length) | code
        nbits = self.nbits + length
        out = self.out
        while nbits >= 8:
            nbits -= 8
            b = (acc >> nbits) & 0xFF
            out.append(b)
            if b == 0xFF:
                out.append(0x00)  # byte stuffing
        self.acc = acc & ((1 << nbits) - 1)
        self.nbits = nbits

    def pad_to_byte(self):
        if self.nbits:
            pad = 8 - self.nbits
            self.write((1 << pad) - 1, pad)  # 1-fill per T.81 F.1.2.3

    def emit_marker(self, marker):
        self.pad_to_byte()
        self.out += bytes((0xFF, marker))


def _category(v):
    return v.bit_length() if v >= 0 else (-v).bit_length()


def _encode_block(writer, zz, pred, dc_enc, ac_enc):
    dc = zz[0]
    diff = dc - pred
    s = _category(diff)
    if s > 11:
        raise EncodeError(f"DC difference {diff} exceeds category 11")
    try:
        code, ln = dc_enc[s]
    except KeyError:
        raise EncodeError(f"DC table does not code category {s}") from None
    writer.write(code, ln)
    if s:
        writer.write(diff if diff > 0 else diff + (1 << s) - 1, s)

    run = 0
    for k in range(1, 64):
        v = zz[k]
        if v == 0:
            run += 1
            continue
        while run > 15:
            zcode, zln = ac_enc[0xF0]
            writer.write(zcode, zln)
            run -= 16
        s = _category(v)
        if s > 10:
            raise EncodeError(f"AC coefficient {v} exceeds category 10")
        try:
            code, ln = ac_enc[(run << 4) | s]
        except KeyError:
            raise EncodeError(f"AC table does not code run/size {run}/{s}") from None
        writer.write(code, ln)
        writer.write(v if v > 0 else v + (1 << s) - 1, s)
        run = 0
    if run:
        code, ln = ac_enc[0x00]
        writer.write(code, ln)
    return dc


_DUMMY_BLOCK_ZZ = [0] * 64


def encode_baseline(planes, width, height, sampling=None, quant_tables=None,
                    restart_interval=0, huffman_tables=None):
    """Encode quantized coefficient planes as a sequential baseline JPEG.

    planes: one QuantizedPlane (grayscale) or three (Y, Cb, Cr) whose block
    grids must match the declared width/height and sampling layout.
    quant_tables maps table id -> 64 zigzag-ordered entries (defaults to the
    Annex K tables); huffman_tables optionally overrides the Annex K set as
    a {(class, id): HuffmanTable} mapping.  Dummy blocks padding partial
    MCUs are coded as zero DC difference plus EOB.
    """
    if not 1 <= width <= 65535 or not 1 <= height <= 65535:
        raise EncodeError(f"image dimensions {width}x{height} out of range")
    nplanes = len(planes)
    if nplanes == 1:
        sampling = SAMPLING_GRAY
        factors = [(1, 1)]
        comp_ids = [1]
        quant_ids = [0]
        table_ids = [0]
    elif nplanes == 3:
        if sampling is None:
            sampling = SAMPLING_444
        if sampling == SAMPLING_444:
            factors = [(1, 1), (1, 1), (1, 1)]
        elif sampling == SAMPLING_420:
            factors = [(2, 2), (1, 1), (1, 1)]
        else:
            raise EncodeError(f"unknown sampling layout {sampling!r}")
        comp_ids = [1, 2, 3]
        quant_ids = [0, 1, 1]
        table_ids = [0, 1, 1]
    else:
        raise EncodeError(f"expected 1 or 3 planes, got {nplanes}")

    if quant_tables is None:
        quant_tables = {
            0: ANNEX_K_QUANT_LUMA[ZIGZAG_TO_NATURAL],
            1: ANNEX_K_QUANT_CHROMA[ZIGZAG_TO_NATURAL],
        }
    for qid in set(quant_ids):
        table = np.asarray(quant_tables[qid])
        if table.shape != (64,) or np.any(table < 1) or np.any(table > 255):
            raise EncodeError(f"quant table {qid} must hold 64 entries in 1..255")

    if huffman_tables is None:
        huffman_tables = standard_huffman_tables()

    h_max = max(f[0] for f in factors)
    v_max = max(f[1] for f in factors)
    grids = []
    for plane, (fh, fv) in zip(planes, factors):
        bw, bh = plane_grid(width, height, fh, fv, h_max, v_max)
        if (plane.blocks_wide, plane.blocks_high) != (bw, bh):
            raise EncodeError(
                f"component {plane.component_id}: block grid "
                f"{plane.blocks_wide}x{plane.blocks_high} does not match "
                f"{bw}x{bh} for {width}x{height} {sampling}"
            )
        if plane.blocks.shape != (bh, bw, 64):
            raise EncodeError("plane array shape disagrees with declared grid")
        grids.append(plane.blocks)

    out = bytearray(b"\xFF\xD8")
    # JFIF APP0, square pixels, no thumbnail
    out += b"\xFF\xE0" + struct.pack(">H", 16) + b"JFIF\x00\x01\x01\x00\x00\x01\x00\x01\x00\x00"

    dqt = bytearray()
    for qid in sorted(set(quant_ids)):
        dqt.append(qid)
        dqt += bytes(int(v) for v in np.asarray(quant_tables[qid]))
    out += b"\xFF\xDB" + struct.pack(">H", 2 + len(dqt)) + dqt

    out += b"\xFF\xC0" + struct.pack(">HBHHB", 8 + 3 * nplanes, 8, height, width, nplanes)
    for cid, (fh, fv), qid in zip(comp_ids, factors, quant_ids):
        out += bytes((cid, (fh << 4) | fv, qid))

    dht = bytearray()
    for tid in sorted(set(table_ids)):
        for tclass in (0, 1):
            table = huffman_tables[(tclass, tid)]
            dht.append((tclass << 4) | tid)
            dht += bytes(table.code_lengths)
            dht += bytes(table.symbols)
    out += b"\xFF\xC4" + struct.pack(">H", 2 + len(dht)) + dht

    if restart_interval:
        if not 0 < restart_interval <= 65535:
            raise EncodeError(f"restart interval {restart_interval} out of range")
        out += b"\xFF\xDD" + struct.pack(">HH", 4, restart_interval)

    out += b"\xFF\xDA" + struct.pack(">HB", 6 + 2 * nplanes, nplanes)
    for cid, tid in zip(comp_ids, table_ids):
        out += bytes((cid, (tid << 4) | tid))
    out += b"\x00\x3F\x00"

    enc_tables = [
        (huffman_tables[(0, tid)].encode, huffman_tables[(1, tid)].encode)
        for tid in table_ids
    ]
    zz_grids = [g[:, :, ZIGZAG_TO_NATURAL] for g in grids]

    interleaved = nplanes > 1
    mcus_x = ceil_div(width, 8 * h_max)
    mcus_y = ceil_div(height, 8 * v_max)
    writer = _BitWriter()
    preds = [0] * nplanes
    rst = 0
    total_mcus = mcus_x * mcus_y
    for mcu in range(total_mcus):
        if restart_interval and mcu and mcu % restart_interval == 0:
            writer.emit_marker(0xD0 + rst)
            rst = (rst + 1) & 7
            preds = [0] * nplanes
        mx, my = mcu % mcus_x, mcu // mcus_x
        for ci in range(nplanes):
            fh, fv = factors[ci] if interleaved else (1, 1)
            dc_enc, ac_enc = enc_tables[ci]
            grid = zz_grids[ci]
            gh, gw = grid.shape[0], grid.shape[1]
            for by in range(fv):
                for bx in range(fh):
                    gy, gx = my * fv + by, mx * fh + bx
                    if gy >= gh or gx >= gw:
                        # padding block of a partial MCU
                        zz = _DUMMY_BLOCK_ZZ.copy()
                        zz[0] = preds[ci]
                        _encode_block(writer, zz, preds[ci], dc_enc, ac_enc)
                    else:
                        preds[ci] = _encode_block(
                            writer, [int(v) for v in grid[gy, gx]],
                            preds[ci], dc_enc, ac_enc,
                        )
    writer.pad_to_byte()
    out += writer.out
    out += b"\xFF\xD9"
    return bytes(out)


# ---------------------------------------------------------------------------
# coefficient-tensor container ("DCTT"): the on-disk form of a DctImage

DCTT_MAGIC = b"DCTT"
DCTT_VERSION = 1


def save_dct_tensor(path, planes):
    """Write DctPlanes to the DCTT container (little-endian, float32)."""
    blob = bytearray(DCTT_MAGIC)
    blob.append(DCTT_VERSION)
    blob.append(len(planes))
    for p in planes:
        if not 0 <= p.component_id <= 255:
            raise ValueError(f"component id {p.component_id} out of byte range")
        blob.append(p.component_id)
        blob += struct.pack("<HH", p.blocks_wide, p.blocks_high)
        blob += np.ascontiguousarray(p.blocks, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(blob)


def load_dct_tensor(path):
    """Read DctPlanes back from a DCTT container."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != DCTT_MAGIC:
        raise ValueError("not a DCTT file (bad magic)")
    if len(blob) < 6:
        raise ValueError("truncated DCTT file")
    if blob[4] != DCTT_VERSION:
        raise ValueError(f"unsupported DCTT version {blob[4]}")
    count = blob[5]
    pos = 6
    planes = []
    for _ in range(count):
        if pos + 5 > len(blob):
            raise ValueError("truncated DCTT file")
        cid = blob[pos]
        bw, bh = struct.unpack_from("<HH", blob, pos + 1)
        pos += 5
        nbytes = bw * bh * 64 * 4
        if pos + nbytes > len(blob):
            raise ValueError("truncated DCTT file")
        data = np.frombuffer(blob[pos:pos + nbytes], dtype="<f4").reshape(bh, bw, 64)
        pos += nbytes
        planes.append(DctPlane(cid, bw, bh, data.copy()))
    if pos != len(blob):
        raise ValueError("trailing bytes in DCTT file")
    return planes

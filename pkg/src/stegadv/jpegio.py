"""Baseline grayscale JPEG at the quantized-DCT-coefficient level.

Coefficients are held in "block layout": a (height, width) integer array in
which the 8x8 block at block-row ``i``, block-column ``j`` occupies
``coeffs[8*i:8*i+8, 8*j:8*j+8]`` and entry ``(u, v)`` of that block is the
coefficient at vertical frequency ``u`` and horizontal frequency ``v``.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

BLOCK = 8
COEFF_MIN = -1024
COEFF_MAX = 1023
# Baseline 8-bit AC magnitudes use at most category 10.
AC_MIN = -1023

BASE_LUMINANCE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)

# ZIGZAG[k] = natural (row-major) index of the k-th zig-zag coefficient.
ZIGZAG = np.array([
    0, 1, 8, 16, 9, 2, 3, 10,
    17, 24, 32, 25, 18, 11, 4, 5,
    12, 19, 26, 33, 40, 48, 41, 34,
    27, 20, 13, 6, 7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36,
    29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46,
    53, 60, 61, 54, 47, 55, 62, 63,
])


class JPEGError(ValueError):
    """Raised for malformed or unsupported JPEG streams."""


class EncodeError(ValueError):
    pass


def _dct_matrix() -> np.ndarray:
    n = np.arange(BLOCK)
    d = np.cos((2 * n[None, :] + 1) * n[:, None] * np.pi / (2 * BLOCK))
    d[0] *= np.sqrt(1.0 / BLOCK)
    d[1:] *= np.sqrt(2.0 / BLOCK)
    return d


DCT = _dct_matrix()


@dataclass
class CoefficientImage:
    """Quantized DCT coefficients of a grayscale JPEG.

    ``quant_table`` is an 8x8 array in natural order; JPEG files and SCF1
    containers store it zig-zag ordered.
    """

    coeffs: np.ndarray
    quant_table: np.ndarray
    quality_factor: int | None = None

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.int32)
        self.quant_table = np.asarray(self.quant_table, dtype=np.int64).reshape(BLOCK, BLOCK)
        h, w = self.coeffs.shape
        if h % BLOCK or w % BLOCK:
            raise ValueError(f"dimensions {w}x{h} are not multiples of 8")
        if self.quant_table.min() < 1 or self.quant_table.max() > 255:
            raise ValueError("quantization table entries must lie in [1, 255]")

    @property
    def height(self) -> int:
        return self.coeffs.shape[0]

    @property
    def width(self) -> int:
        return self.coeffs.shape[1]

    @property
    def quant_grid(self) -> np.ndarray:
        """Quantization step for every coefficient position."""
        return np.tile(self.quant_table, (self.height // BLOCK, self.width // BLOCK))

    def zigzag_table(self) -> list[int]:
        return [int(x) for x in self.quant_table.reshape(-1)[ZIGZAG]]

    def copy(self) -> "CoefficientImage":
        return CoefficientImage(self.coeffs.copy(), self.quant_table.copy(), self.quality_factor)

    def __eq__(self, other):
        if not isinstance(other, CoefficientImage):
            return NotImplemented
        return (np.array_equal(self.coeffs, other.coeffs)
                and np.array_equal(self.quant_table, other.quant_table))


@dataclass
class SpatialImage:
    samples: np.ndarray

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]


def coefficient_bounds(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Per-position representable range (DC may reach -1024, AC stops at -1023)."""
    lo = np.full(shape, AC_MIN, dtype=np.int32)
    lo[::BLOCK, ::BLOCK] = COEFF_MIN
    hi = np.full(shape, COEFF_MAX, dtype=np.int32)
    return lo, hi


def dc_mask(shape: tuple[int, int]) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    mask[::BLOCK, ::BLOCK] = True
    return mask


def to_blocks(grid: np.ndarray) -> np.ndarray:
    """(H, W) -> (H/8, W/8, 8, 8)."""
    h, w = grid.shape
    return grid.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).swapaxes(1, 2)


def from_blocks(blocks: np.ndarray) -> np.ndarray:
    bh, bw = blocks.shape[:2]
    return blocks.swapaxes(1, 2).reshape(bh * BLOCK, bw * BLOCK)


def block_dct(grid: np.ndarray) -> np.ndarray:
    """Orthonormal 8x8 forward DCT of every block of a (H, W) array."""
    return from_blocks(DCT @ to_blocks(grid) @ DCT.T)


def block_idct(grid: np.ndarray) -> np.ndarray:
    return from_blocks(DCT.T @ to_blocks(grid) @ DCT)


def ijg_quant_table(qf: int) -> np.ndarray:
    if not 1 <= qf <= 100:
        raise ValueError(f"quality factor must be in [1, 100], got {qf}")
    scale = 5000 // qf if qf < 50 else 200 - 2 * qf
    q = (BASE_LUMINANCE * scale + 50) // 100
    return np.clip(q, 1, 255)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def compress_gray(samples: np.ndarray, qf: int) -> CoefficientImage:
    """Compress an 8-bit grayscale image to quantized DCT coefficients."""
    table = ijg_quant_table(qf)
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a 2-D grayscale array")
    h, w = x.shape
    ph, pw = -h % BLOCK, -w % BLOCK
    if ph or pw:
        log.warning("padding %dx%d image to %dx%d by edge replication", w, h, w + pw, h + ph)
        x = np.pad(x, ((0, ph), (0, pw)), mode="edge")
    c = block_dct(x - 128.0) / np.tile(table, (x.shape[0] // BLOCK, x.shape[1] // BLOCK))
    c = np.clip(round_half_away(c), COEFF_MIN, COEFF_MAX)
    lo, hi = coefficient_bounds(c.shape)
    c = np.clip(c, lo, hi)
    return CoefficientImage(c.astype(np.int32), table, qf)


def dequantize(img: CoefficientImage) -> np.ndarray:
    return img.coeffs * img.quant_grid.astype(np.float64)


def decompress(img: CoefficientImage) -> SpatialImage:
    """Dequantize and inverse-DCT without rounding or clipping."""
    return SpatialImage(block_idct(dequantize(img)) + 128.0)


def count_nzac(img: CoefficientImage) -> int:
    nz = img.coeffs != 0
    return int(nz.sum() - nz[::BLOCK, ::BLOCK].sum())


# --------------------------------------------------------------------------
# Huffman tables

def _category(v: int) -> int:
    return int(abs(v)).bit_length()


def optimal_code_lengths(freq: dict[int, int]) -> tuple[list[int], list[int]]:
    """Length-limited Huffman code (JPEG Annex K.2).

    Returns (BITS[1..16], HUFFVAL) as stored in a DHT segment.
    """
    symbols = sorted(freq)
    if not symbols:
        symbols = [0]
        freq = {0: 1}
    # one reserved pseudo-symbol keeps the all-ones codeword unused
    f = [freq[s] for s in symbols] + [1]
    n = len(f)
    codesize = [0] * n
    others = [-1] * n
    live = list(range(n))
    while len(live) > 1:
        live.sort(key=lambda i: (f[i], -i))
        v1, v2 = live[0], live[1]
        # Annex K picks the larger index among ties as v1; keep it deterministic
        f[v1] += f[v2]
        f[v2] = 0
        live.pop(1)
        codesize[v1] += 1
        while others[v1] != -1:
            v1 = others[v1]
            codesize[v1] += 1
        others[v1] = v2
        codesize[v2] += 1
        while others[v2] != -1:
            v2 = others[v2]
            codesize[v2] += 1
    bits = [0] * 33
    for cs in codesize:
        if cs:
            bits[cs] += 1
    i = 32
    while i > 16:
        while bits[i] > 0:
            j = i - 2
            while bits[j] == 0:
                j -= 1
            bits[i] -= 2
            bits[i - 1] += 1
            bits[j + 1] += 2
            bits[j] -= 1
        i -= 1
    while bits[i] == 0:
        i -= 1
    bits[i] -= 1  # drop the reserved symbol
    order = sorted(range(n - 1), key=lambda k: (codesize[k], symbols[k]))
    huffval = [symbols[k] for k in order]
    return bits[1:17], huffval


def _generate_codes(bits: list[int], huffval: list[int]) -> dict[int, tuple[int, int]]:
    codes = {}
    code = 0
    k = 0
    for length in range(1, 17):
        for _ in range(bits[length - 1]):
            codes[huffval[k]] = (code, length)
            code += 1
            k += 1
        code <<= 1
    return codes


class _HuffmanLookup:
    """16-bit peek table: prefix -> (symbol, code length)."""

    def __init__(self, bits: list[int], huffval: list[int]):
        if sum(bits) != len(huffval):
            raise JPEGError("DHT: symbol count does not match code-length counts")
        self.symbol = np.full(1 << 16, -1, dtype=np.int32)
        self.length = np.zeros(1 << 16, dtype=np.int32)
        for sym, (code, length) in _generate_codes(bits, huffval).items():
            if code >= (1 << length):
                raise JPEGError("DHT: invalid code-length counts")
            start = code << (16 - length)
            stop = (code + 1) << (16 - length)
            self.symbol[start:stop] = sym
            self.length[start:stop] = length
        self.symbol = self.symbol.tolist()
        self.length = self.length.tolist()


# --------------------------------------------------------------------------
# Encoding

def _block_symbols(zz: list[int], pred: int):
    """Yield (table, symbol, extra_bits, extra_len) for one zig-zag block."""
    diff = zz[0] - pred
    cat = _category(diff)
    yield 0, cat, (diff if diff >= 0 else diff + (1 << cat) - 1), cat
    run = 0
    last = 63
    while last > 0 and zz[last] == 0:
        last -= 1
    for k in range(1, last + 1):
        v = zz[k]
        if v == 0:
            run += 1
            continue
        while run > 15:
            yield 1, 0xF0, 0, 0
            run -= 16
        cat = _category(v)
        yield 1, (run << 4) | cat, (v if v >= 0 else v + (1 << cat) - 1), cat
        run = 0
    if last < 63:
        yield 1, 0x00, 0, 0


def _check_range(img: CoefficientImage):
    lo, hi = coefficient_bounds(img.coeffs.shape)
    bad = (img.coeffs < lo) | (img.coeffs > hi)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise EncodeError(
            f"coefficient {int(img.coeffs[r, c])} at ({r}, {c}) outside representable range")


def _segment(marker: int, payload: bytes) -> bytes:
    return struct.pack(">BBH", 0xFF, marker, len(payload) + 2) + payload


def encode_jpeg(img: CoefficientImage) -> bytes:
    """Serialize coefficients as a baseline JPEG with optimal Huffman tables."""
    _check_range(img)
    blocks = to_blocks(img.coeffs).reshape(-1, 64)[:, ZIGZAG].tolist()
    stream = []
    pred = 0
    for zz in blocks:
        stream.extend(_block_symbols(zz, pred))
        pred = zz[0]
    freq = ({}, {})
    for table, sym, _, _ in stream:
        freq[table][sym] = freq[table].get(sym, 0) + 1
    dc_bits, dc_val = optimal_code_lengths(freq[0])
    ac_bits, ac_val = optimal_code_lengths(freq[1])
    codes = (_generate_codes(dc_bits, dc_val), _generate_codes(ac_bits, ac_val))

    pieces = []
    for table, sym, extra, nextra in stream:
        code, length = codes[table][sym]
        pieces.append(format(code, f"0{length}b"))
        if nextra:
            pieces.append(format(extra, f"0{nextra}b"))
    bitstr = "".join(pieces)
    bitstr += "1" * (-len(bitstr) % 8)
    raw = int(bitstr, 2).to_bytes(len(bitstr) // 8, "big") if bitstr else b""
    scan = raw.replace(b"\xff", b"\xff\x00")

    out = bytearray(b"\xff\xd8")
    out += _segment(0xE0, b"JFIF\x00\x01\x01\x00\x00\x01\x00\x01\x00\x00")
    out += _segment(0xDB, bytes([0]) + bytes(img.zigzag_table()))
    out += _segment(0xC0, struct.pack(">BHHBBBB", 8, img.height, img.width, 1, 1, 0x11, 0))
    out += _segment(0xC4, bytes([0x00]) + bytes(dc_bits) + bytes(dc_val)
                    + bytes([0x10]) + bytes(ac_bits) + bytes(ac_val))
    out += _segment(0xDA, bytes([1, 1, 0x00, 0, 63, 0]))
    out += scan
    out += b"\xff\xd9"
    return bytes(out)


# --------------------------------------------------------------------------
# Decoding

_SOF_NAMES = {
    0xC1: "SOF1 (extended sequential)", 0xC2: "SOF2 (progressive)",
    0xC3: "SOF3 (lossless)", 0xC5: "SOF5", 0xC6: "SOF6", 0xC7: "SOF7",
    0xC9: "SOF9 (arithmetic)", 0xCA: "SOF10 (arithmetic progressive)",
    0xCB: "SOF11", 0xCD: "SOF13", 0xCE: "SOF14", 0xCF: "SOF15",
}


class _BitReader:
    def __init__(self, data: bytes):
        self.bits = "".join(format(b, "08b") for b in data) + "1" * 32
        self.nbits = len(data) * 8
        self.pos = 0

    def peek16(self) -> int:
        return int(self.bits[self.pos:self.pos + 16], 2)

    def read(self, n: int) -> int:
        v = int(self.bits[self.pos:self.pos + n], 2)
        self.pos += n
        return v

    def exhausted(self) -> bool:
        return self.pos > self.nbits


def _extend(v: int, n: int) -> int:
    return v - (1 << n) + 1 if v < (1 << (n - 1)) else v


def _split_scan(data: bytes, start: int) -> tuple[list[bytes], int]:
    """Cut entropy-coded data at RST markers; return segments and end offset."""
    segments = []
    seg = bytearray()
    i = start
    n = len(data)
    while i < n:
        b = data[i]
        if b != 0xFF:
            seg.append(b)
            i += 1
            continue
        if i + 1 >= n:
            raise JPEGError("truncated entropy-coded segment (missing EOI)")
        nxt = data[i + 1]
        if nxt == 0x00:
            seg.append(0xFF)
            i += 2
        elif nxt == 0xFF:
            i += 1
        elif 0xD0 <= nxt <= 0xD7:
            segments.append(bytes(seg))
            seg = bytearray()
            i += 2
        else:
            segments.append(bytes(seg))
            return segments, i
    raise JPEGError("truncated entropy-coded segment (missing EOI)")


def _decode_scan(segments, nblocks, restart, dc_tab, ac_tab):
    out = np.zeros((nblocks, 64), dtype=np.int32)
    per_seg = restart if restart else nblocks
    b = 0
    for seg in segments:
        reader = _BitReader(seg)
        pred = 0
        for _ in range(per_seg):
            if b >= nblocks:
                break
            zz = [0] * 64
            p = reader.peek16()
            s = dc_tab.symbol[p]
            if s < 0:
                raise JPEGError("SOS: invalid DC Huffman code")
            reader.pos += dc_tab.length[p]
            if s > 11:
                raise JPEGError("SOS: DC category out of range")
            diff = _extend(reader.read(s), s) if s else 0
            pred += diff
            zz[0] = pred
            k = 1
            while k < 64:
                p = reader.peek16()
                rs = ac_tab.symbol[p]
                if rs < 0:
                    raise JPEGError("SOS: invalid AC Huffman code")
                reader.pos += ac_tab.length[p]
                r, s = rs >> 4, rs & 15
                if s == 0:
                    if r == 15:
                        k += 16
                        continue
                    break
                k += r
                if k > 63:
                    raise JPEGError("SOS: AC run exceeds block")
                zz[k] = _extend(reader.read(s), s)
                k += 1
            if reader.exhausted():
                raise JPEGError("SOS: entropy-coded data ended early")
            out[b] = zz
            b += 1
    if b != nblocks:
        raise JPEGError(f"SOS: decoded {b} of {nblocks} blocks")
    return out


def decode_jpeg(data: bytes) -> CoefficientImage:
    """Parse a baseline grayscale JPEG into its quantized coefficients."""
    if len(data) < 2 or data[0] != 0xFF or data[1] != 0xD8:
        raise JPEGError("missing SOI marker")
    qtables: dict[int, np.ndarray] = {}
    htables: dict[tuple[int, int], _HuffmanLookup] = {}
    frame = None
    restart = 0
    pos = 2
    n = len(data)
    while True:
        while pos < n and data[pos] != 0xFF:
            pos += 1
        while pos < n and data[pos] == 0xFF:
            pos += 1
        if pos >= n:
            raise JPEGError("missing SOF0" if frame is None else "missing SOS")
        marker = data[pos]
        pos += 1
        if marker == 0xD9:
            raise JPEGError("missing SOS" if frame is not None else "missing SOF0")
        if 0xD0 <= marker <= 0xD7 or marker == 0x01:
            continue
        if pos + 2 > n:
            raise JPEGError(f"truncated segment length for marker 0x{marker:02X}")
        length = struct.unpack(">H", data[pos:pos + 2])[0]
        body = data[pos + 2:pos + length]
        if length < 2 or len(body) != length - 2:
            raise JPEGError(f"truncated segment for marker 0x{marker:02X}")
        pos += length

        if marker == 0xDB:
            i = 0
            while i < len(body):
                pq, tq = body[i] >> 4, body[i] & 15
                if pq != 0:
                    raise JPEGError("DQT: 16-bit quantization tables unsupported")
                vals = body[i + 1:i + 65]
                if len(vals) != 64:
                    raise JPEGError("DQT: truncated table")
                table = np.zeros(64, dtype=np.int64)
                table[ZIGZAG] = list(vals)
                qtables[tq] = table.reshape(BLOCK, BLOCK)
                i += 65
        elif marker == 0xC4:
            i = 0
            while i < len(body):
                tc, th = body[i] >> 4, body[i] & 15
                bits = list(body[i + 1:i + 17])
                total = sum(bits)
                vals = list(body[i + 17:i + 17 + total])
                if len(bits) != 16 or len(vals) != total:
                    raise JPEGError("DHT: truncated table")
                htables[(tc, th)] = _HuffmanLookup(bits, vals)
                i += 17 + total
        elif marker == 0xC0:
            if len(body) < 6:
                raise JPEGError("SOF0: truncated frame header")
            precision, height, width, ncomp = struct.unpack(">BHHB", body[:6])
            if precision != 8:
                raise JPEGError(f"SOF0: unsupported sample precision {precision}")
            if ncomp != 1:
                raise JPEGError(f"SOF0: {ncomp} components; only grayscale is supported")
            cid, samp, tq = body[6], body[7], body[8]
            if height == 0 or width == 0:
                raise JPEGError("SOF0: zero image dimension")
            frame = (height, width, cid, tq)
        elif marker in _SOF_NAMES:
            raise JPEGError(f"unsupported frame type {_SOF_NAMES[marker]}")
        elif marker == 0xDD:
            restart = struct.unpack(">H", body[:2])[0]
        elif marker == 0xDA:
            if frame is None:
                raise JPEGError("SOS before SOF0")
            if body[0] != 1:
                raise JPEGError("SOS: multi-component scan unsupported")
            td, ta = body[2] >> 4, body[2] & 15
            ss, se, a = body[3], body[4], body[5]
            if ss != 0 or se != 63 or a != 0:
                raise JPEGError("SOS: spectral selection/approximation not baseline")
            height, width, _, tq = frame
            if tq not in qtables:
                raise JPEGError("SOF0 references a missing DQT table")
            if (0, td) not in htables or (1, ta) not in htables:
                raise JPEGError("SOS references a missing DHT table")
            bh, bw = -(-height // BLOCK), -(-width // BLOCK)
            segments, _ = _split_scan(data, pos)
            zz = _decode_scan(segments, bh * bw, restart, htables[(0, td)], htables[(1, ta)])
            nat = np.zeros_like(zz)
            nat[:, ZIGZAG] = zz
            coeffs = from_blocks(nat.reshape(bh, bw, BLOCK, BLOCK))
            if height % BLOCK or width % BLOCK:
                log.warning("JPEG dimensions %dx%d not block aligned; keeping padded blocks",
                            width, height)
            return CoefficientImage(coeffs, qtables[tq], _guess_quality(qtables[tq]))
        # APPn, COM and other segments are skipped


def _guess_quality(table: np.ndarray) -> int | None:
    for qf in range(100, 0, -1):
        if np.array_equal(ijg_quant_table(qf), table):
            return qf
    return None


# --------------------------------------------------------------------------
# PGM

def read_pgm(data: bytes) -> np.ndarray:
    """Parse a binary (P5) PGM with maxval <= 255."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM (P5) file")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ValueError("16-bit PGM unsupported")
    pos += 1
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return pixels.reshape(height, width).copy()


def write_pgm(samples: np.ndarray) -> bytes:
    arr = np.asarray(samples, dtype=np.uint8)
    h, w = arr.shape
    return f"P5\n{w} {h}\n255\n".encode() + arr.tobytes()

"""8x8 DCT reference math, zigzag ordering, quantization and color conversion.

All DCT arithmetic runs in float64 regardless of the caller's dtype; the
normalization is the orthonormal one used by JPEG (T.81 A.3.3), so a constant
block of value c has DC coefficient 8*c and Parseval holds exactly.
"""

from __future__ import annotations

import numpy as np

LEVEL_SHIFT = 128  # T.81 A.3.1, P=8


def _walk_zigzag():
    # standard JPEG zigzag traversal of the 8x8 grid
    order = []
    row = col = 0
    for _ in range(64):
        order.append((row, col))
        if (row + col) % 2 == 0:  # moving up-right
            if col == 7:
                row += 1
            elif row == 0:
                col += 1
            else:
                row -= 1
                col += 1
        else:  # moving down-left
            if row == 7:
                col += 1
            elif col == 0:
                row += 1
            else:
                row += 1
                col -= 1
    return tuple(order)


ZIGZAG_POSITIONS = _walk_zigzag()

# flat natural index (row*8+col) of the k-th zigzag entry, and its inverse
ZIGZAG_TO_NATURAL = np.array([r * 8 + c for r, c in ZIGZAG_POSITIONS], dtype=np.intp)
NATURAL_TO_ZIGZAG = np.empty(64, dtype=np.intp)
NATURAL_TO_ZIGZAG[ZIGZAG_TO_NATURAL] = np.arange(64)


def zigzag_index(i):
    """(row, col) of the i-th coefficient in zigzag order, i in 0..63."""
    if not 0 <= i <= 63:
        raise ValueError(f"zigzag index out of range: {i}")
    return ZIGZAG_POSITIONS[i]


def zigzag_rank(row, col):
    """Inverse of zigzag_index: position of (row, col) in the zigzag walk."""
    if not (0 <= row <= 7 and 0 <= col <= 7):
        raise ValueError(f"block position out of range: ({row}, {col})")
    return int(NATURAL_TO_ZIGZAG[row * 8 + col])


def _dct_basis():
    u = np.arange(8).reshape(8, 1)
    x = np.arange(8).reshape(1, 8)
    basis = 0.5 * np.cos((2 * x + 1) * u * np.pi / 16)
    basis[0, :] /= np.sqrt(2.0)
    return basis


# orthonormal 1-D basis; rows are frequencies (B @ B.T == I)
DCT_BASIS = _dct_basis()


def fdct8x8(block):
    """Forward 2-D DCT of one 8x8 spatial block (orthonormal scaling)."""
    b = np.asarray(block, dtype=np.float64)
    if b.shape != (8, 8):
        raise ValueError(f"expected an 8x8 block, got {b.shape}")
    return DCT_BASIS @ b @ DCT_BASIS.T


def idct8x8(coeffs):
    """Inverse 2-D DCT of one 8x8 coefficient block."""
    c = np.asarray(coeffs, dtype=np.float64)
    if c.shape != (8, 8):
        raise ValueError(f"expected an 8x8 block, got {c.shape}")
    return DCT_BASIS.T @ c @ DCT_BASIS


def fdct_blocks(blocks):
    """Forward DCT over a batch shaped (..., 8, 8)."""
    b = np.asarray(blocks, dtype=np.float64)
    return DCT_BASIS @ b @ DCT_BASIS.T


def idct_blocks(coeffs):
    """Inverse DCT over a batch shaped (..., 8, 8)."""
    c = np.asarray(coeffs, dtype=np.float64)
    return DCT_BASIS.T @ c @ DCT_BASIS


def round_half_away(x):
    """Round to nearest with ties away from zero (the JPEG convention)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _table_as_block(table):
    t = np.asarray(table)
    if t.size != 64:
        raise ValueError("quantization table must hold 64 entries")
    return t.reshape(8, 8)


def quantize_block(coeffs, table):
    """Divide DCT coefficients by a natural-order table and round."""
    c = np.asarray(coeffs, dtype=np.float64)
    t = _table_as_block(table).astype(np.float64)
    return round_half_away(c / t).astype(np.int32)


def dequantize_block(quantized, table):
    """Multiply quantized coefficients by a natural-order table."""
    q = np.asarray(quantized, dtype=np.int64)
    t = _table_as_block(table).astype(np.int64)
    return (q * t).astype(np.float64)


# full-range BT.601 (JFIF) conversion matrix
_YCC_FROM_RGB = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)


def ycbcr_to_rgb(y, cb, cr):
    """Full-range BT.601 YCbCr -> RGB, rounded half away and clamped to [0, 255]."""
    y = np.asarray(y, dtype=np.float64)
    cb = np.asarray(cb, dtype=np.float64) - 128.0
    cr = np.asarray(cr, dtype=np.float64) - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    out = [np.clip(round_half_away(v), 0, 255) for v in (r, g, b)]
    return tuple(out)


def rgb_to_ycbcr(r, g, b):
    """Full-range BT.601 RGB -> YCbCr, rounded half away and clamped to [0, 255]."""
    rgb = [np.asarray(v, dtype=np.float64) for v in (r, g, b)]
    y = _YCC_FROM_RGB[0, 0] * rgb[0] + _YCC_FROM_RGB[0, 1] * rgb[1] + _YCC_FROM_RGB[0, 2] * rgb[2]
    cb = 128.0 + _YCC_FROM_RGB[1, 0] * rgb[0] + _YCC_FROM_RGB[1, 1] * rgb[1] + _YCC_FROM_RGB[1, 2] * rgb[2]
    cr = 128.0 + _YCC_FROM_RGB[2, 0] * rgb[0] + _YCC_FROM_RGB[2, 1] * rgb[1] + _YCC_FROM_RGB[2, 2] * rgb[2]
    out = [np.clip(round_half_away(v), 0, 255) for v in (y, cb, cr)]
    return tuple(out)


def bilinear_resize(image, out_h, out_w):
    """Resize (H, W) or (H, W, C) to (out_h, out_w[, C]) by bilinear
    interpolation with half-pixel-aligned sample centers."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise ValueError("expected a (H, W) or (H, W, C) array")
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be positive")
    in_h, in_w = img.shape[:2]

    def axis_weights(n_in, n_out):
        # clamping the centers (not the indices) replicates edge samples
        centers = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        centers = np.clip(centers, 0.0, n_in - 1.0)
        lo = np.floor(centers).astype(np.int64)
        frac = centers - lo
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, frac

    y0, y1, fy = axis_weights(in_h, out_h)
    x0, x1, fx = axis_weights(in_w, out_w)
    fy = fy.reshape(-1, 1) if img.ndim == 2 else fy.reshape(-1, 1, 1)
    fx = fx.reshape(1, -1) if img.ndim == 2 else fx.reshape(1, -1, 1)
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy

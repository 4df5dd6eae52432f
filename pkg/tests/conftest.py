"""Shared test fixtures: synthetic images, Pillow-encoded JPEG corpora, and
randomized quantized-coefficient planes for roundtrip properties.

Pillow (libjpeg) acts as the independent reference codec throughout: it
encodes the corpora our decoder is checked against, and it decodes the output
of our encoder in the cross-validation tests.
"""

import io

import numpy as np
import pytest
from PIL import Image

from dctdet.codec import QuantizedPlane, plane_grid


# ---------------------------------------------------------------------------
# synthetic image content


def synth_gray(width, height, seed, kind):
    """Deterministic uint8 test pattern of the requested flavor."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    if kind == "gradient":
        img = (xx * 255.0 / max(width - 1, 1) + yy * 97.0 / max(height - 1, 1)) % 256
    elif kind == "blobs":
        img = np.full((height, width), 96.0)
        for _ in range(6):
            cx = rng.uniform(0, width)
            cy = rng.uniform(0, height)
            amp = rng.uniform(-120, 140)
            sig = rng.uniform(2, max(width, height) / 3)
            img += amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sig * sig))
    elif kind == "checker":
        img = ((xx // 8 + yy // 8) % 2) * 180.0 + 40.0 + xx * 0.1
    elif kind == "edges":
        img = np.where((xx % 23) < 11, 30.0, 220.0)
        img = np.where((yy % 17) < 3, 128.0, img)
    elif kind == "noise":
        img = rng.uniform(0, 255, size=(height, width))
    else:
        raise ValueError(f"unknown pattern kind {kind!r}")
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def synth_rgb(width, height, seed):
    """Saturated color pattern (hue ramps plus random tinted blobs)."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    r = 128 + 120 * np.sin(xx * 0.21 + 1.0)
    g = 128 + 120 * np.sin(yy * 0.17 + 3.0)
    b = 128 + 120 * np.sin((xx + yy) * 0.13)
    img = np.stack([r, g, b], axis=-1)
    for _ in range(4):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        sig = rng.uniform(3, max(width, height) / 2)
        tint = rng.uniform(-100, 100, size=3)
        mask = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sig * sig))
        img += mask[..., None] * tint
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def encode_with_pil(array, quality, subsampling):
    """Encode an array through Pillow; subsampling 0 is 4:4:4, 2 is 4:2:0."""
    mode = "L" if array.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(array, mode).save(
        buf, "JPEG", quality=quality, subsampling=subsampling)
    return buf.getvalue()


def pil_rgb(data):
    """Reference full decode to RGB."""
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"))


def pil_reconstruction_samples(data):
    """Reference decoder's raw reconstructed samples, before color conversion.

    Grayscale files give the Y plane; 4:4:4 color files use draft mode to stop
    libjpeg after the IDCT, yielding the YCbCr samples as (h, w, 3).
    """
    with Image.open(io.BytesIO(data)) as im:
        if im.mode == "L":
            return np.asarray(im)[..., None]
        im.draft("YCbCr", im.size)
        im.load()
        assert im.mode == "YCbCr", "draft decode not honored"
        return np.asarray(im)


# ---------------------------------------------------------------------------
# JPEG corpora (session-scoped; every entry is (name, bytes))

_SIZES = [(8, 8), (16, 24), (40, 40), (64, 48), (65, 41), (96, 100),
          (120, 80), (128, 128), (130, 94), (56, 112)]
_KINDS = ["gradient", "blobs", "checker", "edges", "noise"]

# Conformance/benchmark corpus recipe.  Content mirrors a realistic decode
# workload: mostly photographic-like images across the size range, with the
# adversarial patterns (dense noise, full-quality grids) kept at small sizes
# where they stress the codec without reducing the corpus to a worst case.
_CONFORMANCE_RECIPE = [
    ("gradient", 8, 8, 85),
    ("noise", 16, 24, 100),
    ("blobs", 40, 40, 75),
    ("checker", 64, 48, 80),
    ("edges", 65, 41, 88),
    ("noise", 56, 56, 92),
    ("gradient", 96, 100, 70),
    ("blobs", 120, 80, 95),
    ("checker", 128, 128, 75),
    ("edges", 130, 94, 85),
    ("noise", 64, 64, 70),
    ("gradient", 160, 128, 92),
    ("blobs", 192, 160, 85),
    ("checker", 96, 96, 98),
    ("edges", 112, 56, 100),
    ("blobs", 224, 192, 80),
    ("gradient", 256, 224, 88),
    ("blobs", 256, 256, 75),
    ("gradient", 320, 256, 82),
    ("blobs", 320, 320, 70),
    ("checker", 48, 48, 100),
    ("noise", 32, 32, 98),
]


def conformance_images():
    """Build the (name, bytes) corpus entries; shared with the CLI benchmark
    tests, which materialize them to files."""
    corpus = []
    for i, (kind, w, h, quality) in enumerate(_CONFORMANCE_RECIPE):
        gray = synth_gray(w, h, seed=300 + i, kind=kind)
        rgb = np.repeat(gray[..., None], 3, axis=-1)
        data = encode_with_pil(rgb, quality, subsampling=0)
        corpus.append((f"neutral444_{i:02d}_{kind}_{w}x{h}", data))
    return corpus


@pytest.fixture(scope="session")
def conformance_corpus():
    """22 three-component 4:4:4 JPEGs of neutral (R=G=B) content.

    Neutral content keeps the chroma planes at exactly 128 so the RGB
    comparison against the reference decoder is free of color-matrix
    amplification of the reference's permitted integer-IDCT jitter.
    """
    return conformance_images()


@pytest.fixture(scope="session")
def gray_corpus():
    corpus = []
    for i in range(6):
        w, h = _SIZES[(2 * i + 1) % len(_SIZES)]
        kind = _KINDS[i % len(_KINDS)]
        gray = synth_gray(w, h, seed=700 + i, kind=kind)
        data = encode_with_pil(gray, quality=60 + 7 * i, subsampling=0)
        corpus.append((f"gray_{i}_{kind}_{w}x{h}", data))
    return corpus


@pytest.fixture(scope="session")
def saturated_corpus():
    """Chroma-active 4:4:4 JPEGs for sample-domain conformance."""
    corpus = []
    for i in range(12):
        w, h = _SIZES[i % len(_SIZES)]
        rgb = synth_rgb(w, h, seed=900 + i)
        data = encode_with_pil(rgb, quality=55 + 4 * i, subsampling=0)
        corpus.append((f"color444_{i:02d}_{w}x{h}", data))
    return corpus


@pytest.fixture(scope="session")
def corpus_420():
    corpus = []
    for i, (w, h) in enumerate([(300, 300), (304, 304), (48, 32), (130, 94)]):
        rgb = synth_rgb(w, h, seed=1100 + i)
        data = encode_with_pil(rgb, quality=80, subsampling=2)
        corpus.append((f"color420_{i}_{w}x{h}", data))
    return corpus


# ---------------------------------------------------------------------------
# randomized coefficient planes for encode/decode roundtrips

_SAMPLING_FACTORS = {
    "grayscale": [(1, 1)],
    "4:4:4": [(1, 1), (1, 1), (1, 1)],
    "4:2:0": [(2, 2), (1, 1), (1, 1)],
}


def random_planes(rng, width, height, sampling, density="sparse"):
    """Quantized planes with realistic sparsity, honoring the grid law.

    DC values stay in [-1024, 1023] and AC in [-1023, 1023], the magnitude
    range representable by the standard Huffman tables.
    """
    factors = _SAMPLING_FACTORS[sampling]
    h_max = max(h for h, _ in factors)
    v_max = max(v for _, v in factors)
    planes = []
    for idx, (h, v) in enumerate(factors):
        bw, bh = plane_grid(width, height, h, v, h_max, v_max)
        blocks = np.zeros((bh, bw, 64), dtype=np.int16)
        blocks[:, :, 0] = rng.integers(-1024, 1024, size=(bh, bw))
        if density == "sparse":
            nonzero = rng.random((bh, bw, 63)) < rng.uniform(0.02, 0.15)
        else:
            nonzero = rng.random((bh, bw, 63)) < 0.6
        vals = rng.integers(1, 1024, size=(bh, bw, 63))
        signs = rng.choice(np.array([-1, 1], dtype=np.int64), size=(bh, bw, 63))
        blocks[:, :, 1:] = np.where(nonzero, vals * signs, 0).astype(np.int16)
        planes.append(QuantizedPlane(idx + 1, bw, bh, blocks))
    return planes

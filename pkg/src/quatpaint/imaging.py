"""Color-image handling: pure-quaternion encoding, observation masks, PNG IO.

A color pixel (r, g, b) becomes the pure quaternion 0 + r*i + g*j + b*k, so
a whole image is a one-channel QTensor with a zero real plane. A mask marks
whole pixels as observed or missing: all three channels of a pixel share
one mask bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ShapeMismatch
from .quat import QTensor


@dataclass
class RgbImage:
    """Three [0,1] float64 channel planes, shape (3, H, W)."""

    planes: np.ndarray

    def __post_init__(self):
        self.planes = np.asarray(self.planes, dtype=np.float64)
        if self.planes.ndim != 3 or self.planes.shape[0] != 3:
            raise ValueError(f"expected (3, H, W) planes, got {self.planes.shape}")

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    @property
    def r(self) -> np.ndarray:
        return self.planes[0]

    @property
    def g(self) -> np.ndarray:
        return self.planes[1]

    @property
    def b(self) -> np.ndarray:
        return self.planes[2]

    @classmethod
    def from_hwc(cls, arr: np.ndarray) -> "RgbImage":
        return cls(np.transpose(np.asarray(arr, dtype=np.float64), (2, 0, 1)))

    def to_hwc(self) -> np.ndarray:
        return np.transpose(self.planes, (1, 2, 0))


@dataclass
class Mask:
    """Boolean observation plane: True = observed (in Omega)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.dtype != np.bool_:
            raise ValueError(f"mask must be boolean, got dtype {self.data.dtype}")
        if self.data.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def observed_count(self) -> int:
        return int(self.data.sum())

    @property
    def sampling_rate(self) -> float:
        return self.observed_count / self.data.size


# ---------------------------------------------------------------------------
# quaternion encoding
# ---------------------------------------------------------------------------

def encode(img: RgbImage) -> QTensor:
    """RGB -> pure quaternion: zero real plane, X=r, Y=g, Z=b, one channel."""
    planes = np.zeros((4, 1) + img.planes.shape[1:])
    planes[1:, 0] = img.planes
    return QTensor(planes)


def decode(t: QTensor) -> RgbImage:
    """Drop the real plane, clamp the imaginary planes to [0,1]."""
    if t.channels != 1:
        raise ValueError(f"decode expects 1 quaternion channel, got {t.channels}")
    return RgbImage(np.clip(t.planes[1:, 0], 0.0, 1.0))


def apply_mask(t: QTensor, m: Mask) -> QTensor:
    """P_Omega: copy observed entries (all four planes), zero the rest."""
    if m.data.shape != (t.height, t.width):
        raise ShapeMismatch("apply_mask", m.data.shape, (t.height, t.width))
    return QTensor(np.where(m.data, t.planes, 0.0))


# ---------------------------------------------------------------------------
# mask generators
# ---------------------------------------------------------------------------

def gen_random_mask(height: int, width: int, sr: float, seed) -> Mask:
    """Exactly round(sr * H * W) pixels observed, uniform without replacement."""
    if not 0.0 <= sr <= 1.0:
        raise ValueError(f"sampling rate must be in [0, 1], got {sr}")
    n_obs = int(np.floor(sr * height * width + 0.5))
    rng = np.random.default_rng(seed)
    flat = np.zeros(height * width, dtype=bool)
    flat[rng.choice(height * width, size=n_obs, replace=False)] = True
    return Mask(flat.reshape(height, width))


def stroke_missing(missing: np.ndarray, r0: float, c0: float, r1: float, c1: float,
                   width: int) -> None:
    """Mark cells within perpendicular distance (width-1)/2 of the segment
    (r0,c0)-(r1,c1) as missing, in place."""
    h, w = missing.shape
    rr, cc = np.mgrid[0:h, 0:w]
    dr, dc = r1 - r0, c1 - c0
    seg_sq = dr * dr + dc * dc
    if seg_sq == 0:
        dist = np.hypot(rr - r0, cc - c0)
    else:
        t = np.clip(((rr - r0) * dr + (cc - c0) * dc) / seg_sq, 0.0, 1.0)
        dist = np.hypot(rr - (r0 + t * dr), cc - (c0 + t * dc))
    missing |= dist <= (width - 1) / 2.0


def gen_scratch_mask(height: int, width: int, lines: int, stroke_width: int = 3,
                     seed=0) -> Mask:
    """Random straight scratches of the given width marked missing."""
    if lines < 0 or stroke_width < 1:
        raise ValueError(f"need lines >= 0 and stroke_width >= 1, "
                         f"got {lines}, {stroke_width}")
    rng = np.random.default_rng(seed)
    missing = np.zeros((height, width), dtype=bool)
    for _ in range(lines):
        r0, r1 = rng.uniform(0, height - 1, 2)
        c0, c1 = rng.uniform(0, width - 1, 2)
        stroke_missing(missing, r0, c0, r1, c1, stroke_width)
    return Mask(~missing)


# 5x7 glyphs for the text-overlay generator ('#' = stroke pixel).
_FONT_5X7 = {
    "A": ("01110", "10001", "10001", "11111", "10001", "10001", "10001"),
    "B": ("11110", "10001", "10001", "11110", "10001", "10001", "11110"),
    "C": ("01110", "10001", "10000", "10000", "10000", "10001", "01110"),
    "D": ("11110", "10001", "10001", "10001", "10001", "10001", "11110"),
    "E": ("11111", "10000", "10000", "11110", "10000", "10000", "11111"),
    "F": ("11111", "10000", "10000", "11110", "10000", "10000", "10000"),
    "G": ("01110", "10001", "10000", "10111", "10001", "10001", "01111"),
    "H": ("10001", "10001", "10001", "11111", "10001", "10001", "10001"),
    "I": ("01110", "00100", "00100", "00100", "00100", "00100", "01110"),
    "J": ("00111", "00010", "00010", "00010", "00010", "10010", "01100"),
    "K": ("10001", "10010", "10100", "11000", "10100", "10010", "10001"),
    "L": ("10000", "10000", "10000", "10000", "10000", "10000", "11111"),
    "M": ("10001", "11011", "10101", "10101", "10001", "10001", "10001"),
    "N": ("10001", "11001", "10101", "10011", "10001", "10001", "10001"),
    "O": ("01110", "10001", "10001", "10001", "10001", "10001", "01110"),
    "P": ("11110", "10001", "10001", "11110", "10000", "10000", "10000"),
    "Q": ("01110", "10001", "10001", "10001", "10101", "10010", "01101"),
    "R": ("11110", "10001", "10001", "11110", "10100", "10010", "10001"),
    "S": ("01111", "10000", "10000", "01110", "00001", "00001", "11110"),
    "T": ("11111", "00100", "00100", "00100", "00100", "00100", "00100"),
    "U": ("10001", "10001", "10001", "10001", "10001", "10001", "01110"),
    "V": ("10001", "10001", "10001", "10001", "10001", "01010", "00100"),
    "W": ("10001", "10001", "10001", "10101", "10101", "11011", "10001"),
    "X": ("10001", "10001", "01010", "00100", "01010", "10001", "10001"),
    "Y": ("10001", "10001", "01010", "00100", "00100", "00100", "00100"),
    "Z": ("11111", "00001", "00010", "00100", "01000", "10000", "11111"),
    "0": ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    "1": ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    "2": ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    "3": ("11110", "00001", "00001", "01110", "00001", "00001", "11110"),
    "4": ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    "5": ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    "6": ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    "7": ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    "8": ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    "9": ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
    " ": ("00000", "00000", "00000", "00000", "00000", "00000", "00000"),
}


def gen_text_mask(height: int, width: int, text: str = "TEXT", scale: int = 2,
                  row_gap: int = 6, col_gap: int = 1) -> Mask:
    """Tile the text across the canvas; glyph strokes become missing pixels.

    Unknown characters render as blanks. scale stretches each font pixel to
    a scale x scale block.
    """
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    if not text:
        raise ValueError("text must be non-empty")
    missing = np.zeros((height, width), dtype=bool)
    glyph_h, glyph_w = 7 * scale, 5 * scale
    step_x = glyph_w + col_gap * scale
    step_y = glyph_h + row_gap * scale
    y = scale
    while y < height:
        x = scale
        i = 0
        while x < width:
            glyph = _FONT_5X7.get(text[i % len(text)].upper(), _FONT_5X7[" "])
            for gy, row in enumerate(glyph):
                for gx, bit in enumerate(row):
                    if bit == "1":
                        r0, c0 = y + gy * scale, x + gx * scale
                        missing[r0:min(r0 + scale, height),
                                c0:min(c0 + scale, width)] = True
            i += 1
            x += step_x
        y += step_y
    return Mask(~missing)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def load_png(path) -> RgbImage:
    """Read an image file into [0,1] floats.

    8-bit samples are divided by 255, 16-bit grayscale by 65535; grayscale
    is replicated into three channels and alpha is ignored.
    """
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
                arr = np.repeat(arr[:, :, None], 3, axis=2)
            elif mode == "L":
                arr = np.asarray(im, dtype=np.float64)[:, :, None] / 255.0
                arr = np.repeat(arr, 3, axis=2)
            else:
                if mode not in ("RGB", "RGBA"):
                    im = im.convert("RGB")
                arr = np.asarray(im, dtype=np.float64)[:, :, :3] / 255.0
    except (OSError, ValueError) as e:
        raise OSError(f"cannot read image {path}: {e}") from e
    return RgbImage.from_hwc(arr)


def save_png(img: RgbImage, path) -> None:
    """Write 8-bit RGB; quantization rounds half away from zero."""
    u8 = np.floor(np.clip(img.planes, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    try:
        Image.fromarray(np.transpose(u8, (1, 2, 0)), mode="RGB").save(path, format="PNG")
    except OSError as e:
        raise OSError(f"cannot write image {path}: {e}") from e


def load_mask(path) -> Mask:
    """Grayscale mask file: luminance >= 128 observed, < 128 missing."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except (OSError, ValueError) as e:
        raise OSError(f"cannot read mask {path}: {e}") from e
    return Mask(arr >= 128)


def save_mask(m: Mask, path) -> None:
    try:
        Image.fromarray(np.where(m.data, 255, 0).astype(np.uint8), mode="L") \
            .save(path, format="PNG")
    except OSError as e:
        raise OSError(f"cannot write mask {path}: {e}") from e

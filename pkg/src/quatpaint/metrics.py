"""Image quality metrics: PSNR and SSIM on the [0,1] scale.

PSNR uses the joint MSE over all pixels and channels (one number per image
pair). SSIM is the classic single-scale index: 11x11 Gaussian window with
sigma 1.5, C1=0.01^2, C2=0.03^2, averaged over valid window positions,
computed per channel and then averaged across the three channels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatch
from .imaging import RgbImage

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _check_pair(a: RgbImage, b: RgbImage) -> None:
    if a.planes.shape != b.planes.shape:
        raise ShapeMismatch("metric image pair", a.planes.shape, b.planes.shape)


def psnr(a: RgbImage, b: RgbImage) -> float:
    """10*log10(1/MSE); +inf for identical images."""
    _check_pair(a, b)
    mse = float(np.mean((a.planes - b.planes) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def psnr_per_channel(a: RgbImage, b: RgbImage):
    _check_pair(a, b)
    out = []
    for c in range(3):
        mse = float(np.mean((a.planes[c] - b.planes[c]) ** 2))
        out.append(float("inf") if mse == 0.0 else 10.0 * np.log10(1.0 / mse))
    return tuple(out)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2-D Gaussian tap weights."""
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_channel(x: np.ndarray, y: np.ndarray, win: np.ndarray) -> float:
    k = win.shape[0]

    def wmean(img):
        windows = sliding_window_view(img, (k, k))
        return np.tensordot(windows, win, axes=([2, 3], [0, 1]))

    mx, my = wmean(x), wmean(y)
    sxx = wmean(x * x) - mx * mx
    syy = wmean(y * y) - my * my
    sxy = wmean(x * y) - mx * my
    num = (2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return float(np.mean(num / den))


def ssim_per_channel(a: RgbImage, b: RgbImage):
    _check_pair(a, b)
    if a.height < SSIM_WINDOW or a.width < SSIM_WINDOW:
        raise ValueError(f"image {a.height}x{a.width} smaller than the "
                         f"{SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    win = gaussian_window()
    return tuple(_ssim_channel(a.planes[c], b.planes[c], win) for c in range(3))


def ssim(a: RgbImage, b: RgbImage) -> float:
    return float(np.mean(ssim_per_channel(a, b)))


@dataclass
class MetricsReport:
    image: str
    reference: str
    psnr_db: float
    ssim: float
    psnr_channels: tuple
    ssim_channels: tuple

    @classmethod
    def compute(cls, test: RgbImage, ref: RgbImage, image: str = "",
                reference: str = "") -> "MetricsReport":
        return cls(image=image, reference=reference,
                   psnr_db=psnr(test, ref), ssim=ssim(test, ref),
                   psnr_channels=psnr_per_channel(test, ref),
                   ssim_channels=ssim_per_channel(test, ref))

    def cell(self) -> str:
        """The 'PSNR/SSIM' pair with three decimals each."""
        return f"{self.psnr_db:.3f}/{self.ssim:.3f}"

    def to_json(self) -> str:
        return json.dumps({
            "image": self.image, "reference": self.reference,
            "psnr_db": self.psnr_db, "ssim": self.ssim,
            "psnr_channels": list(self.psnr_channels),
            "ssim_channels": list(self.ssim_channels),
        }, indent=2)

    CSV_HEADER = "image,reference,psnr_db,ssim"

    def csv_row(self) -> str:
        return f"{self.image},{self.reference},{self.psnr_db:.6f},{self.ssim:.6f}"

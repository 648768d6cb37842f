"""sRGB/CIELAB conversion and image-quality metrics (PSNR, SSIM, CIE76 delta E)."""
from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# linear sRGB -> XYZ, D65
SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
XYZ_TO_SRGB = np.linalg.inv(SRGB_TO_XYZ)
# white point taken from the matrix so that sRGB white lands exactly on L*=100, a*=b*=0
WHITE_D65 = SRGB_TO_XYZ.sum(axis=1)

LAB_EPS = 216.0 / 24389.0
LAB_KAPPA = 24389.0 / 27.0
LUMA_709 = np.array([0.2126, 0.7152, 0.0722])


class ExtentMismatchError(ValueError):
    pass


def as_rgb(img) -> np.ndarray:
    """Validate an H x W x 3 image and clamp it to [0, 1] as float64."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {a.shape}")
    return np.clip(a, 0.0, 1.0)


def srgb_decode(v):
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def srgb_encode(v):
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
    return np.where(v <= 0.0031308, 12.92 * v, 1.055 * v ** (1 / 2.4) - 0.055)


def _f(t):
    return np.where(t > LAB_EPS, np.cbrt(t), (LAB_KAPPA * t + 16.0) / 116.0)


def _f_inv(f):
    f3 = f ** 3
    return np.where(f3 > LAB_EPS, f3, (116.0 * f - 16.0) / LAB_KAPPA)


def linear_to_lab(lin) -> np.ndarray:
    xyz = np.asarray(lin, dtype=np.float64) @ SRGB_TO_XYZ.T
    fx, fy, fz = (_f(xyz[..., i] / WHITE_D65[i]) for i in range(3))
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def srgb_to_lab(img) -> np.ndarray:
    """sRGB-encoded values in [0, 1] (any leading shape, last axis RGB) to L*a*b*."""
    return linear_to_lab(srgb_decode(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)))


def lab_to_srgb(lab) -> np.ndarray:
    """Inverse of :func:`srgb_to_lab` for in-gamut colours."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_f_inv(fx), _f_inv(fy), _f_inv(fz)], axis=-1) * WHITE_D65
    return srgb_encode(xyz @ XYZ_TO_SRGB.T)


def _check_pair(a, b):
    a, b = as_rgb(a), as_rgb(b)
    if a.shape != b.shape:
        raise ExtentMismatchError(f"image extents differ: {a.shape} vs {b.shape}")
    return a, b


def delta_e(a, b) -> float:
    """RMS over pixels of the CIE76 distance between two sRGB images."""
    a, b = _check_pair(a, b)
    d = srgb_to_lab(a) - srgb_to_lab(b)
    return float(np.sqrt(np.mean(np.sum(d * d, axis=-1))))


def psnr(a, b) -> float:
    """Peak-1.0 PSNR in dB; ``math.inf`` for identical images."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, g):
    k = len(g)
    rows = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def ssim(a, b, win: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM on Rec.709 luma with a Gaussian window (valid region only)."""
    a, b = _check_pair(a, b)
    if min(a.shape[:2]) < win:
        raise ValueError(f"image {a.shape[:2]} smaller than the {win}x{win} SSIM window")
    x, y = a @ LUMA_709, b @ LUMA_709
    g = _gaussian_window(win, sigma)
    c1, c2 = (k1 * 1.0) ** 2, (k2 * 1.0) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def image_metrics(pred, target) -> tuple[float, float, float]:
    return psnr(pred, target), ssim(pred, target), delta_e(pred, target)


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.6f}"


def format_report(rows: Sequence[tuple[str, float, float, float]]) -> str:
    """``id psnr ssim delta_e`` per image followed by a ``mean`` line."""
    lines = [f"{rid} {_fmt(p)} {_fmt(s)} {_fmt(d)}" for rid, p, s, d in rows]
    if rows:
        means = [float(np.mean([r[i] for r in rows])) for i in (1, 2, 3)]
        lines.append("mean " + " ".join(_fmt(m) for m in means))
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> tuple[list[tuple[str, float, float, float]], tuple[float, float, float] | None]:
    rows, mean = [], None
    for line in text.splitlines():
        parts = line.split()
        if len(parts) != 4 or parts[0].startswith("#"):
            continue
        vals = tuple(float(v) for v in parts[1:])
        if parts[0] == "mean":
            mean = vals
        else:
            rows.append((parts[0],) + vals)
    return rows, mean


def mean_of(values: Iterable[float]) -> float:
    vals = list(values)
    return float(np.mean(vals)) if vals else math.nan

"""Image quality metrics in the 8-bit domain, plus benchmark aggregation.

MSE and PSNR quantize both images to the 8-bit grid first and work in
0..255 units, which pins MAX = 255. SSIM defaults to the standard 11x11
Gaussian-window (sigma 1.5) mean; a ``global`` mode evaluates the formula
once over whole-image statistics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .imaging import Image, quantize8, to_luma

PSNR_MAX = 255.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


@dataclass
class MetricReport:
    psnr: float
    mse: float
    ssim: float


@dataclass
class BenchRow:
    """One benchmark-table row: arithmetic means over a set of image pairs.

    Pairs with infinite PSNR (zero MSE) are excluded from the PSNR mean and
    counted in ``psnr_inf_count``.
    """

    dataset: str
    scale: int
    psnr: float
    mse: float
    ssim: float
    count: int
    psnr_inf_count: int = 0


def _check_pair(hr: Image, sr: Image, op: str) -> None:
    if (hr.height, hr.width, hr.channels) != (sr.height, sr.width,
                                              sr.channels):
        raise ValueError(
            f"{op}: extent mismatch {hr.height}x{hr.width}x{hr.channels} vs "
            f"{sr.height}x{sr.width}x{sr.channels}")


def mse(hr: Image, sr: Image) -> float:
    """Mean squared difference on the 8-bit grid, in 0..255 units."""
    _check_pair(hr, sr, "mse")
    a = quantize8(hr).astype(np.float64)
    b = quantize8(sr).astype(np.float64)
    d = a - b
    return float((d * d).mean())


def psnr(hr: Image, sr: Image) -> float:
    """10*log10(255^2 / MSE); +inf when the images are identical."""
    m = mse(hr, sr)
    if m == 0.0:
        return float("inf")
    return float(10.0 * np.log10(PSNR_MAX * PSNR_MAX / m))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    xs = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    k /= k.sum()
    return np.outer(k, k)


def _ssim_formula(mu1, mu2, var1, var2, cov, c1, c2):
    return (((2.0 * mu1 * mu2 + c1) * (2.0 * cov + c2))
            / ((mu1 * mu1 + mu2 * mu2 + c1) * (var1 + var2 + c2)))


def ssim(hr: Image, sr: Image, mode: str = "windowed",
         data_range: float = 255.0) -> float:
    """Structural similarity between two images.

    ``windowed``: mean of the per-window formula over sliding 11x11
    Gaussian windows (valid positions only), on the 8-bit grid when
    data_range is 255. ``global``: the formula once over whole-image
    statistics. Multi-channel input is converted to luminance.
    """
    _check_pair(hr, sr, "ssim")
    if mode not in ("windowed", "global"):
        raise ValueError(f"ssim: unknown mode {mode!r}")
    if data_range == 255.0:
        a = quantize8(to_luma(hr)).astype(np.float64)[:, :, 0]
        b = quantize8(to_luma(sr)).astype(np.float64)[:, :, 0]
    else:
        a = to_luma(hr).array[:, :, 0].astype(np.float64)
        b = to_luma(sr).array[:, :, 0].astype(np.float64)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    if mode == "global":
        mu1, mu2 = a.mean(), b.mean()
        var1, var2 = a.var(), b.var()
        cov = ((a - mu1) * (b - mu2)).mean()
        return float(_ssim_formula(mu1, mu2, var1, var2, cov, c1, c2))

    w = SSIM_WINDOW
    if a.shape[0] < w or a.shape[1] < w:
        raise ValueError(
            f"ssim: image {a.shape[0]}x{a.shape[1]} smaller than the "
            f"{w}x{w} window")
    kern = _gaussian_window(w, SSIM_SIGMA)
    wa = np.lib.stride_tricks.sliding_window_view(a, (w, w))
    wb = np.lib.stride_tricks.sliding_window_view(b, (w, w))
    mu1 = np.einsum("hwij,ij->hw", wa, kern)
    mu2 = np.einsum("hwij,ij->hw", wb, kern)
    m11 = np.einsum("hwij,ij->hw", wa * wa, kern)
    m22 = np.einsum("hwij,ij->hw", wb * wb, kern)
    m12 = np.einsum("hwij,ij->hw", wa * wb, kern)
    var1 = m11 - mu1 * mu1
    var2 = m22 - mu2 * mu2
    cov = m12 - mu1 * mu2
    return float(_ssim_formula(mu1, mu2, var1, var2, cov, c1, c2).mean())


def metric_report(hr: Image, sr: Image) -> MetricReport:
    return MetricReport(psnr=psnr(hr, sr), mse=mse(hr, sr),
                        ssim=ssim(hr, sr))


def evaluate_set(pairs: Sequence[tuple[Image, Image]], name: str,
                 scale: int) -> BenchRow:
    """Arithmetic means over (hr, sr) pairs; infinite-PSNR pairs are kept
    out of the PSNR mean and reported via psnr_inf_count."""
    if not pairs:
        raise ValueError("evaluate_set: empty pair list")
    psnrs, mses, ssims = [], [], []
    inf_count = 0
    for hr, sr in pairs:
        p = psnr(hr, sr)
        if np.isinf(p):
            inf_count += 1
        else:
            psnrs.append(p)
        mses.append(mse(hr, sr))
        ssims.append(ssim(hr, sr))
    mean_psnr = float(np.mean(psnrs)) if psnrs else float("inf")
    return BenchRow(dataset=name, scale=scale, psnr=mean_psnr,
                    mse=float(np.mean(mses)), ssim=float(np.mean(ssims)),
                    count=len(pairs), psnr_inf_count=inf_count)


BENCH_CSV_HEADER = "dataset,scale,psnr,mse,ssim,n"


def _fmt(v: float) -> str:
    return "inf" if np.isinf(v) else f"{v:.4f}"


def bench_csv(rows: Sequence[BenchRow]) -> str:
    lines = [BENCH_CSV_HEADER]
    for r in rows:
        lines.append(f"{r.dataset},{r.scale},{_fmt(r.psnr)},{_fmt(r.mse)},"
                     f"{_fmt(r.ssim)},{r.count}")
    return "\n".join(lines) + "\n"


def bench_markdown(rows: Sequence[BenchRow]) -> str:
    lines = ["| Dataset | Scale | PSNR↑ | MSE↓ | SSIM↑ | n |",
             "|---|---|---|---|---|---|"]
    for r in rows:
        lines.append(f"| {r.dataset} | x{r.scale} | {_fmt(r.psnr)} | "
                     f"{_fmt(r.mse)} | {_fmt(r.ssim)} | {r.count} |")
    return "\n".join(lines) + "\n"

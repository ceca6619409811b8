"""SIFID and SSIM-based diversity."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
import torch

from .errors import FormatError, InvalidParameterError
from .priors import FeatureExtractor
from .pyramid import as_image, resize

SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_SIGMA, SSIM_TAPS = 1.5, 11
COV_EPS = 1e-6


def _sqrt_psd(a):
    w, v = np.linalg.eigh((a + a.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(mu1, cov1, mu2, cov2) -> float:
    """``|mu1 - mu2|^2 + Tr(C1 + C2 - 2 (C1 C2)^(1/2))``.

    The trace of ``(C1 C2)^(1/2)`` is computed as that of the symmetric
    ``(C1^(1/2) C2 C1^(1/2))^(1/2)``, with negative eigenvalues clipped to 0.
    """
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, np.float64)), np.atleast_1d(np.asarray(mu2, np.float64))
    cov1, cov2 = np.atleast_2d(np.asarray(cov1, np.float64)), np.atleast_2d(np.asarray(cov2, np.float64))
    d = mu1.shape[0]
    if mu2.shape != (d,) or cov1.shape != (d, d) or cov2.shape != (d, d):
        raise FormatError(f"dimension mismatch: {mu1.shape}, {cov1.shape}, {mu2.shape}, {cov2.shape}")
    s1 = _sqrt_psd(cov1)
    middle = s1 @ cov2 @ s1
    w = np.linalg.eigvalsh((middle + middle.T) / 2)
    tr_covmean = np.sqrt(np.clip(w, 0, None)).sum()
    diff = mu1 - mu2
    return float(max(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2 * tr_covmean, 0.0))


def feature_statistics(fmap: torch.Tensor):
    """Mean and covariance of a (C, H, W) map, one sample per spatial position."""
    x = fmap.detach().double().reshape(fmap.shape[-3], -1).numpy()
    c, n = x.shape
    mu = x.mean(axis=1)
    cov = np.cov(x) if n > 1 else np.zeros((c, c))
    cov = np.atleast_2d(cov)
    if n <= c:
        warnings.warn(f"{n} spatial positions for {c} feature dims: covariance is rank deficient, "
                      f"adding {COV_EPS} * I", RuntimeWarning, stacklevel=2)
        cov = cov + COV_EPS * np.eye(c)
    return mu, cov


def sifid(original, synthesis, extractor: FeatureExtractor, layer: int = 0) -> float:
    """Frechet distance between the spatial feature statistics of two single images."""
    x = as_image(original)
    y = as_image(synthesis)
    if y.shape != x.shape:
        y = resize(y, x.shape[-2:])
    with torch.no_grad():
        fx = extractor(x)[layer][0]
        fy = extractor(y)[layer][0]
    return frechet_distance(*feature_statistics(fx), *feature_statistics(fy))


def _gaussian_taps(taps=SSIM_TAPS, sigma=SSIM_SIGMA):
    r = np.arange(taps) - (taps - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, g):
    # separable 'valid' correlation along both spatial axes
    from numpy.lib.stride_tricks import sliding_window_view
    rows = sliding_window_view(img, len(g), axis=0) @ g
    return sliding_window_view(rows, len(g), axis=1) @ g


def ssim(a, b) -> float:
    """Gaussian-window SSIM (11 taps, sigma 1.5), channel averaged.

    Inputs are (3, H, W) tensors in [-1, 1] or HxWx3 arrays accepted by
    :func:`as_image`; values are mapped to [0, 1] first. Only positions where
    the window fits entirely inside the image contribute.
    """
    x = (as_image(a).double().numpy() + 1.0) / 2.0
    y = (as_image(b).double().numpy() + 1.0) / 2.0
    if x.shape != y.shape:
        raise FormatError(f"ssim: shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape[-2:]) < SSIM_TAPS:
        raise FormatError(f"ssim needs images of at least {SSIM_TAPS}x{SSIM_TAPS}")
    g = _gaussian_taps()
    c1, c2 = (SSIM_K1 * 1.0) ** 2, (SSIM_K2 * 1.0) ** 2
    values = []
    for xc, yc in zip(x, y):
        mx, my = _filter_valid(xc, g), _filter_valid(yc, g)
        vx = _filter_valid(xc * xc, g) - mx * mx
        vy = _filter_valid(yc * yc, g) - my * my
        cxy = _filter_valid(xc * yc, g) - mx * my
        smap = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2))
        values.append(smap.mean())
    return float(np.mean(values))


def _match_size(original, s):
    s = as_image(s)
    if s.shape != original.shape:
        warnings.warn(f"resampling sample of size {tuple(s.shape[-2:])} to {tuple(original.shape[-2:])}",
                      RuntimeWarning, stacklevel=3)
        s = resize(s, original.shape[-2:])
    return s


def diversity(original, samples: Sequence) -> float:
    """Mean SSIM between the original and each sample (lower means more diverse)."""
    if not len(samples):
        raise InvalidParameterError("diversity needs at least one sample")
    x = as_image(original)
    return float(np.mean([ssim(x, _match_size(x, s)) for s in samples]))


@dataclass
class MetricsReport:
    sifid: float
    diversity_ssim: float
    rows: List[dict] = field(default_factory=list)

    def to_csv(self, sep=",") -> str:
        lines = [sep.join(("sample", "sifid", "ssim"))]
        lines += [sep.join((r["sample"], f"{r['sifid']:.6f}", f"{r['ssim']:.6f}")) for r in self.rows]
        lines.append(sep.join(("mean", f"{self.sifid:.6f}", f"{self.diversity_ssim:.6f}")))
        return "\n".join(lines) + "\n"


def evaluate(original, samples: Sequence, extractor: FeatureExtractor, names=None, layer: int = 0) -> MetricsReport:
    x = as_image(original)
    names = list(names) if names is not None else [str(i) for i in range(len(samples))]
    rows = []
    for name, s in zip(names, samples):
        s = _match_size(x, s)
        rows.append({"sample": name, "sifid": sifid(x, s, extractor, layer), "ssim": ssim(x, s)})
    if not rows:
        raise InvalidParameterError("no samples to evaluate")
    report = MetricsReport(sifid=float(np.mean([r["sifid"] for r in rows])),
                           diversity_ssim=float(np.mean([r["ssim"] for r in rows])), rows=rows)
    if not all(math.isfinite(v) for v in (report.sifid, report.diversity_ssim)):
        raise FormatError("non-finite metric values")
    return report

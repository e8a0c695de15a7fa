"""Image-similarity and contour metrics for reconstructed ultrasound frames.

* :func:`ssim` - Gaussian-window SSIM (11x11, sigma 1.5, dynamic range 1),
  averaged over all fully-contained windows.
* :func:`cw_ssim` - complex-wavelet SSIM over a fixed complex Gabor bank.
* :func:`extract_contour` / :func:`msd` - ridge tracing and the symmetric
  mean of nearest-point distances between two contours.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import correlate1d
from scipy.signal import fftconvolve

from .errors import ConfigError, DimensionError, UsageError

SSIM_WIN = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03

CW_WAVELENGTHS = (4.0, 8.0)
CW_ORIENTATIONS = 4
CW_WIN = 7
CW_K = 0.01


def _check_pair(a, b, op):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise DimensionError(f"{op}: need two equal-size 2-d images, got {a.shape} and {b.shape}")
    return a, b


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    w = np.exp(-(r * r) / (2 * sigma * sigma))
    return w / w.sum()


def _valid_blur(img: np.ndarray, w1d: np.ndarray) -> np.ndarray:
    pad = len(w1d) // 2
    out = correlate1d(img, w1d, axis=0, mode="reflect")
    out = correlate1d(out, w1d, axis=1, mode="reflect")
    # only windows lying fully inside the image are kept, so the border mode never matters
    return out[pad:-pad, pad:-pad]


def ssim_map(a, b, data_range: float = 1.0) -> np.ndarray:
    a, b = _check_pair(a, b, "ssim")
    if min(a.shape) < SSIM_WIN:
        raise DimensionError(f"ssim: images must be at least {SSIM_WIN}x{SSIM_WIN}, got {a.shape}")
    w = gaussian_window()
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_a = _valid_blur(a, w)
    mu_b = _valid_blur(b, w)
    var_a = _valid_blur(a * a, w) - mu_a * mu_a
    var_b = _valid_blur(b * b, w) - mu_b * mu_b
    cov = _valid_blur(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, data_range: float = 1.0) -> float:
    return float(ssim_map(a, b, data_range).mean())


def gabor_bank(wavelengths=CW_WAVELENGTHS, orientations: int = CW_ORIENTATIONS) -> list:
    """Zero-mean complex Gabor kernels; envelope sigma is half the wavelength, support +-3 sigma."""
    bank = []
    for lam in wavelengths:
        sigma = lam / 2.0
        r = int(math.ceil(3 * sigma))
        y, x = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
        env = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
        env /= env.sum()
        for k in range(orientations):
            theta = math.pi * k / orientations
            carrier = np.exp(1j * (2 * math.pi / lam) * (x * math.cos(theta) + y * math.sin(theta)))
            g = env * carrier
            g -= env * g.sum()  # remove DC response (env sums to 1)
            bank.append(g)
    return bank


_BANK = None


def _bank():
    global _BANK
    if _BANK is None:
        _BANK = gabor_bank()
    return _BANK


def _box_sum(x: np.ndarray, size: int) -> np.ndarray:
    return sliding_window_view(x, (size, size)).sum(axis=(-2, -1))


def cw_ssim(a, b, k: float = CW_K, win: int = CW_WIN) -> float:
    """Mean over Gabor subbands and 7x7 windows of
    ``(2|sum ca conj(cb)| + K) / (sum|ca|^2 + sum|cb|^2 + K)``."""
    a, b = _check_pair(a, b, "cw_ssim")
    bank = _bank()
    support = max(g.shape[0] for g in bank)
    if min(a.shape) < support + win - 1:
        raise DimensionError(
            f"cw_ssim: image {a.shape} smaller than filter support {support} plus window {win}"
        )
    scores = []
    for g in bank:
        ca = fftconvolve(a, g, mode="valid")
        cb = fftconvolve(b, g, mode="valid")
        ar, ai, br, bi = ca.real, ca.imag, cb.real, cb.imag
        # written so that swapping a and b only flips the sign of the imaginary part
        cross_re = _box_sum(ar * br + ai * bi, win)
        cross_im = _box_sum(ai * br - ar * bi, win)
        energy = _box_sum(ar * ar + ai * ai, win) + _box_sum(br * br + bi * bi, win)
        scores.append(((2 * np.hypot(cross_re, cross_im) + k) / (energy + k)).mean())
    return float(np.mean(scores))


# -- contours ---------------------------------------------------------------


@dataclass
class Contour:
    """Ordered ``(x, y)`` pixel coordinates, shape ``[n, 2]``."""

    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 2:
            raise DimensionError(f"contour points must be [n, 2], got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ConfigError("contour has non-finite coordinates")
        if len(p) > 1:
            dup = np.all(p[1:] == p[:-1], axis=1)
            p = np.concatenate([p[:1], p[1:][~dup]])
        self.points = p

    def __len__(self):
        return len(self.points)

    @property
    def x(self):
        return self.points[:, 0]

    @property
    def y(self):
        return self.points[:, 1]


def extract_contour(img, band: tuple | None = None, smooth: int = 2) -> Contour:
    """Trace the brightest row per column inside ``band = (row_start, row_stop)``.

    The per-column row positions are smoothed with a moving average of
    half-width ``smooth`` (the window shrinks at the image edges).
    """
    img = np.asarray(img, dtype=np.float64)
    H, W = img.shape
    r0, r1 = (0, H) if band is None else band
    if not 0 <= r0 < r1 <= H:
        raise ConfigError(f"contour band {r0}..{r1} is empty or outside 0..{H}")
    rows = np.argmax(img[r0:r1], axis=0).astype(np.float64) + r0
    if smooth > 0:
        csum = np.concatenate([[0.0], np.cumsum(rows)])
        lo = np.clip(np.arange(W) - smooth, 0, W)
        hi = np.clip(np.arange(W) + smooth + 1, 0, W)
        rows = (csum[hi] - csum[lo]) / (hi - lo)
    return Contour(np.column_stack([np.arange(W, dtype=np.float64), rows]))


def _nearest_sum(p: np.ndarray, q: np.ndarray) -> float:
    d = np.sqrt((p[:, None, 0] - q[None, :, 0]) ** 2 + (p[:, None, 1] - q[None, :, 1]) ** 2)
    return math.fsum(d.min(axis=1))


def msd(c1: Contour, c2: Contour) -> float:
    """Symmetric mean of nearest-point Euclidean distances (pixels)."""
    p = c1.points if isinstance(c1, Contour) else np.asarray(c1, dtype=np.float64)
    q = c2.points if isinstance(c2, Contour) else np.asarray(c2, dtype=np.float64)
    if len(p) == 0 or len(q) == 0:
        raise UsageError("msd: both contours must be non-empty")
    return (_nearest_sum(p, q) + _nearest_sum(q, p)) / (len(p) + len(q))


def write_contour(path, contour: Contour) -> None:
    np.savetxt(path, contour.points, fmt="%.6f", header="x y")


def read_contour(path) -> Contour:
    return Contour(np.loadtxt(path, ndmin=2))


# -- aggregate report ---------------------------------------------------------


@dataclass
class MetricsReport:
    ssim: tuple = (0.0, 0.0)
    cw_ssim: tuple = (0.0, 0.0)
    msd: tuple = (0.0, 0.0)
    mse: float = 0.0
    n_frames: int = 0
    msd_source: str = "auto-contour"
    per_frame: list = field(default_factory=list, repr=False)

    def as_kv(self, prefix: str = "") -> dict:
        return {
            f"{prefix}n_frames": self.n_frames,
            f"{prefix}ssim_mean": self.ssim[0],
            f"{prefix}ssim_std": self.ssim[1],
            f"{prefix}cw_ssim_mean": self.cw_ssim[0],
            f"{prefix}cw_ssim_std": self.cw_ssim[1],
            f"{prefix}msd_mean": self.msd[0],
            f"{prefix}msd_std": self.msd[1],
            f"{prefix}msd_source": self.msd_source,
            f"{prefix}mse": self.mse,
        }


def frame_metrics(pred, target, band=None, smooth: int = 2) -> dict:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return {
        "ssim": ssim(pred, target),
        "cw_ssim": cw_ssim(pred, target),
        "msd": msd(extract_contour(pred, band, smooth), extract_contour(target, band, smooth)),
        "mse": float(np.mean((pred - target) ** 2)),
    }


def summarize(rows: list) -> MetricsReport:
    if not rows:
        return MetricsReport()

    def ms(key):
        v = np.array([r[key] for r in rows], dtype=np.float64)
        return float(v.mean()), float(v.std())

    return MetricsReport(ssim=ms("ssim"), cw_ssim=ms("cw_ssim"), msd=ms("msd"),
                         mse=ms("mse")[0], n_frames=len(rows), per_frame=list(rows))


def evaluate_pairs(preds, targets, band=None, smooth: int = 2) -> MetricsReport:
    if len(preds) != len(targets):
        raise DimensionError(f"{len(preds)} predictions vs {len(targets)} targets")
    return summarize([frame_metrics(p, t, band, smooth) for p, t in zip(preds, targets)])


def write_frame_csv(path, rows: list, names=None) -> None:
    lines = ["frame,ssim,cw_ssim,msd,mse"]
    for i, r in enumerate(rows):
        name = names[i] if names is not None else str(i)
        lines.append(f"{name},{r['ssim']:.9g},{r['cw_ssim']:.9g},{r['msd']:.9g},{r['mse']:.9g}")
    Path(path).write_text("\n".join(lines) + "\n")

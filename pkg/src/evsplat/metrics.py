"""Image quality metrics and held-out scene evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["psnr", "ssim", "MetricsReport", "evaluate_views", "scene_flow_epe"]

PSNR_CAP = 100.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1].

    Capped at 100 dB: identical images are reported as 100 rather than
    infinity.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _filter_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Separable 'valid'-mode correlation with a 1-D window."""
    k = len(window)
    out = np.zeros((img.shape[0] - k + 1, img.shape[1]))
    for i, w in enumerate(window):
        out += w * img[i:i + out.shape[0], :]
    out2 = np.zeros((out.shape[0], img.shape[1] - k + 1))
    for i, w in enumerate(window):
        out2 += w * out[:, i:i + out2.shape[1]]
    return out2


def ssim(a: np.ndarray, b: np.ndarray, window_size: int = 11,
         sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Structural similarity with an 11x11 Gaussian window, L = 1.

    Channels are scored independently on the valid interior and averaged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if a.shape[0] < window_size or a.shape[1] < window_size:
        raise ValueError("image smaller than the SSIM window")
    win = _gaussian_window(window_size, sigma)
    c1 = k1 * k1
    c2 = k2 * k2
    scores = []
    for ch in range(a.shape[2]):
        x = a[..., ch]
        y = b[..., ch]
        mu_x = _filter_valid(x, win)
        mu_y = _filter_valid(y, win)
        xx = _filter_valid(x * x, win) - mu_x * mu_x
        yy = _filter_valid(y * y, win) - mu_y * mu_y
        xy = _filter_valid(x * y, win) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))


@dataclass
class MetricsReport:
    """Per-view quality plus aggregates, tagged by run variant."""

    tag: str
    view_times_us: list = field(default_factory=list)
    psnr_values: list = field(default_factory=list)
    ssim_values: list = field(default_factory=list)
    flow_epe: float | None = None

    def add(self, t_us: int, p: float, s: float) -> None:
        self.view_times_us.append(int(t_us))
        self.psnr_values.append(float(p))
        self.ssim_values.append(float(s))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_values)) if self.psnr_values else 0.0

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_values)) if self.ssim_values else 0.0

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("tag,time_us,psnr,ssim\n")
            for t, p, s in zip(self.view_times_us, self.psnr_values, self.ssim_values):
                fh.write(f"{self.tag},{t},{p:.6f},{s:.6f}\n")
            fh.write(f"{self.tag},mean,{self.mean_psnr:.6f},{self.mean_ssim:.6f}\n")
            if self.flow_epe is not None:
                fh.write(f"{self.tag},flow_epe,{self.flow_epe:.6f},\n")


def evaluate_views(render_fn, frames, tag: str = "run") -> MetricsReport:
    """Score render_fn(t_us) -> (H, W, 3) against (t_us, image) pairs."""
    report = MetricsReport(tag)
    for t_us, image in frames:
        rendered = render_fn(t_us)
        report.add(t_us, psnr(rendered, image), ssim(rendered, image))
    return report


def scene_flow_epe(
    predicted_disp_fn,
    true_disp_fn,
    times_us,
) -> float:
    """Mean Euclidean error between predicted and true projected
    per-splat displacements, averaged over splats and evaluation times.

    Both callables map a time to an (N, 2) pixel-displacement array
    measured from that time's reference keyframe.
    """
    errs = []
    for t in times_us:
        pred = np.asarray(predicted_disp_fn(t), dtype=np.float64)
        true = np.asarray(true_disp_fn(t), dtype=np.float64)
        errs.append(np.sqrt(np.sum((pred - true) ** 2, axis=1)).mean())
    return float(np.mean(errs)) if errs else 0.0

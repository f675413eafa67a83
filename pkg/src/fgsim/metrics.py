"""Full-reference quality metrics, the leakage-robustness regression, and
the noise-space sweep.

PSNR uses a peak of 1.0 even though simulated frames can exceed 1.0 after
the noise model's final rescale; such values enter the MSE as-is. Sequence
metrics pool the MSE over all frames rather than averaging per-frame PSNRs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .frameio import VideoSequence
from .noise import NoiseParams, simulate_sequence

PSNR_CAP_DB = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 1.0


def _as_array(x) -> np.ndarray:
    if isinstance(x, VideoSequence):
        return x.data
    return np.asarray(x, dtype=np.float64)


def psnr(x, y) -> float:
    """10 log10(1 / MSE) with peak 1.0, capped at 100 dB."""
    a = _as_array(x)
    b = _as_array(y)
    if a.shape != b.shape:
        raise ValidationError("psnr: shape mismatch")
    mse = float(np.mean((a - b) ** 2, dtype=np.float64))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_valid(a: np.ndarray, k: np.ndarray) -> np.ndarray:
    t = np.lib.stride_tricks.sliding_window_view(a, k.size, axis=1) @ k
    return np.lib.stride_tricks.sliding_window_view(t, k.size, axis=0) @ k


def ssim_frame(x: np.ndarray, y: np.ndarray) -> float:
    """Mean local SSIM over valid 11x11 Gaussian windows (sigma 1.5,
    K1=0.01, K2=0.03, dynamic range 1)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise ValidationError("ssim: frames must share one 2-D shape")
    if min(x.shape) < SSIM_WINDOW:
        raise ValidationError(f"ssim needs frames of at least {SSIM_WINDOW} px per side")
    k = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    mu_x = _filter_valid(x, k)
    mu_y = _filter_valid(y, k)
    xx = _filter_valid(x * x, k)
    yy = _filter_valid(y * y, k)
    xy = _filter_valid(x * y, k)
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim(x, y) -> float:
    a = _as_array(x)
    b = _as_array(y)
    if a.shape != b.shape:
        raise ValidationError("ssim: shape mismatch")
    if a.ndim == 2:
        return ssim_frame(a, b)
    return float(np.mean([ssim_frame(a[t], b[t]) for t in range(a.shape[0])]))


@dataclass
class MetricsReport:
    psnr: float
    ssim: float
    per_frame: list | None = None  # optional [(psnr, ssim)] series


def evaluate(pred, truth, per_frame: bool = False) -> MetricsReport:
    a = _as_array(pred)
    b = _as_array(truth)
    if a.shape != b.shape:
        raise ValidationError("evaluate: shape mismatch")
    series = None
    if per_frame and a.ndim == 3:
        series = [(psnr(a[t], b[t]), ssim_frame(a[t], b[t])) for t in range(a.shape[0])]
    return MetricsReport(psnr=psnr(a, b), ssim=ssim(a, b), per_frame=series)


@dataclass
class RobustnessFit:
    m_lll: float  # dB per unit L_m/S_m
    b_lll: float  # dB intercept
    r_squared: float


def fit_m_lll(points) -> RobustnessFit:
    """Ordinary least squares of PSNR against the leakage ratio L_m/S_m."""
    pts = np.asarray(list(points), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ValidationError("fit needs at least two (ratio, psnr) points")
    x = pts[:, 0]
    y = pts[:, 1]
    if np.unique(x).size < 2:
        raise ValidationError("fit needs at least two distinct abscissae")
    xm = x.mean()
    ym = y.mean()
    sxx = float(((x - xm) ** 2).sum())
    sxy = float(((x - xm) * (y - ym)).sum())
    slope = sxy / sxx
    intercept = ym - slope * xm
    resid = y - (slope * x + intercept)
    ss_res = float((resid**2).sum())
    ss_tot = float(((y - ym) ** 2).sum())
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res <= 1e-24 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return RobustnessFit(m_lll=slope, b_lll=intercept, r_squared=float(np.clip(r2, 0.0, 1.0)))


@dataclass
class SweepCell:
    s_m: float
    ratio: float
    denoiser: str
    trial: int
    psnr: float
    ssim: float


@dataclass
class SweepGrid:
    s_values: list
    ratio_values: list
    denoisers: list
    cells: list  # one SweepCell per (s, ratio, denoiser, trial)

    def mean_metric(self, s_m: float, ratio: float, name: str, metric: str = "psnr") -> float:
        vals = [
            getattr(c, metric)
            for c in self.cells
            if c.s_m == s_m and c.ratio == ratio and c.denoiser == name
        ]
        return float(np.mean(vals))

    def mean_reports(self) -> dict:
        """Trial-averaged MetricsReport per (S_m, ratio, denoiser); exactly
        one entry per grid cell and denoiser."""
        out = {}
        for s in self.s_values:
            for r in self.ratio_values:
                for name in self.denoisers:
                    out[(s, r, name)] = MetricsReport(
                        psnr=self.mean_metric(s, r, name, "psnr"),
                        ssim=self.mean_metric(s, r, name, "ssim"),
                    )
        return out

    def winners(self, metric: str = "psnr") -> dict:
        """Per-cell argmax denoiser for psnr/ssim."""
        out = {}
        for s in self.s_values:
            for r in self.ratio_values:
                means = {n: self.mean_metric(s, r, n, metric) for n in self.denoisers}
                out[(s, r)] = max(means, key=means.get)
        return out

    def robustness_fits(self) -> dict:
        """Per (denoiser, S_m): least-squares fit of mean PSNR vs ratio."""
        fits = {}
        for name in self.denoisers:
            for s in self.s_values:
                pts = [(r, self.mean_metric(s, r, name)) for r in self.ratio_values]
                if len({p[0] for p in pts}) >= 2:
                    fits[(name, s)] = fit_m_lll(pts)
        return fits


def run_sweep(
    fluorescence: VideoSequence,
    reference: VideoSequence,
    leakage: VideoSequence,
    denoisers: dict,
    s_values,
    ratio_values,
    trials: int,
    seed: int,
    base_params: NoiseParams | None = None,
    bank=None,
) -> SweepGrid:
    """Noise-space sweep: for every (S_m, L_m/S_m) cell and trial, simulate,
    run each denoiser, and score PSNR/SSIM against the clean fluorescence.
    Cell trials get independent derived seeds, so the grid is deterministic
    in (grid spec, seed, trials)."""
    s_values = [float(s) for s in s_values]
    ratio_values = [float(r) for r in ratio_values]
    if not s_values or not ratio_values:
        raise ValidationError("sweep grid must be non-empty")
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    if not denoisers:
        raise ValidationError("no denoisers given")

    cells = []
    for ci, (s_m, ratio) in enumerate((s, r) for s in s_values for r in ratio_values):
        for trial in range(trials):
            params = NoiseParams(
                s_m=s_m,
                l_m=ratio * s_m,
                r_m=base_params.r_m if base_params else 6.0,
                k=base_params.k if base_params else 1.0 / 1763.5,
                bit_depth=base_params.bit_depth if base_params else 12,
            )
            noisy = simulate_sequence(
                fluorescence,
                reference,
                params,
                seed,
                leakage=leakage,
                bank=bank,
                sequence_id=f"sweep/cell{ci}/trial{trial}",
            )
            for name, fn in denoisers.items():
                denoised = fn(noisy, reference, leakage)
                cells.append(
                    SweepCell(
                        s_m=s_m,
                        ratio=ratio,
                        denoiser=name,
                        trial=trial,
                        psnr=psnr(denoised, fluorescence),
                        ssim=ssim(denoised, fluorescence),
                    )
                )
    return SweepGrid(
        s_values=s_values,
        ratio_values=ratio_values,
        denoisers=list(denoisers),
        cells=cells,
    )

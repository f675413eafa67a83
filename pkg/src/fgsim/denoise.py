"""Causal denoisers.

The align-and-merge recursion keeps a motion-corrected running sum and a
per-pixel effective sample count. Each step warps both by the reference
flow, zeroes them where the occlusion test rejects the warp (full reset, so
no ghost history survives), adds the current noisy frame, and emits the
ratio. The count is capped at n_max with the running mean preserved, which
turns the recursion into exponential forgetting once the cap is reached;
an uncapped sum with a capped count would let the ratio drift upward.

Everything here is strictly causal: the runner consumes frames in order and
each output depends only on inputs with the same or a smaller index.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .flow import (
    DEFAULT_MAX_DISPLACEMENT,
    DEFAULT_OCCLUSION_TAU,
    estimate_flow,
    occlusion_mask,
)
from .frameio import VideoSequence
from .kernels import warp_bilinear
from .leakage import LeakagePredictor
from .noise import NoiseParams


@dataclass
class AMState:
    acc: np.ndarray  # motion-corrected intensity sum
    count: np.ndarray  # per-pixel effective sample count, fractional >= 0
    t: int = 0

    @classmethod
    def initial(cls, shape) -> "AMState":
        return cls(acc=np.zeros(shape), count=np.zeros(shape), t=0)


@dataclass
class PipelineConfig:
    n_max: float = 64.0
    tau: float = DEFAULT_OCCLUSION_TAU
    predictor: LeakagePredictor | None = None
    leakage_scale_mode: str = "fixed"  # fixed | estimated
    beta: float | None = None  # fixed-mode scale; default L_m/S_m from params
    params: NoiseParams | None = None
    smoother_sigma: float = 0.0  # 0 disables spatial smoothing
    max_displacement: float = DEFAULT_MAX_DISPLACEMENT

    def validate(self) -> None:
        if self.n_max < 1.0:
            raise ValidationError("n_max must be >= 1")
        if self.tau <= 0.0:
            raise ValidationError("tau must be positive")
        if self.smoother_sigma < 0.0:
            raise ValidationError("smoother sigma must be >= 0")
        if self.leakage_scale_mode not in ("fixed", "estimated"):
            raise ValidationError("leakage_scale_mode must be fixed or estimated")


def am_update(
    state: AMState,
    noisy_fv: np.ndarray,
    prev_ref: np.ndarray | None,
    cur_ref: np.ndarray,
    cfg: PipelineConfig,
):
    """One align-and-merge step; returns (new state, temporally averaged frame)."""
    noisy_fv = np.asarray(noisy_fv, dtype=np.float64)
    cur_ref = np.asarray(cur_ref, dtype=np.float64)
    if noisy_fv.shape != cur_ref.shape or noisy_fv.shape != state.acc.shape:
        raise ValidationError("am_update: frame shapes do not match the state")

    if state.t == 0 or prev_ref is None:
        warped_acc = state.acc
        warped_cnt = state.count
        mask = np.ones_like(noisy_fv)
    else:
        flo = estimate_flow(prev_ref, cur_ref, max_displacement=cfg.max_displacement)
        mask = occlusion_mask(prev_ref, cur_ref, flo, cfg.tau).mask
        warped_acc, _ = warp_bilinear(state.acc, flo.u, flo.v)
        warped_cnt, _ = warp_bilinear(state.count, flo.u, flo.v)

    acc = mask * warped_acc
    cnt = mask * warped_cnt
    cap = cfg.n_max - 1.0
    over = cnt > cap
    if np.any(over):
        scale = np.divide(cap, cnt, out=np.ones_like(cnt), where=over)
        acc = np.where(over, acc * scale, acc)
        cnt = np.where(over, cap, cnt)
    acc = acc + noisy_fv
    cnt = cnt + 1.0
    a_m = acc / cnt
    return AMState(acc=acc, count=cnt, t=state.t + 1), a_m


def subtract_leakage(
    a_m: np.ndarray,
    predicted_leakage: np.ndarray | None,
    mode: str = "fixed",
    beta: float | None = None,
    params: NoiseParams | None = None,
) -> np.ndarray:
    """Remove the leakage bias from a temporally averaged frame and clamp at
    zero. Fixed mode scales the prediction by beta (default L_m/S_m, the
    bias the noise model injects); estimated mode regresses the averaged
    frame against the prediction over its lowest quartile, where pixels are
    presumed non-fluorescent, with two reweighting passes."""
    a_m = np.asarray(a_m, dtype=np.float64)
    if predicted_leakage is None:
        return np.maximum(a_m, 0.0)
    pred = np.asarray(predicted_leakage, dtype=np.float64)
    if pred.shape != a_m.shape:
        raise ValidationError("subtract_leakage: shape mismatch")

    if mode == "fixed":
        if beta is None:
            beta = params.l_m / params.s_m if params is not None else 0.0
        return np.maximum(a_m - beta * pred, 0.0)
    if mode != "estimated":
        raise ValidationError(f"unknown leakage scale mode {mode!r}")

    if not np.any(pred != 0.0):
        return np.maximum(a_m, 0.0)
    cutoff = np.quantile(a_m, 0.25)
    sel = a_m <= cutoff
    a_sel = a_m[sel]
    p_sel = pred[sel]
    denom = float((p_sel * p_sel).sum())
    if denom <= 0.0:
        return np.maximum(a_m, 0.0)
    b = float((a_sel * p_sel).sum()) / denom
    for _ in range(2):
        w = 1.0 / (np.abs(a_sel - b * p_sel) + 1e-6)
        d = float((w * p_sel * p_sel).sum())
        if d <= 0.0:
            break
        b = float((w * a_sel * p_sel).sum()) / d
    return np.maximum(a_m - b * pred, 0.0)


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(np.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _smooth(frame: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0.0:
        return frame
    k = _gaussian_kernel(sigma)
    r = k.size // 2
    p = np.pad(frame, r, mode="reflect")
    t = np.lib.stride_tricks.sliding_window_view(p, k.size, axis=1) @ k
    return np.lib.stride_tricks.sliding_window_view(t, k.size, axis=0) @ k


def run_causal(
    noisy_fv: VideoSequence,
    ref: VideoSequence,
    cfg: PipelineConfig,
    oracle_leakage: VideoSequence | None = None,
) -> VideoSequence:
    """Stream the causal pipeline: align-and-merge, leakage subtraction,
    optional Gaussian smoothing. Output frame t is a deterministic function
    of input frames 0..t only."""
    cfg.validate()
    n = len(noisy_fv)
    if len(ref) != n:
        raise ValidationError("noisy and reference sequences differ in length")
    if cfg.predictor is not None and cfg.predictor.kind == "oracle" and oracle_leakage is None:
        raise ValidationError("oracle predictor needs the stored leakage sequence")

    state = AMState.initial(noisy_fv.frame_shape)
    out = np.empty_like(noisy_fv.data)
    for t in range(n):
        prev_ref = ref.frame(t - 1) if t > 0 else None
        state, a_m = am_update(state, noisy_fv.frame(t), prev_ref, ref.frame(t), cfg)
        pred = None
        if cfg.predictor is not None:
            oracle = oracle_leakage.frame(t) if oracle_leakage is not None else None
            pred = cfg.predictor.predict(ref.frame(t), oracle)
        frame = subtract_leakage(a_m, pred, cfg.leakage_scale_mode, cfg.beta, cfg.params)
        if cfg.smoother_sigma > 0.0:
            frame = _smooth(frame, cfg.smoother_sigma)
        out[t] = frame
    return VideoSequence(out, fps=noisy_fv.fps, channel_tag="denoised")


def temporal_average_baseline(noisy_fv: VideoSequence, window: int) -> VideoSequence:
    """Causal boxcar mean over the trailing window (shorter at the start);
    the no-flow lower-bound comparator."""
    if window < 1:
        raise ValidationError("window must be >= 1")
    n = len(noisy_fv)
    out = np.empty_like(noisy_fv.data)
    for t in range(n):
        lo = max(0, t - window + 1)
        out[t] = noisy_fv.data[lo : t + 1].mean(axis=0)
    return VideoSequence(out, fps=noisy_fv.fps, channel_tag="denoised")


# denoiser factories with the uniform signature used by sweeps and the
# repeated-frames experiment: f(noisy, ref, oracle_leakage) -> denoised


def make_identity():
    def run(noisy, ref, oracle_leakage=None):
        return VideoSequence(noisy.data.copy(), fps=noisy.fps, channel_tag="denoised")

    return run


def make_temporal_average(window: int):
    def run(noisy, ref, oracle_leakage=None):
        return temporal_average_baseline(noisy, window)

    return run


def make_align_merge(cfg: PipelineConfig):
    def run(noisy, ref, oracle_leakage=None):
        return run_causal(noisy, ref, cfg, oracle_leakage)

    return run

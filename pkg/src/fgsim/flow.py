"""Dense motion estimation on the reference video, frame warping, and
occlusion detection.

The estimator is a pyramidal dense least-squares method (Lucas-Kanade
style): 3 pyramid levels at x2 downscale, 5 refinement iterations per level
over 7x7 windows, with a local-mean smoothing of the flow field after every
iteration (weak-gradient windows otherwise leave noisy patches that the
finer levels cannot pull back into their convergence basin). Windows whose
2x2 gradient normal matrix is ill-conditioned keep the estimate inherited
from the coarser level. The convention is backward warping: flow maps the
previous frame onto the current one such that cur(x) ~ prev(x - flow(x)).
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .kernels import warp_bilinear

DEFAULT_LEVELS = 3
DEFAULT_ITERATIONS = 5
DEFAULT_WINDOW = 7
DEFAULT_MAX_DISPLACEMENT = 32.0
DEFAULT_CONDITION_LIMIT = 1e3
DEFAULT_OCCLUSION_TAU = 0.08


@dataclass
class FlowField:
    u: np.ndarray  # horizontal displacement, pixels
    v: np.ndarray  # vertical displacement, pixels


def warp(frame: np.ndarray, flow: FlowField):
    """Backward bilinear warp; returns (warped, inbounds mask). Samples that
    land outside the frame are zero with mask 0."""
    return warp_bilinear(frame, flow.u, flow.v)


def _downsample2(img: np.ndarray) -> np.ndarray:
    h2, w2 = img.shape[0] // 2, img.shape[1] // 2
    a = img[: h2 * 2, : w2 * 2]
    return 0.25 * (a[0::2, 0::2] + a[0::2, 1::2] + a[1::2, 0::2] + a[1::2, 1::2])


def _upsample_to(flow_comp: np.ndarray, shape) -> np.ndarray:
    rep = np.repeat(np.repeat(flow_comp, 2, axis=0), 2, axis=1)
    h, w = shape
    out = np.zeros(shape, dtype=np.float64)
    hh = min(h, rep.shape[0])
    ww = min(w, rep.shape[1])
    out[:hh, :ww] = rep[:hh, :ww]
    if hh < h:
        out[hh:, :ww] = rep[hh - 1 : hh, :ww]
    if ww < w:
        out[:, ww:] = out[:, ww - 1 : ww]
    return out


def _window_sum(a: np.ndarray, win: int) -> np.ndarray:
    """Centered moving-window sum with zero padding, via an integral image."""
    r = win // 2
    h, w = a.shape
    p = np.zeros((h + 2 * r, w + 2 * r), dtype=np.float64)
    p[r : r + h, r : r + w] = a
    s = np.zeros((h + 2 * r + 1, w + 2 * r + 1), dtype=np.float64)
    s[1:, 1:] = p.cumsum(axis=0).cumsum(axis=1)
    return s[win:, win:] - s[:-win, win:] - s[win:, :-win] + s[:-win, :-win]


def estimate_flow(
    prev_ref: np.ndarray,
    cur_ref: np.ndarray,
    levels: int = DEFAULT_LEVELS,
    iterations: int = DEFAULT_ITERATIONS,
    window: int = DEFAULT_WINDOW,
    max_displacement: float = DEFAULT_MAX_DISPLACEMENT,
    condition_limit: float = DEFAULT_CONDITION_LIMIT,
) -> FlowField:
    prev_ref = np.asarray(prev_ref, dtype=np.float64)
    cur_ref = np.asarray(cur_ref, dtype=np.float64)
    if prev_ref.shape != cur_ref.shape or prev_ref.ndim != 2:
        raise ValidationError("flow frames must share one 2-D shape")
    if min(prev_ref.shape) < 2**levels:
        raise ValidationError(f"frames smaller than {2**levels} px per side")

    pyr_prev = [prev_ref]
    pyr_cur = [cur_ref]
    for _ in range(levels - 1):
        pyr_prev.append(_downsample2(pyr_prev[-1]))
        pyr_cur.append(_downsample2(pyr_cur[-1]))

    u = np.zeros(pyr_prev[-1].shape, dtype=np.float64)
    v = np.zeros(pyr_prev[-1].shape, dtype=np.float64)
    for lvl in range(levels - 1, -1, -1):
        p, c = pyr_prev[lvl], pyr_cur[lvl]
        if u.shape != p.shape:
            u = _upsample_to(u, p.shape) * 2.0
            v = _upsample_to(v, p.shape) * 2.0
        # window pixel counts for the border-corrected local mean
        counts = _window_sum(np.ones_like(p), window)
        for _ in range(iterations):
            warped, _ = warp_bilinear(p, u, v)
            gy, gx = np.gradient(warped)
            e = warped - c
            gxx = _window_sum(gx * gx, window)
            gxy = _window_sum(gx * gy, window)
            gyy = _window_sum(gy * gy, window)
            bx = _window_sum(gx * e, window)
            by = _window_sum(gy * e, window)
            det = gxx * gyy - gxy * gxy
            half_tr = 0.5 * (gxx + gyy)
            disc = np.sqrt(np.maximum(half_tr * half_tr - det, 0.0))
            lam_min = half_tr - disc
            lam_max = half_tr + disc
            ok = (lam_min > 0.0) & (lam_max <= condition_limit * lam_min)
            safe_det = np.where(ok, det, 1.0)
            du = np.where(ok, (gyy * bx - gxy * by) / safe_det, 0.0)
            dv = np.where(ok, (gxx * by - gxy * bx) / safe_det, 0.0)
            u = u + du
            v = v + dv
            u = np.clip(_window_sum(u, window) / counts, -max_displacement, max_displacement)
            v = np.clip(_window_sum(v, window) / counts, -max_displacement, max_displacement)
    return FlowField(u=u, v=v)


@dataclass
class OcclusionMask:
    mask: np.ndarray  # {0,1}; 1 = reliable, 0 = occluded / out of bounds


def occlusion_mask(prev_ref: np.ndarray, cur_ref: np.ndarray, flow: FlowField, tau: float = DEFAULT_OCCLUSION_TAU) -> OcclusionMask:
    """A pixel is reliable iff the warp of the previous reference frame
    agrees with the current one within tau and the sample was in bounds."""
    if tau <= 0.0:
        raise ValidationError("occlusion threshold must be positive")
    warped, inb = warp_bilinear(prev_ref, flow.u, flow.v)
    good = (np.abs(warped - cur_ref) <= tau) & (inb > 0)
    return OcclusionMask(mask=good.astype(np.float64))


def save_flow(path, flow: FlowField) -> None:
    """Raw planar float32 dump (u plane then v plane) with a JSON sidecar."""
    h, w = flow.u.shape
    planes = np.stack([flow.u, flow.v]).astype("<f4")
    planes.tofile(path)
    with open(str(path) + ".json", "w") as fh:
        json.dump({"width": w, "height": h, "planes": ["u", "v"], "dtype": "<f4"}, fh)


def load_flow(path) -> FlowField:
    sidecar = str(path) + ".json"
    if not os.path.exists(sidecar):
        raise FileNotFoundError(f"missing sidecar {sidecar}")
    with open(sidecar) as fh:
        meta = json.load(fh)
    h, w = int(meta["height"]), int(meta["width"])
    raw = np.fromfile(path, dtype="<f4").astype(np.float64)
    if raw.size != 2 * h * w:
        raise ValidationError(f"{path}: size does not match sidecar")
    planes = raw.reshape(2, h, w)
    return FlowField(u=planes[0], v=planes[1])

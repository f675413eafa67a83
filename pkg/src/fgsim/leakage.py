"""Leakage-frame prediction from reference frames.

The simulator needs a leakage frame per reference frame. Three pluggable
predictors cover that contract: an oracle that replays a stored ground-truth
channel, a global affine map fit with a median-seeking L1 objective, and a
per-tile affine map (8x8 grid, bilinearly blended) for spatially varying
leakage. A learned predictor can be slotted in later by matching the
``predict`` signature; nothing downstream cares how the frame was produced.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .frameio import VideoSequence

PATCH_GRID = 8
IRLS_ITERATIONS = 20
IRLS_WEIGHT_FLOOR = 1e-6


@dataclass
class LeakagePredictor:
    kind: str  # oracle | affine | patch_affine
    gain: float = 0.0
    offset: float = 0.0
    tile_gain: np.ndarray | None = None  # [G, G] for patch_affine
    tile_offset: np.ndarray | None = None

    def predict(self, reference: np.ndarray, oracle_leakage: np.ndarray | None = None) -> np.ndarray:
        if self.kind == "oracle":
            if oracle_leakage is None:
                raise ValidationError("oracle predictor needs the stored leakage frame")
            return np.asarray(oracle_leakage, dtype=np.float64)
        r = np.asarray(reference, dtype=np.float64)
        if self.kind == "affine":
            return np.clip(self.gain * r + self.offset, 0.0, 1.0)
        if self.kind == "patch_affine":
            a = _blend_tiles(self.tile_gain, r.shape)
            b = _blend_tiles(self.tile_offset, r.shape)
            return np.clip(a * r + b, 0.0, 1.0)
        raise ValidationError(f"unknown predictor kind {self.kind!r}")

    def to_json(self) -> str:
        doc = {"kind": self.kind, "gain": self.gain, "offset": self.offset}
        if self.tile_gain is not None:
            doc["tile_gain"] = self.tile_gain.tolist()
            doc["tile_offset"] = self.tile_offset.tolist()
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LeakagePredictor":
        doc = json.loads(text)
        tg = np.asarray(doc["tile_gain"]) if "tile_gain" in doc else None
        to = np.asarray(doc["tile_offset"]) if "tile_offset" in doc else None
        return cls(kind=doc["kind"], gain=float(doc.get("gain", 0.0)),
                   offset=float(doc.get("offset", 0.0)), tile_gain=tg, tile_offset=to)


def _blend_tiles(grid: np.ndarray, shape) -> np.ndarray:
    """Bilinear interpolation of per-tile coefficients between tile centers,
    clamped at the border tiles."""
    g = grid.shape[0]
    h, w = shape
    cy = (np.arange(g) + 0.5) * (h / g)
    cx = (np.arange(g) + 0.5) * (w / g)
    yq = np.arange(h) + 0.5
    xq = np.arange(w) + 0.5
    iy = np.clip(np.searchsorted(cy, yq) - 1, 0, g - 2)
    ix = np.clip(np.searchsorted(cx, xq) - 1, 0, g - 2)
    ty = np.clip((yq - cy[iy]) / (cy[iy + 1] - cy[iy]), 0.0, 1.0)[:, None]
    tx = np.clip((xq - cx[ix]) / (cx[ix + 1] - cx[ix]), 0.0, 1.0)[None, :]
    g00 = grid[np.ix_(iy, ix)]
    g01 = grid[np.ix_(iy, ix + 1)]
    g10 = grid[np.ix_(iy + 1, ix)]
    g11 = grid[np.ix_(iy + 1, ix + 1)]
    top = (1.0 - tx) * g00 + tx * g01
    bot = (1.0 - tx) * g10 + tx * g11
    return (1.0 - ty) * top + ty * bot


def _l1_affine(r: np.ndarray, l: np.ndarray):
    """Affine fit minimizing sum |a*r + b - l| via iteratively reweighted
    least squares. The L1 objective is median seeking, which is what makes
    the fit latch onto the dominant flicker mode instead of averaging."""
    r = r.ravel()
    l = l.ravel()
    if np.ptp(r) <= 0.0:
        return 0.0, float(np.median(l))
    w = np.ones_like(r)
    a, b = 0.0, float(np.median(l))
    for _ in range(IRLS_ITERATIONS):
        sw = w.sum()
        swr = (w * r).sum()
        swrr = (w * r * r).sum()
        swl = (w * l).sum()
        swrl = (w * r * l).sum()
        det = swrr * sw - swr * swr
        if det <= 0.0:
            break
        a = (swrl * sw - swl * swr) / det
        b = (swrr * swl - swr * swrl) / det
        w = 1.0 / np.maximum(np.abs(a * r + b - l), IRLS_WEIGHT_FLOOR)
    # keep coefficients in a range where predictions can stay inside [0, 1]
    return float(np.clip(a, -10.0, 10.0)), float(np.clip(b, -1.0, 1.0))


def fit_predictor(pairs, kind: str) -> LeakagePredictor:
    """Fit a predictor from (reference, noisy leakage) frame pairs."""
    if kind == "oracle":
        raise ValidationError("the oracle predictor is not fitted")
    if kind not in ("affine", "patch_affine"):
        raise ValidationError(f"unknown predictor kind {kind!r}")
    pairs = list(pairs)
    if not pairs:
        raise ValidationError("need at least one (reference, leakage) pair")
    refs = np.stack([np.asarray(p[0], dtype=np.float64) for p in pairs])
    leaks = np.stack([np.asarray(p[1], dtype=np.float64) for p in pairs])
    if refs.shape != leaks.shape:
        raise ValidationError("reference/leakage shapes differ")

    if kind == "affine":
        a, b = _l1_affine(refs, leaks)
        return LeakagePredictor(kind="affine", gain=a, offset=b)

    h, w = refs.shape[1:]
    g = PATCH_GRID
    if h < g or w < g:
        raise ValidationError(f"frames must be at least {g}x{g} for patch_affine")
    ys = np.linspace(0, h, g + 1).astype(int)
    xs = np.linspace(0, w, g + 1).astype(int)
    tile_gain = np.zeros((g, g))
    tile_offset = np.zeros((g, g))
    for i in range(g):
        for j in range(g):
            rt = refs[:, ys[i] : ys[i + 1], xs[j] : xs[j + 1]]
            lt = leaks[:, ys[i] : ys[i + 1], xs[j] : xs[j + 1]]
            tile_gain[i, j], tile_offset[i, j] = _l1_affine(rt, lt)
    return LeakagePredictor(kind="patch_affine", tile_gain=tile_gain, tile_offset=tile_offset)


def fit_from_sequences(reference: VideoSequence, noisy_leakage: VideoSequence, kind: str) -> LeakagePredictor:
    if len(reference) != len(noisy_leakage):
        raise ValidationError("reference and leakage sequences differ in length")
    pairs = [(reference.frame(t), noisy_leakage.frame(t)) for t in range(len(reference))]
    return fit_predictor(pairs, kind)


def predict_sequence(predictor: LeakagePredictor, reference: VideoSequence,
                     oracle_leakage: VideoSequence | None = None) -> VideoSequence:
    frames = []
    for t in range(len(reference)):
        oracle = oracle_leakage.frame(t) if oracle_leakage is not None else None
        frames.append(predictor.predict(reference.frame(t), oracle))
    return VideoSequence(np.stack(frames), fps=reference.fps, channel_tag="leakage")


def energy_removed(noisy_leakage: VideoSequence, predicted: VideoSequence) -> float:
    """Fraction of the L2 energy of the noisy leakage explained by the
    prediction: 1 - ||noisy - predicted|| / ||noisy||."""
    if noisy_leakage.data.shape != predicted.data.shape:
        raise ValidationError("sequence shapes differ")
    denom = float(np.linalg.norm(noisy_leakage.data.ravel()))
    if denom == 0.0:
        raise ValidationError("noisy leakage is identically zero")
    resid = float(np.linalg.norm((noisy_leakage.data - predicted.data).ravel()))
    return 1.0 - resid / denom

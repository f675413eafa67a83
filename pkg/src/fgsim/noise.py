"""Calibrated noise synthesis for fluorescence video.

Per pixel, a noisy frame is

    out = (1 / (K * S_m)) * quantize(K * Poisson(S_m * S + L_m * L) + R / R_m)

with S the clean fluorescence, L the leakage frame, R a sampled dark frame,
and a 12-bit quantizer by default. The leading rescale means the output is
not re-clipped: values above 1 are legal and preserved. With no leakage and
no read noise the expected output equals S, which the tests rely on.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .frameio import VideoSequence
from .kernels import poisson_counts

_MASK64 = (1 << 64) - 1


@dataclass
class NoiseParams:
    s_m: float  # max fluorescence photons per pixel
    l_m: float  # max leakage photons per pixel
    r_m: float = 6.0  # read-noise divisor
    k: float = 1.0 / 1763.5  # camera gain, normalized intensity per photon
    bit_depth: int = 12

    def validate(self) -> None:
        if not (self.s_m > 0.0):
            raise ValidationError("S_m must be positive")
        if self.l_m < 0.0:
            raise ValidationError("L_m must be non-negative")
        if not (self.r_m > 0.0):
            raise ValidationError("R_m must be positive")
        if not (0.0 < self.k <= 1.0):
            raise ValidationError("gain K must lie in (0, 1]")
        if self.bit_depth < 1:
            raise ValidationError("bit depth must be >= 1")


def paper_test_params(s_m: float, l_m: float) -> NoiseParams:
    """The calibrated test-camera preset: 1/K = 1763.5, R_m = 6, 12 bits."""
    return NoiseParams(s_m=s_m, l_m=l_m, r_m=6.0, k=1.0 / 1763.5, bit_depth=12)


def _sid_key(sequence_id: str) -> int:
    digest = hashlib.blake2s(sequence_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream keyed by (seed, sequence_id, frame_index).

    Distinct frame indices give statistically independent streams, so frames
    can be simulated concurrently with results identical to sequential runs.
    ``frame_index=None`` addresses the sequence-level stream.
    """

    seed: int
    sequence_id: str = ""
    frame_index: int | None = None

    def generator(self) -> np.random.Generator:
        key = _sid_key(self.sequence_id)
        if self.frame_index is None:
            spawn = (key,)
        else:
            if self.frame_index < 0:
                raise ValidationError("frame_index must be non-negative")
            spawn = (key, int(self.frame_index))
        ss = np.random.SeedSequence(entropy=int(self.seed) & _MASK64, spawn_key=spawn)
        return np.random.default_rng(ss)


def quantize(x, bit_depth: int = 12):
    """Round to the nearest multiple of 2**-bit_depth and clip to [0, 1].

    Ties round half away from zero (np.rint would give half-to-even, which
    disagrees with the fixed-point behaviour being modelled).
    """
    if bit_depth < 1:
        raise ValidationError("bit depth must be >= 1")
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("quantize requires finite input")
    levels = float(2**bit_depth)
    y = arr * levels
    rounded = np.copysign(np.floor(np.abs(y) + 0.5), y)
    out = np.clip(rounded / levels, 0.0, 1.0)
    if np.isscalar(x) or arr.ndim == 0:
        return float(out)
    return out


@dataclass
class ReadNoiseBank:
    """Archive of bias-removed dark frames, temporally ordered as captured."""

    frames: np.ndarray  # [T, H, W]
    source_id: str = "procedural"

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[0] < 1:
            raise ValidationError("dark bank must be a non-empty [T, H, W] array")

    def __len__(self) -> int:
        return self.frames.shape[0]


def procedural_dark_bank(
    length: int,
    height: int,
    width: int,
    seed: int,
    sigma_px: float = 0.004,
    sigma_row: float = 0.002,
    flicker_offset: float = 0.0005,
    flicker_high_prob: float = 0.5,
    source_id: str = "procedural",
) -> ReadNoiseBank:
    """Synthesize a dark-frame bank: row-correlated Gaussian noise plus a
    two-level per-frame flicker offset, giving the bimodal per-frame means
    real sensors show."""
    if length < 1 or height < 1 or width < 1:
        raise ValidationError("bank dimensions must be positive")
    rng = RngStream(seed, f"{source_id}#dark").generator()
    frames = np.empty((length, height, width))
    for t in range(length):
        rows = rng.standard_normal(height)[:, None] * sigma_row
        px = rng.standard_normal((height, width)) * sigma_px
        level = flicker_offset if rng.random() < flicker_high_prob else 0.0
        frames[t] = rows + px + level
    np.clip(frames, -1.0, 1.0, out=frames)
    return ReadNoiseBank(frames=frames, source_id=source_id)


def sample_read_noise(bank: ReadNoiseBank, length: int, rng: np.random.Generator) -> VideoSequence:
    """Draw a time-contiguous run of ``length`` dark frames with a uniformly
    random start; the whole bank when the request equals its length."""
    if length < 1:
        raise ValidationError("requested read-noise length must be >= 1")
    if length > len(bank):
        raise ValidationError(f"dark bank too short: {len(bank)} < {length}")
    start = int(rng.integers(0, len(bank) - length + 1))
    return VideoSequence(bank.frames[start : start + length].copy(), channel_tag="read_noise")


def simulate_frame(
    s: np.ndarray,
    l: np.ndarray,
    r: np.ndarray,
    params: NoiseParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """One noisy frame from clean fluorescence ``s``, leakage ``l``, and a
    dark frame ``r``. Output may exceed 1 after the final rescale."""
    params.validate()
    s = np.asarray(s, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if s.shape != l.shape or s.shape != r.shape:
        raise ValidationError("simulate_frame: S, L, R must share one shape")
    rate = params.s_m * s + params.l_m * l
    counts = poisson_counts(rate, rng)
    # read noise is applied inside the quantizer argument
    pre_q = params.k * counts + r / params.r_m
    return quantize(pre_q, params.bit_depth) / (params.k * params.s_m)


def simulate_sequence(
    fluorescence: VideoSequence,
    reference: VideoSequence,
    params: NoiseParams,
    seed: int,
    leakage: VideoSequence | None = None,
    predictor=None,
    bank: ReadNoiseBank | None = None,
    sequence_id: str = "seq0",
) -> VideoSequence:
    """Simulate a noisy fluorescence video.

    The leakage frame comes either from the stored ground-truth ``leakage``
    channel or from ``predictor`` applied to the reference frame. Read noise
    is one contiguous bank sample covering the whole sequence. Deterministic
    in (inputs, params, seed).
    """
    params.validate()
    n = len(fluorescence)
    if len(reference) != n:
        raise ValidationError("fluorescence and reference lengths differ")
    if leakage is None and predictor is None and params.l_m > 0.0:
        raise ValidationError("leakage source required when L_m > 0")
    if leakage is not None and len(leakage) != n:
        raise ValidationError("leakage channel length differs")

    h, w = fluorescence.frame_shape
    if bank is None:
        bank = procedural_dark_bank(n + 60, h, w, seed, source_id=sequence_id)
    seq_rng = RngStream(seed, sequence_id).generator()
    read = sample_read_noise(bank, n, seq_rng)

    out = np.empty_like(fluorescence.data)
    for t in range(n):
        if leakage is not None:
            l_t = leakage.frame(t)
        elif predictor is not None:
            l_t = predictor.predict(reference.frame(t))
        else:
            l_t = np.zeros((h, w))
        frame_rng = RngStream(seed, sequence_id, t).generator()
        out[t] = simulate_frame(fluorescence.frame(t), l_t, read.frame(t), params, frame_rng)
    return VideoSequence(out, fps=fluorescence.fps, channel_tag="noisy_fv")


def sample_training_params(rng: np.random.Generator) -> NoiseParams:
    """Draw augmentation parameters: 1/K ~ U[1200, 2400], S_m ~ U[10, 1/(2K)],
    L_m ~ U[0, S_m], R_m ~ U[4, 8], 12-bit quantizer."""
    inv_k = rng.uniform(1200.0, 2400.0)
    s_m = rng.uniform(10.0, inv_k / 2.0)
    l_m = rng.uniform(0.0, s_m)
    r_m = rng.uniform(4.0, 8.0)
    return NoiseParams(s_m=s_m, l_m=l_m, r_m=r_m, k=1.0 / inv_k, bit_depth=12)

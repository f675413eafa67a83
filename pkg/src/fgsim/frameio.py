"""Frame-sequence containers, on-disk formats, and the synthetic scene
generator.

Two storage formats: directories of 16-bit grayscale PNGs named
``frame_%06d.png`` for display-range channels, and a raw planar little-
endian float32 file (``.f32`` plus a JSON sidecar) for channels that can
leave [0, 1], such as read noise and simulated noisy video.
"""
from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, asdict

import numpy as np

from ._png import read_png, write_png16
from .errors import ValidationError

CHANNEL_TAGS = (
    "fluorescence_clean",
    "reference",
    "leakage",
    "read_noise",
    "noisy_fv",
    "denoised",
)

# channels with a hard [0, 1] range; read noise is bias-removed so lives in
# [-1, 1]; simulated noisy/denoised video is >= 0 but the final rescale can
# push values above 1 and those are preserved, not clipped
_UNIT_RANGE_TAGS = ("fluorescence_clean", "reference", "leakage")

_FRAME_RE = re.compile(r"(\d+)")
_MASK64 = (1 << 64) - 1


@dataclass
class VideoSequence:
    data: np.ndarray  # [frames, height, width] float64
    fps: float = 15.0
    channel_tag: str = "fluorescence_clean"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[0] < 1:
            raise ValidationError("sequence data must be a non-empty [T, H, W] array")
        if self.channel_tag not in CHANNEL_TAGS:
            raise ValidationError(f"unknown channel tag {self.channel_tag!r}")

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def frame_shape(self):
        return self.data.shape[1:]

    def frame(self, i: int) -> np.ndarray:
        return self.data[i]

    def validate(self) -> None:
        if not np.all(np.isfinite(self.data)):
            raise ValidationError(f"{self.channel_tag}: non-finite pixel values")
        if self.channel_tag in _UNIT_RANGE_TAGS:
            if self.data.min() < 0.0 or self.data.max() > 1.0:
                raise ValidationError(f"{self.channel_tag}: values outside [0, 1]")
        elif self.channel_tag == "read_noise":
            if self.data.min() < -1.0 or self.data.max() > 1.0:
                raise ValidationError("read_noise: values outside [-1, 1]")
        elif self.data.min() < 0.0:
            raise ValidationError(f"{self.channel_tag}: negative pixel values")


def _read_f32(path):
    sidecar = str(path) + ".json"
    if not os.path.exists(sidecar):
        raise FileNotFoundError(f"missing sidecar {sidecar}")
    with open(sidecar) as fh:
        meta = json.load(fh)
    w, h, t = int(meta["width"]), int(meta["height"]), int(meta["frames"])
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != t * h * w:
        raise ValidationError(f"{path}: size does not match sidecar {t}x{h}x{w}")
    return raw.reshape(t, h, w).astype(np.float64)


def _write_f32(path, data):
    t, h, w = data.shape
    np.asarray(data, dtype="<f4").tofile(path)
    with open(str(path) + ".json", "w") as fh:
        json.dump({"width": w, "height": h, "frames": t, "dtype": "<f4"}, fh)


def load_sequence(path, channel_tag: str, fps: float = 15.0) -> VideoSequence:
    """Load a frame directory (16-bit grayscale or RGB PNGs) or a raw .f32
    planar file; PNG values are scaled to [0, 1] by the container maximum."""
    path = str(path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such sequence: {path}")
    if os.path.isfile(path):
        frames = _read_f32(path)
        seq = VideoSequence(frames, fps=fps, channel_tag=channel_tag)
        seq.validate()
        return seq

    names = sorted(n for n in os.listdir(path) if n.lower().endswith(".png"))
    if not names:
        raise ValidationError(f"{path}: no frame files")
    indices = []
    for n in names:
        m = _FRAME_RE.search(os.path.splitext(n)[0])
        if m is None:
            raise ValidationError(f"{path}: frame file without numeric index: {n}")
        indices.append(int(m.group(1)))
    if any(b <= a for a, b in zip(indices, indices[1:])):
        raise ValidationError(f"{path}: non-monotone frame numbering")

    planes = []
    shape = None
    for n in names:
        img, container_max, channels = read_png(os.path.join(path, n))
        if channels == 1 and container_max != 65535.0:
            raise ValidationError(f"{path}/{n}: 8-bit grayscale frames are rejected; use 16-bit")
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise ValidationError(f"{path}/{n}: inconsistent frame dimensions")
        planes.append(img / container_max)
    seq = VideoSequence(np.stack(planes), fps=fps, channel_tag=channel_tag)
    seq.validate()
    return seq


def save_sequence(seq: VideoSequence, path, fmt: str = "auto") -> None:
    """Persist a sequence. ``fmt``: png16 (frame directory), f32 (raw planar
    file), or auto, which uses f32 for channels that may leave [0, 1]."""
    if fmt == "auto":
        fmt = "f32" if seq.channel_tag in ("read_noise", "noisy_fv", "denoised") else "png16"
    if fmt == "f32":
        parent = os.path.dirname(str(path))
        if parent:
            os.makedirs(parent, exist_ok=True)
        _write_f32(path, seq.data)
    elif fmt == "png16":
        if seq.data.min() < 0.0 or seq.data.max() > 1.0:
            raise ValidationError("png16 cannot represent values outside [0, 1]; use f32")
        os.makedirs(path, exist_ok=True)
        scaled = np.rint(seq.data * 65535.0).astype(np.uint16)
        for t in range(len(seq)):
            write_png16(os.path.join(path, f"frame_{t:06d}.png"), scaled[t])
    else:
        raise ValidationError(f"unknown sequence format {fmt!r}")


# ---------------------------------------------------------------------------
# dataset manifests


@dataclass
class ManifestEntry:
    sequence_id: str
    fps: float
    length: int
    channels: dict  # channel_tag -> path relative to the manifest


@dataclass
class DatasetManifest:
    entries: list
    format_version: int = 1


def save_manifest(path, manifest: DatasetManifest) -> None:
    doc = {
        "format_version": manifest.format_version,
        "entries": [asdict(e) for e in manifest.entries],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def load_manifest(path) -> DatasetManifest:
    with open(path) as fh:
        doc = json.load(fh)
    if "entries" not in doc:
        raise ValidationError(f"{path}: not a dataset manifest")
    entries = [
        ManifestEntry(
            sequence_id=e["sequence_id"],
            fps=float(e.get("fps", 15.0)),
            length=int(e["length"]),
            channels=dict(e["channels"]),
        )
        for e in doc["entries"]
    ]
    return DatasetManifest(entries=entries, format_version=int(doc.get("format_version", 1)))


def load_entry_channel(manifest_path, entry: ManifestEntry, tag: str) -> VideoSequence:
    if tag not in entry.channels:
        raise ValidationError(f"entry {entry.sequence_id!r} has no {tag!r} channel")
    root = os.path.dirname(os.path.abspath(str(manifest_path)))
    seq = load_sequence(os.path.join(root, entry.channels[tag]), tag, fps=entry.fps)
    if len(seq) != entry.length:
        raise ValidationError(
            f"entry {entry.sequence_id!r} channel {tag!r}: length {len(seq)} != declared {entry.length}"
        )
    return seq


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass
class SceneSpec:
    width: int = 256
    height: int = 256
    length: int = 60
    n_blobs: int = 3
    velocity: tuple = (1, 0)  # (dx, dy) integer pixels per frame
    specular_count: int = 4
    alpha: float = 0.4  # reference-correlated fraction of the leakage
    blob_sigma: float = 14.0
    fps: float = 15.0
    flat_reference: float | None = None  # replace the texture with a constant


def _wrapped_gaussians(h, w, centers, sigmas, amps):
    yy = np.arange(h)[:, None]
    xx = np.arange(w)[None, :]
    out = np.zeros((h, w))
    for (cy, cx), s, a in zip(centers, sigmas, amps):
        dy = (yy - cy + h / 2.0) % h - h / 2.0
        dx = (xx - cx + w / 2.0) % w - w / 2.0
        out += a * np.exp(-(dx * dx + dy * dy) / (2.0 * s * s))
    return out


def _textured_background(h, w, rng):
    """Band-limited periodic texture in [0.15, 0.85]: smooth enough for
    optical flow, with gradients everywhere."""
    noise = rng.standard_normal((h, w))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    rad2 = fy * fy + fx * fx
    keep = np.exp(-rad2 / (2.0 * 0.06**2))
    tex = np.fft.irfft2(np.fft.rfft2(noise) * keep, s=(h, w))
    lo, hi = tex.min(), tex.max()
    if hi - lo < 1e-12:
        return np.full((h, w), 0.5)
    return 0.15 + 0.7 * (tex - lo) / (hi - lo)


def generate_synthetic_scene(spec: SceneSpec, seed: int):
    """Deterministic three-channel scene: moving Gaussian fluorescent blobs,
    a textured background, and leakage built as clip(alpha * reference +
    speculars, 0, 1). All channels share one global integer translation per
    frame (periodic wrap), so frame t equals frame 0 rolled by t * velocity.
    """
    if spec.length < 1 or spec.width < 1 or spec.height < 1:
        raise ValidationError("scene must have positive size and length")
    h, w = spec.height, spec.width
    rng = np.random.default_rng(np.random.SeedSequence(seed & _MASK64, spawn_key=(0x5C31,)))

    centers = [(rng.uniform(0, h), rng.uniform(0, w)) for _ in range(spec.n_blobs)]
    sigmas = [rng.uniform(0.5 * spec.blob_sigma, spec.blob_sigma) for _ in range(spec.n_blobs)]
    amps = [rng.uniform(0.4, 1.0) for _ in range(spec.n_blobs)]
    base_fluor = np.clip(_wrapped_gaussians(h, w, centers, sigmas, amps), 0.0, 1.0)

    if spec.flat_reference is not None:
        base_ref = np.full((h, w), float(spec.flat_reference))
    else:
        base_ref = _textured_background(h, w, rng)

    sp_centers = [(rng.uniform(0, h), rng.uniform(0, w)) for _ in range(spec.specular_count)]
    sp_sigmas = [rng.uniform(1.0, 2.5) for _ in range(spec.specular_count)]
    sp_amps = [rng.uniform(0.4, 0.9) for _ in range(spec.specular_count)]
    base_spec = _wrapped_gaussians(h, w, sp_centers, sp_sigmas, sp_amps)

    dx, dy = int(spec.velocity[0]), int(spec.velocity[1])
    fluor = np.empty((spec.length, h, w))
    ref = np.empty((spec.length, h, w))
    leak = np.empty((spec.length, h, w))
    for t in range(spec.length):
        shift = (t * dy, t * dx)
        fluor[t] = np.roll(base_fluor, shift, axis=(0, 1))
        ref[t] = np.roll(base_ref, shift, axis=(0, 1))
        leak[t] = np.clip(spec.alpha * ref[t] + np.roll(base_spec, shift, axis=(0, 1)), 0.0, 1.0)

    return {
        "fluorescence_clean": VideoSequence(fluor, fps=spec.fps, channel_tag="fluorescence_clean"),
        "reference": VideoSequence(ref, fps=spec.fps, channel_tag="reference"),
        "leakage": VideoSequence(leak, fps=spec.fps, channel_tag="leakage"),
    }


def write_scene_dataset(out_dir, spec: SceneSpec, seed: int, sequence_id: str = "scene0"):
    """Generate a scene and write it as a PNG dataset with a manifest;
    returns the manifest path."""
    seqs = generate_synthetic_scene(spec, seed)
    os.makedirs(out_dir, exist_ok=True)
    channels = {}
    for tag, seq in seqs.items():
        rel = os.path.join(sequence_id, tag)
        save_sequence(seq, os.path.join(out_dir, rel), fmt="png16")
        channels[tag] = rel
    entry = ManifestEntry(sequence_id=sequence_id, fps=spec.fps, length=spec.length, channels=channels)
    manifest_path = os.path.join(out_dir, "manifest.json")
    save_manifest(manifest_path, DatasetManifest(entries=[entry]))
    return manifest_path

"""Optical flow, warping, and occlusion tests."""
import numpy as np
import pytest

from fgsim.errors import ValidationError
from fgsim.flow import (
    FlowField,
    estimate_flow,
    load_flow,
    occlusion_mask,
    save_flow,
    warp,
)
from fgsim.frameio import SceneSpec, generate_synthetic_scene


def _texture(h=96, w=96, seed=5):
    spec = SceneSpec(width=w, height=h, length=1, n_blobs=0, velocity=(0, 0))
    return generate_synthetic_scene(spec, seed)["reference"].frame(0)


def test_identical_frames_zero_flow_exact():
    ref = _texture()
    fl = estimate_flow(ref, ref)
    assert np.all(fl.u == 0.0)
    assert np.all(fl.v == 0.0)


def test_flat_frames_zero_flow():
    flat = np.full((32, 32), 0.4)
    fl = estimate_flow(flat, flat)
    assert np.all(fl.u == 0.0)
    assert np.all(fl.v == 0.0)


@pytest.mark.parametrize("d", [1, 3, 8])
def test_translation_recovery(d):
    ref = _texture(128, 128)
    cur = np.roll(ref, d, axis=1)
    fl = estimate_flow(ref, cur)
    inner = (slice(16, -16), slice(16, -16))
    epe = np.sqrt((fl.u[inner] - d) ** 2 + fl.v[inner] ** 2)
    assert np.median(epe) <= 0.5


def test_vertical_and_diagonal_translation():
    ref = _texture(96, 96, seed=8)
    cur = np.roll(ref, (3, -2), axis=(0, 1))
    fl = estimate_flow(ref, cur)
    inner = (slice(12, -12), slice(12, -12))
    assert abs(np.median(fl.u[inner]) + 2.0) < 0.5
    assert abs(np.median(fl.v[inner]) - 3.0) < 0.5


def test_flow_rejects_small_or_mismatched_frames():
    with pytest.raises(ValidationError):
        estimate_flow(np.zeros((4, 4)), np.zeros((4, 4)))
    with pytest.raises(ValidationError):
        estimate_flow(np.zeros((32, 32)), np.zeros((32, 16)))


# ---------------------------------------------------------------------------
# warping


def test_warp_zero_flow_identity():
    f = np.random.default_rng(0).random((16, 16))
    zero = FlowField(u=np.zeros((16, 16)), v=np.zeros((16, 16)))
    out, inb = warp(f, zero)
    assert np.array_equal(out, f)
    assert inb.all()


def test_warp_integer_shift_exact_on_ramp():
    w = 16
    ramp = np.tile(np.arange(w, dtype=float) / w, (w, 1))
    flow = FlowField(u=np.ones((w, w)), v=np.zeros((w, w)))
    out, inb = warp(ramp, flow)
    # interior: out(x) = ramp(x-1)
    assert np.allclose(out[:, 1:], ramp[:, :-1], atol=0)
    assert np.all(inb[:, 1:] == 1)
    assert np.all(out[:, 0] == 0.0)
    assert np.all(inb[:, 0] == 0)


def test_warp_half_pixel_shift_on_ramp_closed_form():
    w = 16
    ramp = np.tile(np.arange(w, dtype=float) / w, (w, 1))
    flow = FlowField(u=np.full((w, w), 0.5), v=np.zeros((w, w)))
    out, inb = warp(ramp, flow)
    expect = ramp - 0.5 / w
    valid = inb > 0
    assert np.allclose(out[valid], expect[valid], atol=1e-12)


def test_warp_linearity():
    rng = np.random.default_rng(3)
    f = rng.random((20, 20))
    g = rng.random((20, 20))
    flow = FlowField(u=rng.uniform(-2, 2, (20, 20)), v=rng.uniform(-2, 2, (20, 20)))
    lhs, _ = warp(3.0 * f + 2.0 * g, flow)
    wf, _ = warp(f, flow)
    wg, _ = warp(g, flow)
    assert np.allclose(lhs, 3.0 * wf + 2.0 * wg, atol=1e-12)


# ---------------------------------------------------------------------------
# occlusion


def test_occlusion_identical_all_reliable():
    ref = _texture(32, 32)
    zero = FlowField(u=np.zeros((32, 32)), v=np.zeros((32, 32)))
    m = occlusion_mask(ref, ref, zero, tau=0.05)
    assert np.all(m.mask == 1.0)


def test_occlusion_new_bright_object_rejected():
    ref = _texture(32, 32)
    cur = ref.copy()
    cur[10:14, 10:18] = np.clip(cur[10:14, 10:18] + 0.5, 0, 1)
    changed = np.abs(cur - ref) > 0.05
    zero = FlowField(u=np.zeros((32, 32)), v=np.zeros((32, 32)))
    m = occlusion_mask(ref, cur, zero, tau=0.05)
    assert np.all(m.mask[changed] == 0.0)
    assert np.all(m.mask[~changed] == 1.0)


def test_occlusion_noisy_translated_pair_mostly_reliable():
    rng = np.random.default_rng(4)
    ref = _texture(64, 64, seed=9)
    d = 2
    cur = np.roll(ref, d, axis=1)
    ref_n = ref + rng.normal(0, 0.01, ref.shape)
    cur_n = cur + rng.normal(0, 0.01, ref.shape)
    flow = FlowField(u=np.full(ref.shape, float(d)), v=np.zeros(ref.shape))
    m = occlusion_mask(ref_n, cur_n, flow, tau=0.05)
    interior = m.mask[8:-8, 8:-8]
    # |N(0, 0.01*sqrt(2))| > 0.05 has probability under 1e-3
    assert interior.mean() >= 0.99


def test_occlusion_requires_positive_tau():
    ref = _texture(32, 32)
    zero = FlowField(u=np.zeros((32, 32)), v=np.zeros((32, 32)))
    with pytest.raises(ValidationError):
        occlusion_mask(ref, ref, zero, tau=0.0)


def test_flow_dump_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    fl = FlowField(u=rng.uniform(-4, 4, (12, 10)), v=rng.uniform(-4, 4, (12, 10)))
    path = tmp_path / "flow.f32"
    save_flow(path, fl)
    back = load_flow(path)
    assert np.abs(back.u - fl.u).max() < 1e-6
    assert np.abs(back.v - fl.v).max() < 1e-6

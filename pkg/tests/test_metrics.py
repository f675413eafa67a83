"""Metric tests: PSNR/SSIM contracts, the brute-force SSIM oracle, the
robustness regression, and the sweep."""
import numpy as np
import pytest

from fgsim.denoise import make_identity
from fgsim.errors import ValidationError
from fgsim.frameio import SceneSpec, VideoSequence, generate_synthetic_scene
from fgsim.metrics import (
    MetricsReport,
    evaluate,
    fit_m_lll,
    psnr,
    run_sweep,
    ssim_frame,
)
from fgsim.noise import NoiseParams, ReadNoiseBank


def test_psnr_identical_capped():
    x = np.random.default_rng(0).random((16, 16))
    assert psnr(x, x) == 100.0


def test_psnr_uniform_error():
    x = np.zeros((32, 32))
    y = np.full((32, 32), 0.1)
    assert psnr(x, y) == pytest.approx(20.0, abs=1e-9)


def test_psnr_checkerboard_error():
    x = np.zeros((32, 32))
    err = np.indices((32, 32)).sum(axis=0) % 2
    y = np.where(err == 1, 0.05, -0.05)
    # MSE = 0.0025 -> 10*log10(400) = 26.0206
    assert psnr(x, y) == pytest.approx(10.0 * np.log10(400.0), abs=1e-9)


def test_psnr_scaling_law():
    rng = np.random.default_rng(1)
    x = rng.random((24, 24))
    e = rng.normal(0, 0.01, x.shape)
    for c in (2.0, 5.0):
        drop = psnr(x, x + e) - psnr(x, x + c * e)
        assert drop == pytest.approx(20.0 * np.log10(c), abs=1e-9)


def test_psnr_shape_mismatch():
    with pytest.raises(ValidationError):
        psnr(np.zeros((4, 4)), np.zeros((5, 4)))


# ---------------------------------------------------------------------------
# ssim


def _ssim_bruteforce(x, y):
    """From-definition SSIM oracle: explicit windowed weighted moments,
    independent of the optimized separable-filter path."""
    win, sigma, k1, k2, lum = 11, 1.5, 0.01, 0.03, 1.0
    g = np.arange(win) - (win - 1) / 2.0
    g = np.exp(-(g * g) / (2.0 * sigma * sigma))
    kern = np.outer(g, g)
    kern /= kern.sum()
    c1 = (k1 * lum) ** 2
    c2 = (k2 * lum) ** 2
    h, w = x.shape
    vals = []
    for i in range(h - win + 1):
        for j in range(w - win + 1):
            wx = x[i : i + win, j : j + win]
            wy = y[i : i + win, j : j + win]
            mx = (kern * wx).sum()
            my = (kern * wy).sum()
            vx = (kern * wx * wx).sum() - mx * mx
            vy = (kern * wy * wy).sum() - my * my
            cxy = (kern * wx * wy).sum() - mx * my
            vals.append(
                ((2 * mx * my + c1) * (2 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2))
            )
    return float(np.mean(vals))


def test_ssim_identical_exactly_one():
    x = np.random.default_rng(2).random((24, 24))
    assert ssim_frame(x, x) == 1.0


def test_ssim_anticorrelated_negative():
    rng = np.random.default_rng(3)
    x = np.where(rng.random((32, 32)) < 0.5, 0.05, 0.95)
    y = 1.0 - x
    assert ssim_frame(x, y) < 0.0


def test_ssim_matches_bruteforce_oracle():
    rng = np.random.default_rng(4)
    for _ in range(5):
        x = rng.random((16, 16))
        y = np.clip(x + rng.normal(0, 0.1, x.shape), 0, 1)
        assert abs(ssim_frame(x, y) - _ssim_bruteforce(x, y)) < 1e-6


def test_ssim_symmetry():
    rng = np.random.default_rng(5)
    x = rng.random((20, 20))
    y = rng.random((20, 20))
    assert ssim_frame(x, y) == pytest.approx(ssim_frame(y, x), abs=1e-12)


def test_ssim_frame_too_small():
    with pytest.raises(ValidationError):
        ssim_frame(np.zeros((8, 8)), np.zeros((8, 8)))


def test_evaluate_per_frame_series():
    rng = np.random.default_rng(6)
    truth = VideoSequence(rng.random((3, 16, 16)), channel_tag="fluorescence_clean")
    pred = VideoSequence(
        np.clip(truth.data + rng.normal(0, 0.05, truth.data.shape), 0, 1),
        channel_tag="denoised",
    )
    report = evaluate(pred, truth, per_frame=True)
    assert isinstance(report, MetricsReport)
    assert len(report.per_frame) == 3
    assert report.psnr > 20.0


# ---------------------------------------------------------------------------
# robustness regression


def test_fit_collinear_exact():
    ratios = [0.0, 0.25, 0.5, 0.75, 1.0]
    pts = [(r, -6.0 * r + 40.0) for r in ratios]
    fit = fit_m_lll(pts)
    assert fit.m_lll == pytest.approx(-6.0, abs=1e-12)
    assert fit.b_lll == pytest.approx(40.0, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0)


def test_fit_two_points():
    fit = fit_m_lll([(0.0, 40.0), (1.0, 30.0)])
    assert fit.m_lll == pytest.approx(-10.0)
    assert fit.b_lll == pytest.approx(40.0)
    assert fit.r_squared == pytest.approx(1.0)


def test_fit_perturbed_line_matches_normal_equations():
    ratios = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    noise = np.array([0.5, -0.5, 0.5, -0.5, 0.5])
    y = -8.0 * ratios + 40.0 + noise
    fit = fit_m_lll(list(zip(ratios, y)))
    # independent oracle: full normal-equations solve
    a = np.stack([ratios, np.ones_like(ratios)], axis=1)
    coef, res, _, _ = np.linalg.lstsq(a, y, rcond=None)
    assert fit.m_lll == pytest.approx(coef[0], abs=1e-9)
    assert fit.b_lll == pytest.approx(coef[1], abs=1e-9)
    assert abs(fit.m_lll + 8.0) <= 0.9
    assert fit.r_squared > 0.95


def test_fit_rejects_degenerate():
    with pytest.raises(ValidationError):
        fit_m_lll([(0.5, 30.0)])
    with pytest.raises(ValidationError):
        fit_m_lll([(0.5, 30.0), (0.5, 31.0)])


# ---------------------------------------------------------------------------
# sweep


def _flat_scene(n=3, h=16, w=16):
    # fluorescence on the 2^-11 lattice so the noiseless limit is exact
    fluor = VideoSequence(np.full((n, h, w), 0.25), channel_tag="fluorescence_clean")
    scene = generate_synthetic_scene(
        SceneSpec(width=w, height=h, length=n, velocity=(0, 0)), 4
    )
    return fluor, scene["reference"], scene["leakage"]


def test_sweep_noiseless_limit_hits_cap():
    fluor, ref, leak = _flat_scene()
    s_m = 1.0e12
    params = NoiseParams(s_m=1.0, l_m=0.0, k=1.0 / (2.0 * s_m))
    bank = ReadNoiseBank(np.zeros((70, 16, 16)), source_id="zero")
    grid = run_sweep(
        fluor, ref, leak, {"identity": make_identity()},
        [s_m], [0.0], trials=1, seed=0, base_params=params, bank=bank,
    )
    assert grid.cells[0].psnr == 100.0


def test_sweep_dominance_winner_map():
    fluor, ref, leak = _flat_scene()

    def worse(noisy, r, l):
        out = noisy.data + 0.05
        return VideoSequence(out, channel_tag="denoised")

    grid = run_sweep(
        fluor, ref, leak,
        {"identity": make_identity(), "worse": worse},
        [25.0, 50.0], [0.0, 0.5], trials=2, seed=1,
    )
    winners = grid.winners("psnr")
    assert all(name == "identity" for name in winners.values())
    assert len(grid.cells) == 2 * 2 * 2 * 2


def test_sweep_mean_reports_one_per_cell():
    fluor, ref, leak = _flat_scene()
    grid = run_sweep(
        fluor, ref, leak, {"identity": make_identity()},
        [25.0, 50.0], [0.0, 0.5], trials=2, seed=5,
    )
    reports = grid.mean_reports()
    assert len(reports) == 2 * 2 * 1
    assert all(isinstance(r, MetricsReport) for r in reports.values())


def test_sweep_deterministic():
    fluor, ref, leak = _flat_scene()
    kw = dict(denoisers={"identity": make_identity()}, s_values=[25.0],
              ratio_values=[0.0, 1.0], trials=2, seed=3)
    a = run_sweep(fluor, ref, leak, **kw)
    b = run_sweep(fluor, ref, leak, **kw)
    for ca, cb in zip(a.cells, b.cells):
        assert ca == cb


def test_sweep_align_merge_beats_single_frame_average():
    # static scene at S_m=25: temporal accumulation must win every cell by
    # a wide margin over the window-1 average (which is the identity)
    from fgsim.denoise import PipelineConfig, make_align_merge, make_temporal_average
    from fgsim.leakage import LeakagePredictor

    h = w = 48
    n = 16
    scene = generate_synthetic_scene(
        SceneSpec(width=w, height=h, length=n, velocity=(0, 0), blob_sigma=6.0), 21
    )
    bank = ReadNoiseBank(np.zeros((n + 61, h, w)), source_id="zero")
    cfg = PipelineConfig(
        predictor=LeakagePredictor(kind="oracle"), leakage_scale_mode="estimated"
    )
    grid = run_sweep(
        scene["fluorescence_clean"], scene["reference"], scene["leakage"],
        {"am": make_align_merge(cfg), "tavg1": make_temporal_average(1)},
        [25.0], [0.0, 0.5], trials=1, seed=13, bank=bank,
    )
    for r in grid.ratio_values:
        am = grid.mean_metric(25.0, r, "am")
        tavg1 = grid.mean_metric(25.0, r, "tavg1")
        assert am - tavg1 > 3.0, (r, am, tavg1)


def test_sweep_validation():
    fluor, ref, leak = _flat_scene()
    with pytest.raises(ValidationError):
        run_sweep(fluor, ref, leak, {}, [25.0], [0.0], 1, 0)
    with pytest.raises(ValidationError):
        run_sweep(fluor, ref, leak, {"identity": make_identity()}, [], [0.0], 1, 0)

"""CLI tests: exit codes, determinism contract, end-to-end subcommands."""
import csv
import json
import os

import numpy as np
import pytest

from fgsim.cli import main
from fgsim.frameio import load_sequence


def _run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def _dir_bytes(root):
    blob = {}
    for dirpath, _, files in os.walk(root):
        for name in sorted(files):
            p = os.path.join(dirpath, name)
            with open(p, "rb") as fh:
                blob[os.path.relpath(p, root)] = fh.read()
    return blob


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("scene")
    code = main([
        "synth", "--out", str(root), "--seed", "5",
        "--width", "32", "--height", "32", "--frames", "6",
    ])
    assert code == 0
    return root


def test_help_exits_zero(capsys):
    code, out, _ = _run(capsys, "--help")
    assert code == 0
    assert "fgsim" in out


def test_subcommand_help_exits_zero(capsys):
    code, out, _ = _run(capsys, "simulate", "--help")
    assert code == 0
    assert "--sm" in out


def test_unknown_subcommand_is_validation_error(capsys):
    code, _, err = _run(capsys, "frobnicate")
    assert code == 1


def test_missing_subcommand(capsys):
    code, _, _ = _run(capsys)
    assert code == 1


def test_missing_input_is_io_error(tmp_path, capsys):
    code, _, err = _run(
        capsys, "calibrate", "--video", str(tmp_path / "nope"),
        "--roi", str(tmp_path / "nope.json"), "--out", str(tmp_path / "gain.json"),
    )
    assert code == 2


def test_invalid_config_before_output(tmp_path, scene_dir, capsys):
    out = tmp_path / "noisy.f32"
    code, _, err = _run(
        capsys, "simulate", "--manifest", str(scene_dir / "manifest.json"),
        "--sm", "-5", "--out", str(out),
    )
    assert code == 1
    assert not out.exists()


def test_bad_threads_env(monkeypatch, scene_dir, tmp_path, capsys):
    monkeypatch.setenv("FGSIM_THREADS", "zero")
    code, _, err = _run(
        capsys, "simulate", "--manifest", str(scene_dir / "manifest.json"),
        "--sm", "25", "--out", str(tmp_path / "x.f32"),
    )
    assert code == 1


def test_synth_deterministic_bytes(tmp_path, capsys):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for out in (a, b):
        code, _, _ = _run(
            capsys, "synth", "--out", str(out), "--seed", "9",
            "--width", "24", "--height", "24", "--frames", "4",
        )
        assert code == 0
    assert _dir_bytes(a) == _dir_bytes(b)


def test_simulate_deterministic_and_logged(scene_dir, tmp_path, capsys):
    outs = []
    for name in ("n1", "n2"):
        out = tmp_path / name
        code, stdout, _ = _run(
            capsys, "simulate", "--manifest", str(scene_dir / "manifest.json"),
            "--sm", "50", "--lm", "25", "--seed", "7", "--profile", "paper-test",
            "--out", str(out),
        )
        assert code == 0
        cfg = json.loads(stdout.splitlines()[0])
        assert cfg["command"] == "simulate"
        assert cfg["seed"] == 7
        assert cfg["config"]["inv_K"] == 1763.5
        outs.append(out)
    with open(str(outs[0]), "rb") as f1, open(str(outs[1]), "rb") as f2:
        assert f1.read() == f2.read()
    seq = load_sequence(str(outs[0]), "noisy_fv")
    assert len(seq) == 6


def test_simulate_with_json_config(scene_dir, tmp_path, capsys):
    cfg_path = tmp_path / "noise.json"
    cfg_path.write_text(json.dumps(
        {"S_m": 50, "L_m": 25, "R_m": 6.0, "inv_K": 1763.5, "bit_depth": 12, "seed": 7}
    ))
    out_a = tmp_path / "a.f32"
    code, _, _ = _run(
        capsys, "simulate", "--manifest", str(scene_dir / "manifest.json"),
        "--config", str(cfg_path), "--out", str(out_a),
    )
    assert code == 0
    # same run via explicit flags must be byte-identical
    out_b = tmp_path / "b.f32"
    code, _, _ = _run(
        capsys, "simulate", "--manifest", str(scene_dir / "manifest.json"),
        "--sm", "50", "--lm", "25", "--rm", "6.0", "--inv-k", "1763.5",
        "--bit-depth", "12", "--seed", "7", "--out", str(out_b),
    )
    assert code == 0
    assert out_a.read_bytes() == out_b.read_bytes()
    # explicit flag wins over the config value
    out_c = tmp_path / "c.f32"
    code, _, _ = _run(
        capsys, "simulate", "--manifest", str(scene_dir / "manifest.json"),
        "--config", str(cfg_path), "--seed", "8", "--out", str(out_c),
    )
    assert code == 0
    assert out_a.read_bytes() != out_c.read_bytes()


def test_simulate_config_rejects_unknown_keys(scene_dir, tmp_path, capsys):
    cfg_path = tmp_path / "noise.json"
    cfg_path.write_text(json.dumps({"S_m": 50, "gain": 2.0}))
    out = tmp_path / "x.f32"
    code, _, err = _run(
        capsys, "simulate", "--manifest", str(scene_dir / "manifest.json"),
        "--config", str(cfg_path), "--out", str(out),
    )
    assert code == 1
    assert not out.exists()


def test_simulate_requires_sm_somewhere(scene_dir, tmp_path, capsys):
    code, _, _ = _run(
        capsys, "simulate", "--manifest", str(scene_dir / "manifest.json"),
        "--out", str(tmp_path / "x.f32"),
    )
    assert code == 1


def test_calibrate_end_to_end(tmp_path, capsys):
    # phantom-like video in sensor units: K * Poisson(lambda)
    from fgsim._png import write_png16

    rng = np.random.default_rng(0)
    k_true = 1.0 / 1600.0
    video_dir = tmp_path / "phantom"
    os.makedirs(video_dir)
    data = k_true * rng.poisson(400.0, size=(600, 16, 16))
    for t in range(600):
        write_png16(video_dir / f"frame_{t:06d}.png",
                    np.rint(data[t] * 65535.0).astype(np.uint16))
    roi = tmp_path / "rois.json"
    roi.write_text(json.dumps({"rects": [[2, 2, 12, 12]]}))
    gain_out = tmp_path / "gain.json"
    code, _, _ = _run(
        capsys, "calibrate", "--video", str(video_dir), "--roi", str(roi),
        "--out", str(gain_out),
    )
    assert code == 0
    doc = json.loads(gain_out.read_text())
    assert doc["roi_count"] == 144
    # png quantization adds variance; the 16-bit step is ~2.4e-4 of scale
    assert abs(doc["K_mean"] - k_true) / k_true < 0.15


def test_fit_lll_and_denoise_end_to_end(scene_dir, tmp_path, capsys):
    lll_path = tmp_path / "lll.json"
    code, _, _ = _run(
        capsys, "fit-lll", "--pairs", str(scene_dir / "manifest.json"),
        "--kind", "affine", "--out", str(lll_path),
    )
    assert code == 0
    doc = json.loads(lll_path.read_text())
    assert doc["kind"] == "affine"

    noisy_path = tmp_path / "noisy.f32"
    code, _, _ = _run(
        capsys, "simulate", "--manifest", str(scene_dir / "manifest.json"),
        "--sm", "25", "--lm", "12.5", "--seed", "3", "--out", str(noisy_path),
    )
    assert code == 0

    den_path = tmp_path / "denoised.f32"
    code, _, _ = _run(
        capsys, "denoise", "--fv", str(noisy_path),
        "--ref", str(scene_dir / "scene0" / "reference"),
        "--lll", str(lll_path), "--sm", "25", "--lm", "12.5",
        "--nmax", "16", "--out", str(den_path),
    )
    assert code == 0

    metrics_json = tmp_path / "m.json"
    code, stdout, _ = _run(
        capsys, "evaluate", "--pred", str(den_path),
        "--truth", str(scene_dir / "scene0" / "fluorescence_clean"),
        "--out", str(metrics_json),
    )
    assert code == 0
    doc = json.loads(metrics_json.read_text())
    assert doc["psnr"] > 15.0
    assert -1.0 <= doc["ssim"] <= 1.0


def test_denoise_beta_auto(scene_dir, tmp_path, capsys):
    noisy_path = tmp_path / "noisy.f32"
    _run(
        capsys, "simulate", "--manifest", str(scene_dir / "manifest.json"),
        "--sm", "25", "--lm", "12.5", "--seed", "3", "--out", str(noisy_path),
    )
    code, _, _ = _run(
        capsys, "denoise", "--fv", str(noisy_path),
        "--ref", str(scene_dir / "scene0" / "reference"),
        "--leak", str(scene_dir / "scene0" / "leakage"),
        "--lll", "oracle", "--beta", "auto",
        "--out", str(tmp_path / "den.f32"),
    )
    assert code == 0


def test_sweep_end_to_end(scene_dir, tmp_path, capsys):
    out_dir = tmp_path / "sweep"
    code, _, _ = _run(
        capsys, "sweep", "--manifest", str(scene_dir / "manifest.json"),
        "--sm-list", "25,50", "--ratio-list", "0,0.5",
        "--denoisers", "identity,tavg4", "--trials", "1", "--seed", "2",
        "--out-dir", str(out_dir),
    )
    assert code == 0
    with open(out_dir / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 2 * 2
    assert {r["denoiser"] for r in rows} == {"identity", "tavg4"}
    rob = json.loads((out_dir / "robustness.json").read_text())
    assert "identity" in rob and len(rob["identity"]) == 2
    for fit in rob["identity"]:
        assert fit["m_lll"] < 0.0  # more leakage, lower psnr
    assert (out_dir / "winners.json").exists()


def test_repeat_frames_temporal_average_follows_variance_law():
    # pure shot noise: a window-n boxcar gains about 10*log10(k+1) dB at
    # frame k < n relative to frame 0
    from fgsim.cli import repeat_frames_experiment
    from fgsim.denoise import make_temporal_average
    from fgsim.frameio import SceneSpec, VideoSequence, generate_synthetic_scene
    from fgsim.noise import ReadNoiseBank, paper_test_params

    h = w = 48
    scene = generate_synthetic_scene(
        SceneSpec(width=w, height=h, length=1, velocity=(0, 0)), 31
    )
    fluor = VideoSequence(np.full((1, h, w), 0.5), channel_tag="fluorescence_clean")
    leak = VideoSequence(np.zeros((1, h, w)), channel_tag="leakage")
    bank = ReadNoiseBank(np.zeros((80, h, w)), source_id="zero")
    curves = repeat_frames_experiment(
        fluor, scene["reference"], leak,
        {"tavg8": make_temporal_average(8)},
        paper_test_params(25.0, 0.0), seed=31, n_frames=12, trials=8, bank=bank,
    )
    c = np.array(curves["tavg8"])
    for k in (1, 3, 7):
        expect = 10.0 * np.log10(k + 1.0)
        assert abs((c[k] - c[0]) - expect) < 1.0, (k, c[k] - c[0], expect)
    # beyond the window the curve stays flat at the window-8 level
    assert abs(c[11] - c[7]) < 1.0


def test_repeat_frames_end_to_end(scene_dir, tmp_path, capsys):
    out_csv = tmp_path / "repeat.csv"
    code, _, _ = _run(
        capsys, "repeat-frames", "--manifest", str(scene_dir / "manifest.json"),
        "--sm", "25", "--lm", "12.5", "--profile", "paper-test",
        "--n", "12", "--trials", "2", "--denoisers", "am,identity",
        "--lll", "oracle", "--seed", "4", "--out", str(out_csv),
    )
    assert code == 0
    with open(out_csv) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 12 * 2
    am = [float(r["psnr"]) for r in rows if r["denoiser"] == "am"]
    ident = [float(r["psnr"]) for r in rows if r["denoiser"] == "identity"]
    assert am[8] > ident[8] + 3.0  # averaging must beat identity by frame 8

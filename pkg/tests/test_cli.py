import numpy as np
import pytest

from ctrx.cli import main
from ctrx.io import Rng, add_awgn, load_weights, read_image, save_weights, write_image
from ctrx.layers import init_network, network_forward
from ctrx.metrics import psnr
from ctrx.pnp import ForwardModel, apply_forward, gaussian_blur
from ctrx.trainer import TrainConfig, synth_patches, train


@pytest.fixture(scope="module")
def toy_weights(tmp_path_factory):
    """A small trained grayscale network saved to disk."""
    root = tmp_path_factory.mktemp("weights")
    data = synth_patches(256, 32, seed=1)
    net = init_network(depth=5, patch=32, channels=1, seed=0)
    cfg = TrainConfig(lr=0.05, epochs=24, batch_size=16, sigma=25 / 255.0,
                      decay_epochs=(12, 20), seed=2)
    trained, _ = train(net, data, cfg)
    path = root / "toy.ctrx"
    save_weights(path, trained)
    return str(path), trained


def run(args, capsys):
    code = main(args)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def kv(stream):
    out = {}
    for line in stream.splitlines():
        if "=" in line:
            key, _, val = line.partition("=")
            if " " not in key:
                out[key] = val
    return out


def test_denoise_identity_roundtrip(tmp_path, capsys):
    x = np.random.default_rng(0).random((1, 20, 24))
    src = tmp_path / "in.raw"
    dst = tmp_path / "out.raw"
    write_image(src, x)
    code, _, err = run(["denoise", "--in", str(src), "--out", str(dst),
                        "--identity"], capsys)
    assert code == 0
    assert kv(err)["certificate"] == "1.0"
    np.testing.assert_array_equal(read_image(dst), x)


def test_denoise_with_trained_weights_improves_psnr(tmp_path, capsys, toy_weights):
    wpath, net = toy_weights
    clean = synth_patches(1, 32, seed=9)[0]
    noisy = add_awgn(clean, 25 / 255.0, Rng(3))
    src = tmp_path / "noisy.raw"
    dst = tmp_path / "den.raw"
    write_image(src, noisy)
    code, _, err = run(["denoise", "--in", str(src), "--out", str(dst),
                        "--weights", wpath, "--stride", "16"], capsys)
    assert code == 0
    cert = float(kv(err)["certificate"])
    assert cert < 1.0
    out = read_image(dst)
    assert psnr(out, clean) > psnr(noisy, clean)


def test_denoise_grayscale_weights_on_color_image(tmp_path, capsys, toy_weights):
    wpath, _ = toy_weights
    x = np.random.default_rng(1).random((3, 32, 32))
    src = tmp_path / "c.raw"
    dst = tmp_path / "c_out.raw"
    write_image(src, x)
    code, _, _ = run(["denoise", "--in", str(src), "--out", str(dst),
                      "--weights", wpath, "--stride", "16"], capsys)
    assert code == 0
    assert read_image(dst).shape == (3, 32, 32)


def test_denoise_stride_violation_exits_2(tmp_path, capsys, toy_weights):
    wpath, _ = toy_weights
    src = tmp_path / "x.raw"
    write_image(src, np.zeros((1, 32, 32)))
    code, _, _ = run(["denoise", "--in", str(src), "--out",
                      str(tmp_path / "y.raw"), "--weights", wpath,
                      "--stride", "5"], capsys)
    assert code == 2


def test_denoise_corrupt_weights_exits_3(tmp_path, capsys):
    wpath = tmp_path / "bad.ctrx"
    net = init_network(depth=2, patch=8, channels=1, seed=4)
    save_weights(wpath, net)
    raw = bytearray(wpath.read_bytes())
    raw[-10] ^= 0xFF
    wpath.write_bytes(bytes(raw))
    src = tmp_path / "x.raw"
    write_image(src, np.zeros((1, 8, 8)))
    code, _, err = run(["denoise", "--in", str(src), "--out",
                        str(tmp_path / "y.raw"), "--weights", str(wpath)],
                       capsys)
    assert code == 3
    assert "CRC" in err or "corrupt" in err.lower()


def test_denoise_missing_input_exits_4(tmp_path, capsys):
    code, _, _ = run(["denoise", "--in", str(tmp_path / "absent.raw"),
                      "--out", str(tmp_path / "y.raw"), "--identity"], capsys)
    assert code == 4


def test_restore_identity_delta_blur_one_iteration(tmp_path, capsys):
    y = np.random.default_rng(2).random((1, 16, 16))
    src = tmp_path / "y.raw"
    dst = tmp_path / "x.raw"
    write_image(src, y)
    code, _, err = run(["restore", "--in", str(src), "--out", str(dst),
                        "--task", "deblur", "--blur", "delta",
                        "--alpha-step", "1.0", "--identity"], capsys)
    assert code == 0
    stats = kv(err)
    assert float(stats["composite_bound"]) == 0.0
    assert stats["converged"] == "1"
    np.testing.assert_allclose(read_image(dst), y, atol=1e-10)


def test_restore_deblur_with_trace(tmp_path, capsys, toy_weights):
    wpath, net = toy_weights
    clean = synth_patches(1, 64, seed=9)[0]
    m = ForwardModel(gaussian_blur(9, 2.0), stride=1)
    y = apply_forward(clean, m)
    src = tmp_path / "blurred.raw"
    dst = tmp_path / "restored.raw"
    ref = tmp_path / "ref.raw"
    tr = tmp_path / "trace.csv"
    write_image(src, y)
    write_image(ref, clean)
    code, _, err = run(["restore", "--in", str(src), "--out", str(dst),
                        "--task", "deblur", "--blur", "gauss:9:2.0",
                        "--alpha-step", "1.0", "--weights", wpath,
                        "--stride", "16", "--trace", str(tr), "--ref", str(ref),
                        "--allow-expansive"], capsys)
    assert code == 0
    lines = tr.read_text().splitlines()
    assert lines[0] == "iter,residual,datafit,psnr"
    assert len(lines) > 2
    restored = read_image(dst)
    assert psnr(restored, clean) > psnr(np.asarray(y), clean)


def test_restore_expansive_bound_blocks_without_flag(tmp_path, capsys, toy_weights):
    wpath, _ = toy_weights
    src = tmp_path / "y.raw"
    write_image(src, np.random.default_rng(3).random((1, 32, 32)))
    code, _, err = run(["restore", "--in", str(src), "--out",
                        str(tmp_path / "x.raw"), "--task", "deblur",
                        "--blur", "gauss:5:1.5", "--alpha-step", "1.0",
                        "--weights", wpath, "--stride", "16"], capsys)
    assert code == 6
    assert float(kv(err)["composite_bound"]) >= 1.0


def test_restore_sr_doubles_dimensions(tmp_path, capsys):
    y = np.random.default_rng(4).random((1, 8, 8))
    src = tmp_path / "lr.raw"
    dst = tmp_path / "hr.raw"
    write_image(src, y)
    code, _, _ = run(["restore", "--in", str(src), "--out", str(dst),
                      "--task", "sr", "--stride-sr", "2", "--blur",
                      "gauss:3:1.0", "--alpha-step", "0.8", "--identity",
                      "--iters", "50"], capsys)
    assert code == 0
    assert read_image(dst).shape == (1, 16, 16)


def test_restore_divergence_exits_5(tmp_path, capsys):
    # an aggressive step size makes the gradient step strongly expansive even
    # with the identity denoiser (||I - alpha A^T A|| ~ 49), so the iterates
    # overflow to non-finite values well inside the iteration budget
    y = np.random.default_rng(5).random((1, 16, 16))
    src = tmp_path / "y.raw"
    tr = tmp_path / "trace.csv"
    write_image(src, y)
    code, _, err = run(["restore", "--in", str(src), "--out",
                        str(tmp_path / "x.raw"), "--task", "deblur",
                        "--blur", "gauss:3:1.0", "--alpha-step", "50",
                        "--identity", "--trace", str(tr), "--iters", "400",
                        "--allow-expansive"], capsys)
    assert code == 5
    assert tr.exists()


def test_trace_command_writes_only_csv(tmp_path, capsys):
    y = np.random.default_rng(6).random((1, 16, 16))
    src = tmp_path / "y.raw"
    tr = tmp_path / "t.csv"
    write_image(src, y)
    code, _, err = run(["trace", "--in", str(src), "--trace", str(tr),
                        "--task", "deblur", "--blur", "gauss:3:1.0",
                        "--alpha-step", "1.0", "--identity"], capsys)
    assert code == 0
    assert tr.read_text().startswith("iter,residual,datafit,psnr")


def test_certify_prints_layers_and_exits_zero(tmp_path, capsys):
    net = init_network(depth=4, patch=16, channels=1, seed=5)
    wpath = tmp_path / "w.ctrx"
    save_weights(wpath, net)
    code, out, err = run(["certify", "--weights", str(wpath), "--grid",
                          "16x16"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert sum(1 for l in lines if l.startswith("layer=")) == 4
    total = [l for l in lines if l.startswith("total_bound=")]
    assert float(total[0].split("=")[1]) < 1.0
    # bounds on another grid are also certified
    code2, out2, _ = run(["certify", "--weights", str(wpath), "--grid",
                          "8x8"], capsys)
    assert code2 == 0


def test_perturb_chroma_noop_on_gray_rgb(tmp_path, capsys):
    g = np.random.default_rng(7).random((1, 16, 16))
    x = np.repeat(g, 3, axis=0)
    src = tmp_path / "x.raw"
    write_image(src, x)
    code, out, _ = run(["perturb", "--in", str(src), "--perturb", "chroma",
                        "--identity"], capsys)
    assert code == 0
    stats = kv(out)
    assert float(stats["delta_norm"]) <= 1e-10


def test_perturb_awgn_ratio_below_one_for_trained(tmp_path, capsys, toy_weights):
    wpath, _ = toy_weights
    x = synth_patches(1, 32, seed=21)[0]
    src = tmp_path / "x.raw"
    write_image(src, x)
    code, out, _ = run(["perturb", "--in", str(src), "--perturb", "awgn:10",
                        "--weights", wpath, "--stride", "16", "--seed", "3"],
                       capsys)
    assert code == 0
    stats = kv(out)
    assert float(stats["ratio"]) <= 1.0


def test_perturb_zero_delta_reports_nan(tmp_path, capsys):
    x = np.random.default_rng(8).random((1, 8, 8))
    src = tmp_path / "x.raw"
    write_image(src, x)
    code, out, _ = run(["perturb", "--in", str(src), "--perturb", "scale:0",
                        "--identity"], capsys)
    assert code == 0
    assert kv(out)["ratio"] == "nan"


def test_metrics_command(tmp_path, capsys):
    rng = np.random.default_rng(9)
    a = rng.random((1, 16, 16))
    pa = tmp_path / "a.raw"
    pb = tmp_path / "b.raw"
    write_image(pa, a)
    write_image(pb, a)
    code, out, _ = run(["metrics", "--a", str(pa), "--b", str(pb)], capsys)
    assert code == 0
    stats = kv(out)
    assert stats["psnr"] == "inf"
    assert float(stats["ssim"]) == 1.0


def test_train_command_produces_certified_weights(tmp_path, capsys):
    wpath = tmp_path / "trained.ctrx"
    curve = tmp_path / "curve.csv"
    code, _, err = run(["train", "--out", str(wpath), "--depth", "2",
                        "--patch", "16", "--epochs", "2", "--patches", "40",
                        "--lr", "0.02", "--batch", "8", "--curve", str(curve),
                        "--seed", "1"], capsys)
    assert code == 0
    stats = kv(err)
    assert float(stats["certificate"]) < 1.0
    net = load_weights(wpath)
    assert net.depth == 2
    assert curve.read_text().startswith("epoch,train_loss,val_psnr,certificate_bound")


def test_train_from_image_directory(tmp_path, capsys):
    datadir = tmp_path / "data"
    datadir.mkdir()
    imgs = synth_patches(2, 24, seed=31)
    for i, img in enumerate(imgs):
        write_image(datadir / f"img{i}.pgm", img)
    wpath = tmp_path / "w.ctrx"
    code, _, _ = run(["train", "--out", str(wpath), "--data", str(datadir),
                      "--depth", "1", "--patch", "16", "--epochs", "1",
                      "--batch", "8", "--seed", "0"], capsys)
    assert code == 0
    assert load_weights(wpath).patch == 16


def test_seed_env_fallback(tmp_path, capsys, monkeypatch, toy_weights):
    wpath, _ = toy_weights
    x = synth_patches(1, 32, seed=22)[0]
    src = tmp_path / "x.raw"
    write_image(src, x)
    monkeypatch.setenv("CTRX_SEED", "55")
    code1, out1, _ = run(["perturb", "--in", str(src), "--perturb", "awgn:10",
                          "--weights", wpath, "--stride", "16"], capsys)
    code2, out2, _ = run(["perturb", "--in", str(src), "--perturb", "awgn:10",
                          "--weights", wpath, "--stride", "16", "--seed", "55"],
                         capsys)
    assert code1 == code2 == 0
    assert kv(out1) == kv(out2)

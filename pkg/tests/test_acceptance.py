"""Acceptance suite: one test per criterion, each printing a PASS line with
the measured numbers.

Everything runs by default except criterion 9, the full 256x256 benchmark
grid (hours of CPU); enable it with QUATPAINT_RUN_TABLE2=1. Criteria 8 and 9
prefer canonical images dropped into tests/data/ (baboon.png, peppers.png,
256x256); without them they fall back to bundled stand-ins re-cut to
256x256 (the most textured bundled image standing in for baboon, the
smoothest for peppers) at unchanged thresholds.
"""

import os
from pathlib import Path

import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view

import quatpaint.blockconv as bc
from quatpaint.cli import main as cli_main
from quatpaint.imaging import (Mask, RgbImage, apply_mask, decode, encode,
                               gen_random_mask, load_png, save_png)
from quatpaint.layers import (LayerSpec, NetworkSpec, QKernel, init_parameters,
                              network_backward, network_forward,
                              qbn_backward, qbn_forward,
                              qconv2d_backward, qconv2d_forward,
                              qdeconv2d_backward, qdeconv2d_forward,
                              split_activation_backward, split_activation_forward)
from quatpaint.metrics import psnr, ssim
from quatpaint.quat import QTensor, Quaternion, hamilton, modulus
from quatpaint.train import (TrainConfig, compose_output, loss_backward,
                             masked_loss, optimize)

from conftest import check_grad_entries, naive_ssim, scalar_qconv

DATA_DIR = Path(__file__).parent / "data"


def report(criterion: int, detail: str) -> None:
    print(f"\n[criterion {criterion:2d}] PASS — {detail}", flush=True)


# ---------------------------------------------------------------------------
# stand-in images for the image-level criteria
# ---------------------------------------------------------------------------

def _bench_image(slot: str, tmp_factory) -> tuple:
    """(path, label). Prefers tests/data/<slot>.png; falls back to a bundled
    stand-in cut to 256x256."""
    canonical = DATA_DIR / f"{slot}.png"
    if canonical.exists():
        return canonical, slot
    try:
        import skimage.data as skd
        from sklearn.datasets import load_sample_images
    except ImportError:
        pytest.skip(f"no tests/data/{slot}.png and no bundled stand-in source")
    out = tmp_factory.mktemp("bench") / f"{slot}_standin.png"
    if slot == "baboon":
        # most textured bundled image
        sample = load_sample_images()
        idx = [i for i, f in enumerate(sample.filenames) if "china" in f][0]
        arr = sample.images[idx].astype(np.float64)[85:341, 192:448]
        label = "china stand-in"
    else:
        arr = skd.coffee().astype(np.float64)[72:328, 172:428]
        label = "coffee stand-in"
    save_png(RgbImage.from_hwc(arr / 255.0), out)
    return out, label


# ---------------------------------------------------------------------------
# criterion 1: algebra exactness
# ---------------------------------------------------------------------------

def test_c01_algebra_exactness(rng):
    i = Quaternion(0, 1, 0, 0)
    j = Quaternion(0, 0, 1, 0)
    k = Quaternion(0, 0, 0, 1)
    as_t = lambda q: (q.w, q.x, q.y, q.z)
    minus_one = (-1, 0, 0, 0)
    assert as_t(hamilton(i, i)) == minus_one
    assert as_t(hamilton(j, j)) == minus_one
    assert as_t(hamilton(k, k)) == minus_one
    assert as_t(hamilton(hamilton(i, j), k)) == minus_one
    assert as_t(hamilton(i, j)) == as_t(k) and as_t(hamilton(j, i)) == as_t(-k)
    assert as_t(hamilton(j, k)) == as_t(i) and as_t(hamilton(k, j)) == as_t(-i)
    assert as_t(hamilton(k, i)) == as_t(j) and as_t(hamilton(i, k)) == as_t(-j)

    pairs = rng.standard_normal((10_000, 2, 4))
    worst = 0.0
    for p4, q4 in pairs:
        p, q = Quaternion(*p4), Quaternion(*q4)
        ref = modulus(p) * modulus(q)
        worst = max(worst, abs(modulus(hamilton(p, q)) - ref) / max(ref, 1e-300))
    assert worst <= 1e-10
    report(1, f"multiplication table exact; |pq|=|p||q| worst rel err {worst:.2e} "
              f"over 10^4 pairs")


# ---------------------------------------------------------------------------
# criterion 2: convolution oracle equivalence
# ---------------------------------------------------------------------------

def test_c02_convolution_oracle(rng):
    tested, worst = 0, 0.0
    while tested < 100:
        ci = int(rng.integers(1, 5))
        co = int(rng.integers(1, 5))
        k = int(rng.integers(1, 4))
        s = int(rng.integers(1, 3))
        p = int(rng.integers(0, 2))
        h = int(rng.integers(k, 10))
        w = int(rng.integers(k, 10))
        if h + 2 * p < k or w + 2 * p < k:
            continue
        x = rng.standard_normal((4, ci, h, w))
        kern = rng.standard_normal((4, co, ci, k, k))
        got, _ = bc.conv2d_planes(x, kern, None, s, p)
        ref = scalar_qconv(x, kern, s, p)
        scale = max(np.max(np.abs(ref)), 1e-300)
        worst = max(worst, np.max(np.abs(got - ref)) / scale)
        tested += 1
    assert worst <= 1e-12
    report(2, f"{tested} random geometries vs scalar Hamilton loop, "
              f"worst rel err {worst:.2e}")


# ---------------------------------------------------------------------------
# criterion 3: real degeneracy
# ---------------------------------------------------------------------------

def _real_conv_reference(x2d: np.ndarray, k2d: np.ndarray, stride: int,
                         padding: int) -> np.ndarray:
    """Plain real cross-correlation: im2col plus one real GEMM."""
    i, h, w = x2d.shape
    o, _, kh, kw = k2d.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    xp = np.pad(x2d, ((0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    pat = win.transpose(1, 2, 0, 3, 4).reshape(oh * ow, i * kh * kw)
    return (pat @ k2d.reshape(o, -1).T).reshape(oh, ow, o).transpose(2, 0, 1)


def test_c03_real_degeneracy(rng):
    # Exactness here means: imaginary planes bitwise zero (every product has
    # a zero factor), real plane equal to the real reference up to float
    # summation order (<= 1e-13 relative; see decisions ledger).
    worst = 0.0
    for _ in range(25):
        ci, co = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        s = int(rng.integers(1, 3))
        h = int(rng.integers(4, 10))
        x = np.zeros((4, ci, h, h))
        x[0] = rng.standard_normal((ci, h, h))
        k = np.zeros((4, co, ci, 3, 3))
        k[0] = rng.standard_normal((co, ci, 3, 3))
        got, _ = bc.conv2d_planes(x, k, None, s, 1)
        assert np.all(got[1:] == 0.0), "imaginary planes must be bitwise zero"
        ref = _real_conv_reference(x[0], k[0], s, 1)
        worst = max(worst, np.max(np.abs(got[0] - ref)) / np.max(np.abs(ref)))
    assert worst <= 1e-13
    report(3, f"imaginary planes bitwise zero; real plane vs real conv "
              f"reference worst rel err {worst:.2e}")


# ---------------------------------------------------------------------------
# criterion 4: gradient correctness
# ---------------------------------------------------------------------------

def test_c04_gradient_correctness(rng):
    tol = 1e-4
    checked = 0

    def fd_layer(forward, arrs, grads, n=8):
        nonlocal checked
        for arr, grad in zip(arrs, grads):
            def loss():
                return forward()
            check_grad_entries(loss, arr, grad, rng, n_samples=n, tol=tol)
            checked += min(n, arr.size)

    # conv, stride 1 and 2
    for stride in (1, 2):
        x = QTensor(rng.standard_normal((4, 2, 6, 6)))
        kern = QKernel(rng.standard_normal((4, 2, 2, 3, 3)), rng.standard_normal((4, 2)))
        r = rng.standard_normal(qconv2d_forward(x, kern, stride, 1).planes.shape)
        gx, gk, gb = qconv2d_backward(x, kern, QTensor(r), stride, 1)
        fd_layer(lambda: float(np.sum(qconv2d_forward(x, kern, stride, 1).planes * r)),
                 [x.planes, kern.planes, kern.bias], [gx.planes, gk, gb])

    # deconv
    x = QTensor(rng.standard_normal((4, 2, 5, 5)))
    kern = QKernel(rng.standard_normal((4, 2, 2, 3, 3)), rng.standard_normal((4, 2)))
    r = rng.standard_normal(qdeconv2d_forward(x, kern, 2, 1, 1).planes.shape)
    gx, gk, gb = qdeconv2d_backward(x, kern, QTensor(r), 2, 1, 1)
    fd_layer(lambda: float(np.sum(qdeconv2d_forward(x, kern, 2, 1, 1).planes * r)),
             [x.planes, kern.planes, kern.bias], [gx.planes, gk, gb])

    # split activations, pre-activations kept away from kinks
    for name in ("leaky_relu", "relu", "sigmoid", "tanh"):
        x = QTensor(rng.standard_normal((4, 1, 5, 5)))
        x.planes[np.abs(x.planes) < 1e-3] += 0.5
        r = rng.standard_normal(x.planes.shape)
        g = split_activation_backward(x, name, QTensor(r), slope=0.2)
        fd_layer(lambda: float(np.sum(split_activation_forward(x, name, 0.2).planes * r)),
                 [x.planes], [g.planes])

    # QBN
    x = QTensor(rng.standard_normal((4, 1, 4, 4)))
    scale = rng.standard_normal((4, 1))
    shift = rng.standard_normal((4, 1))
    r = rng.standard_normal(x.planes.shape)
    gx, gs, gb = qbn_backward(x, scale, shift, QTensor(r))
    fd_layer(lambda: float(np.sum(qbn_forward(x, scale, shift).planes * r)),
             [x.planes, scale, shift], [gx.planes, gs, gb])

    # end-to-end 2-stage network on 16x16
    spec = NetworkSpec(stages=[
        LayerSpec("qconv", 3, 3, 2),
        LayerSpec("qdeconv", 1, 3, 2, batch_norm=False, activation=None)])
    params = init_parameters(spec, 5)
    z = QTensor(rng.uniform(0, 0.1, (4, 1, 16, 16)))
    target = QTensor.pure(*rng.uniform(0, 1, (3, 1, 16, 16)))
    mask = Mask(rng.random((16, 16)) < 0.6)
    tape = []
    y = network_forward(spec, params, z, tape)
    assert np.min(np.abs(tape[0]["pre"])) > 1e-3, "kink guard"
    g = loss_backward(y, target, mask)
    params.zero_grads()
    network_backward(spec, params, tape, g)

    def net_loss():
        return masked_loss(network_forward(spec, params, z), target, mask)

    for p in params.flat:
        check_grad_entries(net_loss, p.value, p.grad, rng,
                           n_samples=min(8, p.value.size), tol=tol)
        checked += min(8, p.value.size)

    report(4, f"{checked} finite-difference spot checks (step 1e-6) all within "
              f"{tol:g} relative")


# ---------------------------------------------------------------------------
# criterion 5: quarter-parameter invariant
# ---------------------------------------------------------------------------

def test_c05_quarter_parameter():
    c_in, c_out, k = 64, 64, 3
    quat_body = QKernel.zeros(c_out, c_in, k).body_weight_count
    real_body = (4 * c_out) * (4 * c_in) * k * k
    assert 4 * quat_body == real_body
    assert quat_body == 147_456
    report(5, f"quaternion body {quat_body} == 1/4 of real body {real_body} "
              f"(exact integer ratio)")


# ---------------------------------------------------------------------------
# criterion 6: composition contract
# ---------------------------------------------------------------------------

def test_c06_composition_bitwise(rng):
    # random instances
    for _ in range(20):
        q = QTensor(rng.standard_normal((4, 1, 8, 8)))
        x = QTensor(rng.standard_normal((4, 1, 8, 8)))
        m = rng.random((8, 8)) < rng.random()
        out = compose_output(q, x, Mask(m))
        assert np.array_equal(out.planes[:, :, m], q.planes[:, :, m])
        assert np.array_equal(out.planes[:, :, ~m], x.planes[:, :, ~m])

    # and on a genuine optimization run
    img = RgbImage(rng.uniform(0, 1, (3, 16, 16)))
    mask = gen_random_mask(16, 16, 0.5, seed=8)
    q_obs = apply_mask(encode(img), mask)
    spec = NetworkSpec(stages=[
        LayerSpec("qconv", 4, 3, 2),
        LayerSpec("qdeconv", 1, 3, 2, batch_norm=False, activation=None)])
    x_opt, _ = optimize(q_obs, mask, spec, TrainConfig(iterations=2, seed=1,
                                                       log_interval=0))
    out = compose_output(q_obs, x_opt, mask)
    assert np.array_equal(out.planes[:, :, mask.data], q_obs.planes[:, :, mask.data])
    report(6, "composed output equals the observation bitwise on every "
              "observed pixel (random instances + live run)")


# ---------------------------------------------------------------------------
# criterion 7: metrics oracles
# ---------------------------------------------------------------------------

def test_c07_metrics_oracles(rng):
    a = RgbImage(np.full((3, 32, 32), 0.2))
    b = RgbImage(np.full((3, 32, 32), 0.7))
    val = psnr(a, b)
    assert abs(val - 6.0206) <= 1e-3

    c = RgbImage(rng.uniform(0, 1, (3, 32, 32)))
    assert ssim(c, c) == 1.0

    x = rng.uniform(0, 1, (32, 32))
    y = np.clip(x + 0.15 * rng.standard_normal((32, 32)), 0, 1)
    mine = ssim(RgbImage(np.stack([x, x, x])), RgbImage(np.stack([y, y, y])))
    ref = naive_ssim(x, y)
    assert abs(mine - ref) <= 1e-10
    report(7, f"PSNR(0.5 offset) = {val:.4f} dB; SSIM(a,a) == 1.0 exactly; "
              f"SSIM vs naive reference diff {abs(mine - ref):.2e}")


# ---------------------------------------------------------------------------
# criterion 8: desk-scale descent
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_c08_desk_scale_descent(rng, tmp_path_factory):
    path, label = _bench_image("baboon", tmp_path_factory)
    full = load_png(path)
    crop = RgbImage(full.planes[:, 96:160, 96:160])          # 64x64 crop
    mask = gen_random_mask(64, 64, 0.30, seed=17)
    q_obs = apply_mask(encode(crop), mask)

    baseline = psnr(decode(q_obs), crop)                      # zero-filled
    cfg = TrainConfig(iterations=1000, seed=17, log_interval=0)
    x_opt, trace = optimize(q_obs, mask, NetworkSpec.default(), cfg)
    recovered = psnr(decode(compose_output(q_obs, x_opt, mask)), crop)

    assert recovered >= baseline + 5.0, (recovered, baseline)
    assert trace[-1] < 0.10 * trace[0], (trace[0], trace[-1])
    report(8, f"64x64 crop ({label}), SR=30%, 1000 iters: PSNR "
              f"{baseline:.2f} -> {recovered:.2f} dB (gain "
              f"{recovered - baseline:.2f} >= 5); loss {trace[0]:.1f} -> "
              f"{trace[-1]:.2f} ({100 * trace[-1] / trace[0]:.1f}% < 10%)")


# ---------------------------------------------------------------------------
# criterion 9: benchmark reproduction (gated: hours of CPU)
# ---------------------------------------------------------------------------

@pytest.mark.table2
@pytest.mark.skipif(not os.environ.get("QUATPAINT_RUN_TABLE2"),
                    reason="multi-hour 256x256 benchmark; set QUATPAINT_RUN_TABLE2=1")
@pytest.mark.parametrize("slot,sr,threshold", [("baboon", 0.10, 18.8),
                                               ("peppers", 0.50, 29.5)])
def test_c09_benchmark_reproduction(slot, sr, threshold, tmp_path_factory):
    """Identical protocol to:
    quatpaint inpaint --input <image> --sr <sr> --seed 11 --iters 3000
                      --dtype float32 --gt <image>
    """
    from quatpaint.cli import InpaintJob, MaskSource, _split_seeds
    from quatpaint.train import load_loss_trace

    path, label = _bench_image(slot, tmp_path_factory)
    gt = load_png(path)
    assert gt.height % 16 == 0 and gt.width % 16 == 0

    dtype = os.environ.get("QUATPAINT_ACCEPT_DTYPE", "float32")
    iters = int(os.environ.get("QUATPAINT_ACCEPT_ITERS", "3000"))
    outdir = tmp_path_factory.mktemp(f"table2_{slot}")
    mask_seed, train_seed = _split_seeds(11)

    def run(n_iters):
        job = InpaintJob(
            input_path=str(path),
            output_path=str(outdir / f"{slot}_{n_iters}.png"),
            trace_path=str(outdir / f"{slot}_{n_iters}_trace.csv"),
            manifest_path=str(outdir / f"{slot}_{n_iters}_manifest.json"),
            mask_source=MaskSource("random", sr=sr, seed=mask_seed),
            train=TrainConfig(iterations=n_iters, seed=train_seed,
                              log_interval=500, dtype=dtype),
            user_seed=11,
            ground_truth=str(path),
        )
        manifest = job.run()
        return manifest, load_loss_trace(job.trace_path)

    manifest, trace = run(iters)
    # the 3000-iteration evaluation is only admissible on a plateau
    tail = np.asarray(trace[-500:])
    plateau = abs(tail[-1] - tail[0]) / max(tail[0], 1e-12)
    if iters < 5000 and plateau >= 0.01:
        iters = 5000
        manifest, trace = run(iters)
        tail = np.asarray(trace[-500:])
        plateau = abs(tail[-1] - tail[0]) / max(tail[0], 1e-12)

    got = manifest["metrics"]["psnr_db"]
    assert got >= threshold, f"{label} SR={sr:.0%}: {got:.3f} dB < {threshold}"
    report(9, f"{label} SR={sr:.0%}: PSNR {got:.3f} dB >= {threshold} "
              f"({iters} iters, {dtype}, tail change {plateau:.2%}, "
              f"SSIM {manifest['metrics']['ssim']:.3f})")


# ---------------------------------------------------------------------------
# criterion 10: determinism
# ---------------------------------------------------------------------------

def test_c10_determinism(tmp_path, rng):
    img = tmp_path / "det.png"
    save_png(RgbImage(rng.uniform(0.1, 0.9, (3, 32, 32))), img)
    args = ["--quiet", "inpaint", "--input", str(img), "--sr", "0.4",
            "--seed", "21", "--iters", "15"]
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert cli_main(args + ["--outdir", str(out_a)]) == 0
    assert cli_main(args + ["--outdir", str(out_b)]) == 0
    png_a = (out_a / "det_inpainted.png").read_bytes()
    png_b = (out_b / "det_inpainted.png").read_bytes()
    trace_a = (out_a / "det_trace.csv").read_bytes()
    trace_b = (out_b / "det_trace.csv").read_bytes()
    assert png_a == png_b and trace_a == trace_b
    report(10, f"two deterministic runs: output PNGs ({len(png_a)} bytes) and "
               f"loss traces byte-identical")

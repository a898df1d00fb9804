"""End-to-end acceptance suite.

One test per release criterion, each printing a PASS line with the measured
value next to its threshold (run with ``pytest -s tests/test_acceptance.py``
to see them). Tolerances are fixed here, not tuned at runtime.
"""

import math
import time

import numpy as np
import pytest
from conftest import (
    brute_force_auroc,
    make_random_model,
    numerical_jacobian_logdet,
)

from flowood.cli import main as cli
from flowood.features import SyntheticSpec, generate_synthetic, l2_normalize
from flowood.flow import TrainConfig, train
from flowood.metrics import auroc, tolerance, uniformity
from flowood.numerics import finite_diff_check
from test_flow import _noisy_actnorm, _noisy_coupling, _noisy_linear, quadrature_integral


def run_cli(*argv):
    code = cli([str(a) for a in argv])
    assert code == 0, f"command failed: {argv}"


def read_history(path):
    rows = {}
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,step,train_nll,val_nll,ood_nll,auroc"
    for line in lines[1:]:
        epoch, step, train_nll, val_nll, ood_nll, area = line.split(",")
        rows[int(epoch)] = {
            "train_nll": float(train_nll),
            "val_nll": float(val_nll),
            "ood_nll": float(ood_nll) if ood_nll else None,
            "auroc": float(area) if area else None,
        }
    return rows


def test_invertibility_across_scales():
    """Round trip under 1e-4 for blocks in {2,10} x D in {4,64,512}, 1000 inputs, <30 s."""
    start = time.monotonic()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for blocks in (2, 10):
        for dim in (4, 64, 512):
            model = make_random_model(dim, blocks, hidden_width=2048, seed=blocks * 1000 + dim)
            x = rng.standard_normal((1000, dim)).astype(np.float32)
            z, _ = model.forward(x)
            err = float(np.abs(model.inverse(z) - x).max())
            assert err < 1e-4, f"blocks={blocks} D={dim}: round-trip error {err}"
            worst = max(worst, err)
    elapsed = time.monotonic() - start
    assert elapsed < 30.0, f"invertibility sweep took {elapsed:.1f}s"
    print(f"PASS invertibility: worst round-trip {worst:.2e} < 1e-4 in {elapsed:.1f}s")


def test_logdet_exactness_against_numerical_jacobian():
    """Analytic log-det vs finite-difference Jacobian: rel err < 1e-3, D <= 8."""
    rng = np.random.default_rng(5)
    worst = 0.0
    for factory in (_noisy_actnorm, _noisy_linear, _noisy_coupling):
        for dim in (4, 7, 8):
            layer = factory(dim, rng)
            x0 = rng.standard_normal(dim)
            _, ld, _ = layer.forward(x0[None, :])
            numeric = numerical_jacobian_logdet(lambda a: layer.forward(a)[0], x0)
            rel = abs(ld[0] - numeric) / (abs(numeric) + 1e-9)
            assert rel < 1e-3, f"{type(layer).__name__} D={dim}: rel err {rel}"
            worst = max(worst, rel)
    for dim in (4, 8):
        model = make_random_model(dim, 3, hidden_width=16, seed=dim, dtype=np.float64,
                                  linear_noise=0.15)
        x0 = np.random.default_rng(dim).standard_normal(dim)
        _, ld = model.forward(x0[None, :])
        numeric = numerical_jacobian_logdet(lambda a: model.forward(a)[0], x0)
        rel = abs(ld[0] - numeric) / (abs(numeric) + 1e-9)
        assert rel < 1e-3, f"full stack D={dim}: rel err {rel}"
        worst = max(worst, rel)
    print(f"PASS log-det exactness: worst rel err {worst:.2e} < 1e-3")


def test_gradient_correctness_d8_two_blocks():
    """Mean-NLL gradients vs 64-bit central differences: max rel err < 1e-4."""
    model = make_random_model(8, 2, hidden_width=12, seed=31, dtype=np.float64,
                              linear_noise=0.1)
    rng = np.random.default_rng(8)
    x = rng.standard_normal((10, 8))
    model.zero_grad()
    model.nll_backward(x)
    named = model.parameters()
    flat_p = np.concatenate([p.ravel() for _, p, _ in named])
    flat_g = np.concatenate([g.ravel() for _, _, g in named])

    def f(theta):
        offset = 0
        for _, p, _ in named:
            p[...] = theta[offset : offset + p.size].reshape(p.shape)
            offset += p.size
        return -float(np.mean(model.log_prob(x)))

    err = finite_diff_check(f, flat_p.copy(), flat_g, h=1e-5)
    assert err < 1e-4, f"gradient rel err {err}"
    print(f"PASS gradient correctness: max rel err {err:.2e} < 1e-4 ({flat_p.size} params)")


def test_density_oracle_2d_standard_normal():
    """Val NLL within 0.1 nat of 1.41894; trained density integrates to 1 +- 0.02."""
    rng = np.random.default_rng(42)
    data = rng.standard_normal((55_000, 2)).astype(np.float32)
    config = TrainConfig(blocks=4, hidden_width=32, learning_rate=1e-3, epochs=30,
                         batch_size=512, seed=1, normalize_features=False, eval_every=10)
    model, history = train(data[:50_000], data[50_000:], None, config)
    val_nll = history.entries[-1].val_nll
    assert abs(val_nll - 1.41894) < 0.1, f"val NLL {val_nll}"
    integral = quadrature_integral(model)
    assert abs(integral - 1.0) < 0.02, f"density integral {integral}"
    print(f"PASS density oracle: val NLL {val_nll:.5f} (target 1.41894 +- 0.1), "
          f"integral {integral:.5f} (1 +- 0.02)")


def test_auroc_matches_brute_force_pair_counting():
    """Rank-based AUROC == O(N^2) oracle within 1e-12, ties included, N <= 2000."""
    rng = np.random.default_rng(3)
    worst = 0.0
    for n_id, n_ood in ((1, 1), (10, 25), (137, 400), (2000, 2000)):
        id_scores = np.round(rng.standard_normal(n_id), 1)
        ood_scores = np.round(rng.standard_normal(n_ood) - 0.2, 1)
        gap = abs(auroc(id_scores, ood_scores) - brute_force_auroc(id_scores, ood_scores))
        assert gap < 1e-12, f"N=({n_id},{n_ood}): |fast - brute| = {gap}"
        worst = max(worst, gap)
    print(f"PASS auroc oracle equivalence: worst |fast - brute| {worst:.1e} < 1e-12")


def test_synthetic_ood_separation(tmp_path):
    """Generator defaults + 1 epoch normalized: AUROC >= 0.95; with large norm
    spread, normalized beats unnormalized by >= 0.05."""
    bench = tmp_path / "bench"
    run_cli("synth", "--out", bench)  # all generator defaults
    run_cli("train", "--features", bench / "id_train", "--val", bench / "id_val",
            "--ood-probe", bench / "ood", "--out", tmp_path / "model.flow")
    normalized_default = read_history(tmp_path / "history.csv")[1]["auroc"]
    assert normalized_default >= 0.95, f"normalized AUROC {normalized_default}"

    # same geometry but heavy norm spread: feature magnitude confounds density
    wide = tmp_path / "wide"
    run_cli("synth", "--norm-mean", 10, "--norm-std", 5, "--out", wide)
    results = {}
    for mode, flag in (("normalized", "true"), ("unnormalized", "false")):
        out = tmp_path / mode
        run_cli("train", "--features", wide / "id_train", "--val", wide / "id_val",
                "--ood-probe", wide / "ood", "--out", out / "model.flow",
                "--blocks", 10, "--hidden", 256, "--normalize", flag)
        results[mode] = read_history(out / "history.csv")[1]["auroc"]
    gap = results["normalized"] - results["unnormalized"]
    assert gap >= 0.05, f"normalized {results['normalized']} vs unnormalized {results['unnormalized']}"
    print(f"PASS synthetic separation: default AUROC {normalized_default:.4f} >= 0.95; "
          f"normalized {results['normalized']:.4f} vs unnormalized "
          f"{results['unnormalized']:.4f} (gap {gap:.3f} >= 0.05)")


def test_under_training_instrumentation(tmp_path):
    """500-epoch probe run: complete per-epoch history; OOD NLL lower at 500 than at 1."""
    bench = tmp_path / "overlap"
    run_cli("synth", "--dim", 8, "--id-clusters", 20, "--ood-clusters", 10,
            "--per-cluster", 100, "--spread", 0.4, "--seed", 3, "--out", bench)
    out = tmp_path / "run"
    run_cli("train", "--features", bench / "id_train", "--val", bench / "id_val",
            "--ood-probe", bench / "ood", "--out", out / "model.flow",
            "--epochs", 500, "--eval-every", 1, "--blocks", 4, "--hidden", 64,
            "--lr", 1e-4)
    rows = read_history(out / "history.csv")
    assert sorted(rows) == list(range(501)), "history must cover epochs 0..500"
    for epoch, row in rows.items():
        assert row["ood_nll"] is not None and row["auroc"] is not None, f"epoch {epoch} incomplete"
    first, last = rows[1]["ood_nll"], rows[500]["ood_nll"]
    assert last < first, f"OOD NLL should fall during training: epoch1 {first}, epoch500 {last}"
    print(f"PASS under-training: 501 complete history rows; OOD NLL {first:.4f} -> {last:.4f}")


def test_geometry_metric_hand_cases():
    """Uniformity/tolerance match 4-point brute-force cases; tolerance rises as spread falls."""
    antipodal = np.array([[1.0, 0.0], [-1.0, 0.0]])
    value = uniformity(antipodal, t=2.0)
    brute = math.log((2.0 + 2.0 * math.exp(-8.0)) / 4.0)
    assert value == pytest.approx(brute, abs=1e-12)
    assert value == pytest.approx(-0.69298, abs=2.5e-4)

    orthogonal = np.array([[1.0, 0.0], [0.0, 1.0]])
    tol = tolerance(orthogonal, np.array([0, 0]))
    assert tol == 0.5

    sweep = []
    for sigma in (0.2, 0.05, 0.01):
        spec = SyntheticSpec(dim=16, id_clusters=5, ood_clusters=1,
                             samples_per_cluster=50, cluster_spread=sigma, seed=4)
        id_train, _, _ = generate_synthetic(spec)
        z, _ = l2_normalize(id_train.features)
        sweep.append(tolerance(z, id_train.labels))
    assert sweep[0] < sweep[1] < sweep[2], f"tolerance sweep not monotone: {sweep}"
    print(f"PASS geometry metrics: antipodal {value:.5f} (~-0.69298), orthogonal 0.5, "
          f"tolerance sweep {[round(v, 4) for v in sweep]}")


def test_byte_identical_reruns(tmp_path):
    """Identical configs give byte-identical synthetic data, models, and scores."""
    digests = []
    for name in ("run1", "run2"):
        root = tmp_path / name
        run_cli("synth", "--dim", 16, "--id-clusters", 4, "--ood-clusters", 2,
                "--per-cluster", 50, "--seed", 11, "--out", root / "data")
        run_cli("train", "--features", root / "data" / "id_train",
                "--val", root / "data" / "id_val", "--out", root / "model.flow",
                "--epochs", 2, "--blocks", 2, "--hidden", 32, "--seed", 5)
        run_cli("score", "--model", root / "model.flow",
                "--features", root / "data" / "id_val", "--method", "fde",
                "--out", root / "scores.npy")
        digests.append((
            (root / "data" / "id_train" / "features.npy").read_bytes(),
            (root / "model.flow").read_bytes(),
            (root / "scores.npy").read_bytes(),
        ))
    assert digests[0][0] == digests[1][0], "synthetic data differs between reruns"
    assert digests[0][1] == digests[1][1], "model bytes differ between reruns"
    assert digests[0][2] == digests[1][2], "score bytes differ between reruns"
    print("PASS determinism: synthetic data, model file, and scores byte-identical across reruns")

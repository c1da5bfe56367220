"""Acceptance gate: one test per release criterion, each printing a PASS/FAIL
line (run with `pytest tests/test_acceptance.py -v -s`). Tolerances and time
budgets are pinned here and not adjusted at runtime."""

import dataclasses
import time

import numpy as np
import pytest

from texturebank.dsift import SiftConfig, dense_sift
from texturebank.encode import EncoderConfig, encode_fv, fisher_statistics, fisher_vector_from_stats
from texturebank.errors import DegenerateImageError
from texturebank.evaluate import average_precision_11pt, class_normalized_accuracy
from texturebank.field import FeatureField
from texturebank.gmm import GmmModel, train_gmm
from texturebank.image import ImagePlane
from texturebank.manifest import read_manifest, split_records
from texturebank.net import Convolution, MaxPool, NetSpec, ReLU, TapPoint, run_net, write_weights_file
from texturebank.pipeline import (
    FeatureCache,
    PipelineConfig,
    predict_records,
    run_layer_sweep,
    train_model,
)
from texturebank.regions import Proposal, paste_proposals
from texturebank.svm import SvmBank, SvmConfig, calibrate, train_svm
from texturebank.synth import SyntheticSpec, generate_dataset

from reference import (
    ap_11pt_bruteforce,
    fisher_vector_fd,
    naive_conv,
    naive_maxpool,
    svm_exact_objective,
)

RAW = EncoderConfig(signed_square_root=False, l2_normalize=False, posterior_floor=0.0)


def report(name: str, ok: bool, detail: str = "") -> None:
    print(f"[acceptance] {name}: {'PASS' if ok else 'FAIL'} {detail}".rstrip(), flush=True)
    assert ok, f"{name}: {detail}"


def random_gmm(rng, k, d):
    return GmmModel(
        weights=rng.dirichlet(np.full(k, 5.0)),
        means=rng.normal(0.0, 1.0, size=(k, d)),
        variances=rng.uniform(0.3, 2.0, size=(k, d)),
    )


def test_c01_fisher_vector_oracle_equivalence():
    rng = np.random.default_rng(1001)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        k = int(rng.integers(1, 4))
        d = int(rng.integers(1, 5))
        n = int(rng.integers(1, 11))
        gmm = random_gmm(rng, k, d)
        x = rng.normal(0.0, 1.5, size=(n, d))
        mine = encode_fv(x, gmm, RAW, dtype=np.float64).values
        ref = fisher_vector_fd(x, gmm.weights, gmm.means, gmm.variances)
        worst = max(worst, float(np.max(np.abs(mine - ref))))
    elapsed = time.perf_counter() - t0
    report(
        "fv-oracle-equivalence",
        worst <= 1e-6 and elapsed < 10.0,
        f"(200 instances, max abs diff {worst:.3e}, {elapsed:.1f}s)",
    )


def test_c02_fisher_vector_dimensionality():
    rng = np.random.default_rng(1002)
    gmm = GmmModel(
        weights=np.full(64, 1.0 / 64),
        means=rng.standard_normal((64, 512)),
        variances=np.ones((64, 512)),
    )
    enc = encode_fv(rng.standard_normal((2, 512)), gmm)
    report("fv-dimensionality", enc.values.size == 65536, f"(K=64, D=512 -> {enc.values.size})")


def test_c03_em_monotonicity_and_recovery():
    t0 = time.perf_counter()
    ok = True
    details = []
    for seed in range(5):
        rng = np.random.default_rng(2000 + seed)
        x = rng.standard_normal((400, 3)) + 2.0 * rng.integers(0, 3, size=(400, 1))
        fit = train_gmm(x, k=3, rng=rng, max_iter=40)
        ll = fit.log_likelihoods
        rel_drop = float(np.min(np.diff(ll) / np.maximum(1.0, np.abs(ll[:-1]))))
        ok &= rel_drop >= -1e-9 and fit.n_reseeded == 0
        details.append(f"{rel_drop:.1e}")
    rng = np.random.default_rng(2100)
    a = rng.normal((0.0, 0.0), 0.5, size=(300, 2))
    b = rng.normal((10.0, 10.0), 0.5, size=(300, 2))
    fit = train_gmm(np.vstack([a, b]), k=2, rng=rng)
    means = fit.model.means[np.argsort(fit.model.means[:, 0])]
    recovery = float(np.max(np.abs(means - np.array([[0.0, 0.0], [10.0, 10.0]]))))
    ok &= recovery < 0.1
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 30.0
    report(
        "em-monotonicity-and-recovery",
        ok,
        f"(worst drop {min(details)}, recovery {recovery:.3f}, {elapsed:.1f}s)",
    )


def _random_net(rng):
    layers = []
    c = int(rng.choice([1, 3]))
    in_channels = c
    for i in range(int(rng.integers(1, 4))):
        oc = int(rng.integers(1, 5))
        k = int(rng.integers(1, 4))
        layers.append(
            Convolution(
                weights=rng.standard_normal((oc, c, k, k)).astype(np.float32),
                biases=rng.standard_normal(oc).astype(np.float32),
                stride=(int(rng.integers(1, 3)),) * 2,
                padding=(int(rng.integers(0, 2)),) * 2,
            )
        )
        c = oc
        if rng.random() < 0.5:
            layers.append(ReLU())
        if rng.random() < 0.3:
            layers.append(MaxPool((2, 2), (2, 2)))
    return NetSpec(tuple(layers)), in_channels


def test_c04_convolution_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    done = 0
    rng = np.random.default_rng(3000)
    while done < 100:
        net, in_c = _random_net(rng)
        size = int(rng.integers(10, 17))
        img = ImagePlane(rng.random((in_c, size, size), dtype=np.float32))
        tap_idx = net.conv_indices()[-1]
        try:
            field = run_net(img, net, TapPoint(tap_idx))
        except DegenerateImageError:
            continue
        x = img.data.astype(np.float64)
        for layer in net.layers[: tap_idx + 1]:
            if isinstance(layer, Convolution):
                x = naive_conv(x, layer.weights, layer.biases, layer.stride, layer.padding)
            elif isinstance(layer, ReLU):
                x = np.maximum(x, 0.0)
            elif isinstance(layer, MaxPool):
                x = naive_maxpool(x, layer.kernel, layer.stride)
        worst = max(worst, float(np.max(np.abs(np.moveaxis(field.data, 2, 0) - x))))
        done += 1
    elapsed = time.perf_counter() - t0
    report(
        "convolution-oracle",
        worst <= 1e-5 and elapsed < 60.0,
        f"(100 nets, max abs diff {worst:.3e}, {elapsed:.1f}s)",
    )


def test_c05_calibration_medians_and_ranking():
    rng = np.random.default_rng(4000)
    worst = 0.0
    rank_ok = True
    for _ in range(50):
        n_pos = int(rng.integers(2, 25))
        n_neg = int(rng.integers(2, 25))
        scores = rng.normal(rng.normal(), 4.0, size=n_pos + n_neg)
        x = scores[:, None]
        y = ["pos"] * n_pos + ["neg"] * n_neg
        bank = SvmBank(
            classes=("pos",), weights=np.array([[1.0]]), biases=np.array([0.0]),
            objectives=(0.0,),
        )
        cal = calibrate(bank, x, y)
        out = x[:, 0] * cal.weights[0, 0] + cal.biases[0]
        worst = max(
            worst,
            abs(float(np.median(out[:n_pos])) - 1.0),
            abs(float(np.median(out[n_pos:])) + 1.0),
        )
        if np.median(scores[:n_pos]) > np.median(scores[n_pos:]):
            rank_ok &= np.array_equal(
                np.argsort(scores, kind="stable"), np.argsort(out, kind="stable")
            )
    report(
        "calibration-medians",
        worst <= 1e-12 and rank_ok,
        f"(50 score sets, max median error {worst:.2e}, ranking preserved {rank_ok})",
    )


def test_c06_svm_objective_oracle():
    rng = np.random.default_rng(5000)
    worst = 0.0
    x4 = np.array([[1.0, 0.0], [0.8, 0.2], [-1.0, 0.0], [-0.7, -0.3]])
    x4 /= np.linalg.norm(x4, axis=1, keepdims=True)
    cases = [(x4, np.array([1.0, 1.0, -1.0, -1.0]), 1.0)]
    for _ in range(7):
        n = int(rng.integers(6, 21))
        d = int(rng.integers(1, 4))
        x = rng.standard_normal((n, d))
        x /= np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-9)
        y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        if np.all(y == y[0]):
            y[0] = -y[0]
        cases.append((x, y, float(rng.choice([0.5, 1.0, 5.0]))))
    for x, y, c in cases:
        labels = ["p" if v > 0 else "n" for v in y]
        bank = train_svm(x, labels, SvmConfig(c=c, max_epochs=20000, tol=1e-9))
        mine = bank.objectives[bank.classes.index("p")]
        exact = svm_exact_objective(x, y, c)
        worst = max(worst, abs(mine - exact) / max(1.0, abs(exact)))
    report("svm-objective-oracle", worst <= 1e-3, f"(8 toys, worst rel diff {worst:.2e})")


def test_c07_map_oracle():
    rng = np.random.default_rng(6000)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        scores = rng.normal(size=n)
        if rng.random() < 0.25:
            scores = np.round(scores * 2) / 2  # ties
        positives = rng.random(n) < 0.35
        if not positives.any():
            positives[int(rng.integers(n))] = True
        mine = average_precision_11pt(scores, positives)
        ref = ap_11pt_bruteforce(scores, positives)
        worst = max(worst, abs(mine - ref))
    expect = (6.0 + 10.0 / 3.0) / 11.0
    worked = average_precision_11pt(
        np.array([0.9, 0.8, 0.7]), np.array([True, False, True])
    )
    report(
        "map11-oracle",
        worst <= 1e-12 and abs(worked - expect) <= 1e-12,
        f"(1000 lists, worst diff {worst:.1e}; worked example {worked:.6f})",
    )


def test_c08_region_pooling_identity_and_additivity():
    rng = np.random.default_rng(7000)
    # bit-identical whole-image pooling through a trivial full mask
    gmm = random_gmm(rng, 3, 2)
    field = FeatureField(
        data=rng.standard_normal((5, 6, 2)).astype(np.float32), stride=3.0, offset=(1.0, 1.0)
    )
    full = encode_fv([field], gmm, RAW, dtype=np.float64).values
    masked = encode_fv([field], gmm, RAW, mask=np.ones((18, 20), bool), dtype=np.float64).values
    identical = np.array_equal(full, masked)

    # exact additivity: integer descriptors + far-apart components give
    # integer-valued accumulators, so partition sums are bit-exact
    gmm_i = GmmModel(
        weights=[0.5, 0.5],
        means=[[0.0, 0.0], [100.0, 100.0]],
        variances=[[1.0, 1.0], [1.0, 1.0]],
    )
    exact_ok = True
    for _ in range(20):
        data = rng.integers(-3, 4, size=(4, 4, 2)).astype(np.float32)
        data[2:] += 100
        f = FeatureField(data=data, stride=4.0, offset=(1.5, 1.5))
        mask_a = rng.random((16, 16)) < 0.5
        if not mask_a.any() or mask_a.all():
            continue
        try:
            sa = fisher_statistics([f], gmm_i, mask=mask_a, posterior_floor=0.0)
            sb = fisher_statistics([f], gmm_i, mask=~mask_a, posterior_floor=0.0)
        except Exception:
            continue
        whole = fisher_statistics([f], gmm_i, posterior_floor=0.0)
        merged = sa + sb
        exact_ok &= (
            np.array_equal(merged.q_sum, whole.q_sum)
            and np.array_equal(merged.qx_sum, whole.qx_sum)
            and np.array_equal(merged.qxx_sum, whole.qxx_sum)
            and np.array_equal(
                fisher_vector_from_stats(merged, gmm_i),
                fisher_vector_from_stats(whole, gmm_i),
            )
        )
    report(
        "region-pooling",
        identical and exact_ok,
        f"(whole-image bit-identical {identical}, partition additivity exact {exact_ok})",
    )


def test_c09_pasting_determinism_and_worked_example():
    ok = True
    for trial in range(100):
        rng = np.random.default_rng(8000 + trial)
        props = []
        for _ in range(int(rng.integers(2, 9))):
            m = np.zeros((20, 20), bool)
            y0, x0 = rng.integers(0, 14, size=2)
            h, w = rng.integers(2, 7, size=2)
            m[y0 : y0 + h, x0 : x0 + w] = True
            props.append(
                Proposal(mask=m, score=float(rng.normal()), label=int(rng.integers(1, 6)))
            )
        base = paste_proposals(props, 20, 20)
        perm = rng.permutation(len(props))
        shuffled = paste_proposals([props[i] for i in perm], 20, 20)
        ok &= np.array_equal(base.labels, shuffled.labels)

    big = np.zeros((20, 20), bool)
    big[:10, :10] = True
    small = np.zeros((20, 20), bool)
    small[8:10, 8:13] = True
    out = paste_proposals(
        [Proposal(mask=big, score=0.8, label=1), Proposal(mask=small, score=0.9, label=2)],
        20,
        20,
    )
    worked = out.labels[9, 9] == 2 and out.labels[0, 0] == 1
    report("pasting-determinism", ok and worked, f"(100 permuted sets, A/B overlap -> B {worked})")


def test_c10_end_to_end_synthetic_benchmark(tmp_path):
    t0 = time.perf_counter()
    spec = SyntheticSpec(size=64, train=100, test=100, seed=0)
    manifest = generate_dataset(spec, tmp_path / "data")
    records = read_manifest(manifest)
    test = split_records(records, "test")
    truth = [r.labels[0] for r in test]

    config = PipelineConfig(
        extractor="sift",
        encoder="fv",
        sift_step=6,
        sample_budget=30000,
        gmm_max_iter=12,
        svm_max_epochs=100,
        svm_tol=1e-4,
        seed=0,
        threads=2,
    )
    assert config.codebook_size == 256 and config.pca_out_dim == 80
    cache = FeatureCache(tmp_path / "cache", config)
    cache.check_meta()

    model = train_model(records, config, cache=cache)
    _, labels = predict_records(test, model, config, cache=cache)
    acc_fv = class_normalized_accuracy(labels, truth).overall

    bow_cfg = dataclasses.replace(config, encoder="bow")
    bow_model = train_model(records, bow_cfg, cache=cache)
    _, bow_labels = predict_records(test, bow_model, bow_cfg, cache=cache)
    acc_bow = class_normalized_accuracy(bow_labels, truth).overall

    elapsed = time.perf_counter() - t0
    report(
        "end-to-end-benchmark",
        acc_fv >= 0.95 and acc_fv >= acc_bow and elapsed < 300.0,
        f"(fv {acc_fv:.4f}, bow {acc_bow:.4f}, {elapsed:.0f}s)",
    )


def test_c11_layer_sweep_harness(tmp_path):
    rng = np.random.default_rng(9000)
    layers = []
    c = 1
    for i in range(5):
        layers.append(
            Convolution(
                weights=(rng.standard_normal((4, c, 3, 3)) * 0.5).astype(np.float32),
                biases=np.zeros(4, np.float32),
                padding=(1, 1),
            )
        )
        layers.append(ReLU())
        if i in (0, 2):
            layers.append(MaxPool((2, 2), (2, 2)))
        c = 4
    net = NetSpec(tuple(layers))
    weights = tmp_path / "sweep.fbnk"
    write_weights_file(weights, net)

    spec = SyntheticSpec(
        classes=("hstripes", "checker", "noise"), size=32, train=6, test=6, seed=4
    )
    manifest = generate_dataset(spec, tmp_path / "data")
    records = read_manifest(manifest)
    config = PipelineConfig(
        extractor="net",
        weights=str(weights),
        s_min=0.0,
        s_max=0.0,
        k=3,
        pca_dim=0,
        sample_budget=1500,
        gmm_max_iter=6,
        svm_max_epochs=40,
        seed=2,
    )
    results = run_layer_sweep(records, net, config, str(weights))
    names = [n for n, _ in results]
    accs = [a for _, a in results]
    ok = names == ["conv1", "conv2", "conv3", "conv4", "conv5"] and all(
        0.0 <= a <= 1.0 for a in accs
    )
    report(
        "layer-sweep-harness",
        ok,
        "(" + ", ".join(f"{n}={a:.2f}" for n, a in results) + ")",
    )

"""Acceptance checks. Each test prints one ``[ACn] PASS|FAIL`` line with the
measured values and the runtime against its bound."""

import itertools
import math
import threading
import time

import numpy as np
import pytest

from privfan import harness
from privfan.blur import blur_sweep
from privfan.codec import LayeredBitstream, decode_pixels, encode_pixels
from privfan.corpus import synth_corpus
from privfan.layered import encode_tensor
from privfan.metrics import PlateAnnotation, PlatePrediction, cra, levenshtein, mse_psnr
from privfan.pipeline import DEFAULT_BASE_QP, DEFAULT_ENHANCEMENT_QPS, RunConfig, score_corpus, sweep
from privfan.quant import dequantize_group, quantize_group, tile, untile
from privfan.scoring import ChannelScore, PrivacyFanConfig, estimate_mi, partition
from privfan.tensor import FeatureTensor, tensor_from_bytes, tensor_to_bytes
from privfan.transport import StreamServer, send_streams


@pytest.fixture
def report(capsys):
    def emit(n, title, ok, detail, elapsed, bound):
        in_time = elapsed < bound
        status = "PASS" if ok and in_time else "FAIL"
        with capsys.disabled():
            print(f"\n[AC{n}] {status} {title}: {detail} ({elapsed:.1f}s, bound {bound:g}s)")
        assert ok, detail
        assert in_time, f"took {elapsed:.1f}s, bound {bound}s"

    return emit


@pytest.fixture(scope="module")
def harness_corpus():
    return synth_corpus(50, seed=0)


def test_ac1_quantizer_bound(report):
    t0 = time.perf_counter()
    worst, worst32, violations = 0.0, 0.0, 0
    for k in range(10_000):
        rng = np.random.default_rng(k)
        c, h, w = (int(v) for v in rng.integers(1, [9, 17, 17]))
        scale = 10 ** rng.uniform(-3, 3)
        x = (rng.standard_normal((c, h, w)) * scale + rng.uniform(-3, 3) * scale).astype(np.float32)
        codes, p = quantize_group(FeatureTensor(x), range(c))
        bound = (p.max - p.min) / 510
        err = np.abs(dequantize_group(codes, p, np.float64) - x).max()
        # the stored tensor is float32: allow half an ulp of the stored value on top
        deq32 = dequantize_group(codes, p)
        err32 = np.abs(deq32.astype(np.float64) - x) - np.spacing(np.abs(deq32)).astype(np.float64) / 2
        if err > bound or err32.max() > bound:
            violations += 1
        if bound > 0:
            worst = max(worst, err / bound)
            worst32 = max(worst32, err32.max() / bound)
    elapsed = time.perf_counter() - t0
    report(1, "quantizer bound over 10^4 groups", violations == 0,
           f"violations={violations}, worst err/bound={worst:.9f} (float32 storage {worst32:.9f})", elapsed, 10)


def test_ac2_roundtrips(report, tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    checks = {}
    # tiling
    checks["tile"] = all(
        np.array_equal(untile(tile(codes)), codes)
        for codes in (rng.integers(0, 256, (n, h, w), dtype=np.uint8)
                      for n, h, w in rng.integers(1, [300, 20, 20], size=(200, 3)))
    )
    # PFT1 tensor files
    tensors = [FeatureTensor(rng.standard_normal((c, 6, 9)).astype(np.float32)) for c in (1, 5, 16)]
    checks["tensor"] = all(tensor_from_bytes(tensor_to_bytes(t)) == t for t in tensors)
    # container
    scenes = synth_corpus(4, seed=20)
    part = partition([ChannelScore(i, 0, 0, i, i) for i in range(16)], PrivacyFanConfig(base_size=4))
    blobs = [encode_tensor(s.tensor, part, 20, 40).to_bytes() for s in scenes.scenes]
    checks["container"] = all(LayeredBitstream.from_bytes(b).to_bytes() == b for b in blobs)
    # transport
    with StreamServer(tmp_path / "rx") as server:
        th = threading.Thread(target=server.serve, args=(1,), daemon=True)
        th.start()
        send_streams("127.0.0.1", server.port, blobs)
        th.join(20)
    checks["transport"] = [p.read_bytes() for p in server.received] == blobs
    # harness encoder/decoder (float)
    err = max(np.abs(harness.decode_array(s.tensor) - s.image.data[0]).max() for s in scenes.scenes)
    checks["harness"] = err <= 1e-6
    elapsed = time.perf_counter() - t0
    detail = ", ".join(f"{k}={'ok' if v else 'MISMATCH'}" for k, v in checks.items()) + f", harness max err={err:.1e}"
    report(2, "tiling/container/transport/harness round-trips", all(checks.values()), detail, elapsed, 30)


def test_ac3_mi_closed_forms(report):
    t0 = time.perf_counter()
    n = 100_000
    rng = np.random.default_rng(3)
    x = rng.integers(0, 2, n)
    y = np.where(rng.random(n) < 0.1, 1 - x, x)
    bsc = estimate_mi(x.astype(float), y)
    expected_bsc = 1 + 0.1 * math.log2(0.1) + 0.9 * math.log2(0.9)
    indep = estimate_mi(rng.standard_normal(n), rng.integers(0, 4, n))
    y4 = rng.integers(0, 4, n)
    det = estimate_mi(y4 + 0.1 * rng.random(n), y4)
    ok = abs(bsc - 0.5310) <= 0.02 and indep <= 0.01 and abs(det - 2.0) <= 0.02
    elapsed = time.perf_counter() - t0
    report(3, "MI vs closed form", ok,
           f"BSC(0.1)={bsc:.4f} (exact {expected_bsc:.4f}), independent={indep:.4f}, 4-class={det:.4f}", elapsed, 20)


def test_ac4_partition_optimality(report):
    t0 = time.perf_counter()
    failures, cases = 0, 0
    for c in range(1, 13):
        # every subset of C channels as a 0/1 row; row sums give the subset size
        masks = (np.arange(1 << c)[:, None] >> np.arange(c)) & 1
        sizes = masks.sum(axis=1)
        for trial in range(100):
            rng = np.random.default_rng(1000 * c + trial)
            beta = float(rng.uniform(0, 20))
            scores = [ChannelScore.build(i, rng.random(), rng.random(), rng.normal(), beta) for i in range(c)]
            lag = np.array([s.lagrangian for s in scores])
            totals = masks @ lag
            for k in range(1, c + 1):
                part = partition(scores, PrivacyFanConfig(beta=beta, base_size=k))
                got = lag[list(part.base)].sum()
                best = totals[sizes == k].min()
                cases += 1
                if len(part.base) != k or got > best + 1e-9:
                    failures += 1
    elapsed = time.perf_counter() - t0
    report(4, "partition equals exhaustive minimum", failures == 0,
           f"{cases} (C, C', trial) cases, failures={failures}", elapsed, 60)


def _oracle_table(words):
    """Distances for all pairs from the recursive definition, filled by prefix length."""
    index = {w: i for i, w in enumerate(words)}
    n = len(words)
    lengths = np.array([len(w) for w in words])
    parent = np.array([index[w[:-1]] if w else 0 for w in words])
    lastc = np.array([ord(w[-1]) if w else 0 for w in words])
    d = np.zeros((n, n), dtype=np.int16)
    groups = [np.flatnonzero(lengths == k) for k in range(lengths.max() + 1)]
    for i, ga in enumerate(groups):
        for j, gb in enumerate(groups):
            if i == 0 or j == 0:
                d[np.ix_(ga, gb)] = max(i, j)
                continue
            pa, pb = parent[ga], parent[gb]
            sub = d[np.ix_(pa, pb)] + (lastc[ga][:, None] != lastc[gb][None, :])
            dele = d[np.ix_(pa, gb)] + 1
            ins = d[np.ix_(ga, pb)] + 1
            d[np.ix_(ga, gb)] = np.minimum(np.minimum(dele, ins), sub)
    return d


def test_ac5_levenshtein_and_cra(report):
    t0 = time.perf_counter()
    words = ["".join(p) for n in range(8) for p in itertools.product("abc", repeat=n)]
    oracle = _oracle_table(words)
    mismatches = 0
    for i, a in enumerate(words):
        row = oracle[i]
        got = [levenshtein(a, b) for b in words]
        mismatches += int(np.count_nonzero(np.asarray(got) != row))
    box = (0, 0, 40, 20)
    g = [PlateAnnotation("im", box, "ABC123")]
    hand = [
        round(cra(g, {"im": [PlatePrediction(box, "ABC123")]}).cra, 2),
        round(cra(g, {"im": [PlatePrediction(box, "ABC12")]}).cra, 2),
        round(cra(g, {"im": []}).cra, 2),
    ]
    ok = mismatches == 0 and hand == [100.0, 83.33, 0.0]
    elapsed = time.perf_counter() - t0
    report(5, "Levenshtein exhaustive (len<=7 over abc) + CRA hand cases", ok,
           f"{len(words) ** 2} pairs, mismatches={mismatches}, CRA={hand}", elapsed, 60)


def test_ac6_qp_sweep(report, harness_corpus, tmp_path):
    t0 = time.perf_counter()
    cfg = RunConfig(corpus=tmp_path, output=tmp_path, base_size=harness_corpus.meta["base_size"],
                    base_qp=DEFAULT_BASE_QP, enhancement_qps=DEFAULT_ENHANCEMENT_QPS, workers=1)
    part = partition(score_corpus(harness_corpus, cfg.fan_config()), cfg.fan_config())
    rows = {r["qp"]: r for r in sweep(harness_corpus, part, cfg, write_streams=False)}
    elapsed = time.perf_counter() - t0
    qps = sorted(rows)
    mious = [rows[q]["miou"] for q in qps]
    rmses = [rows[q]["rmse"] for q in qps]
    sizes = [rows[q]["total_bytes"] for q in qps]
    ok = (
        all(not rows[q]["error"] for q in qps)
        and rows[40]["cra"] < 10
        and rows[10]["cra"] > 90
        and max(mious) - min(mious) < 0.02
        and max(rmses) - min(rmses) < 0.01
        and all(a > b for a, b in zip(sizes, sizes[1:]))
    )
    table = "; ".join(f"QP{q}: {rows[q]['total_bytes']}B mIoU={rows[q]['miou']:.4f} "
                      f"RMSE={rows[q]['rmse']:.5f} CRA={rows[q]['cra']:.1f}" for q in reversed(qps))
    report(6, f"sweep on 50 harness scenes (base={list(part.base)})", ok, table, elapsed, 300)


def test_ac7_blur_probe(report, harness_corpus):
    t0 = time.perf_counter()
    items = [(s.image_id, s.image, s.annotations) for s in harness_corpus.scenes]
    rows = blur_sweep(items, [0.5, 1, 2, 4], harness.recognize_plates)
    elapsed = time.perf_counter() - t0
    mses = [r["mse"] for r in rows]
    by_mse = sorted(rows, key=lambda r: r["mse"])
    ok = (
        all(a < b for a, b in zip(mses, mses[1:]))
        and all(a["cra"] >= b["cra"] for a, b in zip(by_mse, by_mse[1:]))
        and rows[-1]["cra"] < 20
    )
    table = "; ".join(f"sigma={r['sigma']:g}: MSE={r['mse']:.5f} CRA={r['cra']:.1f}" for r in rows)
    report(7, "blur MSE vs CRA", ok, table, elapsed, 120)


def test_ac8_internal_codec(report):
    t0 = time.perf_counter()
    grid = (4, 10, 20, 30, 40)
    exact, monotone, lines = True, True, []
    mosaics = []
    for seed in range(5):
        img, _, _ = harness.generate_scene(harness.SceneSpec(seed=800 + seed))
        t = harness.encode(img)
        mosaics.append(tile(quantize_group(t, range(t.channels))[0]).pixels)
        rng = np.random.default_rng(seed)
        smooth = np.cumsum(np.cumsum(rng.normal(size=(96, 136)), 0), 1)
        smooth = (smooth - smooth.min()) / (np.ptp(smooth) or 1) * 255
        mosaics.append(np.clip(smooth + rng.normal(0, 4, smooth.shape), 0, 255).astype(np.uint8))
    for px in mosaics:
        psnr = []
        for qp in grid:
            out = decode_pixels(encode_pixels(px, qp), qp, px.shape)
            if qp == 4:
                exact &= np.array_equal(out, px)
            psnr.append(mse_psnr(px / 255.0, out / 255.0)[1])
        monotone &= all(a >= b for a, b in zip(psnr, psnr[1:]))
        lines.append("/".join("inf" if math.isinf(v) else f"{v:.1f}" for v in psnr))
    elapsed = time.perf_counter() - t0
    report(8, f"internal codec, QP grid {grid}", exact and monotone,
           f"QP4 exact={exact}, PSNR monotone={monotone}; PSNR dB per mosaic: {', '.join(lines)}", elapsed, 60)

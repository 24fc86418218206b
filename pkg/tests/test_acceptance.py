"""Acceptance gate: eight end-to-end criteria at frozen tolerances.

Each test registers one PASS/FAIL summary line (printed after the run)
and fails loudly if its criterion is not met.  Criteria 4-8 share one
module-scoped synthetic benchmark: generated dataset -> filter bank ->
boosted model -> proposals -> evaluation report.
"""

import math
import time

import numpy as np
import pytest

from boostprop import dataio, evaluation
from boostprop.boost import (
    WeightedSet,
    adaboost_train,
    quantize_features,
    train_depth2_tree,
)
from boostprop.channels import ChannelStack, ImagePlanes, aggregate, convolve
from boostprop.cli import main
from boostprop.geometry import Box, ScoredBox, iou, nms_greedy
from conftest import ACCEPTANCE_RESULTS, random_image


def record(key, ok, detail):
    ACCEPTANCE_RESULTS[key] = ("PASS" if ok else "FAIL", detail)
    assert ok, f"criterion {key}: {detail}"


def run(*argv):
    rc = main([str(a) for a in argv])
    assert rc == 0, f"command failed ({rc}): {argv}"


# --------------------------------------------------------------------------
# criterion 1: geometry against brute-force oracles


def test_criterion_1_geometry_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)

    grid_a = np.zeros((48, 48), dtype=bool)
    grid_b = np.zeros((48, 48), dtype=bool)
    iou_bad = 0
    for _ in range(10_000):
        ax, ay, bx, by = rng.integers(0, 30, size=4)
        aw, ah, bw, bh = rng.integers(1, 18, size=4)
        grid_a[:] = False
        grid_b[:] = False
        grid_a[ay : ay + ah, ax : ax + aw] = True
        grid_b[by : by + bh, bx : bx + bw] = True
        inter = np.count_nonzero(grid_a & grid_b)
        union = np.count_nonzero(grid_a | grid_b)
        a = Box(float(ax), float(ay), float(ax + aw), float(ay + ah))
        b = Box(float(bx), float(by), float(bx + bw), float(by + bh))
        if iou(a, b) != inter / union:
            iou_bad += 1

    def reference_nms(scored, threshold):
        order = sorted(range(len(scored)), key=lambda i: (-scored[i].score, i))
        kept = []
        for i in order:
            if all(iou(scored[i].box, scored[k].box) <= threshold for k in kept):
                kept.append(i)
        return [scored[i] for i in kept]

    thresholds = (0.3, 0.5, 0.63, 0.9, 1.0)
    nms_bad = 0
    for trial in range(1_000):
        n = int(rng.integers(1, 22))
        scored = []
        for _ in range(n):
            x1, y1 = rng.uniform(0, 30, size=2)
            w, h = rng.uniform(1, 15, size=2)
            scored.append(
                ScoredBox(Box(x1, y1, x1 + w, y1 + h), float(rng.normal()))
            )
        thr = thresholds[trial % len(thresholds)]
        if nms_greedy(scored, thr) != reference_nms(scored, thr):
            nms_bad += 1

    dt = time.perf_counter() - t0
    record(
        "1 geometry-oracles",
        iou_bad == 0 and nms_bad == 0 and dt < 10.0,
        f"iou exact on 10000 lattice pairs ({iou_bad} off), nms matches "
        f"quadratic reference on 1000 sets ({nms_bad} off); {dt:.1f}s (cap 10s)",
    )


# --------------------------------------------------------------------------
# criterion 2: boosting against brute force, separability, loss monotonicity


def _dyadic_weights(rng, n):
    # Multiples of 1/4096 summing to exactly 1: every partial sum is an
    # exact float64, so differently-ordered summations agree bitwise.
    counts = rng.multinomial(4096 - n, np.full(n, 1.0 / n)) + 1
    return counts / 4096.0


def _gini_of_split(x, pos, w, feature, threshold):
    lm = x[:, feature] < threshold
    w_l = float(w[lm].sum())
    w_r = float(w[~lm].sum())
    if w_l <= 0.0 or w_r <= 0.0:
        return np.inf
    tp = float(w[pos].sum())
    lp = float(w[lm & pos].sum())
    ln = w_l - lp
    rp = tp - lp
    rn = w_r - rp
    return 2.0 * lp * ln / w_l + 2.0 * rp * rn / w_r


def _brute_min_impurity(x, pos, w, edges):
    best = np.inf
    for f in range(edges.shape[0]):
        for k in range(edges.shape[1]):
            imp = _gini_of_split(x, pos, w, f, edges[f, k])
            if imp < best:
                best = imp
    return best


def test_criterion_2_boosting_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)

    combos = [(1, 4), (2, 4), (3, 3), (1, 5), (2, 3)]
    split_bad = 0
    for i in range(50):
        n_channels, d = combos[i % len(combos)]
        n = int(rng.integers(20, 201))
        x = rng.integers(0, 12, size=(n, n_channels * d * d)).astype(np.float32)
        y = np.where(rng.random(n) < 0.5, 1, -1).astype(np.int8)
        y[0], y[1] = 1, -1
        wset = WeightedSet(x, y, _dyadic_weights(rng, n), d, n_channels)
        edges = quantize_features(wset, bins=16)
        tree = train_depth2_tree(wset, edges)
        brute = _brute_min_impurity(x, y == 1, wset.weights, edges)
        got = _gini_of_split(x, y == 1, wset.weights, tree.features[0], tree.thresholds[0])
        assert math.isfinite(brute)
        if got != brute:
            split_bad += 1

    separable_bad = 0
    for j in range(10):
        n = 60
        x = rng.normal(size=(n, 8)).astype(np.float32)
        y = np.where(rng.random(n) < 0.5, 1, -1).astype(np.int8)
        y[0], y[1] = 1, -1
        x[y == 1, j % 8] += 6.0
        model = adaboost_train(WeightedSet.uniform(x, y, 2, 2), 5)
        if min(model.meta["train_error"]) != 0.0:
            separable_bad += 1

    # Structured but non-separable set: the exponential loss must never
    # increase across all 2,048 rounds, with zero tolerance.
    n, n_channels, d = 400, 5, 13
    x = rng.normal(size=(n, n_channels * d * d)).astype(np.float32)
    y = np.where(rng.random(n) < 0.45, 1, -1).astype(np.int8)
    x[y == 1, 10] += 1.2
    x[y == 1, 200] -= 0.7
    x[y == 1, 500] += 0.4
    flip = rng.random(n) < 0.08
    y[flip] = -y[flip]
    model = adaboost_train(WeightedSet.uniform(x, y, d, n_channels), 2048)
    losses = np.asarray(model.meta["exp_loss"])
    violations = int((np.diff(losses) > 0).sum())

    dt = time.perf_counter() - t0
    record(
        "2 boosting-oracle",
        split_bad == 0 and separable_bad == 0 and violations == 0 and dt < 60.0,
        f"50/50 root splits equal the brute-force impurity minimum, "
        f"{10 - separable_bad}/10 separable sets reach 0 error in <=5 rounds, "
        f"exp-loss monotone over 2048 rounds ({violations} violations); "
        f"{dt:.0f}s (cap 60s)",
    )


# --------------------------------------------------------------------------
# criterion 3: channel-stack properties


def test_criterion_3_channel_properties(bank_gray):
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)

    a = random_image(rng, 1, 24, 30)
    b = random_image(rng, 1, 24, 30)
    alpha = 0.3
    mix = ImagePlanes(alpha * a.planes + (1 - alpha) * b.planes)
    bias = bank_gray.biases[:, None, None]
    ra = convolve(a, bank_gray, rectify=False).planes - bias
    rb = convolve(b, bank_gray, rectify=False).planes - bias
    rm = convolve(mix, bank_gray, rectify=False).planes - bias
    linear_ok = np.allclose(rm, alpha * ra + (1 - alpha) * rb, rtol=1e-5, atol=1e-7)

    plane = rng.integers(0, 256, size=(2, 16, 24)).astype(np.float64)
    pooled = aggregate(ChannelStack(planes=plane, shrink=1), 4)
    conserve_ok = pooled.planes.sum() * 16.0 == plane.sum()

    # Two crops of one parent, offset horizontally by exactly s pixels:
    # interior cells must shift by one cell, bitwise.
    parent = rng.random((1, 40, 64))
    shrink = 2
    crop_a = ImagePlanes(parent[:, :, 0:48].copy())
    crop_b = ImagePlanes(parent[:, :, shrink : shrink + 48].copy())
    sa = aggregate(convolve(crop_a, bank_gray), shrink)
    sb = aggregate(convolve(crop_b, bank_gray), shrink)
    ring = math.ceil(max(bank_gray.kh, bank_gray.kw) / (2 * shrink)) + 1
    lo, hi = ring, sa.grid_w - ring - 1
    assert hi - lo >= 8
    shift_ok = np.array_equal(
        sb.planes[:, :, lo:hi], sa.planes[:, :, lo + 1 : hi + 1]
    )

    dt = time.perf_counter() - t0
    record(
        "3 channel-properties",
        linear_ok and conserve_ok and shift_ok and dt < 30.0,
        f"pre-rectifier linearity at rtol 1e-5: {linear_ok}, pooling mass "
        f"conserved exactly: {conserve_ok}, 1-cell shift covariance bitwise "
        f"outside ring {ring}: {shift_ok}; {dt:.1f}s (cap 30s)",
    )


# --------------------------------------------------------------------------
# criteria 4-8 share one synthetic benchmark pipeline


@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    train_ds, test_ds = root / "train_ds", root / "test_ds"
    bank = root / "bank.cfbk"
    model = root / "model.json"
    props = root / "props.tsv"
    report = root / "report.csv"

    t0 = time.perf_counter()
    run("demo-synth", "--out-dir", train_ds, "--images", 200, "--seed", 11,
        "--side", 288)
    run("demo-synth", "--out-dir", test_ds, "--images", 100, "--seed", 12,
        "--side", 288)
    run("synth-filters", "--seed", 5, "--count", 8, "--size", 5,
        "--channels", 3, "--out", bank)
    train_args = (
        "train", "--manifest", train_ds / "manifest.tsv", "--bank", bank,
        "--d", 25, "--shrink", 2, "--trees", 512, "--neg", 3000,
        "--bootstrap", 0, "--S", 8, "--R", 3, "--seed", 1,
    )
    run(*train_args, "--threads", 1, "--out-model", model)
    propose_args = (
        "propose", "--manifest", test_ds / "manifest.tsv", "--bank", bank,
        "--model", model, "--S", 8, "--R", 3, "--U", 0.63, "--V", 0.90,
        "--max", 1000, "--stride", 2,
    )
    run(*propose_args, "--threads", 1, "--out", props)
    run("eval", "--proposals", props, "--manifest", test_ds / "manifest.tsv",
        "--out-csv", report)
    elapsed = time.perf_counter() - t0

    curve = {}
    auc_value = None
    for line in report.read_text().splitlines():
        if line.startswith("# auc: "):
            auc_value = float(line.split(": ", 1)[1])
        elif line.startswith("iou,"):
            _, xs, ys = line.split(",")
            curve[round(float(xs), 3)] = float(ys)
    gts = {
        img.stem: dataio.parse_voc_xml(ann.read_bytes()).boxes
        for img, ann in dataio.read_manifest(test_ds / "manifest.tsv").entries
    }
    return {
        "root": root, "test_manifest": test_ds / "manifest.tsv",
        "bank": bank, "model": model, "props": props, "report": report,
        "train_args": train_args, "propose_args": propose_args,
        "elapsed": elapsed, "curve": curve, "auc": auc_value, "gts": gts,
    }


def test_criterion_4_end_to_end_benchmark(benchmark):
    r50 = benchmark["curve"][0.5]
    r65 = benchmark["curve"][0.65]
    r80 = benchmark["curve"][0.8]
    auc_value = benchmark["auc"]
    dt = benchmark["elapsed"]
    record(
        "4 end-to-end-benchmark",
        r50 >= 0.90 and r80 <= r65 <= r50 and 0.0 < auc_value < 1.0
        and dt < 900.0,
        f"recall@0.50={r50:.3f} (need >=0.90), @0.65={r65:.3f}, "
        f"@0.80={r80:.3f} (decaying), AUC={auc_value:.3f} in (0,1); "
        f"pipeline {dt:.0f}s (cap 900s)",
    )


@pytest.fixture(scope="module")
def regression_bundle(benchmark):
    """Jittered ground-truth proposals, fitted and refined both ways."""
    root = benchmark["root"]
    jit = root / "jit.tsv"
    manifest = dataio.read_manifest(benchmark["test_manifest"])
    rng = np.random.default_rng(21)
    by_image = {}
    for img_path, ann_path in manifest.entries:
        ann = dataio.parse_voc_xml(ann_path.read_bytes())
        scored = []
        for g in ann.boxes:
            for _ in range(6):
                dx = rng.uniform(-0.15, 0.15) * g.width
                dy = rng.uniform(-0.15, 0.15) * g.height
                sw = np.exp(rng.uniform(-np.log(1.3), np.log(1.3)))
                sh = np.exp(rng.uniform(-np.log(1.3), np.log(1.3)))
                cx, cy = g.cx + dx, g.cy + dy
                w, h = g.width * sw, g.height * sh
                scored.append(ScoredBox(Box(
                    max(0.0, cx - w / 2), max(0.0, cy - h / 2),
                    min(float(ann.width), cx + w / 2),
                    min(float(ann.height), cy + h / 2),
                ), float(rng.random())))
        by_image[img_path.stem] = scored
    dataio.write_proposals(jit, by_image,
                           header={"tool": "acceptance-jitter", "seed": "21"})

    t0 = time.perf_counter()
    fit_args = (
        "regress-fit", "--proposals", jit,
        "--manifest", benchmark["test_manifest"], "--bank", benchmark["bank"],
        "--d", 13, "--shrink", 2, "--S", 8, "--R", 3,
    )
    refine_args = (
        "refine", "--proposals", jit,
        "--manifest", benchmark["test_manifest"], "--bank", benchmark["bank"],
    )
    reg, ref = root / "reg.json", root / "jit_ref.tsv"
    run(*fit_args, "--lambda", 1000, "--threads", 1, "--out", reg)
    run(*refine_args, "--regressor", reg, "--threads", 1, "--out", ref)
    run(*fit_args, "--lambda", "1e12", "--threads", 1,
        "--out", root / "reg_big.json")
    run(*refine_args, "--regressor", root / "reg_big.json", "--threads", 1,
        "--out", root / "jit_big.tsv")
    elapsed = time.perf_counter() - t0

    def mean_best_iou(path):
        props = dataio.read_proposals(path)
        best = [
            max((iou(p.box, g) for p in props.get(image_id, [])), default=0.0)
            for image_id, boxes in benchmark["gts"].items()
            for g in boxes
        ]
        return float(np.mean(best))

    return {
        "jit": jit, "fit_args": fit_args, "refine_args": refine_args,
        "reg": reg, "ref": ref, "elapsed": elapsed,
        "base_iou": mean_best_iou(jit),
        "refined_iou": mean_best_iou(ref),
        "big_lambda_iou": mean_best_iou(root / "jit_big.tsv"),
    }


def test_criterion_5_regression_efficacy(regression_bundle):
    base = regression_bundle["base_iou"]
    refined = regression_bundle["refined_iou"]
    big_shift = abs(regression_bundle["big_lambda_iou"] - base)
    dt = regression_bundle["elapsed"]
    record(
        "5 regression-efficacy",
        refined > base and big_shift < 0.01 and dt < 120.0,
        f"mean best-IoU {base:.3f} -> {refined:.3f} at lambda=1000 (strict "
        f"increase), lambda=1e12 shifts it {big_shift:.1e} (<0.01); "
        f"{dt:.0f}s (cap 120s)",
    )


def test_criterion_6_evaluation_self_consistency(benchmark):
    gts = benchmark["gts"]
    props = {k: [ScoredBox(b, 1.0) for b in v] for k, v in gts.items()}
    thresholds, recalls = evaluation.recall_curve(props, gts)
    auc_perfect = evaluation.auc(thresholds, recalls)
    auc_linear = evaluation.auc(
        evaluation.default_grid(), np.linspace(1.0, 0.0, 21)
    )
    record(
        "6 evaluation-self-consistency",
        bool(np.all(recalls == 1.0))
        and abs(auc_perfect - 1.0) <= 1e-12
        and abs(auc_linear - 0.5) <= 1e-12,
        f"ground truths as proposals: recall 1.0 at all 21 thresholds, "
        f"AUC off by {abs(auc_perfect - 1.0):.1e}; linear-decay AUC off by "
        f"{abs(auc_linear - 0.5):.1e} (tol 1e-12)",
    )


def test_criterion_7_thread_count_determinism(benchmark, regression_bundle):
    root = benchmark["root"]
    run(*benchmark["train_args"], "--threads", 8,
        "--out-model", root / "model_t8.json")
    run(*benchmark["propose_args"], "--threads", 8,
        "--out", root / "props_t8.tsv")
    run("eval", "--proposals", root / "props_t8.tsv",
        "--manifest", benchmark["test_manifest"],
        "--out-csv", root / "report_t8.csv")
    run(*regression_bundle["fit_args"], "--lambda", 1000, "--threads", 8,
        "--out", root / "reg_t8.json")
    run(*regression_bundle["refine_args"], "--regressor", root / "reg_t8.json",
        "--threads", 8, "--out", root / "ref_t8.tsv")
    pairs = [
        ("model", benchmark["model"], root / "model_t8.json"),
        ("proposals", benchmark["props"], root / "props_t8.tsv"),
        ("report", benchmark["report"], root / "report_t8.csv"),
        ("regressor", regression_bundle["reg"], root / "reg_t8.json"),
        ("refined", regression_bundle["ref"], root / "ref_t8.tsv"),
    ]
    differing = [n for n, a, b in pairs if a.read_bytes() != b.read_bytes()]
    record(
        "7 thread-determinism",
        not differing,
        "model/proposals/report/regressor/refined files byte-identical at "
        "--threads 1 vs 8" if not differing else f"files differ: {differing}",
    )


def test_criterion_8_budget_curve(benchmark):
    props = dataio.read_proposals(benchmark["props"])
    gts = benchmark["gts"]
    budgets = [1, 10, 100, 1000, 10000]
    points = evaluation.recall_vs_count(props, gts, budgets=budgets)
    recalls = [r for _, r in points]
    full = evaluation.recall_at(props, gts, 0.5)
    monotone = all(b >= a for a, b in zip(recalls, recalls[1:]))
    summary = ", ".join(f"{b}:{r:.3f}" for b, r in points)
    record(
        "8 budget-curve",
        monotone and recalls[-1] == full,
        f"recall vs budget [{summary}] non-decreasing; top-10000 equals "
        f"unlimited recall@0.5 ({full:.3f})",
    )

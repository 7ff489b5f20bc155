"""One test per acceptance criterion; each prints a PASS/FAIL line with its measurements."""
import time

import cv2
import numpy as np
import pytest

from lpdr.detection import (PlateCandidate, Rect, count_peaks, extract_contours,
                            extreme_points, reconstruct_rectangle, statistical_filter)
from lpdr.errors import LpdrError, NoPlate
from lpdr.evaluation import bench
from lpdr.imaging import binarize_otsu, text_foreground
from lpdr.pipeline import run_lpdr
from lpdr.recognizer.model import TRANSFER_LAYERS, weights_hash
from lpdr.segmentation import segment_plate, zoa_row_counts
from lpdr.synth.corpus import scene_corpus
from lpdr.synth.fonts import ALPHABET, PLATE_FONTS
from lpdr.synth.plates import PlateSpec, random_plate_spec, render_plate
from lpdr.verification import candidate_score, make_reading, result_json, vote

from gradcheck import layer_type_errors


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return emit


# 1 -------------------------------------------------------------------------------

def test_criterion_1_voting_worked_example(report):
    real = [0.935, 0.941, 0.886, 0.939, 0.859, 0.999]
    false = [0.696, 0.501, 0.868, 0.424, 0.494, 0.568]
    z = np.zeros((30, 100), np.uint8)
    cand = PlateCandidate(Rect(0, 0, 99, 29), z, z, np.zeros(100), 6)
    times = []
    for _ in range(200):
        t = time.perf_counter()
        pr, pf = candidate_score(real), candidate_score(false)
        win = vote([make_reading(cand, zip("FALSE!", false)), make_reading(cand, zip("REAL!!", real))])
        times.append(time.perf_counter() - t)
    ms = float(np.median(times)) * 1e3
    ok = abs(pr - 0.628) <= 1e-3 and abs(pf - 0.036) <= 1e-3 and win.text == "REAL!!" and ms < 1.0
    report(1, ok, f"P_real={pr:.4f} P_false={pf:.4f} winner={win.text} median {ms:.4f} ms")
    assert ok


# 2 -------------------------------------------------------------------------------

def outline_points(rng):
    """Integer points along a rotated rectangle's outline, sometimes broken or two-sided."""
    cx, cy = rng.uniform(40, 160, 2)
    w, h = rng.uniform(8, 120), rng.uniform(4, 40)
    box = cv2.boxPoints(((cx, cy), (w, h), rng.uniform(-30, 30)))
    sides = []
    for i in range(4):
        a, b = box[i], box[(i + 1) % 4]
        k = max(2, int(np.hypot(*(b - a))))
        t = np.linspace(0, 1, k)[:, None]
        sides.append(np.rint(a + t * (b - a)).astype(np.int64))
    kind = rng.integers(3)
    if kind == 1:
        # two opposite borders only
        first = int(rng.integers(2))
        sides = [sides[first], sides[first + 2]]
    pts = np.concatenate(sides)
    if kind == 2:
        # knock out random stretches of the outline
        keep = np.ones(len(pts), bool)
        for _ in range(int(rng.integers(1, 4))):
            s = int(rng.integers(len(pts)))
            keep[s:s + int(rng.integers(1, len(pts) // 3 + 2))] = False
        if keep.sum() >= 2:
            pts = pts[keep]
    return pts, ("convex", "two-border", "broken")[kind]


def test_criterion_2_contour_reconstruction(report):
    rng = np.random.default_rng(2)
    bad, kinds, degenerate = 0, {}, 0
    for _ in range(1000):
        pts, kind = outline_points(rng)
        kinds[kind] = kinds.get(kind, 0) + 1
        want = (pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max())
        if want[0] == want[2] or want[1] == want[3]:
            degenerate += 1
            continue
        r = reconstruct_rectangle(extreme_points(pts))
        bad += (r.left, r.top, r.right, r.bottom) != want
    # the same check through rasterised outlines and border following
    raster_bad = 0
    for _ in range(100):
        img = np.zeros((220, 220), np.uint8)
        box = cv2.boxPoints(((110, 110), tuple(rng.uniform(20, 150, 2)), rng.uniform(-30, 30)))
        cv2.polylines(img, [np.rint(box).astype(np.int32)], True, 255, 1)
        ys, xs = np.nonzero(img)
        r = reconstruct_rectangle(extreme_points(np.concatenate(extract_contours(img))))
        raster_bad += (r.left, r.top, r.right, r.bottom) != (xs.min(), ys.min(), xs.max(), ys.max())
    ok = bad == 0 and raster_bad == 0
    report(2, ok, f"{1000 - degenerate} point sets {kinds}: {bad} mismatches; "
                  f"100 rasterised outlines: {raster_bad} mismatches")
    assert ok


# 3 -------------------------------------------------------------------------------

def exhaustive_peak_count(v, threshold):
    """Count peaks by checking, for every local maximum, the deepest dip on each side.

    A peak's prominence is its height above the higher of the two lowest
    points reached before the signal climbs above the peak (or ends).
    """
    v = list(v)
    n = len(v)
    count = 0
    i = 1
    while i < n - 1:
        j = i
        while j + 1 < n and v[j + 1] == v[i]:
            j += 1
        if v[i - 1] < v[i] and j + 1 < n and v[j + 1] < v[i]:
            left = min(v[k] for k in range(max((m for m in range(i) if v[m] > v[i]), default=-1) + 1,
                                           i + 1))
            right_stop = min((m for m in range(j + 1, n) if v[m] > v[i]), default=n)
            right = min(v[k] for k in range(j, right_stop))
            if v[i] - max(left, right) >= threshold:
                count += 1
        i = j + 1
    return count


def test_criterion_3_peak_filter(report):
    rng = np.random.default_rng(3)
    mism = 0
    for _ in range(10_000):
        n = int(rng.integers(1, 80))
        v = rng.integers(0, int(rng.integers(1, 30)), n)
        mism += count_peaks(v, 3.0) != exhaustive_peak_count(v.tolist(), 3.0)
    z = np.zeros((10, 25), np.uint8)
    plate = PlateCandidate(Rect(0, 0, 24, 9), z, z, np.array([0, 8, 0] * 8 + [0], float), 0)
    dist = PlateCandidate(Rect(0, 0, 6, 9), z[:, :7], z[:, :7], np.array([0, 10, 10, 0, 0, 10, 0.]), 0)
    kept = statistical_filter([dist, plate], 3.0, 6)
    ok = mism == 0 and [c.peak_count for c in kept] == [8]
    report(3, ok, f"10000 vectors, {mism} mismatches; filter kept peak counts "
                  f"{[c.peak_count for c in kept]}")
    assert ok


# 4 -------------------------------------------------------------------------------

def row_iou(a, b):
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]) + 1)
    return inter / ((a[1] - a[0] + 1) + (b[1] - b[0] + 1) - inter)


def pairwise_zoa(b):
    return [sum(1 for x in range(1, b.shape[1]) if (b[y, x] > 0) != (b[y, x - 1] > 0))
            for y in range(b.shape[0])]


def test_criterion_4_zoa_band(report):
    rng = np.random.default_rng(4)
    good, zoa_bad, failures = 0, 0, 0
    for i in range(500):
        n = int(rng.integers(4, 9))
        spec = random_plate_spec(rng, text="".join(rng.choice(list(ALPHABET), n)), max_rotation=0)
        spec = PlateSpec(**{**spec.to_dict(), "border": "fake",
                            "fake_border_frac": float(rng.uniform(0.05, 0.2))})
        img, truth = render_plate(spec, i)
        b = text_foreground(binarize_otsu(img))
        zoa_bad += zoa_row_counts(b).tolist() != pairwise_zoa(b)
        try:
            band = segment_plate(img).band
        except LpdrError:
            failures += 1
            continue
        good += row_iou(band, truth.glyph_rows) >= 0.9
    ok = good / 500 >= 0.95 and zoa_bad == 0
    report(4, ok, f"band row-IoU >= 0.9 on {good}/500 ({good / 5:.1f}%), {failures} failed; "
                  f"ZOA oracle mismatches {zoa_bad}")
    assert ok


# 5 -------------------------------------------------------------------------------

def test_criterion_5_segmentation_count(report):
    rng = np.random.default_rng(5)
    hits = 0
    by_n = {}
    for i in range(500):
        n = 4 + i % 5
        text = "".join(rng.choice(list(ALPHABET), n))
        spec = PlateSpec(text, font=int(rng.integers(len(PLATE_FONTS))),
                         border=str(rng.choice(["none", "thin", "thick"])))
        img, _ = render_plate(spec, i)
        try:
            got = len(segment_plate(img).chars)
        except LpdrError:
            got = -1
        hits += got == n
        by_n.setdefault(n, [0, 0])
        by_n[n][0] += got == n
        by_n[n][1] += 1
    ok = hits / 500 >= 0.98
    report(5, ok, f"exact count on {hits}/500 ({hits / 5:.1f}%); by N {by_n}")
    assert ok


# 6 -------------------------------------------------------------------------------

def test_criterion_6_recognizer_numerics(report, ablation, hybrid_model):
    errs = layer_type_errors()
    imgs = np.random.default_rng(6).integers(0, 256, (1000, 32, 32)).astype(np.uint8)
    p = hybrid_model.classify_batch(imgs)
    norm = float(np.abs(p.sum(1) - 1).max())
    src = ablation.pretrained.model
    frozen_ok = (weights_hash(src.net, TRANSFER_LAYERS) == weights_hash(hybrid_model.net, TRANSFER_LAYERS)
                 and hybrid_model.frozen == TRANSFER_LAYERS)
    ok = max(errs.values()) < 1e-3 and norm <= 1e-5 and (p >= 0).all() and frozen_ok
    report(6, ok, "gradient rel. err " + ", ".join(f"{k} {v:.2e}" for k, v in errs.items())
           + f"; max |sum p - 1| {norm:.2e}; conv1-conv4 hash unchanged: {frozen_ok}")
    assert ok


# 7 -------------------------------------------------------------------------------

def test_criterion_7_ablation_ordering(report, ablation):
    a = ablation.accuracy
    order = ["CNN", "Aug-CNN", "SIFT-CNN", "Hybrid"]
    tol = 0.01
    ordered = all(a[x] <= a[y] + tol for x, y in zip(order, order[1:]))
    minutes = sum(ablation.seconds.values()) / 60
    ok = ordered and a["Hybrid"] >= 0.95 and minutes <= 30
    report(7, ok, ", ".join(f"{k} {a[k]:.4f}" for k in order)
           + f" on {ablation.n_test} test chars; {minutes:.1f} min")
    assert ok


# 8 -------------------------------------------------------------------------------

def test_criterion_8_end_to_end_benchmark(report, hybrid_model):
    scenes = scene_corpus(300, seed=7)
    truths = [{"text": s.text, "rect": s.rect.as_dict()} for s in scenes]
    m, _ = bench([s.image for s in scenes], truths, lambda f: run_lpdr(f, hybrid_model))
    ok = m.precision >= 0.9 and m.recall >= 0.85 and m.recognition_rate >= 0.9 and m.fps >= 30
    report(8, ok, f"precision {m.precision:.3f}, recall {m.recall:.3f}, "
                  f"recognition rate {m.recognition_rate:.3f}, {m.fps:.1f} FPS")
    assert ok


# 9 -------------------------------------------------------------------------------

def _run_all(model, seed):
    out = []
    for sc in scene_corpus(20, seed=seed):
        try:
            out.append(result_json(run_lpdr(sc.image, model).reading))
        except NoPlate:
            out.append("no plate\n")
    return "".join(out).encode()


def test_criterion_9_determinism(report, hybrid_model):
    from lpdr.recognizer.ablation import codebook_for
    from lpdr.recognizer.augment import AugmentConfig
    from lpdr.recognizer.model import HybridModel, model_bytes
    from lpdr.recognizer.train import TrainConfig, train
    from lpdr.synth.corpus import char_corpus, split_indices

    def small_model():
        cs = char_corpus(360, seed=9)
        tr, va, _ = (cs.subset(i) for i in split_indices(cs.labels, 9))
        m = HybridModel.create(codebook_for(tr.images, 9), seed=9)
        return train(m, tr, va, TrainConfig(max_epochs=2, augment=AugmentConfig(), seed=9)).model

    a, b = small_model(), small_model()
    same_model = model_bytes(a) == model_bytes(b)
    same_small = _run_all(a, 11) == _run_all(b, 11)
    first, second = _run_all(hybrid_model, 12), _run_all(hybrid_model, 12)
    ok = same_model and same_small and first == second
    report(9, ok, f"retrained model bytes equal: {same_model}; result JSON equal "
                  f"(retrained {same_small}, trained {first == second}, {len(first)} bytes)")
    assert ok

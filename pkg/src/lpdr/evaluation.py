"""Detection and recognition metrics over a labelled scene corpus, and the throughput bench."""
from __future__ import annotations

import csv
import statistics
import time
from dataclasses import asdict, dataclass
from typing import Sequence

from .detection import Rect, iou
from .errors import EvaluationError, NoPlate

ENCLOSE_TOLERANCE = 3   # pixels a detection may fall short of the truth on each side
WARMUP_FRAMES = 10
BENCH_RUNS = 3


@dataclass(frozen=True)
class Prediction:
    text: str
    rect: Rect
    score: float = 0.0


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    recognition_rate: float
    fps: float
    n_frames: int = 0
    n_detections: int = 0
    n_correct_detections: int = 0
    n_recognized: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def rect_from(d) -> Rect:
    if isinstance(d, Rect):
        return d
    try:
        return Rect(int(d["left"]), int(d["top"]), int(d["right"]), int(d["bottom"]))
    except (KeyError, TypeError, ValueError) as e:
        raise EvaluationError(f"bad rect {d!r}: {e}") from None


def detection_correct(pred: Rect, truth: Rect, tol: int = ENCLOSE_TOLERANCE) -> bool:
    """The box encloses the plate (within ``tol`` px) and IoU is strictly above one half."""
    return pred.encloses(truth, tol) and iou(pred, truth) > 0.5


def ratio(a: int, b: int) -> float:
    return a / b if b else 0.0


def evaluate(truths: Sequence[dict], predictions: Sequence[Prediction | None], fps: float = 0.0,
             tol: int = ENCLOSE_TOLERANCE) -> Metrics:
    """Metrics for aligned truth records ({text, rect}) and per-frame predictions (None = no plate)."""
    if len(truths) != len(predictions):
        raise EvaluationError(f"{len(predictions)} results for {len(truths)} manifest records")
    n_det = n_ok = n_rec = 0
    for t, p in zip(truths, predictions):
        if "rect" not in t or "text" not in t or t["rect"] is None:
            raise EvaluationError(f"manifest record lacks a plate rect or text: {t!r}")
        if p is None:
            continue
        n_det += 1
        if detection_correct(p.rect, rect_from(t["rect"]), tol):
            n_ok += 1
            n_rec += p.text == t["text"]
    return Metrics(ratio(n_ok, n_det), ratio(n_ok, len(truths)), ratio(n_rec, n_ok), fps,
                   len(truths), n_det, n_ok, n_rec)


@dataclass
class FrameRecord:
    index: int
    path: str
    truth: str
    text: str
    score: float
    detected: bool
    correct_detection: bool
    recognized: bool
    elapsed_ms: float
    rect: dict | None = None


def bench(frames, truths: Sequence[dict], run, warmup: int = WARMUP_FRAMES, runs: int = BENCH_RUNS,
          tol: int = ENCLOSE_TOLERANCE):
    """Time ``run(frame) -> RecognitionResult`` over preloaded frames.

    A few frames are processed untimed first.  The corpus is then timed
    ``runs`` times and FPS comes from the median pass; predictions come from
    the first pass.  Returns (metrics, per-frame records).
    """
    if len(frames) != len(truths):
        raise EvaluationError(f"{len(frames)} frames for {len(truths)} manifest records")
    if not frames:
        raise EvaluationError("empty corpus")
    for f in frames[:warmup]:
        _safe(run, f)
    totals = []
    preds: list[Prediction | None] = []
    times: list[float] = []
    for r in range(runs):
        start = time.perf_counter()
        for f in frames:
            t = time.perf_counter()
            res = _safe(run, f)
            if r == 0:
                times.append((time.perf_counter() - t) * 1e3)
                preds.append(None if res is None else Prediction(res.plate_text, res.rect, res.score))
        totals.append(time.perf_counter() - start)
    fps = len(frames) / statistics.median(totals)
    metrics = evaluate(truths, preds, fps, tol)
    records = []
    for i, (t, p, ms) in enumerate(zip(truths, preds, times)):
        ok = p is not None and detection_correct(p.rect, rect_from(t["rect"]), tol)
        records.append(FrameRecord(i, t.get("path", ""), t["text"], p.text if p else "",
                                   p.score if p else 0.0, p is not None, ok,
                                   ok and p.text == t["text"], ms, p.rect.as_dict() if p else None))
    return metrics, records


def _safe(run, frame):
    try:
        return run(frame)
    except NoPlate:
        return None


def write_frames_csv(path, records: Sequence[FrameRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "path", "truth", "text", "score", "detected", "correct_detection",
                    "recognized", "elapsed_ms"])
        for r in records:
            w.writerow([r.index, r.path, r.truth, r.text, f"{r.score:.6f}", int(r.detected),
                        int(r.correct_detection), int(r.recognized), f"{r.elapsed_ms:.3f}"])

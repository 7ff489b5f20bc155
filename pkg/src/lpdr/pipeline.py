"""Full frame-to-text pipeline: edges, candidates, peak filter, segmentation, recognition, vote."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .detection import DetectionConfig, PlateCandidate, Rect, candidate_rects, make_candidate, \
    statistical_filter
from .errors import LpdrError, NoPlate
from .imaging import to_grayscale
from .recognizer.model import HybridModel
from .segmentation import PlateSegmentation, SegmentationConfig, segment_plate
from .verification import CandidateReading, make_reading, vote


@dataclass(frozen=True)
class PipelineConfig:
    detection: DetectionConfig = DetectionConfig()
    segmentation: SegmentationConfig = SegmentationConfig()
    max_candidates: int = 3      # candidates that segment cleanly and go on to recognition
    max_attempts: int = 8        # peak-ranked candidates tried for segmentation


@dataclass
class RecognitionResult:
    reading: CandidateReading
    readings: list[CandidateReading]
    elapsed_ms: float
    stages_ms: dict[str, float] = field(default_factory=dict)

    @property
    def plate_text(self) -> str:
        return self.reading.text

    @property
    def rect(self) -> Rect:
        return self.reading.candidate.rect

    @property
    def score(self) -> float:
        return self.reading.score


@dataclass
class FrameTrace:
    """Everything a debug dump needs, filled in as the stages run."""

    rects: list[Rect] = field(default_factory=list)
    candidates: list[PlateCandidate] = field(default_factory=list)
    segmentations: list[tuple[PlateCandidate, PlateSegmentation]] = field(default_factory=list)
    readings: list[CandidateReading] = field(default_factory=list)
    stages_ms: dict[str, float] = field(default_factory=dict)


def _segmented(cands, cfg: PipelineConfig):
    out = []
    for cand in cands[:cfg.max_attempts]:
        try:
            seg = segment_plate(cand.crop, cfg.segmentation)
        except LpdrError:
            continue
        if cfg.segmentation.min_chars <= len(seg.chars) <= cfg.segmentation.max_chars:
            out.append((cand, seg))
            if len(out) == cfg.max_candidates:
                break
    return out


def run_lpdr(image, model: HybridModel, cfg: PipelineConfig = PipelineConfig(),
             trace: FrameTrace | None = None) -> RecognitionResult:
    """Read the most plate-like text in ``image``; raises NoPlate when nothing survives."""
    trace = trace if trace is not None else FrameTrace()
    t0 = time.perf_counter()
    gray = to_grayscale(image)
    rects = candidate_rects(gray, cfg.detection)
    cands = [make_candidate(gray, r, cfg.detection.peak_threshold) for r in rects]
    cands = statistical_filter(cands, cfg.detection.peak_threshold, cfg.detection.min_peaks)
    t1 = time.perf_counter()
    segs = _segmented(cands, cfg)
    t2 = time.perf_counter()
    readings = []
    if segs:
        images = np.stack([c.image for _, seg in segs for c in seg.chars])
        probs = model.classify_batch(images)
        best = probs.argmax(1)
        pos = 0
        for cand, seg in segs:
            n = len(seg.chars)
            chars = [(model.classes[best[i]], float(probs[i, best[i]])) for i in range(pos, pos + n)]
            readings.append(make_reading(cand, chars))
            pos += n
    t3 = time.perf_counter()
    trace.rects, trace.candidates, trace.segmentations, trace.readings = rects, cands, segs, readings
    trace.stages_ms = {"detect": (t1 - t0) * 1e3, "segment": (t2 - t1) * 1e3,
                       "recognize": (t3 - t2) * 1e3}
    if not readings:
        raise NoPlate("no candidate survived detection and segmentation")
    winner = vote(readings)
    elapsed = (time.perf_counter() - t0) * 1e3
    return RecognitionResult(winner, readings, elapsed, dict(trace.stages_ms))

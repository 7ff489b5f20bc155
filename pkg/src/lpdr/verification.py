"""Second verification phase: score candidates by their character confidences and vote."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

from .detection import PlateCandidate
from .errors import NoPlate, ScoreError


def candidate_score(probs: Sequence[float]) -> float:
    """Product of the per-character probabilities, summed in log space."""
    probs = [float(p) for p in probs]
    if not probs:
        raise ScoreError("cannot score a reading without characters")
    for p in probs:
        if not 0.0 <= p <= 1.0:
            raise ScoreError(f"probability {p} outside [0, 1]")
    if min(probs) == 0.0:
        return 0.0
    return math.exp(math.fsum(math.log(p) for p in probs))


@dataclass(frozen=True)
class CandidateReading:
    candidate: PlateCandidate
    chars: tuple[tuple[str, float], ...]
    score: float

    @property
    def text(self) -> str:
        return "".join(label for label, _ in self.chars)

    def rank_key(self) -> tuple:
        return (self.score, self.candidate.peak_count, self.candidate.area)


def make_reading(candidate: PlateCandidate, chars: Sequence[tuple[str, float]]) -> CandidateReading:
    chars = tuple((str(label), float(p)) for label, p in chars)
    return CandidateReading(candidate, chars, candidate_score([p for _, p in chars]))


def vote(readings: Sequence[CandidateReading]) -> CandidateReading:
    """Highest score wins; ties go to more peaks, then larger area, then the earlier reading."""
    if not readings:
        raise NoPlate("no candidate produced a reading")
    best = readings[0]
    for r in readings[1:]:
        if r.rank_key() > best.rank_key():
            best = r
    return best


def result_dict(reading: CandidateReading) -> dict:
    return {
        "plate_text": reading.text,
        "score": reading.score,
        "rect": reading.candidate.rect.as_dict(),
        "chars": [{"label": label, "prob": p} for label, p in reading.chars],
    }


def result_json(reading: CandidateReading) -> str:
    return json.dumps(result_dict(reading), sort_keys=True, indent=2) + "\n"

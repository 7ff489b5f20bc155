"""Visual-word codebook (k-means) and normalised bag-of-words histograms."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import InsufficientData, ModelError

N_WORDS = 256
MAX_ITER = 100
_MAGIC = b"LPCB"


@dataclass(frozen=True, eq=False)
class Codebook:
    """``k x 128`` cluster centres, stored as float32 so a file round trip is exact."""

    centers: np.ndarray
    seed: int
    objective: tuple = field(default=(), repr=False)   # per-iteration sum of squared distances

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    def to_bytes(self) -> bytes:
        c = np.ascontiguousarray(self.centers, dtype="<f4")
        return _MAGIC + struct.pack("<qII", self.seed, *c.shape) + c.tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Codebook":
        head = 4 + struct.calcsize("<qII")
        if len(buf) < head or buf[:4] != _MAGIC:
            raise ModelError("not a codebook blob")
        seed, k, d = struct.unpack_from("<qII", buf, 4)
        if len(buf) != head + 4 * k * d:
            raise ModelError(f"codebook blob has {len(buf)} bytes, expected {head + 4 * k * d}")
        c = np.frombuffer(buf, dtype="<f4", offset=head).reshape(k, d).astype(np.float32)
        return cls(c, int(seed))


def _as_matrix(descriptors, dim: int | None = None) -> np.ndarray:
    x = np.asarray(descriptors, dtype=np.float64)
    if x.size == 0:
        return np.zeros((0, dim or 128))
    return x.reshape(len(x), -1)


def sq_distances(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Squared L2 distances ``(n, k)``, clipped at zero against rounding."""
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def assign(x, centers) -> np.ndarray:
    """Index of the nearest centre for every row (ties go to the lowest index)."""
    x = _as_matrix(x)
    if not len(x):
        return np.zeros(0, dtype=np.int64)
    return np.argmin(sq_distances(x, np.asarray(centers, dtype=np.float64)), axis=1)


def kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each new centre drawn with probability proportional to D^2."""
    n = len(x)
    idx = [int(rng.integers(n))]
    d2 = ((x - x[idx[0]]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            i = int(rng.choice(n, p=d2 / total))
        else:
            # every point already coincides with a centre; fall back to unused rows
            free = np.setdiff1d(np.arange(n), idx)
            i = int(free[rng.integers(len(free))])
        idx.append(i)
        d2 = np.minimum(d2, ((x - x[i]) ** 2).sum(1))
    return x[idx].copy()


def kmeans(x, k: int, seed: int = 0, max_iter: int = MAX_ITER):
    """Lloyd iterations from k-means++ seeds.

    Stops when the assignment no longer changes or after ``max_iter``
    rounds.  A cluster left empty takes the point currently farthest from
    its own centre.  Returns (centres, labels, objective per iteration).
    """
    x = _as_matrix(x)
    if len(x) < k:
        raise InsufficientData(f"need at least {k} descriptors, got {len(x)}")
    rng = np.random.default_rng(seed)
    c = kmeans_pp(x, k, rng)
    labels = np.full(len(x), -1)
    history = []
    for _ in range(max_iter):
        d = sq_distances(x, c)
        new = np.argmin(d, axis=1)
        dist = d[np.arange(len(x)), new]
        history.append(float(dist.sum()))
        if np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(c)
        np.add.at(sums, labels, x)
        filled = counts > 0
        c[filled] = sums[filled] / counts[filled, None]
        taken = set()
        order = np.argsort(-dist, kind="stable")
        for j in np.flatnonzero(~filled):
            far = next(int(i) for i in order if int(i) not in taken)
            taken.add(far)
            c[j] = x[far]
    return c, labels, history


def build_codebook(descriptors, k: int = N_WORDS, seed: int = 0, max_iter: int = MAX_ITER) -> Codebook:
    c, _, history = kmeans(descriptors, k, seed, max_iter)
    return Codebook(c.astype(np.float32), int(seed), tuple(history))


def bow_vector(descriptors, cb: Codebook) -> np.ndarray:
    """L2-normalised visual-word histogram; no descriptors give the zero vector."""
    h = np.bincount(assign(descriptors, cb.centers), minlength=cb.k).astype(np.float64)
    n = np.linalg.norm(h)
    return h / n if n > 0 else h


def bow_matrix(descriptor_sets, cb: Codebook) -> np.ndarray:
    """``bow_vector`` for many descriptor sets with a single distance computation."""
    sets = [_as_matrix(d, cb.centers.shape[1]) for d in descriptor_sets]
    out = np.zeros((len(sets), cb.k))
    if not sets:
        return out
    owner = np.repeat(np.arange(len(sets)), [len(s) for s in sets])
    words = assign(np.concatenate(sets), cb.centers) if len(owner) else owner
    np.add.at(out, (owner, words), 1.0)
    n = np.linalg.norm(out, axis=1, keepdims=True)
    return np.divide(out, n, out=out, where=n > 0)

"""Side-by-side training of the four recogniser variants on one character corpus."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..features.bow import build_codebook
from ..features.sift import char_descriptor_batch
from ..synth.corpus import CharSet, char_corpus, document_corpus, split_indices
from .augment import AugmentConfig
from .model import HybridModel, transfer_init
from .train import TrainConfig, TrainResult, accuracy, train

VARIANTS = ("CNN", "Aug-CNN", "SIFT-CNN", "Hybrid")


@dataclass
class AblationReport:
    accuracy: dict[str, float] = field(default_factory=dict)
    seconds: dict[str, float] = field(default_factory=dict)
    results: dict[str, TrainResult] = field(default_factory=dict)
    n_test: int = 0
    pretrained: TrainResult | None = None     # source of the Hybrid model's conv1-conv4


def codebook_for(images, seed: int = 0):
    return build_codebook(np.concatenate(char_descriptor_batch(images)), seed=seed)


def pretrain(codebook, docs: CharSet | None = None, cfg: TrainConfig | None = None,
             seed: int = 0, log=None) -> TrainResult:
    """SIFT-fused model trained on the document-character corpus."""
    docs = document_corpus() if docs is None else docs
    tr, va, _ = split_indices(docs.labels, seed)
    cfg = cfg or TrainConfig(augment=AugmentConfig(), seed=seed)
    model = HybridModel.create(codebook, docs.classes, use_sift=True, seed=seed)
    return train(model, docs.subset(tr), docs.subset(va), cfg, log)


def run_ablation(chars: CharSet | None = None, n_chars: int = 3000, seed: int = 0,
                 cfg: TrainConfig = TrainConfig(), docs: CharSet | None = None,
                 log=None) -> AblationReport:
    chars = char_corpus(n_chars, seed) if chars is None else chars
    tr, va, te = (chars.subset(i) for i in split_indices(chars.labels, seed))
    rep = AblationReport(n_test=len(te))
    t0 = time.perf_counter()
    cb = codebook_for(tr.images, seed)
    rep.seconds["codebook"] = time.perf_counter() - t0
    aug = AugmentConfig()

    def run(name, model, c):
        t = time.perf_counter()
        res = train(model, tr, va, c, log)
        rep.results[name] = res
        rep.accuracy[name] = accuracy(res.model, te)
        rep.seconds[name] = time.perf_counter() - t

    plain = TrainConfig(cfg.lr0, cfg.momentum, cfg.batch_size, cfg.max_epochs, cfg.patience, None, seed)
    with_aug = TrainConfig(cfg.lr0, cfg.momentum, cfg.batch_size, cfg.max_epochs, cfg.patience, aug, seed)
    run("CNN", HybridModel.create(None, chars.classes, use_sift=False, seed=seed), plain)
    run("Aug-CNN", HybridModel.create(None, chars.classes, use_sift=False, seed=seed), with_aug)
    run("SIFT-CNN", HybridModel.create(cb, chars.classes, use_sift=True, seed=seed), with_aug)
    t = time.perf_counter()
    pre = rep.pretrained = pretrain(cb, docs, with_aug, seed, log)
    rep.seconds["pretrain"] = time.perf_counter() - t
    run("Hybrid", transfer_init(pre.model, cb, chars.classes, use_sift=True, seed=seed + 1), with_aug)
    return rep

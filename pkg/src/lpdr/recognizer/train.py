"""Mini-batch SGD training with early stopping on validation accuracy."""
from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import DataError
from ..synth.corpus import CharSet
from .augment import AugmentConfig, augment_batch
from .model import HybridModel


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64
    max_epochs: int = 60
    patience: int = 5
    augment: AugmentConfig | None = None
    seed: int = 0


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_accuracy: float
    lr: float


@dataclass
class TrainResult:
    model: HybridModel
    history: list[EpochLog] = field(default_factory=list)
    initial_loss: float = float("nan")
    best_epoch: int = -1
    stopped_early: bool = False


class EarlyStopping:
    """Signals a stop once ``patience`` epochs pass without a strictly better score."""

    def __init__(self, patience: int = 5):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = -1
        self.waited = 0

    def update(self, epoch: int, score: float) -> bool:
        if score > self.best:
            self.best, self.best_epoch, self.waited = score, epoch, 0
            return False
        self.waited += 1
        return self.waited >= self.patience


def check_classes(data: CharSet, n_classes: int) -> None:
    counts = np.bincount(data.labels, minlength=n_classes)
    if len(counts) > n_classes:
        raise DataError(f"label {len(counts) - 1} outside the {n_classes} model classes")
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        raise DataError(f"no training samples for class index {int(empty[0])}")


def accuracy(model: HybridModel, data: CharSet, bows=None, batch: int = 512) -> float:
    if len(data) == 0:
        return 0.0
    hits = 0
    for i in range(0, len(data), batch):
        b = None if bows is None else bows[i:i + batch]
        pred = model.logits_batch(data.images[i:i + batch], b).argmax(1)
        hits += int((pred == data.labels[i:i + batch]).sum())
    return hits / len(data)


def mean_loss(model: HybridModel, data: CharSet, bows, batch: int = 512) -> float:
    total = 0.0
    for i in range(0, len(data), batch):
        logits = torch.from_numpy(model.logits_batch(data.images[i:i + batch], bows[i:i + batch]))
        total += float(F.cross_entropy(logits, torch.from_numpy(data.labels[i:i + batch]),
                                       reduction="sum"))
    return total / max(len(data), 1)


def train(model: HybridModel, train_set: CharSet, val_set: CharSet, cfg: TrainConfig = TrainConfig(),
          log=None) -> TrainResult:
    """Minimise cross-entropy; returns the best-validation snapshot.

    Only layers outside ``model.frozen`` are handed to the optimiser.  With
    augmentation on, each epoch draws fresh perturbed copies (and their
    visual-word histograms).
    """
    check_classes(train_set, len(model.classes))
    rng = np.random.default_rng(cfg.seed)
    val_bows = model.bows(val_set.images)
    plain_bows = model.bows(train_set.images)
    opt = torch.optim.SGD(model.trainable_parameters(), lr=cfg.lr0, momentum=cfg.momentum)
    stopper = EarlyStopping(cfg.patience)
    result = TrainResult(model, initial_loss=mean_loss(model, train_set, plain_bows))
    best_state = copy.deepcopy(model.net.state_dict())
    labels = torch.from_numpy(train_set.labels)

    for epoch in range(cfg.max_epochs):
        lr = cfg.lr0 * 0.5 ** (epoch / 10)
        for g in opt.param_groups:
            g["lr"] = lr
        if cfg.augment is not None:
            images = augment_batch(train_set.images, cfg.augment, rng)
            bows = model.bows(images)
        else:
            images, bows = train_set.images, plain_bows
        x_all, b_all = model.tensors(images, bows)
        order = torch.from_numpy(rng.permutation(len(train_set)))
        model.net.train()
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            opt.zero_grad()
            _, logits = model.net(x_all[idx], b_all[idx])
            loss = F.cross_entropy(logits, labels[idx])
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        val_acc = accuracy(model, val_set, val_bows)
        entry = EpochLog(epoch + 1, total / len(order), val_acc, lr)
        result.history.append(entry)
        if log is not None:
            log(entry)
        stop = stopper.update(epoch + 1, val_acc)
        if stopper.best_epoch == epoch + 1:
            best_state = copy.deepcopy(model.net.state_dict())
        if stop:
            result.stopped_early = True
            break
    model.net.load_state_dict(best_state)
    result.best_epoch = stopper.best_epoch
    return result


def write_history_csv(path, history: list[EpochLog]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_accuracy"])
        for e in history:
            w.writerow([e.epoch, f"{e.train_loss:.6f}", f"{e.val_accuracy:.6f}"])

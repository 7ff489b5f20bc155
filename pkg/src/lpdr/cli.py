"""Command-line entry point: ``python -m lpdr <command> ...``.

Exit codes: 0 success, 2 no plate found, 3 bad input, 4 model problem.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import cv2
import numpy as np
import torch
from PIL import Image

from . import config as cfgmod
from .detection import candidate_rects, make_candidate, statistical_filter
from .errors import EvaluationError, LpdrError, ModelError, NoPlate, TransferError
from .evaluation import Prediction, bench, evaluate, rect_from, write_frames_csv
from .imagefile import read_image, write_image
from .pipeline import FrameTrace, run_lpdr
from .recognizer.ablation import codebook_for
from .recognizer.model import HybridModel, load_model, save_model, transfer_init
from .recognizer.train import accuracy, train, write_history_csv
from .synth.corpus import (CharSet, char_corpus, document_corpus, load_char_corpus, read_manifest,
                           scene_specs, split_indices, write_char_corpus, write_scene_corpus)
from .synth.scenes import render_scene
from .verification import result_dict, result_json

EXIT_OK, EXIT_NO_PLATE, EXIT_INPUT, EXIT_MODEL = 0, 2, 3, 4


def _dump_json(obj, path) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _progress(entry) -> None:
    print(f"epoch {entry.epoch:3d}  loss {entry.train_loss:.4f}  val {entry.val_accuracy:.4f}",
          file=sys.stderr)


# --- synth -----------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    if args.kind == "scenes":
        specs = scene_specs(args.n, args.seed)
        scenes = [render_scene(spec, bg, s) for spec, bg, s in specs]
        meta = [dict(vars(spec), background=bg, seed=s) for spec, bg, s in specs]
        path = write_scene_corpus(out, scenes, meta, args.format)
    elif args.kind == "chars":
        cs = char_corpus(args.n, args.seed)
        path = write_char_corpus(out, cs, split_indices(cs.labels, args.seed), args.format)
    else:
        cs = document_corpus(args.per_class, args.seed)
        path = write_char_corpus(out, cs, split_indices(cs.labels, args.seed), args.format)
    print(path)
    return EXIT_OK


# --- training --------------------------------------------------------------

def _char_splits(args, default_n: int, docs: bool = False):
    if args.chars:
        cs, splits = load_char_corpus(args.chars)
        if not {"train", "val"} <= set(splits):
            idx = split_indices(cs.labels, args.seed)
        else:
            idx = (splits["train"], splits["val"], splits.get("test", np.zeros(0, int)))
    else:
        cs = document_corpus(args.per_class, args.seed) if docs else char_corpus(default_n, args.seed)
        idx = split_indices(cs.labels, args.seed)
    return tuple(cs.subset(i) for i in idx)


def _train_cfg(args):
    cfg = cfgmod.train_config(cfgmod.load_toml(args.config), augment=not args.no_augment)
    overrides = {k: v for k, v in (("max_epochs", args.max_epochs), ("seed", args.seed),
                                   ("lr0", args.lr)) if v is not None}
    return dataclasses.replace(cfg, **overrides)


def _finish_training(args, model, res, test: CharSet) -> int:
    save_model(model, args.out)
    if args.csv:
        write_history_csv(args.csv, res.history)
    report = {"model": str(args.out), "best_epoch": res.best_epoch,
              "val_accuracy": max((e.val_accuracy for e in res.history), default=0.0)}
    if len(test):
        report["test_accuracy"] = accuracy(model, test)
    _dump_json(report, None)
    return EXIT_OK


def cmd_pretrain(args) -> int:
    torch.set_num_threads(1)
    tr, va, te = _char_splits(args, 0, docs=True)
    cfg = _train_cfg(args)
    cb = codebook_for(tr.images, cfg.seed)
    model = HybridModel.create(cb, tr.classes, use_sift=True, seed=cfg.seed)
    res = train(model, tr, va, cfg, _progress)
    return _finish_training(args, res.model, res, te)


def cmd_train(args) -> int:
    torch.set_num_threads(1)
    tr, va, te = _char_splits(args, args.n)
    cfg = _train_cfg(args)
    use_sift = not args.no_sift
    cb = codebook_for(tr.images, cfg.seed) if use_sift else None
    if args.init:
        model = transfer_init(load_model(args.init), cb, tr.classes, use_sift, seed=cfg.seed + 1)
    else:
        model = HybridModel.create(cb, tr.classes, use_sift=use_sift, seed=cfg.seed)
    res = train(model, tr, va, cfg, _progress)
    return _finish_training(args, res.model, res, te)


# --- detection and recognition ---------------------------------------------

def cmd_detect(args) -> int:
    pcfg = cfgmod.pipeline_config(cfgmod.load_toml(args.config)).detection
    gray = read_image(args.image)
    cands = [make_candidate(gray, r, pcfg.peak_threshold) for r in candidate_rects(gray, pcfg)]
    kept = statistical_filter(cands, pcfg.peak_threshold, pcfg.min_peaks)
    _dump_json({"candidates": [{"rect": c.rect.as_dict(), "peak_count": c.peak_count} for c in kept]},
               args.out)
    return EXIT_OK if kept else EXIT_NO_PLATE


def overlay(gray, trace: FrameTrace, winner=None) -> np.ndarray:
    img = cv2.cvtColor(gray, cv2.COLOR_GRAY2BGR)
    for c in trace.candidates:
        r = c.rect
        cv2.rectangle(img, (r.left, r.top), (r.right, r.bottom), (0, 200, 255), 1)
    if winner is not None:
        r = winner.candidate.rect
        cv2.rectangle(img, (r.left, r.top), (r.right, r.bottom), (0, 255, 0), 2)
        cv2.putText(img, winner.text, (r.left, max(12, r.top - 4)), cv2.FONT_HERSHEY_SIMPLEX,
                    0.6, (0, 255, 0), 2)
    return img[..., ::-1]


def write_debug(out_dir, gray, trace: FrameTrace, winner=None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    debug = {
        "rects": [r.as_dict() for r in trace.rects],
        "candidates": [{"rect": c.rect.as_dict(), "peak_count": c.peak_count} for c in trace.candidates],
        "readings": [result_dict(r) for r in trace.readings],
        "stages_ms": trace.stages_ms,
    }
    _dump_json(debug, out / "debug.json")
    Image.fromarray(np.ascontiguousarray(overlay(gray, trace, winner))).save(out / "overlay.png")
    with open(out / "pixel_vectors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        for i, c in enumerate(trace.candidates):
            w.writerow([i, c.peak_count] + [int(v) for v in c.pixel_vector])
    for i, (_, seg) in enumerate(trace.segmentations):
        write_image(out / f"plate{i}_trimmed.png", seg.trimmed)
        for j, ch in enumerate(seg.chars):
            write_image(out / f"plate{i}_char{j}.png", ch.image)


def cmd_recognize(args) -> int:
    torch.set_num_threads(1)
    pcfg = cfgmod.pipeline_config(cfgmod.load_toml(args.config))
    model = load_model(args.model)
    gray = read_image(args.image)
    trace = FrameTrace()
    try:
        res = run_lpdr(gray, model, pcfg, trace)
    except NoPlate:
        if args.debug:
            write_debug(args.debug, gray, trace)
        raise
    if args.debug:
        write_debug(args.debug, gray, trace, res.reading)
    text = result_json(res.reading)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    print(f"{res.plate_text}  P={res.score:.4f}  {res.elapsed_ms:.1f} ms", file=sys.stderr)
    return EXIT_OK


# --- benchmark and evaluation ----------------------------------------------

def _load_frames(manifest):
    recs = read_manifest(manifest)
    base = Path(manifest).parent
    return recs, [read_image(base / r["path"]) for r in recs]


def cmd_bench(args) -> int:
    torch.set_num_threads(1)
    pcfg = cfgmod.pipeline_config(cfgmod.load_toml(args.config))
    model = load_model(args.model)
    recs, frames = _load_frames(args.manifest)
    metrics, records = bench(frames, recs, lambda f: run_lpdr(f, model, pcfg), args.warmup, args.runs)
    if args.csv:
        write_frames_csv(args.csv, records)
    if args.results:
        with open(args.results, "w") as fh:
            for rec, fr in zip(recs, records):
                row = {"path": rec["path"], "plate_text": fr.text if fr.detected else None,
                       "rect": fr.rect, "score": fr.score,
                       "elapsed_ms": round(fr.elapsed_ms, 3)}
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    _dump_json(metrics.as_dict(), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    recs = read_manifest(args.manifest)
    preds, total_ms = [], 0.0
    with open(args.results) as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    for rec, row in zip(recs, rows):
        if row.get("path") not in (None, rec["path"]):
            raise EvaluationError(f"result {row.get('path')} does not match manifest entry {rec['path']}")
        total_ms += float(row.get("elapsed_ms") or 0.0)
        preds.append(None if row.get("plate_text") is None
                     else Prediction(row["plate_text"], rect_from(row["rect"]), row.get("score", 0.0)))
    fps = len(rows) / (total_ms / 1e3) if total_ms > 0 else 0.0
    _dump_json(evaluate(recs, preds, fps).as_dict(), args.out)
    return EXIT_OK


# --- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lpdr", description="License plate detection and recognition")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("kind", choices=["scenes", "chars", "docs"])
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=300)
    s.add_argument("--per-class", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--format", choices=["pgm", "png"], default="pgm")
    s.set_defaults(func=cmd_synth)

    for name, func, help_ in (("pretrain", cmd_pretrain, "train the document-character model"),
                              ("train", cmd_train, "train the plate-character recogniser")):
        t = sub.add_parser(name, help=help_)
        t.add_argument("--out", required=True, help="model file to write")
        t.add_argument("--chars", help="character manifest (default: generate one)")
        t.add_argument("--n", type=int, default=3000, help="generated plate characters")
        t.add_argument("--per-class", type=int, default=200, help="generated document characters")
        t.add_argument("--seed", type=int)
        t.add_argument("--max-epochs", type=int)
        t.add_argument("--lr", type=float)
        t.add_argument("--no-augment", action="store_true")
        t.add_argument("--csv", help="per-epoch log")
        t.add_argument("--config")
        if name == "train":
            t.add_argument("--init", help="pretrained model whose conv1-conv4 are transferred")
            t.add_argument("--no-sift", action="store_true")
        t.set_defaults(func=func, no_sift=False)

    d = sub.add_parser("detect", help="list plate candidates")
    d.add_argument("--image", required=True)
    d.add_argument("--out")
    d.add_argument("--config")
    d.set_defaults(func=cmd_detect)

    r = sub.add_parser("recognize", help="read the plate in one image")
    r.add_argument("--image", required=True)
    r.add_argument("--model", required=True)
    r.add_argument("--out")
    r.add_argument("--debug", help="directory for intermediate dumps")
    r.add_argument("--config")
    r.set_defaults(func=cmd_recognize)

    b = sub.add_parser("bench", help="accuracy and throughput on a scene corpus")
    b.add_argument("--manifest", required=True)
    b.add_argument("--model", required=True)
    b.add_argument("--out")
    b.add_argument("--csv", help="per-frame results")
    b.add_argument("--results", help="per-frame predictions as JSON lines")
    b.add_argument("--warmup", type=int, default=10)
    b.add_argument("--runs", type=int, default=3)
    b.add_argument("--config")
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("eval", help="metrics from saved predictions")
    e.add_argument("--manifest", required=True)
    e.add_argument("--results", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NoPlate as e:
        print(f"no plate: {e}", file=sys.stderr)
        return EXIT_NO_PLATE
    except (ModelError, TransferError) as e:
        print(f"model error: {e}", file=sys.stderr)
        return EXIT_MODEL
    except (LpdrError, OSError, ValueError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT

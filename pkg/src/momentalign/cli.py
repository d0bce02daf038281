"""``momentalign`` command line: generate, train, predict, eval, gradcheck, export-graph."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from . import autodiff as ad
from .data import Sample, read_annotations
from .exceptions import ConfigurationError, ContractError, DimensionError, InputError
from .graph import graph_export
from .io_utils import atomic_write_text, dump_json
from .language import Vocabulary, tokenize
from .metrics import (RankedPrediction, eval_didemo, eval_r_at_n, rank_moments, read_predictions,
                      report, write_predictions)
from .model import ALIGNMENT_MODES, forward, leaf_tensors
from .synth import GenerationSpec, generate, write_dataset
from .trainer import Checkpoint, EpochLog, HyperParams, MomentTrainer, format_log
from .video import PRESETS, FeatureStore

CHECKPOINT_NAME = "checkpoint.json"
LOG_NAME = "train_log.csv"
USER_ERRORS = (InputError, ConfigurationError, DimensionError, ContractError,
               FileNotFoundError, IsADirectoryError, NotADirectoryError, PermissionError,
               json.JSONDecodeError, UnicodeDecodeError)


@dataclass
class RunConfig:
    """Everything needed to reproduce one invocation; stored in every artifact."""

    subcommand: str
    preset: str
    seed: int
    paths: Dict[str, Optional[str]] = field(default_factory=dict)
    hyperparams: Dict[str, object] = field(default_factory=dict)
    version: str = __version__

    def to_dict(self) -> dict:
        return asdict(self)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser, out_help: str, out_default=None) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS), default="didemo")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=out_default, required=out_default is None, help=out_help)


def _add_data(p: argparse.ArgumentParser, vocab: bool = False) -> None:
    p.add_argument("--features", required=True, help="directory of <video_id>.json feature files")
    p.add_argument("--annotations", required=True, help="JSON-lines annotation file")
    if vocab:
        p.add_argument("--vocab", help="vocabulary file, one token per line, <unk> first")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="momentalign", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    _add_common(g, "output directory", "synthetic")
    g.add_argument("--plain", type=int, default=100)
    g.add_argument("--ordinal", type=int, default=100)
    g.add_argument("--relational", type=int, default=100)
    g.add_argument("--events", type=int, default=8, help="number of event classes")
    g.add_argument("--dim", type=int, default=32, help="clip feature width")
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--world-seed", type=int, default=0,
                   help="seed of the event prototypes; share it between splits")

    t = sub.add_parser("train", help="train a model, checkpointing every epoch")
    _add_common(t, "run directory for checkpoint and log", "run")
    _add_data(t, vocab=True)
    defaults = HyperParams()
    t.add_argument("--checkpoint", help="resume from this checkpoint manifest")
    t.add_argument("--lr", type=float, default=defaults.lr)
    t.add_argument("--epochs", type=int, default=defaults.epochs)
    t.add_argument("--batch", type=int, default=defaults.batch_size)
    t.add_argument("--cells", type=int, default=defaults.cells)
    t.add_argument("--dim", type=int, default=defaults.dim)
    t.add_argument("--alignment", choices=ALIGNMENT_MODES, default=defaults.alignment)
    t.add_argument("--soft-negatives", action="store_true")

    pr = sub.add_parser("predict", help="rank candidate moments for every annotation")
    _add_common(pr, "predictions file (JSON lines)", "predictions.jsonl")
    _add_data(pr)
    pr.add_argument("--checkpoint", required=True)

    ev = sub.add_parser("eval", help="score predictions against annotations")
    _add_common(ev, "report file (JSON)", "report.json")
    ev.add_argument("--predictions", required=True)
    ev.add_argument("--annotations", required=True)
    ev.add_argument("--protocol", choices=("auto", "didemo", "r_at_n"), default="auto",
                    help="auto: exact-span Rank@k for didemo, R@n,IoU@m for charades")

    gc = sub.add_parser("gradcheck", help="finite-difference check of every component")
    _add_common(gc, "optional JSON file for the errors", "")
    gc.add_argument("--only", nargs="*", help="restrict to these checks")

    ex = sub.add_parser("export-graph", help="write the learned moment adjacency of one sample")
    _add_common(ex, "graph file (JSON)", "graph.json")
    _add_data(ex)
    ex.add_argument("--checkpoint", required=True)
    ex.add_argument("--sample", default="0",
                    help="query_id, or zero-based line index, of the annotation to export")
    return parser


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _paths(args, *names) -> Dict[str, Optional[str]]:
    return {n: getattr(args, n, None) for n in names}


def cmd_generate(args) -> int:
    spec = GenerationSpec(plain=args.plain, ordinal=args.ordinal, relational=args.relational,
                          preset=args.preset, seed=args.seed, world_seed=args.world_seed,
                          num_events=args.events, dim=args.dim, noise=args.noise)
    spec.validate()
    rc = RunConfig("generate", args.preset, args.seed, _paths(args, "out"), spec.to_dict())
    dataset = generate(spec)
    write_dataset(dataset, args.out, rc.to_dict())
    print(f"wrote {len(dataset.queries)} queries over {len(dataset.videos)} videos to {args.out}")
    return 0


def _load_samples(path) -> List[Sample]:
    samples = read_annotations(path)
    if not samples:
        raise InputError(f"{path}: no annotations")
    return samples


def _load_checkpoint(path) -> Checkpoint:
    if not Path(path).is_file():
        raise InputError(f"--checkpoint: no such file {path}")
    return Checkpoint.load(path)


def cmd_train(args) -> int:
    if not Path(args.features).is_dir():
        raise InputError(f"--features: no such directory {args.features}")
    samples = _load_samples(args.annotations)
    store = FeatureStore(args.features)
    hp = HyperParams(lr=args.lr, batch_size=args.batch, epochs=args.epochs, seed=args.seed,
                     dim=args.dim, preset=args.preset, cells=args.cells,
                     alignment=args.alignment, soft_negatives=args.soft_negatives)
    if args.vocab:
        if not Path(args.vocab).is_file():
            raise InputError(f"--vocab: no such file {args.vocab}")
        vocab = Vocabulary.load(args.vocab)
    else:
        vocab = Vocabulary.from_texts(s.query for s in samples)
    rc = RunConfig("train", args.preset, args.seed,
                   _paths(args, "features", "annotations", "vocab", "checkpoint", "out"),
                   hp.to_dict())

    if args.checkpoint:
        ckpt = _load_checkpoint(args.checkpoint)
        # --epochs is the new total and may extend the run; everything else must match
        saved = {k: v for k, v in ckpt.hyperparams.items() if k != "epochs"}
        if saved != {k: v for k, v in hp.to_dict().items() if k != "epochs"}:
            raise ConfigurationError("flags differ from the checkpoint's hyperparameters: "
                                     f"{json.dumps(saved, sort_keys=True)}")
        trainer = MomentTrainer.from_checkpoint(ckpt)
        trainer.hp = hp
    else:
        trainer = MomentTrainer(hp, vocab, input_dim=store[samples[0].video_id].dim)

    out = Path(args.out)
    header = "# run_config: " + json.dumps(rc.to_dict(), sort_keys=True) + "\n"
    history: List[EpochLog] = []

    def on_epoch(tr: MomentTrainer, entry: EpochLog) -> None:
        history.append(entry)
        tr.checkpoint(rc.to_dict()).save(out / CHECKPOINT_NAME)
        atomic_write_text(out / LOG_NAME, header + format_log(history))
        print(f"epoch {entry.epoch}: loss {entry.loss:.6f} rank1 {entry.rank1:.4f}", flush=True)

    trainer.fit(samples, store, epochs=hp.epochs - trainer.epoch if args.checkpoint else None,
                on_epoch=on_epoch)
    if not history:
        trainer.checkpoint(rc.to_dict()).save(out / CHECKPOINT_NAME)
        atomic_write_text(out / LOG_NAME, header + format_log(history))
    print(f"checkpoint: {out / CHECKPOINT_NAME}")
    return 0


def _ranked(trainer: MomentTrainer, samples, store) -> List[RankedPrediction]:
    out = []
    for p in trainer.prepare(samples, store):
        logits = trainer.logits(p)
        out.append(rank_moments(p.sample.query_id, [m.interval for m in p.moments], logits))
    return out


def cmd_predict(args) -> int:
    trainer = MomentTrainer.from_checkpoint(_load_checkpoint(args.checkpoint))
    samples = _load_samples(args.annotations)
    preds = _ranked(trainer, samples, FeatureStore(args.features))
    rc = RunConfig("predict", trainer.hp.preset, trainer.hp.seed,
                   _paths(args, "features", "annotations", "checkpoint", "out"),
                   trainer.hp.to_dict())
    write_predictions(args.out, preds, rc.to_dict())
    print(f"wrote rankings for {len(preds)} queries to {args.out}")
    return 0


def cmd_eval(args) -> int:
    preds = read_predictions(args.predictions)
    samples = _load_samples(args.annotations)
    by_id = {p.query_id: p for p in preds}
    missing = [s.query_id for s in samples if s.query_id not in by_id]
    if missing:
        raise InputError(f"{args.predictions}: no prediction for query_id {missing[0]!r}")
    ordered = [by_id[s.query_id] for s in samples]
    gts = [s.interval for s in samples]
    protocol = args.protocol
    if protocol == "auto":
        protocol = "didemo" if args.preset == "didemo" else "r_at_n"
    result = eval_didemo(ordered, gts) if protocol == "didemo" else eval_r_at_n(ordered, gts)
    result.extra["run_config"] = RunConfig(
        "eval", args.preset, args.seed, _paths(args, "predictions", "annotations", "out"),
        {"protocol": protocol}).to_dict()
    print(report(result, args.out))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, check_names, run_suite
    if args.only:
        unknown = sorted(set(args.only) - set(check_names()))
        if unknown:
            raise InputError(f"--only: unknown check(s) {', '.join(unknown)}; "
                             f"choose from {', '.join(check_names())}")
    errors = run_suite(args.seed, args.only)
    width = max(len(k) for k in errors)
    for name, err in errors.items():
        print(f"{name.ljust(width)}  {err:.3e}  {'ok' if err <= TOLERANCE else 'FAIL'}")
    worst = max(errors.values())
    print(f"max relative error {worst:.3e} (tolerance {TOLERANCE:g})")
    if args.out:
        rc = RunConfig("gradcheck", args.preset, args.seed, _paths(args, "out"),
                       {"tolerance": TOLERANCE})
        dump_json(args.out, {"errors": errors, "run_config": rc.to_dict()})
    return 0 if worst <= TOLERANCE else 1


def cmd_export_graph(args) -> int:
    trainer = MomentTrainer.from_checkpoint(_load_checkpoint(args.checkpoint))
    samples = _load_samples(args.annotations)
    chosen = [s for s in samples if s.query_id == args.sample]
    if not chosen and args.sample.isdigit() and int(args.sample) < len(samples):
        chosen = [samples[int(args.sample)]]
    if not chosen:
        raise InputError(f"--sample: no annotation with query_id or index {args.sample!r}")
    prepared = trainer.prepare(chosen, FeatureStore(args.features))[0]
    result = forward(trainer.config, leaf_tensors(trainer.params, requires_grad=False),
                     prepared.embedded, prepared.clips)
    graph = graph_export(prepared.moments, result.state.adjacency.data)
    graph.update({
        "query_id": prepared.sample.query_id, "video_id": prepared.sample.video_id,
        "query": prepared.sample.query, "cells": trainer.config.cells,
        "scores": result.scores.logits.data.tolist(),
        "run_config": RunConfig("export-graph", trainer.hp.preset, trainer.hp.seed,
                                _paths(args, "features", "annotations", "checkpoint", "sample",
                                       "out"), trainer.hp.to_dict()).to_dict(),
    })
    dump_json(args.out, graph)
    print(f"wrote {len(prepared.moments)}-node graph to {args.out}")
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "predict": cmd_predict,
            "eval": cmd_eval, "gradcheck": cmd_gradcheck, "export-graph": cmd_export_graph}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.subcommand](args)
    except USER_ERRORS as exc:
        detail = exc.filename if isinstance(exc, OSError) and exc.filename else exc
        print(f"momentalign {args.subcommand}: error: {detail}"
              + (f" ({exc.strerror})" if isinstance(exc, OSError) and exc.strerror else ""),
              file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"momentalign {args.subcommand}: training diverged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

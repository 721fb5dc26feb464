"""Command-line entry point.

Exit codes: 0 ok, 2 usage or configuration error, 3 data error, 4 numeric failure.
Every failure prints exactly one JSON line on stderr::

    {"error": "data_error", "exit_code": 3, "message": "..."}
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from ..datagen import DataError, DataGenConfig, generate_dataset, load_dataset, write_dataset
from ..gp import GpError, GpNumericalError, load_hyperparams, save_hyperparams, save_personalization
from ..numerics import ConfigError, NonFiniteError, ShapeError
from ..sam import MAP_VARIANTS
from . import report
from .checkpoint import CheckpointError, capture, load_checkpoint, restore_model, save_checkpoint
from .config import ENV_OUTPUT_DIR, ENV_SEED, ExperimentConfig, load_config
from .personalize import default_pair, personalize_person, pretrain_pair
from .train import TrainingDiverged, evaluate, format_metrics, load_sequences, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would print multi-line usage and exit
        raise UsageError(message)


def _out_dir(arg: str | None, cfg: ExperimentConfig | None, sub: str) -> Path:
    if arg:
        return Path(arg)
    if os.environ.get(ENV_OUTPUT_DIR):
        return Path(os.environ[ENV_OUTPUT_DIR]) / sub
    return Path(cfg.output_dir if cfg is not None else "runs/default") / (sub if cfg is None else "")


def _say(msg: str) -> None:
    print(msg, flush=True)


def _ckpt_model(path: str):
    ckpt = load_checkpoint(path)
    return ckpt, restore_model(ckpt).freeze()


def _sequences(dataset: str | None, ckpt_cfg: ExperimentConfig, split: str | None):
    if dataset:
        return list(load_dataset(dataset, split))
    train_seqs, eval_seqs = load_sequences(ckpt_cfg)
    if split == "train":
        return train_seqs
    if split == "eval":
        return eval_seqs
    return train_seqs + eval_seqs


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate_data(args) -> int:
    cfg = load_config(args.config)
    gen = cfg.data.generator
    for key in ("persons", "sequences_per_person", "eval_sequences_per_person", "frames"):
        if getattr(args, key) is not None:
            setattr(gen, key, getattr(args, key))
    if args.image_size is not None:
        gen.image_size = tuple(args.image_size)
    if os.environ.get(ENV_SEED):
        gen.seed = int(os.environ[ENV_SEED])
    if args.seed is not None:
        gen.seed = args.seed
    try:
        gen.validate()
    except ValueError as exc:
        raise ConfigError(f"invalid generator config: {exc}") from None
    out = Path(args.out) if args.out else _out_dir(None, None, "data")
    if out.exists() and any(out.iterdir()):
        if not args.force:
            raise DataError("output directory is not empty (use --force to overwrite)", out)
        shutil.rmtree(out)
    pairs = generate_dataset(gen)
    manifest = write_dataset(pairs, out, meta={"generator": gen.to_dict()})
    d = gen.distractors
    _say(f"wrote {len(manifest.records)} sequences for {gen.persons} persons to {out} "
         f"(frames={gen.frames}, image={gen.image_size[0]}x{gen.image_size[1]}, "
         f"distractors: background={d.background_motion}, flicker={d.expression_flicker}, "
         f"illumination={d.illumination_drift})")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.resume:
        resume = load_checkpoint(args.resume)
        cfg = resume.config
    else:
        resume = None
        cfg = load_config(args.config)
    if args.iterations is not None:
        cfg.train.iterations = args.iterations
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.lam is not None:
        cfg.model.loss.lam = args.lam
    if args.data:
        cfg.data.dataset_dir = args.data
    if args.out:
        cfg.output_dir = args.out
    elif os.environ.get(ENV_OUTPUT_DIR):
        cfg.output_dir = os.environ[ENV_OUTPUT_DIR]
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "config.json", cfg.to_dict())
    train_seqs, eval_seqs = load_sequences(cfg)
    t0 = time.perf_counter()
    try:
        result = train(cfg, train_seqs, eval_seqs, resume=resume, stop_at=args.stop_at, out_dir=out, log=_say)
    except TrainingDiverged as exc:
        raise NonFiniteError(str(exc)) from None
    save_checkpoint(out / "final.ckpt.npz", capture(cfg, result.model, result.optimizer, result.iteration))
    prefix = f"resumed_{resume.iteration:06d}_" if resume is not None else ""
    (out / f"{prefix}metrics.csv").write_text(format_metrics(result.metrics))
    report.write_rows(out / f"{prefix}timing.csv", ["iteration", "wall_seconds"],
                      [(m["iteration"], w) for m, w in zip(result.metrics, result.wall_times)])
    last_eval = next((m["eval_error_deg"] for m in reversed(result.metrics) if m["eval_error_deg"] is not None), None)
    summary = {"iterations": result.iteration, "sam": cfg.model.sam.variant, "tsm": cfg.model.tsm.variant,
               "final_train_loss": result.metrics[-1]["train_loss"] if result.metrics else None,
               "final_eval_error_deg": last_eval, "seed": cfg.train.seed,
               "parameters": result.model.num_parameters()}
    report.write_json(out / f"{prefix}metrics.json", summary)
    if result.metrics:
        report.plot_training_curve(out / f"{prefix}training_curve.png", result.metrics)
    _say(f"trained {result.iteration} iterations in {time.perf_counter() - t0:.1f}s; checkpoint {out / 'final.ckpt.npz'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt, model = _ckpt_model(args.checkpoint)
    seqs = _sequences(args.data, ckpt.config, args.split)
    size = tuple(ckpt.config.model.backbone.image_size)
    for s in seqs:
        if s.image_size != size:
            raise ConfigError(f"checkpoint expects {size[0]}x{size[1]} frames but {s.seq_id} has "
                              f"{s.image_size[0]}x{s.image_size[1]}")
    rep = evaluate(model, seqs)
    out = _out_dir(args.out, None, "eval")
    out.mkdir(parents=True, exist_ok=True)
    doc = rep.to_dict()
    doc["reference"] = report.REFERENCE_WITHIN_DATASET
    doc["sam"], doc["tsm"] = ckpt.config.model.sam.variant, ckpt.config.model.tsm.variant
    report.write_json(out / "eval.json", doc)
    rows = [("sequence", k, v) for k, v in rep.per_sequence.items()]
    rows += [("person", k, v) for k, v in rep.per_person.items()]
    rows.append(("overall", "all", rep.overall_deg))
    report.write_rows(out / "eval.csv", ["scope", "id", "mean_angular_error_deg"], rows)
    report.plot_eval(out / "eval.png", rep.per_person, rep.overall_deg)
    _say(f"mean angular error {rep.overall_deg:.3f} deg over {rep.frames} frames ({len(rep.per_person)} persons)")
    _say(report.REFERENCE_WITHIN_DATASET)
    return EXIT_OK


def cmd_pretrain_gp(args) -> int:
    ckpt, model = _ckpt_model(args.checkpoint)
    seqs = _sequences(args.data, ckpt.config, "train")
    pair = pretrain_pair(model, seqs, steps=args.steps, batch=args.batch, seed=args.seed)
    out = Path(args.out) if args.out else _out_dir(None, None, "gp") / "gp_pretrained.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_hyperparams(out, pair)
    _say(f"pretrained GP hyperparameters written to {out}")
    return EXIT_OK


def cmd_personalize(args) -> int:
    if args.shots < 1:
        raise UsageError(f"--shots must be >= 1, got {args.shots}")
    ckpt, model = _ckpt_model(args.checkpoint)
    seqs = [s for s in _sequences(args.data, ckpt.config, None) if s.person_id == args.person]
    if not seqs:
        raise DataError(f"no sequences for person {args.person!r}")
    if args.gp and Path(args.gp).is_file():
        pair = load_hyperparams(args.gp)
    else:
        why = f"{args.gp} not found" if args.gp else "no pretrained GP given"
        print(f"warning: {why}; using default initialisation", file=sys.stderr)
        pool = _sequences(args.data, ckpt.config, "train")
        pair = default_pair(model, [s for s in pool if s.person_id != args.person] or pool)
    rep = personalize_person(model, seqs, pair, shots=args.shots, resamples=args.resamples, seed=args.seed)
    out = _out_dir(args.out, None, "personalize")
    out.mkdir(parents=True, exist_ok=True)
    doc = rep.to_dict()
    doc["reference"] = report.REFERENCE_PERSONALIZATION
    report.write_json(out / "personalization.json", doc)
    report.write_rows(out / "resamplings.csv", ["resampling", "before_deg", "after_deg"],
                      [(i, b, a) for i, (b, a) in enumerate(zip(rep.before, rep.after))])
    report.write_rows(out / "uncertainty_curve.csv", ["fraction", "mae_pitch_deg", "mae_yaw_deg"], rep.curve)
    report.plot_personalization(out / "personalization.png", rep.before, rep.after, rep.curve)
    save_personalization(out / f"{args.person}.gp.npz", rep.predictor)
    b, a = doc["before_deg"], doc["after_deg"]
    _say(f"{args.person}: {args.shots}-shot error {b['mean']:.3f}±{b['stderr']:.3f} -> {a['mean']:.3f}±{a['stderr']:.3f} deg "
         f"({doc['improved']}/{len(rep.before)} resamplings improved)")
    _say(report.REFERENCE_PERSONALIZATION)
    return EXIT_OK


def cmd_dump_attention(args) -> int:
    ckpt, model = _ckpt_model(args.checkpoint)
    variant = ckpt.config.model.sam.variant
    if variant not in MAP_VARIANTS:
        raise ConfigError(f"variant exposes no dual attention maps: {variant}")
    seqs = [s for s in _sequences(args.data, ckpt.config, None) if s.seq_id == args.sequence]
    if not seqs:
        raise DataError(f"sequence {args.sequence!r} not found")
    seq = seqs[0]
    from ..numerics import no_grad
    with no_grad():
        maps = model(seq.frames, keep_maps=True).attention_maps
    out = _out_dir(args.out, None, "attention")
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / f"{seq.seq_id}_maps.npy", maps)
    report.write_json(out / f"{seq.seq_id}_maps.json", {"sequence": seq.seq_id, "shape": list(maps.shape),
                                                        "frame_indices": list(range(seq.n)), "variant": variant})
    if not args.no_overlays:
        for t in range(seq.n):
            report.attention_overlay(out / f"{seq.seq_id}_t{t:03d}.png", seq.frames[t], maps[t])
    _say(f"wrote {maps.shape[0]}x{maps.shape[1]}x{maps.shape[2]}x{maps.shape[3]} attention maps to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stagegaze", description="Video gaze estimation experiments on synthetic data.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("generate-data", help="render a synthetic dataset")
    g.add_argument("--config")
    g.add_argument("--out")
    g.add_argument("--force", action="store_true")
    g.add_argument("--persons", type=int)
    g.add_argument("--sequences-per-person", dest="sequences_per_person", type=int)
    g.add_argument("--eval-sequences-per-person", dest="eval_sequences_per_person", type=int)
    g.add_argument("--frames", type=int)
    g.add_argument("--image-size", type=int, nargs=2)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_generate_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--data", help="dataset directory (overrides the config)")
    t.add_argument("--out")
    t.add_argument("--iterations", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lam", type=float, help="PoG loss weight (0 within-data, 0.001 cross-data)")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--stop-at", dest="stop_at", type=int, help="stop after this iteration")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data")
    e.add_argument("--split", default="eval", choices=["train", "eval"])
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    q = sub.add_parser("pretrain-gp", help="fit GP hyperparameters on the training residual pool")
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--data")
    q.add_argument("--out")
    q.add_argument("--steps", type=int, default=100)
    q.add_argument("--batch", type=int, default=32)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=cmd_pretrain_gp)

    s = sub.add_parser("personalize", help="few-shot GP personalisation for one person")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--person", required=True)
    s.add_argument("--data")
    s.add_argument("--gp", help="pretrained GP hyperparameter file")
    s.add_argument("--shots", type=int, default=3)
    s.add_argument("--resamples", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_personalize)

    d = sub.add_parser("dump-attention", help="export dual attention maps for one sequence")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--sequence", required=True)
    d.add_argument("--data")
    d.add_argument("--out")
    d.add_argument("--no-overlays", action="store_true")
    d.set_defaults(func=cmd_dump_attention)
    return p


def _fail(kind: str, code: int, message: str) -> int:
    line = json.dumps({"error": kind, "exit_code": code, "message": " ".join(str(message).split())})
    print(line, file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a command is required: generate-data, train, eval, pretrain-gp, personalize, "
                             "dump-attention")
        return args.func(args)
    except UsageError as exc:
        return _fail("usage_error", EXIT_USAGE, exc)
    except (ConfigError, CheckpointError) as exc:
        return _fail("config_error", EXIT_USAGE, exc)
    except (DataError, GpError, ShapeError) as exc:
        return _fail("data_error", EXIT_DATA, exc)
    except (NonFiniteError, GpNumericalError, FloatingPointError) as exc:
        return _fail("numeric_error", EXIT_NUMERIC, exc)


if __name__ == "__main__":
    sys.exit(main())

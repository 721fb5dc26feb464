"""Training and evaluation loops."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..datagen import DataError, VideoSequence, generate_dataset, load_dataset
from ..numerics import Adam, NonFiniteError, SgdMomentum, clip_grad_norm, cosine_anneal_lr
from ..pipeline import StageModel
from ..tsm import angular_error_angles_deg, stage_loss
from .checkpoint import Checkpoint, capture, restore_model, restore_optimizer, save_checkpoint
from .config import ExperimentConfig

METRIC_FIELDS = ("iteration", "lr", "train_loss", "grad_norm", "eval_error_deg", "sam", "tsm")


class TrainingDiverged(ArithmeticError):
    def __init__(self, iteration: int, last_good: int, checkpoint: str | None) -> None:
        super().__init__(f"non-finite loss or gradient at iteration {iteration}; last good iteration {last_good}"
                         + (f"; crash checkpoint {checkpoint}" if checkpoint else ""))
        self.iteration = iteration
        self.last_good = last_good
        self.checkpoint = checkpoint


def load_sequences(cfg: ExperimentConfig) -> tuple[list[VideoSequence], list[VideoSequence]]:
    """Train and eval sequences from ``data.dataset_dir`` or, failing that, the generator spec."""
    if cfg.data.dataset_dir:
        train = list(load_dataset(cfg.data.dataset_dir, "train"))
        evals = list(load_dataset(cfg.data.dataset_dir, "eval"))
    else:
        pairs = generate_dataset(cfg.data.generator)
        train = [s for s, split in pairs if split == "train"]
        evals = [s for s, split in pairs if split == "eval"]
    size = tuple(cfg.model.backbone.image_size)
    for s in train + evals:
        if s.image_size != size:
            raise DataError(f"sequence {s.seq_id} has frames {s.image_size}, model expects {size}")
    return train, evals


def batch_plan(seed: int, iteration: int, lengths: Sequence[int], batch: int, seq_len: int) -> list[tuple[int, int]]:
    """The ``(sequence, start)`` clips for one iteration.

    Sequences are visited in seeded per-epoch permutations and each clip
    offset is drawn from a generator keyed on its stream position, so the
    plan depends only on ``(seed, iteration)``.
    """
    n = len(lengths)
    if n == 0:
        raise DataError("no training sequences")
    if min(lengths) < seq_len:
        raise DataError(f"seq_len {seq_len} exceeds the shortest training sequence ({min(lengths)} frames)")
    out = []
    for pos in range(iteration * batch, (iteration + 1) * batch):
        epoch, slot = divmod(pos, n)
        s = int(np.random.default_rng([seed, epoch]).permutation(n)[slot])
        start = int(np.random.default_rng([seed, epoch, slot, 1]).integers(0, lengths[s] - seq_len + 1))
        out.append((s, start))
    return out


def make_batch(seqs: Sequence[VideoSequence], plan, seq_len: int, with_pog: bool = False):
    frames = np.stack([seqs[s].frames[t:t + seq_len] for s, t in plan])
    gaze = np.stack([seqs[s].gaze[t:t + seq_len] for s, t in plan])
    pog = None
    if with_pog:
        if any(seqs[s].pog is None for s, _ in plan):
            raise DataError("lambda > 0 needs PoG labels on every training sequence")
        pog = np.stack([seqs[s].pog[t:t + seq_len] for s, t in plan])
    return frames, gaze, pog


@dataclass
class EvalReport:
    overall_deg: float
    per_person: dict[str, float]
    per_sequence: dict[str, float]
    frames: int
    errors: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    def to_dict(self) -> dict:
        return {"mean_angular_error_deg": self.overall_deg, "frames": self.frames,
                "per_person": self.per_person, "per_sequence": self.per_sequence}


def evaluate(model: StageModel | Callable[[np.ndarray], np.ndarray], seqs: Sequence[VideoSequence]) -> EvalReport:
    """Mean angular error over every frame of every sequence, overall and per person.

    ``model`` may be a StageModel or any callable mapping ``(n, h0, w0, 3)``
    frames to ``(n, 2)`` predictions.
    """
    if not seqs:
        raise DataError("no evaluation sequences")
    predict = model.predict if isinstance(model, StageModel) else model
    per_seq, by_person, all_err = {}, {}, []
    for seq in seqs:
        err = angular_error_angles_deg(np.asarray(predict(seq.frames)), seq.gaze)
        per_seq[seq.seq_id] = float(err.mean())
        by_person.setdefault(seq.person_id, []).append(err)
        all_err.append(err)
    errors = np.concatenate(all_err)
    per_person = {p: float(np.concatenate(e).mean()) for p, e in sorted(by_person.items())}
    return EvalReport(float(errors.mean()), per_person, per_seq, int(errors.size), errors)


def format_metrics(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for r in rows:
        w.writerow([_fmt(r.get(k)) for k in METRIC_FIELDS])
    return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class TrainResult:
    model: StageModel
    optimizer: SgdMomentum | Adam
    metrics: list[dict]
    iteration: int
    wall_times: list[float]


def train(cfg: ExperimentConfig, train_seqs: Sequence[VideoSequence], eval_seqs: Sequence[VideoSequence] = (),
          resume: Checkpoint | None = None, stop_at: int | None = None, out_dir: str | Path | None = None,
          log: Callable[[str], None] | None = None) -> TrainResult:
    """Minibatch training with a cosine schedule over ``cfg.train.iterations`` steps.

    The optimiser is SGD with momentum unless ``cfg.train.optimizer`` is
    ``"adam"``; gradients are clipped to ``clip_norm`` globally first.

    ``stop_at`` ends the loop early (the schedule still spans the full run),
    which is how interrupted runs are simulated. On a non-finite loss or
    gradient a crash checkpoint of the last good state is written to
    ``out_dir`` and TrainingDiverged is raised.
    """
    cfg.validate()
    tc = cfg.train
    if resume is not None:
        model = restore_model(resume)
        start = resume.iteration
    else:
        model = StageModel(cfg.model)
        start = 0
    model.train()
    if tc.optimizer == "adam":
        opt = Adam(model.parameters(), lr=tc.lr0)
    else:
        opt = SgdMomentum(model.parameters(), lr=tc.lr0, momentum=tc.momentum)
    if resume is not None:
        restore_optimizer(resume, model, opt)
    lengths = [s.n for s in train_seqs]
    with_pog = cfg.model.loss.lam > 0
    end = tc.iterations if stop_at is None else min(stop_at, tc.iterations)
    metrics, walls = [], []
    t0 = time.perf_counter()
    for it in range(start, end):
        plan = batch_plan(tc.seed, it, lengths, tc.batch, tc.seq_len)
        frames, gaze, pog = make_batch(train_seqs, plan, tc.seq_len, with_pog)
        opt.lr = cosine_anneal_lr(it, tc.iterations, tc.lr0)
        opt.zero_grad()
        try:
            out = model(frames)
            loss = stage_loss(out.gaze, gaze, cfg.model.loss, out.pog, pog)
            if not np.isfinite(loss.item()):
                raise NonFiniteError(f"loss is {loss.item()}")
            loss.backward()
            gnorm = clip_grad_norm(opt.params, tc.clip_norm)
            opt.step()
        except NonFiniteError:
            path = None
            if out_dir is not None:
                path = str(Path(out_dir) / "crash.ckpt.npz")
                save_checkpoint(path, capture(cfg, model, opt, it))
            raise TrainingDiverged(it, it - 1, path) from None
        row = {"iteration": it + 1, "lr": float(opt.lr), "train_loss": float(loss.item()), "grad_norm": float(gnorm),
               "eval_error_deg": None, "sam": cfg.model.sam.variant, "tsm": cfg.model.tsm.variant}
        done = it + 1
        if eval_seqs and tc.eval_every and (done % tc.eval_every == 0 or done == tc.iterations):
            row["eval_error_deg"] = evaluate(model, eval_seqs).overall_deg
            model.train()
        metrics.append(row)
        walls.append(time.perf_counter() - t0)
        if log is not None and (done % max(1, tc.eval_every or 100) == 0 or done == end):
            log(f"iter {done}/{tc.iterations} loss {row['train_loss']:.4f}"
                + (f" eval {row['eval_error_deg']:.3f} deg" if row["eval_error_deg"] is not None else ""))
        if out_dir is not None and tc.checkpoint_every and done % tc.checkpoint_every == 0:
            save_checkpoint(Path(out_dir) / f"iter_{done:06d}.ckpt.npz", capture(cfg, model, opt, done))
    return TrainResult(model, opt, metrics, end if end > start else start, walls)

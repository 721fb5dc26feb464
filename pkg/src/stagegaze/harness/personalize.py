"""GP pre-training on a model's training pool and the resampled few-shot evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..datagen import DataError, VideoSequence
from ..gp import (GpHyperparams, PersonalizedPredictor, PersonSamples, gp_adapt, gp_pretrain, predict_personalized,
                  sorted_mae_curve)
from ..pipeline import StageModel
from ..tsm import angular_error_angles_deg


def residual_pool(base: StageModel, seqs: Sequence[VideoSequence], limit: int | None = None,
                  seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Flattened features and ``label - prediction`` residuals over every frame of ``seqs``."""
    H, R = [], []
    for s in seqs:
        H.append(base.frame_features(s.frames))
        R.append(s.gaze - base.predict(s.frames))
    H, R = np.concatenate(H), np.concatenate(R)
    if limit is not None and len(R) > limit:
        keep = np.sort(np.random.default_rng(seed).choice(len(R), size=limit, replace=False))
        H, R = H[keep], R[keep]
    return H, R


def pretrain_pair(base: StageModel, seqs: Sequence[VideoSequence], steps: int = 100, lr: float = 0.001,
                  batch: int = 32, min_pool: int = 64, seed: int = 0) -> tuple[GpHyperparams, GpHyperparams]:
    H, R = residual_pool(base, seqs)
    return tuple(gp_pretrain(H, R[:, j], GpHyperparams.initial(H, R[:, j]), steps=steps, lr=lr, batch=batch,
                             min_pool=min_pool, seed=seed + j) for j in range(2))


def default_pair(base: StageModel, seqs: Sequence[VideoSequence]) -> tuple[GpHyperparams, GpHyperparams]:
    """Fallback when no pretrained file exists: data-driven initial values, no optimisation."""
    H, R = residual_pool(base, seqs, limit=64)
    return tuple(GpHyperparams.initial(H, R[:, j]) for j in range(2))


@dataclass
class PersonalizationReport:
    person_id: str
    shots: int
    before: list[float]
    after: list[float]
    curve: list[tuple[float, float, float]]
    curves: list[list[tuple[float, float, float]]] = field(default_factory=list)
    corrections: list[tuple[float, float]] = field(default_factory=list)  # mean (pitch, yaw) shift, radians
    predictor: PersonalizedPredictor | None = None

    @staticmethod
    def _stat(v) -> dict:
        v = np.asarray(v, dtype=np.float64)
        se = float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
        return {"mean": float(v.mean()), "stderr": se}

    def to_dict(self) -> dict:
        return {"person_id": self.person_id, "shots": self.shots, "resamplings": len(self.before),
                "before_deg": self._stat(self.before), "after_deg": self._stat(self.after),
                "improved": int(np.sum(np.asarray(self.after) < np.asarray(self.before))),
                "before_each": self.before, "after_each": self.after,
                "mean_correction_rad": [list(c) for c in self.corrections],
                "uncertainty_curve": [{"fraction": f, "mae_pitch_deg": p, "mae_yaw_deg": y} for f, p, y in self.curve]}


def personalize_person(base: StageModel, seqs: Sequence[VideoSequence], pretrained, shots: int = 3,
                       resamples: int = 10, seed: int = 0, max_steps: int = 200,
                       patience: int = 10) -> PersonalizationReport:
    """Draw ``shots`` labelled frames ``resamples`` times; score base vs personalised on the remaining frames."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if not seqs:
        raise DataError("no sequences for this person")
    person = seqs[0].person_id
    n = min(s.n for s in seqs)
    frames = np.stack([s.frames[:n] for s in seqs])
    gaze = np.stack([s.gaze[:n] for s in seqs])
    total = len(seqs) * n
    if shots >= total:
        raise DataError(f"person {person} has {total} frames, too few for {shots} shots plus held-out frames")
    base_pred = np.stack([base.predict(f) for f in frames])
    before, after, curves, shifts, pp = [], [], [], [], None
    for r in range(resamples):
        flat = np.random.default_rng([seed, r]).choice(total, size=shots, replace=False)
        picks = np.stack([flat // n, flat % n], axis=1)
        pp = gp_adapt(pretrained, PersonSamples(frames, gaze, picks, person), base, max_steps=max_steps,
                      patience=patience)
        held = np.ones((len(seqs), n), dtype=bool)
        held[picks[:, 0], picks[:, 1]] = False
        pred, std = predict_personalized(pp, frames)
        before.append(float(angular_error_angles_deg(base_pred[held], gaze[held]).mean()))
        after.append(float(angular_error_angles_deg(pred[held], gaze[held]).mean()))
        shift = (pred - base_pred)[held].mean(axis=0)
        shifts.append((float(shift[0]), float(shift[1])))
        # the base model sees whole clips, so the curve is built from in-context predictions
        err = np.degrees(np.abs(pred - gaze))[held]
        var = (std ** 2)[held]
        pitch, yaw = sorted_mae_curve(err[:, 0], var[:, 0]), sorted_mae_curve(err[:, 1], var[:, 1])
        curves.append([(f, p, y) for (f, p), (_, y) in zip(pitch, yaw)])
    curve = [(curves[0][i][0], float(np.mean([c[i][1] for c in curves])), float(np.mean([c[i][2] for c in curves])))
             for i in range(len(curves[0]))]
    return PersonalizationReport(person, shots, before, after, curve, curves, shifts, pp)

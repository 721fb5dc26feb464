"""Delimited/JSON outputs and matplotlib figures for the CLI report paths."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

REFERENCE_WITHIN_DATASET = "reference within-dataset best: 10.05°"
REFERENCE_PERSONALIZATION = "EyeDiap 3-shot gain ≈ 0.8°"

_STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.bbox": "tight",
    "savefig.dpi": 120,
    # keeps PNG bytes stable between runs
    "path.simplify": False,
}


def write_json(path: str | Path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def write_rows(path: str | Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def _save(fig, path: str | Path) -> None:
    # fixed metadata so identical figures give identical files
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_training_curve(path: str | Path, metrics: Sequence[dict]) -> None:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        it = [m["iteration"] for m in metrics]
        ax.plot(it, [m["train_loss"] for m in metrics], lw=0.8, color="0.5", label="train loss")
        ev = [(m["iteration"], m["eval_error_deg"]) for m in metrics if m.get("eval_error_deg") is not None]
        if ev:
            ax.plot(*zip(*ev), "o-", color="C3", ms=3, label="eval error")
        ax.set_xlabel("iteration")
        ax.set_ylabel("angular error (deg)")
        ax.legend(frameon=False)
        _save(fig, path)


def plot_eval(path: str | Path, per_person: dict[str, float], overall: float) -> None:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(max(3, 0.4 * len(per_person) + 1.5), 3))
        names = list(per_person)
        ax.bar(range(len(names)), [per_person[n] for n in names], color="C0")
        ax.axhline(overall, color="k", lw=0.8, ls="--", label=f"overall {overall:.2f}")
        ax.set_xticks(range(len(names)), names, rotation=45, ha="right")
        ax.set_ylabel("mean angular error (deg)")
        ax.legend(frameon=False)
        _save(fig, path)


def plot_personalization(path: str | Path, before: Sequence[float], after: Sequence[float],
                         curve: Sequence[tuple[float, float, float]]) -> None:
    with plt.rc_context(_STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(7, 3))
        idx = np.arange(len(before))
        a1.plot(idx, before, "o-", ms=3, label="base")
        a1.plot(idx, after, "s-", ms=3, label="personalised")
        a1.set_xlabel("resampling")
        a1.set_ylabel("mean angular error (deg)")
        a1.legend(frameon=False)
        if curve:
            f = [c[0] for c in curve]
            a2.plot(f, [c[1] for c in curve], "o-", ms=3, label="pitch")
            a2.plot(f, [c[2] for c in curve], "s-", ms=3, label="yaw")
            a2.set_xlabel("fraction of frames (lowest variance first)")
            a2.set_ylabel("MAE (deg)")
            a2.legend(frameon=False)
        _save(fig, path)


def attention_overlay(path: str | Path, frame: np.ndarray, maps: np.ndarray) -> None:
    """Grayscale frame with the previous/current attention maps upsampled on top, side by side."""
    gray = frame.mean(axis=-1)
    h0, w0 = gray.shape
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(4, 2))
        for ax, m, title in zip(axes, maps, ("previous", "current")):
            up = np.kron(m, np.ones((h0 // m.shape[0], w0 // m.shape[1])))
            ax.imshow(gray, cmap="gray", vmin=0, vmax=1)
            ax.imshow(up, cmap="inferno", alpha=0.5, vmin=0, vmax=1)
            ax.set_title(title)
            ax.axis("off")
        _save(fig, path)

"""Checkpoints: one ``.npz`` with parameter blobs, optimiser state and a JSON header.

Optimiser buffers are stored per slot (``velocity`` for SGD, ``m`` and
``v`` for Adam). The header holds the format version, the full experiment
config, the iteration counter, the Adam step count and the dropout
generator's bit-generator state, which
is all that resuming needs since batches are a pure function of
``(seed, iteration)``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..numerics import Adam, SgdMomentum
from ..pipeline import ModelConfig, StageModel
from .config import ExperimentConfig

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ExperimentConfig
    params: dict[str, np.ndarray]
    opt_state: dict[str, dict[str, np.ndarray]]
    iteration: int
    rng_state: dict
    opt_step: int = 0
    format_version: int = CHECKPOINT_VERSION


def _slots(opt) -> dict[str, list]:
    if isinstance(opt, Adam):
        return {"m": opt.m, "v": opt.v}
    return {"velocity": opt.velocity}


def capture(cfg: ExperimentConfig, model: StageModel, opt: SgdMomentum | Adam | None, iteration: int) -> Checkpoint:
    names = [n for n, _ in model.named_parameters()]
    state = {}
    if opt is not None:
        state = {slot: {n: b.copy() for n, b in zip(names, bufs)} for slot, bufs in _slots(opt).items()}
    return Checkpoint(cfg, model.state_dict(), state, iteration, model.dropout_rng.bit_generator.state,
                      int(getattr(opt, "t", 0)))


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    header = {"format_version": ckpt.format_version, "config": ckpt.config.to_dict(), "iteration": ckpt.iteration,
              "rng_state": ckpt.rng_state, "opt_step": ckpt.opt_step}
    arrays = {f"param/{k}": v for k, v in ckpt.params.items()}
    for slot, bufs in ckpt.opt_state.items():
        arrays.update({f"opt/{slot}/{k}": v for k, v in bufs.items()})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path) as z:
            header = json.loads(z["header"].tobytes().decode())
            params = {k[len("param/"):]: z[k].copy() for k in z.files if k.startswith("param/")}
            state: dict[str, dict[str, np.ndarray]] = {}
            for k in z.files:
                if k.startswith("opt/"):
                    _, slot, name = k.split("/", 2)
                    state.setdefault(slot, {})[name] = z[k].copy()
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from None
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint format {header.get('format_version')!r} is not supported "
                              f"(expected {CHECKPOINT_VERSION})")
    cfg = ExperimentConfig.from_dict(header["config"])
    return Checkpoint(cfg, params, state, int(header["iteration"]), header["rng_state"], int(header.get("opt_step", 0)))


def restore_model(ckpt: Checkpoint) -> StageModel:
    model = StageModel(ModelConfig.from_dict(ckpt.config.model.to_dict()))
    model.load_state_dict(ckpt.params)
    model.dropout_rng.bit_generator.state = ckpt.rng_state
    return model


def restore_optimizer(ckpt: Checkpoint, model: StageModel, opt: SgdMomentum | Adam) -> None:
    if not ckpt.opt_state:
        return
    names = [n for n, _ in model.named_parameters()]
    wanted = _slots(opt)
    if set(ckpt.opt_state) != set(wanted):
        raise CheckpointError(f"checkpoint holds {sorted(ckpt.opt_state)} optimizer state, "
                              f"this optimizer needs {sorted(wanted)}")
    for slot, bufs in ckpt.opt_state.items():
        if set(names) != set(bufs):
            raise CheckpointError("optimizer state does not match the model's parameters")
        setattr(opt, slot, [bufs[n].copy() for n in names])
    if isinstance(opt, Adam):
        opt.t = ckpt.opt_step

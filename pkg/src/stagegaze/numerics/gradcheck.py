"""Central-difference gradient verification."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    checked: int
    failures: list[tuple[str, tuple[int, ...], float, float]] = field(default_factory=list)
    nondeterministic: bool = False

    def __str__(self) -> str:
        state = "pass" if self.passed else "FAIL"
        extra = " (nondeterministic objective)" if self.nondeterministic else ""
        return f"gradcheck {state}: max rel err {self.max_rel_error:.3e} over {self.checked} coords{extra}"


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5, rtol: float = 1e-4,
                      max_coords: int | None = None, rng: np.random.Generator | None = None,
                      floor_frac: float = 1e-2, atol: float = 1e-8) -> GradCheckReport:
    """Compare autodiff gradients of the scalar ``f()`` against central differences.

    Each coordinate's error is ``|a - n| / max(|a|, |n|, floor)``, where the
    floor is ``floor_frac`` times the largest gradient magnitude within that
    parameter tensor. Coordinates whose gradient is negligible next to their
    tensor's scale are therefore not judged on roundoff noise alone, and an
    absolute difference below ``atol`` always passes (tensors whose true
    gradient is identically zero, such as key biases under softmax).

    With ``max_coords`` set, that many coordinates per tensor are sampled.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    out = f()
    out.backward()
    analytic = [np.array(p.grad, copy=True) for p in params]

    with no_grad():
        base = f().item()
        again = f().item()
    if base != again or base != out.item():
        return GradCheckReport(float("inf"), False, 0, nondeterministic=True)

    rng = rng or np.random.default_rng(0)
    worst = 0.0
    checked = 0
    failures = []
    for pi, (p, ga) in enumerate(zip(params, analytic)):
        if not p.data.flags.c_contiguous or not p.data.flags.writeable:
            p.data = np.array(p.data, copy=True)
        flat = p.data.reshape(-1)  # a view, so writes perturb the parameter in place
        n = flat.size
        idx = np.arange(n) if max_coords is None or n <= max_coords else rng.choice(n, max_coords, replace=False)
        numeric = np.empty(len(idx))
        with no_grad():
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + eps
                fp = f().item()
                flat[i] = orig - eps
                fm = f().item()
                flat[i] = orig
                numeric[j] = (fp - fm) / (2 * eps)
        a = ga.reshape(-1)[idx]
        scale = max(np.max(np.abs(a)), np.max(np.abs(numeric)), 1e-12)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor_frac * scale)
        rel = np.where(np.abs(a - numeric) < atol, 0.0, np.abs(a - numeric) / denom)
        checked += len(idx)
        if rel.size:
            worst = max(worst, float(rel.max()))
        label = p.name or f"param[{pi}]"
        for j in np.nonzero(rel >= rtol)[0]:
            coord = tuple(int(c) for c in np.unravel_index(idx[j], p.shape))
            failures.append((label, coord, float(a[j]), float(numeric[j])))
    return GradCheckReport(worst, not failures, checked, failures)

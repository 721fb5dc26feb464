"""Per-person residual correction with two independent 1-D Gaussian processes.

One GP models the pitch residual, the other the yaw residual, both over
flattened backbone features. The kernel is squared-exponential with one
length scale per feature (ARD). Hyperparameters are fitted by maximising
the log marginal likelihood in log-space, first on a pool of training
residuals, then per person with early stopping.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular

from .numerics import Adam, Parameter
from .numerics.tensor import NonFiniteError

JITTER = 1e-10
SIGMA2_FLOOR = 1e-6
VAR_CLAMP = 1e-9
ARTIFACT_VERSION = 1
COMPONENTS = ("pitch", "yaw")


class GpError(ValueError):
    pass


class GpNumericalError(ArithmeticError):
    """Factorisation failure or divergence; carries a condition estimate when known."""

    def __init__(self, message: str, condition: float | None = None) -> None:
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3e})"
        super().__init__(message)
        self.condition = condition


@dataclass
class GpHyperparams:
    mu0: float
    sigma2: float
    tau: float
    theta: np.ndarray

    def __post_init__(self) -> None:
        self.mu0 = float(self.mu0)
        self.sigma2 = float(self.sigma2)
        self.tau = float(self.tau)
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        self.validate()

    def validate(self) -> None:
        if not np.isfinite(self.mu0):
            raise GpError("mu0 must be finite")
        if not (self.sigma2 > 0 and self.tau > 0) or not np.isfinite(self.sigma2 + self.tau):
            raise GpError(f"sigma2 and tau must be positive and finite, got {self.sigma2}, {self.tau}")
        if self.theta.size == 0 or not np.all(self.theta > 0) or not np.all(np.isfinite(self.theta)):
            raise GpError("theta must be a non-empty vector of positive length scales")

    @property
    def dim(self) -> int:
        return self.theta.size

    @property
    def count(self) -> int:
        return self.dim + 3

    # packed layout: [mu0, log tau, log sigma2, log theta_1..d]
    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.mu0, np.log(self.tau), np.log(self.sigma2)], np.log(self.theta)])

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "GpHyperparams":
        v = np.asarray(v, dtype=np.float64)
        return cls(mu0=v[0], tau=np.exp(v[1]), sigma2=np.exp(v[2]), theta=np.exp(v[3:]))

    def to_dict(self) -> dict:
        return {"mu0": self.mu0, "sigma2": self.sigma2, "tau": self.tau, "theta": self.theta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GpHyperparams":
        return cls(mu0=d["mu0"], sigma2=d["sigma2"], tau=d["tau"], theta=np.asarray(d["theta"]))

    @classmethod
    def initial(cls, H: np.ndarray, y: np.ndarray | None = None) -> "GpHyperparams":
        """Data-driven starting point: one shared length scale at the median pairwise distance."""
        H = np.asarray(H, dtype=np.float64)
        n, d = H.shape
        sub = H[: min(n, 64)]
        dist = np.sqrt(np.maximum(_sqdist(sub, sub, np.ones(d)), 0.0))
        med = float(np.median(dist[np.triu_indices(len(sub), 1)])) if len(sub) > 1 else 1.0
        tau = max(float(np.var(y)), 1e-4) if y is not None and len(y) > 1 else 1e-2
        return cls(mu0=0.0, sigma2=0.1 * tau, tau=tau, theta=np.full(d, med if med > 0 else 1.0))


def _sqdist(A: np.ndarray, B: np.ndarray, theta: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Σ_s (a_s - b_s)² / θ_s² for all row pairs, from explicit differences so d(h, h) is exactly 0."""
    A = np.asarray(A, dtype=np.float64) / theta
    B = np.asarray(B, dtype=np.float64) / theta
    out = np.empty((A.shape[0], B.shape[0]))
    for i in range(0, A.shape[0], chunk):
        diff = A[i:i + chunk, None, :] - B[None, :, :]
        out[i:i + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def ard_kernel(h, h_prime, hyper: GpHyperparams) -> float | np.ndarray:
    """τ·exp(-Σ (h_s - h'_s)² / θ_s²).

    Vectors give a scalar; ``(n, d)`` and ``(m, d)`` matrices give the ``(n, m)`` Gram matrix.
    """
    h = np.asarray(h, dtype=np.float64)
    hp = np.asarray(h_prime, dtype=np.float64)
    if h.shape[-1] != hyper.dim or hp.shape[-1] != hyper.dim:
        raise GpError(f"feature dims {h.shape[-1]} and {hp.shape[-1]} do not match {hyper.dim} length scales")
    K = hyper.tau * np.exp(-_sqdist(np.atleast_2d(h), np.atleast_2d(hp), hyper.theta))
    if h.ndim == 1 and hp.ndim == 1:
        return float(K[0, 0])
    return K


class GpRegressor:
    """A GP conditioned on ``(H, y)`` with a cached Cholesky factor of K + σ²I + jitter."""

    def __init__(self, hyper: GpHyperparams, H: np.ndarray, y: np.ndarray) -> None:
        H = np.atleast_2d(np.asarray(H, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if H.shape[0] != y.shape[0]:
            raise GpError(f"{H.shape[0]} feature rows but {y.shape[0]} targets")
        if H.shape[0] == 0:
            raise GpError("a GP needs at least one training point")
        if H.shape[1] != hyper.dim:
            raise GpError(f"feature dim {H.shape[1]} does not match {hyper.dim} length scales")
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(y))):
            raise GpError("GP features and targets must be finite")
        self.hyper = hyper
        self.H = H
        self.y = y
        self.K = ard_kernel(H, H, hyper)
        A = self.K + (hyper.sigma2 + JITTER * hyper.tau) * np.eye(len(y))
        try:
            self.chol = cho_factor(A, lower=True)
        except LinAlgError:
            raise GpNumericalError("kernel system is not positive definite despite jitter",
                                   condition=float(np.linalg.cond(A))) from None
        self.alpha = cho_solve(self.chol, y - hyper.mu0)

    @property
    def n(self) -> int:
        return len(self.y)

    def posterior(self, h) -> tuple[np.ndarray, np.ndarray]:
        return gp_posterior(self, h)

    def log_marginal_likelihood(self) -> float:
        return gp_log_marginal_likelihood(self)


def gp_posterior(model: GpRegressor, h) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance at query features ``h`` (``(d,)`` or ``(m, d)``)."""
    h = np.asarray(h, dtype=np.float64)
    single = h.ndim == 1
    hq = np.atleast_2d(h)
    hyp = model.hyper
    kq = ard_kernel(hq, model.H, hyp)
    mean = hyp.mu0 + kq @ model.alpha
    v = solve_triangular(model.chol[0], kq.T, lower=True)
    var = hyp.tau - np.einsum("ij,ij->j", v, v)
    if np.any(var < -VAR_CLAMP * max(1.0, hyp.tau)):
        raise GpNumericalError(f"negative posterior variance {var.min():.3e}")
    var = np.clip(var, 0.0, hyp.tau)
    if single:
        return mean[0], var[0]
    return mean, var


def gp_log_marginal_likelihood(model: GpRegressor) -> float:
    L = model.chol[0]
    r = model.y - model.hyper.mu0
    return float(-0.5 * r @ model.alpha - np.sum(np.log(np.diag(L))) - 0.5 * model.n * np.log(2 * np.pi))


def lml_and_grad(hyper: GpHyperparams, H: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Log marginal likelihood and its gradient in the packed ``to_vector`` layout."""
    model = GpRegressor(hyper, H, y)
    value = gp_log_marginal_likelihood(model)
    n = model.n
    alpha = model.alpha
    A_inv = cho_solve(model.chol, np.eye(n))
    W = np.outer(alpha, alpha) - A_inv
    K = model.K
    g = np.empty(hyper.count)
    g[0] = alpha.sum()
    # dA/dlog tau = K + jitter*tau*I, dA/dlog sigma2 = sigma2*I
    g[1] = 0.5 * (np.sum(W * K) + JITTER * hyper.tau * np.trace(W))
    g[2] = 0.5 * hyper.sigma2 * np.trace(W)
    # dK_ij/dlog theta_s = K_ij * 2 (h_is - h_js)^2 / theta_s^2, summed via the expansion of the square
    M = W * K
    Hc = model.H - model.H.mean(axis=0)
    row = M.sum(axis=1)
    quad = 2.0 * (row @ (Hc * Hc)) - 2.0 * np.einsum("is,is->s", Hc, M @ Hc)
    g[3:] = quad / hyper.theta ** 2
    return value, g


@dataclass
class FitTrace:
    objective: list[float] = field(default_factory=list)
    best_step: int = -1
    halvings: int = 0


def _clamp(v: np.ndarray) -> np.ndarray:
    v = v.copy()
    v[2] = max(v[2], np.log(SIGMA2_FLOOR))
    return v


def gp_pretrain(H_pool: np.ndarray, y_pool: np.ndarray, init: GpHyperparams | None = None, steps: int = 200,
                lr: float = 0.001, batch: int = 32, min_pool: int = 64, seed: int = 0,
                trace: FitTrace | None = None) -> GpHyperparams:
    """Adam ascent on the log marginal likelihood over random subsets of the residual pool."""
    H_pool = np.asarray(H_pool, dtype=np.float64)
    y_pool = np.asarray(y_pool, dtype=np.float64).reshape(-1)
    if len(y_pool) < min_pool:
        raise GpError(f"pre-training pool has {len(y_pool)} residuals, need at least {min_pool}")
    if H_pool.shape[0] != len(y_pool):
        raise GpError("pool features and residuals disagree in length")
    init = init or GpHyperparams.initial(H_pool, y_pool)
    rng = np.random.default_rng(seed)
    subsets = [rng.choice(len(y_pool), size=min(batch, len(y_pool)), replace=False) for _ in range(steps)]
    trace = trace if trace is not None else FitTrace()
    return _ascend(init, lambda step: (H_pool[subsets[step]], y_pool[subsets[step]]), steps, lr, trace)


def _ascend(init: GpHyperparams, batch_at, steps: int, lr: float, trace: FitTrace,
            patience: int | None = None) -> GpHyperparams:
    vec = Parameter(init.to_vector())
    opt = Adam([vec], lr=lr)
    best, best_val, stale = init, -np.inf, 0
    for step in range(steps):
        H, y = batch_at(step)
        halvings = 0
        while True:
            saved = (vec.data.copy(), [m.copy() for m in opt.m], [v.copy() for v in opt.v], opt.t)
            try:
                value, grad = lml_and_grad(GpHyperparams.from_vector(vec.data), H, y)
                if not (np.isfinite(value) and np.all(np.isfinite(grad))):
                    raise NonFiniteError("log marginal likelihood is not finite")
                vec.grad = -grad
                opt.step()
                candidate = _clamp(vec.data)
                GpHyperparams.from_vector(candidate)
                vec.data = candidate
                break
            except (GpError, GpNumericalError, NonFiniteError, FloatingPointError):
                vec.data, opt.m, opt.v, opt.t = saved
                halvings += 1
                trace.halvings += 1
                if halvings > 5:
                    raise GpNumericalError(f"hyperparameter optimisation diverged at step {step} after 5 halvings")
                opt.lr *= 0.5
        trace.objective.append(value)
        if patience is not None:
            # value belongs to the parameters before this step's update
            if value > best_val:
                best_val, best, stale = value, GpHyperparams.from_vector(saved[0]), 0
                trace.best_step = step
            else:
                stale += 1
                if stale >= patience:
                    return best
    final = GpHyperparams.from_vector(vec.data)
    if patience is None:
        return final
    H, y = batch_at(steps - 1)
    if gp_log_marginal_likelihood(GpRegressor(final, H, y)) > best_val:
        trace.best_step = steps
        return final
    return best


def gp_fit_person(pretrained: GpHyperparams, H: np.ndarray, y: np.ndarray, max_steps: int = 200,
                  patience: int = 10, lr: float = 0.001, trace: FitTrace | None = None) -> GpRegressor:
    """Fine-tune from the pretrained values on one person's samples, keeping the best step."""
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(y) == 0:
        raise GpError("personalisation needs at least one labelled sample")
    trace = trace if trace is not None else FitTrace()
    best = _ascend(pretrained, lambda step: (H, y), max_steps, lr, trace, patience=patience)
    return GpRegressor(best, H, y)


# ---------------------------------------------------------------------------
# personalised predictor
# ---------------------------------------------------------------------------

@dataclass
class PersonSamples:
    """Labelled frames for one person: clips plus the ``(clip, frame)`` positions that carry labels.

    The base model sees each whole clip so its temporal context matches deployment.
    """

    frames: np.ndarray  # (m, n, h0, w0, 3)
    gaze: np.ndarray  # (m, n, 2)
    picks: np.ndarray  # (l, 2) int
    person_id: str = ""

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.gaze = np.asarray(self.gaze, dtype=np.float64)
        self.picks = np.asarray(self.picks, dtype=np.int64).reshape(-1, 2)
        if self.frames.ndim == 4:
            self.frames = self.frames[None]
            self.gaze = self.gaze[None]
        if self.frames.shape[:2] != self.gaze.shape[:2]:
            raise GpError("frames and gaze labels disagree in clip/frame counts")
        m, n = self.frames.shape[:2]
        if len(self.picks) and (np.any(self.picks < 0) or np.any(self.picks[:, 0] >= m) or np.any(self.picks[:, 1] >= n)):
            raise GpError("sample positions fall outside the clips")

    @property
    def shots(self) -> int:
        return len(self.picks)


@dataclass
class PersonalizedPredictor:
    base: object  # frozen StageModel
    r_pitch: GpRegressor
    r_yaw: GpRegressor
    person_id: str = ""

    @property
    def regressors(self) -> tuple[GpRegressor, GpRegressor]:
        return self.r_pitch, self.r_yaw


def _residual_data(base, samples: PersonSamples) -> tuple[np.ndarray, np.ndarray]:
    clips = sorted(set(samples.picks[:, 0].tolist()))
    preds, feats = {}, {}
    for c in clips:
        preds[c] = base.predict(samples.frames[c])
        feats[c] = base.frame_features(samples.frames[c])
    H = np.stack([feats[c][t] for c, t in samples.picks])
    resid = np.stack([samples.gaze[c, t] - preds[c][t] for c, t in samples.picks])
    return H, resid


def gp_adapt(pretrained, samples: PersonSamples, base, max_steps: int = 200, patience: int = 10,
             lr: float = 0.001) -> PersonalizedPredictor:
    """Condition per-component GPs on a person's labelled frames.

    ``pretrained`` is one ``GpHyperparams`` shared by both components or a
    ``(pitch, yaw)`` pair.
    """
    if samples.shots < 1:
        raise GpError("personalisation needs at least one labelled sample (l >= 1)")
    if not getattr(base, "frozen", False):
        raise GpError("the base model must be frozen before personalisation")
    pair = pretrained if isinstance(pretrained, (tuple, list)) else (pretrained, pretrained)
    H, resid = _residual_data(base, samples)
    gps = [gp_fit_person(pair[j], H, resid[:, j], max_steps=max_steps, patience=patience, lr=lr) for j in range(2)]
    return PersonalizedPredictor(base, gps[0], gps[1], person_id=samples.person_id)


def predict_personalized(pp: PersonalizedPredictor, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame corrected (pitch, yaw) and posterior stddev for ``(..., n, h0, w0, 3)`` frames."""
    V = np.asarray(V, dtype=np.float64)
    base = pp.base.predict(V)
    feats = pp.base.frame_features(V)
    flat = feats.reshape(-1, feats.shape[-1])
    means, stds = [], []
    for gp in pp.regressors:
        mu, var = gp_posterior(gp, flat)
        means.append(mu.reshape(base.shape[:-1]))
        stds.append(np.sqrt(var).reshape(base.shape[:-1]))
    return base + np.stack(means, axis=-1), np.stack(stds, axis=-1)


def prediction_intervals(gaze: np.ndarray, std: np.ndarray, width: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    return gaze - width * std, gaze + width * std


def sorted_mae_curve(abs_err: np.ndarray, var: np.ndarray, fractions=None) -> list[tuple[float, float]]:
    """MAE over frames whose variance is at or below the value at each fraction's rank."""
    abs_err = np.asarray(abs_err, dtype=np.float64).reshape(-1)
    var = np.asarray(var, dtype=np.float64).reshape(-1)
    if abs_err.shape != var.shape:
        raise GpError("errors and variances differ in length")
    fractions = np.linspace(0.1, 1.0, 10) if fractions is None else np.asarray(fractions)
    order = np.argsort(var, kind="stable")
    n = len(var)
    out = []
    for f in fractions:
        k = max(1, int(round(f * n)))
        sel = var <= var[order[k - 1]]
        out.append((float(f), float(abs_err[sel].mean())))
    return out


def uncertainty_sorted_mae(pp: PersonalizedPredictor, eval_frames: np.ndarray, eval_gaze: np.ndarray,
                           fractions=None) -> list[tuple[float, float, float]]:
    """Decile curve of (fraction, pitch MAE, yaw MAE) in degrees, each component sorted by its own variance."""
    eval_gaze = np.asarray(eval_gaze, dtype=np.float64)
    if eval_gaze[..., 0].size < 10:
        raise GpError("uncertainty curve needs at least 10 evaluation frames")
    pred, std = predict_personalized(pp, eval_frames)
    err = np.degrees(np.abs(pred - eval_gaze)).reshape(-1, 2)
    var = (std ** 2).reshape(-1, 2)
    pitch = sorted_mae_curve(err[:, 0], var[:, 0], fractions)
    yaw = sorted_mae_curve(err[:, 1], var[:, 1], fractions)
    return [(f, p, y) for (f, p), (_, y) in zip(pitch, yaw)]


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def save_hyperparams(path: str | os.PathLike, pair: tuple[GpHyperparams, GpHyperparams]) -> None:
    payload = {"format_version": ARTIFACT_VERSION,
               "hyperparams": {c: h.to_dict() for c, h in zip(COMPONENTS, pair)}}
    with open(path, "w") as f:
        json.dump(payload, f)


def load_hyperparams(path: str | os.PathLike) -> tuple[GpHyperparams, GpHyperparams]:
    with open(path) as f:
        payload = json.load(f)
    if payload.get("format_version") != ARTIFACT_VERSION:
        raise GpError(f"unsupported GP hyperparameter file version {payload.get('format_version')!r}")
    return tuple(GpHyperparams.from_dict(payload["hyperparams"][c]) for c in COMPONENTS)


def save_personalization(path: str | os.PathLike, pp: PersonalizedPredictor) -> None:
    """Hyperparameters, conditioning data and person id in one ``.npz``."""
    meta = {"format_version": ARTIFACT_VERSION, "person_id": pp.person_id,
            "hyperparams": {c: gp.hyper.to_dict() for c, gp in zip(COMPONENTS, pp.regressors)}}
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), H=pp.r_pitch.H,
             y_pitch=pp.r_pitch.y, y_yaw=pp.r_yaw.y)


def load_personalization(path: str | os.PathLike, base) -> PersonalizedPredictor:
    with np.load(path) as z:
        meta = json.loads(z["meta"].tobytes().decode())
        if meta.get("format_version") != ARTIFACT_VERSION:
            raise GpError(f"unsupported personalisation artifact version {meta.get('format_version')!r}")
        H, yp, yy = z["H"], z["y_pitch"], z["y_yaw"]
    hp = {c: GpHyperparams.from_dict(meta["hyperparams"][c]) for c in COMPONENTS}
    return PersonalizedPredictor(base, GpRegressor(hp["pitch"], H, yp), GpRegressor(hp["yaw"], H, yy),
                                 person_id=meta["person_id"])

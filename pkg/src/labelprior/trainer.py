"""Structured-SVM training of classifiers and label prior.

The regularized objective minimized here is::

    1/N sum_i H_i + lambda_W/2 ||W||^2 + lambda_A/2 ||A||^2
    H_i = max_y { loss(y, y_i) + D(x_i, y) } - D(x_i, y_i)

The bias ``b`` is not regularized. The inner maximization (loss-augmented
decoding) goes through the canonical solvers. For Hamming loss it is a
single unconstrained problem; for F1/F-beta it is split into one
cardinality-constrained problem per number of positive labels.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .exact import _labeling_table
from .model import (HAMMING, DecodeSolution, LossKind, ModelParams, QboProblem,
                    SignConstraint, project_prior)
from .solvers import DecoderOptions, decode, resolve_decoder

logger = logging.getLogger(__name__)


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lambda_W: float = 1e-3
    lambda_A: float = 1e-3
    loss: LossKind = HAMMING
    decoder: str = "auto"
    sign_constraint: SignConstraint = SignConstraint.ANY
    epochs: int = 10
    batch_size: int = 32
    step0: float = 0.1
    seed: int = 0
    average: bool = True
    average_start_epoch: Optional[int] = None   # default: a third of the epochs
    track_objective: bool = True
    options: DecoderOptions = field(default_factory=DecoderOptions)

    def __post_init__(self):
        self.sign_constraint = SignConstraint(self.sign_constraint)
        if isinstance(self.loss, str):
            self.loss = LossKind.parse(self.loss)
        if self.lambda_W < 0 or self.lambda_A < 0:
            raise ValueError("regularization weights must be non-negative")
        if not self.step0 > 0:
            raise ValueError("step0 must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.average_start_epoch is None:
            self.average_start_epoch = self.epochs // 3
        # validates decoder/sign-constraint compatibility
        resolve_decoder(self.decoder, 1 << 30, self.sign_constraint)


@dataclass
class LossAugmentedResult:
    u: np.ndarray
    U: np.ndarray
    value: float
    k: Optional[int] = None
    constants: Optional[np.ndarray] = None   # per-k constant term (F-losses)
    values: Optional[np.ndarray] = None      # per-k optimal value (F-losses)
    solution: Optional[DecodeSolution] = None


@dataclass
class TrainResult:
    params: ModelParams
    objectives: List[float]
    decoder: str
    seconds: float


def _scores(x, params: ModelParams) -> np.ndarray:
    if sp.issparse(x):
        return np.asarray(x @ params.W).ravel() + params.b
    return params.W.T @ np.asarray(x, dtype=float).ravel() + params.b


def cardinality_terms(kind: LossKind, y_ref: np.ndarray, k: int):
    """Constant and linear coefficient of the loss restricted to ``k`` positives.

    On labelings with ``k`` positive entries the F-losses are affine in ``y``:
    ``loss(y) = const + y'lin``. For F1, with ``den = V + y_ref'1 + 2k``, this
    is ``const = V/den`` and ``lin = -y_ref/den``. Two empty labelings have
    loss 0.
    """
    V = y_ref.shape[0]
    y_ref = y_ref.astype(float)
    p = int((y_ref > 0).sum())
    if kind.name == "f1":
        den = V + y_ref.sum() + 2 * k
        if den == 0:
            return 0.0, np.zeros(V)
        return V / den, -y_ref / den
    if kind.name == "fbeta":
        b2 = kind.beta ** 2
        den = 4.0 * (b2 * p + k)
        if den == 0:
            return 0.0, np.zeros(V)
        # true positives = (2p + 2k - V + y'y_ref) / 4 on this class
        return 1.0 - (1 + b2) * (2 * p + 2 * k - V) / den, -(1 + b2) * y_ref / den
    raise ValueError("cardinality split applies to F-losses only")


def loss_augmented_hamming(x, y_ref, params: ModelParams, decoder: str = "exhaustive",
                           options: Optional[DecoderOptions] = None,
                           seed: int = 0) -> LossAugmentedResult:
    """``max_y hamming(y, y_ref) + D(x, y)`` (relaxed for sdp/spectral decoders)."""
    return _augmented_hamming(_scores(x, params), np.asarray(y_ref), params.A,
                              resolve_decoder(decoder, params.V, params.sign_constraint),
                              options, seed)


def _augmented_hamming(s, y_ref, A, decoder, options, seed):
    V = s.shape[0]
    problem = QboProblem(A, s - y_ref / (2.0 * V))
    sol = decode(problem, decoder, options, seed)
    U = sol.relaxed_U if sol.relaxed_U is not None else np.outer(sol.relaxed_u, sol.relaxed_u)
    return LossAugmentedResult(sol.relaxed_u, U, 0.5 + sol.relaxation_value, solution=sol)


def loss_augmented_f1(x, y_ref, params: ModelParams, decoder: str = "exhaustive",
                      options: Optional[DecoderOptions] = None, seed: int = 0,
                      kind: LossKind = LossKind("f1")) -> LossAugmentedResult:
    """``max_y F-loss(y, y_ref) + D(x, y)`` through the split by cardinality."""
    return _augmented_fscore(_scores(x, params), np.asarray(y_ref), params.A,
                             resolve_decoder(decoder, params.V, params.sign_constraint),
                             options, seed, kind)


def _augmented_fscore(s, y_ref, A, decoder, options, seed, kind):
    V = s.shape[0]
    consts = np.empty(V + 1)
    values = np.empty(V + 1)
    best = None
    for k in range(V + 1):
        const, lin = cardinality_terms(kind, y_ref, k)
        problem = QboProblem.with_cardinality(A, s + lin, k)
        sol = decode(problem, decoder, options, seed + k)
        consts[k] = const
        values[k] = const + sol.relaxation_value
        if best is None or values[k] > values[best[0]]:
            best = (k, sol)
    k, sol = best
    U = sol.relaxed_U if sol.relaxed_U is not None else np.outer(sol.relaxed_u, sol.relaxed_u)
    return LossAugmentedResult(sol.relaxed_u, U, float(values[k]), k, consts, values, sol)


def _augment(s, y_ref, A, decoder, cfg: TrainConfig, seed):
    if cfg.loss.name == "hamming":
        return _augmented_hamming(s, y_ref, A, decoder, cfg.options, seed)
    return _augmented_fscore(s, y_ref, A, decoder, cfg.options, seed, cfg.loss)


def _augment_batch(S, Y, A, decoder, cfg: TrainConfig, seed):
    """Loss-augmented (u, U, value) for every row; exhaustive rows are vectorized."""
    N, V = S.shape
    if not np.any(A):
        return _augment_separable(S, Y, cfg.loss)
    if decoder == "exhaustive" and V <= 16:
        T = _labeling_table(V)
        quad = np.einsum("ij,ij->i", T @ A, T)
        TS = T @ S.T - quad[:, None]                     # D(x, y) for all y
        TY = T @ Y.T.astype(float)                       # y'y_i
        if cfg.loss.name == "hamming":
            L = (V - TY) / (2.0 * V)
        else:
            L = _f_losses(cfg.loss, T, Y.astype(float), TY)
        tot = L + TS
        idx = np.argmax(tot, axis=0)
        u = T[idx]
        U = u[:, :, None] * u[:, None, :]
        return u, U, tot[idx, np.arange(N)]
    us, Us, vals = [], [], []
    for i in range(N):
        r = _augment(S[i], Y[i], A, decoder, cfg, seed + 7919 * i)
        us.append(r.u)
        Us.append(r.U)
        vals.append(r.value)
    return np.array(us), np.array(Us), np.array(vals)


def _augment_separable(S, Y, kind: LossKind):
    """Closed-form loss-augmented decoding when the prior vanishes."""
    N, V = S.shape
    Yf = Y.astype(float)
    if kind.name == "hamming":
        c = S - Yf / (2.0 * V)
        u = np.where(c >= 0, 1.0, -1.0)
        vals = 0.5 + np.abs(c).sum(axis=1)
    else:
        u = np.empty((N, V))
        vals = np.empty(N)
        for i in range(N):
            best = -np.inf
            for k in range(V + 1):
                const, lin = cardinality_terms(kind, Yf[i], k)
                c = S[i] + lin
                order = np.argsort(-c, kind="stable")
                v = const + 2.0 * c[order[:k]].sum() - c.sum()
                if v > best:
                    best, top = v, order[:k]
            u[i] = -1.0
            u[i, top] = 1.0
            vals[i] = best
    return u, u[:, :, None] * u[:, None, :], vals


def _f_losses(kind, T, Y, TY):
    V = T.shape[1]
    npos_t = (T > 0).sum(axis=1)[:, None].astype(float)
    npos_y = (Y > 0).sum(axis=1)[None, :].astype(float)
    if kind.name == "f1":
        den = 2 * V + (2 * npos_y - V) + (2 * npos_t - V)
        with np.errstate(invalid="ignore", divide="ignore"):
            L = np.where(den == 0, 0.0, (V - TY) / np.where(den == 0, 1, den))
        return L
    b2 = kind.beta ** 2
    tp = (2 * npos_y + 2 * npos_t - V + TY) / 4.0
    den = b2 * npos_y + npos_t
    with np.errstate(invalid="ignore", divide="ignore"):
        L = np.where(den == 0, 0.0, 1 - (1 + b2) * tp / np.where(den == 0, 1, den))
    return L


def _discriminants(S, Y, A):
    Yf = Y.astype(float)
    return np.sum(Yf * S, axis=1) - np.einsum("ij,jk,ik->i", Yf, A, Yf)


def subgradient(X, Y, params: ModelParams, cfg: TrainConfig, decoder: Optional[str] = None,
                seed: int = 0):
    """Subgradients (dW, db, dA) of the objective on the batch ``(X, Y)``."""
    decoder = decoder or resolve_decoder(cfg.decoder, params.V, params.sign_constraint)
    S = params.scores(X)
    Y = np.asarray(Y)
    N = Y.shape[0]
    u, U, _ = _augment_batch(S, Y, params.A, decoder, cfg, seed)
    diff = u - Y
    gW = cfg.lambda_W * params.W + np.asarray(X.T @ diff if sp.issparse(X)
                                              else np.asarray(X).T @ diff) / N
    gb = diff.mean(axis=0)
    Yf = Y.astype(float)
    gA = cfg.lambda_A * params.A + (np.einsum("ij,ik->jk", Yf, Yf) - U.sum(axis=0)) / N
    for g in (gW, gb, gA):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError("non-finite subgradient; reduce step0 or check inputs")
    return gW, gb, gA


def subgradient_step(X, Y, params: ModelParams, cfg: TrainConfig, step: float,
                     decoder: Optional[str] = None, seed: int = 0) -> ModelParams:
    """One projected subgradient step on a mini-batch."""
    if np.asarray(Y).shape[0] == 0:
        raise ValueError("empty batch")
    gW, gb, gA = subgradient(X, Y, params, cfg, decoder, seed)
    A = project_prior(params.A - step * gA, params.sign_constraint)
    return ModelParams(params.W - step * gW, params.b - step * gb, A, params.sign_constraint)


def hinge_losses(X, Y, params: ModelParams, cfg: TrainConfig,
                 decoder: Optional[str] = None, seed: int = 0) -> np.ndarray:
    decoder = decoder or resolve_decoder(cfg.decoder, params.V, params.sign_constraint)
    S = params.scores(X)
    Y = np.asarray(Y)
    _, _, vals = _augment_batch(S, Y, params.A, decoder, cfg, seed)
    return np.maximum(vals - _discriminants(S, Y, params.A), 0.0)


def objective_eval(X, Y, params: ModelParams, cfg: TrainConfig,
                   decoder: Optional[str] = None, seed: int = 0) -> float:
    """Mean structural hinge plus the regularizers of ``W`` and ``A``."""
    h = hinge_losses(X, Y, params, cfg, decoder, seed)
    reg = 0.5 * cfg.lambda_W * float(np.sum(params.W ** 2)) \
        + 0.5 * cfg.lambda_A * float(np.sum(params.A ** 2))
    return float(h.mean()) + reg


def train(X, Y, cfg: TrainConfig, init: Optional[ModelParams] = None) -> TrainResult:
    """Projected stochastic subgradient descent with iterate averaging.

    Step sizes follow ``step0 / (1 + step0 * lambda_W * t)``; the returned
    parameters are the running average of the iterates unless
    ``cfg.average`` is off.
    """
    t0 = time.perf_counter()
    if sp.issparse(X):
        X = sp.csr_matrix(X)
    else:
        X = np.asarray(X, dtype=float)
    Y = np.asarray(Y)
    N, V = Y.shape
    if N == 0:
        raise ValueError("cannot train on an empty dataset")
    d = X.shape[1]
    decoder = resolve_decoder(cfg.decoder, V, cfg.sign_constraint)
    params = init.copy() if init is not None else ModelParams.zeros(d, V, cfg.sign_constraint)
    params.sign_constraint = cfg.sign_constraint
    params.A = project_prior(params.A, cfg.sign_constraint)
    avg = params.copy()
    rng = np.random.default_rng(cfg.seed)
    objectives: List[float] = []
    t = 0
    n_avg = 1 if cfg.average_start_epoch == 0 else 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(N)
        for start in range(0, N, cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            step = cfg.step0 / (1.0 + cfg.step0 * cfg.lambda_W * t)
            params = subgradient_step(X[idx], Y[idx], params, cfg, step, decoder,
                                      seed=int(rng.integers(2 ** 31)))
            t += 1
            if epoch < cfg.average_start_epoch:
                avg = params
                continue
            n_avg += 1
            w = 1.0 / n_avg
            avg = ModelParams((1 - w) * avg.W + w * params.W, (1 - w) * avg.b + w * params.b,
                              (1 - w) * avg.A + w * params.A, cfg.sign_constraint)
        current = avg if cfg.average else params
        if cfg.track_objective:
            objectives.append(objective_eval(X, Y, current, cfg, decoder, seed=cfg.seed))
            logger.info("epoch %d objective %.6f", epoch + 1, objectives[-1])
    final = avg if cfg.average else params
    return TrainResult(final, objectives, decoder, time.perf_counter() - t0)


def predict(X, params: ModelParams, decoder: str = "auto",
            options: Optional[DecoderOptions] = None, seed: int = 0) -> np.ndarray:
    """Decoded labelings (N x V, entries in {-1, +1}) for the rows of ``X``."""
    decoder = resolve_decoder(decoder, params.V, params.sign_constraint)
    S = params.scores(X)
    if not np.any(params.A):
        # separable: every decoder's optimum, with sign(0) := +1
        return np.where(S >= 0, 1, -1).astype(np.int8)
    if decoder == "exhaustive" and params.V <= 16:
        T = _labeling_table(params.V)
        quad = np.einsum("ij,ij->i", T @ params.A, T)
        idx = np.argmax(T @ S.T - quad[:, None], axis=0)
        return T[idx].astype(np.int8)
    out = np.empty(S.shape, dtype=np.int8)
    for i, s in enumerate(S):
        out[i] = decode(QboProblem(params.A, s), decoder, options, seed + i).rounded
    return out


def evaluate_predictions(pred: np.ndarray, Y: np.ndarray) -> dict:
    """Mean F1 and Hamming losses plus per-label error rates."""
    from .model import f_loss, F1, hamming_loss
    pred = np.asarray(pred)
    Y = np.asarray(Y)
    f1 = np.array([f_loss(F1, p, y) for p, y in zip(pred, Y)])
    ham = np.array([hamming_loss(p, y) for p, y in zip(pred, Y)])
    return {
        "n": int(Y.shape[0]),
        "f1_loss": float(f1.mean()) if len(f1) else float("nan"),
        "hamming_loss": float(ham.mean()) if len(ham) else float("nan"),
        "per_label_error": (pred != Y).mean(axis=0).tolist() if len(Y) else [],
        "per_instance_f1": f1.tolist(),
        "per_instance_hamming": ham.tolist(),
    }


def select_per_label(results: Sequence[ModelParams], errors: np.ndarray) -> ModelParams:
    """Combine decoupled models, taking for each label the one with least error.

    ``errors[m, v]`` is the validation error of model ``m`` on label ``v``.
    Only meaningful for models without a prior (``A = 0``).
    """
    best = np.argmin(errors, axis=0)
    W = np.stack([results[m].W[:, v] for v, m in enumerate(best)], axis=1)
    b = np.array([results[m].b[v] for v, m in enumerate(best)])
    V = b.shape[0]
    return ModelParams(W, b, np.zeros((V, V)), SignConstraint.ZERO)

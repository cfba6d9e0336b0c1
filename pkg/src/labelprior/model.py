"""Domain types, multi-label losses and the canonical decoding problem.

Labelings are numpy vectors with entries in {-1, +1}. Feature vectors are
either dense 1-D arrays or single rows of a ``scipy.sparse`` matrix.

The decoding score of a labeling ``y`` for features ``x`` is::

    D(x, y) = y'W'x + y'b - y'Ay

and every solver in the package works on the canonical two-way partitioning
problem ``max_u u'b - u'Au`` over ``u in {-1, 1}^V``, optionally subject to
one affine constraint ``u'alpha = beta``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp


class DimensionError(ValueError):
    """Raised when array shapes of labelings, features or parameters disagree."""


class SignConstraint(str, enum.Enum):
    ANY = "any"
    NONNEG = "nonneg"
    NONPOS = "nonpos"
    ZERO = "zero"


class SolverTag(str, enum.Enum):
    EXHAUSTIVE = "exhaustive"
    MINCUT = "mincut"
    CARDINALITY = "cardinality"
    SDP = "sdp"
    SPECTRAL = "spectral"
    SPECTRAL_QR = "spectral_qr"


def as_labeling(y, V: Optional[int] = None) -> np.ndarray:
    """Validate and return ``y`` as an int8 vector of signed units."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise DimensionError(f"labeling must be 1-D, got shape {y.shape}")
    if V is not None and y.shape[0] != V:
        raise DimensionError(f"labeling has length {y.shape[0]}, expected {V}")
    if not np.all((y == 1) | (y == -1)):
        raise ValueError("labeling entries must be -1 or +1")
    return y.astype(np.int8)


def sign_labeling(v) -> np.ndarray:
    """Entrywise sign with sign(0) := +1."""
    return np.where(np.asarray(v) >= 0, 1, -1).astype(np.int8)


def _dense_features(x, d: int) -> np.ndarray:
    if sp.issparse(x):
        x = x.toarray()
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != d:
        raise DimensionError(f"feature vector has dimension {x.shape[0]}, expected {d}")
    return x


@dataclass(frozen=True)
class LossKind:
    """Which multi-label loss to use: ``hamming``, ``f1`` or ``fbeta``."""

    name: str = "hamming"
    beta: float = 1.0

    def __post_init__(self):
        if self.name not in ("hamming", "f1", "fbeta"):
            raise ValueError(f"unknown loss {self.name!r}")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    @classmethod
    def parse(cls, text: str) -> "LossKind":
        text = text.lower()
        if text.startswith("f") and text not in ("f1",) and text[1:]:
            try:
                beta = float(text[1:])
            except ValueError:
                raise ValueError(f"cannot parse loss {text!r}") from None
            return cls("fbeta", beta)
        return cls(text)

    def __str__(self):
        return f"f{self.beta:g}" if self.name == "fbeta" else self.name


HAMMING = LossKind("hamming")
F1 = LossKind("f1")


def project_prior(A: np.ndarray, sign_constraint=SignConstraint.ANY) -> np.ndarray:
    """Symmetrize, zero the diagonal and clip to the sign-constraint orthant."""
    sign_constraint = SignConstraint(sign_constraint)
    A = 0.5 * (A + A.T)
    np.fill_diagonal(A, 0.0)
    if sign_constraint is SignConstraint.NONPOS:
        A = np.minimum(A, 0.0)
    elif sign_constraint is SignConstraint.NONNEG:
        A = np.maximum(A, 0.0)
    elif sign_constraint is SignConstraint.ZERO:
        A = np.zeros_like(A)
    return A


@dataclass
class ModelParams:
    """Per-label classifiers ``W`` (d x V), label bias ``b`` and prior ``A``.

    ``A`` is projected on construction so that it is exactly symmetric, has a
    zero diagonal and satisfies ``sign_constraint``.
    """

    W: np.ndarray
    b: np.ndarray
    A: np.ndarray
    sign_constraint: SignConstraint = SignConstraint.ANY

    def __post_init__(self):
        self.sign_constraint = SignConstraint(self.sign_constraint)
        self.W = np.array(self.W, dtype=float, ndmin=2)
        self.b = np.array(self.b, dtype=float).ravel()
        A = np.array(self.A, dtype=float)
        V = self.b.shape[0]
        if self.W.shape[1] != V or A.shape != (V, V):
            raise DimensionError(
                f"inconsistent shapes W{self.W.shape}, b({V},), A{A.shape}")
        self.A = project_prior(A, self.sign_constraint)
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))
                and np.all(np.isfinite(self.A))):
            raise ValueError("model parameters must be finite")

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def V(self) -> int:
        return self.b.shape[0]

    @classmethod
    def zeros(cls, d: int, V: int, sign_constraint=SignConstraint.ANY) -> "ModelParams":
        return cls(np.zeros((d, V)), np.zeros(V), np.zeros((V, V)), sign_constraint)

    def copy(self) -> "ModelParams":
        return ModelParams(self.W.copy(), self.b.copy(), self.A.copy(), self.sign_constraint)

    def scores(self, X) -> np.ndarray:
        """Unary scores ``W'x + b`` for every row of ``X`` (N x V)."""
        if sp.issparse(X):
            S = np.asarray(X @ self.W)
        else:
            S = np.atleast_2d(np.asarray(X, dtype=float)) @ self.W
        return S + self.b

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (self.sign_constraint == other.sign_constraint
                and np.array_equal(self.W, other.W)
                and np.array_equal(self.b, other.b)
                and np.array_equal(self.A, other.A))


@dataclass(frozen=True)
class QboProblem:
    """Canonical instance ``max u'b - u'Au`` s.t. optional ``u'alpha = beta``."""

    A: np.ndarray
    b: np.ndarray
    constraint: Optional[Tuple[np.ndarray, float]] = None

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float).ravel()
        if A.shape != (b.shape[0], b.shape[0]):
            raise DimensionError(f"A{A.shape} does not match b({b.shape[0]},)")
        A = 0.5 * (A + A.T)
        A = A - np.diag(np.diag(A))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if self.constraint is not None:
            alpha, beta = self.constraint
            alpha = np.asarray(alpha, dtype=float).ravel()
            if alpha.shape != b.shape:
                raise DimensionError("constraint vector has wrong length")
            object.__setattr__(self, "constraint", (alpha, float(beta)))

    @property
    def V(self) -> int:
        return self.b.shape[0]

    @classmethod
    def with_cardinality(cls, A, b, k: int) -> "QboProblem":
        """Problem restricted to labelings with exactly ``k`` positive entries."""
        V = len(b)
        if not 0 <= k <= V:
            raise ValueError(f"cardinality {k} outside [0, {V}]")
        return cls(A, b, (np.ones(V), 2 * k - V))

    @property
    def cardinality(self) -> Optional[int]:
        """``k`` when the constraint is ``u'1 = 2k - V`` (any positive scaling), else None."""
        if self.constraint is None:
            return None
        alpha, beta = self.constraint
        if alpha[0] == 0 or not np.all(alpha == alpha[0]):
            return None
        s = beta / alpha[0]
        k2 = s + self.V
        k = int(round(k2 / 2))
        if abs(k2 - 2 * k) > 1e-9 or not 0 <= k <= self.V:
            return None
        return k

    def objective(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(u @ self.b - u @ self.A @ u)

    def is_feasible(self, u, tol: float = 1e-9) -> bool:
        if self.constraint is None:
            return True
        alpha, beta = self.constraint
        return abs(float(np.asarray(u, dtype=float) @ alpha) - beta) <= tol * max(1.0, abs(beta))


@dataclass
class DecodeSolution:
    relaxed_u: np.ndarray
    relaxation_value: float
    rounded: np.ndarray
    rounded_value: float
    solver_tag: SolverTag
    relaxed_U: Optional[np.ndarray] = None
    approximate: bool = False
    info: dict = field(default_factory=dict)

    @classmethod
    def integral(cls, problem: QboProblem, u, tag: SolverTag, **kw) -> "DecodeSolution":
        """Solution of an exact solver: relaxed and rounded parts coincide."""
        u = as_labeling(u, problem.V)
        value = problem.objective(u)
        uf = u.astype(float)
        return cls(uf, value, u, value, SolverTag(tag), np.outer(uf, uf), **kw)


def discriminant(x, y, params: ModelParams) -> float:
    """Score ``y'W'x + y'b - y'Ay`` of labeling ``y`` for features ``x``."""
    y = as_labeling(y, params.V).astype(float)
    x = _dense_features(x, params.d)
    return float(y @ (params.W.T @ x) + y @ params.b - y @ params.A @ y)


def accuracy(y, y_ref) -> float:
    y, y_ref = _pair(y, y_ref)
    V = y.shape[0]
    return float((V + y @ y_ref) / (2 * V))


def hamming_loss(y, y_ref) -> float:
    y, y_ref = _pair(y, y_ref)
    V = y.shape[0]
    return float((V - y_ref @ y) / (2 * V))


def precision_recall(y, y_ref) -> Tuple[float, float]:
    """Precision and recall of ``y`` against ``y_ref``.

    An empty prediction has precision 0; an empty reference has recall 0,
    except that two empty labelings score (1, 1).
    """
    y, y_ref = _pair(y, y_ref)
    tp = (1 + y_ref) @ (1 + y)
    n_pred = (1 + y) @ (1 + y)
    n_ref = (1 + y_ref) @ (1 + y_ref)
    if n_pred == 0 and n_ref == 0:
        return 1.0, 1.0
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_ref if n_ref else 0.0
    return float(p), float(r)


def f_loss(kind: LossKind, y, y_ref) -> float:
    """Hamming, F1 or F-beta loss of ``y`` against ``y_ref``, in [0, 1]."""
    if kind.name == "hamming":
        return hamming_loss(y, y_ref)
    y, y_ref = _pair(y, y_ref)
    if kind.name == "f1":
        V = y.shape[0]
        den = 2 * V + y_ref.sum() + y.sum()
        if den == 0:
            return 0.0
        return float((V - y @ y_ref) / den)
    p, r = precision_recall(y, y_ref)
    if p == 0 and r == 0:
        return 1.0
    b2 = kind.beta ** 2
    return float(1 - (1 + b2) * p * r / (b2 * p + r))


def canonical_from_decode(x, params: ModelParams) -> QboProblem:
    """Decoding problem for ``x`` in canonical form (linear term ``W'x + b``)."""
    x = _dense_features(x, params.d)
    return QboProblem(params.A, params.W.T @ x + params.b)


def _pair(y, y_ref):
    y = np.asarray(y, dtype=float)
    y_ref = np.asarray(y_ref, dtype=float)
    if y.shape != y_ref.shape or y.ndim != 1:
        raise DimensionError(f"labelings have shapes {y.shape} and {y_ref.shape}")
    return y, y_ref

"""Spectral relaxation: replace ``u in {-1,1}^V`` by the sphere ``u'u = V``.

The inner problem ``max_{||u||^2 = r} u'c - u'Au`` is a trust-region
subproblem. Its multiplier ``lam`` satisfies ``(A - lam I) u = c/2`` with
``A - lam I >= 0``, and is the smallest real eigenvalue of the 2V x 2V
companion matrix::

    S = [[A, -I], [-cc'/(4r), A]]

which linearizes the quadratic eigenvalue problem
``(lam^2 I - 2 lam A + A^2 - cc'/(4r)) z = 0``.

An affine constraint ``u'alpha = beta`` is either dualized (bisection on the
convex dual function of the multiplier ``mu``) or eliminated by a QR change
of variables that leaves a single trust-region subproblem.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .model import DecodeSolution, QboProblem, SolverTag
from .sdp import round_to_feasible

logger = logging.getLogger(__name__)


class SpectralError(RuntimeError):
    pass


@dataclass
class TrsProblem:
    """``max u'c - u'Au`` subject to ``||u||^2 = radius_sq``."""

    A: np.ndarray
    c: np.ndarray
    radius_sq: float

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.c = np.asarray(self.c, dtype=float).ravel()
        if not self.radius_sq > 0:
            raise ValueError("radius_sq must be positive")
        if self.A.shape != (self.c.shape[0],) * 2:
            raise ValueError("A and c shapes disagree")
        self.A = 0.5 * (self.A + self.A.T)

    def value(self, u) -> float:
        return float(u @ self.c - u @ self.A @ u)


@dataclass
class SpectralConfig:
    method: str = "bisection"   # "bisection" or "qr" for constrained problems
    grad_tol: float = 1e-6
    max_iter: int = 100
    mu_cap: float = 1e6
    check_convexity: bool = False


def companion_matrix(A: np.ndarray, c: np.ndarray, radius_sq: float) -> np.ndarray:
    V = A.shape[0]
    I = np.eye(V)
    return np.block([[A, -I], [-np.outer(c, c) / (4.0 * radius_sq), A]])


def trs_solve(p: TrsProblem, hard_tol: float = 1e-10) -> Tuple[np.ndarray, float, float]:
    """Global solution ``(u, value, lam)`` of the trust-region subproblem."""
    A, c, r = p.A, p.c, p.radius_sq
    V = c.shape[0]
    evals, Q = np.linalg.eigh(A)
    lam_min = evals[0]
    scale = max(1.0, float(np.abs(evals).max()))
    bottom = evals <= lam_min + 1e-10 * scale
    qc = Q.T @ c
    cnorm = float(np.linalg.norm(c))
    if np.linalg.norm(qc[bottom]) <= hard_tol * cnorm or cnorm == 0.0:
        # c (numerically) orthogonal to the bottom eigenspace
        coef = np.zeros(V)
        coef[~bottom] = 0.5 * qc[~bottom] / (evals[~bottom] - lam_min)
        slack = r - float(coef @ coef)
        if slack >= 0.0:
            coef[np.argmax(bottom)] = math.sqrt(slack)
            u = Q @ coef
            return u, p.value(u), float(lam_min)
    S = companion_matrix(A, c, r)
    try:
        mu = np.linalg.eigvals(S)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"eigenvalue solver failed: {exc}") from exc
    real = mu[np.abs(mu.imag) <= 1e-7 * max(scale, cnorm * cnorm / r)].real
    if real.size == 0:
        raise SpectralError("companion matrix has no real eigenvalue")
    lam = min(float(real.min()), lam_min - 1e-14 * scale)
    lam = _polish(evals, qc, r, lam)
    coef = 0.5 * qc / (evals - lam)
    # the bottom coefficients are ill-conditioned near the hard case: fill
    # them from the norm constraint along the direction of c's projection
    rest = float(coef[~bottom] @ coef[~bottom])
    if rest <= r:
        cb = qc[bottom]
        coef[bottom] = cb / np.linalg.norm(cb) * math.sqrt(r - rest)
    else:
        coef *= math.sqrt(r / float(coef @ coef))
    u = Q @ coef
    return u, p.value(u), lam


def _polish(evals, qc, r, lam, steps=5):
    """Newton steps on ``1/||u(lam)|| - 1/sqrt(r)``, kept left of the spectrum."""
    for _ in range(steps):
        d = evals - lam
        if np.any(d <= 0):
            break
        w = 0.5 * qc / d
        n2 = float(w @ w)
        if n2 == 0:
            break
        dn2 = float(2 * np.sum(w * w / d))   # d ||u||^2 / d lam
        phi = 1 / math.sqrt(n2) - 1 / math.sqrt(r)
        dphi = -0.5 * n2 ** -1.5 * dn2
        new = lam - phi / dphi
        if not np.isfinite(new) or new >= evals[0]:
            new = 0.5 * (lam + evals[0])
        if abs(new - lam) <= 1e-15 * max(1.0, abs(lam)):
            lam = new
            break
        lam = new
    return lam


# -- decoding ------------------------------------------------------------------


def _boundary_point(problem: QboProblem):
    """Single point of the sphere on the hyperplane when it is tangent, else None."""
    alpha, beta = problem.constraint
    V = problem.V
    na = float(np.linalg.norm(alpha))
    reach = na * math.sqrt(V)
    if abs(beta) > reach * (1 + 1e-12):
        raise SpectralError(f"constraint u'alpha = {beta} does not meet the sphere")
    if abs(abs(beta) - reach) <= 1e-12 * reach:
        return beta * alpha / (na * na)
    return None


def _rounded(problem: QboProblem, u: np.ndarray) -> np.ndarray:
    lab = round_to_feasible(problem, u)
    if lab is None:
        raise SpectralError("sign rounding violates a non-cardinality constraint")
    return lab


def _solution(problem, u, value, tag, **info) -> DecodeSolution:
    lab = _rounded(problem, u)
    return DecodeSolution(u, float(value), lab, problem.objective(lab), tag,
                          np.outer(u, u), info=info)


def spectral_decode(problem: QboProblem, cfg: Optional[SpectralConfig] = None) -> DecodeSolution:
    """Spectral relaxation followed by sign (or top-k) rounding.

    ``relaxation_value`` is an upper bound on the sphere problem: the single
    solve for unconstrained problems, the best dual value found otherwise.
    """
    cfg = cfg or SpectralConfig()
    V = problem.V
    if problem.constraint is None:
        u, val, lam = trs_solve(TrsProblem(problem.A, problem.b, V))
        return _solution(problem, u, val, SolverTag.SPECTRAL, lam=lam)
    alpha, beta = problem.constraint
    if not np.any(alpha):
        raise ValueError("constraint vector alpha must be nonzero")
    point = _boundary_point(problem)
    if point is not None:
        return _solution(problem, point, problem.objective(point), SolverTag.SPECTRAL, mu=None)
    if cfg.method == "qr":
        return spectral_decode_qr(problem)

    def dual(mu):
        u, val, _ = trs_solve(TrsProblem(problem.A, problem.b - mu * alpha, V))
        return mu * beta + val, beta - float(alpha @ u), u

    best = [np.inf, None, None, None]
    history = []

    def evaluate(mu):
        g, dg, u = dual(mu)
        history.append((mu, g))
        if g < best[0]:
            best[:] = [g, u, mu, dg]
        return dg

    lo, hi = -1.0, 1.0
    dlo, dhi = evaluate(lo), evaluate(hi)
    while dlo > 0 and abs(lo) <= cfg.mu_cap:
        hi, dhi = lo, dlo
        lo *= 2.0
        dlo = evaluate(lo)
    while dhi < 0 and abs(hi) <= cfg.mu_cap:
        lo, dlo = hi, dhi
        hi *= 2.0
        dhi = evaluate(hi)
    if dlo > 0 or dhi < 0:
        raise SpectralError(f"could not bracket the dual minimizer within |mu| <= {cfg.mu_cap}:"
                            f" slopes {dlo:.3g} at {lo:g}, {dhi:.3g} at {hi:g}")
    iters = 0
    for iters in range(1, cfg.max_iter + 1):
        mid = 0.5 * (lo + hi)
        dm = evaluate(mid)
        if abs(dm) <= cfg.grad_tol:
            break
        if dm > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * max(1.0, abs(mid)):
            break
    if cfg.check_convexity:
        _check_convexity(history)
    g, u, mu, dg = best
    return _solution(problem, u, g, SolverTag.SPECTRAL, mu=mu, iterations=iters,
                     subgradient=dg, converged=abs(dg) <= cfg.grad_tol)


def _check_convexity(history):
    pts = sorted(history)
    for (m0, g0), (m1, g1), (m2, g2) in zip(pts, pts[1:], pts[2:]):
        if m2 - m0 <= 0:
            continue
        interp = g0 + (g2 - g0) * (m1 - m0) / (m2 - m0)
        if g1 > interp + 1e-7 * (1 + abs(interp)):
            raise SpectralError(f"dual function not convex near mu={m1}")


@dataclass
class QrReducedProblem:
    """Affine constraint eliminated by ``v = (u, 1) = Q w``, ``w = (w_fixed, w_free)``."""

    Q: np.ndarray
    R: np.ndarray
    fixed: np.ndarray       # the two coordinates pinned by the constraints
    delta: np.ndarray       # 2 x 2 block of Q'BQ
    gamma: np.ndarray       # twice the off-diagonal block, 2 x (V-1)
    C: np.ndarray           # free block of Q'BQ
    slack: float            # squared norm left for the free part

    @classmethod
    def from_problem(cls, problem: QboProblem) -> "QrReducedProblem":
        alpha, beta = problem.constraint
        V = problem.V
        if not np.any(alpha):
            raise ValueError("constraint vector alpha must be nonzero")
        B = np.zeros((V + 1, V + 1))
        B[:V, :V] = -problem.A
        B[:V, V] = B[V, :V] = 0.5 * problem.b
        N = np.zeros((V + 1, 2))
        N[:V, 0] = alpha
        N[V, 1] = 1.0
        Q, R = np.linalg.qr(N, mode="complete")
        fixed = np.linalg.solve(R[:2].T, np.array([beta, 1.0]))
        QBQ = Q.T @ B @ Q
        # ||u||^2 = ||v||^2 - 1 = ||w||^2 - 1
        slack = V + 1.0 - float(fixed @ fixed)
        return cls(Q, R, fixed, QBQ[:2, :2], 2.0 * QBQ[:2, 2:], QBQ[2:, 2:], slack)


def qr_relaxation(problem: QboProblem):
    """Relaxed optimum ``(u, value, lam, slack)`` on the sphere and the hyperplane."""
    if problem.constraint is None:
        raise ValueError("the QR variant needs an affine constraint")
    red = QrReducedProblem.from_problem(problem)
    V = problem.V
    if red.slack <= 1e-12 * V or V < 2:
        raise SpectralError(f"constraint leaves no room on the sphere (slack {red.slack:.3g})")
    w2, val2, lam = trs_solve(TrsProblem(-red.C, red.gamma.T @ red.fixed, red.slack))
    value = val2 + float(red.fixed @ red.delta @ red.fixed)
    v = red.Q @ np.concatenate([red.fixed, w2])
    return v[:V] / v[V], value, lam, red.slack


def spectral_decode_qr(problem: QboProblem) -> DecodeSolution:
    """Constrained spectral relaxation solved as one reduced trust-region problem."""
    u, value, lam, slack = qr_relaxation(problem)
    return _solution(problem, u, value, SolverTag.SPECTRAL_QR, lam=lam, slack=slack)

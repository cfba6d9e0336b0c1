"""Semidefinite relaxation of the canonical problem and Gaussian rounding.

With ``M = [[U, u], [u', 1]]`` the relaxation reads::

    max  <C, M>   s.t.  diag(M) = 1,  M >= 0,  alpha' M e_V = beta
    C = [[-A, b/2], [b'/2, 0]]

Two primal solvers are provided: an ADMM on the dual with one
eigendecomposition per iteration (``backend="admm"``), and a low-rank
Burer-Monteiro factorization ``M = RR'`` with unit-norm rows
(``backend="bm"``). Both finish by turning their multipliers into a
dual-feasible point, so ``SdpSolution.value`` is always a certified upper
bound on the relaxation (and therefore on the discrete maximum).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .model import DecodeSolution, QboProblem, SolverTag, sign_labeling

logger = logging.getLogger(__name__)


class SdpConvergenceError(RuntimeError):
    def __init__(self, message, residuals):
        super().__init__(f"{message}: {residuals}")
        self.residuals = residuals


@dataclass
class SdpConfig:
    backend: str = "auto"       # "admm", "bm" or "auto" (admm for V <= 50)
    tol: float = 1e-5           # relative primal/dual/gap tolerance
    max_iter: int = 20000
    psd_floor: float = 1e-10
    rank: Optional[int] = None  # Burer-Monteiro rank, default ceil(sqrt(2n)) + 1
    seed: int = 0
    strict: bool = False        # raise instead of warning on non-convergence


@dataclass
class SdpInstance:
    C: np.ndarray
    E: Optional[np.ndarray]     # symmetric matrix of the affine row, or None
    beta: float

    @classmethod
    def from_problem(cls, problem: QboProblem) -> "SdpInstance":
        V = problem.V
        C = np.zeros((V + 1, V + 1))
        C[:V, :V] = -problem.A
        C[:V, V] = C[V, :V] = 0.5 * problem.b
        if problem.constraint is None:
            return cls(C, None, 0.0)
        alpha, beta = problem.constraint
        E = np.zeros((V + 1, V + 1))
        E[:V, V] = E[V, :V] = 0.5 * alpha
        return cls(C, E, beta)

    @property
    def n(self) -> int:
        return self.C.shape[0]


@dataclass
class SdpSolution:
    u: np.ndarray
    U: np.ndarray
    value: float                # certified upper bound
    primal_value: float
    residuals: dict = field(default_factory=dict)
    converged: bool = True

    @property
    def M(self) -> np.ndarray:
        V = self.u.shape[0]
        M = np.empty((V + 1, V + 1))
        M[:V, :V] = self.U
        M[:V, V] = M[V, :V] = self.u
        M[V, V] = 1.0
        return M


def _eigh_split(G):
    w, Q = np.linalg.eigh(G)
    pos = np.clip(w, 0, None)
    return (Q * pos) @ Q.T, (Q * (pos - w)) @ Q.T  # G_+, (-G)_+


def _certified_bound(inst: SdpInstance, y: np.ndarray, nu: float) -> float:
    """Dual objective after shifting ``y`` so that ``Diag(y) + nu E - C >= 0``."""
    Z = np.diag(y) - inst.C
    if inst.E is not None:
        Z = Z + nu * inst.E
    lam = np.linalg.eigvalsh(Z)[0]
    shift = max(0.0, -lam)
    return float(y.sum() + inst.n * shift + nu * inst.beta)


def _solve_admm(inst: SdpInstance, cfg: SdpConfig):
    n = inst.n
    C, E = inst.C, inst.E
    has_row = E is not None
    eE = float(np.sum(E * E)) if has_row else 1.0

    def opA(X):
        r = np.diag(X).copy()
        return r, (float(np.sum(E * X)) if has_row else 0.0)

    def opAt(y, nu):
        Z = np.diag(y)
        return Z + nu * E if has_row else Z

    X = np.eye(n)
    Z = np.zeros((n, n))
    y = np.zeros(n)
    nu = 0.0
    sigma = 1.0
    normC = 1.0 + np.linalg.norm(C)
    normr = 1.0 + math.sqrt(n + inst.beta ** 2)
    res = {}
    it = 0
    for it in range(1, cfg.max_iter + 1):
        # y-step: (AA*) is diagonal here (unit for diag rows, ||E||^2 for the row)
        ax, ex = opA(X)
        cz_d, cz_e = opA(C + Z)
        y = (ax - 1.0) / sigma + cz_d
        if has_row:
            nu = ((ex - inst.beta) / sigma + cz_e) / eE
        G = opAt(y, nu) - C - X / sigma
        Z, Xn = _eigh_split(G)
        X = sigma * Xn
        if it % 10 == 0 or it == cfg.max_iter:
            ax, ex = opA(X)
            pinf = math.sqrt(np.sum((ax - 1) ** 2) + (ex - inst.beta) ** 2) / normr
            dinf = np.linalg.norm(opAt(y, nu) - C - Z) / normC
            pobj = float(np.sum(C * X))
            dobj = float(y.sum() + nu * inst.beta)
            gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
            res = {"primal": pinf, "dual": dinf, "gap": gap, "iterations": it}
            if max(pinf, dinf, gap) < cfg.tol:
                break
            # keep primal and dual residuals balanced
            if pinf > 5 * dinf:
                sigma /= 1.6
            elif dinf > 5 * pinf:
                sigma *= 1.6
    converged = bool(res) and max(res["primal"], res["dual"], res["gap"]) < cfg.tol
    return X, y, nu, res, converged


def _solve_bm(inst: SdpInstance, cfg: SdpConfig):
    n = inst.n
    C, E = inst.C, inst.E
    has_row = E is not None
    r = cfg.rank or int(math.ceil(math.sqrt(2 * n))) + 1
    rng = np.random.default_rng(cfg.seed)
    P0 = rng.standard_normal((n, r))
    nu, rho = 0.0, 10.0
    scale = 1.0 + np.abs(C).max()

    def rows(P):
        return P / np.linalg.norm(P, axis=1, keepdims=True)

    def h(R):
        return float(np.sum(E * (R @ R.T)) - inst.beta) if has_row else 0.0

    def riemannian(R, K):
        G = 2.0 * K @ R
        return G - np.sum(G * R, axis=1, keepdims=True) * R

    def negated(p):
        # unit rows are parametrized as P_i / ||P_i||, optimized by L-BFGS
        P = p.reshape(n, r)
        norms = np.linalg.norm(P, axis=1, keepdims=True)
        R = P / norms
        hv = h(R)
        K = C - (nu + rho * hv) * E if has_row else C
        val = float(np.sum(C * (R @ R.T)))
        if has_row:
            val -= nu * hv + 0.5 * rho * hv * hv
        return -val, -(riemannian(R, K) / norms).ravel()

    res = {}
    total = 0
    P = P0
    for outer in range(60):
        opt = minimize(negated, P.ravel(), jac=True, method="L-BFGS-B",
                       options={"maxiter": cfg.max_iter, "gtol": 1e-3 * cfg.tol * scale,
                                "ftol": 1e-15})
        total += int(opt.nit)
        P = rows(opt.x.reshape(n, r))
        hv = h(P)
        res = {"affine": abs(hv), "iterations": total, "outer": outer + 1}
        if not has_row or abs(hv) < 1e-2 * cfg.tol * (1 + abs(inst.beta)):
            break
        nu += rho * hv
        rho = min(rho * 4.0, 1e8)
    R = P
    if has_row:
        nu = nu + rho * h(R)
    K = C - nu * E if has_row else C
    res["grad"] = float(np.linalg.norm(riemannian(R, K)))
    y = np.sum((K @ R) * R, axis=1)
    X = R @ R.T
    converged = res["grad"] < 10 * cfg.tol * scale and (
        not has_row or res["affine"] < cfg.tol * (1 + abs(inst.beta)))
    return X, y, nu, res, converged


def sdp_solve(problem: QboProblem, cfg: Optional[SdpConfig] = None) -> SdpSolution:
    """Solve the relaxation; ``value`` is a certified bound, ``u``/``U`` the primal point."""
    cfg = cfg or SdpConfig()
    if problem.V < 1:
        raise ValueError("empty problem")
    if cfg.tol <= 0 or cfg.psd_floor <= 0:
        raise ValueError("tolerances must be positive")
    inst = SdpInstance.from_problem(problem)
    backend = cfg.backend
    if backend == "auto":
        backend = "admm" if problem.V <= 50 else "bm"
    if backend == "admm":
        X, y, nu, res, converged = _solve_admm(inst, cfg)
    elif backend == "bm":
        X, y, nu, res, converged = _solve_bm(inst, cfg)
    else:
        raise ValueError(f"unknown SDP backend {backend!r}")
    res["backend"] = backend
    if not converged:
        if cfg.strict:
            raise SdpConvergenceError("SDP solver did not converge", res)
        logger.warning("SDP solver did not reach tolerance %g: %s", cfg.tol, res)
    # rescale to an exactly unit diagonal; this keeps X PSD
    dg = np.sqrt(np.clip(np.diag(X), cfg.psd_floor, None))
    M = X / np.outer(dg, dg)
    M = 0.5 * (M + M.T)
    V = problem.V
    bound = _certified_bound(inst, y, nu)
    primal = float(np.sum(inst.C * M))
    res["certificate_gap"] = bound - primal
    return SdpSolution(M[:V, V].copy(), M[:V, :V].copy(), bound, primal, res, converged)


def _project_cardinality(v: np.ndarray, k: int) -> np.ndarray:
    """Labeling with +1 on the ``k`` largest entries of ``v`` (stable order)."""
    out = -np.ones(v.shape[0], dtype=np.int8)
    if k:
        out[np.argsort(-v, kind="stable")[:k]] = 1
    return out


def round_to_feasible(problem: QboProblem, v: np.ndarray) -> Optional[np.ndarray]:
    """Sign rounding, projected onto the cardinality constraint when present.

    Returns None when ``problem`` carries a non-cardinality constraint that
    the signs of ``v`` violate.
    """
    k = problem.cardinality
    if k is not None:
        return _project_cardinality(v, k)
    u = sign_labeling(v)
    if problem.constraint is not None and not problem.is_feasible(u):
        return None
    return u


def gaussian_round(sol: SdpSolution, problem: QboProblem, n_samples: int = 100,
                   seed: int = 0) -> DecodeSolution:
    """Best feasible sign pattern among samples of ``N(u, U - uu')`` and ``sign(u)``."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    u, U = sol.u, sol.U
    cov = U - np.outer(u, u)
    w, Q = np.linalg.eigh(0.5 * (cov + cov.T))
    L = Q * np.sqrt(np.clip(w, 0, None))
    rng = np.random.default_rng(seed)
    samples = u + rng.standard_normal((n_samples, u.shape[0])) @ L.T
    best, best_val, best_idx = None, -np.inf, -1
    for idx, v in enumerate(np.vstack([u, samples])):
        cand = round_to_feasible(problem, v)
        if cand is None:
            continue
        val = problem.objective(cand)
        if val > best_val:
            best, best_val, best_idx = cand, val, idx
    if best is None:
        raise ValueError("no feasible rounding found for the affine constraint")
    out = DecodeSolution(u.copy(), sol.value, best, problem.objective(best), SolverTag.SDP,
                         U.copy(), info={"residuals": sol.residuals, "sample": best_idx - 1,
                                         "converged": sol.converged})
    return out


def sdp_decode(problem: QboProblem, cfg: Optional[SdpConfig] = None, n_samples: int = 100,
               seed: int = 0) -> DecodeSolution:
    return gaussian_round(sdp_solve(problem, cfg), problem, n_samples, seed)

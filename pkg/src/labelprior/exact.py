"""Exact solvers: enumeration, min-cut and cardinality-constrained min-cut.

For a prior with non-positive off-diagonal entries, substituting
``u = 2z - 1`` turns ``min_u u'Au - u'b`` into::

    sum_{i<j} w_ij |z_i - z_j| - 2 b'z + (1'A1 + 1'b),     w_ij = -4 A_ij >= 0

i.e. a graph cut plus unary terms, solved by s-t max-flow. The cardinality
constrained variant is solved through the proximal (total variation) problem
whose level sets contain the minimizers of the Lagrangian for every
multiplier.
"""
from __future__ import annotations

import functools
import logging
from dataclasses import dataclass
from typing import Iterator, List, Tuple

import networkx as nx
import numpy as np
from networkx.algorithms.flow import boykov_kolmogorov

from .model import DecodeSolution, QboProblem, SolverTag

logger = logging.getLogger(__name__)

MAX_EXHAUSTIVE_V = 25
_CHUNK_BITS = 16


class InfeasibleProblemError(ValueError):
    pass


class NotSubmodularError(ValueError):
    pass


@functools.lru_cache(maxsize=32)
def _labeling_table(V: int) -> np.ndarray:
    codes = np.arange(2 ** V, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(V)) & 1
    Y = (2 * bits - 1).astype(float)
    Y.setflags(write=False)
    return Y


def enumerate_labelings(V: int) -> Iterator[np.ndarray]:
    """Yield all of ``{-1, 1}^V`` in chunks, in binary counting order.

    Code ``c`` maps to ``u_i = +1`` iff bit ``i`` of ``c`` is set (bit 0 is
    the least significant), so the all-(-1) labeling comes first.
    """
    if V <= _CHUNK_BITS:
        yield _labeling_table(V)
        return
    low = _labeling_table(_CHUNK_BITS)
    for high in range(2 ** (V - _CHUNK_BITS)):
        hbits = (high >> np.arange(V - _CHUNK_BITS)) & 1
        hi = np.broadcast_to(2.0 * hbits - 1, (low.shape[0], V - _CHUNK_BITS))
        yield np.hstack([low, hi])


def _feasible_mask(problem: QboProblem, Y: np.ndarray) -> np.ndarray:
    alpha, beta = problem.constraint
    return np.abs(Y @ alpha - beta) <= 1e-9 * max(1.0, abs(beta))


def exhaustive_decode(problem: QboProblem) -> DecodeSolution:
    """Exact maximizer by enumeration; ties go to the first labeling visited."""
    V = problem.V
    if V > MAX_EXHAUSTIVE_V:
        raise ValueError(f"exhaustive decoding limited to V <= {MAX_EXHAUSTIVE_V}, got {V}")
    best_val, best_u = -np.inf, None
    for Y in enumerate_labelings(V):
        vals = Y @ problem.b - np.einsum("ij,ij->i", Y @ problem.A, Y)
        if problem.constraint is not None:
            vals = np.where(_feasible_mask(problem, Y), vals, -np.inf)
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val, best_u = vals[i], Y[i]
    if best_u is None:
        raise InfeasibleProblemError("no labeling satisfies the constraint")
    return DecodeSolution.integral(problem, best_u, SolverTag.EXHAUSTIVE)


# -- min-cut -------------------------------------------------------------------


def _min_cut(weights: np.ndarray, unary: np.ndarray) -> Tuple[float, np.ndarray]:
    """Minimize ``sum_{i<j} w_ij |z_i - z_j| + unary'z`` over binary ``z``.

    Returns the minimum value and the minimizer as a boolean array. ``z_i = 1``
    is the source side of the cut.
    """
    n = unary.shape[0]
    G = nx.DiGraph()
    G.add_nodes_from(range(n + 2))
    s, t = n, n + 1
    const = 0.0
    for i in range(n):
        h = unary[i]
        if h > 0:
            G.add_edge(i, t, capacity=h)
        elif h < 0:
            G.add_edge(s, i, capacity=-h)
            const += h
    ii, jj = np.nonzero(np.triu(weights, 1) > 0)
    for i, j in zip(ii.tolist(), jj.tolist()):
        w = weights[i, j]
        G.add_edge(i, j, capacity=w)
        G.add_edge(j, i, capacity=w)
    R = boykov_kolmogorov(G, s, t, capacity="capacity")
    cut_value = R.graph["flow_value"]
    # source side: nodes reachable from s in the residual graph
    seen = {s}
    stack = [s]
    while stack:
        v = stack.pop()
        for w_, attr in R[v].items():
            if w_ not in seen and attr["capacity"] - attr["flow"] > 1e-12:
                seen.add(w_)
                stack.append(w_)
    z = np.zeros(n, dtype=bool)
    for v in seen:
        if v < n:
            z[v] = True
    return cut_value + const, z


@dataclass(frozen=True)
class CutGraph:
    """s-t cut encoding of a problem with a non-positive prior.

    ``weights[i, j] = -4 A_ij`` are the pairwise capacities and ``unary = -2b``
    the unary costs of putting a label on the source (positive) side. For every
    labeling, ``cut_energy(z) + constant = -objective(u)``.
    """

    weights: np.ndarray
    unary: np.ndarray
    constant: float

    @classmethod
    def from_problem(cls, problem: QboProblem) -> "CutGraph":
        A, b = problem.A, problem.b
        off = A[~np.eye(problem.V, dtype=bool)]
        if np.any(off > 0):
            raise NotSubmodularError("min-cut decoding needs non-positive off-diagonal A")
        return cls(-4.0 * A, -2.0 * b, float(A.sum() + b.sum()))

    def cut_energy(self, z) -> float:
        z = np.asarray(z, dtype=float)
        diff = np.abs(z[:, None] - z[None, :])
        return float(0.5 * np.sum(self.weights * diff) + self.unary @ z)

    def solve(self) -> Tuple[float, np.ndarray]:
        return _min_cut(self.weights, self.unary)


def mincut_decode(problem: QboProblem) -> DecodeSolution:
    """Exact decoding by max-flow; requires ``A_ij <= 0`` off the diagonal."""
    if problem.constraint is not None:
        raise ValueError("mincut_decode handles unconstrained problems; "
                         "use cardinality_decode_nonpos for cardinality constraints")
    graph = CutGraph.from_problem(problem)
    energy, z = graph.solve()
    u = np.where(z, 1, -1)
    return DecodeSolution.integral(problem, u, SolverTag.MINCUT,
                                   info={"cut_energy": energy, "constant": graph.constant})


# -- total variation prox / cardinality constraint -----------------------------


@dataclass(frozen=True)
class TvProxResult:
    """Minimizer of ``0.5 ||u - g||^2 + J(u)``.

    ``J`` is the Lovasz extension of ``z -> 4 z'Az``, i.e. the weighted total
    variation ``sum_{i<j} -4A_ij |u_i - u_j|`` plus the linear term ``4(A1)'u``.
    """

    u_star: np.ndarray
    breakpoints: np.ndarray
    g: np.ndarray
    levels: Tuple[Tuple[int, ...], ...]  # blocks of equal value, decreasing


def tv_prox(A: np.ndarray, b: np.ndarray, tol: float = 1e-10) -> TvProxResult:
    """Solve the prox problem for target ``g = 4A1 + 2b`` by divide and conquer.

    Each step merges a subset at its mean target and splits it with one
    min-cut; a subset that the cut does not split is a constant block of the
    solution. Targets are adjusted by the weights crossing each split.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    V = b.shape[0]
    W = -4.0 * A
    np.fill_diagonal(W, 0.0)
    if np.any(W < 0):
        raise NotSubmodularError("TV prox needs non-positive off-diagonal A")
    g = 4.0 * A.sum(axis=1) + 2.0 * b
    u = np.empty(V)
    scale = max(1.0, float(np.abs(b).max(initial=0.0)), float(W.max(initial=0.0)))
    blocks: List[Tuple[float, Tuple[int, ...]]] = []
    # targets of the pure-TV problem: the linear part of J shifts g by -4A1
    stack = [(np.arange(V), 2.0 * b)]
    while stack:
        S, t = stack.pop()
        alpha = t.mean()
        if S.size > 1:
            WS = W[np.ix_(S, S)]
            val, z = _min_cut(WS, alpha - t)
        else:
            val, z = 0.0, np.zeros(1, dtype=bool)
        if val >= -tol * scale * S.size or z.all() or not z.any():
            u[S] = alpha
            blocks.append((alpha, tuple(S.tolist())))
            continue
        hi, lo = S[z], S[~z]
        t_hi = t[z] - W[np.ix_(hi, lo)].sum(axis=1)
        t_lo = t[~z] + W[np.ix_(lo, hi)].sum(axis=1)
        stack.append((hi, t_hi))
        stack.append((lo, t_lo))
    # merge numerically equal blocks
    blocks.sort(key=lambda blk: -blk[0])
    merged: List[Tuple[float, List[int]]] = []
    for val, idx in blocks:
        if merged and abs(merged[-1][0] - val) <= 1e-9 * scale:
            merged[-1][1].extend(idx)
        else:
            merged.append((val, list(idx)))
    breakpoints = np.array(sorted(m[0] for m in merged))
    levels = tuple(tuple(sorted(m[1])) for m in merged)
    return TvProxResult(u, breakpoints, g, levels)


def threshold_labelings(prox: TvProxResult) -> List[np.ndarray]:
    """Nested labelings ``1{u* >= theta}`` for every level, from empty to full."""
    V = prox.u_star.shape[0]
    out = [-np.ones(V, dtype=np.int8)]
    cur = out[0].copy()
    for block in prox.levels:
        cur = cur.copy()
        cur[list(block)] = 1
        out.append(cur)
    return out


def _greedy_to_cardinality(problem: QboProblem, u: np.ndarray, k: int) -> np.ndarray:
    u = u.astype(float).copy()
    while int((u > 0).sum()) != k:
        flip_to = 1.0 if (u > 0).sum() < k else -1.0
        cand = np.nonzero(u != flip_to)[0]
        best_i, best_v = -1, -np.inf
        for i in cand:
            u[i] = flip_to
            v = problem.objective(u)
            u[i] = -flip_to
            if v > best_v:
                best_i, best_v = i, v
        u[best_i] = flip_to
    return u.astype(np.int8)


def cardinality_decode_nonpos(problem: QboProblem, k: int = None) -> DecodeSolution:
    """Best labeling with exactly ``k`` positive labels, for a non-positive prior.

    The threshold labelings of the prox solution are exact minimizers of the
    Lagrangian; when one of them has cardinality ``k`` it is optimal. Otherwise
    the nearest thresholds are greedily repaired and the result is flagged
    ``approximate``.
    """
    if k is None:
        k = problem.cardinality
        if k is None:
            raise ValueError("problem does not carry a cardinality constraint")
    V = problem.V
    if not 0 <= k <= V:
        raise InfeasibleProblemError(f"cardinality {k} outside [0, {V}]")
    prox = tv_prox(problem.A, problem.b)
    cands = threshold_labelings(prox)
    sizes = [int((c > 0).sum()) for c in cands]
    cp = QboProblem.with_cardinality(problem.A, problem.b, k)
    info = {"breakpoints": prox.breakpoints, "attained": sizes}
    if k in sizes:
        return DecodeSolution.integral(cp, cands[sizes.index(k)], SolverTag.CARDINALITY,
                                       info=info)
    lo = max(i for i, s in enumerate(sizes) if s < k)
    repaired = [_greedy_to_cardinality(cp, cands[lo], k),
                _greedy_to_cardinality(cp, cands[lo + 1], k)]
    u = max(repaired, key=cp.objective)
    logger.debug("cardinality %d not attained by thresholds %s; greedy repair", k, sizes)
    return DecodeSolution.integral(cp, u, SolverTag.CARDINALITY, approximate=True, info=info)

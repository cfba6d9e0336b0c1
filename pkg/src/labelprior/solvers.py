"""Dispatch a canonical problem to one of the decoders."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exact import cardinality_decode_nonpos, exhaustive_decode, mincut_decode
from .model import DecodeSolution, QboProblem, SignConstraint, SolverTag
from .sdp import SdpConfig, sdp_decode
from .spectral import SpectralConfig, spectral_decode

DECODERS = ("exhaustive", "mincut", "sdp", "spectral", "auto")
AUTO_EXHAUSTIVE_MAX_V = 16


@dataclass
class DecoderOptions:
    sdp: SdpConfig = field(default_factory=SdpConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    n_samples: int = 100
    # solve flagged cardinality problems exactly when V is at most this
    exhaustive_fallback_v: int = 0


def resolve_decoder(decoder: str, V: int, sign_constraint=SignConstraint.ANY) -> str:
    """Concrete decoder for ``auto``; validates the others."""
    sign_constraint = SignConstraint(sign_constraint)
    if decoder not in DECODERS:
        raise ValueError(f"unknown decoder {decoder!r}; choose from {DECODERS}")
    if decoder == "mincut" and sign_constraint not in (SignConstraint.NONPOS,
                                                       SignConstraint.ZERO):
        raise ValueError("the mincut decoder needs sign_constraint nonpos or zero")
    if decoder != "auto":
        return decoder
    if V <= AUTO_EXHAUSTIVE_MAX_V:
        return "exhaustive"
    if sign_constraint in (SignConstraint.NONPOS, SignConstraint.ZERO):
        return "mincut"
    return "spectral"


def decode(problem: QboProblem, decoder: str, options: Optional[DecoderOptions] = None,
           seed: int = 0) -> DecodeSolution:
    """Solve ``problem`` with a concrete decoder name (not ``auto``)."""
    options = options or DecoderOptions()
    k = problem.cardinality
    if k is not None and k in (0, problem.V) and decoder != "exhaustive":
        # a single feasible labeling, for the relaxations as well
        u = np.full(problem.V, 1 if k else -1)
        return DecodeSolution.integral(problem, u, SolverTag(_tag(decoder)))
    if decoder == "exhaustive":
        return exhaustive_decode(problem)
    if decoder == "mincut":
        if problem.constraint is None:
            return mincut_decode(problem)
        if k is None:
            raise ValueError("mincut handles only cardinality constraints")
        sol = cardinality_decode_nonpos(problem, k)
        if sol.approximate and problem.V <= options.exhaustive_fallback_v:
            sol = exhaustive_decode(problem)
            sol.info["fallback"] = True
        return sol
    if decoder == "sdp":
        return sdp_decode(problem, options.sdp, options.n_samples, seed)
    if decoder == "spectral":
        return spectral_decode(problem, options.spectral)
    raise ValueError(f"cannot dispatch decoder {decoder!r}")


def _tag(decoder: str) -> str:
    return {"mincut": "cardinality"}.get(decoder, decoder)

"""Multi-label classification with a learned quadratic label prior."""
__version__ = "0.1.0"

from .model import (F1, HAMMING, DecodeSolution, DimensionError, LossKind, ModelParams,
                    QboProblem, SignConstraint, SolverTag, accuracy, canonical_from_decode,
                    discriminant, f_loss, hamming_loss, precision_recall)
from .exact import (CutGraph, InfeasibleProblemError, NotSubmodularError, TvProxResult,
                    cardinality_decode_nonpos, exhaustive_decode, mincut_decode, tv_prox)
from .sdp import SdpConfig, SdpSolution, gaussian_round, sdp_decode, sdp_solve
from .spectral import (SpectralConfig, SpectralError, TrsProblem, spectral_decode,
                       spectral_decode_qr, trs_solve)
from .solvers import DecoderOptions, decode, resolve_decoder
from .trainer import (TrainConfig, loss_augmented_f1, loss_augmented_hamming, objective_eval,
                      predict, subgradient_step, train)

__all__ = [n for n in dir() if not n.startswith("_")]

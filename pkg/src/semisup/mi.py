"""Mutual information between paired prediction batches, and the losses built on it."""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class JointMatrix:
    P: Tensor
    row_marginal: Tensor
    col_marginal: Tensor

    @property
    def C(self) -> int:
        return self.P.shape[0]


def joint_distribution(Pa: Tensor, Pb: Tensor, symmetrize: bool = True) -> JointMatrix:
    """Average outer product of aligned prediction rows, symmetrized.

    P = (1/B) * sum_b outer(Pa[b], Pb[b]), then P <- (P + P^T) / 2.
    Row and column marginals are taken after symmetrization.
    """
    if Pa.values.ndim != 2 or Pa.shape != Pb.shape:
        raise ValueError(f"prediction batches must share shape [B, C]; got {Pa.shape} and {Pb.shape}")
    B = Pa.shape[0]
    if B == 0:
        raise ValueError("joint_distribution needs at least one row")
    P = ad.scale(ad.matmul(ad.transpose(Pa), Pb), 1.0 / B)
    if symmetrize:
        P = ad.scale(ad.add(P, ad.transpose(P)), 0.5)
    return JointMatrix(P, ad.sum_rows(P), ad.sum_cols(P))


def mutual_information(J: JointMatrix) -> Tensor:
    """sum_ij P_ij * (log P_ij - log P_i - log P_j), each log clamped at 1e-12."""
    C = J.C
    log_pi = ad.reshape(ad.log(J.row_marginal), (C, 1))
    log_pj = ad.reshape(ad.log(J.col_marginal), (1, C))
    ratio = ad.sub(ad.sub(ad.log(J.P), log_pi), log_pj)
    return ad.total(ad.mul(J.P, ratio))


def pair_mi(Pa: Tensor, Pb: Tensor, symmetrize: bool = True) -> Tensor:
    return mutual_information(joint_distribution(Pa, Pb, symmetrize))


def triplet_mi_loss(Pu: Tensor, Pw: Tensor, Ps: Tensor, symmetrize: bool = True) -> Tensor:
    """Negative mean of the three pairwise MIs among original, weak and strong views."""
    if not (Pu.shape == Pw.shape == Ps.shape):
        raise ValueError(f"misaligned prediction batches: {Pu.shape}, {Pw.shape}, {Ps.shape}")
    pairs = [(Pu, Pw), (Pu, Ps), (Pw, Ps)]
    return ad.combine((-1.0 / 3.0, pair_mi(a, b, symmetrize)) for a, b in pairs)


def single_pair_mi_loss(Pa: Tensor, Pb: Tensor, symmetrize: bool = True) -> Tensor:
    """Baseline objective on one view pair: -I(Pa; Pb)."""
    return ad.scale(pair_mi(Pa, Pb, symmetrize), -1.0)

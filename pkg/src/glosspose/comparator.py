"""Coarse-grained multimodal comparison: sequence-level pooled similarity,
in-batch triplet margin diagnostics, and the comparison loss.

The loss realizes the margin constraints as an additive-margin row softmax:
the margin is subtracted from the positive (diagonal) logit before the
softmax in each direction, so the optimum is exactly the configuration
where every matched pair beats every mismatched one by the margin.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .aligner import _diagonal_nll, normalize_rows
from .diffcore import DomainError, Tensor
from .seqmodel import InputError


@dataclass
class PooledEmbedding:
    """Unit-norm sequence-level embedding with its modality tag."""

    vector: Tensor            # 1 x D
    modality: str             # "text" | "video"

    def __post_init__(self):
        if self.modality not in ("text", "video"):
            raise InputError(f"unknown modality {self.modality!r}")


def pool_sequence(features: Tensor, mask=None, modality: str = "video") -> PooledEmbedding:
    """Arithmetic mean of unmasked rows, re-normalized to unit length."""
    if features.data.ndim != 2:
        raise InputError("pool_sequence expects a K x D matrix")
    k = features.shape[0]
    if mask is None:
        mask = np.ones(k, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise InputError("cannot pool an all-masked sequence")
    keep = np.repeat(mask[:, None], features.shape[1], axis=1).astype(np.float64)
    mean = dc.scale(dc.reduce("sum", dc.mul(features, dc.constant(keep)), axis=0),
                    1.0 / count)
    if np.linalg.norm(mean.data) < 1e-12:
        raise DomainError("pooled feature collapsed to zero mean")
    return PooledEmbedding(vector=normalize_rows(mean), modality=modality)


@dataclass
class SimilarityTable:
    """B x B grid; cell (i, j) is the pooled video-i / text-j similarity."""

    values: Tensor


def similarity_table(videos: Sequence[PooledEmbedding],
                     texts: Sequence[PooledEmbedding]) -> SimilarityTable:
    b = len(videos)
    if b == 0 or len(texts) != b:
        raise InputError("need equally many pooled videos and texts")
    d = videos[0].vector.shape[1]
    for e in (*videos, *texts):
        if e.vector.shape != (1, d):
            raise InputError("pooled embedding dimensions disagree")
    cells = [[dc.reduce("sum", dc.mul(videos[i].vector, texts[j].vector))
              for j in range(b)] for i in range(b)]
    return SimilarityTable(values=dc.assemble(cells))


def margin_satisfied(table: SimilarityTable, sigma: float):
    """Boolean matrices for the two triplet constraint families.

    Entry (i, j), j != i, of the first reports d(ii) > d(ij) + sigma (video
    anchor); of the second, d(ii) > d(ji) + sigma (text anchor). Diagonal
    entries carry no constraint and are set True. Diagnostic only; the loss
    never reads these.
    """
    if sigma < 0.0:
        raise InputError("sigma must be non-negative")
    vals = table.values.data
    diag = np.diag(vals)
    video_anchor = diag[:, None] > vals + sigma
    text_anchor = diag[None, :] > vals + sigma
    np.fill_diagonal(video_anchor, True)
    np.fill_diagonal(text_anchor, True)
    return video_anchor, text_anchor.T  # (i, j): anchor i vs distractor j


def margin_rate(table: SimilarityTable, sigma: float) -> float:
    """Fraction of off-diagonal triplet constraints currently satisfied."""
    b = table.values.shape[0]
    if b < 2:
        return 1.0
    va, ta = margin_satisfied(table, sigma)
    off = ~np.eye(b, dtype=bool)
    return float((va[off].sum() + ta[off].sum()) / (2 * off.sum()))


def loss_com(table: SimilarityTable, sigma: float) -> Tensor:
    """Additive-margin cross-entropy on the similarity table, both
    directions, averaged over the batch."""
    if sigma < 0.0:
        raise InputError("sigma must be non-negative")
    vals = table.values
    b = vals.shape[0]
    if vals.shape != (b, b):
        raise InputError("similarity table must be square")
    rows = _diagonal_nll(vals, 1.0, diag_shift=-sigma)
    cols = _diagonal_nll(dc.transpose(vals), 1.0, diag_shift=-sigma)
    return dc.scale(dc.add(rows, cols), 1.0 / b)

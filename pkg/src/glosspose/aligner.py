"""Fine-grained cross-modal alignment: best-match pooled similarity and a
symmetric temperature-scaled contrastive loss over a batch.

Works on unit-normalized per-position features from the gloss encoder
(text side) and the pose decoder's intermediate features (video side).
Masked positions never enter any reduction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import DomainError, Tensor
from .seqmodel import InputError

_NEG = -np.inf  # masked similarity cells during argmax scans


def normalize_rows(features: Tensor, mask=None) -> Tensor:
    """Divide each unmasked row by its Euclidean norm.

    Masked rows pass through scaled by a clamped norm (their values are
    excluded downstream anyway). An unmasked row with norm below 1e-12 is a
    degenerate feature and rejected.
    """
    if features.data.ndim != 2:
        raise InputError("normalize_rows expects a K x D matrix")
    k = features.shape[0]
    if mask is None:
        mask = np.ones(k, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    norms = np.linalg.norm(features.data, axis=1, keepdims=True)
    if np.any(norms[mask] < 1e-12):
        raise DomainError("cannot normalize a zero-norm feature row")
    safe = np.maximum(norms, 1e-12)
    inv = 1.0 / safe
    out_data = features.data * inv

    def bw(g):
        if features.requires_grad:
            # d(x/r)/dx with r = ||x||: g/r - x * (x . g) / r^3
            dots = (features.data * g).sum(axis=1, keepdims=True)
            dc._accumulate(features, g * inv - features.data * dots * inv ** 3)

    return dc._emit((features,), out_data, bw)


@dataclass
class FeaturePair:
    """Unit-norm textual and visual feature sequences of one sample."""

    text: Tensor              # N x D
    video: Tensor             # M x D
    text_mask: np.ndarray
    video_mask: np.ndarray

    def __post_init__(self):
        self.text_mask = np.asarray(self.text_mask, dtype=bool)
        self.video_mask = np.asarray(self.video_mask, dtype=bool)
        if self.text_mask.shape != (self.text.shape[0],):
            raise InputError("text mask length mismatch")
        if self.video_mask.shape != (self.video.shape[0],):
            raise InputError("video mask length mismatch")


def feature_pair(text: Tensor, video: Tensor, text_mask=None, video_mask=None,
                 normalized: bool = False) -> FeaturePair:
    """Build a FeaturePair, normalizing rows unless told they already are."""
    tm = np.ones(text.shape[0], dtype=bool) if text_mask is None else text_mask
    vm = np.ones(video.shape[0], dtype=bool) if video_mask is None else video_mask
    if not normalized:
        text = normalize_rows(text, tm)
        video = normalize_rows(video, vm)
    return FeaturePair(text=text, video=video, text_mask=tm, video_mask=vm)


@dataclass
class SimilarityMatrix:
    """M x N cosine grid; rows follow video frames, columns text tokens."""

    values: Tensor
    row_mask: np.ndarray
    col_mask: np.ndarray


def cosine_matrix(pair: FeaturePair) -> SimilarityMatrix:
    values = dc.matmul(pair.video, dc.transpose(pair.text))
    return SimilarityMatrix(values=values, row_mask=pair.video_mask,
                            col_mask=pair.text_mask)


def best_match(sim: SimilarityMatrix, direction: str) -> np.ndarray:
    """Index of the max-similarity partner for each unmasked item.

    direction "vt": for each unmasked video row, the best text column.
    direction "tv": for each unmasked text column, the best video row.
    Masked rows/columns report -1. Ties resolve to the lowest index.
    """
    vals = sim.values.data
    if direction == "vt":
        if not sim.col_mask.any():
            raise InputError("no unmasked text columns to match against")
        scan = np.where(sim.col_mask[None, :], vals, _NEG)
        idx = np.argmax(scan, axis=1)
        idx[~sim.row_mask] = -1
        return idx
    if direction == "tv":
        if not sim.row_mask.any():
            raise InputError("no unmasked video rows to match against")
        scan = np.where(sim.row_mask[:, None], vals, _NEG)
        idx = np.argmax(scan, axis=0)
        idx[~sim.col_mask] = -1
        return idx
    raise InputError(f"unknown direction {direction!r}")


def _phi_from_matrix(sim: SimilarityMatrix, direction: str) -> Tensor:
    """Mean of best-match similarities; differentiable through the selected
    cells only (the argmax index is held constant under perturbation)."""
    matched = best_match(sim, direction)
    m, n = sim.values.shape
    sel = np.zeros((m, n))
    if direction == "vt":
        rows = np.nonzero(sim.row_mask)[0]
        sel[rows, matched[rows]] = 1.0
        count = len(rows)
    else:
        cols = np.nonzero(sim.col_mask)[0]
        sel[matched[cols], cols] = 1.0
        count = len(cols)
    picked = dc.mul(sim.values, dc.constant(sel))
    return dc.scale(dc.reduce("sum", picked), 1.0 / count)


def phi(pair: FeaturePair, direction: str) -> Tensor:
    """Pooled best-match similarity in [-1, 1].

    "vt": mean over unmasked video frames of each frame's best text match.
    "tv": mean over unmasked text tokens of each token's best video match.
    """
    return _phi_from_matrix(cosine_matrix(pair), direction)


@dataclass
class BatchPhi:
    vt: Tensor  # B x B, cell (i, j) = phi(video_i, text_j)
    tv: Tensor  # B x B, cell (i, j) = phi(text_i, video_j)


def batch_phi(pairs: Sequence[FeaturePair]) -> BatchPhi:
    """All-pairs pooled similarities for a batch, both directions.

    Cell (i, j) of ``vt`` pools the similarity grid of video i against
    text j over video frames; cell (i, j) of ``tv`` pools the grid of
    video j against text i over text tokens. Diagonals use matched pairs.
    """
    b = len(pairs)
    if b < 1:
        raise InputError("batch_phi needs at least one pair")
    grids = [[cosine_matrix(FeaturePair(
        text=pairs[j].text, video=pairs[i].video,
        text_mask=pairs[j].text_mask, video_mask=pairs[i].video_mask))
        for j in range(b)] for i in range(b)]
    vt = [[_phi_from_matrix(grids[i][j], "vt") for j in range(b)] for i in range(b)]
    tv = [[_phi_from_matrix(grids[j][i], "tv") for j in range(b)] for i in range(b)]
    return BatchPhi(vt=dc.assemble(vt), tv=dc.assemble(tv))


def _diagonal_nll(matrix: Tensor, inv_temp: float = 1.0,
                  diag_shift: float = 0.0) -> Tensor:
    """Sum over rows of -log softmax(row)[diagonal], in log-space with
    per-row max subtraction. ``diag_shift`` is added to diagonal logits
    before the softmax (used for margin-adjusted variants)."""
    b = matrix.shape[0]
    eye = np.eye(b)
    logits = dc.scale(matrix, inv_temp)
    if diag_shift != 0.0:
        logits = dc.add(logits, dc.constant(diag_shift * eye))
    row_max = logits.data.max(axis=1, keepdims=True)  # constant shift, exact
    shifted = dc.sub(logits, dc.broadcast_cols(dc.constant(row_max), b))
    lse = dc.log(dc.reduce("sum", dc.exp(shifted), axis=1))
    diag = dc.reduce("sum", dc.mul(shifted, dc.constant(eye)), axis=1)
    return dc.neg(dc.reduce("sum", dc.sub(diag, lse)))


def loss_ali(bp: BatchPhi, tau: float) -> Tensor:
    """Symmetric temperature-scaled alignment loss, averaged over the batch."""
    if tau <= 0.0:
        raise InputError("temperature must be positive")
    b = bp.vt.shape[0]
    if bp.vt.shape != (b, b) or bp.tv.shape != (b, b):
        raise InputError("batch phi matrices must be square and same-size")
    total = dc.add(_diagonal_nll(bp.vt, 1.0 / tau), _diagonal_nll(bp.tv, 1.0 / tau))
    return dc.scale(total, 1.0 / b)

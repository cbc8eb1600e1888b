"""Finite-difference verification cases for the three training losses.

Each case builds a deterministic random problem, runs the taped backward,
and compares against central differences via
:func:`glosspose.diffcore.finite_diff_check`. Feature clusters are drawn
tight (shared direction + modest spread) so the contrastive losses sit in
their responsive regime; fully saturated softmaxes have true gradients
below the resolution of double-precision central differences, which says
nothing about gradient correctness.
"""

from __future__ import annotations

import numpy as np

from . import comparator as cp
from . import diffcore as dc
from . import seqmodel as sm
from .aligner import batch_phi, feature_pair, loss_ali

_SPREAD = 0.3


def check_acc(seed: int, step: float = 1e-5) -> float:
    """MAE pose-fit loss gradient w.r.t. the predicted frames."""
    r = np.random.default_rng(seed)
    m, width = int(r.integers(2, 6)), int(r.integers(3, 10))
    target = r.normal(size=(m, width))
    pred = target + 0.5 * r.normal(size=(m, width))  # keep |pred-target| off zero

    def f(x):
        return sm.loss_acc(x, target)

    return dc.finite_diff_check(f, dc.Tensor(pred), step)


def _clustered_rows(r: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    common = r.normal(size=(1, dim))
    return common + _SPREAD * r.normal(size=(rows, dim))


def _split_rows(stacked: dc.Tensor, offset: int, rows: int) -> tuple[dc.Tensor, int]:
    sel = np.zeros((rows, stacked.shape[0]))
    sel[np.arange(rows), offset + np.arange(rows)] = 1.0
    return dc.matmul(dc.constant(sel), stacked), offset + rows


def check_ali(seed: int, tau: float = 0.01, step: float = 1e-5,
              batch: int = 2) -> float:
    """Alignment loss gradient w.r.t. the raw (pre-normalization) features."""
    r = np.random.default_rng(seed)
    shapes = [(int(r.integers(2, 5)), int(r.integers(2, 6))) for _ in range(batch)]
    dim = int(r.integers(4, 9))
    total = sum(n + m for n, m in shapes)
    base = _clustered_rows(r, total, dim)

    def f(stacked):
        pairs, offset = [], 0
        for n, m in shapes:
            text, offset = _split_rows(stacked, offset, n)
            video, offset = _split_rows(stacked, offset, m)
            pairs.append(feature_pair(text, video))
        return loss_ali(batch_phi(pairs), tau)

    return dc.finite_diff_check(f, dc.Tensor(base), step)


def check_com(seed: int, sigma: float = 0.05, step: float = 1e-5,
              batch: int = 3) -> float:
    """Comparison loss gradient w.r.t. the pooled embeddings."""
    r = np.random.default_rng(seed)
    dim = int(r.integers(4, 9))
    base = _clustered_rows(r, 2 * batch, dim)

    def f(stacked):
        videos, texts = [], []
        offset = 0
        for _ in range(batch):
            v, offset = _split_rows(stacked, offset, 1)
            t, offset = _split_rows(stacked, offset, 1)
            videos.append(cp.PooledEmbedding(vector=v, modality="video"))
            texts.append(cp.PooledEmbedding(vector=t, modality="text"))
        return cp.loss_com(cp.similarity_table(videos, texts), sigma)

    return dc.finite_diff_check(f, dc.Tensor(base), step)


CHECKS = {"acc": check_acc, "ali": check_ali, "com": check_com}


def run_suite(which, seeds, step: float = 1e-5) -> dict[str, float]:
    """Max relative error per selected loss over the given seeds."""
    names = list(CHECKS) if which == "all" else [which]
    out = {}
    for name in names:
        out[name] = max(CHECKS[name](seed, step=step) for seed in seeds)
    return out

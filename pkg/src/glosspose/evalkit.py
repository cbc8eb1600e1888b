"""Pose- and alignment-quality metrics, report serialization, heatmaps.

DTW-P here is the minimum over all monotone warping paths of the mean
per-step frame cost (total cost divided by path length), computed exactly
by a DP over (cell, path length). Frame cost is the mean per-joint 3D
Euclidean distance. The Fréchet pose distance fits Gaussians to raw frame
vectors; the covariance square root goes through a symmetric
eigendecomposition.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from . import aligner as al
from . import seqmodel as sm
from .aligner import SimilarityMatrix, cosine_matrix, feature_pair
from .seqmodel import InputError, PoseSequence


def _frames(x) -> np.ndarray:
    arr = x.frames if isinstance(x, PoseSequence) else np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise InputError("expected a non-empty M x (J*3) frame matrix")
    return arr


def _per_joint_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(len(a), len(b)) matrix of mean per-joint Euclidean distances."""
    if a.shape[1] != b.shape[1] or a.shape[1] % 3 != 0:
        raise InputError("frame widths disagree or are not a multiple of 3")
    j = a.shape[1] // 3
    diff = a[:, None, :] - b[None, :, :]
    per_joint = np.linalg.norm(diff.reshape(len(a), len(b), j, 3), axis=3)
    return per_joint.mean(axis=2)


def mpjpe(pred, target) -> float:
    """Mean per-joint position error of time-aligned sequences."""
    a, b = _frames(pred), _frames(target)
    if a.shape != b.shape:
        raise InputError(f"length/width mismatch: {a.shape} vs {b.shape}")
    j = a.shape[1] // 3
    dist = np.linalg.norm((a - b).reshape(len(a), j, 3), axis=2)
    return float(dist.mean())


def dtw_p(pred, target) -> float:
    """Path-length-normalized dynamic-time-warping distance."""
    a, b = _frames(pred), _frames(target)
    cost = _per_joint_distances(a, b)
    n, m = cost.shape
    inf = np.inf
    reach = np.full((n, m), inf)
    reach[0, 0] = cost[0, 0]
    best = inf
    for length in range(1, n + m):
        if length >= max(n, m) and np.isfinite(reach[-1, -1]):
            best = min(best, reach[-1, -1] / length)
        if length == n + m - 1:
            break
        stepped = np.full((n, m), inf)
        stepped[1:, :] = reach[:-1, :]
        stepped[:, 1:] = np.minimum(stepped[:, 1:], reach[:, :-1])
        stepped[1:, 1:] = np.minimum(stepped[1:, 1:], reach[:-1, :-1])
        reach = cost + stepped
        reach[0, 0] = inf  # the start cell is only reachable at length 1
    return float(best)


def fid_pose(set_a, set_b, ridge: float = 1e-6) -> float:
    """Fréchet distance between Gaussian fits of two pose-frame sets."""
    a, b = _frames(set_a), _frames(set_b)
    if a.shape[1] != b.shape[1]:
        raise InputError("frame widths disagree")
    dim = a.shape[1]
    if len(a) < dim + 1 or len(b) < dim + 1:
        raise InputError(f"need at least {dim + 1} frames per set for a {dim}-dim covariance")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False) + ridge * np.eye(dim)
    cov_b = np.cov(b, rowvar=False) + ridge * np.eye(dim)
    # Tr((cov_a cov_b)^1/2) via the symmetric product cov_a^1/2 cov_b cov_a^1/2
    vals_a, vecs_a = np.linalg.eigh(cov_a)
    root_a = (vecs_a * np.sqrt(np.clip(vals_a, 0.0, None))) @ vecs_a.T
    inner = root_a @ cov_b @ root_a
    inner_vals = np.linalg.eigvalsh(inner)
    tr_sqrt = np.sqrt(np.clip(inner_vals, 0.0, None)).sum()
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)


# ---------------------------------------------------------------------------
# alignment metrics


def _matrix_and_truth(matrix, truth):
    if isinstance(matrix, SimilarityMatrix):
        vals = matrix.values.data[matrix.row_mask][:, matrix.col_mask]
    else:
        vals = np.asarray(matrix, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    if vals.ndim != 2:
        raise InputError("alignment matrix must be rank 2")
    if truth.shape != (vals.shape[0],):
        raise InputError(f"truth length {truth.shape} does not match {vals.shape[0]} frames")
    if truth.min() < 0 or truth.max() >= vals.shape[1]:
        raise InputError("truth indices exceed the matrix column count")
    return vals, truth


def kendall_alignment_tau(argmax_cols: np.ndarray) -> float:
    """Rank correlation between frame order and matched column order.

    Pairs tied in the column index are excluded (so a monotone staircase
    scores 1.0); with no comparable pairs at all the degenerate value is 0.
    """
    seq = np.asarray(argmax_cols)
    diff = np.sign(seq[None, :] - seq[:, None])
    upper = np.triu_indices(len(seq), k=1)
    signs = diff[upper]
    concordant = int((signs > 0).sum())
    discordant = int((signs < 0).sum())
    if concordant + discordant == 0:
        return 0.0
    return (concordant - discordant) / (concordant + discordant)


def alignment_metrics(matrix, truth) -> tuple[float, float]:
    """(tau, segment_accuracy) of a frame-by-gloss response matrix.

    ``matrix`` may be a SimilarityMatrix (masked cells dropped) or a plain
    M x N array such as a cross-attention map; ``truth`` holds each frame's
    source gloss position.
    """
    vals, truth = _matrix_and_truth(matrix, truth)
    matched = np.argmax(vals, axis=1)
    accuracy = float((matched == truth).mean())
    return kendall_alignment_tau(matched), accuracy


# ---------------------------------------------------------------------------
# heatmap export


def export_heatmap(matrix, path_base) -> tuple[Path, Path]:
    """Write ``<base>.csv`` (row-major, 6 decimals) and ``<base>.pgm``
    (8-bit grayscale, min-max scaled; constant input maps to all zeros)."""
    if isinstance(matrix, SimilarityMatrix):
        vals = matrix.values.data
    else:
        vals = np.asarray(matrix, dtype=np.float64)
    base = Path(path_base)
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path = base.with_suffix(".csv")
    pgm_path = base.with_suffix(".pgm")

    lines = [",".join(f"{v:.6f}" for v in row) for row in vals]
    csv_path.write_text("\n".join(lines) + "\n")

    lo, hi = float(vals.min()), float(vals.max())
    if hi - lo < 1e-300:
        pixels = np.zeros(vals.shape, dtype=np.uint8)
    else:
        pixels = np.rint((vals - lo) / (hi - lo) * 255.0).astype(np.uint8)
    header = f"P5\n{vals.shape[1]} {vals.shape[0]}\n255\n".encode("ascii")
    pgm_path.write_bytes(header + pixels.tobytes())
    return csv_path, pgm_path


def read_heatmap_csv(path) -> np.ndarray:
    rows = [[float(v) for v in line.split(",")]
            for line in Path(path).read_text().strip().splitlines()]
    return np.array(rows)


# ---------------------------------------------------------------------------
# reports


REPORT_KEYS = ("mpjpe", "dtw_p", "fid_pose", "alignment_tau", "segment_accuracy")


@dataclass
class MetricReport:
    mpjpe: float
    dtw_p: float
    fid_pose: float
    alignment_tau: float
    segment_accuracy: float
    per_sample: Dict[str, List[float]] = field(default_factory=dict)

    def summary(self) -> Dict[str, float]:
        return {k: getattr(self, k) for k in REPORT_KEYS}

    def save(self, path_base) -> tuple[Path, Path]:
        base = Path(path_base)
        base.parent.mkdir(parents=True, exist_ok=True)
        txt = base.with_suffix(".txt")
        js = base.with_suffix(".json")
        txt.write_text("".join(f"{k} = {getattr(self, k)!r}\n" for k in REPORT_KEYS))
        js.write_text(json.dumps(
            {"summary": self.summary(), "per_sample": self.per_sample},
            indent=2, sort_keys=True) + "\n")
        return txt, js


def load_report(path_json) -> MetricReport:
    payload = json.loads(Path(path_json).read_text())
    return MetricReport(**payload["summary"], per_sample=payload.get("per_sample", {}))


# ---------------------------------------------------------------------------
# model evaluation harness


def sample_alignment_matrix(params: sm.ModelParams, sample) -> SimilarityMatrix:
    """Cosine grid between encoded gloss features and the decoder's
    intermediate features under teacher forcing on the true poses."""
    enc = sm.encode(sm.embed_gloss(sm.GlossSequence(sample.gloss_ids), params), params)
    dec_in = np.vstack([sm.bos_frame(params.config), sample.pose[:-1]])
    state = sm.decode(sm.embed_pose(dec_in, params), enc, params)
    pair = feature_pair(enc.features, state.z)
    return cosine_matrix(pair)


def sample_cross_attention(params: sm.ModelParams, sample) -> np.ndarray:
    enc = sm.encode(sm.embed_gloss(sm.GlossSequence(sample.gloss_ids), params), params)
    dec_in = np.vstack([sm.bos_frame(params.config), sample.pose[:-1]])
    return sm.decode(sm.embed_pose(dec_in, params), enc, params).cross_attention


def evaluate_corpus(params: sm.ModelParams, corpus, split: str) -> MetricReport:
    """Autoregressive decode at ground-truth length per sample, then pool
    pose metrics per sample and the Fréchet distance corpus-level."""
    samples = corpus.splits[split]
    if not samples:
        raise InputError(f"split {split!r} is empty")
    if 3 * corpus.manifest.joints != params.config.pose_dim:
        raise InputError("corpus joint count does not match the checkpoint")
    per: Dict[str, List[float]] = {k: [] for k in
                                   ("mpjpe", "dtw_p", "alignment_tau", "segment_accuracy")}
    pred_frames, true_frames = [], []
    for sample in samples:
        enc = sm.encode(sm.embed_gloss(sm.GlossSequence(sample.gloss_ids), params), params)
        pred = sm.decode_autoregressive(sm.bos_frame(params.config), enc, params,
                                        max_len=len(sample.pose))
        per["mpjpe"].append(mpjpe(pred, sample.pose))
        per["dtw_p"].append(dtw_p(pred, sample.pose))
        tau, acc = alignment_metrics(sample_alignment_matrix(params, sample),
                                     sample.alignment)
        per["alignment_tau"].append(tau)
        per["segment_accuracy"].append(acc)
        pred_frames.append(pred.frames)
        true_frames.append(sample.pose)
    return MetricReport(
        mpjpe=float(np.mean(per["mpjpe"])),
        dtw_p=float(np.mean(per["dtw_p"])),
        fid_pose=fid_pose(np.vstack(pred_frames), np.vstack(true_frames)),
        alignment_tau=float(np.mean(per["alignment_tau"])),
        segment_accuracy=float(np.mean(per["segment_accuracy"])),
        per_sample=per,
    )

"""End-to-end optimization: joint objective, Gaussian pose-noise
augmentation, padding/batching, Adam updates, checkpointing, logging.

Every stochastic stream is derived statelessly from (seed, stream id,
epoch or step) so a run is a pure function of (seed, config, corpus) and
resuming from a checkpoint continues the exact trajectory.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, asdict, fields, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import comparator as cp
from . import diffcore as dc
from . import evalkit as ek
from . import seqmodel as sm
from .aligner import batch_phi, feature_pair, loss_ali
from .seqmodel import InputError, ModelConfig, ModelParams

_EPOCH_STREAM = 11
_NOISE_STREAM = 12


class NumericError(RuntimeError):
    """A loss term left the finite range; carries (step, term)."""

    def __init__(self, step: int, term: str, value: float):
        super().__init__(f"non-finite loss at step {step}: {term} = {value}")
        self.step = step
        self.term = term


@dataclass(frozen=True)
class TrainConfig:
    # loss weights and contrast controls
    alpha: float = 1.0
    beta: float = 1e-7
    gamma: float = 1e-5
    tau: float = 0.01
    sigma: float = 0.05
    # optimization
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 30
    noise_rate: float = 5.0
    noise_base_factor: float = 0.12   # base noise std = this x corpus coord std
    grad_clip: float = 0.0            # 0 disables global-norm clipping
    # model dims (desk-scale defaults; the full-size setting is 512/2/4)
    embed_dim: int = 48
    layers: int = 2
    heads: int = 2
    # run control
    seed: int = 0
    eval_every: int = 10
    detach_alignment_features: bool = False

    def __post_init__(self):
        if self.alpha <= 0 or self.tau <= 0:
            raise InputError("alpha and tau must be positive")
        if min(self.beta, self.gamma, self.sigma, self.noise_rate) < 0:
            raise InputError("beta, gamma, sigma, noise_rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 1 or self.eval_every < 1:
            raise InputError("batch_size, epochs, eval_every must be at least 1")
        if self.learning_rate <= 0:
            raise InputError("learning_rate must be positive")


def save_config(cfg: TrainConfig, path):
    lines = [f"{f.name} = {getattr(cfg, f.name)!r}" for f in fields(cfg)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_config(path) -> TrainConfig:
    values = {}
    known = {f.name for f in fields(TrainConfig)}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in known:
            raise InputError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = ast.literal_eval(raw.strip())
    return TrainConfig(**values)


def model_config_from(cfg: TrainConfig, corpus) -> ModelConfig:
    return ModelConfig(vocab_size=len(corpus.vocab), joints=corpus.manifest.joints,
                       embed_dim=cfg.embed_dim, layers=cfg.layers, heads=cfg.heads)


# ---------------------------------------------------------------------------
# batching and augmentation


@dataclass
class PaddedBatch:
    gloss: np.ndarray        # B x N_max int32, PAD-filled
    gloss_mask: np.ndarray   # B x N_max bool
    pose: np.ndarray         # B x M_max x (J*3), zero-filled
    pose_mask: np.ndarray    # B x M_max bool
    alignments: List[np.ndarray]

    def __len__(self):
        return self.gloss.shape[0]


def pad_batch(samples) -> PaddedBatch:
    """Right-pad gloss and pose sequences to the batch maxima."""
    if not samples:
        raise InputError("cannot pad an empty batch")
    b = len(samples)
    n_max = max(len(s.gloss_ids) for s in samples)
    m_max = max(len(s.pose) for s in samples)
    width = samples[0].pose.shape[1]
    gloss = np.full((b, n_max), sm.PAD_ID, dtype=np.int32)
    gloss_mask = np.zeros((b, n_max), dtype=bool)
    pose = np.zeros((b, m_max, width))
    pose_mask = np.zeros((b, m_max), dtype=bool)
    for i, s in enumerate(samples):
        n, m = len(s.gloss_ids), len(s.pose)
        gloss[i, :n] = s.gloss_ids
        gloss_mask[i, :n] = True
        pose[i, :m] = s.pose
        pose_mask[i, :m] = True
    return PaddedBatch(gloss=gloss, gloss_mask=gloss_mask, pose=pose,
                       pose_mask=pose_mask,
                       alignments=[np.asarray(s.alignment) for s in samples])


def corpus_base_std(corpus, factor: float) -> float:
    """Per-corpus augmentation unit: coordinate std of the train split."""
    coords = np.concatenate([s.pose.ravel() for s in corpus.splits["train"]])
    return float(coords.std() * factor)


def add_pose_noise(frames: np.ndarray, noise_rate: float,
                   rng: np.random.Generator, base_std: float) -> np.ndarray:
    """I.i.d. zero-mean Gaussian with std = noise_rate x base_std, applied
    to teacher-forcing decoder inputs only (never to targets)."""
    if noise_rate < 0:
        raise InputError("noise_rate must be non-negative")
    std = noise_rate * base_std
    if std == 0.0:
        return np.array(frames, copy=True)
    return frames + rng.normal(0.0, std, size=frames.shape)


# ---------------------------------------------------------------------------
# losses


def joint_loss(l_acc: float, l_ali: float, l_com: float, cfg: TrainConfig) -> float:
    """Exact weighted sum, in the same association order the graph uses."""
    for name, v in (("acc", l_acc), ("ali", l_ali), ("com", l_com)):
        if not np.isfinite(v):
            raise InputError(f"non-finite loss term {name}")
    return (cfg.alpha * l_acc + cfg.beta * l_ali) + cfg.gamma * l_com


@dataclass
class LossBreakdown:
    step: int
    acc: float
    ali: float
    com: float
    joint: float
    margin_rate: float

    def log_line(self) -> str:
        return (f"{self.step},{self.acc!r},{self.ali!r},{self.com!r},"
                f"{self.joint!r},{self.margin_rate!r}")


LOG_HEADER = "step,l_acc,l_ali,l_com,joint,margin_rate"


def parse_log_line(line: str) -> LossBreakdown:
    parts = line.strip().split(",")
    return LossBreakdown(step=int(parts[0]), acc=float(parts[1]), ali=float(parts[2]),
                         com=float(parts[3]), joint=float(parts[4]),
                         margin_rate=float(parts[5]))


def _forward_batch(params: ModelParams, batch: PaddedBatch, cfg: TrainConfig,
                   noise_rng: np.random.Generator, base_std: float):
    """Teacher-forced forward over one padded batch.

    Returns (joint tensor, acc/ali/com tensors or None, margin_rate).
    """
    use_csa = cfg.beta != 0.0
    use_msc = cfg.gamma != 0.0
    acc_terms = []
    pairs = []
    pooled_videos, pooled_texts = [], []
    margin = 0.0
    for i in range(len(batch)):
        # padded positions provably contribute exact zeros everywhere, so
        # each sample runs at its true length
        n = int(batch.gloss_mask[i].sum())
        m = int(batch.pose_mask[i].sum())
        enc = sm.encode(sm.embed_gloss_ids(batch.gloss[i, :n], params), params)
        target = batch.pose[i, :m]
        noisy = add_pose_noise(target, cfg.noise_rate, noise_rng, base_std)
        dec_in = np.vstack([sm.bos_frame(params.config), noisy[:-1]])
        state = sm.decode(sm.embed_pose(dec_in, params), enc, params)
        acc_terms.append(sm.loss_acc(state.pred, target))
        if use_csa or use_msc:
            text_feats = enc.features
            video_feats = state.z
            if cfg.detach_alignment_features:
                text_feats = text_feats.detach()
                video_feats = video_feats.detach()
            pair = feature_pair(text_feats, video_feats)
            pairs.append(pair)
            if use_msc:
                pooled_texts.append(cp.pool_sequence(pair.text, modality="text"))
                pooled_videos.append(cp.pool_sequence(pair.video, modality="video"))

    acc = acc_terms[0]
    for term in acc_terms[1:]:
        acc = dc.add(acc, term)
    acc = dc.scale(acc, 1.0 / len(acc_terms))

    ali = loss_ali(batch_phi(pairs), cfg.tau) if use_csa else dc.constant(0.0)
    if use_msc:
        table = cp.similarity_table(pooled_videos, pooled_texts)
        com = cp.loss_com(table, cfg.sigma)
        margin = cp.margin_rate(table, cfg.sigma)
    else:
        com = dc.constant(0.0)
    joint = dc.add(dc.add(dc.scale(acc, cfg.alpha), dc.scale(ali, cfg.beta)),
                   dc.scale(com, cfg.gamma))
    return joint, acc, ali, com, margin


# ---------------------------------------------------------------------------
# optimizer and train state


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainState:
    """Parameters, Adam moments, step counter; round-trips bit-exactly."""

    def __init__(self, params: ModelParams, cfg: TrainConfig,
                 m: Optional[Dict[str, np.ndarray]] = None,
                 v: Optional[Dict[str, np.ndarray]] = None,
                 step: int = 0, epochs_done: int = 0,
                 best_dev_dtw: Optional[float] = None):
        self.params = params
        self.cfg = cfg
        self.m = m if m is not None else {k: np.zeros_like(t.data)
                                          for k, t in params.tensors.items()}
        self.v = v if v is not None else {k: np.zeros_like(t.data)
                                          for k, t in params.tensors.items()}
        self.step = step
        self.epochs_done = epochs_done
        self.best_dev_dtw = best_dev_dtw
        self.base_std = 0.0


def init_state(cfg: TrainConfig, corpus) -> TrainState:
    params = sm.init_params(model_config_from(cfg, corpus), seed=cfg.seed)
    return TrainState(params, cfg)


def _adam_update(state: TrainState):
    cfg = state.cfg
    t = state.step  # already incremented by the caller
    if cfg.grad_clip > 0.0:
        total = 0.0
        for tensor_ in state.params.tensors.values():
            if tensor_.grad is not None:
                total += float(np.sum(np.square(tensor_.grad)))
        norm = np.sqrt(total)
        clip = cfg.grad_clip / norm if norm > cfg.grad_clip else 1.0
    else:
        clip = 1.0
    for name, tensor_ in state.params.tensors.items():
        g = tensor_.grad if tensor_.grad is not None else np.zeros_like(tensor_.data)
        if clip != 1.0:
            g = g * clip
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1 - ADAM_BETA2) * (g * g)
        m_hat = m / (1 - ADAM_BETA1 ** t)
        v_hat = v / (1 - ADAM_BETA2 ** t)
        tensor_.data -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def train_step(state: TrainState, batch: PaddedBatch,
               cfg: Optional[TrainConfig] = None) -> LossBreakdown:
    """One forward/backward/Adam update; returns the loss breakdown."""
    cfg = cfg or state.cfg
    noise_rng = np.random.default_rng(
        np.random.SeedSequence(cfg.seed, spawn_key=(_NOISE_STREAM, state.step)))
    base_std = getattr(state, "base_std", 0.0)
    with dc.Tape() as tape:
        joint, acc, ali, com, margin = _forward_batch(
            state.params, batch, cfg, noise_rng, base_std)
    breakdown = LossBreakdown(step=state.step, acc=acc.item(), ali=ali.item(),
                              com=com.item(), joint=joint.item(), margin_rate=margin)
    for term, value in (("acc", breakdown.acc), ("ali", breakdown.ali),
                        ("com", breakdown.com), ("joint", breakdown.joint)):
        if not np.isfinite(value):
            raise NumericError(state.step, term, value)
    dc.zero_grads(state.params.tensors.values())
    dc.backward(joint, tape)
    state.step += 1
    _adam_update(state)
    return breakdown


# ---------------------------------------------------------------------------
# state checkpointing


def save_state(state: TrainState, path):
    extra_arrays = {}
    for name in state.params.tensors:
        extra_arrays[f"adam_m/{name}"] = state.m[name]
        extra_arrays[f"adam_v/{name}"] = state.v[name]
    meta = {
        "step": state.step,
        "epochs_done": state.epochs_done,
        "best_dev_dtw": state.best_dev_dtw,
        "train_config": asdict(state.cfg),
    }
    sm.save_params(state.params, path, extra_meta=meta, extra_arrays=extra_arrays)


def load_state(path) -> TrainState:
    params, meta, extras = sm.load_checkpoint(path)
    if "train_config" not in meta:
        raise sm.CheckpointError(f"{path}: not a train-state checkpoint")
    cfg = TrainConfig(**meta["train_config"])
    m = {k[len("adam_m/"):]: v for k, v in extras.items() if k.startswith("adam_m/")}
    v = {k[len("adam_v/"):]: v_ for k, v_ in extras.items() if k.startswith("adam_v/")}
    return TrainState(params, cfg, m=m, v=v, step=meta["step"],
                      epochs_done=meta["epochs_done"],
                      best_dev_dtw=meta["best_dev_dtw"])


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    final_checkpoint: Path
    best_checkpoint: Path
    log_path: Path
    config_path: Path
    dev_report: ek.MetricReport
    report_paths: tuple


def _epoch_batches(n_train: int, cfg: TrainConfig, epoch: int):
    order = np.random.default_rng(
        np.random.SeedSequence(cfg.seed, spawn_key=(_EPOCH_STREAM, epoch))
    ).permutation(n_train)
    for start in range(0, n_train, cfg.batch_size):
        yield order[start:start + cfg.batch_size]


def train(cfg: TrainConfig, corpus, out_dir, resume_from=None) -> TrainResult:
    """Full training run; every output file is a pure function of
    (seed, config, corpus)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config_path = out / "config.txt"
    save_config(cfg, config_path)
    log_path = out / "train_log.txt"
    best_path = out / "checkpoint_best.ckpt"
    final_path = out / "checkpoint_final.ckpt"

    if resume_from is not None:
        state = load_state(resume_from)
        if replace(state.cfg, epochs=cfg.epochs) != cfg:
            raise InputError("resume checkpoint was produced under a different config")
        state.cfg = cfg  # epochs may be extended
        log_mode = "a"
    else:
        state = init_state(cfg, corpus)
        log_mode = "w"
    state.base_std = corpus_base_std(corpus, cfg.noise_base_factor)

    train_samples = corpus.splits["train"]
    dev_report: Optional[ek.MetricReport] = None
    with open(log_path, log_mode) as log:
        if log_mode == "w":
            log.write(LOG_HEADER + "\n")
        for epoch in range(state.epochs_done, cfg.epochs):
            for idx in _epoch_batches(len(train_samples), cfg, epoch):
                batch = pad_batch([train_samples[i] for i in idx])
                breakdown = train_step(state, batch)
                log.write(breakdown.log_line() + "\n")
            state.epochs_done = epoch + 1
            last_epoch = state.epochs_done == cfg.epochs
            if state.epochs_done % cfg.eval_every == 0 or last_epoch:
                report = ek.evaluate_corpus(state.params, corpus, "dev")
                if state.best_dev_dtw is None or report.dtw_p < state.best_dev_dtw:
                    state.best_dev_dtw = report.dtw_p
                    save_state(state, best_path)
                if last_epoch:
                    dev_report = report
    save_state(state, final_path)
    if not best_path.exists():
        save_state(state, best_path)
    if dev_report is None:
        dev_report = ek.evaluate_corpus(state.params, corpus, "dev")
    report_paths = dev_report.save(out / "report_dev")
    return TrainResult(final_checkpoint=final_path, best_checkpoint=best_path,
                       log_path=log_path, config_path=config_path,
                       dev_report=dev_report, report_paths=report_paths)

"""Deterministic synthetic gloss-to-pose corpus with known alignments.

Each content gloss owns a smooth motion template (a short sum of seeded
sinusoids per coordinate). A sample concatenates the templates of its
gloss sequence and adds Gaussian noise, so the frame-to-gloss alignment
is known exactly and monotone by construction. Everything is a pure
function of the manifest.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Dict, List

import numpy as np

from ._binio import read_container, write_container
from .seqmodel import GlossVocab, InputError

_MAGIC = b"SLPC"
_VERSION = 1

MIN_SEGMENT = 4
MAX_SEGMENT = 12
MIN_GLOSSES = 2
MAX_GLOSSES = 6

# stream ids for SeedSequence spawn keys
_TEMPLATE_STREAM = 1
_SAMPLE_STREAM = 2
_SPLIT_IDS = {"train": 0, "dev": 1, "test": 2}


class CorpusError(RuntimeError):
    """Corpus file missing, foreign, truncated, or version-mismatched."""


@dataclass(frozen=True)
class CorpusManifest:
    seed: int = 0
    vocab: int = 20            # content glosses; 3 reserved ids come on top
    joints: int = 8
    train: int = 600
    dev: int = 60
    test: int = 60
    noise_std: float = 0.02

    def __post_init__(self):
        if self.vocab < 5:
            raise InputError("need at least 5 content glosses")
        if self.joints < 1:
            raise InputError("need at least one joint")
        if min(self.train, self.dev, self.test) < 0:
            raise InputError("split sizes must be non-negative")
        if self.noise_std < 0:
            raise InputError("noise std must be non-negative")


@dataclass
class CorpusSample:
    gloss_ids: np.ndarray   # int32, vocabulary ids (reserved ids excluded)
    pose: np.ndarray        # float64, M x (J*3)
    alignment: np.ndarray   # int32, per frame: position of its source gloss

    def __eq__(self, other):
        return (np.array_equal(self.gloss_ids, other.gloss_ids)
                and np.array_equal(self.pose, other.pose)
                and np.array_equal(self.alignment, other.alignment))


@dataclass
class Corpus:
    manifest: CorpusManifest
    vocab: GlossVocab
    templates: Dict[int, np.ndarray]       # vocab id -> L_g x (J*3)
    splits: Dict[str, List[CorpusSample]]

    def __eq__(self, other):
        return (self.manifest == other.manifest
                and {k: v.tolist() for k, v in self.templates.items()}
                == {k: v.tolist() for k, v in other.templates.items()}
                and all(self.splits[s] == other.splits[s] for s in _SPLIT_IDS))


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def build_vocab(count: int) -> GlossVocab:
    return GlossVocab([f"G{idx:02d}" for idx in range(count)])


def _make_template(manifest: CorpusManifest, gloss_idx: int, attempt: int) -> np.ndarray:
    """Sum of three seeded sinusoids per coordinate, coords in [-2, 2].

    The first sinusoid is slow and strong (a near-constant per-gloss
    posture signature, like holding a distinct hand shape), the other two
    are faster motion components. The signature makes every single frame
    carry which sign it belongs to, which is what real sign segments do
    and what keeps the frame-to-gloss alignment task well-posed.
    """
    r = _rng(manifest.seed, _TEMPLATE_STREAM, gloss_idx, attempt)
    length = int(r.integers(MIN_SEGMENT, MAX_SEGMENT + 1))
    width = 3 * manifest.joints
    t = np.arange(length)[:, None] / MAX_SEGMENT
    template = np.zeros((length, width))
    for k in range(3):
        if k == 0:
            amp = r.uniform(0.5, 1.0, size=width)
            freq = r.uniform(0.0, 0.3, size=width)
        else:
            amp = r.uniform(0.0, 1.0, size=width)
            freq = r.uniform(0.5, 3.0, size=width)
        phase = r.uniform(0.0, 2 * np.pi, size=width)
        template += amp * np.sin(2 * np.pi * freq * t + phase)
    # sinusoid amplitudes are each <= 1; rescale columns whose realized
    # peak exceeds 2 so coordinates stay inside [-2, 2]
    peak = np.abs(template).max(axis=0)
    over = peak > 2.0
    if over.any():
        template[:, over] *= 2.0 / peak[over]
    return template


def _overlap_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean per-frame Euclidean distance over the shared prefix."""
    k = min(len(a), len(b))
    return float(np.linalg.norm(a[:k] - b[:k], axis=1).mean())


def make_templates(manifest: CorpusManifest, max_attempts: int = 200) -> Dict[int, np.ndarray]:
    """One motion template per content gloss, re-sampled until every pair
    is separated by more than 5x the corpus noise std."""
    threshold = 5.0 * manifest.noise_std
    vocab = build_vocab(manifest.vocab)
    templates: Dict[int, np.ndarray] = {}
    for gloss_idx, vocab_id in enumerate(vocab.content_ids):
        for attempt in range(max_attempts):
            candidate = _make_template(manifest, gloss_idx, attempt)
            if all(_overlap_distance(candidate, prev) > threshold
                   for prev in templates.values()):
                templates[vocab_id] = candidate
                break
        else:
            raise CorpusError(
                f"could not separate template for gloss {gloss_idx} "
                f"after {max_attempts} attempts")
    return templates


def _make_sample(manifest: CorpusManifest, templates, vocab: GlossVocab,
                 split: str, index: int) -> CorpusSample:
    r = _rng(manifest.seed, _SAMPLE_STREAM, _SPLIT_IDS[split], index)
    max_n = min(MAX_GLOSSES, manifest.vocab)
    n = int(r.integers(MIN_GLOSSES, max_n + 1))
    content = np.array(list(vocab.content_ids), dtype=np.int32)
    ids = r.choice(content, size=n, replace=False).astype(np.int32)
    segments = [templates[int(g)] for g in ids]
    pose = np.vstack(segments)
    alignment = np.concatenate(
        [np.full(len(seg), pos, dtype=np.int32) for pos, seg in enumerate(segments)])
    pose = pose + manifest.noise_std * r.standard_normal(pose.shape)
    return CorpusSample(gloss_ids=ids, pose=pose, alignment=alignment)


def generate(manifest: CorpusManifest) -> Corpus:
    """Deterministic corpus: same manifest, same bytes."""
    vocab = build_vocab(manifest.vocab)
    templates = make_templates(manifest)
    splits = {
        split: [_make_sample(manifest, templates, vocab, split, i)
                for i in range(getattr(manifest, split))]
        for split in _SPLIT_IDS
    }
    return Corpus(manifest=manifest, vocab=vocab, templates=templates, splits=splits)


# ---------------------------------------------------------------------------
# file format (exact layout documented in _binio and the README)


def save(corpus: Corpus, path):
    meta = {"manifest": asdict(corpus.manifest)}
    arrays = {}
    for vocab_id, template in corpus.templates.items():
        arrays[f"template/{vocab_id:04d}"] = template
    for split, samples in corpus.splits.items():
        for i, s in enumerate(samples):
            prefix = f"sample/{split}/{i:06d}"
            arrays[f"{prefix}/gloss"] = s.gloss_ids.astype(np.int32)
            arrays[f"{prefix}/pose"] = s.pose.astype(np.float64)
            arrays[f"{prefix}/align"] = s.alignment.astype(np.int32)
    write_container(path, _MAGIC, _VERSION, meta, arrays)


def load(path) -> Corpus:
    try:
        meta, arrays = read_container(path, _MAGIC, _VERSION)
    except ValueError as e:
        raise CorpusError(str(e)) from e
    manifest = CorpusManifest(**meta["manifest"])
    vocab = build_vocab(manifest.vocab)
    templates = {}
    buckets: Dict[str, Dict[int, dict]] = {s: {} for s in _SPLIT_IDS}
    for name, arr in arrays.items():
        parts = name.split("/")
        if parts[0] == "template":
            templates[int(parts[1])] = arr
        else:
            _, split, idx, field_name = parts
            buckets[split].setdefault(int(idx), {})[field_name] = arr
    splits = {}
    for split, by_idx in buckets.items():
        samples = []
        for i in range(len(by_idx)):
            rec = by_idx[i]
            samples.append(CorpusSample(gloss_ids=rec["gloss"], pose=rec["pose"],
                                        alignment=rec["align"]))
        splits[split] = samples
    expected = {s: getattr(manifest, s) for s in _SPLIT_IDS}
    got = {s: len(splits[s]) for s in _SPLIT_IDS}
    if expected != got:
        raise CorpusError(f"{path}: sample counts {got} disagree with manifest {expected}")
    return Corpus(manifest=manifest, vocab=vocab, templates=templates, splits=splits)

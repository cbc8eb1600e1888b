import numpy as np
import pytest

import glosspose.synthcorpus as sc
from glosspose.seqmodel import InputError
from glosspose.synthcorpus import Corpus, CorpusError, CorpusManifest, generate, load, save


@pytest.fixture(scope="module")
def small_corpus():
    return generate(CorpusManifest(seed=7, vocab=8, joints=3, train=12, dev=4, test=4))


def test_manifest_validation():
    with pytest.raises(InputError):
        CorpusManifest(vocab=4)
    with pytest.raises(InputError):
        CorpusManifest(noise_std=-0.1)
    with pytest.raises(InputError):
        CorpusManifest(train=-1)


def test_default_manifest_matches_contract():
    m = CorpusManifest()
    assert (m.vocab, m.joints) == (20, 8)
    assert (m.train, m.dev, m.test) == (600, 60, 60)
    assert m.noise_std == 0.02


def test_generation_is_deterministic(tmp_path):
    m = CorpusManifest(seed=3, vocab=6, joints=2, train=5, dev=2, test=2)
    a, b = generate(m), generate(m)
    assert a == b
    pa, pb = tmp_path / "a.slpc", tmp_path / "b.slpc"
    save(a, pa)
    save(b, pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_alignment_monotone_and_surjective(small_corpus):
    for split in ("train", "dev", "test"):
        for s in small_corpus.splits[split]:
            align = s.alignment
            assert np.all(np.diff(align) >= 0)
            assert set(align.tolist()) == set(range(len(s.gloss_ids)))


def test_every_gloss_owns_at_least_four_frames(small_corpus):
    for s in small_corpus.splits["train"]:
        _, counts = np.unique(s.alignment, return_counts=True)
        assert np.all(counts >= sc.MIN_SEGMENT)


def test_pose_length_is_sum_of_template_lengths(small_corpus):
    templates = small_corpus.templates
    for s in small_corpus.splits["train"]:
        expected = sum(len(templates[int(g)]) for g in s.gloss_ids)
        assert len(s.pose) == expected == len(s.alignment)


def test_template_invariants(small_corpus):
    for template in small_corpus.templates.values():
        assert sc.MIN_SEGMENT <= len(template) <= sc.MAX_SEGMENT
        assert np.all(np.abs(template) <= 2.0 + 1e-12)
        assert template.shape[1] == 3 * small_corpus.manifest.joints


def test_templates_pairwise_separated(small_corpus):
    threshold = 5.0 * small_corpus.manifest.noise_std
    items = list(small_corpus.templates.values())
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            assert sc._overlap_distance(items[i], items[j]) > threshold


def test_gloss_ids_are_content_ids_without_repeats(small_corpus):
    content = set(small_corpus.vocab.content_ids)
    for s in small_corpus.splits["train"]:
        ids = s.gloss_ids.tolist()
        assert sc.MIN_GLOSSES <= len(ids) <= sc.MAX_GLOSSES
        assert len(set(ids)) == len(ids)
        assert set(ids) <= content


def test_splits_differ(small_corpus):
    train0 = small_corpus.splits["train"][0]
    dev0 = small_corpus.splits["dev"][0]
    assert not (np.array_equal(train0.gloss_ids, dev0.gloss_ids)
                and np.array_equal(train0.pose, dev0.pose))


def test_save_load_roundtrip(tmp_path, small_corpus):
    path = tmp_path / "corpus.slpc"
    save(small_corpus, path)
    loaded = load(path)
    assert loaded == small_corpus
    assert loaded.manifest == small_corpus.manifest


def test_load_truncated_file_versioned_error(tmp_path, small_corpus):
    path = tmp_path / "corpus.slpc"
    save(small_corpus, path)
    path.write_bytes(path.read_bytes()[:60])
    with pytest.raises(CorpusError, match="truncated"):
        load(path)


def test_load_foreign_magic(tmp_path):
    path = tmp_path / "bogus.slpc"
    path.write_bytes(b"NOPE" + b"\x00" * 50)
    with pytest.raises(CorpusError, match="SLPC"):
        load(path)


def test_load_missing_file(tmp_path):
    with pytest.raises(CorpusError):
        load(tmp_path / "absent.slpc")


def test_manifest_echo_matches_generation(tmp_path, small_corpus):
    path = tmp_path / "corpus.slpc"
    save(small_corpus, path)
    assert load(path).manifest == CorpusManifest(seed=7, vocab=8, joints=3,
                                                 train=12, dev=4, test=4)


def test_noise_statistics():
    m = CorpusManifest(seed=11, vocab=6, joints=4, train=40, dev=0, test=0)
    corpus = generate(m)
    residuals = []
    for s in corpus.splits["train"]:
        clean = np.vstack([corpus.templates[int(g)] for g in s.gloss_ids])
        residuals.append((s.pose - clean).ravel())
    std = np.concatenate(residuals).std()
    assert std == pytest.approx(m.noise_std, rel=0.05)

import math

import numpy as np
import pytest

import glosspose.aligner as al
import glosspose.diffcore as dc
from glosspose.aligner import (
    BatchPhi, FeaturePair, batch_phi, best_match, cosine_matrix,
    feature_pair, loss_ali, normalize_rows, phi,
)
from glosspose.diffcore import DomainError, Tape, Tensor, backward, tensor
from glosspose.seqmodel import InputError


def rng(seed):
    return np.random.default_rng(seed)


def unit_pair(t, v, t_mask=None, v_mask=None):
    return feature_pair(tensor(t), tensor(v), t_mask, v_mask)


# ---------------------------------------------------------------------------
# normalize_rows


def test_normalize_hand_case():
    out = normalize_rows(tensor([[3.0, 4.0]]))
    np.testing.assert_allclose(out.data, [[0.6, 0.8]], atol=1e-12)


def test_normalize_idempotent_on_unit_rows():
    row = np.array([[0.6, 0.8]])
    out = normalize_rows(tensor(row))
    np.testing.assert_allclose(out.data, row, atol=1e-12)


def test_normalize_scale_invariance():
    r = rng(0)
    x = r.normal(size=(4, 5))
    a = normalize_rows(tensor(x)).data
    b = normalize_rows(tensor(3.7 * x)).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_normalize_rejects_zero_row():
    with pytest.raises(DomainError):
        normalize_rows(tensor([[0.0, 0.0], [1.0, 0.0]]))


def test_normalize_masked_zero_row_allowed():
    mask = np.array([False, True])
    out = normalize_rows(tensor([[0.0, 0.0], [3.0, 4.0]]), mask)
    np.testing.assert_allclose(out.data[1], [0.6, 0.8], atol=1e-12)


def test_normalize_gradient():
    def f(x):
        y = normalize_rows(x)
        w = dc.constant(rng(1).normal(size=(3, 4)))
        return dc.reduce("sum", dc.mul(y, w))

    err = dc.finite_diff_check(f, tensor(rng(2).normal(size=(3, 4))), 1e-5)
    assert err < 1e-4


# ---------------------------------------------------------------------------
# cosine matrix


def test_cosine_identical_rows_give_one():
    x = normalize_rows(tensor(rng(3).normal(size=(2, 4)))).data
    sim = cosine_matrix(unit_pair(x, x))
    np.testing.assert_allclose(np.diag(sim.values.data), 1.0, atol=1e-12)


def test_cosine_orthogonal_rows_give_zero():
    sim = cosine_matrix(unit_pair(np.eye(3)[:1], np.eye(3)[1:2]))
    np.testing.assert_allclose(sim.values.data, [[0.0]], atol=1e-12)


def test_cosine_matches_dot_loop_oracle():
    r = rng(4)
    t = r.normal(size=(3, 5))
    v = r.normal(size=(4, 5))
    sim = cosine_matrix(unit_pair(t, v)).values.data
    for m in range(4):
        for n in range(3):
            expected = np.dot(v[m], t[n]) / (np.linalg.norm(v[m]) * np.linalg.norm(t[n]))
            assert sim[m, n] == pytest.approx(expected, abs=1e-12)


def test_cosine_entries_bounded():
    r = rng(5)
    sim = cosine_matrix(unit_pair(r.normal(size=(6, 8)), r.normal(size=(5, 8))))
    assert np.all(sim.values.data <= 1 + 1e-9)
    assert np.all(sim.values.data >= -1 - 1e-9)


# ---------------------------------------------------------------------------
# best_match


def _sim_from(values, row_mask=None, col_mask=None):
    values = np.asarray(values, dtype=float)
    m, n = values.shape
    return al.SimilarityMatrix(
        values=tensor(values),
        row_mask=np.ones(m, dtype=bool) if row_mask is None else np.asarray(row_mask),
        col_mask=np.ones(n, dtype=bool) if col_mask is None else np.asarray(col_mask),
    )


def test_best_match_diagonal_dominant():
    sim = _sim_from([[0.9, 0.1, 0.0], [0.2, 0.8, 0.1], [0.0, 0.1, 0.7]])
    np.testing.assert_array_equal(best_match(sim, "vt"), [0, 1, 2])
    np.testing.assert_array_equal(best_match(sim, "tv"), [0, 1, 2])


def test_best_match_tie_breaks_low():
    sim = _sim_from([[0.5, 0.5]])
    assert best_match(sim, "vt")[0] == 0


def test_best_match_against_scan_oracle():
    r = rng(6)
    vals = r.normal(size=(5, 4))
    row_mask = np.array([True, True, False, True, True])
    col_mask = np.array([True, False, True, True])
    sim = _sim_from(vals, row_mask, col_mask)
    got = best_match(sim, "vt")
    for m in range(5):
        if not row_mask[m]:
            assert got[m] == -1
            continue
        best, best_j = -np.inf, None
        for n in range(4):
            if col_mask[n] and vals[m, n] > best:
                best, best_j = vals[m, n], n
        assert got[m] == best_j
    got_tv = best_match(sim, "tv")
    for n in range(4):
        if not col_mask[n]:
            assert got_tv[n] == -1
            continue
        best, best_i = -np.inf, None
        for m in range(5):
            if row_mask[m] and vals[m, n] > best:
                best, best_i = vals[m, n], m
        assert got_tv[n] == best_i


def test_best_match_fully_masked_axis_rejected():
    sim = _sim_from(np.zeros((2, 2)), col_mask=[False, False])
    with pytest.raises(InputError):
        best_match(sim, "vt")


# ---------------------------------------------------------------------------
# phi


def test_phi_self_similarity_is_one():
    x = rng(7).normal(size=(3, 4))
    pair = unit_pair(x, x)
    assert phi(pair, "vt").item() == pytest.approx(1.0, abs=1e-12)
    assert phi(pair, "tv").item() == pytest.approx(1.0, abs=1e-12)


def test_phi_single_rows_equal_cosine():
    r = rng(8)
    t, v = r.normal(size=(1, 6)), r.normal(size=(1, 6))
    expected = float(np.dot(v[0], t[0]) / (np.linalg.norm(v[0]) * np.linalg.norm(t[0])))
    assert phi(unit_pair(t, v), "vt").item() == pytest.approx(expected, abs=1e-12)


def test_phi_hand_case_decoupled_from_features():
    sim = _sim_from([[0.9, 0.1], [0.2, 0.8]])
    assert al._phi_from_matrix(sim, "vt").item() == pytest.approx(0.85, abs=1e-15)


@pytest.mark.parametrize("seed", range(8))
def test_phi_equals_bruteforce_rowmax_mean(seed):
    r = rng(seed)
    m, n, d = r.integers(1, 9), r.integers(1, 7), r.integers(2, 17)
    pair = unit_pair(r.normal(size=(n, d)), r.normal(size=(m, d)))
    sim = cosine_matrix(pair).values.data
    assert phi(pair, "vt").item() == pytest.approx(sim.max(axis=1).mean(), abs=1e-12)
    assert phi(pair, "tv").item() == pytest.approx(sim.max(axis=0).mean(), abs=1e-12)


def test_phi_masked_rows_excluded():
    r = rng(9)
    t = r.normal(size=(2, 4))
    v = r.normal(size=(3, 4))
    v_mask = np.array([True, False, True])
    pair = unit_pair(t, v, v_mask=v_mask)
    sim = cosine_matrix(pair).values.data
    expected = sim[[0, 2]].max(axis=1).mean()
    assert phi(pair, "vt").item() == pytest.approx(expected, abs=1e-12)


def test_phi_monotone_in_entries():
    vals = np.array([[0.3, 0.1], [0.2, 0.4]])
    base = al._phi_from_matrix(_sim_from(vals), "vt").item()
    for i in range(2):
        for j in range(2):
            bumped = vals.copy()
            bumped[i, j] += 0.05
            assert al._phi_from_matrix(_sim_from(bumped), "vt").item() >= base - 1e-12


# ---------------------------------------------------------------------------
# batch_phi


def _random_pairs(r, b, d=5):
    pairs = []
    for _ in range(b):
        n, m = r.integers(1, 5), r.integers(1, 7)
        pairs.append(unit_pair(r.normal(size=(n, d)), r.normal(size=(m, d))))
    return pairs


def test_batch_phi_single_pair_consistency():
    pairs = _random_pairs(rng(10), 1)
    bp = batch_phi(pairs)
    assert bp.vt.shape == (1, 1)
    assert bp.vt.data[0, 0] == pytest.approx(phi(pairs[0], "vt").item(), abs=1e-15)
    assert bp.tv.data[0, 0] == pytest.approx(phi(pairs[0], "tv").item(), abs=1e-15)


def test_batch_phi_bounded():
    bp = batch_phi(_random_pairs(rng(11), 3))
    assert np.all(bp.vt.data <= 1 + 1e-12) and np.all(bp.vt.data >= -1 - 1e-12)


def test_batch_phi_matches_per_pair_calls():
    r = rng(12)
    pairs = _random_pairs(r, 2)
    bp = batch_phi(pairs)
    for i in range(2):
        for j in range(2):
            cross = FeaturePair(text=pairs[j].text, video=pairs[i].video,
                                text_mask=pairs[j].text_mask,
                                video_mask=pairs[i].video_mask)
            assert bp.vt.data[i, j] == pytest.approx(phi(cross, "vt").item(), abs=1e-15)
            cross_tv = FeaturePair(text=pairs[i].text, video=pairs[j].video,
                                   text_mask=pairs[i].text_mask,
                                   video_mask=pairs[j].video_mask)
            assert bp.tv.data[i, j] == pytest.approx(phi(cross_tv, "tv").item(), abs=1e-15)


# ---------------------------------------------------------------------------
# loss_ali


def _bp_from(vt, tv):
    return BatchPhi(vt=tensor(np.asarray(vt, dtype=float)),
                    tv=tensor(np.asarray(tv, dtype=float)))


def test_loss_ali_single_pair_is_zero():
    bp = _bp_from([[0.37]], [[0.42]])
    assert loss_ali(bp, tau=0.01).item() == pytest.approx(0.0, abs=1e-12)


def test_loss_ali_uniform_batch_closed_form():
    b = 4
    bp = _bp_from(np.full((b, b), 0.3), np.full((b, b), 0.3))
    assert loss_ali(bp, tau=0.5).item() == pytest.approx(2 * math.log(b), abs=1e-9)


def test_loss_ali_identity_phi_closed_form():
    bp = _bp_from(np.eye(2), np.eye(2))
    expected = -2 * math.log(math.e / (math.e + 1))
    assert loss_ali(bp, tau=1.0).item() == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(0.6265, abs=5e-5)


def test_loss_ali_row_shift_invariance():
    r = rng(13)
    vt = r.normal(size=(3, 3))
    tv = r.normal(size=(3, 3))
    base = loss_ali(_bp_from(vt, tv), tau=0.7).item()
    vt2, tv2 = vt.copy(), tv.copy()
    vt2[1] += 5.0
    tv2[2] -= 3.0
    shifted = loss_ali(_bp_from(vt2, tv2), tau=0.7).item()
    assert shifted == pytest.approx(base, abs=1e-9)


def test_loss_ali_temperature_sharpens_diagonal_dominance():
    vt = np.eye(3) * 0.8 + 0.1
    bp = _bp_from(vt, vt)
    assert loss_ali(bp, 0.01).item() <= loss_ali(bp, 1.0).item()


def test_loss_ali_rejects_bad_tau():
    bp = _bp_from(np.eye(2), np.eye(2))
    with pytest.raises(InputError):
        loss_ali(bp, 0.0)


def test_loss_ali_stable_at_small_tau():
    r = rng(14)
    bp = _bp_from(r.uniform(-1, 1, (4, 4)), r.uniform(-1, 1, (4, 4)))
    val = loss_ali(bp, tau=0.01).item()
    assert np.isfinite(val)


@pytest.mark.parametrize("seed", range(5))
def test_loss_ali_gradient_through_raw_features(seed):
    from glosspose.gradcheck import check_ali

    assert check_ali(seed, tau=0.01) < 1e-4

import numpy as np
import pytest

import glosspose.evalkit as ek
from glosspose.evalkit import (
    MetricReport, alignment_metrics, dtw_p, export_heatmap, fid_pose,
    kendall_alignment_tau, load_report, mpjpe, read_heatmap_csv,
)
from glosspose.seqmodel import InputError


def rng(seed):
    return np.random.default_rng(seed)


def frames(r, m, joints):
    return r.normal(size=(m, 3 * joints))


# ---------------------------------------------------------------------------
# mpjpe


def test_mpjpe_identity():
    x = frames(rng(0), 4, 3)
    assert mpjpe(x, x) == 0.0


def test_mpjpe_unit_translation_single_axis():
    for joints in (1, 2, 5):
        x = frames(rng(1), 6, joints)
        y = x.copy()
        y[:, 0::3] += 1.0  # +1 on the x axis of every joint
        assert mpjpe(y, x) == pytest.approx(1.0, abs=1e-12)


def test_mpjpe_matches_loop_oracle():
    r = rng(2)
    a, b = frames(r, 5, 4), frames(r, 5, 4)
    total, cnt = 0.0, 0
    for m in range(5):
        for j in range(4):
            d = a[m, 3 * j:3 * j + 3] - b[m, 3 * j:3 * j + 3]
            total += np.sqrt(np.sum(d * d))
            cnt += 1
    assert mpjpe(a, b) == pytest.approx(total / cnt, rel=1e-12)


def test_mpjpe_translation_invariance_of_error():
    r = rng(3)
    a, b = frames(r, 4, 2), frames(r, 4, 2)
    offset = r.normal(size=6)
    assert mpjpe(a + offset, b + offset) == pytest.approx(mpjpe(a, b), abs=1e-12)


def test_mpjpe_length_mismatch_rejected():
    with pytest.raises(InputError):
        mpjpe(np.zeros((3, 6)), np.zeros((4, 6)))


# ---------------------------------------------------------------------------
# dtw_p


def _frame_cost(a, b):
    j = a.shape[0] // 3
    return np.linalg.norm((a - b).reshape(j, 3), axis=1).mean()


def _dtw_bruteforce(a, b):
    """Min over all monotone warping paths of mean per-step cost."""
    n, m = len(a), len(b)
    best = [np.inf]

    def walk(i, j, total, steps):
        total += _frame_cost(a[i], b[j])
        steps += 1
        if i == n - 1 and j == m - 1:
            best[0] = min(best[0], total / steps)
            return
        if i + 1 < n:
            walk(i + 1, j, total, steps)
        if j + 1 < m:
            walk(i, j + 1, total, steps)
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, total, steps)

    walk(0, 0, 0.0, 0)
    return best[0]


def test_dtw_identity():
    x = frames(rng(4), 5, 2)
    assert dtw_p(x, x) == pytest.approx(0.0, abs=1e-12)


def test_dtw_single_frames():
    r = rng(5)
    a, b = frames(r, 1, 3), frames(r, 1, 3)
    assert dtw_p(a, b) == pytest.approx(_frame_cost(a[0], b[0]), rel=1e-12)


def test_dtw_3x5_matches_bruteforce():
    r = rng(6)
    a, b = frames(r, 3, 2), frames(r, 5, 2)
    assert dtw_p(a, b) == pytest.approx(_dtw_bruteforce(a, b), rel=1e-12)


@pytest.mark.parametrize("n", range(1, 6))
@pytest.mark.parametrize("m", range(1, 6))
def test_dtw_matches_bruteforce_all_lengths(n, m):
    r = rng(100 + 10 * n + m)
    a, b = frames(r, n, 2), frames(r, m, 2)
    assert dtw_p(a, b) == pytest.approx(_dtw_bruteforce(a, b), rel=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_dtw_symmetric(seed):
    r = rng(seed)
    a = frames(r, int(r.integers(1, 7)), 2)
    b = frames(r, int(r.integers(1, 7)), 2)
    assert dtw_p(a, b) == pytest.approx(dtw_p(b, a), rel=1e-12)
    assert dtw_p(a, b) >= 0.0


# ---------------------------------------------------------------------------
# fid_pose


def test_fid_identical_sets():
    x = frames(rng(7), 30, 2)
    assert fid_pose(x, x) <= 1e-6


def test_fid_mean_shift_closed_form():
    x = frames(rng(8), 40, 2)
    offset = np.zeros(6)
    offset[0] = 2.0  # norm 2
    assert fid_pose(x, x + offset) == pytest.approx(4.0, abs=1e-6)


def test_fid_symmetric():
    r = rng(9)
    a, b = frames(r, 25, 1), frames(r, 30, 1)
    assert fid_pose(a, b) == pytest.approx(fid_pose(b, a), abs=1e-6)


def test_fid_too_few_frames_rejected():
    with pytest.raises(InputError):
        fid_pose(np.zeros((5, 6)), np.zeros((10, 6)))


def test_fid_matches_high_precision_oracle():
    mp = pytest.importorskip("mpmath")
    r = rng(10)
    a, b = frames(r, 12, 1), frames(r, 14, 1)

    mp.mp.dps = 50
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    ridge = 1e-6
    cov_a = np.cov(a, rowvar=False) + ridge * np.eye(3)
    cov_b = np.cov(b, rowvar=False) + ridge * np.eye(3)
    ca = mp.matrix(cov_a.tolist())
    cb = mp.matrix(cov_b.tolist())
    ea, va = mp.eigsy(ca)
    root_a = va * mp.diag([mp.sqrt(x) for x in ea]) * va.T
    inner = root_a * cb * root_a
    ei, _ = mp.eigsy(inner)
    tr_sqrt = sum(mp.sqrt(x) for x in ei)
    diff = mp.matrix((mu_a - mu_b).tolist())
    expected = float(sum(d * d for d in diff)
                     + sum(ca[i, i] for i in range(3))
                     + sum(cb[i, i] for i in range(3)) - 2 * tr_sqrt)

    assert fid_pose(a, b) == pytest.approx(expected, rel=1e-9)


# ---------------------------------------------------------------------------
# alignment metrics


def test_alignment_block_diagonal_perfect():
    blocks = [0] * 4 + [1] * 5 + [2] * 4
    m = np.zeros((len(blocks), 3))
    m[np.arange(len(blocks)), blocks] = 1.0
    tau, acc = alignment_metrics(m, np.array(blocks))
    assert acc == 1.0
    assert tau > 0.99


def test_alignment_constant_matrix_degenerate():
    m = np.full((6, 3), 0.5)
    truth = np.array([0, 0, 1, 1, 2, 2])
    tau, acc = alignment_metrics(m, truth)
    assert tau == 0.0
    assert acc == pytest.approx(2 / 6)  # argmax ties -> column 0


def test_alignment_strictly_increasing_tau_one():
    m = np.eye(5)
    tau, acc = alignment_metrics(m, np.arange(5))
    assert tau == 1.0 and acc == 1.0


def test_alignment_reversed_tau_minus_one():
    m = np.eye(5)[::-1]
    tau, _ = alignment_metrics(m, np.arange(5))
    assert tau == -1.0


def test_tau_matches_pair_counting_oracle():
    r = rng(11)
    for _ in range(20):
        m_rows, n_cols = int(r.integers(2, 12)), int(r.integers(2, 6))
        mat = r.normal(size=(m_rows, n_cols))
        matched = np.argmax(mat, axis=1)
        conc = disc = 0
        for i in range(m_rows):
            for j in range(i + 1, m_rows):
                if matched[j] > matched[i]:
                    conc += 1
                elif matched[j] < matched[i]:
                    disc += 1
        expected = 0.0 if conc + disc == 0 else (conc - disc) / (conc + disc)
        tau, _ = alignment_metrics(mat, np.zeros(m_rows, dtype=int))
        assert tau == pytest.approx(expected, abs=1e-12)
        assert -1.0 <= tau <= 1.0


def test_alignment_dimension_mismatch_rejected():
    with pytest.raises(InputError):
        alignment_metrics(np.zeros((4, 3)), np.array([0, 1]))
    with pytest.raises(InputError):
        alignment_metrics(np.zeros((2, 3)), np.array([0, 3]))


# ---------------------------------------------------------------------------
# heatmap export


def test_heatmap_pgm_pixels(tmp_path):
    csv_path, pgm_path = export_heatmap(np.array([[0.0, 1.0], [1.0, 0.0]]),
                                        tmp_path / "map")
    raw = pgm_path.read_bytes()
    assert raw.startswith(b"P5\n2 2\n255\n")
    assert list(raw[-4:]) == [0, 255, 255, 0]


def test_heatmap_csv_roundtrip(tmp_path):
    vals = rng(12).uniform(-1, 1, (3, 4))
    csv_path, _ = export_heatmap(vals, tmp_path / "map")
    back = read_heatmap_csv(csv_path)
    np.testing.assert_allclose(back, np.round(vals, 6), atol=1e-9)


def test_heatmap_constant_matrix_all_zero(tmp_path):
    _, pgm_path = export_heatmap(np.full((2, 3), 0.7), tmp_path / "flat")
    raw = pgm_path.read_bytes()
    assert raw.endswith(b"\x00" * 6)


def test_heatmap_write_idempotent(tmp_path):
    vals = rng(13).normal(size=(4, 4))
    c1, p1 = export_heatmap(vals, tmp_path / "m")
    b_csv, b_pgm = c1.read_bytes(), p1.read_bytes()
    export_heatmap(vals, tmp_path / "m")
    assert c1.read_bytes() == b_csv and p1.read_bytes() == b_pgm


# ---------------------------------------------------------------------------
# reports


def test_report_keys_and_roundtrip(tmp_path):
    report = MetricReport(mpjpe=1.0, dtw_p=2.0, fid_pose=3.0,
                          alignment_tau=0.5, segment_accuracy=0.75,
                          per_sample={"mpjpe": [1.0, 1.0]})
    assert set(report.summary()) == set(ek.REPORT_KEYS)
    txt, js = report.save(tmp_path / "report")
    text = txt.read_text()
    for key in ek.REPORT_KEYS:
        assert f"{key} = " in text
    loaded = load_report(js)
    assert loaded.summary() == report.summary()
    assert loaded.per_sample["mpjpe"] == [1.0, 1.0]

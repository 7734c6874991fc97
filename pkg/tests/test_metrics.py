import numpy as np
import pytest

from fusedtree.errors import DataError
from fusedtree.metrics import concordance, km_censoring_survival, pmse, td_auc


class TestPmse:
    def test_exact_match_is_zero(self):
        assert pmse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_hand_value(self):
        assert pmse([0.0, 2.0], [1.0, 1.0]) == pytest.approx(1.0)

    def test_matches_two_pass_oracle(self, rng):
        y = rng.normal(size=1000)
        yh = rng.normal(size=1000)
        total = 0.0
        for a, b in zip(y, yh):
            total += (a - b) ** 2
        assert pmse(y, yh) == pytest.approx(total / 1000, abs=1e-12)

    def test_translation_invariance(self, rng):
        y = rng.normal(size=50)
        yh = rng.normal(size=50)
        assert pmse(y + 3.7, yh + 3.7) == pytest.approx(pmse(y, yh), abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            pmse([], [])


def brute_harrell(eta, time, status):
    num = den = 0.0
    n = len(time)
    for i in range(n):
        for j in range(n):
            if status[i] > 0 and time[i] < time[j]:
                den += 1
                if eta[i] > eta[j]:
                    num += 1
                elif eta[i] == eta[j]:
                    num += 0.5
    return num / den


class TestConcordance:
    def test_perfect_ordering(self):
        time = np.array([1.0, 2.0, 3.0, 4.0])
        eta = np.array([4.0, 3.0, 2.0, 1.0])  # higher risk fails earlier
        assert concordance(eta, time, np.ones(4)) == 1.0

    def test_constant_scores(self):
        time = np.array([1.0, 2.0, 3.0, 4.0])
        assert concordance(np.zeros(4), time, np.ones(4)) == 0.5

    def test_matches_brute_force(self, rng):
        time = np.array([1.0, 3.0, 2.0, 5.0, 4.0, 2.5])
        status = np.array([1.0, 0.0, 1.0, 1.0, 0.0, 1.0])
        eta = rng.normal(size=6)
        mine = concordance(eta, time, status)
        assert mine == pytest.approx(brute_harrell(eta, time, status), abs=1e-12)

    def test_rank_invariance(self, rng):
        time = rng.exponential(1.0, size=40) + 0.01
        status = (rng.uniform(size=40) < 0.7).astype(float)
        eta = rng.normal(size=40)
        for variant in ("harrell", "ipcw"):
            a = concordance(eta, time, status, variant=variant)
            b = concordance(np.exp(2 * eta) + 5, time, status, variant=variant)
            assert a == pytest.approx(b, abs=1e-12)

    def test_symmetry(self, rng):
        time = rng.exponential(1.0, size=30) + 0.01
        status = (rng.uniform(size=30) < 0.8).astype(float)
        eta = rng.normal(size=30)
        a = concordance(eta, time, status)
        b = concordance(-eta, time, status)
        assert a == pytest.approx(1.0 - b, abs=1e-12)

    def test_ipcw_equals_harrell_without_censoring(self, rng):
        time = rng.exponential(1.0, size=25) + 0.01
        status = np.ones(25)
        eta = rng.normal(size=25)
        a = concordance(eta, time, status, variant="harrell")
        b = concordance(eta, time, status, variant="ipcw", truncation=time.max() + 1)
        assert a == pytest.approx(b, abs=1e-12)

    def test_no_comparable_pairs(self):
        with pytest.raises(DataError):
            concordance([1.0, 2.0], [1.0, 1.0], [0.0, 0.0])


class TestKmCensoring:
    def test_no_censoring_is_one(self):
        t, s = km_censoring_survival([1.0, 2.0, 3.0], [1.0, 1.0, 1.0])
        np.testing.assert_allclose(s, 1.0)

    def test_hand_computation(self):
        # censorings at t=2 (risk 3) and t=4 (risk 1)
        t, s = km_censoring_survival([1.0, 2.0, 4.0], [1.0, 0.0, 0.0])
        surv_at_2 = 1.0 - 1.0 / 2.0  # risk set {2, 4}
        np.testing.assert_allclose(s[t == 2.0], surv_at_2)


class TestTdAuc:
    def test_perfect_separation(self):
        time = np.array([1.0, 2.0, 8.0, 9.0])
        eta = np.array([5.0, 4.0, 1.0, 0.0])
        assert td_auc(eta, time, np.ones(4), horizon=5.0) == 1.0

    def test_uncensored_reduces_to_classification_auc(self, rng):
        time = np.array([1.0, 2.0, 3.0, 4.0, 6.0, 7.0, 8.0, 9.0])
        status = np.ones(8)
        eta = rng.normal(size=8)
        label = (time <= 5.0).astype(float)
        cases = np.where(label > 0)[0]
        controls = np.where(label == 0)[0]
        num = 0.0
        for i in cases:
            for j in controls:
                num += 1.0 if eta[i] > eta[j] else (0.5 if eta[i] == eta[j] else 0.0)
        auc = num / (cases.size * controls.size)
        assert td_auc(eta, time, status, horizon=5.0) == pytest.approx(auc, abs=1e-12)

    def test_null_scores_near_half(self):
        g = np.random.default_rng(77)
        n = 2000
        t = g.exponential(2.0, size=n) + 0.01
        c = g.exponential(4.0, size=n)
        time = np.minimum(t, c)
        status = (t <= c).astype(float)
        eta = g.normal(size=n)  # independent of survival
        auc = td_auc(eta, time, status, horizon=np.median(time))
        assert 0.45 <= auc <= 0.55

    def test_needs_cases_and_controls(self):
        with pytest.raises(DataError):
            td_auc([1.0, 2.0], [1.0, 2.0], [1.0, 1.0], horizon=10.0)

    def test_rank_invariance(self, rng):
        time = rng.exponential(1.0, size=60) + 0.01
        status = (rng.uniform(size=60) < 0.6).astype(float)
        status[:2] = 1.0
        eta = rng.normal(size=60)
        h = np.median(time)
        a = td_auc(eta, time, status, horizon=h)
        b = td_auc(3 * eta - 2, time, status, horizon=h)
        assert a == pytest.approx(b, abs=1e-12)

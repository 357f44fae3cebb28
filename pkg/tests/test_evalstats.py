import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import kruskal

from crossface.evalstats import (PairScoreSet, chi2_sf, det_points,
                                 dunn_posthoc, eer_threshold, kruskal_wallis,
                                 normal_cdf, rates_at, stage_tests)


def sweep_oracle(scores, genuine):
    """Exhaustive brute-force threshold sweep (independent of the library)."""
    gen = scores[genuine]
    imp = scores[~genuine]
    taus = sorted(set(scores)) + [max(scores) + 1.0]
    best = None
    for tau in taus:
        far = np.mean(imp >= tau)
        frr = np.mean(gen < tau)
        key = (abs(far - frr), far + frr, tau)
        if best is None or key < best[0]:
            best = (key, tau, far, frr)
    return best[1], best[2], best[3]


def make_set(rng, n_gen=None, n_imp=None):
    n_gen = n_gen or rng.integers(1, 30)
    n_imp = n_imp or rng.integers(1, 50)
    # quantized scores force plenty of ties
    scores = np.concatenate([rng.normal(0.5, 1.0, n_gen),
                             rng.normal(-0.5, 1.0, n_imp)])
    scores = np.round(scores, 1)
    genuine = np.zeros(n_gen + n_imp, dtype=bool)
    genuine[:n_gen] = True
    return PairScoreSet(scores, genuine)


class TestRatesAt:
    def test_perfect_separation(self):
        s = PairScoreSet(np.array([0.9, 0.8, 0.1, 0.2]),
                         np.array([True, True, False, False]))
        r = rates_at(s, 0.5)
        assert (r.far, r.frr, r.hter) == (0.0, 0.0, 0.0)

    def test_hter_arithmetic(self):
        assert abs((0.02222 + 0.10000) / 2.0 - 0.06111) < 1e-12

    def test_minus_inf_threshold(self):
        s = PairScoreSet(np.array([0.9, 0.1]), np.array([True, False]))
        r = rates_at(s, -np.inf)
        assert (r.far, r.frr, r.hter) == (1.0, 0.0, 0.5)

    def test_single_class_errors(self):
        s = PairScoreSet(np.array([1.0, 2.0]), np.array([True, True]))
        with pytest.raises(ValueError):
            rates_at(s, 0.0)


class TestEer:
    def test_perfect_separation(self):
        s = PairScoreSet(np.array([0.9, 0.8, 0.1, 0.2]),
                         np.array([True, True, False, False]))
        assert eer_threshold(s).hter == 0.0

    def test_all_equal_scores(self):
        s = PairScoreSet(np.ones(4), np.array([True, True, False, False]))
        r = eer_threshold(s)
        assert (r.far, r.frr, r.hter) == (1.0, 0.0, 0.5)

    def test_fully_inverted_pair(self):
        # genuine below impostor: FAR = FRR = 1 is the closest crossing
        # under the score >= tau accept rule and the stated tie-breaks
        s = PairScoreSet(np.array([0.4, 0.6]), np.array([True, False]))
        r = eer_threshold(s)
        assert (r.tau, r.far, r.frr) == (0.6, 1.0, 1.0)
        assert (r.tau, r.far, r.frr) == sweep_oracle(s.scores, s.genuine)

    def test_matches_sweep_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            s = make_set(rng)
            r = eer_threshold(s)
            tau, far, frr = sweep_oracle(s.scores, s.genuine)
            assert r.tau == tau and r.far == far and r.frr == frr

    def test_invariant_under_increasing_transform(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            s = make_set(rng)
            r1 = eer_threshold(s)
            r2 = eer_threshold(PairScoreSet(np.exp(s.scores), s.genuine))
            assert (r1.far, r1.frr) == (r2.far, r2.frr)


class TestDetPoints:
    def test_hand_oracle_two_scores(self):
        s = PairScoreSet(np.array([0.9, 0.1]), np.array([True, False]))
        pts = det_points(s)
        assert [(p[1], p[2]) for p in pts] == [(1.0, 0.0), (0.0, 0.0), (0.0, 1.0)]

    def test_far_non_increasing(self):
        rng = np.random.default_rng(13)
        s = make_set(rng)
        fars = [p[1] for p in det_points(s)]
        assert all(a >= b for a, b in zip(fars, fars[1:]))

    def test_clamping(self):
        from scipy.special import ndtri
        scores = np.concatenate([[1.0] * 10, np.linspace(-1, 0, 90)])
        genuine = np.zeros(100, dtype=bool)
        genuine[:10] = True
        pts = det_points(PairScoreSet(scores, genuine))
        zero_far = [p for p in pts if p[1] == 0.0]
        assert zero_far and all(abs(p[3] - ndtri(1.0 / 180)) < 1e-12 for p in zero_far)


class TestDistributions:
    def test_normal_cdf(self):
        assert normal_cdf(0.0) == 0.5
        for x in np.linspace(-8, 8, 33):
            oracle = quad(lambda t: math.exp(-t * t / 2) / math.sqrt(2 * math.pi),
                          -20, x)[0]
            assert abs(normal_cdf(x) - oracle) < 1e-10

    def test_chi2_sf_edges(self):
        assert chi2_sf(0.0, 3) == 1.0
        assert abs(chi2_sf(7.2, 2) - math.exp(-3.6)) < 1e-12

    def test_chi2_sf_numeric_oracle(self):
        for df in (1, 2, 5):
            for x in (0.5, 3.0, 10.0, 40.0):
                density = lambda t: (t ** (df / 2 - 1) * math.exp(-t / 2)
                                     / (2 ** (df / 2) * math.gamma(df / 2)))
                oracle = quad(density, x, np.inf)[0]
                assert abs(chi2_sf(x, df) - oracle) < 1e-10


class TestKruskalWallis:
    def test_textbook_example(self):
        h, p = kruskal_wallis([[1, 2, 3], [4, 5, 6], [7, 8, 9]])
        assert abs(h - 7.2) < 1e-12
        assert abs(p - math.exp(-3.6)) < 1e-3

    def test_matches_scipy(self):
        rng = np.random.default_rng(14)
        groups = [np.round(rng.normal(m, 1, 20), 1) for m in (0.0, 0.3, 0.8)]
        h, p = kruskal_wallis(groups)
        ref = kruskal(*groups)
        assert abs(h - ref.statistic) < 1e-9
        assert abs(p - ref.pvalue) < 1e-9

    def test_identical_groups(self):
        h, p = kruskal_wallis([[1, 2, 3]] * 3)
        assert h == 0.0 and p >= 0.99

    def test_all_values_identical(self):
        assert kruskal_wallis([[5, 5], [5, 5, 5]]) == (0.0, 1.0)

    def test_extreme_separation(self):
        rng = np.random.default_rng(15)
        a = rng.normal(0, 1, 100)
        b = rng.normal(10, 1, 100)
        _, p = kruskal_wallis([a, b])
        assert p < 1e-10

    def test_permutation_invariance(self):
        groups = [[1, 5, 3], [2, 2, 8], [9, 1, 4]]
        h1, p1 = kruskal_wallis(groups)
        h2, p2 = kruskal_wallis(groups[::-1])
        assert abs(h1 - h2) < 1e-12 and abs(p1 - p2) < 1e-12

    def test_errors(self):
        with pytest.raises(ValueError):
            kruskal_wallis([[1, 2]])
        with pytest.raises(ValueError):
            kruskal_wallis([[1, 2], []])


class TestDunn:
    def test_hand_computed_example(self):
        # ranks 1..9 -> mean ranks 2/5/8, no ties
        m = dunn_posthoc([[1, 2, 3], [4, 5, 6], [7, 8, 9]])
        var_base = 9 * 10 / 12.0
        z02 = (2.0 - 8.0) / math.sqrt(var_base * (2.0 / 3.0))
        p02 = min(1.0, 2.0 * (1.0 - normal_cdf(abs(z02))) * 3)
        assert abs(m[0][2] - p02) < 1e-12
        assert abs(m[0][2] - 0.021871) < 1e-5
        assert abs(m[0][1] - 0.539137) < 1e-5

    def test_identical_groups_capped_at_one(self):
        m = dunn_posthoc([[1, 2, 3]] * 3)
        off = m[~np.isnan(m)]
        assert np.all(off == 1.0)

    def test_symmetric_with_nan_diagonal(self):
        rng = np.random.default_rng(16)
        m = dunn_posthoc([rng.normal(k, 1, 10) for k in range(4)])
        assert m.shape == (4, 4)
        assert np.all(np.isnan(np.diag(m)))
        assert np.allclose(m, m.T, equal_nan=True)
        # 4 groups -> 6 pairwise tests
        iu = np.triu_indices(4, k=1)
        assert np.count_nonzero(~np.isnan(m[iu])) == 6

    def test_cap(self):
        m = dunn_posthoc([[1, 3, 2], [2, 1, 3], [3, 2, 1], [1, 2, 3]])
        assert np.nanmax(m) <= 1.0


class TestStageTests:
    def test_significant_adds_posthoc(self):
        rng = np.random.default_rng(17)
        rep = stage_tests([rng.normal(0, 1, 40), rng.normal(3, 1, 40)])
        assert rep.kw_pvalue <= 0.05 and rep.pairwise is not None

    def test_non_significant_omits_posthoc(self):
        rng = np.random.default_rng(18)
        rep = stage_tests([rng.normal(0, 1, 10), rng.normal(0, 1, 10)])
        assert rep.kw_pvalue > 0.05 and rep.pairwise is None

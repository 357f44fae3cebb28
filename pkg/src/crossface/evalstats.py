"""Biometric error metrics and nonparametric significance tests.

Accept rule is score >= tau (genuine is the positive class). EER is the
step-function crossing over the candidate thresholds, with the tie-break
chain min |FAR-FRR| -> min FAR+FRR -> min tau; no interpolation.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincc, ndtri
from scipy.stats import rankdata


@dataclass(frozen=True)
class PairScoreSet:
    """Scores with genuine/impostor labels; higher means more genuine."""
    scores: np.ndarray
    genuine: np.ndarray   # bool mask

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        g = np.asarray(self.genuine, dtype=bool)
        if s.ndim != 1 or s.size == 0 or s.shape != g.shape:
            raise ValueError("scores and labels must be matching non-empty 1-D arrays")
        s.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "genuine", g)

    def require_both_classes(self):
        if not self.genuine.any() or self.genuine.all():
            raise ValueError("score set needs both genuine and impostor entries")


@dataclass(frozen=True)
class ThresholdReport:
    tau: float
    far: float
    frr: float

    @property
    def hter(self):
        return (self.far + self.frr) / 2.0

    def to_dict(self):
        return {"tau": self.tau, "far": self.far, "frr": self.frr, "hter": self.hter}


def rates_at(scores: PairScoreSet, tau: float) -> ThresholdReport:
    """FAR/FRR/HTER at one threshold."""
    scores.require_both_classes()
    gen = scores.scores[scores.genuine]
    imp = scores.scores[~scores.genuine]
    far = float(np.count_nonzero(imp >= tau)) / imp.size
    frr = float(np.count_nonzero(gen < tau)) / gen.size
    return ThresholdReport(float(tau), far, frr)


def _candidate_curve(scores: PairScoreSet):
    """FAR/FRR at every candidate threshold (unique scores plus one above)."""
    gen = np.sort(scores.scores[scores.genuine])
    imp = np.sort(scores.scores[~scores.genuine])
    taus = np.unique(scores.scores)
    taus = np.append(taus, taus[-1] + 1.0)
    far = (imp.size - np.searchsorted(imp, taus, side="left")) / imp.size
    frr = np.searchsorted(gen, taus, side="left") / gen.size
    return taus, far, frr


def eer_threshold(scores: PairScoreSet) -> ThresholdReport:
    """Operating point closest to FAR = FRR over the candidate sweep."""
    scores.require_both_classes()
    taus, far, frr = _candidate_curve(scores)
    order = np.lexsort((taus, far + frr, np.abs(far - frr)))
    k = order[0]
    return ThresholdReport(float(taus[k]), float(far[k]), float(frr[k]))


def det_points(scores: PairScoreSet):
    """DET staircase: (tau, far, frr, probit_far, probit_frr) per threshold.

    Rates are clamped to [1/(2n), 1 - 1/(2n)] of their own trial count
    before the normal-deviate transform.
    """
    scores.require_both_classes()
    taus, far, frr = _candidate_curve(scores)
    n_imp = int(np.count_nonzero(~scores.genuine))
    n_gen = int(np.count_nonzero(scores.genuine))
    pfar = ndtri(np.clip(far, 1.0 / (2 * n_imp), 1.0 - 1.0 / (2 * n_imp)))
    pfrr = ndtri(np.clip(frr, 1.0 / (2 * n_gen), 1.0 - 1.0 / (2 * n_gen)))
    return [(float(t), float(a), float(r), float(pa), float(pr))
            for t, a, r, pa, pr in zip(taus, far, frr, pfar, pfrr)]


def normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def chi2_sf(x: float, df: int) -> float:
    """Chi-square survival function via the regularized upper incomplete gamma."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if x <= 0.0:
        return 1.0
    return float(gammaincc(df / 2.0, x / 2.0))


def _tie_term(all_values):
    _, counts = np.unique(all_values, return_counts=True)
    return float(np.sum(counts.astype(np.float64) ** 3 - counts))


def kruskal_wallis(groups):
    """Tie-corrected Kruskal-Wallis H and its chi-square p-value."""
    if len(groups) < 2:
        raise ValueError("need at least 2 groups")
    arrays = [np.asarray(g, dtype=np.float64) for g in groups]
    if any(a.size == 0 for a in arrays):
        raise ValueError("empty group")
    pooled = np.concatenate(arrays)
    n_total = pooled.size
    ranks = rankdata(pooled)
    h = 0.0
    start = 0
    for a in arrays:
        r_mean = np.mean(ranks[start:start + a.size])
        h += a.size * (r_mean - (n_total + 1) / 2.0) ** 2
        start += a.size
    h *= 12.0 / (n_total * (n_total + 1))
    correction = 1.0 - _tie_term(pooled) / (n_total ** 3 - n_total)
    if correction <= 0.0:
        return 0.0, 1.0     # all values identical
    h /= correction
    return float(h), chi2_sf(h, len(groups) - 1)


def dunn_posthoc(groups):
    """Dunn's pairwise z-tests with Bonferroni adjustment, capped at 1.

    Returns a symmetric k x k matrix of adjusted p-values with NaN on
    the diagonal.
    """
    if len(groups) < 2:
        raise ValueError("need at least 2 groups")
    arrays = [np.asarray(g, dtype=np.float64) for g in groups]
    if any(a.size == 0 for a in arrays):
        raise ValueError("empty group")
    pooled = np.concatenate(arrays)
    n_total = pooled.size
    ranks = rankdata(pooled)
    means, sizes = [], []
    start = 0
    for a in arrays:
        means.append(np.mean(ranks[start:start + a.size]))
        sizes.append(a.size)
        start += a.size
    k = len(arrays)
    variance_base = (n_total * (n_total + 1) / 12.0
                     - _tie_term(pooled) / (12.0 * (n_total - 1)))
    m_tests = k * (k - 1) // 2
    out = np.full((k, k), np.nan)
    for i in range(k):
        for j in range(i + 1, k):
            denom = math.sqrt(variance_base * (1.0 / sizes[i] + 1.0 / sizes[j]))
            if denom == 0.0:
                p = 1.0
            else:
                z = (means[i] - means[j]) / denom
                p = min(1.0, 2.0 * (1.0 - normal_cdf(abs(z))) * m_tests)
            out[i, j] = out[j, i] = p
    return out


@dataclass(frozen=True)
class StatTestReport:
    h_statistic: float
    kw_pvalue: float
    pairwise: np.ndarray | None    # Bonferroni-adjusted Dunn p-values

    def to_dict(self):
        return {"h": self.h_statistic, "p": self.kw_pvalue,
                "dunn": None if self.pairwise is None else self.pairwise.tolist()}


def stage_tests(groups, alpha=0.05) -> StatTestReport:
    """Omnibus test plus post hoc matrix when the omnibus p is significant."""
    h, p = kruskal_wallis(groups)
    pairwise = dunn_posthoc(groups) if p <= alpha else None
    return StatTestReport(h, p, pairwise)

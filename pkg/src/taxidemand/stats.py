"""Rank-based two-sample tests for rainy-versus-clear comparisons.

Ranks are midranks throughout.  Internally every rank is doubled so that
midranks are integers; exact null distributions are then counted with a
subset-sum recursion over doubled ranks rather than by enumerating label
assignments.  Above ``exact_cutoff`` observations the Mann-Whitney and
Wilcoxon tests switch to a tie-corrected normal approximation with continuity
correction; Kruskal-Wallis always uses the chi-square approximation.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.stats import chi2, norm

from .windows import DEFAULT_WINDOWS, OFFPEAK, WEEKDAY, WEEKEND, TimeWindow, classify_hours, sample_pseudo_days

MANN_WHITNEY = "mann_whitney"
WILCOXON = "wilcoxon_signed_rank"
KRUSKAL = "kruskal_wallis"
OBSERVED = "observed"
PERMUTATION = "permutation"
ALTERNATIVES = ("two_sided", "less", "greater")
EXACT_CUTOFF = 20
TABLE_LABELS = {WILCOXON: "Wilcoxon", MANN_WHITNEY: "Mann-Whitney", KRUSKAL: "Kruskal"}
_METHOD_ORDER = (WILCOXON, MANN_WHITNEY, KRUSKAL)


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # not a pytest class

    method: str
    statistic: float
    p_value: float
    n1: int
    n2: int
    ties_present: bool = False
    regime: str = OBSERVED
    exact: bool = False
    alternative: str = "two_sided"
    insufficient: bool = False
    window: str | None = None
    day_class: str | None = None
    index: str | None = None
    detail: Mapping = field(default_factory=dict, compare=False)

    @classmethod
    def insufficient_result(cls, method: str, n1: int, n2: int, **kw) -> "TestResult":
        return cls(method, float("nan"), float("nan"), n1, n2, insufficient=True, **kw)


def doubled_midranks(values) -> tuple[np.ndarray, np.ndarray]:
    """Twice the midrank of each value (an integer) and the sizes of all tie groups."""
    v = np.asarray(values, dtype=np.float64)
    n = v.size
    order = np.argsort(v, kind="mergesort")
    s = v[order]
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    ends = np.r_[starts[1:], n]
    # positions start..end-1 (0-based) share rank (start+1 + end)/2
    group_rank2 = starts + 1 + ends
    ranks2 = np.empty(n, dtype=np.int64)
    ranks2[order] = np.repeat(group_rank2, ends - starts)
    return ranks2, ends - starts


def midranks(values) -> np.ndarray:
    r2, _ = doubled_midranks(values)
    return r2 / 2.0


def _tie_term(ties: np.ndarray) -> float:
    t = ties.astype(np.float64)
    return float(np.sum(t**3 - t))


def _check_alternative(alternative: str) -> None:
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}")


def _subset_sum_counts(weights: np.ndarray, k: int | None = None) -> np.ndarray:
    """Counts of subsets by weight sum.

    With ``k`` given, only subsets of exactly ``k`` items are counted; the
    result is indexed by sum.  Counts are exact int64 (fine up to ~60 items).
    """
    weights = np.asarray(weights, dtype=np.int64)
    total = int(weights.sum())
    if k is None:
        dp = np.zeros(total + 1, dtype=np.int64)
        dp[0] = 1
        for w in weights:
            if w:
                dp[w:] = dp[w:] + dp[:-w].copy()
            else:
                dp = dp * 2
        return dp
    dp = np.zeros((k + 1, total + 1), dtype=np.int64)
    dp[0, 0] = 1
    for i, w in enumerate(weights):
        for j in range(min(i + 1, k), 0, -1):
            if w:
                dp[j, w:] += dp[j - 1, :-w]
            else:
                dp[j] += dp[j - 1]
    return dp[k]


def _tail_p(stat2: np.ndarray, counts: np.ndarray, obs2: int, center2: float, alternative: str) -> float:
    """Exact p from a count distribution over doubled statistics."""
    mask = counts > 0
    stat2, counts = stat2[mask], counts[mask]
    total = counts.sum()
    if alternative == "two_sided":
        hit = np.abs(2 * stat2 - 2 * center2) >= abs(2 * obs2 - 2 * center2)
    elif alternative == "less":
        hit = stat2 <= obs2
    else:
        hit = stat2 >= obs2
    return min(1.0, float(counts[hit].sum()) / float(total))


def _normal_p(stat: float, mean: float, sd: float, alternative: str) -> float:
    if sd <= 0:
        return 1.0
    if alternative == "two_sided":
        z = (abs(stat - mean) - 0.5) / sd
        return float(min(1.0, 2.0 * norm.sf(z)))
    if alternative == "less":
        return float(norm.cdf((stat - mean + 0.5) / sd))
    return float(norm.sf((stat - mean - 0.5) / sd))


def mann_whitney_u(
    x: Sequence[float],
    y: Sequence[float],
    alternative: str = "two_sided",
    exact_cutoff: int = EXACT_CUTOFF,
    method: str = "auto",
) -> TestResult:
    """Mann-Whitney U of ``x`` against ``y``.

    ``statistic`` is U for ``x``: the number of (x, y) pairs with x > y plus
    half the tied pairs.  ``method`` is ``"auto"`` (exact when
    ``len(x) + len(y) <= exact_cutoff``), ``"exact"`` or ``"asymptotic"``.
    "less" means x tends to be smaller than y.
    """
    _check_alternative(alternative)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n1, n2 = x.size, y.size
    if n1 == 0 or n2 == 0:
        raise ValueError("empty sample")
    N = n1 + n2
    r2, ties = doubled_midranks(np.concatenate([x, y]))
    u2 = int(r2[:n1].sum()) - n1 * (n1 + 1)
    mean2 = n1 * n2
    ties_present = bool((ties > 1).any())
    exact = method == "exact" or (method == "auto" and N <= exact_cutoff)
    if exact:
        counts = _subset_sum_counts(r2, n1)
        stat2 = np.arange(counts.size) - n1 * (n1 + 1)
        p = _tail_p(stat2, counts, u2, float(mean2), alternative)
    else:
        var = n1 * n2 / 12.0 * ((N + 1) - _tie_term(ties) / (N * (N - 1)))
        p = _normal_p(u2 / 2.0, n1 * n2 / 2.0, float(np.sqrt(max(var, 0.0))), alternative)
    return TestResult(MANN_WHITNEY, u2 / 2.0, p, n1, n2, ties_present, exact=exact, alternative=alternative)


def wilcoxon_signed_rank(
    pairs: Sequence[tuple[float, float]] | None = None,
    alternative: str = "two_sided",
    exact_cutoff: int = EXACT_CUTOFF,
    zero_method: str = "wilcox",
    method: str = "auto",
    differences: Sequence[float] | None = None,
) -> TestResult:
    """Wilcoxon signed-rank test on paired observations ``(a, b)``.

    Differences are ``a - b``.  ``zero_method="wilcox"`` drops zero
    differences before ranking; ``"pratt"`` ranks them and then drops them.
    ``statistic`` is ``min(W+, W-)``; ``detail`` also holds both sums.  The
    one-sided alternatives refer to W+ ("greater": a tends to exceed b).
    """
    _check_alternative(alternative)
    if zero_method not in ("wilcox", "pratt"):
        raise ValueError("zero_method must be 'wilcox' or 'pratt'")
    if differences is None:
        p_arr = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
        d = p_arr[:, 0] - p_arr[:, 1]
    else:
        d = np.asarray(differences, dtype=np.float64)
    if d.size == 0 or not (d != 0).any():
        raise ValueError("degenerate pairing: all differences are zero")
    if zero_method == "wilcox":
        d = d[d != 0]
        r2, ties = doubled_midranks(np.abs(d))
    else:
        r2_all, _ = doubled_midranks(np.abs(d))
        r2 = r2_all[d != 0]
        d = d[d != 0]
        _, ties = doubled_midranks(np.abs(d))
    n = d.size
    wp2 = int(r2[d > 0].sum())
    wm2 = int(r2[d < 0].sum())
    total2 = wp2 + wm2
    ties_present = bool((ties > 1).any())
    exact = method == "exact" or (method == "auto" and n <= exact_cutoff)
    if exact:
        counts = _subset_sum_counts(r2)
        p = _tail_p(np.arange(counts.size), counts, wp2, total2 / 2.0, alternative)
    else:
        sd = float(np.sqrt(np.sum((r2 / 2.0) ** 2) / 4.0))
        p = _normal_p(wp2 / 2.0, total2 / 4.0, sd, alternative)
    return TestResult(
        WILCOXON,
        min(wp2, wm2) / 2.0,
        p,
        n,
        n,
        ties_present,
        exact=exact,
        alternative=alternative,
        detail={"w_plus": wp2 / 2.0, "w_minus": wm2 / 2.0},
    )


def kruskal_wallis(*groups: Sequence[float]) -> TestResult:
    """Kruskal-Wallis H across two or more groups, tie-corrected, chi-square p-value.

    When every observation is tied the correction factor vanishes; H is then
    defined as 0 with p = 1.
    """
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    arrays = [np.asarray(g, dtype=np.float64) for g in groups]
    sizes = np.array([a.size for a in arrays])
    if (sizes == 0).any():
        raise ValueError("empty group")
    N = int(sizes.sum())
    if N < 3:
        raise ValueError("need at least three observations")
    r2, ties = doubled_midranks(np.concatenate(arrays))
    r = r2 / 2.0
    bounds = np.r_[0, np.cumsum(sizes)]
    rank_sums = np.array([r[a:b].sum() for a, b in zip(bounds, bounds[1:])])
    c = 1.0 - _tie_term(ties) / (N**3 - N)
    if c <= 0:
        h, p = 0.0, 1.0
    else:
        h = (12.0 / (N * (N + 1)) * np.sum(rank_sums**2 / sizes) - 3.0 * (N + 1)) / c
        h = max(float(h), 0.0)
        p = float(chi2.sf(h, len(arrays) - 1))
    return TestResult(
        KRUSKAL,
        h,
        p,
        int(sizes[0]),
        int(sizes[1]),
        bool((ties > 1).any()),
        detail={"sizes": tuple(int(s) for s in sizes)},
    )


# ---------------------------------------------------------------------------
# rainy vs clear comparisons


def _stratum_seed(seed: int, w: int, dc: int) -> int:
    return int(np.random.SeedSequence([seed, w, dc]).generate_state(1)[0])


def _three_tests(rainy, clear, pairs, min_samples, **tags) -> list[TestResult]:
    out = []
    pairs = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    if len(pairs) < min_samples or not (pairs[:, 0] != pairs[:, 1]).any():
        out.append(TestResult.insufficient_result(WILCOXON, len(pairs), len(pairs), **tags))
    else:
        r = wilcoxon_signed_rank(pairs)
        out.append(_tag(r, **tags))
    if len(rainy) < min_samples or len(clear) < min_samples:
        out.append(TestResult.insufficient_result(MANN_WHITNEY, len(rainy), len(clear), **tags))
        out.append(TestResult.insufficient_result(KRUSKAL, len(rainy), len(clear), **tags))
    else:
        out.append(_tag(mann_whitney_u(rainy, clear), **tags))
        out.append(_tag(kruskal_wallis(rainy, clear), **tags))
    return out


def _tag(r: TestResult, **tags) -> TestResult:
    from dataclasses import replace

    return replace(r, **tags)


def run_comparison(
    series: pd.Series,
    classification: pd.Series | Mapping,
    regime: str = OBSERVED,
    windows: Sequence[TimeWindow] = DEFAULT_WINDOWS,
    seed: int = 0,
    n_pseudo_days: int = 1000,
    hours_per_day: int = 4,
    min_samples: int = 2,
    index_name: str | None = None,
) -> list[TestResult]:
    """Wilcoxon, Mann-Whitney and Kruskal-Wallis tests, rainy vs clear, per window and day class.

    ``series`` maps hour (epoch seconds) to an index value; ``classification``
    maps hour to True (rainy), False (clear) or missing.

    Observed regime: the samples are the hourly values themselves.  For the
    paired Wilcoxon test each rainy hour is paired with the clear mean of its
    slot (same hour of day and day class).

    Permutation regime: ``n_pseudo_days`` pseudo-days of ``hours_per_day``
    hours are drawn from the stratum.  Each pseudo-day contributes the mean
    over its rainy hours to the rainy sample and the mean over its clear hours
    to the clear sample; pseudo-days holding both give the Wilcoxon pairs.
    """
    if regime not in (OBSERVED, PERMUTATION):
        raise ValueError(f"regime must be {OBSERVED!r} or {PERMUTATION!r}")
    values = pd.Series(series, dtype=np.float64)
    rain = pd.Series(classification).astype("boolean").reindex(values.index)
    keep = values.notna().to_numpy() & rain.notna().to_numpy()
    hours = values.index.to_numpy(np.int64)[keep]
    v = values.to_numpy()[keep]
    r = rain.to_numpy(dtype=bool, na_value=False)[keep]
    cls = classify_hours(hours, windows)
    labels = [w.label for w in windows if w.label != OFFPEAK]
    results = []
    for wi, label in enumerate(labels):
        for di, dc in enumerate((WEEKDAY, WEEKEND)):
            m = (cls["window"].to_numpy() == label) & (cls["day_class"].to_numpy() == dc)
            sv, sr, shod = v[m], r[m], cls["hour_of_day"].to_numpy()[m]
            tags = dict(regime=regime, window=label, day_class=dc, index=index_name)
            if regime == OBSERVED:
                rainy, clear = sv[sr], sv[~sr]
                pairs = []
                for h in np.unique(shod[sr]):
                    cm = sv[(shod == h) & ~sr]
                    if cm.size:
                        pairs.extend((x, cm.mean()) for x in sv[(shod == h) & sr])
                results.extend(_three_tests(rainy, clear, pairs, min_samples, **tags))
            else:
                if sv.size < hours_per_day:
                    results.extend(_three_tests([], [], [], min_samples, **tags))
                    continue
                idx = sample_pseudo_days(sv.size, _stratum_seed(seed, wi, di), n_pseudo_days, hours_per_day)
                pv, pr = sv[idx], sr[idx]
                n_r = pr.sum(axis=1)
                n_c = hours_per_day - n_r
                with np.errstate(invalid="ignore", divide="ignore"):
                    rain_mean = np.where(pr, pv, 0.0).sum(axis=1) / n_r
                    clear_mean = np.where(~pr, pv, 0.0).sum(axis=1) / n_c
                both = (n_r > 0) & (n_c > 0)
                results.extend(
                    _three_tests(
                        rain_mean[n_r > 0],
                        clear_mean[n_c > 0],
                        np.column_stack([rain_mean[both], clear_mean[both]]),
                        min_samples,
                        **tags,
                    )
                )
    order = {m: i for i, m in enumerate(_METHOD_ORDER)}
    results.sort(key=lambda t: (labels.index(t.window), t.day_class, order[t.method], t.regime))
    return results


TABLE_COLUMNS = ["day_class", "test", "perm_statistic", "perm_pvalue", "obs_statistic", "obs_pvalue"]


def _fmt(x: float, insufficient: bool) -> str:
    if insufficient or x is None or not np.isfinite(x):
        return "-"
    return f"{x:.10g}"


def results_table(results: Sequence[TestResult], window: str) -> pd.DataFrame:
    """One window's results as a table: one row per day class and test, permutation columns then observed."""
    rows = []
    for dc in (WEEKDAY, WEEKEND):
        for method in _METHOD_ORDER:
            cell = {OBSERVED: ("-", "-"), PERMUTATION: ("-", "-")}
            for t in results:
                if t.window == window and t.day_class == dc and t.method == method:
                    cell[t.regime] = (_fmt(t.statistic, t.insufficient), _fmt(t.p_value, t.insufficient))
            rows.append((dc.capitalize(), TABLE_LABELS[method], *cell[PERMUTATION], *cell[OBSERVED]))
    return pd.DataFrame(rows, columns=TABLE_COLUMNS)


def write_results_table(results: Sequence[TestResult], window: str, path: str | os.PathLike) -> None:
    results_table(results, window).to_csv(path, index=False, lineterminator="\n")

"""Statistical tests on per-height state sequences.

Honest mining under a latency that forks naturally at rate beta produces
Pair indicators that are i.i.d. Bernoulli(beta).  The battery therefore
checks independence of each height's state from its k-height prefix
(likelihood-ratio G tests at lags 1..3) and the geometric law of pair-run
lengths.  Tests read nothing but the Single/Pair sequence -- no creator
identities, no round numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .errors import ParameterError
from .model import StateSequence

REJECT = "reject"
PASS = "pass"
INCONCLUSIVE = "inconclusive"


@dataclass
class TransitionTable:
    """Sliding-window counts of (k-prefix pattern, next state)."""

    lag: int
    counts: np.ndarray          # shape (2^k, 2)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def pattern_label(self, idx: int) -> str:
        bits = format(idx, f"0{self.lag}b")
        return "".join("P" if b == "1" else "S" for b in bits)


def _as_array(seq) -> np.ndarray:
    if isinstance(seq, StateSequence):
        return seq.states
    return np.asarray(seq, dtype=np.uint8)


def transition_counts(seq, lag: int) -> TransitionTable:
    """Counts over (prefix of ``lag`` states, next state), sliding by one."""
    s = _as_array(seq)
    if lag < 1:
        raise ParameterError("lag must be >= 1")
    n = len(s)
    if n <= lag:
        raise ParameterError(f"sequence of length {n} too short for lag {lag}")
    idx = np.zeros(n - lag, dtype=np.int64)
    for j in range(lag):
        idx = (idx << 1) | s[j:n - lag + j]
    nxt = s[lag:]
    counts = np.zeros((1 << lag, 2), dtype=np.int64)
    np.add.at(counts, (idx, nxt.astype(np.int64)), 1)
    return TransitionTable(lag=lag, counts=counts)


@dataclass
class TestResult:
    name: str
    statistic: float
    df: int
    p_value: float
    verdict: str
    detail: str = ""


@dataclass
class DetectionReport:
    """Battery output: per-test entries, the pair-rate estimate, and an
    overall Bonferroni-corrected verdict."""

    tests: list[TestResult]
    beta_hat: float
    beta_ci: tuple[float, float]
    significance: float

    @property
    def verdict(self) -> str:
        applicable = [t for t in self.tests if t.verdict != INCONCLUSIVE]
        if not applicable:
            return INCONCLUSIVE
        cut = self.significance / len(applicable)
        return REJECT if any(t.p_value < cut for t in applicable) else PASS

    def rows(self) -> list[dict]:
        out = []
        for t in self.tests:
            out.append({"test": t.name, "statistic": t.statistic, "df": t.df,
                        "p_value": t.p_value, "verdict": t.verdict})
        return out


def g_test_independence(seq, lag: int, significance: float = 0.05) -> TestResult:
    """Likelihood-ratio test of next-state independence from its k-prefix.

    Prefix rows whose expected counts fall below 5 are pooled into one
    reserve row; degrees of freedom come from the pooled table shape.
    """
    table = transition_counts(seq, lag)
    counts = table.counts.astype(float)
    n = counts.sum()
    name = f"g-lag{lag}"
    col = counts.sum(axis=0)
    if n == 0 or col.min() == 0:
        return TestResult(name, 0.0, 0, 1.0, INCONCLUSIVE, "degenerate table")
    row = counts.sum(axis=1)
    p_col = col / n
    expected_min = row * p_col.min()
    keep = expected_min >= 5.0
    pooled = counts[keep]
    if (~keep).any():
        rest = counts[~keep].sum(axis=0, keepdims=True)
        if rest.sum() > 0:
            pooled = np.vstack([pooled, rest])
    if pooled.shape[0] < 2:
        return TestResult(name, 0.0, 0, 1.0, INCONCLUSIVE, "all mass in one row")
    rows_ = pooled.sum(axis=1, keepdims=True)
    cols_ = pooled.sum(axis=0, keepdims=True)
    expected = rows_ @ cols_ / n
    mask = pooled > 0
    g = 2.0 * float((pooled[mask] * np.log(pooled[mask] / expected[mask])).sum())
    df = (pooled.shape[0] - 1) * (pooled.shape[1] - 1)
    p = float(stats.chi2.sf(g, df))
    verdict = REJECT if p < significance else PASS
    return TestResult(name, g, df, p, verdict)


def pair_run_lengths(seq) -> np.ndarray:
    """Lengths of completed pair runs (bounded by a Single on both sides)."""
    s = _as_array(seq)
    padded = np.concatenate([[0], s, [0]])
    d = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    lengths = ends - starts
    # drop runs touching either boundary: they are censored
    if len(lengths) and s[0] == 1:
        lengths = lengths[1:]
    if len(lengths) and s[-1] == 1:
        lengths = lengths[:-1]
    return lengths


def run_length_test(seq, significance: float = 0.05,
                    min_runs: int = 30) -> TestResult:
    """Goodness of fit of completed pair-run lengths to a geometric law.

    The continuation rate is fitted by maximum likelihood from the runs
    themselves (costing one degree of freedom); bins are pooled from the
    first length whose expected count drops below 5.
    """
    name = "pair-runs"
    runs = pair_run_lengths(seq)
    n = len(runs)
    if n < min_runs:
        return TestResult(name, 0.0, 0, 1.0, INCONCLUSIVE, f"only {n} runs")
    total = int(runs.sum())
    q = 1.0 - n / total          # continuation probability
    if q <= 0.0:
        return TestResult(name, 0.0, 0, 1.0, INCONCLUSIVE, "all runs length 1")
    # expected count for length m is n (1-q) q^(m-1); pool the tail
    m_star = 1
    while n * (1.0 - q) * q ** (m_star - 1) >= 5.0:
        m_star += 1
    m_star = max(m_star, 2)
    edges = np.arange(1, m_star + 1)
    obs = np.array([(runs == m).sum() for m in edges[:-1]] +
                   [(runs >= m_star).sum()], dtype=float)
    exp = np.array([n * (1.0 - q) * q ** (m - 1) for m in edges[:-1]] +
                   [n * q ** (m_star - 1)])
    if len(obs) < 3:
        return TestResult(name, 0.0, 0, 1.0, INCONCLUSIVE, "too few length bins")
    stat = float(((obs - exp) ** 2 / exp).sum())
    df = len(obs) - 2            # one fitted parameter
    p = float(stats.chi2.sf(stat, df))
    verdict = REJECT if p < significance else PASS
    return TestResult(name, stat, df, p, verdict)


def estimate_beta(seq, confidence: float = 0.95) -> tuple[float, float, float]:
    """Pair-rate estimate with its Wilson score interval."""
    s = _as_array(seq)
    n = len(s)
    if n == 0:
        raise ParameterError("empty sequence")
    k = int(s.sum())
    beta_hat = k / n
    z = stats.norm.ppf(0.5 + confidence / 2.0)
    denom = 1.0 + z * z / n
    center = (beta_hat + z * z / (2 * n)) / denom
    half = z * math.sqrt(beta_hat * (1 - beta_hat) / n + z * z / (4 * n * n)) / denom
    return beta_hat, max(0.0, center - half), min(1.0, center + half)


def battery(seq, significance: float = 0.05, lags=(1, 2, 3),
            confidence: float = 0.95) -> DetectionReport:
    """Full test battery; the overall verdict is Bonferroni-corrected."""
    tests = [g_test_independence(seq, lag, significance) for lag in lags]
    tests.append(run_length_test(seq, significance))
    beta_hat, lo, hi = estimate_beta(seq, confidence)
    return DetectionReport(tests=tests, beta_hat=beta_hat, beta_ci=(lo, hi),
                           significance=significance)

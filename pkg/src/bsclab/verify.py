"""Oracles certifying the compressor's exactness claims.

All chunk probabilities factor through the per-party error counts
(m_x, m_y), so instead of 2^gamma leaves the oracle works on the
(gamma/2+1)^2 class grid: it replays the threshold protocol per class,
applies the closed-form acceptance products, and reconstructs each branch's
output law and per-round acceptance mass analytically.  The mixture must
reproduce the product-binomial channel law exactly; Monte Carlo runs of the
real sampler are then compared against it with a chi-square test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import gammaln
from scipy.stats import chi2

from . import compressor
from .core import ALICE, BOB, CostLedger, ProtocolSpec, RandomSource, count_errors
from .compressor import ChunkParams, ProductCountDistribution, threshold


def trace_threshold(
    dist: ProductCountDistribution, theta: int, m_x: int, m_y: int
) -> tuple[int, int, int, int]:
    """Deterministic replay of the threshold protocol (it has no randomness).

    Returns (theta_x, theta_y, answer, rounds).
    """
    res = threshold(theta, dist, m_x, m_y)
    return res.theta_x, res.theta_y, res.answer, res.rounds_used


def class_law(half: int, epsilon: float) -> np.ndarray:
    """Exact product law of (m_x, m_y) for a depth-2*half run at advantage eps."""
    ks = np.arange(half + 1)
    log_binom = gammaln(half + 1) - gammaln(ks + 1) - gammaln(half - ks + 1)
    lm, lp = math.log(0.5 - epsilon), math.log(0.5 + epsilon)
    log_margin = log_binom + ks * lm + (half - ks) * lp
    margin = np.exp(log_margin)
    return np.outer(margin, margin)


@dataclass
class ChunkAnalysis:
    """Exact branch-by-branch account of one chunk's sampling distribution."""

    params: ChunkParams
    mixture: np.ndarray
    low_law: np.ndarray
    high_law: np.ndarray
    mass_low: float
    mass_high: float


def exact_branch_analysis(params: ChunkParams) -> ChunkAnalysis:
    if params.gamma > 64:
        raise ValueError("class DP guarded to gamma <= 64")
    violations = compressor.validate_params(params)
    if violations:
        raise ValueError("; ".join(violations))
    e = params.epsilon
    half = params.half
    ti = params.theta_int
    l1m, l1p = math.log(0.5 - e), math.log(0.5 + e)
    l2m, l2p = math.log(0.5 - 2 * e), math.log(0.5 + 2 * e)
    mx = np.arange(half + 1)[:, None]
    my = np.arange(half + 1)[None, :]

    # Low branch: candidate law is the exact doubled-advantage class law
    # (the nested simulation is itself exact, verified at its own scale).
    d_low = ProductCountDistribution.binomial(half, 0.5 - 2 * e)
    ans0, tx0, ty0, _ = compressor.threshold_table(d_low, ti, half)
    acc0 = np.exp(
        (mx - tx0) * (l1m - l2m)
        + (tx0 - mx) * (l1p - l2p)
        + (my - ty0) * (l1m - l2m)
        + (ty0 - my) * (l1p - l2p)
    )
    accepted0 = class_law(half, 2 * e) * (ans0 == 0) * acc0
    mass_low = float(accepted0.sum())
    low_law = accepted0 / mass_low if mass_low > 0 else accepted0

    # High branch: uniform proposals over leaves.
    d_high = ProductCountDistribution.uniform_leaves(half)
    ans1, tx1, ty1, _ = compressor.threshold_table(d_high, ti, half)
    log_t = math.log(params.t)
    acc1 = np.exp(
        (mx + my) * l1m
        + (2 * half - mx - my) * l1p
        - 2 * log_t
        - (tx1 + ty1 - ti) * (l1m - l1p)
        + 2 * half * math.log(2.0)
    )
    accepted1 = class_law(half, 0.0) * (ans1 == 1) * acc1
    mass_high = float(accepted1.sum())
    high_law = accepted1 / mass_high if mass_high > 0 else accepted1

    p = params.low_mass
    mixture = p * low_law + (1.0 - p) * high_law
    return ChunkAnalysis(params, mixture, low_law, high_law, mass_low, mass_high)


def exact_chunk_distribution(params: ChunkParams) -> np.ndarray:
    """Exact output class law of one chunk, from the protocol mechanics alone."""
    return exact_branch_analysis(params).mixture


@dataclass(frozen=True)
class GofResult:
    statistic: float
    dof: int
    p_value: float
    passed: bool
    sample_size: int
    significance: float = 0.001


def chi_square_gof(
    counts: np.ndarray, expected_probs: np.ndarray, significance: float = 0.001
) -> GofResult:
    """Chi-square goodness of fit with cells below expected count 5 pooled.

    A degenerate expectation (fewer than two pooled cells) passes trivially
    with p = 1.
    """
    observed = np.asarray(counts, dtype=float).ravel()
    probs = np.asarray(expected_probs, dtype=float).ravel()
    if observed.shape != probs.shape:
        raise ValueError("counts and expected law have different shapes")
    n = observed.sum()
    expected = probs * n
    order = np.argsort(expected)
    groups: list[tuple[float, float]] = []
    obs_acc = exp_acc = 0.0
    for idx in order:
        obs_acc += observed[idx]
        exp_acc += expected[idx]
        if exp_acc >= 5.0:
            groups.append((obs_acc, exp_acc))
            obs_acc = exp_acc = 0.0
    if exp_acc > 0.0:
        if groups:
            o, e = groups[-1]
            groups[-1] = (o + obs_acc, e + exp_acc)
        else:
            groups.append((obs_acc, exp_acc))
    if len(groups) < 2:
        return GofResult(0.0, 0, 1.0, True, int(n), significance)
    stat = sum((o - e) ** 2 / e for o, e in groups)
    dof = len(groups) - 1
    p_value = float(chi2.sf(stat, dof))
    return GofResult(
        float(stat), dof, p_value, p_value >= significance, int(n), significance
    )


@dataclass
class MonteCarloChunkResult:
    counts: np.ndarray
    n_trials: int
    mean_bits: float
    p95_bits: float
    branch_trials: dict[int, int]
    branch_mean_rounds: dict[int, float]
    rejection_rounds: dict[int, np.ndarray]
    mean_threshold_rounds: float
    bits: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    failures: list[str] = field(default_factory=list)

    @property
    def empirical_law(self) -> np.ndarray:
        return self.counts / max(self.counts.sum(), 1)


def monte_carlo_chunk(
    params: ChunkParams,
    spec: ProtocolSpec,
    x: Any,
    y: Any,
    n_trials: int,
    base_seed: int,
) -> MonteCarloChunkResult:
    """Seeded batch of real chunk runs; class counts plus cost diagnostics.

    Trial i uses seed base_seed + i.  The class of each output leaf is
    recovered by independent replay (count_errors), which also exercises the
    leaf materialization path.  Aborted trials are recorded, not fatal.
    """
    if spec.rounds != params.gamma:
        raise ValueError("monte_carlo_chunk wants a spec of exactly one chunk depth")
    half = params.half
    counts = np.zeros((half + 1, half + 1), dtype=np.int64)
    bits = np.zeros(n_trials, dtype=np.int64)
    rounds_by_branch: dict[int, list[int]] = {0: [], 1: []}
    threshold_rounds_total = 0
    failures: list[str] = []
    used = 0
    for i in range(n_trials):
        rng = RandomSource.for_trial(base_seed, i)
        ledger = CostLedger()
        record: dict = {}
        try:
            leaf = compressor.simulate_chunk(
                spec, x, y, "", params, rng, ledger, record
            )
        except Exception as exc:  # recorded per trial, batch continues
            failures.append(f"trial {i}: {exc}")
            continue
        m_x = count_errors(spec, ALICE, x, leaf)
        m_y = count_errors(spec, BOB, y, leaf)
        counts[m_x, m_y] += 1
        bits[used] = ledger.bits_sent
        used += 1
        rounds_by_branch[record["branch"]].append(record["rounds"])
        threshold_rounds_total += record.get("threshold_rounds", 0)
    bits = bits[:used]
    branch_trials = {b: len(r) for b, r in rounds_by_branch.items()}
    branch_mean = {
        b: (float(np.mean(r)) if r else 0.0) for b, r in rounds_by_branch.items()
    }
    rejection_hist = {
        b: (np.bincount(r) if r else np.zeros(0, dtype=np.int64))
        for b, r in rounds_by_branch.items()
    }
    return MonteCarloChunkResult(
        counts=counts,
        n_trials=used,
        mean_bits=float(bits.mean()) if used else 0.0,
        p95_bits=float(np.percentile(bits, 95)) if used else 0.0,
        branch_trials=branch_trials,
        branch_mean_rounds=branch_mean,
        rejection_rounds=rejection_hist,
        mean_threshold_rounds=threshold_rounds_total / used if used else 0.0,
        bits=bits,
        failures=failures,
    )

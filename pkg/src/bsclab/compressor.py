"""Noiseless-channel compression of protocols run over a BSC with feedback.

A T-round execution at advantage eps (crossover 1/2 - eps) is simulated by a
public-coin protocol over the noiseless channel.  For eps >= beta each round
is transmitted directly and flipped with a shared public coin.  Below beta
the rounds are cut into chunks of depth gamma ~ 1/eps^2 and each chunk's
leaf is sampled exactly via a biased public coin that picks a low-error or
high-error regime, rejection sampling inside the regime, and a recursive
simulation of the chunk at doubled advantage as the low-regime proposal.

Everything the sampler decides on depends on the chunk's flip pattern only,
never on the protocol tree, so the internal engine samples flip patterns;
`core.apply_flip_pattern` turns the accepted pattern into the actual leaf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any

import numpy as np
from scipy.special import gammaln, logsumexp

from .core import (
    CostLedger,
    InvariantViolation,
    IterationCapExceeded,
    ParameterError,
    ProtocolSpec,
    RandomSource,
    SpecError,
    Transcript,
    apply_flip_pattern,
    pad_to_even,
)

DEFAULT_BETA = 0.125
DEFAULT_T_CAP = math.exp(6.0)
DEFAULT_MAX_ROUNDS = 10**9

BITS_PER_THRESHOLD_ROUND = 4


def default_gamma(epsilon: float) -> int:
    """Canonical chunk depth: ceil(1/eps^2) rounded up to even."""
    if not 0.0 < epsilon <= 0.5:
        raise ParameterError(f"advantage must be in (0, 1/2], got {epsilon}")
    g = math.ceil(1.0 / epsilon**2 - 1e-9)
    return g + (g % 2)


def default_t(epsilon: float, t_cap: float = DEFAULT_T_CAP) -> float:
    """Per-advantage rejection normalizer: (1+2eps)^(3/eps), capped."""
    return min(t_cap, (1.0 + 2.0 * epsilon) ** (3.0 / epsilon))


def integer_budget(theta: float) -> int:
    """floor(theta) with a guard against floating-point fuzz in gamma*(1/2-3eps)."""
    return math.floor(theta + 1e-9)


def minimal_t(gamma: int, epsilon: float, theta: float) -> float:
    """Smallest normalizer keeping every high-branch acceptance probability <= 1."""
    ti = integer_budget(theta)
    return math.exp(
        0.5 * ti * math.log1p(-4.0 * epsilon**2)
        + (gamma / 2.0 - ti) * math.log1p(2.0 * epsilon)
    )


@dataclass(frozen=True)
class ChunkParams:
    """Knobs of one compression chunk.

    gamma is the chunk depth (even), theta the error threshold separating the
    regimes, t the high-regime normalizer, beta the direct-simulation cutoff.
    Distribution exactness holds for any admissible combination; only the
    cost bound needs the canonical settings.
    """

    gamma: int
    epsilon: float
    theta: float
    t: float
    beta: float = DEFAULT_BETA

    def __post_init__(self) -> None:
        if self.gamma < 1:
            raise ParameterError("gamma must be positive")
        if not 0.0 < self.epsilon <= 0.5:
            raise ParameterError("epsilon must be in (0, 1/2]")
        if self.t <= 0.0:
            raise ParameterError("t must be positive")

    @classmethod
    def for_advantage(
        cls,
        epsilon: float,
        gamma: int | None = None,
        theta: float | None = None,
        t: float | None = None,
        *,
        t_cap: float = DEFAULT_T_CAP,
        beta: float = DEFAULT_BETA,
    ) -> "ChunkParams":
        if gamma is None:
            gamma = default_gamma(epsilon)
        if theta is None:
            theta = max(0.0, gamma * (0.5 - 3.0 * epsilon))
        if t is None:
            t = default_t(epsilon, t_cap)
        return cls(gamma, epsilon, theta, t, beta)

    @property
    def theta_int(self) -> int:
        """Integer error budget used by the threshold protocol's witnesses."""
        return integer_budget(self.theta)

    @property
    def half(self) -> int:
        return self.gamma // 2

    @cached_property
    def low_mass(self) -> float:
        return low_error_mass(self)


def _log_binom_pmf(k: np.ndarray, n: int, q: float) -> np.ndarray:
    k = np.asarray(k)
    return (
        gammaln(n + 1)
        - gammaln(k + 1)
        - gammaln(n - k + 1)
        + k * math.log(q)
        + (n - k) * math.log1p(-q)
    )


def low_error_mass(params: ChunkParams) -> float:
    """Pr[Binomial(gamma, 1/2-eps) <= floor(theta)], summed in log space."""
    ti = params.theta_int
    if ti < 0:
        return 0.0
    if ti >= params.gamma:
        return 1.0
    q = 0.5 - params.epsilon
    if q <= 0.0:
        return 1.0
    ks = np.arange(0, ti + 1)
    return float(np.exp(logsumexp(_log_binom_pmf(ks, params.gamma, q))))


def round_accept_mass_low(params: ChunkParams) -> float:
    """Closed-form per-round acceptance mass of the low-error branch: p * R.

    R is the likelihood ratio of the doubled-advantage law against the true
    law at the integer budget; the threshold witnesses make the per-leaf
    acceptance products collapse to exactly this value times the leaf law.
    """
    e = params.epsilon
    ti = params.theta_int
    log_r = ti * (math.log(0.5 - 2 * e) - math.log(0.5 - e)) + (
        params.gamma - ti
    ) * (math.log(0.5 + 2 * e) - math.log(0.5 + e))
    return params.low_mass * math.exp(log_r)


def round_accept_mass_high(params: ChunkParams) -> float:
    """Closed-form per-round acceptance mass of the high-error branch: (1-p)/t^2."""
    return (1.0 - params.low_mass) / params.t**2


# ---------------------------------------------------------------------------
# Count distributions and the threshold protocol
# ---------------------------------------------------------------------------


class CountDistribution:
    """Exact distribution of one party's error count on support [0, n]."""

    def __init__(self, pmf: np.ndarray):
        pmf = np.asarray(pmf, dtype=float)
        if pmf.ndim != 1 or pmf.size == 0:
            raise ParameterError("pmf must be a non-empty vector")
        if np.any(pmf < 0):
            raise ParameterError("pmf entries must be nonnegative")
        total = pmf.sum()
        if total <= 0:
            raise InvariantViolation("conditioning emptied the support")
        if abs(total - 1.0) > 1e-12:
            pmf = pmf / total
        self.pmf = pmf
        self.cdf = np.cumsum(pmf)
        self.n = pmf.size - 1

    @classmethod
    def binomial(cls, n: int, q: float) -> "CountDistribution":
        ks = np.arange(n + 1)
        if q <= 0.0:
            pmf = np.zeros(n + 1)
            pmf[0] = 1.0
        elif q >= 1.0:
            pmf = np.zeros(n + 1)
            pmf[n] = 1.0
        else:
            pmf = np.exp(_log_binom_pmf(ks, n, q))
        return cls(pmf)

    def prob_le(self, k: int) -> float:
        if k < 0:
            return 0.0
        if k >= self.n:
            return 1.0
        return float(self.cdf[k])

    def given_gt(self, k: int) -> "CountDistribution":
        """Condition on count > k."""
        pmf = self.pmf.copy()
        pmf[: min(k + 1, pmf.size)] = 0.0
        return CountDistribution(pmf)

    def given_lt(self, k: int) -> "CountDistribution":
        """Condition on count < k."""
        pmf = self.pmf.copy()
        if k <= 0:
            raise InvariantViolation("conditioning on an empty lower tail")
        pmf[k:] = 0.0
        return CountDistribution(pmf)


@dataclass(frozen=True)
class ProductCountDistribution:
    """Independent per-party error-count margins; conditioning acts per margin."""

    dx: CountDistribution
    dy: CountDistribution

    @classmethod
    def binomial(cls, half: int, q: float) -> "ProductCountDistribution":
        d = CountDistribution.binomial(half, q)
        return cls(d, d)

    @classmethod
    def uniform_leaves(cls, half: int) -> "ProductCountDistribution":
        return cls.binomial(half, 0.5)


@dataclass(frozen=True)
class ThresholdResult:
    answer: int
    theta_x: int
    theta_y: int
    rounds_used: int
    bits_used: int


def find_xi(dist: ProductCountDistribution, theta: int) -> int:
    """Smallest integer xi in [-1, theta] balancing the two tail conditions."""
    for xi in range(-1, theta + 1):
        if dist.dx.prob_le(xi - 1) <= dist.dy.prob_le(theta - xi) and dist.dx.prob_le(
            xi
        ) >= dist.dy.prob_le(theta - xi - 1):
            return xi
    raise InvariantViolation(
        f"no admissible xi for theta={theta}; the sweep argument guarantees one"
    )


def threshold(
    theta: int,
    dist: ProductCountDistribution,
    m_x: int,
    m_y: int,
    ledger: CostLedger | None = None,
) -> ThresholdResult:
    """Decide whether m_x + m_y > theta with witnesses, 4 bits per round.

    The round exchanges (m_x = xi), (m_x > xi), (m_y = theta - xi),
    (m_y > theta - xi); unresolved opposite verdicts recurse on the product
    distribution conditioned to the surviving rectangle.  The returned
    witnesses satisfy theta_x + theta_y = theta and bound the counts from
    the answer's side.
    """
    rounds = 0
    current = dist
    while True:
        rounds += 1
        if rounds > 10_000:
            raise InvariantViolation("threshold recursion failed to terminate")
        if ledger is not None:
            ledger.charge(0.0, BITS_PER_THRESHOLD_ROUND)
        xi = find_xi(current, theta)
        b1 = m_x == xi
        b2 = m_x > xi
        b3 = m_y == theta - xi
        b4 = m_y > theta - xi
        if b1:
            answer = int(b4)
        elif b3:
            answer = int(b2)
        elif b2 == b4:
            answer = int(b2)
        elif b2:
            current = ProductCountDistribution(
                current.dx.given_gt(xi), current.dy.given_lt(theta - xi)
            )
            continue
        else:
            current = ProductCountDistribution(
                current.dx.given_lt(xi), current.dy.given_gt(theta - xi)
            )
            continue
        return ThresholdResult(
            answer=answer,
            theta_x=xi,
            theta_y=theta - xi,
            rounds_used=rounds,
            bits_used=rounds * BITS_PER_THRESHOLD_ROUND,
        )


def threshold_table(
    dist: ProductCountDistribution, theta: int, half: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Trace the threshold protocol for every class (m_x, m_y) in [0, half]^2.

    Returns (answer, theta_x, theta_y, rounds) arrays indexed [m_x, m_y].
    """
    shape = (half + 1, half + 1)
    answer = np.zeros(shape, dtype=np.int64)
    tx = np.zeros(shape, dtype=np.int64)
    ty = np.zeros(shape, dtype=np.int64)
    rounds = np.zeros(shape, dtype=np.int64)
    for mx in range(half + 1):
        for my in range(half + 1):
            res = threshold(theta, dist, mx, my)
            answer[mx, my] = res.answer
            tx[mx, my] = res.theta_x
            ty[mx, my] = res.theta_y
            rounds[mx, my] = res.rounds_used
    return answer, tx, ty, rounds


# ---------------------------------------------------------------------------
# Parameter validation
# ---------------------------------------------------------------------------

COST_RATIO_FLOOR = 5.0


def validate_params(params: ChunkParams, *, beta: float | None = None) -> list[str]:
    """Check a parameter set before any sampling; empty list means ok.

    At or above the base-case cutoff the chunk machinery is never used, so
    the knobs are not inspected.  The cost-ratio floor R >= 5 is enforced
    only for full-size (canonical-depth) chunks: a shorter trailing chunk
    runs the same machinery with the same exactness, it just does not carry
    the canonical per-chunk cost bound.
    """
    if beta is None:
        beta = params.beta
    if params.epsilon >= beta:
        return []
    violations: list[str] = []
    if params.gamma % 2 != 0:
        violations.append(f"gamma must be even, got {params.gamma}")
    if not 0.0 <= params.theta <= params.gamma:
        violations.append(f"theta must lie in [0, gamma], got {params.theta}")
    if beta > 0.25:
        violations.append(
            f"beta={beta} leaves chunk levels with advantage >= 1/4, "
            "where the doubled-noise proposal channel degenerates"
        )
    if params.epsilon >= 0.25:
        violations.append(
            f"epsilon={params.epsilon} needs a doubled advantage > 1/2"
        )
    if violations:
        return violations
    sup = minimal_t(params.gamma, params.epsilon, params.theta)
    if params.t < sup * (1.0 - 1e-12):
        violations.append(
            f"t={params.t:.6g} below the high-branch acceptance supremum {sup:.6g}"
        )
    if params.gamma >= default_gamma(params.epsilon):
        ratio = round_accept_mass_low(params) / max(params.low_mass, 5e-324)
        if ratio < COST_RATIO_FLOOR:
            violations.append(
                f"low-branch mass ratio R={ratio:.4g} < {COST_RATIO_FLOOR} "
                "at canonical chunk depth"
            )
    return violations


# ---------------------------------------------------------------------------
# Precomputed per-parameter tables for the samplers
# ---------------------------------------------------------------------------


class _ChunkTables:
    """Threshold traces and acceptance probabilities for both branches."""

    def __init__(self, params: ChunkParams):
        e = params.epsilon
        half = params.half
        ti = params.theta_int
        l1m, l1p = math.log(0.5 - e), math.log(0.5 + e)
        l2m, l2p = math.log(0.5 - 2 * e), math.log(0.5 + 2 * e)

        d_low = ProductCountDistribution.binomial(half, 0.5 - 2 * e)
        self.ans_low, tx0, ty0, self.rounds_low = threshold_table(d_low, ti, half)
        mx = np.arange(half + 1)[:, None]
        my = np.arange(half + 1)[None, :]
        self.acc_low_x = np.exp((mx - tx0) * (l1m - l2m) + (tx0 - mx) * (l1p - l2p))
        self.acc_low_y = np.exp((my - ty0) * (l1m - l2m) + (ty0 - my) * (l1p - l2p))
        used = self.ans_low == 0
        if np.any(self.acc_low_x[used] > 1.0 + 1e-12) or np.any(
            self.acc_low_y[used] > 1.0 + 1e-12
        ):
            raise InvariantViolation("low-branch acceptance probability exceeds 1")

        d_high = ProductCountDistribution.uniform_leaves(half)
        self.ans_high, tx1, ty1, self.rounds_high = threshold_table(d_high, ti, half)
        log_t = math.log(params.t)
        self.acc_high_x = np.exp(
            mx * l1m
            + (half - mx) * l1p
            - log_t
            - (tx1 - ti / 2.0) * (l1m - l1p)
            + half * math.log(2.0)
        )
        self.acc_high_y = np.exp(
            my * l1m
            + (half - my) * l1p
            - log_t
            - (ty1 - ti / 2.0) * (l1m - l1p)
            + half * math.log(2.0)
        )
        used = self.ans_high == 1
        if np.any(self.acc_high_x[used] > 1.0 + 1e-12) or np.any(
            self.acc_high_y[used] > 1.0 + 1e-12
        ):
            raise InvariantViolation("high-branch acceptance probability exceeds 1")

        self.mass_high = round_accept_mass_high(params)


_TABLE_CACHE: dict[tuple, _ChunkTables] = {}


def _tables(params: ChunkParams) -> _ChunkTables:
    key = (params.gamma, params.epsilon, params.theta_int, params.t)
    tables = _TABLE_CACHE.get(key)
    if tables is None:
        tables = _ChunkTables(params)
        _TABLE_CACHE[key] = tables
    return tables


# ---------------------------------------------------------------------------
# Pattern-space sampling engine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Config:
    beta: float = DEFAULT_BETA
    t_cap: float = DEFAULT_T_CAP
    max_rounds: int = DEFAULT_MAX_ROUNDS


_PARAM_CACHE: dict[tuple, ChunkParams] = {}


def _params_for(epsilon: float, gamma: int, cfg: _Config) -> ChunkParams:
    key = (epsilon, gamma, cfg.t_cap, cfg.beta)
    params = _PARAM_CACHE.get(key)
    if params is None:
        theta = max(0.0, gamma * (0.5 - 3.0 * epsilon))
        t = default_t(epsilon, cfg.t_cap)
        if gamma < default_gamma(epsilon):
            # Short trailing chunk: the per-advantage default would inflate the
            # rejection count by (t/sup)^2 for no benefit, since the output law
            # is t-independent.  Run it at its acceptance supremum instead.
            t = min(t, minimal_t(gamma, epsilon, theta))
        params = ChunkParams(gamma, epsilon, theta, t, cfg.beta)
        violations = validate_params(params)
        if violations:
            raise ParameterError("; ".join(violations))
        _PARAM_CACHE[key] = params
    return params


def _validate_span(epsilon: float, depth: int, cfg: _Config) -> None:
    """Validate every (advantage, chunk depth) pair the recursion can reach."""
    seen: set[tuple[float, int]] = set()

    def visit(eps: float, d: int) -> None:
        if eps >= cfg.beta:
            if eps > 0.5:
                raise ParameterError(f"advantage {eps} above 1/2 at the base case")
            return
        g = default_gamma(eps)
        sizes = set()
        if d >= g:
            sizes.add(g)
            if d % g:
                sizes.add(d % g)
        else:
            sizes.add(d)
        for size in sizes:
            if (eps, size) in seen:
                continue
            seen.add((eps, size))
            _params_for(eps, size, cfg)
            visit(2.0 * eps, size)

    visit(epsilon, depth)


def _fair_binomial(gen: np.random.Generator, n: int, size: int) -> np.ndarray:
    """Vector of Binomial(n, 1/2) draws via popcounts of uniform words."""
    total = np.zeros(size, dtype=np.int64)
    remaining = n
    while remaining > 0:
        width = min(remaining, 64)
        words = gen.integers(0, 1 << width, size=size, dtype=np.uint64, endpoint=False)
        total += np.bitwise_count(words)
        remaining -= width
    return total


def _direct_pattern(
    crossover: float, depth: int, rng: RandomSource, ledger: CostLedger
) -> np.ndarray:
    """Direct simulation: one true bit per round, a shared coin flips it."""
    ledger.charge(0.0, depth)
    return (rng.public.random(depth) < crossover).astype(np.int8)


def _span_pattern(
    epsilon: float, depth: int, rng: RandomSource, ledger: CostLedger, cfg: _Config
) -> np.ndarray:
    if depth % 2 != 0:
        raise InvariantViolation("spans must have even depth")
    if depth == 0:
        return np.zeros(0, dtype=np.int8)
    if epsilon >= cfg.beta:
        return _direct_pattern(0.5 - epsilon, depth, rng, ledger)
    parts = []
    remaining = depth
    while remaining > 0:
        g = min(default_gamma(epsilon), remaining)
        params = _params_for(epsilon, g, cfg)
        parts.append(_chunk_pattern(params, rng, ledger, cfg, None))
        remaining -= g
    return np.concatenate(parts)


def _materialize_counts(
    half: int, m_x: int, m_y: int, rng: RandomSource
) -> np.ndarray:
    """Uniform flip pattern conditioned on the per-party counts."""
    pattern = np.zeros(2 * half, dtype=np.int8)
    if m_x:
        pattern[2 * rng.public.choice(half, size=m_x, replace=False)] = 1
    if m_y:
        pattern[2 * rng.public.choice(half, size=m_y, replace=False) + 1] = 1
    return pattern


def _branch_high_pattern(
    params: ChunkParams,
    rng: RandomSource,
    ledger: CostLedger,
    cfg: _Config,
    record: dict | None,
) -> np.ndarray:
    tables = _tables(params)
    half = params.half
    if tables.mass_high <= 0.0:
        raise InvariantViolation("high branch entered with zero acceptance mass")
    batch = int(min(max(2.0 / tables.mass_high, 8), 1 << 16))
    done = 0
    while True:
        if done >= cfg.max_rounds:
            raise IterationCapExceeded(
                f"high-branch rejection loop exceeded {cfg.max_rounds} rounds"
            )
        k = int(min(batch, cfg.max_rounds - done))
        mx = _fair_binomial(rng.public, half, k)
        my = _fair_binomial(rng.public, half, k)
        ans = tables.ans_high[mx, my]
        eligible = np.flatnonzero(ans == 1)
        ua = rng.alice.random(eligible.size)
        ub = rng.bob.random(eligible.size)
        hits = (ua < tables.acc_high_x[mx[eligible], my[eligible]]) & (
            ub < tables.acc_high_y[mx[eligible], my[eligible]]
        )
        winners = np.flatnonzero(hits)
        if winners.size:
            w = int(eligible[winners[0]])
            bits = (
                BITS_PER_THRESHOLD_ROUND * int(tables.rounds_high[mx[: w + 1], my[: w + 1]].sum())
                + 2 * int(np.count_nonzero(ans[: w + 1]))
            )
            ledger.charge(0.0, bits)
            if record is not None:
                record["branch"] = 1
                record["rounds"] = record.get("rounds", 0) + done + w + 1
                record["threshold_rounds"] = record.get("threshold_rounds", 0) + int(
                    tables.rounds_high[mx[: w + 1], my[: w + 1]].sum()
                )
            return _materialize_counts(half, int(mx[w]), int(my[w]), rng)
        bits = BITS_PER_THRESHOLD_ROUND * int(
            tables.rounds_high[mx, my].sum()
        ) + 2 * int(eligible.size)
        ledger.charge(0.0, bits)
        if record is not None:
            record["threshold_rounds"] = record.get("threshold_rounds", 0) + int(
                tables.rounds_high[mx, my].sum()
            )
        done += k


def _branch_low_pattern(
    params: ChunkParams,
    rng: RandomSource,
    ledger: CostLedger,
    cfg: _Config,
    record: dict | None,
) -> np.ndarray:
    tables = _tables(params)
    rounds = 0
    while True:
        rounds += 1
        if rounds > cfg.max_rounds:
            raise IterationCapExceeded(
                f"low-branch rejection loop exceeded {cfg.max_rounds} rounds"
            )
        pattern = _span_pattern(2.0 * params.epsilon, params.gamma, rng, ledger, cfg)
        mx = int(pattern[0::2].sum())
        my = int(pattern[1::2].sum())
        ledger.charge(0.0, BITS_PER_THRESHOLD_ROUND * int(tables.rounds_low[mx, my]))
        if record is not None:
            record["threshold_rounds"] = record.get("threshold_rounds", 0) + int(
                tables.rounds_low[mx, my]
            )
        if tables.ans_low[mx, my] == 1:
            continue
        ledger.charge(0.0, 2)
        if rng.alice.random() < tables.acc_low_x[mx, my] and rng.bob.random() < tables.acc_low_y[mx, my]:
            if record is not None:
                record["branch"] = 0
                record["rounds"] = record.get("rounds", 0) + rounds
            return pattern


def _chunk_pattern(
    params: ChunkParams,
    rng: RandomSource,
    ledger: CostLedger,
    cfg: _Config,
    record: dict | None,
) -> np.ndarray:
    # Public coin; b = 0 (probability p = low_mass) enters the low branch.
    go_low = rng.public.random() < params.low_mass
    if go_low:
        return _branch_low_pattern(params, rng, ledger, cfg, record)
    return _branch_high_pattern(params, rng, ledger, cfg, record)


# ---------------------------------------------------------------------------
# Public sampling API
# ---------------------------------------------------------------------------


def simulate_noiseless(
    spec: ProtocolSpec,
    x: Any,
    y: Any,
    epsilon: float,
    rng: RandomSource,
    *,
    beta: float = DEFAULT_BETA,
    t_cap: float = DEFAULT_T_CAP,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
) -> tuple[Transcript, CostLedger]:
    """Sample a full transcript distributed exactly as the BSC execution.

    The spec is padded to even length first; the returned transcript covers
    the padded protocol and its prefix of the raw length follows the raw
    protocol's channel law.  The ledger counts only noiseless bits actually
    exchanged (each charged unit energy).
    """
    if not spec.deterministic:
        raise SpecError("only deterministic protocols can be compressed")
    if not 0.0 < epsilon <= 0.5:
        raise ParameterError(f"advantage must be in (0, 1/2], got {epsilon}")
    padded = pad_to_even(spec)
    cfg = _Config(beta=beta, t_cap=t_cap, max_rounds=max_rounds)
    _validate_span(epsilon, padded.rounds, cfg)
    ledger = CostLedger()
    pattern = _span_pattern(epsilon, padded.rounds, rng, ledger, cfg)
    transcript = apply_flip_pattern(padded, x, y, "", pattern)
    return transcript, ledger


def simulate_chunk(
    spec: ProtocolSpec,
    x: Any,
    y: Any,
    root: Transcript,
    params: ChunkParams,
    rng: RandomSource,
    ledger: CostLedger | None = None,
    record: dict | None = None,
    *,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
) -> Transcript:
    """Sample one depth-gamma leaf below `root` with the exact channel law."""
    violations = validate_params(params)
    if violations:
        raise ParameterError("; ".join(violations))
    if len(root) % 2 != 0:
        raise SpecError("chunk roots sit at even depth in the padded tree")
    if len(root) + params.gamma > spec.rounds:
        raise SpecError("chunk extends past the protocol's leaf level")
    if ledger is None:
        ledger = CostLedger()
    cfg = _Config(beta=params.beta, max_rounds=max_rounds)
    pattern = _chunk_pattern(params, rng, ledger, cfg, record)
    return apply_flip_pattern(spec, x, y, root, pattern)


def branch_low(
    spec: ProtocolSpec,
    x: Any,
    y: Any,
    root: Transcript,
    params: ChunkParams,
    rng: RandomSource,
    ledger: CostLedger | None = None,
    record: dict | None = None,
    *,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
) -> Transcript:
    """Low-error branch alone: nested doubled-advantage proposals, then rejection."""
    violations = validate_params(params)
    if violations:
        raise ParameterError("; ".join(violations))
    if ledger is None:
        ledger = CostLedger()
    cfg = _Config(beta=params.beta, max_rounds=max_rounds)
    pattern = _branch_low_pattern(params, rng, ledger, cfg, record)
    return apply_flip_pattern(spec, x, y, root, pattern)


def branch_high(
    spec: ProtocolSpec,
    x: Any,
    y: Any,
    root: Transcript,
    params: ChunkParams,
    rng: RandomSource,
    ledger: CostLedger | None = None,
    record: dict | None = None,
    *,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
) -> Transcript:
    """High-error branch alone: uniform public proposals, then rejection."""
    violations = validate_params(params)
    if violations:
        raise ParameterError("; ".join(violations))
    if ledger is None:
        ledger = CostLedger()
    cfg = _Config(beta=params.beta, max_rounds=max_rounds)
    pattern = _branch_high_pattern(params, rng, ledger, cfg, record)
    return apply_flip_pattern(spec, x, y, root, pattern)

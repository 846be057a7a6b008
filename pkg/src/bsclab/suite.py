"""Acceptance battery: every headline guarantee as a seeded, tolerance-pinned check.

Each criterion function returns a CriterionResult with a pass flag and the
measured quantities, so the CLI and the test suite share one implementation.
Statistical checks run at significance 0.001 with fixed seeds; exact checks
carry explicit numeric tolerances.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import compressor, energy, infotheory, verify
from .compressor import ChunkParams, ProductCountDistribution, minimal_t
from .core import (
    CostLedger,
    ProtocolSpec,
    RandomSource,
    constant_spec,
    flip_pattern,
    seeded_spec,
    table_spec,
    xor_spec,
)
from .infotheory import LN2, external_info_cost, kl_bernoulli, uniform_inputs

DEFAULT_SUITE_SEED = 20250809


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        keys = ", ".join(
            f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
            for k, v in list(self.metrics.items())[:4]
        )
        return f"[criterion {self.number:02d}] {self.name}: {verdict} ({keys})"


# ---------------------------------------------------------------------------
# Random small instances for the information/energy equivalence checks
# ---------------------------------------------------------------------------


def _all_prefixes(rounds: int) -> list[str]:
    prefixes = [""]
    for r in range(1, rounds):
        prefixes.extend(
            format(i, f"0{r}b") for i in range(1 << r)
        )
    return prefixes


def _random_tables(gen: np.random.Generator, rounds: int, noisy: bool):
    bits: dict = {"alice": {}, "bob": {}}
    crossovers: dict = {"alice": {}, "bob": {}}
    for party in ("alice", "bob"):
        for inp in ("0", "1"):
            bits[party][inp] = {}
            crossovers[party][inp] = {}
            for prefix in _all_prefixes(rounds):
                bits[party][inp][prefix] = float(gen.random())
                crossovers[party][inp][prefix] = float(0.5 * gen.random())
    return bits, (crossovers if noisy else None)


def random_variable_noise_spec(gen: np.random.Generator, rounds: int) -> ProtocolSpec:
    """Random per-node Bernoulli protocol with random per-bit crossovers."""
    bits, crossovers = _random_tables(gen, rounds, noisy=True)
    return table_spec(rounds, bits, (0, 1), (0, 1), crossover_table=crossovers)


def random_noiseless_spec(gen: np.random.Generator, rounds: int) -> ProtocolSpec:
    bits, _ = _random_tables(gen, rounds, noisy=False)
    return table_spec(rounds, bits, (0, 1), (0, 1))


def random_mu(gen: np.random.Generator, spec: ProtocolSpec) -> dict:
    pairs = [(x, y) for x in spec.alice_inputs for y in spec.bob_inputs]
    weights = gen.random(len(pairs)) + 0.05
    weights /= weights.sum()
    return {pair: float(w) for pair, w in zip(pairs, weights)}


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------


def criterion_01_chunk_exact_analytic(seed: int = DEFAULT_SUITE_SEED) -> CriterionResult:
    """Exact chunk law equals the product-binomial channel law, analytically."""
    start = time.perf_counter()
    params = ChunkParams.for_advantage(0.1, gamma=20)
    law = verify.exact_chunk_distribution(params)
    expected = verify.class_law(params.half, params.epsilon)
    diff = float(np.max(np.abs(law - expected)))
    elapsed = time.perf_counter() - start
    passed = diff <= 1e-10 and elapsed < 1.0
    return CriterionResult(
        1,
        "chunk exactness (analytic)",
        passed,
        {"max_abs_diff": diff, "wall_clock_seconds": elapsed},
    )


def criterion_02_chunk_exact_statistical(seed: int = DEFAULT_SUITE_SEED) -> CriterionResult:
    """Sampled chunk classes fit the exact law at significance 0.001."""
    params = ChunkParams.for_advantage(
        0.1, gamma=20, t=minimal_t(20, 0.1, 20 * (0.5 - 0.3))
    )
    spec = seeded_spec(20, seed=41)
    result = verify.monte_carlo_chunk(params, spec, 0, 1, 50_000, base_seed=seed)
    expected = verify.exact_chunk_distribution(params)
    gof = verify.chi_square_gof(result.counts, expected)
    passed = gof.passed and not result.failures
    return CriterionResult(
        2,
        "chunk exactness (statistical)",
        passed,
        {
            "p_value": gof.p_value,
            "chi2": gof.statistic,
            "mean_bits": result.mean_bits,
            "trials": result.n_trials,
        },
    )


def _compression_run(
    rounds: int, epsilon: float, trials: int, seed: int
) -> tuple[float, list[verify.GofResult], float]:
    spec = constant_spec(rounds)
    g = compressor.default_gamma(epsilon)
    n_chunks = math.ceil(rounds / g)
    half = min(g, rounds) // 2
    counts = [np.zeros((half + 1, half + 1), dtype=np.int64) for _ in range(n_chunks)]
    total_bits = 0
    for i in range(trials):
        rng = RandomSource.for_trial(seed, i)
        transcript, ledger = compressor.simulate_noiseless(spec, 0, 0, epsilon, rng)
        total_bits += ledger.bits_sent
        pattern = flip_pattern(spec, 0, 0, transcript)
        for k in range(n_chunks):
            chunk = pattern[k * g : (k + 1) * g]
            counts[k][int(chunk[0::2].sum()), int(chunk[1::2].sum())] += 1
    expected = verify.class_law(half, epsilon)
    gofs = [verify.chi_square_gof(c, expected) for c in counts]
    mean_bits = total_bits / trials
    return mean_bits, gofs, mean_bits / n_chunks


def criterion_03_end_to_end(seed: int = DEFAULT_SUITE_SEED) -> CriterionResult:
    """Whole-protocol compression: per-chunk law fits and cost scales linearly."""
    trials = 200
    eps = 0.1
    bits_200, gofs_200, per_chunk_200 = _compression_run(200, eps, trials, seed)
    bits_400, gofs_400, per_chunk_400 = _compression_run(400, eps, trials, seed + 10_000)
    ratio = bits_400 / bits_200
    all_fit = all(g.passed for g in gofs_200 + gofs_400)
    # Expected-communication ceiling: alpha * ceil(eps^2 * 2T) with
    # alpha = max(1/beta^2, 50 t^2 + 10).  Loose by construction.
    t = compressor.default_t(eps)
    alpha = max(1.0 / compressor.DEFAULT_BETA**2, 50.0 * t * t + 10.0)
    within_alpha = bits_200 <= alpha * math.ceil(eps**2 * 2 * 200) and bits_400 <= alpha * math.ceil(eps**2 * 2 * 400)
    passed = all_fit and 1.6 <= ratio <= 2.4 and math.isfinite(per_chunk_200) and within_alpha
    return CriterionResult(
        3,
        "end-to-end compression",
        passed,
        {
            "mean_bits_T200": bits_200,
            "mean_bits_T400": bits_400,
            "ratio": ratio,
            "mean_bits_per_chunk": per_chunk_200,
            "min_gof_p": min(g.p_value for g in gofs_200 + gofs_400),
            "alpha_ceiling_T200": alpha * math.ceil(eps**2 * 2 * 200),
            "within_alpha_ceiling": within_alpha,
        },
    )


def criterion_04_threshold(seed: int = DEFAULT_SUITE_SEED) -> CriterionResult:
    """Witness soundness on all classes; expected cost two rounds of four bits."""
    half, theta = 10, 4
    dist = ProductCountDistribution.uniform_leaves(half)
    sound = True
    for m_x in range(half + 1):
        for m_y in range(half + 1):
            tx, ty, answer, _ = verify.trace_threshold(dist, theta, m_x, m_y)
            ok = (
                answer == int(m_x + m_y > theta)
                and tx + ty == theta
                and (
                    (m_x <= tx and m_y <= ty)
                    if answer == 0
                    else (m_x >= tx and m_y >= ty)
                )
            )
            sound = sound and ok
    gen = np.random.default_rng(seed)
    mxs = gen.binomial(half, 0.5, size=10_000)
    mys = gen.binomial(half, 0.5, size=10_000)
    rounds = np.zeros(mxs.size)
    bits_exact = True
    for i, (mx, my) in enumerate(zip(mxs, mys)):
        ledger = CostLedger()
        res = compressor.threshold(theta, dist, int(mx), int(my), ledger)
        rounds[i] = res.rounds_used
        bits_exact = bits_exact and res.bits_used == 4 * res.rounds_used == ledger.bits_sent
    mean_rounds = float(rounds.mean())
    passed = sound and bits_exact and mean_rounds <= 2.0
    return CriterionResult(
        4,
        "threshold witnesses and cost",
        passed,
        {"witnesses_sound": sound, "mean_rounds": mean_rounds, "bits_per_round": 4},
    )


def criterion_05_round_masses(seed: int = DEFAULT_SUITE_SEED) -> CriterionResult:
    """Closed-form per-round acceptance masses match brute-force class sums."""
    worst = 0.0
    for gamma, eps in ((20, 0.1), (8, 0.05)):
        params = ChunkParams.for_advantage(eps, gamma=gamma)
        analysis = verify.exact_branch_analysis(params)
        worst = max(
            worst,
            abs(analysis.mass_low - compressor.round_accept_mass_low(params)),
            abs(analysis.mass_high - compressor.round_accept_mass_high(params)),
        )
    return CriterionResult(
        5, "per-round acceptance masses", worst <= 1e-12, {"max_abs_diff": worst}
    )


def criterion_06_biased_walk(seed: int = DEFAULT_SUITE_SEED) -> CriterionResult:
    """Guaranteed ascent for every pair b <= a <= 40, bounded pooled energy."""
    runs = 500
    total_energy = 0.0
    total_runs = 0
    always_top = True
    per_pair: dict[str, float] = {}
    for a in range(1, 41):
        for b in range(1, a + 1):
            rng = RandomSource(seed + 1000 * a + b)
            energy_pair = 0.0
            for _ in range(runs):
                ledger = CostLedger()
                out = energy.brw_to_top(a, b, rng, ledger)
                always_top = always_top and out.end_index == a + b
                energy_pair += out.energy
            per_pair[f"{a},{b}"] = energy_pair / runs
            total_energy += energy_pair
            total_runs += runs
    pooled = total_energy / total_runs
    passed = always_top and pooled <= 48.0
    return CriterionResult(
        6,
        "biased walk absorption and energy",
        passed,
        {
            "always_absorbed_at_top": always_top,
            "pooled_mean_energy": pooled,
            "max_pair_mean_energy": max(per_pair.values()),
            "pairs": len(per_pair),
            "per_pair_mean_energy": per_pair,
        },
    )


def criterion_07_unbiased_walk(seed: int = DEFAULT_SUITE_SEED) -> CriterionResult:
    """Absorption law a/(a+b) at (3, 1); zero energy identically."""
    n = 100_000
    rng = RandomSource(seed + 7)
    tops = 0
    energy_total = 0.0
    for _ in range(n):
        ledger = CostLedger()
        out = energy.unbiased_walk(3, 4, rng, ledger)
        tops += out.end_index == 4
        energy_total += out.energy
    freq = tops / n
    sigma = math.sqrt(0.75 * 0.25 / n)
    passed = abs(freq - 0.75) <= 3 * sigma and energy_total == 0.0
    return CriterionResult(
        7,
        "unbiased walk law",
        passed,
        {"top_frequency": freq, "three_sigma": 3 * sigma, "total_energy": energy_total},
    )


def criterion_08_sample_with_prior(seed: int = DEFAULT_SUITE_SEED) -> CriterionResult:
    """Prior-guided sampling is exactly Bernoulli(p) with divergence-scale energy."""
    n_i = 512
    n = 50_000
    pairs = [(0.3, 0.2), (0.25, 0.25), (0.01, 0.002), (0.6, 0.25), (0.05, 0.005)]
    eps_i = 1.0 / (2 * n_i)
    rows = []
    passed = True
    for idx, (p, q) in enumerate(pairs):
        rng = RandomSource(seed + 100 + idx)
        ledger = CostLedger()
        ones = 0
        for _ in range(n):
            ones += energy.sample_with_prior(p, q, n_i, rng, ledger)
        mean = ones / n
        sigma = math.sqrt(p * (1 - p) / n)
        mean_energy = ledger.energy / n
        ratio = mean_energy / (kl_bernoulli(p, q) + eps_i)
        ok = abs(mean - p) <= 3 * sigma and ratio <= 200.0
        passed = passed and ok
        rows.append(
            {
                "p": p,
                "q": q,
                "mean": mean,
                "three_sigma": 3 * sigma,
                "mean_energy": mean_energy,
                "energy_ratio": ratio,
                "ok": ok,
            }
        )
    return CriterionResult(
        8,
        "prior-guided bit sampling",
        passed,
        {
            "max_energy_ratio": max(r["energy_ratio"] for r in rows),
            "grid": rows,
        },
    )


def criterion_09_energy_to_info(seed: int = DEFAULT_SUITE_SEED) -> CriterionResult:
    """Noiseless replay of noisy protocols: IC_ext <= EC / ln 2, exactly."""
    worst_slack = -math.inf
    holds = True
    for k in range(100):
        gen = np.random.default_rng(seed + 300 + k)
        rounds = int(gen.integers(1, 4))
        pi = random_variable_noise_spec(gen, rounds)
        mu = random_mu(gen, pi)
        phi = energy.noiseless_from_noisy(pi, mu)
        ic = external_info_cost(phi, mu).bits
        ec = energy.expected_energy_cost(pi, mu)
        slack = ic - ec / LN2
        worst_slack = max(worst_slack, slack)
        holds = holds and slack <= 1e-9
    return CriterionResult(
        9,
        "energy dominates external information",
        holds,
        {"instances": 100, "worst_slack_bits": worst_slack},
    )


def ecub_battery() -> list[tuple[str, ProtocolSpec]]:
    send_inputs = xor_spec(2, noise=0.0)
    mixed = table_spec(
        2,
        {
            "alice": {"0": {"": 0.25}, "1": {"": 0.75}},
            "bob": {
                "0": {"0": 0.125, "1": 0.125},
                "1": {"0": 0.875, "1": 0.875},
            },
        },
        (0, 1),
        (0, 1),
    )
    skewed = table_spec(
        2,
        {
            "alice": {"0": {"": 0.0}, "1": {"": 1.0}},
            "bob": {
                "0": {"0": 0.98, "1": 0.98},
                "1": {"0": 1.0, "1": 1.0},
            },
        },
        (0, 1),
        (0, 1),
    )
    return [("send-inputs", send_inputs), ("mixed-coins", mixed), ("skewed-prior", skewed)]


def criterion_10_info_to_energy(seed: int = DEFAULT_SUITE_SEED) -> CriterionResult:
    """Variable-noise replay of noiseless protocols: exact law, bounded energy."""
    n = 256
    trials = 50_000
    rows = []
    passed = True
    for idx, (name, phi) in enumerate(ecub_battery()):
        mu = uniform_inputs(phi)
        sim = energy.noisy_from_noiseless(phi, mu, n)
        joint = infotheory.FiniteJoint.from_protocol(phi, mu)
        leaves = ["00", "01", "10", "11"]
        expected = np.array(
            [
                sum(pr for (x, y, t), pr in joint.table.items() if t == leaf)
                for leaf in leaves
            ]
        )
        pair_list = list(mu.keys())
        weights = np.array([mu[p] for p in pair_list])
        gen = np.random.default_rng(seed + 500 + idx)
        draws = gen.choice(len(pair_list), size=trials, p=weights)
        rng = RandomSource(seed + 600 + idx)
        counts = np.zeros(len(leaves), dtype=np.int64)
        total_energy = 0.0
        for d in draws:
            x, y = pair_list[d]
            transcript, ledger = sim.run(x, y, rng)
            counts[leaves.index(transcript)] += 1
            total_energy += ledger.energy
        gof = verify.chi_square_gof(counts, expected)
        ic = external_info_cost(phi, mu).bits
        ratio = (total_energy / trials) / (ic + 1.0 / (2 * n))
        ok = gof.passed and ratio <= 1e4
        passed = passed and ok
        rows.append(
            {
                "protocol": name,
                "p_value": gof.p_value,
                "mean_energy": total_energy / trials,
                "info_bits": ic,
                "energy_ratio": ratio,
                "ok": ok,
            }
        )
    return CriterionResult(
        10,
        "noisy replay of noiseless protocols",
        passed,
        {
            "min_p_value": min(r["p_value"] for r in rows),
            "max_energy_ratio": max(r["energy_ratio"] for r in rows),
            "battery": rows,
        },
    )


def criterion_11_divergence_bounds(seed: int = DEFAULT_SUITE_SEED) -> CriterionResult:
    """Quadratic divergence sandwich and the four-region lower bounds."""
    sandwich_ok = True
    worst_gap = 0.0
    grid = np.arange(0.01, 1.0, 0.01)
    for p in grid:
        for q in grid:
            lower, upper = infotheory.ine_bounds(p, q)
            mid = LN2 * kl_bernoulli(float(p), float(q))
            sandwich_ok = sandwich_ok and lower <= mid + 1e-12 and mid <= upper + 1e-12
            worst_gap = max(worst_gap, lower - mid, mid - upper)

    def region_grid():
        qs1 = np.linspace(0.005, 0.49, 100)
        for q in qs1:
            for p in np.linspace(0.0, min(2 * q, 1.0), 100):
                yield float(p), float(q)
        qs2 = np.linspace(1e-4, 0.0099, 100)
        for q in qs2:
            for p in np.linspace(2 * q * 1.001, 0.0199, 100):
                yield float(p), float(q)
        for q in np.linspace(0.01, 0.49, 100):
            for p in np.linspace(2 * q * 1.001, 1.0, 100):
                yield float(p), float(q)
        for q in qs2:
            for p in np.linspace(0.02, 1.0, 100):
                yield float(p), float(q)

    table_ok = True
    worst_margin = math.inf
    for p, q in region_grid():
        if p > 1.0:
            continue
        _, bound = infotheory.table1_bound(p, q)
        d = kl_bernoulli(p, q)
        table_ok = table_ok and bound <= d + 1e-15
        worst_margin = min(worst_margin, d - bound)
    passed = sandwich_ok and table_ok
    return CriterionResult(
        11,
        "divergence sandwich and region bounds",
        passed,
        {
            "sandwich_ok": sandwich_ok,
            "table_ok": table_ok,
            "worst_table_margin": worst_margin,
        },
    )


def criterion_12_chain_rule(seed: int = DEFAULT_SUITE_SEED) -> CriterionResult:
    """Direct, chain-rule and divergence forms of IC_ext agree to 1e-9."""
    worst = 0.0
    for k in range(50):
        gen = np.random.default_rng(seed + 900 + k)
        rounds = int(gen.integers(1, 4))
        phi = random_noiseless_spec(gen, rounds)
        mu = random_mu(gen, phi)
        res = external_info_cost(phi, mu)
        spread = max(res.bits, res.chain_bits, res.divergence_bits) - min(
            res.bits, res.chain_bits, res.divergence_bits
        )
        worst = max(worst, spread)
    return CriterionResult(
        12,
        "information-cost route agreement",
        worst <= 1e-9,
        {"instances": 50, "worst_spread_bits": worst},
    )


CRITERIA: list[tuple[int, Callable[[int], CriterionResult]]] = [
    (1, criterion_01_chunk_exact_analytic),
    (2, criterion_02_chunk_exact_statistical),
    (3, criterion_03_end_to_end),
    (4, criterion_04_threshold),
    (5, criterion_05_round_masses),
    (6, criterion_06_biased_walk),
    (7, criterion_07_unbiased_walk),
    (8, criterion_08_sample_with_prior),
    (9, criterion_09_energy_to_info),
    (10, criterion_10_info_to_energy),
    (11, criterion_11_divergence_bounds),
    (12, criterion_12_chain_rule),
]


def run_suite(
    seed: int = DEFAULT_SUITE_SEED, numbers: list[int] | None = None
) -> list[CriterionResult]:
    wanted = set(numbers) if numbers else None
    results = []
    for number, func in CRITERIA:
        if wanted is not None and number not in wanted:
            continue
        results.append(func(seed))
    return results

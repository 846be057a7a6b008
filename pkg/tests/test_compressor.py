import math

import numpy as np
import pytest

from bsclab import compressor as C
from bsclab import verify as V
from bsclab.core import (
    CostLedger,
    IterationCapExceeded,
    Noise,
    ParameterError,
    RandomSource,
    SpecError,
    constant_spec,
    count_errors,
    enumerate_transcripts,
    seeded_spec,
    xor_spec,
)
from bsclab.compressor import (
    ChunkParams,
    CountDistribution,
    ProductCountDistribution,
    find_xi,
    low_error_mass,
    threshold,
    validate_params,
)


class TestParams:
    def test_default_gamma_even_ceiling(self):
        assert C.default_gamma(0.1) == 100
        assert C.default_gamma(0.125) == 64
        assert C.default_gamma(0.3) == 12

    def test_default_t_minimal_admissible(self):
        # (1 + 2 eps)^(3/eps) increases toward the e^6 cap as eps shrinks
        assert C.default_t(0.1) == pytest.approx(1.2**30)
        assert C.default_t(0.01) == pytest.approx(1.02**300)
        assert C.default_t(0.01) < math.e**6
        assert C.default_t(0.1, t_cap=100.0) == 100.0

    def test_theta_integer_budget_guard(self):
        params = ChunkParams.for_advantage(0.1, gamma=100)
        assert params.theta_int == 20
        assert ChunkParams.for_advantage(0.1, gamma=20).theta_int == 4

    def test_low_mass_cached_matches_function(self):
        params = ChunkParams.for_advantage(0.07, gamma=16)
        assert params.low_mass == low_error_mass(params)


class TestLowErrorMass:
    def test_full_support(self):
        assert low_error_mass(ChunkParams(4, 0.1, 4.0, 5.0)) == 1.0

    def test_gamma_four(self):
        assert low_error_mass(ChunkParams.for_advantage(0.1, gamma=4)) == pytest.approx(
            0.1296, abs=1e-12
        )

    def test_gamma_two_single_term(self):
        assert low_error_mass(ChunkParams(2, 0.1, 0.4, 5.0)) == pytest.approx(
            0.36, abs=1e-12
        )


class TestFindXi:
    def test_zero_budget_symmetric(self):
        d = ProductCountDistribution.binomial(3, 0.5)
        assert find_xi(d, 0) == 0

    def test_binomial_example(self):
        d = ProductCountDistribution.binomial(4, 0.5)
        assert find_xi(d, 2) == 1

    def test_conditioned_example(self):
        dx = CountDistribution(np.array([0, 0, 6, 4, 1], dtype=float) / 11)
        dy = CountDistribution(np.array([1.0]))
        assert find_xi(ProductCountDistribution(dx, dy), 2) == 2


class TestThreshold:
    def test_low_pair_one_round(self):
        d = ProductCountDistribution.binomial(4, 0.5)
        res = threshold(2, d, 0, 0)
        assert (res.answer, res.theta_x, res.theta_y, res.rounds_used) == (0, 1, 1, 1)

    def test_high_pair_one_round(self):
        d = ProductCountDistribution.binomial(4, 0.5)
        res = threshold(2, d, 3, 3)
        assert (res.answer, res.theta_x, res.theta_y, res.rounds_used) == (1, 1, 1, 1)

    def test_two_level_recursion(self):
        d = ProductCountDistribution.binomial(4, 0.5)
        res = threshold(2, d, 2, 0)
        assert (res.answer, res.theta_x, res.theta_y, res.rounds_used) == (0, 2, 0, 2)

    def test_bits_charged(self):
        d = ProductCountDistribution.binomial(4, 0.5)
        ledger = CostLedger()
        res = threshold(2, d, 2, 0, ledger)
        assert ledger.bits_sent == res.bits_used == 4 * res.rounds_used

    def test_point_mass_single_round(self):
        d = ProductCountDistribution(
            CountDistribution(np.array([0.0, 1.0])),
            CountDistribution(np.array([0.0, 1.0])),
        )
        assert threshold(2, d, 1, 1).rounds_used == 1

    @pytest.mark.parametrize("q", [0.5, 0.3])
    @pytest.mark.parametrize("half,theta", [(4, 2), (12, 5), (10, 4)])
    def test_witnesses_exhaustive(self, half, theta, q):
        d = ProductCountDistribution.binomial(half, q)
        for m_x in range(half + 1):
            for m_y in range(half + 1):
                res = threshold(theta, d, m_x, m_y)
                assert res.answer == int(m_x + m_y > theta)
                assert res.theta_x + res.theta_y == theta
                if res.answer == 0:
                    assert m_x <= res.theta_x and m_y <= res.theta_y
                else:
                    assert m_x >= res.theta_x and m_y >= res.theta_y


class TestValidateParams:
    def test_canonical_ok_with_large_ratio(self):
        params = ChunkParams(100, 0.1, 20.0, math.e**6)
        assert validate_params(params) == []
        ratio = C.round_accept_mass_low(params) / params.low_mass
        assert ratio == pytest.approx(math.exp(6.5784), rel=1e-3)

    def test_base_case_short_circuits(self):
        assert validate_params(ChunkParams.for_advantage(0.2)) == []

    def test_gamma_parity(self):
        bad = ChunkParams(5, 0.1, 1.0, 10.0)
        assert any("even" in v for v in validate_params(bad))

    def test_theta_range(self):
        bad = ChunkParams(4, 0.1, 9.0, 10.0)
        assert any("theta" in v for v in validate_params(bad))

    def test_t_below_supremum(self):
        bad = ChunkParams(20, 0.1, 4.0, 1.0)
        assert any("supremum" in v for v in validate_params(bad))

    def test_short_chunks_skip_ratio_floor(self):
        # R < 5 here, but the chunk is shorter than canonical depth
        params = ChunkParams(20, 0.1, 4.0, C.minimal_t(20, 0.1, 4.0))
        assert validate_params(params) == []

    def test_beta_above_quarter(self):
        bad = ChunkParams(4, 0.2, 0.4, 10.0, beta=0.3)
        assert any("1/4" in v for v in validate_params(bad))


class TestRoundMasses:
    @pytest.mark.parametrize("gamma,eps", [(20, 0.1), (8, 0.05)])
    def test_closed_forms_match_brute_force(self, gamma, eps):
        params = ChunkParams.for_advantage(eps, gamma=gamma)
        analysis = V.exact_branch_analysis(params)
        assert analysis.mass_low == pytest.approx(
            C.round_accept_mass_low(params), abs=1e-12
        )
        assert analysis.mass_high == pytest.approx(
            C.round_accept_mass_high(params), abs=1e-12
        )

    def test_low_mass_ratio_floor_at_canonical(self):
        # the per-round low-branch mass is at least 5p at canonical settings
        for eps in (0.05, 0.1, 0.12):
            params = ChunkParams.for_advantage(eps)
            assert C.round_accept_mass_low(params) >= 5 * params.low_mass

    def test_t_cap_default(self):
        assert C.DEFAULT_T_CAP == pytest.approx(math.e**6)


def _class_counts(spec, x, y, leaves, half, gamma):
    counts = np.zeros((half + 1, half + 1), dtype=int)
    for leaf in leaves:
        counts[count_errors(spec, "alice", x, leaf), count_errors(spec, "bob", y, leaf)] += 1
    return counts


class TestBranches:
    def test_high_branch_conditional_law(self):
        params = ChunkParams(6, 0.1, 6 * 0.2, C.minimal_t(6, 0.1, 1.2))
        spec = seeded_spec(6, seed=21)
        analysis = V.exact_branch_analysis(params)
        counts = np.zeros((4, 4), dtype=int)
        for i in range(4000):
            rng = RandomSource.for_trial(400, i)
            leaf = C.branch_high(spec, 0, 1, "", params, rng)
            counts[
                count_errors(spec, "alice", 0, leaf), count_errors(spec, "bob", 1, leaf)
            ] += 1
        assert V.chi_square_gof(counts, analysis.high_law).passed
        # restricted renormalized product law on {m > theta}
        mask = np.add.outer(np.arange(4), np.arange(4)) > params.theta_int
        expected = V.class_law(3, 0.1) * mask
        expected /= expected.sum()
        np.testing.assert_allclose(analysis.high_law, expected, atol=1e-12)

    def test_low_branch_conditional_law(self):
        params = ChunkParams(6, 0.1, 6 * 0.2, C.minimal_t(6, 0.1, 1.2))
        spec = seeded_spec(6, seed=22)
        analysis = V.exact_branch_analysis(params)
        counts = np.zeros((4, 4), dtype=int)
        for i in range(4000):
            rng = RandomSource.for_trial(500, i)
            leaf = C.branch_low(spec, 1, 0, "", params, rng)
            counts[
                count_errors(spec, "alice", 1, leaf), count_errors(spec, "bob", 0, leaf)
            ] += 1
        assert V.chi_square_gof(counts, analysis.low_law).passed
        mask = np.add.outer(np.arange(4), np.arange(4)) <= params.theta_int
        expected = V.class_law(3, 0.1) * mask
        expected /= expected.sum()
        np.testing.assert_allclose(analysis.low_law, expected, atol=1e-12)

    def test_chunk_mixture_law(self):
        params = ChunkParams(4, 0.1, 0.8, C.minimal_t(4, 0.1, 0.8))
        spec = seeded_spec(4, seed=23)
        expected = V.exact_chunk_distribution(params)
        counts = np.zeros((3, 3), dtype=int)
        for i in range(6000):
            rng = RandomSource.for_trial(600, i)
            leaf = C.simulate_chunk(spec, 0, 0, "", params, rng)
            counts[
                count_errors(spec, "alice", 0, leaf), count_errors(spec, "bob", 0, leaf)
            ] += 1
        assert V.chi_square_gof(counts, expected).passed


class TestSimulateNoiseless:
    def test_direct_path_bits_and_law(self):
        spec = seeded_spec(5, seed=31)
        noise = Noise.from_crossover(0.2)  # eps = 0.3 >= beta
        pad = C.pad_to_even(spec)
        law = dict(enumerate_transcripts(pad, 0, 1, noise))
        leaves = sorted(law)
        expected = np.array([law[t] for t in leaves])
        counts = np.zeros(len(leaves), dtype=int)
        for i in range(6000):
            rng = RandomSource.for_trial(700, i)
            tr, ledger = C.simulate_noiseless(spec, 0, 1, 0.3, rng)
            assert ledger.bits_sent == 6  # padded length
            counts[leaves.index(tr)] += 1
        assert V.chi_square_gof(counts, expected).passed

    def test_chunked_leaf_law_on_real_tree(self):
        # Full transcript law over all 16 leaves of a 4-round tree at eps=0.1:
        # one short chunk well below canonical depth.
        spec = seeded_spec(4, seed=32)
        noise = Noise(0.1)
        leaves = sorted(t for t, _ in enumerate_transcripts(spec, 1, 1, noise))
        expected = np.array(
            [dict(enumerate_transcripts(spec, 1, 1, noise))[t] for t in leaves]
        )
        counts = np.zeros(len(leaves), dtype=int)
        for i in range(8000):
            rng = RandomSource.for_trial(800, i)
            tr, _ = C.simulate_noiseless(spec, 1, 1, 0.1, rng)
            counts[leaves.index(tr)] += 1
        assert V.chi_square_gof(counts, expected).passed

    def test_rejects_stochastic_specs(self):
        with pytest.raises(SpecError):
            C.simulate_noiseless(xor_spec(2, noise=0.25), 0, 0, 0.1, RandomSource(0))

    def test_epsilon_range(self):
        with pytest.raises(ParameterError):
            C.simulate_noiseless(constant_spec(2), 0, 0, 0.0, RandomSource(0))
        with pytest.raises(ParameterError):
            C.simulate_noiseless(constant_spec(2), 0, 0, 0.7, RandomSource(0))

    def test_determinism(self):
        spec = seeded_spec(6, seed=33)
        a = C.simulate_noiseless(spec, 0, 1, 0.1, RandomSource(42))
        b = C.simulate_noiseless(spec, 0, 1, 0.1, RandomSource(42))
        assert a[0] == b[0] and a[1].bits_sent == b[1].bits_sent

    def test_iteration_cap_aborts_loudly(self):
        spec = constant_spec(2)
        with pytest.raises(IterationCapExceeded):
            C.simulate_noiseless(spec, 0, 0, 0.1, RandomSource(1), max_rounds=0)


class TestChunkApi:
    def test_root_parity_checked(self):
        params = ChunkParams(2, 0.1, 0.4, 2.0)
        with pytest.raises(SpecError):
            C.simulate_chunk(constant_spec(4), 0, 0, "1", params, RandomSource(0))

    def test_chunk_must_fit_tree(self):
        params = ChunkParams(4, 0.1, 0.8, 2.0)
        with pytest.raises(SpecError):
            C.simulate_chunk(constant_spec(2), 0, 0, "", params, RandomSource(0))

    def test_validation_failure_before_sampling(self):
        bad = ChunkParams(4, 0.1, 9.0, 2.0)
        with pytest.raises(ParameterError):
            C.simulate_chunk(constant_spec(4), 0, 0, "", bad, RandomSource(0))

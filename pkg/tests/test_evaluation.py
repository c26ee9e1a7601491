import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcca_lab.core import boxcar_filterbank, lag_embed
from mcca_lab.errors import DegenerateInputError, InvalidConfigError, NumericalError, ShapeError
from mcca_lab.evaluation import (
    DEFAULT_DURATIONS,
    Cca3Chain,
    Cca3Config,
    DPrimeTable,
    cca3_chain,
    cohen_dprime,
    dprime_match_mismatch,
    dprime_sweep,
    fit_cca,
    pearson,
    score_first_cc,
    segment_correlations,
    segment_lengths,
)
from mcca_lab.synth import SynthConfig, generate_stimulus_response
from oracles import als_cca_first


def coupled(seed, da=3, db=2, T=400, strength=1.0):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((T, 1))
    a = strength * z @ rng.standard_normal((1, da)) + rng.standard_normal((T, da))
    b = strength * z @ rng.standard_normal((1, db)) + rng.standard_normal((T, db))
    return a, b


def planted_pair(seed, corr=0.6, T=8000):
    """Oracle-projected response and a stimulus lag stack that contains the latent."""
    cfg = SynthConfig(num_views=1, channels_per_view=3, samples=T, seed=seed)
    stim, resp, truth = generate_stimulus_response(cfg, corr)
    return resp[0].data, lag_embed(stim, cfg.stimulus_lag + 1).data, truth


class TestFitCca:
    def test_self_pair_is_perfect(self):
        a = np.random.default_rng(0).standard_normal((100, 2))
        sol = fit_cca(a, a, k=2, reg=0.0)
        np.testing.assert_allclose(sol.canonical_correlations, 1.0, atol=1e-8)

    def test_independent_inputs(self):
        rng = np.random.default_rng(1)
        sol = fit_cca(rng.standard_normal((10_000, 3)), rng.standard_normal((10_000, 3)))
        assert sol.canonical_correlations[0] < 0.1

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_alternating_least_squares(self, seed):
        a, b = coupled(seed, 3, 2, strength=0.6)
        sol = fit_cca(a, b, k=1, reg=0.0)
        assert sol.canonical_correlations[0] == pytest.approx(als_cca_first(a, b, seed=seed), abs=1e-6)

    def test_components_uncorrelated_and_sorted(self):
        a, b = coupled(3, 4, 3)
        sol = fit_cca(a, b, k=3, reg=0.0)
        pa, pb = sol.transform(a, b)
        for p in (pa, pb):
            c = np.corrcoef(p.T)
            np.testing.assert_allclose(c - np.diag(np.diag(c)), 0.0, atol=1e-6)
        assert np.all(np.diff(sol.canonical_correlations) <= 0)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_invariant_to_invertible_transforms(self, seed):
        a, b = coupled(seed, 3, 2)
        rng = np.random.default_rng(seed + 1)
        Ma = rng.standard_normal((3, 3)) + 3 * np.eye(3)
        Mb = rng.standard_normal((2, 2)) + 3 * np.eye(2)
        base = fit_cca(a, b, k=2, reg=0.0).canonical_correlations
        moved = fit_cca(a @ Ma, b @ Mb, k=2, reg=0.0).canonical_correlations
        np.testing.assert_allclose(moved, base, atol=1e-6)

    def test_default_regularization_is_relative(self):
        a, b = coupled(4)
        sol = fit_cca(a * 1e3, b)
        assert sol.regularization[0] == pytest.approx(1e-4 * np.mean(np.var(a * 1e3, axis=0, ddof=1)))

    def test_rank_deficient_input_needs_regularization(self):
        a, b = coupled(5, 2, 2)
        a = np.column_stack([a[:, 0], 2 * a[:, 0]])
        with pytest.raises(NumericalError):
            fit_cca(a, b, reg=0.0)
        assert np.isfinite(fit_cca(a, b).canonical_correlations[0])

    def test_invalid_k(self):
        a, b = coupled(6, 3, 2)
        with pytest.raises(InvalidConfigError):
            fit_cca(a, b, k=3)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            fit_cca(np.ones((10, 2)), np.ones((11, 2)))


class TestScoreFirstCc:
    def test_training_data_closed_loop(self):
        a, b = coupled(7)
        sol = fit_cca(a, b, k=2)
        assert score_first_cc(a, b, sol) == pytest.approx(sol.canonical_correlations[0], abs=1e-8)

    def test_antisymmetric_under_negation(self):
        a, b = coupled(8)
        sol = fit_cca(a[:300], b[:300])
        assert score_first_cc(a[300:], -b[300:], sol) == pytest.approx(-score_first_cc(a[300:], b[300:], sol))

    @pytest.mark.parametrize("seed", range(5))
    def test_recovers_planted_correlation(self, seed):
        resp, stim, _ = planted_pair(seed, corr=0.6)
        half = len(resp) // 2
        sol = fit_cca(resp[:half], stim[:half])
        assert score_first_cc(resp[half:], stim[half:], sol) == pytest.approx(0.6, abs=0.05)

    def test_constant_projection_is_degenerate(self):
        a, b = coupled(9)
        sol = fit_cca(a, b)
        with pytest.raises(DegenerateInputError):
            score_first_cc(np.tile(a[0], (5, 1)), b[:5], sol)

    def test_shape_mismatch(self):
        a, b = coupled(10)
        sol = fit_cca(a, b)
        with pytest.raises(ShapeError):
            score_first_cc(a[:, :2], b, sol)


class TestCca3Chain:
    def test_bank_of_21_widths(self):
        x = np.random.default_rng(11).standard_normal((200, 1))
        assert boxcar_filterbank(x, tuple(range(1, 22))).n_channels == 21

    def test_stimulus_path_width(self):
        a, b = coupled(12, 10, 4, T=600)
        chain = Cca3Chain(Cca3Config(stimulus_widths=tuple(range(1, 22)))).fit(a, b)
        assert chain.stimulus_pca.components.shape[1] == 1
        assert chain.cca.proj_b.shape[0] == 21

    def test_identity_chain_is_plain_cca(self):
        a, b = coupled(13, 3, 2, T=800)
        cfg = Cca3Config(response_widths=(1,), stimulus_widths=(1,), response_dim=None, stimulus_dim=2, reg=0.0)
        a_tr, b_tr = a[:600], b[:600]
        chain_fit = cca3_chain(a_tr, b_tr, cfg, heldout=(a[600:], b[600:]))
        plain = score_first_cc(a[600:], b[600:], fit_cca(a_tr, b_tr, reg=0.0))
        assert chain_fit == pytest.approx(plain, abs=1e-8)

    @pytest.mark.parametrize("seed", range(3))
    def test_chain_keeps_the_signal(self, seed):
        resp, stim, _ = planted_pair(seed, corr=0.7)
        cut = int(0.75 * len(resp))
        plain = score_first_cc(resp[cut:], stim[cut:], fit_cca(resp[:cut], stim[:cut]))
        chained = cca3_chain(resp, stim, Cca3Config(stimulus_dim=stim.shape[1]))
        assert chained >= plain - 0.05

    def test_response_dim_too_large(self):
        a, b = coupled(14, 2, 2)
        with pytest.raises(InvalidConfigError):
            cca3_chain(a, b, Cca3Config(response_dim=11))

    def test_transform_before_fit(self):
        with pytest.raises(InvalidConfigError):
            Cca3Chain().transform(np.ones((5, 2)), np.ones((5, 1)))


class TestDprime:
    def test_self_match_is_large(self):
        x = np.random.default_rng(15).standard_normal(8 * 64)
        assert dprime_match_mismatch(x, x, 64) >= 3

    def test_null_case(self):
        values = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            values.append(dprime_match_mismatch(rng.standard_normal(32 * 64), rng.standard_normal(32 * 64), 64))
        # per-run spread is ~0.18 at 32 segments, so bound the aggregate
        assert abs(np.mean(values)) < 0.5
        assert np.median(np.abs(values)) < 0.5

    def test_zero_variance_populations_hit_the_cap(self):
        assert cohen_dprime([0.8, 0.8], [0.0, 0.0]) == 1e3
        assert cohen_dprime([0.0, 0.0], [0.8, 0.8]) == -1e3

    def test_hand_computed_value(self):
        # means 0.5 and 0.1, sample variances 0.02 and 0.01
        assert cohen_dprime([0.4, 0.6], [0.0, 0.2, 0.1]) == pytest.approx(0.4 / np.sqrt(0.015))

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=2, max_size=10),
           st.lists(st.floats(-1, 1), min_size=2, max_size=10))
    def test_antisymmetric(self, m, x):
        assert cohen_dprime(m, x) == pytest.approx(-cohen_dprime(x, m))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 6))
    def test_self_dprime_positive(self, seed, n_seg):
        x = np.random.default_rng(seed).standard_normal(n_seg * 16)
        assert dprime_match_mismatch(x, x, 16) > 0

    def test_mismatch_uses_all_ordered_pairs(self):
        rng = np.random.default_rng(16)
        a, b = rng.standard_normal(4 * 20), rng.standard_normal(4 * 20)
        C = segment_correlations(a, b, 20)
        match = [np.corrcoef(a[t * 20:(t + 1) * 20], b[t * 20:(t + 1) * 20])[0, 1] for t in range(4)]
        mism = [np.corrcoef(a[t * 20:(t + 1) * 20], b[s * 20:(s + 1) * 20])[0, 1]
                for t in range(4) for s in range(4) if s != t]
        np.testing.assert_allclose(np.diag(C), match, atol=1e-12)
        assert dprime_match_mismatch(a, b, 20) == pytest.approx(cohen_dprime(match, mism), abs=1e-12)

    def test_too_few_segments(self):
        with pytest.raises(InvalidConfigError):
            dprime_match_mismatch(np.arange(30.0), np.arange(30.0), 20)

    def test_constant_segment(self):
        a = np.concatenate([np.ones(10), np.arange(10.0)])
        with pytest.raises(DegenerateInputError):
            dprime_match_mismatch(a, np.arange(20.0), 10)

    def test_pearson_rejects_constant(self):
        with pytest.raises(DegenerateInputError):
            pearson(np.ones(5), np.arange(5.0))


class TestDprimeSweep:
    def test_dyadic_durations_in_samples(self):
        assert segment_lengths(DEFAULT_DURATIONS, 64.0) == [64, 128, 256, 512, 1024, 2048]

    def test_duration_below_two_samples(self):
        with pytest.raises(InvalidConfigError):
            segment_lengths([0.01], 64.0)

    def test_table_rejects_unsorted(self):
        with pytest.raises(InvalidConfigError):
            DPrimeTable(((2.0, 1.0), (1.0, 1.0)), 64.0)

    def test_one_row_per_duration(self):
        rng = np.random.default_rng(17)
        x = rng.standard_normal(64 * 64)
        table = dprime_sweep(x, x + rng.standard_normal(x.size), DEFAULT_DURATIONS, 64.0)
        assert table.durations == [float(d) for d in DEFAULT_DURATIONS]
        assert len(table.values) == 6

    def test_planted_signal_grows_with_duration(self):
        values = []
        for seed in range(5):
            cfg = SynthConfig(num_views=1, channels_per_view=2, samples=64 * 32 * 16, seed=seed, stimulus_lag=0)
            stim, resp, truth = generate_stimulus_response(cfg, 0.3)
            proj = resp[0].data @ truth.oracle_projections[0]
            values.append(dprime_sweep(proj, stim.data[:, 0], DEFAULT_DURATIONS, 64.0).values)
        mean = np.mean(values, axis=0)
        steps = np.diff(mean) >= 0
        assert steps.sum() / len(steps) >= 5 / 6

"""Logit-family share maps, eligible share systems and the synthetic panel."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from restrictiveness.choice import (ChoiceEligibleSampler, ChoiceModel, MarketPanel,
                                    SyntheticMarketSettings, choice_discrepancy,
                                    fit_choice_models, generate_markets, inverse_gamma,
                                    load_markets_csv, mnl_from_utilities, mnl_shares,
                                    mxl_shares, nl_from_utilities, nl_shares, run_choice,
                                    truncated_beta_prior, uniform_shares, write_markets_csv)
from restrictiveness.engine import DiscrepancySpec, OptimSettings
from restrictiveness.exceptions import DataError
from restrictiveness.kernels import KernelSpec
from restrictiveness.rng import make_rng
from restrictiveness.shape import softplus

SMALL = SyntheticMarketSettings(n_markets=6, n_products=8, n_mushy=3)
utils = st.lists(st.floats(-30.0, 30.0), min_size=1, max_size=8)


@pytest.fixture(scope="module")
def small_panel():
    return generate_markets(SMALL, seed=1)


class TestMnl:
    def test_zero_utilities(self):
        np.testing.assert_allclose(mnl_from_utilities(np.zeros(3)), 0.25)

    def test_single_product(self):
        assert mnl_from_utilities([0.0])[0] == 0.5

    def test_two_products(self):
        e = np.e
        out = mnl_from_utilities([1.0, 2.0])
        np.testing.assert_allclose(out, [e / (1 + e + e * e), e * e / (1 + e + e * e)], rtol=1e-14)
        np.testing.assert_allclose(out, [0.24472847, 0.66524096], atol=5e-9)

    def test_overflow_safe(self):
        out = mnl_from_utilities([800.0, 799.0])
        assert np.all(np.isfinite(out)) and out.sum() == pytest.approx(1.0)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            mnl_from_utilities([np.nan, 0.0])

    def test_characteristics_form(self):
        X = np.array([[1.0, 2.0, 0.0], [1.0, 3.0, 1.0]])
        beta = np.array([0.5, -0.4, 0.2])
        np.testing.assert_allclose(mnl_shares(X, beta), mnl_from_utilities(X @ beta), rtol=1e-15)

    @given(utils, st.floats(-20.0, 20.0))
    def test_simplex_and_shift(self, u, c):
        u = np.array(u)
        s = mnl_from_utilities(u)
        assert np.all(s > 0) and 0 < 1 - s.sum() < 1
        # shifting every alternative, the outside one included, leaves shares unchanged
        full = mnl_from_utilities(np.concatenate([[c], u + c]), outside=False)
        np.testing.assert_allclose(full[1:], s, rtol=1e-10, atol=1e-300)
        assert full.sum() == pytest.approx(1.0, abs=1e-10)


class TestNl:
    @given(utils)
    def test_rho_zero_is_mnl(self, u):
        nests = np.arange(len(u)) % 2
        np.testing.assert_allclose(nl_from_utilities(u, 0.0, nests), mnl_from_utilities(u),
                                   rtol=1e-12, atol=1e-300)

    def test_single_nest_hand_formula(self):
        # inclusive value log 2, nest probability 2**0.5 / (1 + 2**0.5), halves within
        expect = 0.5 * np.sqrt(2.0) / (1.0 + np.sqrt(2.0))
        np.testing.assert_allclose(nl_from_utilities([0.0, 0.0], 0.5, [0, 0]), expect, rtol=1e-14)

    def test_singleton_nests_limit(self):
        u = np.array([0.3, -1.2])
        np.testing.assert_allclose(nl_from_utilities(u, 0.999, [0, 1]), mnl_from_utilities(u), rtol=1e-12)

    def test_correlation_shifts_share_within_nest(self):
        u = np.array([1.0, 0.0, 0.5])
        s0 = nl_from_utilities(u, 0.0, [0, 0, 1])
        s9 = nl_from_utilities(u, 0.9, [0, 0, 1])
        assert s9[0] / s9[1] > s0[0] / s0[1]

    def test_bad_rho(self):
        with pytest.raises(ValueError):
            nl_from_utilities([0.0], 1.0, [0])

    @given(utils, st.floats(0.0, 0.95))
    def test_simplex(self, u, rho):
        s = nl_from_utilities(u, rho, np.arange(len(u)) % 3)
        assert np.all(s >= 0) and s.sum() < 1.0
        assert np.all(np.isfinite(s))

    def test_characteristics_form(self):
        X = np.array([[1.0, 2.0, 0.0], [1.0, 3.0, 1.0]])
        beta = np.array([0.5, -0.4, 0.2])
        np.testing.assert_allclose(nl_shares(X, beta, 0.0, [0, 1]), mnl_shares(X, beta), rtol=1e-14)


class TestMxl:
    X = np.array([[1.0, 2.0, 0.0], [1.0, 3.0, 1.0], [1.0, 1.5, 1.0]])
    beta = np.array([0.5, -0.4, 0.2])

    @pytest.mark.parametrize("R", [1, 7, 500])
    def test_zero_sigma_is_mnl(self, R):
        np.testing.assert_allclose(mxl_shares(self.X, self.beta, np.zeros(3), R), mnl_shares(self.X, self.beta),
                                   rtol=1e-14)

    def test_zero_everything_uniform(self):
        np.testing.assert_allclose(mxl_shares(self.X, np.zeros(3), np.zeros(3), 50), 0.25, rtol=1e-14)

    def test_wide_normal_oracle(self):
        X = np.array([[1.0]])
        beta, sigma = np.array([0.3]), np.array([3.0])
        ref = expit(0.3 + 3.0 * np.random.default_rng(12345).standard_normal(1_000_000)).mean()
        draws = expit(0.3 + 3.0 * make_rng(0, 4).standard_normal(2000))
        value = mxl_shares(X, beta, sigma, R=2000, seed=0)[0]
        assert abs(value - ref) < 3.0 * draws.std(ddof=1) / np.sqrt(2000)

    def test_common_random_numbers(self):
        a = mxl_shares(self.X, self.beta, [0.5, 0.2, 0.1], 100, seed=3)
        np.testing.assert_array_equal(a, mxl_shares(self.X, self.beta, [0.5, 0.2, 0.1], 100, seed=3))

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(0.0, 5.0), min_size=3, max_size=3), st.floats(-3.0, 3.0))
    def test_simplex(self, sigma, b0):
        s = mxl_shares(self.X, [b0, -0.4, 0.2], sigma, 64)
        assert np.all(s > 0) and 0 < 1 - s.sum() < 1


class TestDiscrepancyAndPriors:
    def test_identical(self):
        s = np.array([[0.1, 0.2], [0.3, 0.3]])
        assert choice_discrepancy(s, s) == 0.0

    def test_toy(self):
        p = np.array([[0.1, 0.2], [0.3, 0.3]])
        s = np.array([[0.2, 0.2], [0.1, 0.4]])
        assert choice_discrepancy(p, s) == pytest.approx(((0.01) + (0.04 + 0.01)) / 2)

    def test_uniform_baseline(self, small_panel):
        s = small_panel.shares
        base = uniform_shares(small_panel)
        assert np.all(base[small_panel.valid] == 1.0 / 9.0)
        assert choice_discrepancy(base, s) == pytest.approx(np.mean(np.sum((s - 1.0 / 9.0) ** 2, axis=1)))

    def test_mismatch(self):
        with pytest.raises(ValueError):
            choice_discrepancy(np.zeros((2, 3)), np.zeros((2, 4)))

    def test_rejection_rate(self):
        rng = make_rng(0)
        tries = sum(truncated_beta_prior(rng)[1] for _ in range(10_000))
        assert 10_000 / tries == pytest.approx(0.5, abs=0.02)

    def test_truncation_and_scale(self):
        rng = make_rng(1)
        betas = np.array([truncated_beta_prior(rng)[0] for _ in range(4000)])
        assert np.all(betas[:, 1] < 0)
        assert betas[:, 0].std() == pytest.approx(20.0, rel=0.05)

    def test_inverse_gamma_mean(self):
        x = inverse_gamma(make_rng(2), 2.0, 1.0, size=200_000)
        assert np.median(x) == pytest.approx(1.0 / 1.678346990016661, rel=0.02)
        assert np.all(x > 0)


class TestSyntheticMarkets:
    def test_shape_and_ranges(self):
        panel = generate_markets(seed=0)
        assert panel.price.shape == (94, 24) and panel.num_instruments == 20
        assert np.all(panel.price > 0)
        assert set(np.unique(panel.mushy)) == {0.0, 1.0}
        assert np.all((panel.s0 > 0.3) & (panel.s0 < 0.9))
        total = panel.s0 + panel.shares.sum(axis=1)
        np.testing.assert_allclose(total, 1.0, atol=1e-12)

    def test_deterministic(self):
        a, b = generate_markets(SMALL, 5), generate_markets(SMALL, 5)
        np.testing.assert_array_equal(a.price, b.price)
        np.testing.assert_array_equal(a.shares, b.shares)

    def test_exogenous_price_independent_of_shifter(self):
        panel = generate_markets(SyntheticMarketSettings(endogenous=False), seed=0)
        assert abs(np.corrcoef(panel.price.ravel(), panel.shifter.ravel())[0, 1]) < 0.05

    def test_endogenous_price_tracks_shifter(self):
        panel = generate_markets(seed=0)
        assert np.corrcoef(panel.price.ravel(), panel.shifter.ravel())[0, 1] > 0.15

    def test_csv_round_trip(self, tmp_path, small_panel):
        path = tmp_path / "markets.csv"
        write_markets_csv(small_panel, path)
        back = load_markets_csv(path)
        np.testing.assert_array_equal(back.price, small_panel.price)
        np.testing.assert_array_equal(back.mushy, small_panel.mushy)
        np.testing.assert_array_equal(back.shares, small_panel.shares)
        np.testing.assert_array_equal(back.instruments, small_panel.instruments)

    def test_ragged_csv(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("market_id,product_id,price,mushy\na,p1,1.0,0\na,p2,2.0,1\nb,p1,1.5,0\n")
        panel = load_markets_csv(path)
        assert panel.valid.tolist() == [[True, True], [True, False]]
        assert panel.shares is None

    @pytest.mark.parametrize("text", ["market_id,price,mushy\na,1.0,0\n",
                                      "market_id,product_id,price,mushy\na,p1,x,0\n",
                                      "market_id,product_id,price,mushy\na,p1,1.0,2\n"])
    def test_bad_csv(self, tmp_path, text):
        path = tmp_path / "bad.csv"
        path.write_text(text)
        with pytest.raises(DataError):
            load_markets_csv(path)

    def test_shares_must_sum_below_one(self):
        with pytest.raises(DataError):
            MarketPanel([0], [[0, 1]], [[1.0, 2.0]], [[0, 1]], [[True, True]], [[0.6, 0.5]])


class TestEligibleSets:
    def test_np_both_shares(self, small_panel):
        s = ChoiceEligibleSampler(small_panel, "np_both", Ns=300, seed=2)
        shares, parts = s.draw(0, return_parts=True)
        assert np.all(shares > 0)
        assert np.all(shares.sum(axis=1) < 1)
        f = parts["mean_utility"]
        for m in range(small_panel.num_obs):
            for cat in (0.0, 1.0):
                idx = np.nonzero(small_panel.mushy[m] == cat)[0]
                idx = idx[np.argsort(small_panel.price[m, idx])]
                assert np.all(np.diff(f[m, idx]) <= 1e-12)
            assert abs(f[m].mean()) < 1e-10

    def test_flat_components_give_equal_shares(self):
        J = 5
        out = mnl_from_utilities(np.zeros((10, J))).mean(axis=0)
        np.testing.assert_allclose(out, 1.0 / (J + 1))

    def test_np_individual_collapses_to_mnl(self, small_panel):
        s = ChoiceEligibleSampler(small_panel, "np_individual", KernelSpec("product_categorical", 1e-12, 10.0, 0.6),
                                  Ns=50, seed=0)
        shares, parts = s.draw(1, return_parts=True)
        np.testing.assert_allclose(shares, mnl_shares(small_panel.characteristics, parts["beta"]), atol=1e-6)

    def test_np_mean_draws_positive_sigma(self, small_panel):
        _, parts = ChoiceEligibleSampler(small_panel, "np_mean", Ns=50, seed=0).draw(0, return_parts=True)
        assert parts["sigma"].shape == (3,) and np.all(parts["sigma"] > 0)

    def test_reproducible(self, small_panel):
        a = ChoiceEligibleSampler(small_panel, "np_both", Ns=100, seed=9).draw(2)
        b = ChoiceEligibleSampler(small_panel, "np_both", Ns=100, seed=9).draw(2)
        np.testing.assert_array_equal(a, b)

    def test_price_effect_formula(self, small_panel):
        s = ChoiceEligibleSampler(small_panel, "np_both", Ns=10, seed=0)
        f = s.common_component(0)
        m = 0
        v = small_panel.valid[m]
        assert f[m, v].shape == (8,)
        # price effects only use softplus increments, so the spread is bounded by them
        assert np.ptp(f[m, v]) <= softplus(40.0) * np.ptp(small_panel.price[m, v])

    def test_unknown_kind(self, small_panel):
        with pytest.raises(ValueError):
            ChoiceEligibleSampler(small_panel, "np_other")


class TestModelFits:
    def test_realizable_mnl(self, small_panel):
        beta = np.array([0.2, -0.4, 0.3])
        target = mnl_shares(small_panel.characteristics, beta, small_panel.valid)
        fits = fit_choice_models(target, small_panel, {"mnl": ChoiceModel("mnl")}, DiscrepancySpec(),
                                 OptimSettings(2, 1e-10, 4000), seed=0)
        assert fits["mnl"].value <= 1e-10

    def test_nested_models_never_worse(self, small_panel):
        target = ChoiceEligibleSampler(small_panel, "np_both", Ns=200, seed=0).draw(0)
        models = {k: ChoiceModel(k, R=30) for k in ("mnl", "nl", "mxl")}
        fits = fit_choice_models(target, small_panel, models, DiscrepancySpec(), OptimSettings(1), seed=0,
                                 extra_opt=OptimSettings(0, 1e-8, 500))
        assert fits["nl"].value <= fits["mnl"].value + 1e-12
        assert fits["mxl"].value <= fits["mnl"].value + 1e-12

    def test_run_choice(self, small_panel):
        models = {k: ChoiceModel(k, R=20) for k in ("mnl", "nl", "mxl")}
        sampler = ChoiceEligibleSampler(small_panel, "np_both", Ns=100, seed=0)
        results, draws = run_choice(small_panel, sampler, models, M=2, opt=OptimSettings(1, 1e-6, 300))
        assert len(draws) == 2
        for kind in ("nl", "mxl"):
            assert results[kind].r_hat <= results["mnl"].r_hat + 1e-6
        assert all(0.0 <= r.r_hat <= 1.0 for r in results.values())
        assert results["mnl"].inference == "estimated_d_if" and results["mnl"].n == 6

    def test_embedding(self):
        assert ChoiceModel("mxl").embed_mnl([1.0, 2.0, 3.0]).tolist() == [1.0, 2.0, 3.0, 0.0, 0.0, 0.0]
        assert ChoiceModel("nl").interior_start([1.0, 2.0, 3.0]).tolist() == [1.0, 2.0, 3.0, 0.5]

"""Linear demand and supply, and the two-firm entry game with equilibrium selection."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from restrictiveness.engine import OptimSettings
from restrictiveness.exceptions import DegenerateError, DomainError
from restrictiveness.structural import (DemandDesign, EntryParams, SimEqParams,
                                        brute_force_semiparametric_infimum, ccp_from_regions,
                                        demand_draws, demand_only_discrepancy,
                                        demand_only_restrictiveness, ds_reduced_form,
                                        ds_rf_restrictiveness, ds_sf_restrictiveness, entry_ccp,
                                        entry_discrepancy, entry_domain, entry_draws, entry_objective,
                                        entry_regions, entry_restrictiveness, grid_design,
                                        optimal_selection, reduced_form_coefficients_to_params,
                                        reduced_form_draws, stick_breaking, structural_form_discrepancy,
                                        structural_residual, uniform_ccp_discrepancy)

coef = st.floats(-3.0, 3.0)
pair = st.tuples(coef, coef)
nonpos = st.tuples(st.floats(-3.0, 0.0), st.floats(-3.0, 0.0))
X = grid_design()


def tiny_design():
    # two shifter values and three prices at each
    x = np.array([[-1.0, 0.0], [1.0, 0.5]])
    return DemandDesign(x, np.array([0.4, 0.6]), np.array([[0.0, 1.0, 2.0], [0.5, 1.5, 3.0]]),
                        np.array([[0.2, 0.5, 0.3], [0.3, 0.3, 0.4]]))


class TestSimultaneousEquations:
    def test_no_feedback(self):
        p = SimEqParams((0.5, -1.0), (0.0, 0.0), (2.0, 3.0))
        np.testing.assert_allclose(ds_reduced_form(p, [1.0, 2.0]), [2.5, 5.0], rtol=1e-15)

    def test_hand_inversion(self):
        p = SimEqParams((0.0, 0.0), (0.5, 0.5), (1.0, 1.0))
        np.testing.assert_allclose(ds_reduced_form(p, [1.0, 1.0]), [2.0, 2.0], rtol=1e-14)

    def test_singular(self):
        with pytest.raises(DomainError):
            ds_reduced_form(SimEqParams((0.0, 0.0), (2.0, 0.5), (1.0, 1.0)), [0.0, 0.0])

    @given(pair, pair, pair, pair)
    def test_fixed_point(self, a, b, g, x):
        p = SimEqParams(a, b, g)
        if abs(1 - b[0] * b[1]) < 1e-2:
            return
        y = ds_reduced_form(p, x)
        np.testing.assert_allclose(structural_residual(p, y, x), 0.0, atol=1e-12 * (1 + np.abs(y).max()))

    @given(pair, pair, pair)
    def test_coefficient_round_trip(self, a, b, g):
        if abs(1 - b[0] * b[1]) < 1e-2 or min(abs(g[0]), abs(g[1])) < 1e-2:
            return
        p = SimEqParams(a, b, g)
        Pi = np.column_stack([ds_reduced_form(p, e) - ds_reduced_form(p, [0.0, 0.0]) for e in np.eye(2)])
        back = reduced_form_coefficients_to_params(ds_reduced_form(p, [0.0, 0.0]), Pi)
        np.testing.assert_allclose(ds_reduced_form(back, X), ds_reduced_form(p, X), atol=1e-9)


class TestReducedForm:
    def test_affine_draws(self):
        rng = np.random.default_rng(0)
        draws = [rng.normal(size=2) + X @ rng.normal(size=(2, 2)) for _ in range(6)]
        res = ds_rf_restrictiveness(draws)
        assert res.r_hat <= 1e-12

    def test_constant_draws(self):
        with pytest.raises(DegenerateError):
            ds_rf_restrictiveness(np.ones((4, 25, 2)))

    def test_matches_projection(self):
        draws = reduced_form_draws(X, 8, seed=1)
        res = ds_rf_restrictiveness(draws)
        A = np.column_stack([np.ones(25), X])
        for m, g in enumerate(draws):
            resid = g - A @ np.linalg.lstsq(A, g, rcond=None)[0]
            assert res.per_draw_model_d[m] == pytest.approx(np.mean(np.sum(resid ** 2, axis=1)), abs=1e-6)
            assert res.per_draw_base_d[m] == pytest.approx(g.var(axis=0).sum(), rel=1e-10)
        assert 0.0 < res.r_hat < 1.0


class TestDemandOnly:
    def test_linear_demand(self):
        d = DemandDesign.linear()
        values = 1.0 - 2.0 * d.joint_points[:, 0] + 0.5 * d.joint_points[:, 1]
        num, den = demand_only_discrepancy(values, d)
        assert num <= 1e-20 and den > 0

    def test_constant(self):
        d = DemandDesign.linear()
        with pytest.raises(DegenerateError):
            demand_only_restrictiveness(np.full((3, d.joint_points.shape[0]), 2.0), d)

    @pytest.mark.parametrize("design", [tiny_design(), DemandDesign.linear(grid_design(3))])
    def test_reduction_matches_brute_force(self, design):
        rng = np.random.default_rng(3)
        for _ in range(5):
            values = rng.normal(size=design.joint_points.shape[0])
            num, _ = demand_only_discrepancy(values, design)
            assert brute_force_semiparametric_infimum(values, design) == pytest.approx(num, abs=1e-6)

    def test_design_validation(self):
        with pytest.raises(ValueError):
            DemandDesign(np.zeros((2, 2)), np.array([0.5, 0.6]), np.zeros((2, 1)), np.ones((2, 1)))


class TestStructuralForm:
    def test_linear(self):
        d = DemandDesign.linear()
        pts = d.joint_points
        num, _ = structural_form_discrepancy(2.0 + 3.0 * pts[:, 0] - pts[:, 1], d)
        assert num <= 1e-20

    def test_quadratic_price(self):
        d = DemandDesign.linear(pi=(0.0, 0.0, 0.0), offsets=(-1.0, 0.0, 1.0))
        pts, w = d.joint_points, d.joint_weights
        y = pts[:, 0] ** 2
        A = np.column_stack([np.ones(len(pts)), pts[:, 0], pts[:, 1]])
        # weighted normal equations
        beta = np.linalg.solve(A.T @ (w[:, None] * A), A.T @ (w * y))
        expect = float(w @ (y - A @ beta) ** 2)
        num, den = structural_form_discrepancy(y, d)
        assert num == pytest.approx(expect, abs=1e-10)
        assert expect == pytest.approx(2.0 / 9.0, abs=1e-12)
        assert den == pytest.approx(2.0 / 9.0, abs=1e-12)

    def test_constant(self):
        d = DemandDesign.linear()
        with pytest.raises(DegenerateError):
            ds_sf_restrictiveness(np.full((2, d.joint_points.shape[0]), -1.0), d)

    def test_differs_from_demand_only(self):
        d = DemandDesign.linear()
        pts = d.joint_points
        values = np.sin(2.0 * pts[:, 0]) + pts[:, 0] * pts[:, 1]
        assert abs(structural_form_discrepancy(values, d)[0] - demand_only_discrepancy(values, d)[0]) > 1e-6

    def test_gp_draws(self):
        d = DemandDesign.linear()
        draws = demand_draws(d, 6, seed=0)
        sf, do = ds_sf_restrictiveness(draws, d), demand_only_restrictiveness(draws, d)
        assert 0.0 < sf.r_hat < 1.0 and 0.0 <= do.r_hat < 1.0


def simulate_regions(params, x, n, seed):
    """Monte-Carlo frequencies of the five equilibrium regions at one point."""
    rng = np.random.default_rng(seed)
    e = rng.logistic(size=(n, 2))
    a, b, g = params.alpha, params.beta, params.gamma
    enter1_out = a[0] + g[0] * x[0] >= e[:, 0]
    enter1_in = a[0] + b[0] + g[0] * x[0] >= e[:, 0]
    enter2_out = a[1] + g[1] * x[1] >= e[:, 1]
    enter2_in = a[1] + b[1] + g[1] * x[1] >= e[:, 1]
    ne00 = ~enter1_out & ~enter2_out
    ne11 = enter1_in & enter2_in
    ne10 = enter1_out & ~enter2_in
    ne01 = ~enter1_in & enter2_out
    return np.array([ne00.mean(), ne11.mean(), (ne10 & ~ne01).mean(), (ne01 & ~ne10).mean(),
                     (ne10 & ne01).mean()])


class TestEntryRegions:
    def test_no_strategic_effect(self):
        p = EntryParams((0.3, -0.2), (0.0, 0.0), (1.0, 0.5))
        r = entry_regions(p, [0.4, -0.6])
        assert r.p_mult[0] == 0.0
        F1, F2 = expit(0.3 + 0.4), expit(-0.2 - 0.3)
        np.testing.assert_allclose([r.p00[0], r.p11[0], r.p10_unique[0], r.p01_unique[0]],
                                   [(1 - F1) * (1 - F2), F1 * F2, F1 * (1 - F2), (1 - F1) * F2], rtol=1e-14)

    def test_simulation(self):
        p = EntryParams((0.0, 0.0), (-1.0, -1.0), (0.0, 0.0))
        r = entry_regions(p, [0.0, 0.0])
        exact = np.array([r.p00[0], r.p11[0], r.p10_unique[0], r.p01_unique[0], r.p_mult[0]])
        n = 2_500_000
        sim = np.mean([simulate_regions(p, [0.0, 0.0], n, s) for s in range(4)], axis=0)
        se = np.sqrt(exact * (1 - exact) / (4 * n))
        assert np.all(np.abs(sim - exact) <= 3 * se)

    @settings(max_examples=200)
    @given(pair, nonpos, pair, pair)
    def test_partition(self, a, b, g, x):
        r = entry_regions(EntryParams(a, b, g), x)
        probs = np.array([r.p00, r.p11, r.p10_unique, r.p01_unique, r.p_mult])
        assert np.all(probs >= -1e-15)
        assert r.total()[0] == pytest.approx(1.0, abs=1e-10)

    def test_normal_errors(self):
        r = entry_regions(EntryParams((0.2, 0.1), (-1.0, -0.5), (1.0, 1.0), "independent_normal"), X)
        np.testing.assert_allclose(r.total(), 1.0, atol=1e-12)

    def test_positive_beta_rejected(self):
        with pytest.raises(DomainError):
            EntryParams((0.0, 0.0), (0.5, -1.0), (0.0, 0.0))


class TestEntryCcp:
    params = EntryParams((0.5, 0.2), (-1.5, -1.0), (1.0, -0.5))

    @given(st.floats(0.0, 1.0))
    def test_sums_to_one(self, q):
        np.testing.assert_allclose(entry_ccp(self.params, X, q).sum(axis=1), 1.0, atol=1e-14)

    def test_bracketing(self):
        r = entry_regions(self.params, X)
        lo, hi, mid = (entry_ccp(self.params, X, q)[:, 2] for q in (0.0, 1.0, 0.5))
        np.testing.assert_allclose(lo, r.p10_unique, rtol=1e-14)
        np.testing.assert_allclose(hi, r.p10_unique + r.p_mult, rtol=1e-14)
        np.testing.assert_allclose(mid, r.p10_unique + r.p_mult / 2, rtol=1e-14)

    def test_no_multiplicity_ignores_q(self):
        p = EntryParams((0.5, 0.2), (0.0, 0.0), (1.0, -0.5))
        np.testing.assert_array_equal(entry_ccp(p, X, 0.1), entry_ccp(p, X, 0.9))

    def test_invalid_q(self):
        with pytest.raises(ValueError):
            entry_ccp(self.params, X, 1.5)


class TestEntryDiscrepancy:
    theta = np.array([0.5, 0.2, -1.5, -1.0, 1.0, -0.5])

    def test_closed_form_selection_matches_grid(self):
        g = entry_draws(1, seed=4)[0]
        r = entry_regions(EntryParams.from_vector(self.theta), X)
        q_hat = optimal_selection(r, g)
        closed = np.sum((ccp_from_regions(r, q_hat) - g) ** 2, axis=1)
        grid = np.linspace(0.0, 1.0, 101)
        scan = np.array([np.sum((ccp_from_regions(r, q) - g) ** 2, axis=1) for q in grid]).min(axis=0)
        assert np.all(closed <= scan + 1e-12)
        # the grid misses the optimum by at most half a step in q
        assert np.all(scan - closed <= 2 * (0.005 * r.p_mult) ** 2 + 1e-12)

    def test_closed_form_on_grid_point(self):
        g = entry_ccp(EntryParams.from_vector(self.theta), X, 0.3)
        value, q = entry_objective(self.theta, g, X)
        assert value <= 1e-25
        grid = np.linspace(0.0, 1.0, 101)
        r = entry_regions(EntryParams.from_vector(self.theta), X)
        scan = min(np.mean(np.sum((ccp_from_regions(r, qq) - g) ** 2, axis=1)) for qq in grid)
        assert abs(scan - value) <= 1e-10

    def test_realizable(self):
        g = entry_ccp(EntryParams.from_vector(self.theta), X, 0.3)
        fit = entry_discrepancy(g, opt=OptimSettings(8, 1e-10, 6000), seed=0)
        assert fit.value <= 1e-6

    def test_selection_beats_fixed(self):
        g = entry_draws(1, seed=2)[0]
        fit = entry_discrepancy(g, opt=OptimSettings(2), seed=0)
        r = entry_regions(EntryParams.from_vector(fit.theta), X)
        for q in (0.0, 1.0):
            assert fit.value <= np.mean(np.sum((ccp_from_regions(r, q) - g) ** 2, axis=1)) + 1e-15

    def test_wider_box_never_worse(self):
        g = entry_draws(1, seed=5)[0]
        narrow = entry_discrepancy(g, opt=OptimSettings(2), seed=0)
        wide = entry_discrepancy(g, domain=entry_domain(beta_lower=-np.inf), opt=OptimSettings(2), seed=0,
                                 warm_starts=[narrow.theta])
        assert wide.value <= narrow.value + 1e-15


class TestEntryRestrictiveness:
    def test_stick_breaking(self):
        np.testing.assert_allclose(stick_breaking(np.zeros(3)), 0.25, rtol=1e-14)
        out = stick_breaking(np.random.default_rng(0).normal(scale=5.0, size=(100, 3)))
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-14)

    def test_uniform_baseline(self):
        assert uniform_ccp_discrepancy(np.full((25, 4), 0.25)) == 0.0

    def test_model_as_eligible_set(self):
        rng = np.random.default_rng(1)
        thetas = [np.concatenate([rng.uniform(-1, 1, 2), rng.uniform(-2, 0, 2), rng.uniform(-1, 1, 2)])
                  for _ in range(3)]
        draws = np.array([entry_ccp(EntryParams.from_vector(t), X, 0.5) for t in thetas])
        res, _ = entry_restrictiveness(draws, opt=OptimSettings(8, 1e-10, 6000), workers=1)
        assert res.r_hat <= 1e-5

    def test_gp_draws_regression(self):
        res, fits = entry_restrictiveness(entry_draws(5, seed=0), opt=OptimSettings(2), workers=1)
        assert 0.0 < res.r_hat < 1.0
        assert len(fits) == 5

    @pytest.mark.slow
    def test_pinned_fifty_draws(self):
        # engine value recorded at first computation
        res, _ = entry_restrictiveness(entry_draws(50, seed=0), workers=1)
        assert res.r_hat == pytest.approx(0.45169736143724715, abs=1e-6)
        assert 0.0 < res.r_hat < 1.0

import math

import numpy as np
import pytest

from rrldp.estimators import var_two_rate
from rrldp.mechanisms import MechanismSpec, ProbabilityMatrix, build_matrix
from rrldp.privacy import (
    BoundaryUndefinedError,
    FeasibleRegion,
    PrivacyBudget,
    UnboundedBudgetError,
    budget_bruteforce,
    compose,
    dummy_weight_ratio,
    epsilon_of_matrix,
    lpp0_budget,
    lpp_budget,
    optimal_dummy_weight,
    optimal_p_high,
    optimal_p_low,
    pckv_budget,
    pckv_budget_bruteforce,
    region_contains,
    two_rate_boundary_optimum,
    var_symmetric3_dp,
    var_two_rate_dp1,
)
from rrldp.protocols import lpp0_matrix, lpp_matrix

LN2 = math.log(2.0)


def sym3(p):
    return build_matrix(MechanismSpec.symmetric(p, 3))


class TestEpsilonOfMatrix:
    def test_symmetric_half(self):
        assert epsilon_of_matrix(sym3(0.5)).epsilon == pytest.approx(LN2, abs=1e-15)

    def test_budget_round_trip(self):
        eps0 = 1.0
        p = math.exp(eps0) / (math.exp(eps0) + 2.0)
        assert epsilon_of_matrix(sym3(p)).epsilon == pytest.approx(eps0, abs=1e-12)

    def test_uniform_matrix_is_free(self):
        uniform = ProbabilityMatrix(np.full((3, 3), 1 / 3))
        assert epsilon_of_matrix(uniform).epsilon == 0.0

    def test_zero_entry_unbounded(self):
        identity = build_matrix(MechanismSpec.symmetric(1.0, 3))
        with pytest.raises(UnboundedBudgetError, match=r"entry \(0, 1\)"):
            epsilon_of_matrix(identity)

    def test_strictly_increasing_in_p(self):
        ps = np.linspace(0.34, 0.99, 30)
        eps = [epsilon_of_matrix(sym3(float(p))).epsilon for p in ps]
        assert np.all(np.diff(eps) > 0.0)

    def test_provenance(self):
        assert epsilon_of_matrix(sym3(0.5)).provenance == "matrix"


class TestCompose:
    def test_two_halves(self):
        assert compose([PrivacyBudget(LN2, "matrix"), PrivacyBudget(LN2, "matrix")]).epsilon == (
            pytest.approx(2 * LN2, abs=1e-15)
        )

    def test_singleton(self):
        out = compose([PrivacyBudget(0.77, "matrix")])
        assert out.epsilon == 0.77
        assert out.provenance == "composition"

    def test_plain_floats(self):
        assert compose([0.5, 0.3, 0.2]).epsilon == pytest.approx(1.0, abs=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            compose([])


class TestOptimalParameters:
    def test_exact_values(self):
        assert optimal_p_high(LN2, 3) == 0.5
        assert optimal_p_low(LN2, 3) == 0.2

    def test_two_answers(self):
        assert optimal_p_high(LN2, 2) == pytest.approx(2.0 / 3.0, abs=1e-15)

    def test_low_at_ln3(self):
        assert optimal_p_low(math.log(3.0), 3) == pytest.approx(1.0 / 7.0, abs=1e-15)

    def test_small_epsilon_approaches_uniform(self):
        assert optimal_p_high(1e-9, 3) == pytest.approx(1 / 3, abs=1e-9)
        assert optimal_p_low(1e-9, 3) == pytest.approx(1 / 3, abs=1e-9)

    @pytest.mark.parametrize("eps", [-1.0, 0.0])
    def test_nonpositive_epsilon_rejected(self, eps):
        with pytest.raises(ValueError):
            optimal_p_high(eps, 3)
        with pytest.raises(ValueError):
            optimal_p_low(eps, 3)

    @pytest.mark.parametrize("eps", [0.2, LN2, 1.5])
    @pytest.mark.parametrize("n", [2, 3, 5])
    def test_optima_lie_in_their_regions(self, eps, n):
        assert region_contains(FeasibleRegion("sym_high", eps, n=n), optimal_p_high(eps, n))
        assert region_contains(FeasibleRegion("sym_low", eps, n=n), optimal_p_low(eps, n))


class TestRegions:
    def test_sym3_high_boundary(self):
        region = FeasibleRegion("sym3_high", LN2)
        assert region_contains(region, 0.5)
        assert not region_contains(region, 0.51)
        assert not region_contains(region, 1 / 3)

    def test_sym3_low(self):
        region = FeasibleRegion("sym3_low", LN2)
        assert region_contains(region, 0.2)
        assert not region_contains(region, 0.19)
        assert not region_contains(region, 1 / 3)

    def test_two_rate_2_worked_example(self):
        region = FeasibleRegion("two_rate_2", LN2)
        assert region_contains(region, (0.45, 0.40))
        assert not region_contains(region, (0.40, 0.45))  # needs p2 < p1
        assert not region_contains(region, (0.9, 0.4))  # violates 2 p1 <= e (1 - p2)

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError):
            FeasibleRegion("nope", LN2)


class TestVarianceDerivatives:
    @pytest.mark.parametrize("p", [0.4, 0.5, 0.8])
    def test_symmetric3_derivative_matches_finite_difference(self, p):
        h, pi0, total = 1e-6, 0.3, 10_000
        from rrldp.estimators import var_symmetric3

        fd = (var_symmetric3(pi0, p + h, total) - var_symmetric3(pi0, p - h, total)) / (2 * h)
        assert var_symmetric3_dp(pi0, p, total) == pytest.approx(fd, rel=1e-4)

    def test_sign_flips_across_one_third(self):
        assert var_symmetric3_dp(0.3, 0.5, 1000) < 0.0
        assert var_symmetric3_dp(0.3, 0.25, 1000) > 0.0

    def test_two_rate_derivative_matches_finite_difference(self):
        h, pi0, total = 1e-6, 0.3, 10_000
        for p1, p2 in [(0.5, 0.4), (0.6, 0.35), (0.55, 0.45)]:
            fd = (var_two_rate(pi0, p1 + h, p2, total) - var_two_rate(pi0, p1 - h, p2, total)) / (
                2 * h
            )
            analytic = var_two_rate_dp1(pi0, p1, p2, total)
            assert analytic == pytest.approx(fd, rel=1e-4)
            assert analytic < 0.0


class TestTwoRateBoundaryOptimum:
    def test_boundary_set_at_ln2(self):
        result = two_rate_boundary_optimum(LN2, grid_size=80)
        assert result.argmin == ()
        assert result.boundary_set == (pytest.approx(2.0 / 3.0, abs=1e-15),)

    def test_no_interior_local_minimum(self):
        result = two_rate_boundary_optimum(LN2, grid_size=80)
        assert result.details["interior_local_minima"] == 0
        assert result.details["derivative_sign_ok"]

    def test_grid_argmin_near_boundary_optimum(self):
        result = two_rate_boundary_optimum(LN2, grid_size=80)
        assert abs(result.details["boundary_grid_argmin"] - 2.0 / 3.0) <= (
            result.details["boundary_grid_spacing"]
        )

    @pytest.mark.parametrize("eps", [0.0, math.log(3.0), 2.0])
    def test_epsilon_domain(self, eps):
        with pytest.raises(BoundaryUndefinedError):
            two_rate_boundary_optimum(eps)


class TestProtocolBudgets:
    def test_lpp_sum(self):
        assert lpp_budget(LN2, LN2).epsilon == pytest.approx(2 * LN2, abs=1e-15)

    def test_lpp_limit_small_second_stage(self):
        assert lpp_budget(0.9, 1e-12).epsilon == pytest.approx(0.9, abs=1e-9)

    def test_lpp0_worked_value(self):
        assert lpp0_budget(LN2, LN2).epsilon == pytest.approx(math.log(8.0 / 3.0), abs=1e-12)

    def test_lpp0_large_second_stage_limit(self):
        # e^eps2/(e^eps2+1) -> 1, so the budget tends to eps1 + ln 2
        assert lpp0_budget(0.7, 40.0).epsilon == pytest.approx(0.7 + LN2, abs=1e-12)

    def test_pckv_worked_values(self):
        assert pckv_budget(LN2, LN2).epsilon == pytest.approx(math.log(8.0 / 3.0), abs=1e-12)
        assert pckv_budget(0.1, 3.0).epsilon == 3.0
        eps = 5.0
        assert pckv_budget(eps, eps).epsilon == pytest.approx(
            eps + LN2 - math.log1p(math.exp(-eps)), abs=1e-12
        )

    @pytest.mark.parametrize("bad", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0)])
    def test_nonpositive_inputs_rejected(self, bad):
        for fn in (lpp_budget, lpp0_budget, pckv_budget):
            with pytest.raises(ValueError):
                fn(*bad)

    def test_lpp0_strictly_below_lpp(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            e1, e2 = rng.uniform(0.05, 3.0, size=2)
            assert lpp0_budget(e1, e2).epsilon < lpp_budget(e1, e2).epsilon

    def test_margin_value(self):
        # sum minus zero-dummy budget = ln((e^eps2 + 1)/2)
        margin = lpp_budget(1.0, 1.0).epsilon - lpp0_budget(1.0, 1.0).epsilon
        assert margin == pytest.approx(math.log((math.e + 1.0) / 2.0), abs=1e-12)

    def test_budget_json_fields(self):
        doc = lpp0_budget(LN2, LN2).to_dict(oracle_epsilon=math.log(8.0 / 3.0))
        assert set(doc) == {"epsilon", "provenance", "inputs", "oracle_epsilon", "abs_diff"}
        assert doc["abs_diff"] < 1e-12


class TestDummyWeight:
    def test_argmin_is_zero(self):
        result = optimal_dummy_weight(LN2, LN2, grid_points=401)
        assert result.argmin == (0.0,)
        q = 2.0 / 3.0
        assert result.achieved_variance == pytest.approx(2.0 * q, abs=1e-12)

    def test_endpoint_matches_composed_budget(self):
        # at dummy weight -1 the ratio reaches e^eps2
        assert dummy_weight_ratio(LN2, -1.0) == pytest.approx(2.0, abs=1e-12)

    def test_symmetric_in_dummy_weight(self):
        wt = np.linspace(-1.0, 1.0, 101)
        f = np.array([dummy_weight_ratio(0.9, float(w)) for w in wt])
        np.testing.assert_allclose(f, f[::-1], rtol=0, atol=1e-12)


class TestBruteForce:
    def test_oracle_self_consistency_on_symmetric(self):
        got = budget_bruteforce(lambda: sym3(0.5), ())
        assert got == pytest.approx(LN2, abs=1e-15)

    def test_lpp_grid_matches_composition(self):
        grid = np.linspace(-1.0, 1.0, 201)
        got = budget_bruteforce(
            lambda w, wt: lpp_matrix(LN2, LN2, w, wt), (grid, grid), compare="columns"
        )
        assert got == pytest.approx(2 * LN2, abs=1e-6)

    def test_lpp0_grid_matches_closed_form(self):
        grid = np.linspace(-1.0, 1.0, 201)
        got = budget_bruteforce(lambda w: lpp0_matrix(LN2, LN2, w), (grid,), compare="base_row")
        assert got == pytest.approx(lpp0_budget(LN2, LN2).epsilon, abs=1e-9)

    def test_pckv_candidates(self):
        # a = b = 2/3 and sign keep 2/3 encode stage budgets (ln 4, ln 2)
        got = pckv_budget_bruteforce(2 / 3, 2 / 3, 2 / 3)
        assert got == pytest.approx(math.log(16.0 / 3.0), abs=1e-12)
        assert got == pytest.approx(pckv_budget(math.log(4.0), LN2).epsilon, abs=1e-12)

    def test_zero_entry_detected(self):
        identity = build_matrix(MechanismSpec.symmetric(1.0, 3))
        with pytest.raises(UnboundedBudgetError):
            budget_bruteforce(lambda: identity, ())

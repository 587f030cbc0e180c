"""Problem assembly, estimate extraction, membership, and evaluation artifacts."""

import math

import numpy as np
import pytest

from roakit.dataset import RegressionPoint, StateBox, to_regression
from roakit.dynamics import IntegratorConfig, OdeSystem
from roakit.estimation import (
    LyapunovEstimate,
    assemble_basic,
    assemble_with_divergent,
    extract_estimate,
    level_set_grid,
    membership,
    solve_divergent_soft,
    validate,
    vstar_histogram,
)
from roakit.numerics import MonomialBasis, gram_from_coefficients
from roakit.sdp import SdpSolution, SolverConfig, solve, violation_report

TIGHT = SolverConfig(tol=1e-9, max_iters=200_000)


def points_from(xs, vs):
    return to_regression(list(zip(xs, vs)))


def dummy_solution(P, status="optimal"):
    P = np.asarray(P, dtype=float)
    return SdpSolution(P=P, aux=np.zeros(0), status=status, objective=0.0,
                       max_violation=0.0, primal_residual=0.0, iterations=1)


class TestAssembleBasic:
    def test_counts(self):
        rng = np.random.default_rng(0)
        pts = points_from(rng.normal(size=(7, 2)), rng.uniform(0, 5, 7))
        prob = assemble_basic(pts, MonomialBasis(2, 2))
        assert prob.n_aux == 7
        assert prob.n_constraints == 14
        assert prob.q == 6

    def test_single_point_hand_solution(self):
        # constant basis (d=0): z = (1); target 0 forces P11 = 0, gamma = 0
        pts = points_from([[0.5]], [0.0])
        prob = assemble_basic(pts, MonomialBasis(1, 0))
        sol = solve(prob, TIGHT)
        assert sol.status == "optimal"
        assert abs(sol.objective) <= 1e-6
        assert abs(sol.P[0, 0]) <= 1e-6

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            assemble_basic([], MonomialBasis(2, 2))

    def test_shift_enters_basis(self):
        pts = points_from([[1.0, 2.0]], [1.0])
        shifted = assemble_basic(pts, MonomialBasis(2, 1), shift=[1.0, 2.0])
        # at the shifted origin the basis vector is (1, 0, 0)
        np.testing.assert_allclose(shifted.A[0, 0, 0], 1.0)
        np.testing.assert_allclose(shifted.A[0, 1:, :], 0.0, atol=1e-15)


class TestAssembleWithDivergent:
    def test_counts_and_layout(self):
        rng = np.random.default_rng(1)
        pts = points_from(rng.normal(size=(5, 2)), rng.uniform(0, 3, 5))
        div = rng.normal(size=(4, 2))
        prob = assemble_with_divergent(pts, div, MonomialBasis(2, 2), margin=1e-6)
        # 2m regression + s exclusion + m coupling rows; gammas plus one t
        assert prob.n_constraints == 2 * 5 + 4 + 5
        assert prob.n_aux == 6

    def test_identical_basis_vectors_cannot_separate(self):
        eps = 1e-3
        x = [0.7, -0.2]
        pts = points_from([x], [1.0])
        prob = assemble_with_divergent(pts, np.array([x]), MonomialBasis(2, 2), margin=eps)
        sol = solve(prob, SolverConfig(tol=1e-9, max_iters=4000))
        assert sol.status != "optimal"
        rep = violation_report(prob, sol.P, sol.aux)
        m = 1
        excl, couple = rep.violations[2 * m], rep.violations[2 * m + 1]
        assert excl + couple >= eps - 1e-9
        assert rep.max_violation >= eps / 2 - 1e-9

    def test_empty_divergent_falls_back(self):
        pts = points_from([[0.1, 0.2]], [0.5])
        prob = assemble_with_divergent(pts, np.zeros((0, 2)), MonomialBasis(2, 1))
        assert prob.n_aux == 1
        assert prob.n_constraints == 2

    def test_nonpositive_margin_rejected(self):
        pts = points_from([[0.1, 0.2]], [0.5])
        with pytest.raises(ValueError):
            assemble_with_divergent(pts, np.ones((1, 2)), MonomialBasis(2, 1), margin=0.0)

    def test_separable_instance_separates(self):
        # convergent ring at radius < 1, divergent at radius > 2: the
        # squared-radius quadratic separates them, so the solver must too
        rng = np.random.default_rng(2)
        ang = rng.uniform(0, 2 * math.pi, 40)
        conv = 0.8 * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        div = 2.5 * np.stack([np.cos(ang[:20]), np.sin(ang[:20])], axis=1)
        pts = points_from(conv, np.sum(conv ** 2, axis=1))
        prob = assemble_with_divergent(pts, div, MonomialBasis(2, 2), margin=1e-4)
        sol = solve(prob, SolverConfig(tol=1e-6, max_iters=60_000))
        assert sol.status == "optimal"
        est = extract_estimate(sol, MonomialBasis(2, 2), np.zeros(2), pts)
        assert np.all(est.vstar_values(div) > est.gamma_star)


class TestExtractEstimate:
    def test_zero_gram_is_degenerate(self):
        pts = points_from([[0.0, 0.0], [1.0, 1.0]], [0.0, 1.0])
        est = extract_estimate(dummy_solution(np.zeros((6, 6))), MonomialBasis(2, 2),
                               np.zeros(2), pts)
        assert est.degenerate
        assert est.gamma_star == 0.0
        assert est.contains([5.0, 5.0])   # everything inside: flagged, not an error

    def test_unit_quadratic_value(self):
        # z^T P z = 1 at x where only the constant monomial is active
        basis = MonomialBasis(1, 1)
        P = np.array([[1.0, 0.0], [0.0, 0.0]])
        est = extract_estimate(dummy_solution(P), basis, np.zeros(1),
                               points_from([[0.0]], [9.0]))
        assert est.vstar([0.0]) == pytest.approx(9.0)   # 10^1 - 1

    def test_gamma_star_recomputed_and_attained(self):
        rng = np.random.default_rng(3)
        basis = MonomialBasis(2, 2)
        A = rng.normal(size=(6, 6))
        pts = points_from(rng.normal(size=(20, 2)), rng.uniform(0, 2, 20))
        est = extract_estimate(dummy_solution(A @ A.T / 50), basis, np.zeros(2), pts)
        values = est.vstar_values(np.array([p.x for p in pts]))
        assert est.gamma_star == values.max()
        assert np.all(values <= est.gamma_star)
        assert np.any(values == est.gamma_star)

    def test_solver_provenance_recorded(self):
        pts = points_from([[0.0]], [0.0])
        sol = dummy_solution(np.zeros((2, 2)), status="max_iters")
        est = extract_estimate(sol, MonomialBasis(1, 1), np.zeros(1), pts)
        assert est.status == "max_iters"
        assert est.provenance["solver"]["status"] == "max_iters"


class TestMembership:
    def test_all_convergent_points_inside(self):
        rng = np.random.default_rng(4)
        basis = MonomialBasis(2, 2)
        pts = points_from(rng.normal(size=(15, 2)), rng.uniform(0, 2, 15))
        prob = assemble_basic(pts, basis)
        sol = solve(prob, TIGHT)
        est = extract_estimate(sol, basis, np.zeros(2), pts)
        for p in pts:
            assert membership(est, p.x)

    def test_monotone_transform_invariance(self):
        # comparing V* to gamma* must agree with comparing the raw quadratic
        # value to log10(1 + gamma*)
        rng = np.random.default_rng(5)
        basis = MonomialBasis(2, 2)
        A = rng.normal(size=(6, 6))
        pts = points_from(rng.normal(size=(10, 2)), rng.uniform(0, 2, 10))
        est = extract_estimate(dummy_solution(A @ A.T / 30), basis, np.zeros(2), pts)
        thr = math.log10(1.0 + est.gamma_star)
        for x in rng.normal(size=(200, 2)):
            direct = est.contains(x)
            via_quad = est.quad_values(x[None, :])[0] <= thr
            assert direct == via_quad

    def test_fixture_membership_at_origin(self):
        # a polynomial with no constant term gives V*(0) = 0, which exceeds
        # any negative level
        basis = MonomialBasis(4, 2)
        P = gram_from_coefficients([((1, 0, 0, 0), 7.6324e-4)], basis)
        est = LyapunovEstimate(basis=basis, gram=P, shift=np.zeros(4),
                               gamma_star=-2.0533e-3)
        assert est.vstar(np.zeros(4)) == 0.0
        assert not membership(est, np.zeros(4))


class TestSoftDivergentMode:
    def test_conflicting_point_dropped(self):
        rng = np.random.default_rng(6)
        ang = rng.uniform(0, 2 * math.pi, 30)
        conv = 0.8 * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        pts = points_from(conv, np.sum(conv ** 2, axis=1))
        div = np.vstack([2.5 * np.stack([np.cos(ang[:10]), np.sin(ang[:10])], axis=1),
                         conv[:1]])     # one divergent IC duplicates a convergent one
        sol, kept, n_excluded = solve_divergent_soft(
            pts, div, MonomialBasis(2, 2), margin=1e-4,
            config=SolverConfig(tol=1e-5, max_iters=40_000))
        assert n_excluded >= 1
        assert kept.shape[0] <= div.shape[0] - 1
        assert sol.status == "optimal"


class TestLevelSetGrid:
    def _even_estimate(self):
        # purely quadratic form: even polynomial, symmetric under x -> -x
        basis = MonomialBasis(2, 1)
        P = np.diag([0.0, 1.0, 2.0])
        return LyapunovEstimate(basis=basis, gram=P, shift=np.zeros(2), gamma_star=1.0)

    def test_single_cell(self):
        est = self._even_estimate()
        grid = level_set_grid(est, {}, (0, 1), ((0.3, 0.3), (0.4, 0.4)), (1, 1))
        assert grid.vstar.shape == (1, 1)
        assert grid.vstar[0, 0] == pytest.approx(est.vstar([0.3, 0.4]))

    def test_even_symmetry(self):
        est = self._even_estimate()
        grid = level_set_grid(est, {}, (0, 1), ((-1, 1), (-1, 1)), (41, 41))
        np.testing.assert_allclose(grid.vstar, grid.vstar[::-1, ::-1], rtol=1e-12)
        np.testing.assert_array_equal(grid.member, grid.member[::-1, ::-1])

    def test_axis_overlap_rejected(self):
        est = self._even_estimate()
        with pytest.raises(ValueError):
            level_set_grid(est, {0: 1.0}, (0, 1), ((-1, 1), (-1, 1)), (5, 5))

    def test_axes_must_cover(self):
        basis = MonomialBasis(3, 1)
        est = LyapunovEstimate(basis=basis, gram=np.zeros((4, 4)),
                               shift=np.zeros(3), gamma_star=0.0)
        with pytest.raises(ValueError):
            level_set_grid(est, {}, (0, 1), ((-1, 1), (-1, 1)), (5, 5))


class TestHistogram:
    def _estimate(self):
        basis = MonomialBasis(2, 1)
        return LyapunovEstimate(basis=basis, gram=np.diag([0.0, 1.0, 1.0]),
                                shift=np.zeros(2), gamma_star=0.5)

    def test_edges_aligned_to_bin_width(self):
        est = self._estimate()
        rng = np.random.default_rng(7)
        hist = vstar_histogram(est, rng.normal(size=(50, 2)) * 0.3,
                               rng.normal(size=(50, 2)), 5e-5)
        ratio = hist.edges / 5e-5
        np.testing.assert_allclose(ratio, np.round(ratio), atol=1e-9)
        assert hist.convergent_counts.sum() == 50
        assert hist.divergent_counts.sum() == 50

    def test_empty_divergent(self):
        est = self._estimate()
        hist = vstar_histogram(est, np.array([[0.1, 0.1]]), np.zeros((0, 2)), 0.1)
        assert hist.outside_count == 0
        assert hist.divergent_counts.sum() == 0

    def test_outside_count(self):
        est = self._estimate()
        inside = np.array([[0.0, 0.0]])            # V* = 0 <= 0.5
        outside = np.array([[3.0, 3.0], [2.0, 2.0]])
        hist = vstar_histogram(est, inside, np.vstack([inside, outside]), 1.0)
        assert hist.outside_count == 2

    def test_bad_width(self):
        with pytest.raises(ValueError):
            vstar_histogram(self._estimate(), np.zeros((1, 2)), np.zeros((0, 2)), 0.0)


class TestValidate:
    def test_empty_region_has_no_false_in(self):
        basis = MonomialBasis(1, 1)
        est = LyapunovEstimate(basis=basis, gram=np.zeros((2, 2)), shift=np.zeros(1),
                               gamma_star=-np.inf, degenerate=True)
        sys_ = OdeSystem("decay", 1, lambda x: (-x[0],))
        res = validate(est, sys_, StateBox.from_pairs([[-1, 1]]), 50, seed=0,
                       cfg=IntegratorConfig(dt=0.01, run_time=1.0),
                       limits=StateBox.from_pairs([[-5, 5]]))
        assert res.false_in == 0
        assert res.true_in == 0
        assert res.total == 50

    def test_zero_count(self):
        basis = MonomialBasis(1, 1)
        est = LyapunovEstimate(basis=basis, gram=np.zeros((2, 2)), shift=np.zeros(1),
                               gamma_star=0.0)
        sys_ = OdeSystem("decay", 1, lambda x: (-x[0],))
        res = validate(est, sys_, StateBox.from_pairs([[-1, 1]]), 0, seed=0,
                       cfg=IntegratorConfig(dt=0.01, run_time=1.0),
                       limits=StateBox.from_pairs([[-5, 5]]))
        assert res.total == 0

    def test_perfect_classifier_on_decay(self):
        # x' = -x converges from everywhere inside the limit box; a huge
        # gamma* accepts everything, so the confusion matrix is all true_in
        basis = MonomialBasis(1, 1)
        est = LyapunovEstimate(basis=basis, gram=np.zeros((2, 2)), shift=np.zeros(1),
                               gamma_star=1.0)
        sys_ = OdeSystem("decay", 1, lambda x: (-x[0],))
        res = validate(est, sys_, StateBox.from_pairs([[-1, 1]]), 40, seed=1,
                       cfg=IntegratorConfig(dt=0.01, run_time=1.0),
                       limits=StateBox.from_pairs([[-5, 5]]))
        assert res.true_in == 40
        assert res.accuracy == 1.0


class TestEstimateSerialization:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        basis = MonomialBasis(2, 2)
        pts = points_from(rng.normal(size=(5, 2)), rng.uniform(0, 1, 5))
        sol = solve(assemble_basic(pts, basis), SolverConfig(tol=1e-7, max_iters=50_000))
        est = extract_estimate(sol, basis, np.zeros(2), pts)
        data = est.to_json_dict()
        again = LyapunovEstimate.from_json_dict(data)
        assert again.gamma_star == est.gamma_star
        np.testing.assert_array_equal(again.gram, est.gram)
        assert again.basis == est.basis
        x = rng.normal(size=2)
        assert again.vstar(x) == est.vstar(x)
        assert "eigenvalues" in data

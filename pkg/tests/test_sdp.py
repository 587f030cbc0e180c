"""Solver regression suite: tiny SDPs with hand-derived optima, diagnostics, I/O."""

import numpy as np
import pytest

from roakit.numerics import MonomialBasis, symmetric_eigenvalues
from roakit.sdp import (
    STATUS_INFEASIBLE,
    STATUS_MAX_ITERS,
    STATUS_OPTIMAL,
    SdpProblem,
    SdpStructureError,
    SdpSolution,
    SolverConfig,
    solve,
    violation_report,
)


def make_problem(q, n_aux, C, g, constraints):
    A = np.asarray([a for a, _, _ in constraints], dtype=float)
    B = np.asarray([b for _, b, _ in constraints], dtype=float).reshape(len(constraints), n_aux)
    c = np.asarray([v for _, _, v in constraints], dtype=float)
    return SdpProblem(q=q, n_aux=n_aux, obj_matrix=np.asarray(C, dtype=float),
                      obj_aux=np.asarray(g, dtype=float), A=A, B=B, c=c)


TIGHT = SolverConfig(tol=1e-9, max_iters=200_000)

E11 = [[1.0, 0.0], [0.0, 0.0]]
E22 = [[0.0, 0.0], [0.0, 1.0]]
OFF = [[0.0, 1.0], [1.0, 0.0]]
I2 = np.eye(2).tolist()
Z2 = np.zeros((2, 2)).tolist()

# Each entry: (name, problem factory, hand-derived optimal objective).
# Derivations are one-liners: all problems are separable or rank-one.
FEASIBLE_SUITE = [
    # min x s.t. x >= 1 on a 1x1 PSD block: x* = 1
    ("scalar_bound", lambda: make_problem(1, 0, [[1.0]], [], [([[1.0]], [], 1.0)]), 1.0),
    # min tr(P) s.t. <I,P> >= 2: any PSD P with trace 2, objective 2
    ("trace_floor", lambda: make_problem(2, 0, I2, [], [(I2, [], 2.0)]), 2.0),
    # max gamma s.t. P11 - 0 >= gamma, 0 - P11 >= gamma; optimum gamma = 0 at P11 = 0
    ("l1_one_point_zero", lambda: make_problem(1, 1, [[0.0]], [-1.0],
        [([[1.0]], [-1.0], 0.0), ([[-1.0]], [-1.0], 0.0)]), 0.0),
    # same, target 2: gamma = -|P11 - 2| maximized at P11 = 2
    ("l1_one_point_two", lambda: make_problem(1, 1, [[0.0]], [-1.0],
        [([[1.0]], [-1.0], 2.0), ([[-1.0]], [-1.0], -2.0)]), 0.0),
    # one basis vector, two targets 0 and 1: min |P| + |P-1| = 1 on P >= 0
    ("l1_conflicting_targets", lambda: make_problem(1, 2, [[0.0]], [-1.0, -1.0],
        [([[1.0]], [-1.0, 0.0], 0.0), ([[-1.0]], [-1.0, 0.0], 0.0),
         ([[1.0]], [0.0, -1.0], 1.0), ([[-1.0]], [0.0, -1.0], -1.0)]), 1.0),
    # separable diagonal floors: 1*1 + 2*1 = 3
    ("weighted_diag", lambda: make_problem(2, 0, [[1.0, 0.0], [0.0, 2.0]], [],
        [(E11, [], 1.0), (E22, [], 1.0)]), 3.0),
    # min tr s.t. 2*P12 >= 2: PSD forces P11*P22 >= 1, trace >= 2 at all-ones
    ("offdiag_floor_trace", lambda: make_problem(2, 0, I2, [], [(OFF, [], 2.0)]), 2.0),
    # min P11 + P22 - 2*P12 s.t. P12 >= 1: AM-GM gives exactly 0
    ("offdiag_floor_gap", lambda: make_problem(2, 0, [[1.0, -1.0], [-1.0, 1.0]], [],
        [(OFF, [], 2.0)]), 0.0),
    # max 2*P12 s.t. tr <= 2: P12 <= sqrt(P11*P22) <= 1, objective -2
    ("offdiag_ceiling", lambda: make_problem(2, 0, [[0.0, -1.0], [-1.0, 0.0]], [],
        [((-np.eye(2)).tolist(), [], -2.0)]), -2.0),
    # aux in the objective: min x + tr(P) s.t. x >= 5, P11 >= 1 gives 6
    ("aux_objective", lambda: make_problem(2, 1, I2, [1.0],
        [(Z2, [1.0], 5.0), (E11, [0.0], 1.0)]), 6.0),
]

# (name, factory, analytic lower bound on the best achievable max violation)
INFEASIBLE_SUITE = [
    # x >= 1 and x <= 0: the midpoint 0.5 minimizes the worst violation
    ("contradictory_scalar", lambda: make_problem(1, 0, [[0.0]], [],
        [([[1.0]], [], 1.0), ([[-1.0]], [], 0.0)]), 0.5),
    # P11 >= 1 and P11 <= 0.2: gap 0.8 split evenly
    ("contradictory_entry", lambda: make_problem(2, 0, Z2, [],
        [(E11, [], 1.0), ((-np.asarray(E11)).tolist(), [], -0.2)]), 0.4),
]


class TestRegressionSuite:
    @pytest.mark.parametrize("name,factory,expected", FEASIBLE_SUITE,
                             ids=[t[0] for t in FEASIBLE_SUITE])
    def test_known_optimum(self, name, factory, expected):
        sol = solve(factory(), TIGHT)
        assert sol.status == STATUS_OPTIMAL
        assert abs(sol.objective - expected) <= 1e-6
        assert sol.max_violation <= 1e-9
        assert symmetric_eigenvalues(sol.P)[0] >= -1e-9

    @pytest.mark.parametrize("name,factory,bound", INFEASIBLE_SUITE,
                             ids=[t[0] for t in INFEASIBLE_SUITE])
    def test_infeasible_reported(self, name, factory, bound):
        sol = solve(factory(), SolverConfig(tol=1e-9, max_iters=5_000))
        assert sol.status in (STATUS_INFEASIBLE, STATUS_MAX_ITERS)
        assert sol.max_violation >= bound - 1e-6


class TestSolverContracts:
    def test_deterministic(self):
        _, factory, _ = FEASIBLE_SUITE[4]
        a = solve(factory(), TIGHT)
        b = solve(factory(), TIGHT)
        np.testing.assert_array_equal(a.P, b.P)
        np.testing.assert_array_equal(a.aux, b.aux)
        assert a.iterations == b.iterations
        assert a.status == b.status

    def test_more_iterations_never_hurt_feasibility(self):
        rng = np.random.default_rng(5)
        basis = MonomialBasis(2, 2)
        X = rng.uniform(-1, 1, size=(30, 2))
        y = np.log10(1 + np.sum(X ** 2, axis=1))
        Z = basis.matrix(X)
        cons = []
        for i in range(30):
            b = np.zeros(30)
            b[i] = -1.0
            zz = np.outer(Z[i], Z[i])
            cons.append((zz, b.copy(), y[i]))
            cons.append((-zz, b, -y[i]))
        g = -np.ones(30)
        prob = make_problem(6, 30, np.zeros((6, 6)), g, cons)
        short = solve(prob, SolverConfig(tol=1e-12, max_iters=100))
        long = solve(prob, SolverConfig(tol=1e-12, max_iters=200))
        assert long.max_violation <= short.max_violation + 1e-15

    def test_returned_matrix_symmetric(self):
        sol = solve(FEASIBLE_SUITE[6][1](), TIGHT)
        np.testing.assert_array_equal(sol.P, sol.P.T)

    def test_structurally_empty(self):
        with pytest.raises(SdpStructureError):
            SdpProblem(q=1, n_aux=0, obj_matrix=[[1.0]], obj_aux=[],
                       A=np.zeros((0, 1, 1)), B=np.zeros((0, 0)), c=np.zeros(0))

    def test_unused_aux_rejected(self):
        with pytest.raises(SdpStructureError):
            make_problem(1, 1, [[0.0]], [1.0], [([[1.0]], [0.0], 1.0)])

    def test_asymmetric_constraint_rejected(self):
        with pytest.raises(SdpStructureError):
            make_problem(2, 0, Z2, [], [([[0.0, 1.0], [0.0, 0.0]], [], 1.0)])


class TestViolationReport:
    def test_feasible_point_all_zero(self):
        prob = make_problem(2, 0, I2, [], [(E11, [], 1.0), (E22, [], 0.5)])
        rep = violation_report(prob, np.diag([2.0, 0.5]))
        np.testing.assert_array_equal(rep.violations, [0.0, 0.0])
        assert rep.n_violated == 0
        assert rep.max_violation == 0.0

    def test_scalar_violation_of_one(self):
        prob = make_problem(1, 0, [[0.0]], [], [([[1.0]], [], 1.0)])
        rep = violation_report(prob, [[0.0]])
        assert rep.violations[0] == 1.0
        assert rep.n_violated == 1

    def test_count_matches_construction(self):
        # 7 floors, a point chosen to break exactly 3 of them
        cons = [(E11, [], float(k)) for k in range(7)]
        prob = make_problem(2, 0, Z2, [], cons)
        rep = violation_report(prob, np.diag([3.5, 0.0]))
        assert rep.n_violated == 3
        assert rep.max_violation == pytest.approx(2.5)

    def test_dimension_mismatch(self):
        prob = make_problem(2, 0, Z2, [], [(E11, [], 1.0)])
        with pytest.raises(ValueError):
            violation_report(prob, np.eye(3))
        with pytest.raises(ValueError):
            violation_report(prob, np.eye(2), aux=[1.0])


class TestSerialization:
    def test_problem_round_trip(self, tmp_path):
        prob = FEASIBLE_SUITE[9][1]()
        path = tmp_path / "problem.json"
        prob.save(path)
        again = SdpProblem.load(path)
        np.testing.assert_array_equal(again.A, prob.A)
        np.testing.assert_array_equal(again.B, prob.B)
        np.testing.assert_array_equal(again.c, prob.c)
        np.testing.assert_array_equal(again.obj_matrix, prob.obj_matrix)
        np.testing.assert_array_equal(again.obj_aux, prob.obj_aux)

    def test_solution_file_includes_eigenvalues(self, tmp_path):
        import json

        sol = solve(FEASIBLE_SUITE[1][1](), TIGHT)
        path = tmp_path / "solution.json"
        sol.save(path)
        data = json.loads(path.read_text())
        assert data["status"] == STATUS_OPTIMAL
        np.testing.assert_allclose(
            data["eigenvalues"], symmetric_eigenvalues(sol.P), atol=1e-15
        )
        again = SdpSolution.from_json_dict(data)
        np.testing.assert_array_equal(again.P, sol.P)

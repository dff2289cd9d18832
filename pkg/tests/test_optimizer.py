"""Admission-control optimizer: evaluation semantics, solver pipeline,
reproducibility, constraint handling."""
import math

import numpy as np
import pytest

from conftest import TABLE5_ROWS, table5_problem
from retrialq.optimizer import (
    GAP,
    AdmissionProblem,
    evaluate,
    solve,
)


def test_evaluate_reproduces_reference_throughputs():
    for lam_minus, q, th_ref in TABLE5_ROWS:
        ev = evaluate(table5_problem(lam_minus), q)
        assert ev.throughput == pytest.approx(th_ref, abs=5e-4)


def test_evaluate_zero_admission_renewal_rate():
    problem = AdmissionProblem(2.0, 1.0, 4, 1.5, 3, 3.0, 20.0, ordering=False)
    ev = evaluate(problem, (0.0, 0.0, 0.0, 0.0))
    b = 4 / 1.5
    assert ev.throughput == pytest.approx(1.0 / (1 + b), rel=1e-12)
    assert ev.mean_orbit == 0.0
    assert ev.stable and ev.feasible


def test_evaluate_marks_unstable_points():
    # the reference optimum for the smallest arrival rate is an unstable point:
    # values are analytic continuations flagged as such
    ev = evaluate(table5_problem(0.1), TABLE5_ROWS[0][1])
    assert not ev.stable and not ev.feasible
    assert ev.throughput == pytest.approx(0.0788, abs=5e-4)


def test_evaluate_ordering_flag():
    problem = table5_problem(1.0)
    ev = evaluate(problem, (0.2, 0.3, 0.1, 0.05))
    assert not ev.ordering_ok and not ev.feasible
    ev2 = evaluate(problem, (0.3, 0.2, 0.1, 0.05))
    assert ev2.ordering_ok


def test_evaluate_rejects_out_of_box():
    with pytest.raises(ValueError):
        evaluate(table5_problem(1.0), (1.2, 0.0, 0.0, 0.0))


def test_solver_matches_brute_force_grid():
    # tiny event rates make the objective nearly flat; the optimum sits at the
    # all-ones corner and a full grid scan certifies it
    problem = AdmissionProblem(0.01, 1.0, 2, 2.0, 2, 3.0, math.inf, ordering=False)
    grid = np.linspace(0.0, 1.0, 17)
    best = -1.0
    for q1 in grid:
        for q2 in grid:
            for q3 in grid:
                for q4 in grid:
                    ev = evaluate(problem, (q1, q2, q3, q4))
                    if ev.feasible and ev.throughput > best:
                        best = ev.throughput
    sol = solve(problem, restarts=16, seed=2)
    assert sol.feasible
    assert sol.throughput >= best - 1e-6
    assert abs(sol.throughput - best) < 1e-6


def test_solver_reproducible_bitwise():
    problem = table5_problem(1.0)
    a = solve(problem, restarts=8, seed=5)
    b = solve(problem, restarts=8, seed=5)
    assert a == b


def test_solution_revalidates_and_respects_constraints():
    problem = table5_problem(1.0)
    sol = solve(problem, restarts=16, seed=9)
    assert sol.feasible
    ev = evaluate(problem, sol.q)
    assert ev.feasible
    assert ev.throughput == pytest.approx(sol.throughput, abs=1e-12)
    assert ev.mean_orbit <= 20.0 + 1e-9
    assert sol.q[0] - sol.q[1] >= GAP - 1e-15
    assert sol.q[2] - sol.q[3] >= GAP - 1e-15


def test_bound_monotonicity():
    solutions = [solve(AdmissionProblem(0.5, 1.0, 2, 2.0, 2, 3.0, bound, True),
                       restarts=12, seed=3)
                 for bound in (1.0, 5.0, 20.0)]
    assert all(s.feasible for s in solutions)
    assert solutions[0].throughput <= solutions[1].throughput + 1e-9
    assert solutions[1].throughput <= solutions[2].throughput + 1e-9


def test_tight_bound_returns_near_zero_admission():
    problem = AdmissionProblem(2.0, 1.0, 4, 1.5, 3, 3.0, 1e-6, ordering=True)
    sol = solve(problem, restarts=8, seed=1)
    assert sol.feasible
    assert sol.mean_orbit <= 1e-6 + 1e-9
    # throughput collapses to the no-admission renewal rate
    assert sol.throughput == pytest.approx(1.0 / (1 + 4 / 1.5), abs=1e-3)


def test_problem_json_round_trip():
    problem = table5_problem(1.0)
    assert AdmissionProblem.from_dict(problem.to_dict()) == problem
    obj = {"lambda_plus": 2.0, "lambda_minus": 1.0, "M": 4, "mu": 1.5,
           "N": 3, "alpha": 3.0, "ex_bound": 20.0, "ordering": True}
    assert AdmissionProblem.from_dict(obj) == problem


def test_solution_mean_orbit_check_helper():
    from retrialq.optimizer import check_mean_orbit
    problem = table5_problem(1.0)
    sol = solve(problem, restarts=8, seed=5)
    assert check_mean_orbit(problem, sol.q) == pytest.approx(sol.mean_orbit, rel=1e-12)


def test_solve_beats_reference_value_smallest_rate():
    # the reference optimum for lambda_minus = 0.1 is far from optimal: the
    # feasible region allows much higher throughput
    sol = solve(table5_problem(0.1), restarts=16, seed=6)
    assert sol.feasible
    assert sol.throughput >= 0.0788 - 1e-3


@pytest.mark.xfail(strict=True, reason=(
    "along the stability boundary the throughput is constant at "
    "lm(1+c)/((1+lm b)+lm b c) with c = alpha/(1-alpha), which evaluates to "
    "0.326939 for this row; the reference value 0.3289 sits outside the closure of the "
    "feasible region, so no constrained optimizer can reach 0.3289 - 1e-3"))
def test_solve_reference_bar_lambda_minus_2():
    sol = solve(table5_problem(2.0), restarts=32, seed=6)
    assert sol.throughput >= 0.3289 - 1e-3


def test_solved_optimum_is_certifiable_by_chain():
    # the solved optimum (unlike the rounding-degraded reference one) is
    # comfortably inside the stable region: the truncated chain certifies
    # all but ~1e-8 of its mass below orbit size 400, and the departure-epoch
    # PGF coefficients agree with the chain to 1e-8
    import numpy as np

    from retrialq.analytic import departure_orbit_pgf, stability_margin
    from retrialq.oracles import TruncationConfig, embedded_stationary_truncated, pgf_to_pmf
    problem = table5_problem(1.0)
    sol = solve(problem, restarts=24, seed=3)
    model = problem.model(sol.q)
    assert stability_margin(model) > 0
    res = embedded_stationary_truncated(model, TruncationConfig(max_orbit=400, tail_tolerance=1e-6))
    assert res.boundary_mass < 1e-8
    coeffs = pgf_to_pmf(lambda z: departure_orbit_pgf(model, z), 400, 0.985)
    assert np.max(np.abs(res.pmf - coeffs)) < 1e-8

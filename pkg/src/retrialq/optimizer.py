"""Constrained admission control: choose joining probabilities q = (q1..q4)
maximizing throughput subject to a mean-orbit bound, stability, box
constraints and optional ordering constraints.

The event-dependent rates are lambda_plus * q with lambda_minus fixed, and
the objective and constraints are the closed-form stationary quantities, so
a single evaluation costs microseconds.  The solver is a deterministic
pipeline: Latin-hypercube seeding, penalty-augmented Nelder-Mead per seed
with penalty weight escalating tenfold per round of restarts, then a
feasible-only coordinate pattern search polish.  Strict inequalities are
implemented as closed constraints with a 1e-9 gap so the feasible set is
closed; the effect on optima is below reporting precision.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .analytic import (
    ModelSpec,
    RateProfile,
    formula_metrics,
    moments_and_throughput,
    stability_margin,
    transform_throughput,
)
from .dists import Erlang

GAP = 1e-9          # closed-constraint margin for strict inequalities
_PENALTY_BASE = 1e3
_ROUND = 8          # restarts per penalty-escalation round


class FormulaIntegrityError(RuntimeError):
    """Closed-form and transform-based throughput disagreed on a reported optimum."""


@dataclass(frozen=True)
class AdmissionProblem:
    lambda_plus: float
    lambda_minus: float
    service_phases: int
    service_rate: float
    seek_phases: int
    seek_rate: float
    mean_orbit_bound: float
    ordering: bool = True

    def __post_init__(self):
        for name in ("lambda_plus", "lambda_minus", "service_rate", "seek_rate"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if not self.mean_orbit_bound > 0.0 and not math.isinf(self.mean_orbit_bound):
            raise ValueError("mean_orbit_bound must be positive (may be inf)")

    def model(self, q) -> ModelSpec:
        q1, q2, q3, q4 = (float(x) for x in q)
        lp = self.lambda_plus
        return ModelSpec(
            rates=RateProfile(self.lambda_minus, lp * q1, lp * q2, lp * q3, lp * q4),
            service=Erlang(self.service_phases, self.service_rate),
            seek=Erlang(self.seek_phases, self.seek_rate),
        )

    def to_dict(self) -> dict:
        return {
            "lambda_plus": self.lambda_plus,
            "lambda_minus": self.lambda_minus,
            "M": self.service_phases,
            "mu": self.service_rate,
            "N": self.seek_phases,
            "alpha": self.seek_rate,
            "ex_bound": self.mean_orbit_bound,
            "ordering": self.ordering,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "AdmissionProblem":
        return cls(
            lambda_plus=float(obj["lambda_plus"]),
            lambda_minus=float(obj["lambda_minus"]),
            service_phases=int(obj["M"]),
            service_rate=float(obj["mu"]),
            seek_phases=int(obj["N"]),
            seek_rate=float(obj["alpha"]),
            mean_orbit_bound=float(obj["ex_bound"]),
            ordering=bool(obj.get("ordering", True)),
        )


@dataclass(frozen=True)
class EvalResult:
    throughput: float
    mean_orbit: float
    margin: float
    stable: bool
    ordering_ok: bool
    feasible: bool


@dataclass(frozen=True)
class AdmissionSolution:
    q: tuple
    throughput: float
    mean_orbit: float
    feasible: bool
    restarts_used: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "q": list(self.q),
            "TH": self.throughput,
            "EX": self.mean_orbit,
            "feasible": self.feasible,
            "restarts_used": self.restarts_used,
            "seed": self.seed,
        }


def _ordering_ok(problem: AdmissionProblem, q) -> bool:
    if not problem.ordering:
        return True
    return q[0] - q[1] >= GAP - 1e-15 and q[2] - q[3] >= GAP - 1e-15


def evaluate(problem: AdmissionProblem, q) -> EvalResult:
    """Map q to the model and report throughput, mean orbit size, stability
    margin and feasibility.  Infeasibility is data, not an error: at unstable
    points the values are raw formula continuations with no probabilistic
    meaning and `stable` is False."""
    q = tuple(float(x) for x in q)
    if any(x < -1e-12 or x > 1.0 + 1e-12 for x in q):
        raise ValueError(f"q must lie in [0,1]^4, got {q}")
    model = problem.model(np.clip(q, 0.0, 1.0))
    margin = stability_margin(model)
    th, ex = formula_metrics(model)
    stable = margin >= GAP
    ordering_ok = _ordering_ok(problem, q)
    feasible = (stable and ordering_ok
                and ex <= problem.mean_orbit_bound + 1e-9
                and all(0.0 <= x <= 1.0 for x in q))
    return EvalResult(th, ex, margin, stable, ordering_ok, feasible)


def _project(problem: AdmissionProblem, q: np.ndarray) -> np.ndarray:
    """Clip to the box and, when ordering is on, push (q2, q4) under their caps."""
    q = np.clip(q, 0.0, 1.0)
    if problem.ordering:
        q[0] = max(q[0], GAP)
        q[1] = min(q[1], q[0] - GAP)
        q[2] = max(q[2], GAP)
        q[3] = min(q[3], q[2] - GAP)
    return q


def _latin_hypercube(rng: np.random.Generator, n: int) -> np.ndarray:
    cols = []
    for _ in range(4):
        cols.append((rng.permutation(n) + rng.random(n)) / n)
    return np.column_stack(cols)


def _penalized_objective(problem: AdmissionProblem, weight: float):
    bound = problem.mean_orbit_bound
    scale = max(1.0, bound) if math.isfinite(bound) else 1.0

    def objective(x: np.ndarray) -> float:
        q = np.clip(x, 0.0, 1.0)
        pen = float(((x - q) ** 2).sum())
        if problem.ordering:
            pen += max(0.0, q[1] - q[0] + GAP) ** 2 + max(0.0, q[3] - q[2] + GAP) ** 2
        model = problem.model(q)
        margin = stability_margin(model)
        if margin < GAP:
            return 2.0 + weight * (pen + (GAP - margin) ** 2)
        th, ex = formula_metrics(model)
        if math.isfinite(bound) and ex > bound:
            if not math.isfinite(ex):
                return 2.0 + weight * (pen + 1.0)
            pen += ((ex - bound) / scale) ** 2
        return -th + weight * pen

    return objective


def solve(problem: AdmissionProblem, restarts: int = 32, seed: int = 0) -> AdmissionSolution:
    """Best feasible admission vector found by the restart pipeline; the result
    is deterministic in (problem, restarts, seed) and never an infeasible point."""
    if restarts < 1:
        raise ValueError("need at least one restart")
    rng = np.random.default_rng([seed, 0x5BF03635])
    seeds = list(_latin_hypercube(rng, restarts))
    # anchors: the near-empty corner is feasible whenever anything is
    seeds[0] = np.array([GAP, 0.0, GAP, 0.0])
    if restarts >= 2:
        seeds[1] = np.array([1.0, 0.0, 1.0, 0.0])

    best_q = None
    best_th = -math.inf
    for i, raw in enumerate(seeds):
        weight = _PENALTY_BASE * 10.0 ** (i // _ROUND)
        x0 = _project(problem, np.asarray(raw, dtype=float))
        res = optimize.minimize(
            _penalized_objective(problem, weight), x0, method="Nelder-Mead",
            options={"maxiter": 800, "maxfev": 1200, "xatol": 1e-7, "fatol": 1e-14})
        for cand in (x0, np.clip(res.x, 0.0, 1.0), _project(problem, res.x.copy())):
            ev = evaluate(problem, cand)
            if ev.feasible and ev.throughput > best_th:
                best_th = ev.throughput
                best_q = np.array(cand, dtype=float)

    if best_q is None:
        return AdmissionSolution(q=(math.nan,) * 4, throughput=math.nan, mean_orbit=math.nan,
                                 feasible=False, restarts_used=restarts, seed=seed)

    best_q, best_th = _pattern_search(problem, best_q, best_th)
    final = evaluate(problem, best_q)
    if not final.feasible:
        raise FormulaIntegrityError("polished incumbent failed re-validation")
    th_transforms = transform_throughput(problem.model(best_q))
    if abs(final.throughput - th_transforms) > 1e-8:
        raise FormulaIntegrityError(
            f"closed-form throughput {final.throughput!r} and transform sum "
            f"{th_transforms!r} disagree beyond 1e-8")
    return AdmissionSolution(
        q=tuple(float(x) for x in best_q),
        throughput=final.throughput,
        mean_orbit=final.mean_orbit,
        feasible=True,
        restarts_used=restarts,
        seed=seed,
    )


def _pattern_search(problem: AdmissionProblem, q: np.ndarray, th: float) -> tuple:
    """Feasible-only coordinate descent, step halved down to 1e-6 on q."""
    step = 0.05
    while step >= 1e-6:
        improved = False
        for dim in range(4):
            for sign in (1.0, -1.0):
                cand = q.copy()
                cand[dim] += sign * step
                if cand[dim] < -1e-12 or cand[dim] > 1.0 + 1e-12:
                    continue
                cand = _project(problem, cand)
                ev = evaluate(problem, cand)
                if ev.feasible and ev.throughput > th + 1e-15:
                    q, th = cand, ev.throughput
                    improved = True
        if not improved:
            step *= 0.5
    return q, th


def check_mean_orbit(problem: AdmissionProblem, q) -> float:
    """Mean orbit size at q for a stable q (raises when unstable)."""
    return moments_and_throughput(problem.model(q)).mean_orbit

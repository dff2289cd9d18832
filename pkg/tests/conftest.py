"""Shared builders for the test suite: reference models, the randomized
stable-model corpus, and small numeric oracles (polynomial-fit derivatives)."""
from __future__ import annotations

import numpy as np
import pytest

from retrialq.analytic import ModelSpec, RateProfile, formula_metrics, stability_margin
from retrialq.dists import Deterministic, Erlang, Exponential, HyperExponential
from retrialq.optimizer import AdmissionProblem

# Reference joining probabilities and throughput targets the package must
# reproduce; several rows sit at (marginally) infeasible parameter points,
# which the tests account for explicitly.
TABLE5_ROWS = [
    (0.1, (0.0001, 0.0001, 0.3148, 0.1431), 0.0788),
    (1.0, (0.0547, 0.0287, 0.1719, 0.033), 0.3082),
    (2.0, (0.0727, 0.027, 0.0, 0.0), 0.3289),
    (4.0, (0.0094, 0.0048, 0.0962, 0.0271), 0.3452),
    (6.1, (0.0006, 0.0003, 0.2856, 0.0687), 0.354),
]
TABLE6_ROWS = [  # N, q, TH
    (1, (1.0, 0.0, 0.7199, 0.0), 0.328),
    (2, (0.4614, 0.1678, 0.6339, 0.1532), 0.3221),
    (30, (0.0001, 0.0, 0.3269, 0.1533), 0.2727),
]
TABLE7_ROWS = [  # M, q, TH
    (1, (0.4755, 0.4755, 1.0, 0.0), 0.6702),
    (2, (0.4259, 0.0974, 0.7478, 0.6007), 0.4958),
    (15, (0.0104, 0.0053, 0.4011, 0.0143), 0.0936),
]


def table5_problem(lambda_minus: float) -> AdmissionProblem:
    return AdmissionProblem(2.0, lambda_minus, 4, 1.5, 3, 3.0, 20.0, True)


def table6_problem(n_phases: int) -> AdmissionProblem:
    return AdmissionProblem(0.5, 1.0, 4, 1.5, n_phases, 3.0, 20.0, True)


def table7_problem(m_phases: int) -> AdmissionProblem:
    return AdmissionProblem(0.5, 1.0, m_phases, 1.5, 4, 3.0, 20.0, True)


def event_independent_model(lam=0.5, service=None, seek=None) -> ModelSpec:
    service = service or Exponential(2.0)
    seek = seek or Exponential(3.0)
    return ModelSpec(RateProfile(lam, lam, lam, lam, lam), service, seek)


def sweep_model(lambda_minus, M=2, N=2, alpha=3.5, mu=2.5, lam_plus=0.3,
                q=(0.5, 0.4, 0.6, 0.4)) -> ModelSpec:
    rates = RateProfile(lambda_minus, lam_plus * q[0], lam_plus * q[1],
                        lam_plus * q[2], lam_plus * q[3])
    return ModelSpec(rates, Erlang(M, mu), Erlang(N, alpha))


def reference_model() -> ModelSpec:
    """A comfortably stable event-dependent model used across the suite."""
    return ModelSpec(RateProfile(0.8, 0.5, 0.3, 0.6, 0.25), Erlang(2, 2.5), Erlang(2, 4.0))


def random_dist(rng: np.random.Generator):
    kind = rng.integers(0, 4)
    mean = float(rng.uniform(0.4, 2.0))
    if kind == 0:
        return Exponential(1.0 / mean)
    if kind == 1:
        phases = int(rng.integers(1, 6))
        return Erlang(phases, phases / mean)
    if kind == 2:
        return Deterministic(mean)
    # two-phase hyperexponential with balanced means and cv^2 in (1, 4]
    cv2 = float(rng.uniform(1.2, 4.0))
    p = 0.5 * (1.0 + np.sqrt((cv2 - 1.0) / (cv2 + 1.0)))
    r1 = 2.0 * p / mean
    r2 = 2.0 * (1.0 - p) / mean
    return HyperExponential((p, 1.0 - p), (r1, r2))


def random_rates(rng: np.random.Generator, service) -> RateProfile:
    b = service.raw_moment(1)
    cap = 0.8 / max(b, 1e-9)
    return RateProfile(
        lambda_minus=float(rng.uniform(0.2, 1.5)),
        lambda_e=float(rng.uniform(0.0, cap)),
        lambda_e_plus=float(rng.uniform(0.0, cap)),
        lambda_r=float(rng.uniform(0.0, cap)),
        lambda_r_plus=float(rng.uniform(0.0, cap)),
    )


def random_stable_model(rng: np.random.Generator, min_margin=0.05, max_util=0.85,
                        max_orbit_mean=25.0) -> ModelSpec:
    for _ in range(10_000):
        service = random_dist(rng)
        seek = random_dist(rng)
        model = ModelSpec(random_rates(rng, service), service, seek)
        margin = stability_margin(model)
        if margin < min_margin:
            continue
        th, ex = formula_metrics(model)
        if th * service.raw_moment(1) > max_util or not 0.0 <= ex <= max_orbit_mean:
            continue
        return model
    raise RuntimeError("corpus sampler failed to find a stable model")


def random_model_any(rng: np.random.Generator) -> ModelSpec:
    """Unfiltered draw: may be stable or unstable."""
    service = random_dist(rng)
    return ModelSpec(random_rates(rng, service), service, random_dist(rng))


def poly_derivatives(f, x0=1.0, h=2e-3, degree=5):
    """(f(x0), f'(x0), f''(x0)) from a one-sided polynomial fit just inside x0.

    Keeps the stencil inside the unit disk so PGFs never get evaluated past
    their domain; accuracy is O(h^degree) for analytic f.
    """
    xs = np.array([x0 - i * h for i in range(degree + 1)])
    ys = np.array([float(f(x)) for x in xs])
    coeffs = np.polynomial.polynomial.polyfit(xs - x0, ys, degree)
    return float(coeffs[0]), float(coeffs[1]), float(2.0 * coeffs[2])


@pytest.fixture(scope="session")
def corpus():
    """Fifty randomized stable models shared by the oracle and acceptance tests."""
    rng = np.random.default_rng(987654321)
    return [random_stable_model(rng) for _ in range(50)]

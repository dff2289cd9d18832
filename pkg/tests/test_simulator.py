"""Discrete-event simulator: agreement with closed forms, conservation laws,
reproducibility."""
import dataclasses

import numpy as np
import pytest

from conftest import TABLE5_ROWS, event_independent_model, reference_model, table5_problem
from retrialq.analytic import (
    ModelSpec,
    RateProfile,
    departure_orbit_pgf,
    empty_prob_terms,
    moments_and_throughput,
    server_state_probs,
    stability_margin,
)
from retrialq.dists import Deterministic, Erlang, Exponential
from retrialq.oracles import pgf_to_pmf
from retrialq.simulator import ConfigurationError, SimConfig, batch_means, run

FAST = SimConfig(warmup_departures=5_000, measured_departures=60_000, replications=5, seed=91)


def _within(est, target, k=3.0):
    return abs(est.value - target) <= k * est.half_width


def test_event_independent_idle_and_rate():
    m = event_independent_model()
    est = run(m, FAST)
    assert _within(est.p_idle, 0.75)
    assert _within(est.departure_rate, 0.5)
    assert _within(est.p_empty, 17 / 24)
    assert est.flow_balance_ok
    assert est.certified


def test_reference_model_against_closed_forms():
    m = reference_model()
    est = run(m, SimConfig(warmup_departures=10_000, measured_departures=150_000,
                           replications=6, seed=3))
    perf = moments_and_throughput(m)
    states = server_state_probs(m)
    assert _within(est.mean_orbit, perf.mean_orbit)
    assert _within(est.departure_rate, perf.throughput)
    assert _within(est.admission_rate, perf.throughput)
    assert _within(est.p_idle, states["C0"])
    assert _within(est.p_empty, empty_prob_terms(m).p_empty)
    for key in ("E2", "E3", "E45", "E67"):
        assert _within(est.state_event_probs[key], states[key])
    # idle-with-orbit aggregate
    assert _within(est.state_event_probs["E1_orbit"], states["C0"] - empty_prob_terms(m).p_empty)


def test_table5_model_throughput():
    m = table5_problem(1.0).model(TABLE5_ROWS[1][1])
    est = run(m, SimConfig(warmup_departures=20_000, measured_departures=200_000,
                           replications=5, seed=17))
    assert _within(est.departure_rate, 0.3082, k=3.0) or abs(est.departure_rate.value - 0.3082) < 1e-3


def test_instant_seek_event_independent_matches_mg1():
    lam = 0.5
    m = ModelSpec(RateProfile(lam, lam, lam, lam, lam), Erlang(2, 2.5), Deterministic(0.0))
    est = run(m, FAST)
    b = m.service
    rho = lam * b.raw_moment(1)
    mean_system = rho + lam**2 * b.raw_moment(2) / (2 * (1 - rho))
    assert _within(est.mean_system, mean_system)


def test_departure_epoch_pmf_matches_embedded_law():
    cfg = SimConfig(warmup_departures=10_000, measured_departures=150_000,
                    replications=6, seed=5)
    m = reference_model()
    est = run(m, cfg)
    coeffs = pgf_to_pmf(lambda z: departure_orbit_pgf(m, z), 40, 0.97)
    for n in range(25):
        if coeffs[n] * cfg.measured_departures * cfg.replications < 50:
            continue  # too rare for a meaningful replication CI
        assert abs(est.departure_orbit_pmf[n] - coeffs[n]) <= 3 * est.departure_orbit_pmf_hw[n]


def test_event_independent_certified_run():
    # the stated-size certified run: a million departures, idle fraction and
    # departure rate inside their confidence intervals
    m = event_independent_model()
    est = run(m, SimConfig(warmup_departures=20_000, measured_departures=1_000_000,
                           replications=5, seed=101))
    assert est.certified
    assert _within(est.p_idle, 0.75)
    assert _within(est.departure_rate, 0.5)


def test_system_size_pmf_matches_total_pgf():
    from retrialq.analytic import total_system_pgf
    cfg = SimConfig(warmup_departures=10_000, measured_departures=150_000,
                    replications=6, seed=29)
    m = reference_model()
    est = run(m, cfg)
    coeffs = pgf_to_pmf(lambda z: total_system_pgf(m, z), 40, 0.97)
    for n in range(20):
        if coeffs[n] < 1e-4:
            continue
        assert abs(est.system_size_pmf[n] - coeffs[n]) <= 3 * est.system_size_pmf_hw[n]


def test_little_law_whole_system():
    m = reference_model()
    est = run(m, FAST)
    lhs = est.mean_system.value
    rhs = est.departure_rate.value * est.mean_sojourn.value
    slack = 3 * (est.mean_system.half_width
                 + est.departure_rate.half_width * est.mean_sojourn.value
                 + est.mean_sojourn.half_width * est.departure_rate.value)
    assert abs(lhs - rhs) <= slack


def test_throughput_insensitive_to_seek_distribution():
    # equal-mean seeks; the closed-form throughput carries no seek transform
    base = reference_model()
    th = moments_and_throughput(base).throughput
    for seek in (Exponential(3.0), Erlang(3, 9.0), Deterministic(1 / 3)):
        m = ModelSpec(base.rates, base.service, seek)
        est = run(m, SimConfig(warmup_departures=10_000, measured_departures=120_000,
                               replications=5, seed=23))
        th_model = moments_and_throughput(m).throughput
        assert th_model == pytest.approx(th, abs=1e-12)
        assert _within(est.departure_rate, th_model)


def test_bit_exact_reproducibility():
    m = reference_model()
    cfg = SimConfig(warmup_departures=1_000, measured_departures=20_000, replications=3, seed=77)
    a = run(m, cfg)
    b = run(m, cfg)
    for field in dataclasses.fields(a):
        va, vb = getattr(a, field.name), getattr(b, field.name)
        if isinstance(va, np.ndarray):
            assert np.array_equal(va, vb)
        else:
            assert va == vb
    c = run(m, dataclasses.replace(cfg, seed=78))
    assert c.mean_orbit.value != a.mean_orbit.value


def test_unstable_run_reports_positive_drift():
    m = ModelSpec(RateProfile(1.0, 1.2, 1.2, 1.2, 1.2), Exponential(1.0), Exponential(3.0))
    assert stability_margin(m) < 0
    est = run(m, SimConfig(warmup_departures=1_000, measured_departures=40_000,
                           replications=5, seed=12))
    assert est.orbit_growth_rate.value - est.orbit_growth_rate.half_width > 0


def test_lambda_minus_zero_rejected():
    with pytest.raises(ValueError):
        RateProfile(0.0, 0.1, 0.1, 0.1, 0.1)
    with pytest.raises(ConfigurationError):
        SimConfig(measured_departures=0)


def test_batch_means_agrees_with_replications():
    m = event_independent_model()
    bm = batch_means(m, SimConfig(warmup_departures=2_000, measured_departures=40_000,
                                  replications=1, seed=4), batches=10)
    assert abs(bm["p_idle"].value - 0.75) < max(4 * bm["p_idle"].half_width, 0.01)
    assert abs(bm["departure_rate"].value - 0.5) < max(4 * bm["departure_rate"].half_width, 0.01)


def test_zero_event_rates_only_primaries():
    # q = 0: each admission is a lone primary served from an empty system
    m = ModelSpec(RateProfile(0.8, 0.0, 0.0, 0.0, 0.0), Erlang(2, 2.5), Exponential(3.0))
    est = run(m, FAST)
    th = 0.8 / (1 + 0.8 * m.service.raw_moment(1))
    assert _within(est.departure_rate, th)
    assert est.mean_orbit.value == 0.0
    assert est.state_event_probs["E3"].value == 0.0

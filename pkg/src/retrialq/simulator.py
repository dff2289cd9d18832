"""Discrete-event simulation of the retrial queue with event-dependent arrivals.

This is the behavioral ground truth: it implements the physical event
semantics directly (seek racing a primary arrival, event-labelled arrival
rates, FIFO orbit) with none of the analytic machinery.  The inner loop is
a plain state machine over exponential clocks; rate changes resample the
arrival clock, which is exact by memorylessness.  When numba is available
the kernel is jit-compiled; the fallback runs the identical code in pure
Python (same RNG stream, same results, much slower).

Each replication owns an independent counter-based stream derived from
(seed, replication index), so runs are bit-reproducible and replications
can be aggregated in any order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple

import numpy as np
from numpy.random import Generator, Philox, SeedSequence
from scipy import stats

from .analytic import ModelSpec
from .dists import Deterministic, Erlang, Exponential, HyperExponential

try:
    from numba import njit as _njit
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False


class ConfigurationError(ValueError):
    """Simulation configuration that cannot produce a meaningful run."""


class EventLabel(IntEnum):
    """Last realized event: the state component driving the arrival rate."""

    E1 = 1  # service completion
    E2 = 2  # an external arrival occupied the idle server
    E3 = 3  # a retrial customer occupied the idle server
    E4 = 4  # first arrival during an E2-initiated service
    E5 = 5  # subsequent arrival after E4
    E6 = 6  # first arrival during an E3-initiated service
    E7 = 7  # subsequent arrival after E6


@dataclass(frozen=True)
class SimConfig:
    warmup_departures: int = 20_000
    measured_departures: int = 200_000
    replications: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.warmup_departures < 0 or self.measured_departures < 1 or self.replications < 1:
            raise ConfigurationError("need warmup >= 0, measured >= 1, replications >= 1")


class Estimate(NamedTuple):
    value: float
    half_width: float


def _encode_dist(d) -> tuple:
    empty = np.empty(0, dtype=np.float64)
    if isinstance(d, Exponential):
        return 0, 1.0 / d.rate, 0.0, empty, empty
    if isinstance(d, Erlang):
        return 1, float(d.phases), 1.0 / d.rate, empty, empty
    if isinstance(d, Deterministic):
        return 2, d.value, 0.0, empty, empty
    if isinstance(d, HyperExponential):
        return 3, 0.0, 0.0, np.asarray(d.weights, dtype=np.float64), np.asarray(d.rates, dtype=np.float64)
    raise ConfigurationError(f"cannot simulate distribution {d!r}")


def _draw(rng, kind, a, b, w, r):
    if kind == 0:
        return rng.exponential(a)
    if kind == 1:
        return rng.gamma(a, b)
    if kind == 2:
        return a
    u = rng.random()
    acc = 0.0
    for i in range(len(w)):
        acc += w[i]
        if u <= acc:
            return rng.exponential(1.0 / r[i])
    return rng.exponential(1.0 / r[len(r) - 1])


def _kernel(rng, lm, le, lep, lr, lrp,
            skind, sa, sb, sw, sr,
            kkind, ka, kb, kw, kr,
            warmup, target, pmf_cap, sys_cap):
    inf = np.inf
    orbit_cap = 4096
    orbit = np.empty(orbit_cap, np.float64)
    head = 0
    size = 0

    dep_pmf = np.zeros(pmf_cap + 1, np.float64)
    sys_pmf = np.zeros(sys_cap + 1, np.float64)
    tlab = np.zeros(8, np.float64)
    out = np.zeros(24, np.float64)

    t = 0.0
    busy = 0
    label = 1
    svc_retrial = 0
    first_done = 0
    admit_time = 0.0
    seek_end = inf
    svc_end = inf
    next_arr = t + rng.exponential(1.0 / lm)

    departures = 0
    admissions = 0
    measuring = False
    status = 0

    meas_time = 0.0
    int_orbit = 0.0
    int_sys = 0.0
    t_idle = 0.0
    t_p00 = 0.0
    arr_meas = 0.0
    soj_sum = 0.0
    soj_n = 0.0
    ow_sum = 0.0
    ow_n = 0.0
    s_t = 0.0
    s_t2 = 0.0
    s_x = 0.0
    s_tx = 0.0
    s_n = 0.0

    while departures < target and status == 0:
        if busy == 1:
            if next_arr <= svc_end:
                ev = 1
                t_next = next_arr
            else:
                ev = 2
                t_next = svc_end
        else:
            if seek_end <= next_arr:
                ev = 3
                t_next = seek_end
            else:
                ev = 1
                t_next = next_arr
        dt = t_next - t
        if measuring:
            meas_time += dt
            sysn = size + busy
            int_orbit += size * dt
            int_sys += sysn * dt
            idx = sysn if sysn < sys_cap else sys_cap
            sys_pmf[idx] += dt
            if busy == 0:
                t_idle += dt
                if size == 0:
                    t_p00 += dt
            else:
                tlab[label] += dt
        t = t_next

        if ev == 1:
            admissions += 1
            if measuring:
                arr_meas += 1.0
            if busy == 1:
                if size == orbit_cap:
                    newbuf = np.empty(orbit_cap * 2, np.float64)
                    for i in range(size):
                        newbuf[i] = orbit[(head + i) % orbit_cap]
                    orbit = newbuf
                    head = 0
                    orbit_cap = orbit_cap * 2
                orbit[(head + size) % orbit_cap] = t
                size += 1
                if first_done == 0:
                    if label != 2 and label != 3:
                        status = 2
                    first_done = 1
                    label = 6 if svc_retrial == 1 else 4
                else:
                    ok_e = svc_retrial == 0 and (label == 4 or label == 5)
                    ok_r = svc_retrial == 1 and (label == 6 or label == 7)
                    if not (ok_e or ok_r):
                        status = 2
                    label = 7 if svc_retrial == 1 else 5
                rate = lrp if svc_retrial == 1 else lep
                next_arr = t + rng.exponential(1.0 / rate) if rate > 0.0 else inf
            else:
                busy = 1
                svc_retrial = 0
                first_done = 0
                label = 2
                admit_time = t
                svc_end = t + _draw(rng, skind, sa, sb, sw, sr)
                seek_end = inf
                next_arr = t + rng.exponential(1.0 / le) if le > 0.0 else inf
        elif ev == 2:
            departures += 1
            busy = 0
            if measuring:
                idx = size if size < pmf_cap else pmf_cap
                dep_pmf[idx] += 1.0
                soj_sum += t - admit_time
                soj_n += 1.0
                s_t += t
                s_t2 += t * t
                s_x += size
                s_tx += t * size
                s_n += 1.0
            label = 1
            svc_end = inf
            if size > 0:
                seek_end = t + _draw(rng, kkind, ka, kb, kw, kr)
            else:
                seek_end = inf
            next_arr = t + rng.exponential(1.0 / lm)
            if departures == warmup:
                measuring = True
        else:
            if size == 0:
                status = 3
                break
            join_t = orbit[head]
            head = (head + 1) % orbit_cap
            size -= 1
            if measuring:
                ow_sum += t - join_t
                ow_n += 1.0
            busy = 1
            svc_retrial = 1
            first_done = 0
            label = 3
            admit_time = join_t
            svc_end = t + _draw(rng, skind, sa, sb, sw, sr)
            seek_end = inf
            next_arr = t + rng.exponential(1.0 / lr) if lr > 0.0 else inf

    out[0] = meas_time
    out[1] = int_orbit
    out[2] = int_sys
    out[3] = t_idle
    out[4] = t_p00
    out[5] = tlab[2]
    out[6] = tlab[3]
    out[7] = tlab[4] + tlab[5]
    out[8] = tlab[6] + tlab[7]
    out[9] = arr_meas
    out[10] = soj_sum
    out[11] = soj_n
    out[12] = ow_sum
    out[13] = ow_n
    out[14] = s_t
    out[15] = s_t2
    out[16] = s_x
    out[17] = s_tx
    out[18] = s_n
    out[19] = admissions
    out[20] = departures
    out[21] = size + busy
    out[22] = t_idle - t_p00
    out[23] = float(status)
    return out, dep_pmf, sys_pmf


if _HAVE_NUMBA:
    _draw = _njit(cache=True)(_draw)
    _kernel = _njit(cache=True)(_kernel)


@dataclass(frozen=True)
class SimEstimates:
    mean_orbit: Estimate
    mean_system: Estimate
    p_idle: Estimate
    p_empty: Estimate
    state_event_probs: dict          # E1_orbit, E2, E3, E45, E67 -> Estimate
    departure_rate: Estimate
    admission_rate: Estimate
    mean_sojourn: Estimate
    mean_orbit_wait: Estimate
    orbit_growth_rate: Estimate
    departure_orbit_pmf: np.ndarray   # point estimates, last entry is overflow mass
    departure_orbit_pmf_hw: np.ndarray
    system_size_pmf: np.ndarray
    system_size_pmf_hw: np.ndarray
    flow_balance_ok: bool
    certified: bool
    replications: int
    measured_departures: int
    seed: int

    def to_dict(self) -> dict:
        def pair(e: Estimate) -> list:
            return [e.value, e.half_width]
        return {
            "mean_orbit": pair(self.mean_orbit),
            "mean_system": pair(self.mean_system),
            "p_idle": pair(self.p_idle),
            "p_empty": pair(self.p_empty),
            "state_event_probs": {k: pair(v) for k, v in self.state_event_probs.items()},
            "departure_rate": pair(self.departure_rate),
            "admission_rate": pair(self.admission_rate),
            "mean_sojourn": pair(self.mean_sojourn),
            "mean_orbit_wait": pair(self.mean_orbit_wait),
            "orbit_growth_rate": pair(self.orbit_growth_rate),
            "flow_balance_ok": self.flow_balance_ok,
            "certified": self.certified,
            "replications": self.replications,
            "measured_departures": self.measured_departures,
            "seed": self.seed,
        }


def run(model: ModelSpec, cfg: SimConfig, pmf_cap: int = 512, sys_cap: int = 512) -> SimEstimates:
    """Simulate the model and return replication-averaged estimates with 95%
    confidence half-widths."""
    rates = model.rates
    if not rates.lambda_minus > 0.0:
        raise ConfigurationError("lambda_minus must be positive; the empty system would absorb")
    if cfg.warmup_departures < 0 or cfg.measured_departures < 1 or cfg.replications < 1:
        raise ConfigurationError("need warmup >= 0, measured >= 1, replications >= 1")
    skind, sa, sb, sw, sr = _encode_dist(model.service)
    kkind, ka, kb, kw, kr = _encode_dist(model.seek)
    target = cfg.warmup_departures + cfg.measured_departures

    rows = []
    dep_rows = []
    sys_rows = []
    flow_ok = True
    for rep in range(cfg.replications):
        rng = Generator(Philox(SeedSequence((cfg.seed, rep))))
        out, dep_pmf, sys_pmf = _kernel(
            rng, rates.lambda_minus, rates.lambda_e, rates.lambda_e_plus,
            rates.lambda_r, rates.lambda_r_plus,
            skind, sa, sb, sw, sr, kkind, ka, kb, kw, kr,
            cfg.warmup_departures, target, pmf_cap, sys_cap)
        status = int(out[23])
        if status != 0:
            raise RuntimeError(f"event-label grammar violated in replication {rep} (status {status})")
        if int(out[19]) != int(out[20]) + int(out[21]):
            flow_ok = False
        mt = out[0]
        n_slope = out[18]
        denom = n_slope * out[15] - out[14] ** 2
        slope = (n_slope * out[17] - out[14] * out[16]) / denom if abs(denom) > 0 else 0.0
        rows.append({
            "mean_orbit": out[1] / mt,
            "mean_system": out[2] / mt,
            "p_idle": out[3] / mt,
            "p_empty": out[4] / mt,
            "E1_orbit": out[22] / mt,
            "E2": out[5] / mt,
            "E3": out[6] / mt,
            "E45": out[7] / mt,
            "E67": out[8] / mt,
            "departure_rate": cfg.measured_departures / mt,
            "admission_rate": out[9] / mt,
            "mean_sojourn": out[10] / out[11] if out[11] > 0 else math.nan,
            "mean_orbit_wait": out[12] / out[13] if out[13] > 0 else 0.0,
            "orbit_growth_rate": slope,
        })
        dep_rows.append(dep_pmf / cfg.measured_departures)
        sys_rows.append(sys_pmf / mt)

    reps = cfg.replications
    tcrit = float(stats.t.ppf(0.975, reps - 1)) if reps >= 2 else math.nan

    def agg(key: str) -> Estimate:
        vals = np.array([r[key] for r in rows])
        mean = float(vals.mean())
        hw = float(tcrit * vals.std(ddof=1) / math.sqrt(reps)) if reps >= 2 else math.nan
        return Estimate(mean, hw)

    def agg_vec(mats) -> tuple:
        m = np.vstack(mats)
        mean = m.mean(axis=0)
        hw = tcrit * m.std(axis=0, ddof=1) / math.sqrt(reps) if reps >= 2 else np.full(m.shape[1], np.nan)
        return mean, hw

    dep_mean, dep_hw = agg_vec(dep_rows)
    sys_mean, sys_hw = agg_vec(sys_rows)
    return SimEstimates(
        mean_orbit=agg("mean_orbit"),
        mean_system=agg("mean_system"),
        p_idle=agg("p_idle"),
        p_empty=agg("p_empty"),
        state_event_probs={k: agg(k) for k in ("E1_orbit", "E2", "E3", "E45", "E67")},
        departure_rate=agg("departure_rate"),
        admission_rate=agg("admission_rate"),
        mean_sojourn=agg("mean_sojourn"),
        mean_orbit_wait=agg("mean_orbit_wait"),
        orbit_growth_rate=agg("orbit_growth_rate"),
        departure_orbit_pmf=dep_mean,
        departure_orbit_pmf_hw=dep_hw,
        system_size_pmf=sys_mean,
        system_size_pmf_hw=sys_hw,
        flow_balance_ok=flow_ok,
        certified=cfg.measured_departures >= 10_000 and cfg.replications >= 5,
        replications=reps,
        measured_departures=cfg.measured_departures,
        seed=cfg.seed,
    )


def batch_means(model: ModelSpec, cfg: SimConfig, batches: int = 20,
                pmf_cap: int = 512, sys_cap: int = 512) -> dict:
    """Secondary estimator: one long run chopped into equal-departure batches.

    Returns point estimates with batch-means 95% half-widths for the
    continuous-time metrics.  Useful when a single long path is cheaper than
    independent replications.
    """
    if batches < 2:
        raise ConfigurationError("need at least 2 batches")
    per = cfg.measured_departures // batches
    if per < 1:
        raise ConfigurationError("measured_departures must cover the batch count")
    rates = model.rates
    skind, sa, sb, sw, sr = _encode_dist(model.service)
    kkind, ka, kb, kw, kr = _encode_dist(model.seek)
    # The kernel has no resume support, so each batch boundary replays the same
    # seeded path up to a longer horizon and the accumulators are differenced.
    # Quadratic in batch count, which is fine for a secondary estimator.
    vals = {"mean_orbit": [], "p_idle": [], "departure_rate": []}
    prev = None
    for b in range(1, batches + 1):
        rng_b = Generator(Philox(SeedSequence((cfg.seed, 0))))
        out, _, _ = _kernel(
            rng_b, rates.lambda_minus, rates.lambda_e, rates.lambda_e_plus,
            rates.lambda_r, rates.lambda_r_plus,
            skind, sa, sb, sw, sr, kkind, ka, kb, kw, kr,
            cfg.warmup_departures, cfg.warmup_departures + b * per, pmf_cap, sys_cap)
        cur = (out[0], out[1], out[3])
        if prev is not None:
            dt = cur[0] - prev[0]
            vals["mean_orbit"].append((cur[1] - prev[1]) / dt)
            vals["p_idle"].append((cur[2] - prev[2]) / dt)
            vals["departure_rate"].append(per / dt)
        else:
            vals["mean_orbit"].append(cur[1] / cur[0])
            vals["p_idle"].append(cur[2] / cur[0])
            vals["departure_rate"].append(per / cur[0])
        prev = cur
    tcrit = float(stats.t.ppf(0.975, batches - 1))
    out = {}
    for k, xs in vals.items():
        arr = np.asarray(xs)
        out[k] = Estimate(float(arr.mean()), float(tcrit * arr.std(ddof=1) / math.sqrt(batches)))
    return out

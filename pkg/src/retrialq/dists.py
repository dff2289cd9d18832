"""Nonnegative time distributions for service and seek durations.

The family is deliberately closed (exponential, Erlang, deterministic,
hyperexponential) so Laplace-Stieltjes transforms, their derivatives and
raw moments stay exact.  That is everything the stationary analysis
consumes; sampling support exists only for the simulator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import special


class DistributionError(ValueError):
    """Invalid parameters or an unsupported query on a distribution."""


def _rising(a: int, j: int) -> float:
    """Rising factorial a (a+1) ... (a+j-1)."""
    out = 1.0
    for i in range(j):
        out *= a + i
    return out


@dataclass(frozen=True)
class Exponential:
    """Exponential law with the given rate (mean 1/rate)."""

    rate: float
    kind = "exponential"

    def __post_init__(self):
        if not (self.rate > 0.0 and math.isfinite(self.rate)):
            raise DistributionError(f"exponential rate must be positive and finite, got {self.rate}")

    def lst_value(self, s):
        return self.rate / (self.rate + s)

    def one_minus_lst(self, s):
        return s / (self.rate + s)

    def lst_derivative(self, s, order: int):
        r = self.rate
        return (-1.0) ** order * math.factorial(order) * r / (r + s) ** (order + 1)

    def raw_moment(self, k: int) -> float:
        return math.factorial(k) / self.rate**k

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return self.rate * np.exp(-self.rate * t)

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / self.rate, size)

    def tail_time(self, eps: float) -> float:
        return -math.log(eps) / self.rate

    def to_dict(self) -> dict:
        return {"kind": "exponential", "rate": self.rate}


@dataclass(frozen=True)
class Erlang:
    """Erlang law: sum of `phases` iid exponential phases at rate `rate` each."""

    phases: int
    rate: float
    kind = "erlang"

    def __post_init__(self):
        if not (isinstance(self.phases, (int, np.integer)) and self.phases >= 1):
            raise DistributionError(f"erlang phases must be a positive integer, got {self.phases}")
        if not (self.rate > 0.0 and math.isfinite(self.rate)):
            raise DistributionError(f"erlang phase rate must be positive and finite, got {self.rate}")
        object.__setattr__(self, "phases", int(self.phases))

    def lst_value(self, s):
        return (self.rate / (self.rate + s)) ** self.phases

    def one_minus_lst(self, s):
        # -expm1(-M log1p(s/theta)) avoids cancellation for small real s
        if np.iscomplexobj(np.asarray(s)):
            return 1.0 - self.lst_value(s)
        return -np.expm1(-self.phases * np.log1p(np.asarray(s, dtype=float) / self.rate))

    def lst_derivative(self, s, order: int):
        m, th = self.phases, self.rate
        base = (th / (th + s)) ** m
        return (-1.0) ** order * _rising(m, order) * base / (th + s) ** order

    def raw_moment(self, k: int) -> float:
        return _rising(self.phases, k) / self.rate**k

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        m, th = self.phases, self.rate
        with np.errstate(divide="ignore", invalid="ignore"):
            logpdf = m * math.log(th) + (m - 1) * np.log(t) - th * t - math.lgamma(m)
        out = np.where(t > 0.0, np.exp(logpdf), 0.0)
        if m == 1:
            out = np.where(t == 0.0, th, out)
        return out

    def sample(self, rng, size=None):
        return rng.gamma(float(self.phases), 1.0 / self.rate, size)

    def tail_time(self, eps: float) -> float:
        return float(special.gammainccinv(self.phases, eps)) / self.rate

    def to_dict(self) -> dict:
        return {"kind": "erlang", "phases": self.phases, "rate": self.rate}


@dataclass(frozen=True)
class Deterministic:
    """Point mass at `value` (value 0 means an instantaneous duration)."""

    value: float
    kind = "deterministic"

    def __post_init__(self):
        if not (self.value >= 0.0 and math.isfinite(self.value)):
            raise DistributionError(f"deterministic value must be >= 0 and finite, got {self.value}")

    def lst_value(self, s):
        return np.exp(-self.value * np.asarray(s)) if np.ndim(s) else np.exp(-self.value * s)

    def one_minus_lst(self, s):
        if np.iscomplexobj(np.asarray(s)):
            return 1.0 - np.exp(-self.value * s)
        return -np.expm1(-self.value * np.asarray(s, dtype=float))

    def lst_derivative(self, s, order: int):
        return (-self.value) ** order * np.exp(-self.value * s)

    def raw_moment(self, k: int) -> float:
        return self.value**k

    def pdf(self, t):
        raise DistributionError("a point mass has no density; handle deterministic durations directly")

    def sample(self, rng, size=None):
        if size is None:
            return self.value
        return np.full(size, self.value)

    def tail_time(self, eps: float) -> float:
        return self.value

    def to_dict(self) -> dict:
        return {"kind": "deterministic", "value": self.value}


@dataclass(frozen=True)
class HyperExponential:
    """Mixture of exponentials: component i has weight weights[i], rate rates[i]."""

    weights: tuple
    rates: tuple
    kind = "hyperexp"

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        r = tuple(float(x) for x in self.rates)
        if len(w) == 0 or len(w) != len(r):
            raise DistributionError("hyperexp needs equally many weights and rates")
        if any(x < 0.0 for x in w) or abs(sum(w) - 1.0) > 1e-12:
            raise DistributionError("hyperexp weights must be nonnegative and sum to 1 within 1e-12")
        if any(not (x > 0.0 and math.isfinite(x)) for x in r):
            raise DistributionError("hyperexp rates must be positive and finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "rates", r)

    def lst_value(self, s):
        s = np.asarray(s)
        out = sum(w * (r / (r + s)) for w, r in zip(self.weights, self.rates))
        return out if s.ndim else out.item() if hasattr(out, "item") else out

    def one_minus_lst(self, s):
        s = np.asarray(s)
        out = sum(w * (s / (r + s)) for w, r in zip(self.weights, self.rates))
        return out if s.ndim else out.item() if hasattr(out, "item") else out

    def lst_derivative(self, s, order: int):
        f = math.factorial(order)
        return sum(
            w * (-1.0) ** order * f * r / (r + s) ** (order + 1)
            for w, r in zip(self.weights, self.rates)
        )

    def raw_moment(self, k: int) -> float:
        f = math.factorial(k)
        return sum(w * f / r**k for w, r in zip(self.weights, self.rates))

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return sum(w * r * np.exp(-r * t) for w, r in zip(self.weights, self.rates))

    def sample(self, rng, size=None):
        cw = np.cumsum(self.weights)
        rates = np.asarray(self.rates)
        if size is None:
            idx = int(np.searchsorted(cw, rng.random()))
            idx = min(idx, len(rates) - 1)
            return rng.exponential(1.0 / rates[idx])
        idx = np.minimum(np.searchsorted(cw, rng.random(size)), len(rates) - 1)
        return rng.exponential(1.0, size) / rates[idx]

    def tail_time(self, eps: float) -> float:
        t = max(-math.log(eps) / r for r in self.rates)
        while sum(w * math.exp(-r * t) for w, r in zip(self.weights, self.rates)) > eps:
            t *= 2.0
        return t

    def to_dict(self) -> dict:
        return {"kind": "hyperexp", "weights": list(self.weights), "rates": list(self.rates)}


DistributionSpec = Union[Exponential, Erlang, Deterministic, HyperExponential]

_KINDS = {
    "exponential": lambda d: Exponential(rate=float(d["rate"])),
    "erlang": lambda d: Erlang(phases=int(d["phases"]), rate=float(d["rate"])),
    "deterministic": lambda d: Deterministic(value=float(d["value"])),
    "hyperexp": lambda d: HyperExponential(weights=tuple(d["weights"]), rates=tuple(d["rates"])),
}


def dist_from_dict(obj: dict) -> DistributionSpec:
    """Build a distribution from its JSON fragment, e.g. {"kind":"erlang","phases":4,"rate":1.5}."""
    if not isinstance(obj, dict) or "kind" not in obj:
        raise DistributionError(f"distribution fragment must be an object with a 'kind' field, got {obj!r}")
    kind = obj["kind"]
    if kind not in _KINDS:
        raise DistributionError(f"unknown distribution kind {kind!r}; expected one of {sorted(_KINDS)}")
    try:
        return _KINDS[kind](obj)
    except KeyError as exc:
        raise DistributionError(f"distribution fragment {obj!r} is missing field {exc}") from exc


def lst(d: DistributionSpec, s: float) -> float:
    """E[exp(-s T)] for s >= 0.  Strictly decreasing in s, equal to 1 at s=0."""
    if s < 0.0:
        raise DistributionError(f"transform argument must be nonnegative, got {s}")
    return float(d.lst_value(float(s)))


def moment(d: DistributionSpec, order: int) -> float:
    """First raw moment (order=1) or second raw moment (order=2)."""
    if order not in (1, 2):
        raise DistributionError(f"unsupported moment order {order}; only 1 and 2 are exposed")
    return d.raw_moment(order)


def sample(d: DistributionSpec, rng, size=None):
    """Draw from the distribution using the caller-owned numpy Generator."""
    return d.sample(rng, size)

"""Independent numerical ground truth for the closed forms.

Nothing here reuses the analytic module's formulas: the count law is
integrated as an ODE system, the per-service arrival counts come from
quadrature of that ODE solution against the service density, and the
departure-epoch distribution is solved from the balance equations on a
truncated state space.  The only shared code is the distribution
primitives (transform values, densities, moments).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import roots_legendre

from .analytic import ArrivalClass, ModelSpec, RateProfile
from .dists import Deterministic


class TruncationInsufficientError(RuntimeError):
    """Stationary mass reached the truncation boundary; enlarge max_orbit."""

    def __init__(self, boundary_mass: float, suggested_max_orbit: int):
        self.boundary_mass = boundary_mass
        self.suggested_max_orbit = suggested_max_orbit
        super().__init__(
            f"boundary mass {boundary_mass:.3e} above tolerance; "
            f"retry with max_orbit >= {suggested_max_orbit}")


class PgfCoefficientError(RuntimeError):
    """Coefficient extraction produced a significantly negative value."""


@dataclass(frozen=True)
class TruncationConfig:
    max_orbit: int = 400
    tail_tolerance: float = 1e-10

    def __post_init__(self):
        if self.max_orbit < 10:
            raise ValueError(f"max_orbit must be >= 10, got {self.max_orbit}")
        if not (0.0 < self.tail_tolerance <= 1e-6):
            raise ValueError(f"tail_tolerance must lie in (0, 1e-6], got {self.tail_tolerance}")


# ---------------------------------------------------------------------------
# count-law ODE system
# ---------------------------------------------------------------------------

def _count_rhs(lam: float, lam_plus: float):
    def rhs(_t, y):
        dy = np.empty_like(y)
        dy[0] = -lam * y[0]
        if len(y) > 1:
            dy[1] = -lam_plus * y[1] + lam * y[0]
            dy[2:] = -lam_plus * y[2:] + lam_plus * y[1:-1]
        return dy
    return rhs


def ode_arrival_count(k, rates: RateProfile, t: float, n_max: int) -> np.ndarray:
    """P(N(t)=0..n_max) by adaptive integration of the bidiagonal count system.
    The vector sums to <= 1; the deficit is the mass beyond n_max."""
    if t < 0.0 or n_max < 1:
        raise ValueError("need t >= 0 and n_max >= 1")
    grid = ode_arrival_count_grid(k, rates, np.array([t]), n_max)
    return grid[0]


def ode_arrival_count_grid(k, rates: RateProfile, times: np.ndarray, n_max: int) -> np.ndarray:
    """Count-law solution on a whole time grid (rows: times, cols: 0..n_max)."""
    lam, lam_plus = rates.pair(k)
    times = np.asarray(times, dtype=float)
    y0 = np.zeros(n_max + 1)
    y0[0] = 1.0
    order = np.argsort(times)
    ts = times[order]
    out = np.empty((len(times), n_max + 1))
    positive = ts > 0.0
    if np.any(positive):
        sol = integrate.solve_ivp(
            _count_rhs(lam, lam_plus), (0.0, float(ts[-1])), y0,
            method="DOP853", rtol=1e-12, atol=1e-14, t_eval=ts[positive], dense_output=False)
        if not sol.success:
            raise RuntimeError(f"count-law integration failed: {sol.message}")
        out[order[positive]] = sol.y.T
    out[order[~positive]] = y0
    return out


# ---------------------------------------------------------------------------
# per-service counts by quadrature of the ODE solution
# ---------------------------------------------------------------------------

def _gauss_panels(upper: float, panels: int, order: int = 32) -> tuple:
    x, w = roots_legendre(order)
    edges = np.linspace(0.0, upper, panels + 1)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def service_count_vector_ode(k, model: ModelSpec, n_max: int) -> np.ndarray:
    """b_n for n=0..n_max: ODE count law integrated against the service density."""
    svc = model.service
    if isinstance(svc, Deterministic):
        return ode_arrival_count_grid(k, model.rates, np.array([svc.value]), n_max)[0]
    upper = svc.tail_time(1e-13)
    panels = max(12, int(math.ceil(upper)))
    nodes, weights = _gauss_panels(upper, min(panels, 60))
    pmf_rows = ode_arrival_count_grid(k, model.rates, nodes, n_max)
    dens = np.asarray(svc.pdf(nodes))
    return pmf_rows.T @ (weights * dens)


# ---------------------------------------------------------------------------
# truncated departure-epoch chain
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruncatedStationary:
    pmf: np.ndarray
    boundary_mass: float


def _transition_matrix(model: ModelSpec, max_orbit: int) -> np.ndarray:
    alpha = float(model.seek.lst_value(model.rates.lambda_minus))
    b_e = service_count_vector_ode(ArrivalClass.E, model, max_orbit)
    b_r = service_count_vector_ode(ArrivalClass.R, model, max_orbit + 1)
    m = max_orbit
    p = np.zeros((m + 1, m + 1))
    p[0, :m] = b_e[:m]
    for row in range(1, m + 1):
        width = m - row  # columns row..m-1 get the b_e part
        if width > 0:
            p[row, row:m] += (1.0 - alpha) * b_e[:width]
        take = m - row + 1  # columns row-1..m-1 get the shifted b_r part
        p[row, row - 1:m] += alpha * b_r[:take]
    p[:, m] = 1.0 - p[:, :m].sum(axis=1)
    return p


def embedded_stationary_truncated(model: ModelSpec, cfg: TruncationConfig) -> TruncatedStationary:
    """Stationary vector of the departure-epoch orbit chain on {0..max_orbit},
    last column absorbing the overflow.  Certified only when the boundary
    mass stays below the configured tolerance."""
    p = _transition_matrix(model, cfg.max_orbit)
    n = p.shape[0]
    if n <= 2000:
        a = p.T - np.eye(n)
        a[-1, :] = 1.0
        rhs = np.zeros(n)
        rhs[-1] = 1.0
        pi = np.linalg.solve(a, rhs)
    else:
        pi = _power_iteration(p)
    boundary = float(pi[-1])
    pi = np.clip(pi, 0.0, None)
    pi = pi / pi.sum()
    if boundary >= cfg.tail_tolerance:
        raise TruncationInsufficientError(boundary, 2 * cfg.max_orbit)
    return TruncatedStationary(pmf=pi, boundary_mass=boundary)


def _power_iteration(p: np.ndarray, tol: float = 1e-14, max_iter: int = 200000) -> np.ndarray:
    n = p.shape[0]
    pi = np.full(n, 1.0 / n)
    prev = pi
    for it in range(max_iter):
        nxt = pi @ p
        nxt /= nxt.sum()
        if it >= 2 and it % 8 == 0:
            # Aitken extrapolation on the last three iterates, entrywise
            d1 = pi - prev
            d2 = nxt - 2.0 * pi + prev
            safe = np.abs(d2) > 1e-300
            acc = nxt.copy()
            acc[safe] = nxt[safe] - (nxt - pi)[safe] ** 2 / d2[safe]
            acc = np.clip(acc, 0.0, None)
            ssum = acc.sum()
            if ssum > 0:
                acc /= ssum
                if np.max(np.abs(acc @ p - acc)) < np.max(np.abs(nxt @ p - nxt)):
                    nxt = acc
        if np.max(np.abs(nxt - pi)) < tol:
            return nxt
        prev, pi = pi, nxt
    return pi


# ---------------------------------------------------------------------------
# PGF coefficient extraction
# ---------------------------------------------------------------------------

def pgf_to_pmf(f, n_max: int = 512, radius: float = 0.9) -> np.ndarray:
    """Coefficients 0..n_max of an analytic PGF by discrete Fourier averaging
    on the circle |z| = radius.

    The roundoff floor of coefficient n scales like eps/radius**n, so pick the
    radius close enough to 1 that the floor stays below the accuracy you need
    at the largest n.  Values in the clipping window just below zero are set
    to zero; anything more negative than both 1e-10 and the roundoff floor is
    treated as evidence of a broken transform upstream.
    """
    if not (0.0 < radius < 1.0):
        raise ValueError(f"radius must lie in (0, 1), got {radius}")
    npts = 1 << max(3, math.ceil(math.log2(4 * max(1, n_max))))
    angles = 2.0 * np.pi * np.arange(npts) / npts
    zs = radius * np.exp(1j * angles)
    try:
        vals = np.asarray(f(zs), dtype=complex)
        if vals.shape != zs.shape:
            raise TypeError
    except TypeError:
        vals = np.array([complex(f(z)) for z in zs])
    coeffs = np.fft.fft(vals)[: n_max + 1] / npts
    scale = radius ** np.arange(n_max + 1)
    est = coeffs.real / scale
    fmax = float(np.max(np.abs(vals)))
    floor = np.maximum(1e-10, 16.0 * np.finfo(float).eps * fmax / scale)
    worst = np.argmin(est + floor)
    if est[worst] < -floor[worst]:
        raise PgfCoefficientError(
            f"coefficient {worst} is {est[worst]:.3e}, below the negativity "
            f"threshold {-floor[worst]:.3e}; the transform is not a PGF at this tolerance")
    return np.where((est < 0.0) & (est > -floor), 0.0, est)


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def fd_derivative(f, x: float, order: int, h: float) -> float:
    """Richardson-extrapolated central difference, error O(h^4)."""
    if order == 1:
        def d(hh):
            return (f(x + hh) - f(x - hh)) / (2.0 * hh)
    elif order == 2:
        def d(hh):
            return (f(x + hh) - 2.0 * f(x) + f(x - hh)) / (hh * hh)
    else:
        raise ValueError(f"order must be 1 or 2, got {order}")
    return (4.0 * d(h / 2.0) - d(h)) / 3.0

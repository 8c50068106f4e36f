"""White-noise sampling, scale-slice fields eta, their covariances, Wick
ordering, and chaos covariances by contraction enumeration.

Discrete white noise convention: node j of the time axis carries the
increment of the interval [t_j, t_j + dt), as an i.i.d. Gaussian of variance
1/(dt dx^3) per site.  Seeds derive from SHA-256 of (master, level, sample,
role) feeding a counter-based Philox generator, so results never depend on
worker count or sampling order.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .cutoff import (
    LAMBDA_DEFAULT,
    CutoffProfile,
    DuhamelOperator,
    ResolutionError,
    chi_scale_gap,
    periodized_heat_kernel,
    weight_unit_gamma,
)
from .grid import Grid, SpaceTimeField


class AccuracyError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class UnsupportedOrderError(ValueError):
    """Wick order outside {1, 2, 3}."""


# ----------------------------------------------------------------------------
# sampling
# ----------------------------------------------------------------------------

def derive_rng(master_seed: int, level: int, sample_index: int, role: str) -> np.random.Generator:
    """Counter-based generator keyed by hash(master, level, sample, role)."""
    msg = f"{master_seed}|{level}|{sample_index}|{role}".encode()
    digest = hashlib.sha256(msg).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class NoiseRealization:
    """Per-site Gaussian increments scaled to discrete white noise."""

    field: SpaceTimeField
    master_seed: int
    level: int
    sample_index: int

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    @property
    def grid(self) -> Grid:
        return self.field.grid


def sample_white_noise(
    grid: Grid, master_seed: int, sample_index: int, level: int = 0, role: str = "xi"
) -> NoiseRealization:
    rng = derive_rng(master_seed, level, sample_index, role)
    scale = 1.0 / np.sqrt(grid.spec.dt * grid.spec.dx**3)
    vals = rng.standard_normal(grid.shape) * scale
    return NoiseRealization(SpaceTimeField(vals, grid), master_seed, level, sample_index)


def white_noise_batch(
    grid: Grid, master_seed: int, first_index: int, count: int, level: int = 0, role: str = "xi"
) -> np.ndarray:
    """Stack of `count` independent realizations, shape (count, nt+1, n, n, n).

    Each sample uses its own derived key, so any batching gives identical
    fields to one-at-a-time sampling.
    """
    out = np.empty((count,) + grid.shape)
    for b in range(count):
        out[b] = sample_white_noise(grid, master_seed, first_index + b, level, role).values
    return out


def coarsen_noise_time(xi: NoiseRealization, factor: int, coarse_grid: Grid) -> NoiseRealization:
    """Block-average the increments over `factor` consecutive fine steps.

    This is the same realization of the underlying Brownian sheet viewed on
    the coarser time grid: means of k Gaussians of variance 1/(dt dx^3) have
    variance 1/(k dt dx^3).
    """
    fine = xi.values
    nt_f = xi.grid.spec.time_points
    nt_c = coarse_grid.spec.time_points
    if nt_c * factor != nt_f:
        raise ValueError("coarse grid does not divide the fine time axis")
    n = xi.grid.spec.spatial_points
    blocks = fine[:nt_f].reshape(nt_c, factor, n, n, n).mean(axis=1)
    vals = np.zeros(coarse_grid.shape)
    vals[:nt_c] = blocks
    vals[nt_c] = fine[nt_f]
    return NoiseRealization(SpaceTimeField(vals, coarse_grid), xi.master_seed, xi.level, xi.sample_index)


# ----------------------------------------------------------------------------
# slice fields eta^{(N)}_n
# ----------------------------------------------------------------------------

def eta_operator(grid: Grid, n: int, N: int, profile: CutoffProfile,
                 lam: float = LAMBDA_DEFAULT) -> DuhamelOperator:
    """The response operator Gamma^N_n on a unit-scale level-n grid."""
    if N < n:
        raise ValueError("need N >= n")
    gap = N - n
    smallest = lam ** gap  # kernel support starts at lam^{2 gap}
    if gap > 0 and grid.spec.dt > smallest**2 / 4.0 + 1e-15:
        raise ResolutionError(
            f"dt={grid.spec.dt:g} does not resolve lam^(2(N-n))={smallest**2:g}"
        )
    return DuhamelOperator(grid, weight_unit_gamma(gap, lam, profile))


def make_eta(xi: NoiseRealization, n: int, N: int, profile: CutoffProfile,
             lam: float = LAMBDA_DEFAULT) -> SpaceTimeField:
    """eta^{(N)}_n = Gamma^N_n xi; identically zero when N == n."""
    op = eta_operator(xi.grid, n, N, profile, lam)
    return op.apply(xi.field)


# ----------------------------------------------------------------------------
# analytic covariances
# ----------------------------------------------------------------------------

def _weight_breakpoints(profile: CutoffProfile, gap: int, lam: float) -> list[float]:
    pts = [profile.lo, profile.hi]
    if gap > 0:
        a = lam ** (2.0 * gap)
        pts += [profile.lo * a, profile.hi * a]
    return sorted(pts)


def covariance_eta(
    n: int,
    N: int,
    tprime: float,
    t: float,
    x,
    profile: CutoffProfile,
    stationary: bool = False,
    lam: float = LAMBDA_DEFAULT,
    box_side: float | None = None,
    rtol: float = 1e-8,
) -> float:
    """E[eta(t', x') eta(t, x)] with x = x' - x, by adaptive 1-D quadrature of

        int H_n(tau + 2s, x) chi_{N-n}(tau + s) chi_{N-n}(s) ds,   tau = |t' - t|,

    over s in [0, min(t, t')] (zero initial data) or [0, inf) (stationary).
    """
    if N < n:
        raise ValueError("need N >= n")
    gap = N - n
    if gap == 0:
        return 0.0
    if box_side is None:
        box_side = lam ** (-n)
    tau = abs(tprime - t)
    tlow = min(tprime, t)
    w = chi_scale_gap(profile, gap, lam)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size == 1:
        x = np.array([float(x[0]), 0.0, 0.0])

    def integrand(s):
        ww = float(w(np.array(s))) * float(w(np.array(s + tau)))
        if ww == 0.0:
            return 0.0
        return ww * periodized_heat_kernel(box_side, tau + 2.0 * s, x)

    # chi_{gap} is supported on [lam^{2 gap}, 2]; both factors vanish beyond s = 2
    upper = 2.0 if stationary else min(tlow, 2.0)
    if upper <= 0.0:
        return 0.0
    pts = [p for p in _weight_breakpoints(profile, gap, lam) if 0.0 < p < upper]
    val, err = quad(integrand, 0.0, upper, points=pts or None, limit=400,
                    epsabs=1e-15, epsrel=rtol)
    if err > 10 * max(rtol * abs(val), 1e-14):
        raise AccuracyError(f"covariance quadrature error {err:g} for value {val:g}")
    return float(val)


def equal_time_variance(n: int, N: int, t: float, profile: CutoffProfile,
                        stationary: bool = False, lam: float = LAMBDA_DEFAULT,
                        box_side: float | None = None) -> float:
    return covariance_eta(n, N, t, t, np.zeros(3), profile, stationary, lam, box_side)


# ----------------------------------------------------------------------------
# Wick ordering
# ----------------------------------------------------------------------------

@dataclass
class WickField:
    """:eta^k: with the variance function used for the subtraction."""

    base: SpaceTimeField
    order: int
    values: np.ndarray


def wick_power(eta: SpaceTimeField, k: int, variance) -> WickField:
    """:eta: = eta, :eta^2: = eta^2 - var, :eta^3: = eta^3 - 3 var eta.

    `variance` is a scalar, an array over time nodes, or a callable t -> var.
    """
    if k not in (1, 2, 3):
        raise UnsupportedOrderError(f"Wick order {k} not supported")
    if callable(variance):
        var = np.array([variance(t) for t in eta.grid.times])
    else:
        var = np.asarray(variance, dtype=float)
    if var.ndim == 1:
        var = var[:, None, None, None]
    v = eta.values
    if k == 1:
        vals = v.copy()
    elif k == 2:
        vals = v**2 - var
    else:
        vals = v**3 - 3.0 * var * v
    return WickField(eta, k, vals)


# ----------------------------------------------------------------------------
# contraction enumeration (Isserlis) for Wick monomials
# ----------------------------------------------------------------------------

def wick_contraction_value(orders: list[int], cov) -> float:
    """E[ prod_i :g_i^{k_i}: ] for jointly Gaussian g_i with Cov(g_i, g_j) =
    cov(i, j), by summing all complete pairings with no intra-block pairs.

    `cov` is a callable on block indices.  This is the generic evaluator; the
    classical tables (2 C^2 for :g^2::g^2:, 6 C^3 for :g^3::g^3:, and the
    mixed four-point formulas) are special cases used as cross-checks.
    """
    legs = []
    for block, k in enumerate(orders):
        legs.extend([block] * k)
    if len(legs) % 2 == 1:
        return 0.0

    def match(rem: tuple[int, ...]) -> float:
        if not rem:
            return 1.0
        first, rest = rem[0], rem[1:]
        total = 0.0
        for idx in range(len(rest)):
            if rest[idx] == first:
                continue  # no self-contraction inside a Wick block
            pair = cov(first, rest[idx])
            if pair != 0.0:
                total += pair * match(rest[:idx] + rest[idx + 1 :])
            else:
                # still recurse count, but zero contribution short-circuits
                continue
        return total

    return match(tuple(legs))


def wick_pairing_count(a: int, b: int) -> int:
    """Number of complete pairings of :g^a: with :g^b: (a! when a == b)."""
    if a != b:
        return 0
    import math as _math

    return _math.factorial(a)


def expectation_wick_pair(a: int, b: int, c_value: float) -> float:
    """E[:eta^a:(z) :eta^b:(z')] for a single Gaussian field with C = c_value."""
    return wick_contraction_value([a, b], lambda i, j: c_value)


# ----------------------------------------------------------------------------
# discrete model: exact covariances of the grid eta and composite fields
# ----------------------------------------------------------------------------

class DiscreteEtaModel:
    """Exact second-order statistics of the *discrete* field eta = Gamma^N_n xi
    built by `make_eta` on a given grid, in spectral representation.

    Used by the Monte Carlo cross-checks: the analytic side of every MC
    comparison is computed for the same discrete convolution the samples use,
    so agreement is limited only by sampling error.
    """

    def __init__(self, grid: Grid, gap: int, profile: CutoffProfile, lam: float = LAMBDA_DEFAULT):
        self.grid = grid
        self.gap = gap
        self.profile = profile
        self.lam = lam
        nt, dt = grid.spec.time_points, grid.spec.dt
        w = chi_scale_gap(profile, gap, lam)
        lags = np.arange(nt + 1) * dt
        self.wlag = w(lags)
        self.dt = dt

    def _weights(self, i: int) -> np.ndarray:
        """Trapezoid x cutoff weights a_m = omega_m w(t_i - t_m), m = 0..i."""
        wj = self.wlag[: i + 1][::-1].copy()
        wj[0] *= 0.5
        wj[-1] *= 0.5
        return wj

    def covariance_spectral(self, i: int, j: int) -> np.ndarray:
        """Spectral profile W(k) such that Cov(eta(t_i, x), eta(t_j, y)) =
        (1/n^3) sum_k W(k) e^{ik(x-y)}, i.e. ifftn(W).real is the covariance
        as a function of the offset x - y."""
        g = self.grid
        i, j = max(i, j), min(i, j)
        ai = self._weights(i)
        aj = self._weights(j)
        m = np.arange(j + 1)
        k2 = g.k2.reshape(-1)
        lag_sum = ((i - m) + (j - m)) * self.dt
        A = (ai[m] * aj[: j + 1])[:, None] * np.exp(-np.outer(lag_sum, k2))
        n3 = g.spec.spatial_points ** 3
        W = self.dt * n3 / g.spec.box_side**3 * A.sum(axis=0)
        return W.reshape(g.k2.shape)

    def covariance_slice(self, i: int, j: int) -> np.ndarray:
        """Cov(eta(t_i, x0 + r), eta(t_j, x0)) over all offsets r."""
        return np.fft.ifftn(self.covariance_spectral(i, j)).real

    def covariance(self, i: int, j: int, offset: tuple[int, int, int]) -> float:
        return float(self.covariance_slice(i, j)[offset])

    def variance(self, i: int) -> float:
        return self.covariance(i, i, (0, 0, 0))

    def variance_series(self) -> np.ndarray:
        return np.array([self.variance(i) for i in range(self.grid.spec.time_points + 1)])

"""Temporal cutoff profiles, heat semigroup, and cutoff Duhamel operators.

The three mild-form operators used throughout,

    (G f)(t)              = int_0^t e^{(t-s)Lap} f(s) ds
    (G_eps f)(t)          = int_0^t (1 - chi((t-s)/eps^2)) e^{(t-s)Lap} f(s) ds
    (Gamma_{eps,eps'} f)(t) = int_0^t (chi((t-s)/eps'^2) - chi((t-s)/eps^2)) e^{(t-s)Lap} f(s) ds,

    share one discretization: trapezoid in s on the native time grid with the
weight evaluated exactly at the nodes, and the heat factor applied spectrally.
Because the three weights satisfy w_eps = w_eps' + w_slice identically, the
operator identity G_eps = G_eps' + Gamma_{eps,eps'} holds node-wise to rounding,
independent of the quadrature order.

Each weight is split as w(u) = w_inf - c(u) with c supported on u <= 2*(upper
scale)^2, so one pass over time needs only a spectral prefix recursion plus a
short ring-buffer window; cost is O(nt * window) instead of O(nt^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import Grid, SpaceTimeField

LAMBDA_DEFAULT = 0.5


class DomainError(ValueError):
    """Argument outside the operator's domain (negative time etc.)."""


class ResolutionError(ValueError):
    """Time grid too coarse to resolve the requested cutoff scale."""


class OrderingError(ValueError):
    """Scale pair passed in the wrong order (needs eps < eps')."""


# ----------------------------------------------------------------------------
# cutoff profiles
# ----------------------------------------------------------------------------

def _bump(u: np.ndarray) -> np.ndarray:
    # exp(-1/u) for u > 0, extended by 0; the standard C^infinity transition germ
    out = np.zeros_like(u)
    pos = u > 0
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def smooth_step(u) -> np.ndarray:
    """C^infinity monotone step: 0 for u <= 0, 1 for u >= 1."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    a = _bump(u)
    b = _bump(1.0 - u)
    return a / (a + b)


@dataclass(frozen=True)
class CutoffProfile:
    """A smooth bump chi: [0,inf) -> [0,1], equal to 1 on [0, lo] and 0 on [hi, inf).

    The support invariants chi=1 on [0,1] and chi=0 on [2,inf) require
    1 <= lo < hi <= 2.  ``c1_norm`` is a reported (not enforced) bound on
    sup|chi| + sup|chi'|.
    """

    name: str
    lo: float
    hi: float

    def __post_init__(self):
        if not (1.0 <= self.lo < self.hi <= 2.0):
            raise ValueError("transition interval must sit inside [1, 2]")

    def __call__(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise DomainError("chi is defined on s >= 0")
        return np.where(
            s <= self.lo, 1.0,
            np.where(s >= self.hi, 0.0, smooth_step((self.hi - s) / (self.hi - self.lo))),
        )

    @property
    def c1_norm(self) -> float:
        # max |d/du smooth_step| = 2 e^{... } evaluated numerically once; cheap and exact enough
        u = np.linspace(1e-6, 1 - 1e-6, 20001)
        ds = np.max(np.abs(np.gradient(smooth_step(u), u)))
        return float(1.0 + ds / (self.hi - self.lo))


#: default profile: transition spread over all of [1, 2]
DEFAULT_PROFILE = CutoffProfile("default", 1.0, 2.0)
#: second built-in profile: earlier, steeper transition; used by universality checks
ALT_PROFILE = CutoffProfile("alt", 1.0, 1.35)

PROFILES = {p.name: p for p in (DEFAULT_PROFILE, ALT_PROFILE)}


def eval_cutoff(profile: CutoffProfile, s) -> np.ndarray:
    return profile(s)


def chi_scale_gap(profile: CutoffProfile, gap: int, lam: float = LAMBDA_DEFAULT):
    """chi_{N-n}(s) = chi(s) - chi(lam^{-2*gap} s): smooth indicator of [lam^{2 gap}, 2]."""
    if gap < 0:
        raise DomainError("scale gap N - n must be >= 0")
    a = lam ** (-2.0 * gap)

    def w(s):
        s = np.asarray(s, dtype=float)
        return profile(s) - profile(a * s)

    return w


# ----------------------------------------------------------------------------
# heat kernels and semigroup
# ----------------------------------------------------------------------------

def heat_kernel_r3(t, x_sq) -> np.ndarray:
    """Whole-space kernel (4 pi t)^{-3/2} exp(-|x|^2 / 4t); x_sq = |x|^2."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("heat kernel needs t > 0")
    return (4.0 * np.pi * t) ** -1.5 * np.exp(-np.asarray(x_sq) / (4.0 * t))


def periodized_heat_kernel(box_side: float, t: float, x, rtol: float = 1e-14) -> float:
    """Image sum over the cubic lattice of side ``box_side``; truncated once a
    whole shell contributes less than ``rtol`` relative."""
    if t <= 0:
        raise DomainError("heat kernel needs t > 0")
    x = np.asarray(x, dtype=float)
    L = box_side
    total = 0.0
    shell = 0
    while True:
        rng = np.arange(-shell, shell + 1)
        ii, jj, kk = np.meshgrid(rng, rng, rng, indexing="ij")
        on_shell = np.maximum(np.maximum(np.abs(ii), np.abs(jj)), np.abs(kk)) == shell
        xs = (x[0] + L * ii[on_shell]) ** 2 + (x[1] + L * jj[on_shell]) ** 2 + (x[2] + L * kk[on_shell]) ** 2
        contrib = float(np.sum(heat_kernel_r3(t, xs)))
        total += contrib
        if shell > 0 and contrib < rtol * max(total, 1e-300):
            break
        # Gaussian decay: once exp(-(L(shell-1))^2/4t) is negligible we are done
        if shell > 2 and (L * (shell - 1)) ** 2 / (4.0 * t) > 80.0:
            break
        shell += 1
    return total


def apply_semigroup(grid: Grid, slab: np.ndarray, t: float) -> np.ndarray:
    """e^{t Lap} on one spatial slice (or stack of slices), spectrally."""
    if t < 0:
        raise DomainError("semigroup time must be >= 0")
    if t == 0:
        return slab.copy()
    fh = np.fft.fftn(slab, axes=(-3, -2, -1))
    fh *= np.exp(-grid.k2 * t)
    return np.fft.ifftn(fh, axes=(-3, -2, -1)).real


# ----------------------------------------------------------------------------
# temporal weights for the Duhamel family
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class TemporalWeight:
    """Weight w(u), u = t - s >= 0, written as w_inf - correction(u) with the
    correction supported on u <= window."""

    name: str
    w: Callable[[np.ndarray], np.ndarray]
    w_inf: float
    window: float


def weight_plain() -> TemporalWeight:
    return TemporalWeight("G", lambda u: np.ones_like(np.asarray(u, dtype=float)), 1.0, 0.0)


def weight_g_eps(eps: float, profile: CutoffProfile) -> TemporalWeight:
    if eps <= 0:
        raise DomainError("eps must be positive")
    return TemporalWeight(
        f"G_eps[{eps:g},{profile.name}]",
        lambda u: 1.0 - profile(np.asarray(u, dtype=float) / eps**2),
        1.0,
        2.0 * eps**2,
    )


def weight_gamma_slice(eps: float, eps_prime: float, profile: CutoffProfile) -> TemporalWeight:
    if not 0 < eps < eps_prime:
        raise OrderingError(f"need 0 < eps < eps', got {eps}, {eps_prime}")

    def w(u):
        u = np.asarray(u, dtype=float)
        return profile(u / eps_prime**2) - profile(u / eps**2)

    return TemporalWeight(
        f"Gamma[{eps:g},{eps_prime:g},{profile.name}]", w, 0.0, 2.0 * eps_prime**2
    )


def weight_unit_gamma(gap: int, lam: float, profile: CutoffProfile) -> TemporalWeight:
    """Unit-scale slice kernel chi_{gap}(u) = chi(u) - chi(lam^{-2 gap} u);
    supported on [lam^{2 gap}, 2]."""
    wfun = chi_scale_gap(profile, gap, lam)
    return TemporalWeight(f"Gamma_unit[gap={gap},{profile.name}]", lambda u: wfun(u), 0.0, 2.0)


# ----------------------------------------------------------------------------
# the shared Duhamel evaluator
# ----------------------------------------------------------------------------

class DuhamelOperator:
    """Trapezoid-in-s discretization of int_0^t w(t-s) e^{(t-s)Lap} f(s) ds.

    Exact node set: s = j dt, j = 0..i, trapezoid end weights 1/2, w evaluated
    exactly at the lags.  The heat factor is applied in Fourier space; fields
    pass through an rfft per slice, so memory stays O(window) beyond the input
    and output arrays.
    """

    def __init__(self, grid: Grid, weight: TemporalWeight, min_scale: float | None = None):
        self.grid = grid
        self.weight = weight
        dt = grid.spec.dt
        if min_scale is not None and dt > min_scale**2 / 4.0 + 1e-15:
            raise ResolutionError(
                f"dt={dt:g} too coarse for scale eps={min_scale:g} (need dt <= eps^2/4)"
            )
        nt = grid.spec.time_points
        n = grid.spec.spatial_points
        k1 = grid.k1
        kx, ky, kz = np.meshgrid(k1, k1, k1[: n // 2 + 1], indexing="ij")
        self._k2r = kx**2 + ky**2 + kz**2  # rfft layout
        self._E1 = np.exp(-self._k2r * dt)
        kwin = min(int(math.ceil(weight.window / dt)) if weight.window > 0 else 0, nt)
        lags = np.arange(kwin + 1) * dt
        corr = weight.w_inf - weight.w(lags)
        # drop trailing zero corrections to shorten the window
        nz = np.nonzero(np.abs(corr) > 0)[0]
        kwin_eff = int(nz[-1]) if nz.size else -1
        self.kwin = kwin_eff
        self._cw = corr[: kwin_eff + 1]
        self._Elag = np.exp(-self._k2r[None] * lags[: kwin_eff + 1, None, None, None])
        self._w_at = weight.w(np.arange(nt + 1) * dt)  # w(t_i), end weight at s=0

    def apply_values(self, f: np.ndarray) -> np.ndarray:
        """Apply to real node values shaped (nt+1, n, n, n), or batched with
        leading axes: (..., nt+1, n, n, n)."""
        g = self.grid
        nt, dt = g.spec.time_points, g.spec.dt
        if f.shape[-4:] != g.shape:
            raise ValueError(f"field shape {f.shape} does not match grid")
        n = g.spec.spatial_points
        w_inf = self.weight.w_inf
        axes = (-3, -2, -1)
        nring = max(self.kwin + 1, 1)
        out = np.empty_like(f)
        out[..., 0, :, :, :] = 0.0
        fh0 = np.fft.rfftn(f[..., 0, :, :, :], axes=axes)
        ring = [fh0] + [None] * (nring - 1)      # spectral slices f_hat[i - j]
        P = fh0.copy()                           # sum_{j<=i} E^{i-j} f_hat_j
        B = fh0.copy()                           # E^i f_hat_0
        acc = np.empty_like(fh0)
        for i in range(1, nt + 1):
            fhi = np.fft.rfftn(f[..., i, :, :, :], axes=axes)
            np.multiply(self._E1, P, out=P)
            P += fhi
            np.multiply(self._E1, B, out=B)
            ring[i % nring] = fhi
            if w_inf != 0.0:
                np.multiply(P, w_inf, out=acc)
            else:
                acc[...] = 0.0
            for j in range(min(self.kwin, i) + 1):
                c = self._cw[j]
                if c != 0.0:
                    acc -= (c * self._Elag[j]) * ring[(i - j) % nring]
            # trapezoid halves: remove half of the j=0 (s=0) and j=i (s=t_i) terms
            wi = self._w_at[i]
            if wi != 0.0:
                acc -= (0.5 * wi) * B
            w0 = self._w_at[0]
            if w0 != 0.0:
                acc -= (0.5 * w0) * fhi
            out[..., i, :, :, :] = np.fft.irfftn(acc, s=(n, n, n), axes=axes)
        out *= dt
        return out

    def apply(self, field: SpaceTimeField) -> SpaceTimeField:
        return SpaceTimeField(self.apply_values(field.values), field.grid)


def direct_duhamel(grid: Grid, weight: TemporalWeight, f: np.ndarray) -> np.ndarray:
    """O(nt^2) reference evaluation of the same discrete operator (oracle)."""
    nt, dt = grid.spec.time_points, grid.spec.dt
    n = grid.spec.spatial_points
    fh = np.fft.fftn(f, axes=(1, 2, 3))
    out = np.zeros_like(fh)
    for i in range(1, nt + 1):
        for j in range(0, i + 1):
            u = (i - j) * dt
            wgt = float(weight.w(np.array(u)))
            if wgt == 0.0:
                continue
            om = 0.5 if (j == 0 or j == i) else 1.0
            out[i] += om * wgt * np.exp(-grid.k2 * u) * fh[j]
    vals = np.fft.ifftn(out * dt, axes=(1, 2, 3)).real
    vals[0] = 0.0
    return vals


def apply_G_eps(field: SpaceTimeField, eps: float, profile: CutoffProfile) -> SpaceTimeField:
    op = DuhamelOperator(field.grid, weight_g_eps(eps, profile), min_scale=eps)
    return op.apply(field)


def apply_Gamma_slice(
    field: SpaceTimeField, eps: float, eps_prime: float, profile: CutoffProfile
) -> SpaceTimeField:
    op = DuhamelOperator(field.grid, weight_gamma_slice(eps, eps_prime, profile), min_scale=eps)
    return op.apply(field)


# ----------------------------------------------------------------------------
# translation-invariant kernel objects (C, Gamma, B, S)
# ----------------------------------------------------------------------------

@dataclass
class Kernel:
    """Analytic space-time kernel evaluator with provenance metadata."""

    object_id: str
    evaluate: Callable[[float, float, np.ndarray], float]  # (t', t, x) -> value
    level: int | None = None
    cutoff_level: int | None = None
    profile_id: str | None = None

    def tabulate(self, tprime_t_pairs, xs) -> np.ndarray:
        return np.array([[self.evaluate(tp, t, np.asarray(x, dtype=float)) for x in xs]
                         for tp, t in tprime_t_pairs])

    def export_csv(self, path, tprime_t_pairs, xs, comment: str = "") -> None:
        with open(path, "w") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            fh.write("tau,abs_x,value,object,n,N,profile\n")
            for tp, t in tprime_t_pairs:
                for x in xs:
                    x = np.asarray(x, dtype=float)
                    v = self.evaluate(tp, t, x)
                    fh.write(
                        f"{tp - t!r},{float(np.linalg.norm(x))!r},{v!r},"
                        f"{self.object_id},{self.level},{self.cutoff_level},{self.profile_id}\n"
                    )


def gamma_kernel(level: int, cutoff_level: int, box_side: float,
                 profile: CutoffProfile, lam: float = LAMBDA_DEFAULT) -> Kernel:
    """Unit-scale response kernel Gamma^N_n(t', t, x) = chi_{N-n}(t'-t) H_n(t'-t, x)."""
    gap = cutoff_level - level
    w = chi_scale_gap(profile, gap, lam)

    def ev(tprime: float, t: float, x) -> float:
        u = tprime - t
        if u <= 0:
            return 0.0
        wu = float(w(np.array(u)))
        if wu == 0.0:
            return 0.0
        return wu * periodized_heat_kernel(box_side, u, x)

    return Kernel("Gamma", ev, level, cutoff_level, profile.name)

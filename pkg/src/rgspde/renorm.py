"""Renormalization constants: the linear-divergence constant rho, the
remainder delta, the sunset kernel, the log-divergence constant alpha0 by two
independent routes, and assembly of the mass counterterm

    r_eps = r + m1/eps + m2 log(eps) + m3.

Sign conventions fixed here (and verified by the counterterm-necessity sweep
in the solver module):

* rho > 0 is the slope of the equal-time variance of eta^{(N)}_n against
  lambda^{-(N-n)}.  Written as an integral it is
  int_0^inf (8 pi s)^{-3/2} (1 - chi(s))^2 ds: splitting the squared
  indicator (chi(s) - chi(a s))^2 with disjoint transition regions gives
  (1 - chi(a s))^2 - (1 - chi(s)^2), and the divergent part rescales to the
  (1-chi)^2 integral.  The companion integral with (1 - chi(s)^2), kept here
  as `rho_tail`, is the t -> infinity limit of -delta.
* m1 = -3 rho: with this sign the cubic term's Wick part -3 E[eta^2] phi is
  cancelled; the sweep shows the observable is stable for -3 rho and
  degenerates for 0 or +3 rho.
* alpha0 < 0: the sunset Fourier integral behaves as alpha0 log(eps) + O(1).
  m2 = 18 alpha0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import dblquad, quad

from .cutoff import LAMBDA_DEFAULT, CutoffProfile
from .noise import AccuracyError, equal_time_variance

#: closed-form tail of the rho integral over [2, inf): int (8 pi s)^{-3/2} ds
RHO_TAIL_CONSTANT = 2.0 * (8.0 * np.pi) ** -1.5 / np.sqrt(2.0)
#: sharp-profile value 2 (8 pi)^{-3/2}: upper end of the admissible bracket
RHO_SHARP = 2.0 * (8.0 * np.pi) ** -1.5


@dataclass
class RenormConstants:
    """The constants entering r_eps, with provenance."""

    rho: float
    alpha0: float
    m1: float
    m2: float
    m3: float
    profile_id: str
    quadrature: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if not np.isfinite(self.alpha0):
            raise ValueError("alpha0 must be finite")
        if not math.isclose(self.m1, -3.0 * self.rho, rel_tol=1e-12):
            raise ValueError("constants must satisfy m1 = -3 rho")
        if not math.isclose(self.m2, 18.0 * self.alpha0, rel_tol=1e-12):
            raise ValueError("constants must satisfy m2 = 18 alpha0")


def compute_rho(profile: CutoffProfile, rtol: float = 1e-10) -> float:
    """rho = int_0^inf (8 pi s)^{-3/2} (1 - chi(s))^2 ds.

    Adaptive quadrature on the transition interval plus the exact tail
    2 (8 pi)^{-3/2} / sqrt(2) beyond s = 2.
    """
    c = (8.0 * np.pi) ** -1.5

    def integrand(s):
        return c * s**-1.5 * (1.0 - float(profile(np.array(s)))) ** 2

    body, err = quad(integrand, profile.lo, 2.0, points=[profile.hi], limit=200,
                     epsabs=1e-16, epsrel=rtol)
    val = body + RHO_TAIL_CONSTANT
    if err > 10 * rtol * val:
        raise AccuracyError(f"rho quadrature error {err:g}")
    return float(val)


def rho_tail(profile: CutoffProfile, rtol: float = 1e-10) -> float:
    """int_0^inf (8 pi s)^{-3/2} (1 - chi(s)^2) ds: the constant -delta(inf).

    This is the integral as transcribed in the source derivation; it differs
    from `compute_rho` by the cross term 2 chi (1 - chi) and is *not* the
    variance slope (see module docstring).
    """
    c = (8.0 * np.pi) ** -1.5

    def integrand(s):
        return c * s**-1.5 * (1.0 - float(profile(np.array(s))) ** 2)

    body, _ = quad(integrand, profile.lo, 2.0, points=[profile.hi], limit=200,
                   epsabs=1e-16, epsrel=rtol)
    return float(body + RHO_TAIL_CONSTANT)


def compute_delta(n: int, N: int, t: float, profile: CutoffProfile,
                  stationary: bool = False, lam: float = LAMBDA_DEFAULT,
                  rho: float | None = None) -> float:
    """delta^{(N)}_n(t) = Var eta^{(N)}_n(t) - lambda^{-(N-n)} rho."""
    if t <= 0:
        raise ValueError("need t > 0")
    if rho is None:
        rho = compute_rho(profile)
    var = equal_time_variance(n, N, t, profile, stationary=stationary, lam=lam)
    return var - lam ** (-(N - n)) * rho


# ----------------------------------------------------------------------------
# sunset kernel and the log-divergence constant
# ----------------------------------------------------------------------------

def eval_sunset_kernel(n: int, N: int, tprime: float, t: float, x,
                       profile: CutoffProfile, lam: float = LAMBDA_DEFAULT,
                       box_side: float | None = None) -> float:
    """B_n(t', t, x) = C_n(t', t, x)^2 Gamma^N_n(t', t, x) (pointwise product)."""
    from .cutoff import gamma_kernel
    from .noise import covariance_eta

    if box_side is None:
        box_side = lam ** (-n)
    gam = gamma_kernel(n, N, box_side, profile, lam).evaluate(tprime, t, x)
    if gam == 0.0:
        return 0.0
    c = covariance_eta(n, N, tprime, t, x, profile, lam=lam, box_side=box_side)
    return c * c * gam


def _log_panel_nodes(eps: float, profile: CutoffProfile, nodes_per_panel: int,
                     max_panel: float = 0.8):
    """Gauss-Legendre nodes/weights on log s over [eps^2, 2], with panel
    boundaries at the cutoff transition intervals of both chi factors."""
    lo, hi = math.log(eps * eps), math.log(2.0)
    marks = [lo, hi]
    for a in (profile.lo, profile.hi):
        marks += [math.log(a * eps * eps), math.log(a)]
    marks = sorted({m for m in marks if lo <= m <= hi})
    segs = []
    for a, b in zip(marks[:-1], marks[1:]):
        k = max(1, int(math.ceil((b - a) / max_panel)))
        edges = np.linspace(a, b, k + 1)
        segs += list(zip(edges[:-1], edges[1:]))
    xg, wg = leggauss(nodes_per_panel)
    nodes, weights = [], []
    for a, b in segs:
        nodes.append(0.5 * (b - a) * xg + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * wg)
    u = np.concatenate(nodes)
    w = np.concatenate(weights)
    s = np.exp(u)
    return s, w * s  # ds = s du absorbed into the weights


def compute_alpha_eps(t: float, p: float, eps: float, profile: CutoffProfile,
                      rtol: float = 1e-6, _nodes: int = 16) -> float:
    """Fourier transform of the equal-time covariance cubed,

        Dhat(t, p) = (4 pi)^{-3} int_{[0,t]^3} e^{-alpha(s) p^2} d(s)^{-3/2}
                      prod_i chi_eps(s_i)^2 ds_i,

    with alpha(s) = s1 s2 s3 / d(s), d(s) = s1 s2 + s1 s3 + s2 s3 and
    chi_eps(s) = chi(s) - chi(s / eps^2).  (The exponent is the damping
    +s1 s2 s3/d p^2 produced by the Gaussian k, q integrals.)  Behaves as
    alpha0 log(eps) + O(1) at p = 0.  Tensor Gauss-Legendre on log-spaced
    panels, refined once; raises if the refinement disagrees beyond rtol.
    """
    if not (0 < eps < 1):
        raise ValueError("need eps in (0, 1)")
    if t <= 0:
        raise ValueError("need t > 0")

    def evaluate(nodes_per_panel):
        s, w = _log_panel_nodes(eps, profile, nodes_per_panel)
        keep = s <= t
        s, w = s[keep], w[keep]
        ce = (np.asarray(profile(s)) - np.asarray(profile(s / (eps * eps)))) ** 2
        nz = ce > 0
        s, W = s[nz], (w * ce)[nz]
        d23 = np.outer(s, s)
        s23 = s[:, None] + s[None, :]
        total = 0.0
        for i in range(len(s)):
            d = s[i] * s23 + d23
            if p != 0.0:
                al = s[i] * d23 / d
                gmat = np.exp(-al * p * p) / (d * np.sqrt(d))
            else:
                gmat = 1.0 / (d * np.sqrt(d))
            total += W[i] * (W @ gmat @ W)
        return total / (4.0 * np.pi) ** 3

    v1 = evaluate(_nodes)
    v2 = evaluate(_nodes + 8)
    if abs(v2 - v1) > rtol * max(abs(v2), 1e-300):
        v3 = evaluate(_nodes + 20)
        if abs(v3 - v2) > rtol * max(abs(v3), 1e-300):
            raise AccuracyError("sunset Fourier integral did not converge")
        return float(v3)
    return float(v2)


def alpha0_universal(rtol: float = 1e-8) -> float:
    """alpha0 = -(1/32 pi^3) int delta(s1+s2+s3-1) d(s)^{-3/2} ds.

    The delta reduces the integral to the unit simplex; by permutation
    symmetry it is 6x the ordered region s1 >= s2 >= s3.  There, writing
    s2 + s3 = q^2 (a Duffy-type corner substitution) tames the d^{-3/2}
    corner singularity exactly:

        I = 6 int_0^{sqrt(2/3)} dq int_{1/2}^{min(1,(1-q^2)/q^2)} dw
              2 [ (1-q^2) + q^2 w (1-w) ]^{-3/2}.
    """

    def inner(w, q):
        return 2.0 * ((1.0 - q * q) + q * q * w * (1.0 - w)) ** -1.5

    val, err = dblquad(
        inner,
        0.0,
        math.sqrt(2.0 / 3.0),
        lambda q: 0.5,
        lambda q: min(1.0, (1.0 - q * q) / (q * q)) if q > 0 else 1.0,
        epsabs=1e-14,
        epsrel=rtol,
    )
    I = 6.0 * val
    if err * 6.0 > 100 * rtol * I:
        raise AccuracyError("simplex quadrature did not converge")
    return float(-I / (32.0 * np.pi**3))


def fit_alpha0_slope(eps_values, dhat_values) -> float:
    """Log-slope of Dhat against log(eps), allowing the O(eps) finite-cutoff
    correction the derivation bounds: least squares for
    Dhat = a log(eps) + c + b eps, returning a."""
    eps_values = np.asarray(eps_values, dtype=float)
    y = np.asarray(dhat_values, dtype=float)
    A = np.vstack([np.log(eps_values), np.ones_like(eps_values), eps_values]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(coef[0])


def alpha0_from_sweep(profile: CutoffProfile, eps_values=None, t: float = 2.0):
    """(slope estimate, sweep table) from compute_alpha_eps at p = 0."""
    if eps_values is None:
        eps_values = [2.0**-k for k in range(3, 9)]
    vals = [compute_alpha_eps(t, 0.0, e, profile) for e in eps_values]
    return fit_alpha0_slope(eps_values, vals), list(zip(eps_values, vals))


# ----------------------------------------------------------------------------
# assembly
# ----------------------------------------------------------------------------

def make_constants(profile: CutoffProfile, m3: float = 0.0,
                   alpha0: float | None = None) -> RenormConstants:
    rho = compute_rho(profile)
    if alpha0 is None:
        alpha0 = alpha0_universal()
    return RenormConstants(
        rho=rho,
        alpha0=alpha0,
        m1=-3.0 * rho,
        m2=18.0 * alpha0,
        m3=m3,
        profile_id=profile.name,
        quadrature={"rho_rtol": 1e-10, "alpha0_rtol": 1e-8},
    )


def assemble_r_eps(r: float, eps: float, constants: RenormConstants) -> float:
    """r_eps = r + m1/eps + m2 log(eps) + m3."""
    if eps <= 0:
        raise ValueError("need eps > 0")
    return r + constants.m1 / eps + constants.m2 * math.log(eps) + constants.m3

"""Random variate generators and log-densities shared by the samplers.

Parameterisations follow the econometrics convention used throughout the
package:

* ``IG2(s, nu)``: inverted gamma 2, density proportional to
  ``x**(-(nu + 2) / 2) * exp(-s / (2 x))``; mean ``s / (nu - 2)``.
* ``G(s, a)``: gamma with scale ``s`` and shape ``a``; mean ``s * a``.
* ``GIG(lam, chi, psi)``: density proportional to
  ``x**(lam - 1) * exp(-(chi / x + psi * x) / 2)``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

__all__ = [
    "rig2",
    "rgamma",
    "rgig",
    "rtruncnorm",
    "rdirichlet_log",
    "log_ig2_pdf",
    "log_gamma_pdf",
    "log_gig_normaliser",
    "log_bessel_k",
    "log_dirichlet_pdf",
]


def rig2(rng: np.random.Generator, s, nu, size=None):
    """Draw from IG2(s, nu) as ``s / chi2(nu)``, one chi-square per element."""
    s = np.asarray(s, dtype=float)
    if size is None:
        size = np.broadcast_shapes(s.shape, np.shape(nu)) or None
    return s / rng.chisquare(nu, size=size)


def rgamma(rng: np.random.Generator, scale, shape, size=None):
    return rng.gamma(shape, scale, size=size)


def log_ig2_pdf(x, s, nu):
    x = np.asarray(x, dtype=float)
    return (
        0.5 * nu * np.log(0.5 * s)
        - special.gammaln(0.5 * nu)
        - 0.5 * (nu + 2.0) * np.log(x)
        - 0.5 * s / x
    )


def log_gamma_pdf(x, scale, shape):
    x = np.asarray(x, dtype=float)
    return (shape - 1.0) * np.log(x) - x / scale - special.gammaln(shape) - shape * np.log(scale)


# ---------------------------------------------------------------------------
# Generalised inverse Gaussian (Hörmann & Leydold, 2014)
# ---------------------------------------------------------------------------


def _gig_mode(lam: float, omega: float) -> float:
    if lam >= 1.0:
        return (math.sqrt((lam - 1.0) ** 2 + omega**2) + (lam - 1.0)) / omega
    return omega / (math.sqrt((1.0 - lam) ** 2 + omega**2) + (1.0 - lam))


def _gig_rou_noshift(lam, omega, rng):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * math.log(xm) - s * (xm + 1.0 / xm)
    ym = ((lam + 1.0) + math.sqrt((lam + 1.0) ** 2 + omega**2)) / omega
    um = math.exp(0.5 * (lam + 1.0) * math.log(ym) - s * (ym + 1.0 / ym) - nc)
    while True:
        u = um * rng.random()
        v = rng.random()
        if v <= 0.0:
            continue
        x = u / v
        if x > 0.0 and math.log(v) <= t * math.log(x) - s * (x + 1.0 / x) - nc:
            return x


def _gig_rou_shift(lam, omega, rng):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * math.log(xm) - s * (xm + 1.0 / xm)
    a = -(2.0 * (lam + 1.0) / omega + xm)
    b = 2.0 * (lam - 1.0) * xm / omega - 1.0
    p = b - a * a / 3.0
    q = 2.0 * a**3 / 27.0 - a * b / 3.0 + xm
    arg = -q / 2.0 * math.sqrt(-27.0 / p**3)
    fi = math.acos(max(-1.0, min(1.0, arg)))
    fak = 2.0 * math.sqrt(-p / 3.0)
    y1 = fak * math.cos(fi / 3.0) - a / 3.0
    y2 = fak * math.cos(fi / 3.0 + 4.0 / 3.0 * math.pi) - a / 3.0
    uplus = (y1 - xm) * math.exp(t * math.log(y1) - s * (y1 + 1.0 / y1) - nc)
    uminus = (y2 - xm) * math.exp(t * math.log(y2) - s * (y2 + 1.0 / y2) - nc)
    while True:
        u = uminus + rng.random() * (uplus - uminus)
        v = rng.random()
        if v <= 0.0:
            continue
        x = u / v + xm
        if x > 0.0 and math.log(v) <= t * math.log(x) - s * (x + 1.0 / x) - nc:
            return x


def _gig_concave(lam, omega, rng):
    # 0 <= lam < 1 and small omega: three-piece hat.
    a_ = 1.0 - lam
    x0 = omega / a_
    xstar = max(x0, 2.0 / omega)
    mode = _gig_mode(lam, omega)

    def logg(x):
        return (lam - 1.0) * math.log(x) - 0.5 * omega * (x + 1.0 / x)

    k1 = math.exp(logg(mode))
    a1 = k1 * x0
    if x0 < 2.0 / omega:
        k2 = math.exp(-omega)
        if lam == 0.0:
            a2 = k2 * math.log(2.0 / (omega * omega))
        else:
            a2 = k2 / lam * ((2.0 / omega) ** lam - x0**lam)
    else:
        k2 = 0.0
        a2 = 0.0
    k3 = xstar ** (lam - 1.0)
    a3 = 2.0 * k3 * math.exp(-xstar * omega / 2.0) / omega
    total = a1 + a2 + a3
    while True:
        u = rng.random()
        v = rng.random() * total
        if v <= a1:
            x = x0 * v / a1
            h = k1
        elif v <= a1 + a2:
            v -= a1
            if lam == 0.0:
                x = omega * math.exp(v * math.exp(omega))
            else:
                x = (x0**lam + v * lam / k2) ** (1.0 / lam)
            h = k2 * x ** (lam - 1.0)
        else:
            v -= a1 + a2
            inner = math.exp(-xstar * omega / 2.0) - v * omega / (2.0 * k3)
            if inner <= 0.0:
                continue
            x = -2.0 / omega * math.log(inner)
            h = k3 * math.exp(-x * omega / 2.0)
        if x > 0.0 and u * h <= math.exp(logg(x)):
            return x


def _gig_standard(lam: float, omega: float, rng) -> float:
    """Draw from the standardised GIG with density ~ x^(lam-1) exp(-omega (x + 1/x) / 2)."""
    if lam < 0.0:
        return 1.0 / _gig_standard(-lam, omega, rng)
    if lam > 2.0 or omega > 3.0:
        return _gig_rou_shift(lam, omega, rng)
    if lam >= 1.0 - 2.25 * omega * omega or omega > 0.2:
        return _gig_rou_noshift(lam, omega, rng)
    return _gig_concave(lam, omega, rng)


def rgig(rng: np.random.Generator, lam: float, chi: float, psi: float) -> float:
    """Draw one variate from GIG(lam, chi, psi).

    Degenerate edges reduce to gamma (``chi == 0``) and inverse gamma
    (``psi == 0``) laws.
    """
    lam = float(lam)
    chi = float(chi)
    psi = float(psi)
    if chi < 0.0 or psi < 0.0:
        raise ValueError("GIG requires chi >= 0 and psi >= 0")
    if chi == 0.0:
        if lam <= 0.0 or psi == 0.0:
            raise ValueError("GIG with chi = 0 requires lam > 0 and psi > 0")
        return rng.gamma(lam, 2.0 / psi)
    if psi == 0.0:
        if lam >= 0.0:
            raise ValueError("GIG with psi = 0 requires lam < 0")
        return 0.5 * chi / rng.gamma(-lam, 1.0)
    omega = math.sqrt(chi * psi)
    if omega < 1e-150 and lam != 0.0:
        # Below this the chi (resp. psi) term carries no representable mass.
        if lam > 0.0:
            return rng.gamma(lam, 2.0 / psi)
        return 0.5 * chi / rng.gamma(-lam, 1.0)
    return math.sqrt(chi / psi) * _gig_standard(lam, omega, rng)


def log_bessel_k(v, z):
    """log K_v(z) for real order and positive argument, stable for large |v|."""
    v = abs(float(v))
    z = float(z)
    if z <= 0.0:
        raise ValueError("log_bessel_k requires z > 0")
    if v < 50.0:
        val = special.kve(v, z)
        if np.isfinite(val) and val > 0.0:
            return math.log(val) - z
    # Uniform asymptotic (Debye) expansion in the order.
    x = z / v
    r = math.sqrt(1.0 + x * x)
    t = 1.0 / r
    eta = r + math.log(x / (1.0 + r))
    t2 = t * t
    u1 = t * (3.0 - 5.0 * t2) / 24.0
    u2 = t2 * (81.0 - 462.0 * t2 + 385.0 * t2 * t2) / 1152.0
    u3 = t * t2 * (30375.0 - 369603.0 * t2 + 765765.0 * t2**2 - 425425.0 * t2**3) / 414720.0
    series = 1.0 - u1 / v + u2 / v**2 - u3 / v**3
    return 0.5 * math.log(math.pi / (2.0 * v)) - v * eta - 0.5 * math.log(r) + math.log(series)


def log_gig_normaliser(lam: float, chi: float, psi: float) -> float:
    """log of the integral of x^(lam-1) exp(-(chi/x + psi x)/2) over x > 0."""
    if chi == 0.0:
        return special.gammaln(lam) + lam * math.log(2.0 / psi)
    if psi == 0.0:
        return special.gammaln(-lam) + lam * math.log(chi / 2.0)
    return math.log(2.0) + 0.5 * lam * math.log(chi / psi) + log_bessel_k(lam, math.sqrt(chi * psi))


# ---------------------------------------------------------------------------
# Truncated normal and Dirichlet
# ---------------------------------------------------------------------------


def rtruncnorm(rng: np.random.Generator, mean: float, sd: float, lower: float, upper: float) -> float:
    """Draw from N(mean, sd^2) restricted to (lower, upper) by inversion.

    Inversion runs on the tail nearer to the mean so that far-tail intervals
    keep their precision.
    """
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    if a > 0.0:
        # Mirror to the lower tail where log_ndtr keeps precision.
        a, b = -b, -a
        sign = -1.0
    else:
        sign = 1.0
    la = special.log_ndtr(a)
    lb = special.log_ndtr(b)
    d = math.exp(la - lb)
    lo = lb + math.log(d + rng.random() * (1.0 - d))
    z = special.ndtri_exp(lo)
    z = min(max(z, a), b)
    return mean + sign * sd * z


def rdirichlet_log(rng: np.random.Generator, alpha) -> np.ndarray:
    """Draw log-probabilities of a Dirichlet vector.

    Small concentration parameters underflow ordinary gamma draws; the
    ``G(a) = G(a + 1) U^(1/a)`` identity keeps everything on the log scale.
    """
    alpha = np.asarray(alpha, dtype=float)
    lg = np.log(rng.gamma(alpha + 1.0)) + np.log(rng.random(alpha.shape)) / alpha
    return lg - special.logsumexp(lg)


def log_dirichlet_pdf(log_p, alpha) -> float:
    alpha = np.asarray(alpha, dtype=float)
    return float(
        special.gammaln(alpha.sum()) - special.gammaln(alpha).sum() + np.sum((alpha - 1.0) * log_p)
    )

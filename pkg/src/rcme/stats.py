"""Chi-square and normal quantiles, Gaussian entropy and the entropy Z statistic."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_EPS = 1e-16
_TINY = 1e-300


class DegenerateCovariance(ValueError):
    pass


class InconclusiveTest(ValueError):
    pass


def _check_prob(p):
    if not (0.0 < p < 1.0):
        raise ValueError(f"probability must lie in (0, 1), got {p}")


def _gamma_series(a, x):
    # P(a, x) by its power series; converges fast for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(1000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cfrac(a, x):
    # Q(a, x) by modified Lentz continued fraction; for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 1000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammainc_lower(a, x):
    """Regularized lower incomplete gamma P(a, x)."""
    if x <= 0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cfrac(a, x)


def gammainc_upper(a, x):
    """Regularized upper incomplete gamma Q(a, x), without cancellation."""
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cfrac(a, x)


def chi2_cdf(x, dof):
    return gammainc_lower(dof / 2.0, x / 2.0)


def chi2_sf(x, dof):
    return gammainc_upper(dof / 2.0, x / 2.0)


def _chi2_pdf(x, dof):
    k = dof / 2.0
    return math.exp((k - 1.0) * math.log(x) - x / 2.0 - k * math.log(2.0) - math.lgamma(k))


def chi2_inv_cdf(dof, p):
    """Quantile of the chi-square distribution with `dof` degrees of freedom.

    Safeguarded Newton on the CDF, falling back to bisection whenever a
    Newton step leaves the current bracket.
    """
    _check_prob(p)
    if dof <= 0:
        raise ValueError("dof must be positive")
    lo, hi = 0.0, max(1.0, float(dof))
    while chi2_cdf(hi, dof) < p:
        lo, hi = hi, 2.0 * hi
    upper = p > 0.5
    q = 1.0 - p
    x = 0.5 * (lo + hi)
    for _ in range(200):
        # CDF(x) - p, evaluated on the tail that keeps precision
        err = q - chi2_sf(x, dof) if upper else chi2_cdf(x, dof) - p
        if err > 0:
            hi = x
        else:
            lo = x
        pdf = _chi2_pdf(x, dof) if x > 0 else 0.0
        step_ok = False
        if pdf > 0:
            nx = x - err / pdf
            step_ok = lo < nx < hi
        nx = nx if step_ok else 0.5 * (lo + hi)
        if abs(nx - x) <= 1e-15 * max(1.0, abs(x)) or hi - lo <= 1e-15 * hi:
            return nx
        x = nx
    return x


def normal_cdf(z):
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


# Acklam's rational approximation coefficients
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)


def normal_inv_cdf(p):
    """Standard normal quantile: rational approximation refined by Halley steps."""
    _check_prob(p)
    plow = 0.02425
    if p < plow:
        q = math.sqrt(-2 * math.log(p))
        z = ((((((_C[0]*q + _C[1])*q + _C[2])*q + _C[3])*q + _C[4])*q + _C[5]) /
             ((((_D[0]*q + _D[1])*q + _D[2])*q + _D[3])*q + 1))
    elif p <= 1 - plow:
        q = p - 0.5
        r = q * q
        z = ((((((_A[0]*r + _A[1])*r + _A[2])*r + _A[3])*r + _A[4])*r + _A[5])*q /
             (((((_B[0]*r + _B[1])*r + _B[2])*r + _B[3])*r + _B[4])*r + 1))
    else:
        q = math.sqrt(-2 * math.log(1 - p))
        z = -((((((_C[0]*q + _C[1])*q + _C[2])*q + _C[3])*q + _C[4])*q + _C[5]) /
              ((((_D[0]*q + _D[1])*q + _D[2])*q + _D[3])*q + 1))
    for _ in range(2):
        # work in the smaller tail so erfc keeps relative precision
        if z <= 0:
            e = 0.5 * math.erfc(-z / math.sqrt(2)) - p
        else:
            e = (1 - p) - 0.5 * math.erfc(z / math.sqrt(2))
        u = e * math.sqrt(2 * math.pi) * math.exp(z * z / 2)
        z = z - u / (1 + z * u / 2)
    return z


_LOG_2PI_E = math.log(2 * math.pi) + 1.0


def gaussian_diff_entropy(cov):
    """Differential entropy (nats) of a zero-mean Gaussian with covariance `cov`."""
    cov = np.asarray(cov, dtype=float)
    k = cov.shape[0]
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0 or not np.isfinite(logdet):
        raise DegenerateCovariance("covariance determinant is not positive")
    return 0.5 * (k * _LOG_2PI_E + logdet)


def gaussian_diff_entropies(covs, rel_floor=1e-15):
    """Entropies of a stack of covariances, shape (n, k, k) -> (n,).

    Eigenvalues are floored at rel_floor times the largest one, the
    resolution of a double-precision eigensolver, so rank-deficient rows
    (e.g. exactly consistent points) yield a finite, very low entropy.
    """
    covs = np.asarray(covs, dtype=float)
    k = covs.shape[-1]
    lam = np.linalg.eigvalsh(covs)
    top = lam[..., -1:]
    if np.any(top <= 0):
        raise DegenerateCovariance("covariance is identically zero")
    lam = np.maximum(lam, rel_floor * top)
    return 0.5 * (k * _LOG_2PI_E + np.sum(np.log(lam), axis=-1))


def z_statistic(scores, mu):
    """One-sample Z statistic (mean - mu) / (s / sqrt(n)) for entropy scores.

    Raises InconclusiveTest for fewer than two scores or zero spread; see
    `quality_z` for the convention applied to the zero-spread case.
    """
    h = np.asarray(scores, dtype=float)
    n = h.size
    if n < 2:
        raise InconclusiveTest("need at least two scores")
    psi = float(h.mean())
    s = float(h.std(ddof=1))
    if not s > 0:
        raise InconclusiveTest("scores have zero variance")
    return (psi - mu) / (s / math.sqrt(n))


def quality_z(scores, mu):
    """(psi, s, Z) with the zero-spread convention.

    With zero spread Z is -inf when psi <= mu (test passes) and +inf
    otherwise. Fewer than two scores still raises.
    """
    h = np.asarray(scores, dtype=float)
    if h.size < 2:
        raise InconclusiveTest("need at least two scores")
    psi = float(h.mean())
    s = float(h.std(ddof=1))
    if s > 0:
        return psi, s, (psi - mu) / (s / math.sqrt(h.size))
    return psi, 0.0, (-math.inf if psi <= mu else math.inf)


@dataclass(frozen=True)
class SignificanceConfig:
    """Thresholds derived from one significance level.

    z_sign = +1 reproduces the literal Z <= Phi^-1(1 - alpha) acceptance
    rule; z_sign = -1 selects the conventional lower-tail form.
    """

    alpha: float = 0.05
    z_sign: int = 1

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        if self.z_sign not in (1, -1):
            raise ValueError("z_sign must be +1 or -1")

    @property
    def chi2_thresh_1dof(self):
        return chi2_inv_cdf(1, 1 - self.alpha)

    @property
    def chi2_thresh_2dof(self):
        return chi2_inv_cdf(2, 1 - self.alpha)

    @property
    def chi2_thresh_3dof(self):
        return chi2_inv_cdf(3, 1 - self.alpha)

    @property
    def z_thresh(self):
        return self.z_sign * normal_inv_cdf(1 - self.alpha)

r"""Generalized Mittag-Leffler function on the non-positive real axis.

.. math::

    E_{\alpha,\beta}(z) = \sum_{k=0}^\infty \frac{z^k}{\Gamma(\alpha k + \beta)},
    \qquad z \le 0, \quad 0 < \alpha \le 2.

Three branches are combined, selected by :math:`|z|`:

* ``|z| <= series_cutoff``: the power series, summed with :func:`math.fsum`.
* ``series_cutoff < |z| < asymptotic_cutoff``: Laplace inversion of
  :math:`s^{\alpha-\beta} / (s^\alpha - z)` with the Bromwich line folded onto
  the branch cut. For :math:`1 < \alpha \le 2` the two conjugate poles
  :math:`s_\pm = |z|^{1/\alpha} e^{\pm i\pi/\alpha}` contribute residues, and
  what remains is a real integral

  .. math::

      \frac{1}{\pi} \int_0^\infty e^{-r} r^{\alpha-\beta}
      \frac{r^\alpha \sin\pi\beta + x \sin\pi(\beta - \alpha)}
           {r^{2\alpha} + 2 x r^\alpha \cos\pi\alpha + x^2} \,\mathrm{d}r,
      \qquad x = -z,

  evaluated with the trapezoidal rule in :math:`v = \log r`. The integrand is
  analytic in a strip of half-width :math:`\pi|\alpha - 1|/\alpha`, so the rule
  converges geometrically in the node count.
* ``|z| >= asymptotic_cutoff``: the algebraic expansion
  :math:`-\sum_{k=1}^{p} z^{-k}/\Gamma(\beta-\alpha k)` plus the same pole
  residues, which are exponentially small but not negligible for
  :math:`\alpha` close to 2.

Points where the chosen branch misses ``target_rel_tol`` (typically close to a
real zero of the function) are re-evaluated by :func:`ml_oracle`. Beyond the
oracle's range such points are accepted when the error is below the tolerance
relative to the magnitude of the pole residues, which is what sets the local
conditioning there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import mpmath as mp
import numpy as np
from numpy.typing import ArrayLike
from scipy.special import gammaln, rgamma

from diffwave_inverse.errors import ConvergenceError, DomainError, PrecisionError

_EPS = float(np.finfo(float).eps)

#: largest :math:`|z|` accepted by the extended-precision oracle
ORACLE_MAX_ABS_Z = 1.0e4


@dataclass(frozen=True)
class MLQuery:
    """A single evaluation request for :math:`E_{\\alpha,\\beta}(z)`."""

    alpha: float
    beta: float
    z: float

    def __post_init__(self) -> None:
        _check_parameters(self.alpha, self.beta)
        if not math.isfinite(self.z) or self.z > 0:
            raise DomainError(f"z must be finite and <= 0: got {self.z}")


@dataclass(frozen=True)
class MLConfig:
    #: ``|z|`` at or below which the power series is used
    series_cutoff: float = 1.0
    #: ``|z|`` at or above which the asymptotic expansion is used
    asymptotic_cutoff: float = 1.0e4
    #: number of algebraic terms in the asymptotic expansion
    asymptotic_terms: int = 10
    #: relative accuracy every returned value must reach
    target_rel_tol: float = 1.0e-12

    def __post_init__(self) -> None:
        if not 0 < self.series_cutoff <= self.asymptotic_cutoff:
            raise DomainError(
                "cutoffs must satisfy 0 < series_cutoff <= asymptotic_cutoff: "
                f"got {self.series_cutoff}, {self.asymptotic_cutoff}"
            )
        if self.asymptotic_terms < 1:
            raise DomainError(
                f"asymptotic_terms must be >= 1: got {self.asymptotic_terms}"
            )
        if not self.target_rel_tol > 0:
            raise DomainError(
                f"target_rel_tol must be positive: got {self.target_rel_tol}"
            )


DEFAULT_CONFIG = MLConfig()


def _check_parameters(alpha: float, beta: float) -> None:
    if not (math.isfinite(alpha) and 0 < alpha <= 2):
        raise DomainError(f"alpha must lie in (0, 2]: got {alpha}")
    if not math.isfinite(beta):
        raise DomainError(f"beta must be finite: got {beta}")


# {{{ coefficient tables


@lru_cache(maxsize=256)
def _series_table(alpha: float, beta: float, n: int) -> np.ndarray:
    k = np.arange(n, dtype=float)
    table = rgamma(alpha * k + beta)
    table.setflags(write=False)
    return table


@lru_cache(maxsize=256)
def _asymptotic_table(alpha: float, beta: float, n: int) -> np.ndarray:
    # entry k-1 holds 1/Gamma(beta - alpha k); rgamma already returns 0 at poles
    k = np.arange(1, n + 1, dtype=float)
    table = rgamma(beta - alpha * k)
    table.setflags(write=False)
    return table


def _series_length(alpha: float, beta: float, xmax: float) -> int:
    """Number of series terms needed to reach round-off for all ``|z| <= xmax``."""
    if xmax == 0:
        return 1
    kcap = int(4 * (xmax + 1) ** (1 / alpha) / alpha) + 64
    k = np.arange(kcap, dtype=float)
    with np.errstate(divide="ignore"):
        logt = k * math.log(xmax) - gammaln(alpha * k + beta)
    peak = int(np.argmax(logt))
    below = np.nonzero(logt[peak:] < logt[peak] - 40.0)[0]
    if below.size == 0:
        return kcap
    return peak + int(below[0]) + 1


# }}}


# {{{ branches


def ml_series(
    x: ArrayLike, alpha: float, beta: float
) -> tuple[np.ndarray, np.ndarray]:
    """Power series at ``z = -x``; returns ``(value, error_estimate)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = _series_length(alpha, beta, float(np.max(x, initial=0.0)))
    coeffs = _series_table(alpha, beta, n)
    signs = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)

    value = np.empty_like(x)
    error = np.empty_like(x)
    for i, xi in enumerate(x):
        with np.errstate(under="ignore"):
            terms = signs * coeffs * xi ** np.arange(n)
        value[i] = math.fsum(terms)
        error[i] = 2 * _EPS * float(np.sum(np.abs(terms)))

    return value, error


def _pole_residues(x: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    # (2/alpha) Re[exp(s) s^(1-beta)] at s = x^(1/alpha) exp(i pi / alpha)
    if alpha <= 1:
        return np.zeros_like(x)
    radius = x ** (1 / alpha)
    theta = math.pi / alpha
    with np.errstate(divide="ignore"):
        log_mag = radius * math.cos(theta) + (1 - beta) * np.log(radius)
    phase = radius * math.sin(theta) + (1 - beta) * theta
    with np.errstate(under="ignore"):
        return (2 / alpha) * np.exp(log_mag) * np.cos(phase)


def ml_contour(
    x: ArrayLike, alpha: float, beta: float, *, chunk: int = 2048
) -> tuple[np.ndarray, np.ndarray]:
    """Branch-cut integral plus pole residues at ``z = -x`` (``x > 0``).

    Requires ``alpha != 1``. Values of ``beta`` above ``alpha`` are reduced by
    the recurrence :math:`E_{\\alpha,\\beta}(z) = (E_{\\alpha,\\beta-\\alpha}(z)
    - 1/\\Gamma(\\beta-\\alpha))/z` so the integrand decays at the origin.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if alpha == 1:
        raise DomainError("the contour branch is undefined for alpha = 1")

    if beta > alpha:
        inner, inner_error = ml_contour(x, alpha, beta - alpha, chunk=chunk)
        value = (inner - float(rgamma(beta - alpha))) / (-x)
        error = (inner_error + _EPS * abs(float(rgamma(beta - alpha)))) / x
        return value, error

    sin_b = math.sin(math.pi * beta)
    sin_ba = math.sin(math.pi * (beta - alpha))
    cos_a = math.cos(math.pi * alpha)

    power = alpha - beta + 1
    # decay rate of the integrand in v as r -> 0
    decay = power + (alpha if sin_ba == 0.0 else 0.0)
    v_lo = -39.0 / decay
    v_hi = math.log(45.0 + 2.0 * power)

    # strip of analyticity in v = log r, limited by the zeros of the denominator
    half_width = min(0.9 * math.pi * abs(alpha - 1) / alpha, 1.2)
    step = 2 * math.pi * half_width / 40.0
    n = int(math.ceil((v_hi - v_lo) / step))
    n += n % 2
    step = (v_hi - v_lo) / n
    v = v_lo + step * np.arange(n + 1)
    r = np.exp(v)
    ra = r**alpha
    with np.errstate(under="ignore"):
        weight = np.exp(-r + power * v)

    residues = _pole_residues(x, alpha, beta)
    value = np.empty_like(x)
    error = np.empty_like(x)
    for start in range(0, x.size, chunk):
        xs = x[start : start + chunk, None]
        denom = ra * ra + 2 * xs * ra * cos_a + xs * xs
        g = weight * (ra * sin_b + xs * sin_ba) / denom
        fine = step * g.sum(axis=1) / math.pi
        coarse = 2 * step * g[:, ::2].sum(axis=1) / math.pi
        scale = step * np.abs(g).sum(axis=1) / math.pi

        # the coarse rule's error is roughly the square root of the fine one's
        diff = np.abs(fine - coarse)
        trap = diff * np.minimum(1.0, diff / np.maximum(np.abs(fine), 1e-300))
        res = residues[start : start + chunk]
        value[start : start + chunk] = fine + res
        error[start : start + chunk] = trap + 8 * _EPS * (scale + np.abs(res))

    return value, error


def ml_asymptotic(
    x: ArrayLike, alpha: float, beta: float, terms: int = 10
) -> tuple[np.ndarray, np.ndarray]:
    """Large-argument expansion at ``z = -x`` with pole residues included."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    table = _asymptotic_table(alpha, beta, terms + 3)
    k = np.arange(1, terms + 4, dtype=float)
    signs = np.where(k % 2 == 0, 1.0, -1.0)

    with np.errstate(under="ignore"):
        powers = x[:, None] ** (-k)
    contrib = -signs * table * powers
    algebraic = contrib[:, :terms].sum(axis=1)
    remainder = np.abs(contrib[:, terms:]).max(axis=1)

    residues = _pole_residues(x, alpha, beta)
    value = algebraic + residues
    error = remainder + 4 * _EPS * (np.abs(contrib[:, :terms]).sum(axis=1) + np.abs(residues))
    return value, error


def _alpha_one(x: np.ndarray, beta: float) -> tuple[np.ndarray, np.ndarray]:
    # E_{1,1}(z) = exp(z), then E_{1,m+1}(z) = (E_{1,m}(z) - 1/Gamma(m)) / z
    value = np.exp(-x)
    for m in range(1, int(beta)):
        value = (value - float(rgamma(m))) / (-x)
    return value, 4 * _EPS * np.abs(value) * max(int(beta), 1)


# }}}


# {{{ public interface


def ml_oracle(q: MLQuery, digits: int = 40, *, guard_digits: int = 20) -> mp.mpf:
    """Extended-precision evaluation of the defining series.

    The working precision is sized from the magnitude of the largest series
    term so that ``digits`` significant digits survive the cancellation of the
    alternating sum. Summation stops once the geometric tail bound falls below
    ``10**-digits`` relative to the partial sum.

    :raises DomainError: if ``|z| > 1e4`` or ``digits < 30``.
    :raises PrecisionError: if cancellation consumed the working precision.
    """
    if digits < 30:
        raise DomainError(f"digits must be >= 30: got {digits}")
    x = -q.z
    if x > ORACLE_MAX_ABS_Z:
        raise DomainError(f"oracle limited to |z| <= {ORACLE_MAX_ABS_Z:g}: got {x}")

    if x == 0:
        with mp.workdps(digits + guard_digits):
            value = mp.rgamma(mp.mpf(q.beta))
        with mp.workdps(digits):
            return +value

    alpha, beta = q.alpha, q.beta
    kcap = int(4 * (x + 1) ** (1 / alpha) / alpha) + 64
    k = np.arange(kcap, dtype=float)
    logt = k * math.log(x) - gammaln(alpha * k + beta)
    peak = int(np.argmax(logt))
    lost = max(float(logt[peak]) / math.log(10), 0.0) + 2 * math.log10(max(x, 1.0))
    dps = int(digits + lost + guard_digits)

    with mp.workdps(dps):
        a, b, z = mp.mpf(alpha), mp.mpf(beta), mp.mpf(q.z)
        tol = mp.mpf(10) ** (-digits - 2)
        total = mp.mpf(0)
        power = mp.mpf(1)
        largest = mp.mpf(0)
        previous = None
        n = 0
        while True:
            term = power * mp.rgamma(a * n + b)
            total += term
            largest = max(largest, abs(term))
            if n > peak + 1 and previous:
                ratio = abs(term / previous)
                if ratio < 1 and abs(term) * ratio / (1 - ratio) <= tol * abs(total):
                    break
            previous = term
            power *= z
            n += 1

        if total == 0 or mp.log10(largest / abs(total)) > dps - digits - 2:
            raise PrecisionError(
                f"cancellation exhausted {dps} digits for "
                f"alpha={alpha}, beta={beta}, z={q.z}"
            )

    with mp.workdps(digits):
        return +total


def _oracle_fallback(
    xi: float, alpha: float, beta: float, best: float, bound: float, tol: float
) -> float:
    if xi > ORACLE_MAX_ABS_Z:
        # close to a zero of the oscillating residue term the value itself is
        # tiny, so measure the error against the size of that term instead
        scale = abs(float(_pole_residues(np.array([xi]), alpha, beta)[0]))
        if bound <= tol * scale:
            return best
        raise ConvergenceError(
            f"no branch reached the tolerance at alpha={alpha}, beta={beta}, z={-xi}",
            estimate=best,
            error_bound=bound,
        )
    q = MLQuery(alpha, beta, -xi)
    try:
        return float(ml_oracle(q, 30))
    except PrecisionError:
        return float(ml_oracle(q, 30, guard_digits=80))


def ml_eval_batch(
    z: ArrayLike, alpha: float, beta: float = 1.0, cfg: MLConfig | None = None
) -> np.ndarray:
    """Evaluate :math:`E_{\\alpha,\\beta}(z)` for an array of ``z <= 0``.

    :raises DomainError: if any ``z > 0`` or ``alpha`` lies outside ``(0, 2]``.
    :raises ConvergenceError: if a value misses ``cfg.target_rel_tol`` and is
        out of reach of the extended-precision fallback.
    """
    cfg = DEFAULT_CONFIG if cfg is None else cfg
    alpha, beta = float(alpha), float(beta)
    _check_parameters(alpha, beta)

    z = np.asarray(z, dtype=float)
    shape = z.shape
    z = z.ravel()
    if not np.all(np.isfinite(z)) or np.any(z > 0):
        raise DomainError("z must be finite and <= 0")

    x = -z
    value = np.empty_like(x)
    error = np.empty_like(x)

    small = x <= cfg.series_cutoff
    large = x >= cfg.asymptotic_cutoff
    middle = ~(small | large)

    if np.any(small):
        value[small], error[small] = ml_series(x[small], alpha, beta)

    if alpha == 1.0:
        rest = ~small
        if np.any(rest):
            if beta >= 1 and beta.is_integer():
                value[rest], error[rest] = _alpha_one(x[rest], beta)
            else:
                value[rest], error[rest] = np.nan, np.inf
    else:
        if np.any(large):
            value[large], error[large] = ml_asymptotic(
                x[large], alpha, beta, cfg.asymptotic_terms
            )
            # hand failures back to the contour branch before the oracle
            retry = large.copy()
            retry[large] = ~(error[large] <= cfg.target_rel_tol * np.abs(value[large]))
            middle |= retry
        if np.any(middle):
            value[middle], error[middle] = ml_contour(x[middle], alpha, beta)

    failed = ~(error <= cfg.target_rel_tol * np.abs(value))
    failed &= ~((value == 0) & (error == 0))
    for i in np.nonzero(failed)[0]:
        value[i] = _oracle_fallback(
            float(x[i]), alpha, beta, float(value[i]), float(error[i]), cfg.target_rel_tol
        )

    return value.reshape(shape)


def ml_eval(q: MLQuery, cfg: MLConfig | None = None) -> float:
    """Evaluate :math:`E_{\\alpha,\\beta}(z)` for a single query."""
    return float(ml_eval_batch(np.array([q.z]), q.alpha, q.beta, cfg)[0])


def mittag_leffler(
    z: ArrayLike, alpha: float, beta: float = 1.0, cfg: MLConfig | None = None
) -> float | np.ndarray:
    """Convenience wrapper returning a scalar for scalar input."""
    result = ml_eval_batch(z, alpha, beta, cfg)
    return float(result) if np.ndim(z) == 0 else result


# }}}

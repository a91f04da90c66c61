r"""Diagonal solution operators and synthetic measurements.

With :math:`b = 0` and a time-independent source the solution is
:math:`u(t) = S(t)a + Q(t)f` mode by mode, where for eigenvalue :math:`\lambda`

======  ==========================================================
``S``   :math:`E_{\alpha,1}(-\lambda t^\alpha)`
``T``   :math:`t\,E_{\alpha,2}(-\lambda t^\alpha)`
``G``   :math:`t^{\alpha-1} E_{\alpha,\alpha}(-\lambda t^\alpha)`
``Q``   :math:`t^\alpha E_{\alpha,\alpha+1}(-\lambda t^\alpha)`
======  ==========================================================
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass
from functools import lru_cache
from typing import Any

import numpy as np

from diffwave_inverse.errors import DomainError
from diffwave_inverse.mlf import ml_eval_batch
from diffwave_inverse.spectral import (
    Domain,
    EigenSystem,
    Field,
    Variant,
    build_eigensystem,
    project_function,
    prolong,
    restrict,
    to_nodal,
)

KINDS = ("S", "T", "G", "Q")


def _check_time(t: float) -> None:
    if not (math.isfinite(t) and t > 0):
        raise DomainError(f"t must be positive: got {t}")


def op_coeff(kind: str, lam: float, t: float, alpha: float) -> float:
    """One diagonal entry of the ``S``, ``T``, ``G`` or ``Q`` operator."""
    return float(op_coeffs(kind, np.array([lam]), t, alpha)[0])


def op_coeffs(kind: str, lam: np.ndarray, t: float, alpha: float) -> np.ndarray:
    """Vectorized :func:`op_coeff`; repeated eigenvalues are evaluated once."""
    if kind not in KINDS:
        raise DomainError(f"unknown operator kind {kind!r}; expected one of {KINDS}")
    _check_time(t)
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise DomainError("eigenvalues must be positive")

    unique, inverse = np.unique(lam, return_inverse=True)
    z = -unique * t**alpha
    if kind == "S":
        values = ml_eval_batch(z, alpha, 1.0)
    elif kind == "T":
        values = t * ml_eval_batch(z, alpha, 2.0)
    elif kind == "G":
        values = t ** (alpha - 1) * ml_eval_batch(z, alpha, alpha)
    else:
        values = t**alpha * ml_eval_batch(z, alpha, alpha + 1)
    return values[inverse].reshape(lam.shape)


@lru_cache(maxsize=64)
def _cached_coeffs(kind: str, alpha: float, t: float, eig: EigenSystem) -> np.ndarray:
    values = op_coeffs(kind, eig.eigenvalues, t, alpha)
    values.setflags(write=False)
    return values


def operator(kind: str, alpha: float, t: float, eig: EigenSystem) -> np.ndarray:
    """Diagonal of an operator over all modes of ``eig`` (cached, read-only)."""
    return _cached_coeffs(kind, float(alpha), float(t), eig)


@dataclass(frozen=True, eq=False)
class ProblemSetup:
    """Model parameters plus the exact pair ``(a, f)`` when it is known."""

    alpha: float
    T1: float
    T2: float
    eig: EigenSystem
    a: Field | None = None
    f: Field | None = None

    def __post_init__(self) -> None:
        if not 0 < self.alpha <= 2:
            raise DomainError(f"alpha must lie in (0, 2]: got {self.alpha}")
        if not 0 < self.T1 < self.T2:
            raise DomainError(f"need 0 < T1 < T2: got T1={self.T1}, T2={self.T2}")
        for name in ("a", "f"):
            value = getattr(self, name)
            if value is not None and value.domain != self.domain:
                raise DomainError(f"{name} lives on a different grid than the eigensystem")

    @property
    def domain(self) -> Domain:
        return self.eig.domain


def solve_direct(setup: ProblemSetup, t: float) -> Field:
    """:math:`u(t) = S(t)a + Q(t)f` in the eigenbasis of ``setup.eig``."""
    if setup.a is None or setup.f is None:
        raise ValueError("solve_direct needs both a and f")
    s = operator("S", setup.alpha, t, setup.eig)
    q = operator("Q", setup.alpha, t, setup.eig)
    return to_nodal(Field.from_coeffs(setup.domain, s * setup.a.c + q * setup.f.c))


# {{{ measurements


@dataclass(frozen=True, eq=False)
class MeasurementPair:
    """Noisy snapshots at ``T1`` and ``T2`` with their noise bookkeeping."""

    g1: Field
    g2: Field
    g1_exact: Field
    g2_exact: Field
    #: declared noise level, ``epsilon * max(||g1||, ||g2||)``
    delta: float
    epsilon: float
    seed: int
    #: discrete L2 norms of the perturbations actually added
    noise_norms: tuple[float, float]


def exact_measurements(
    alpha: float,
    T1: float,
    T2: float,
    domain: Domain,
    a_fn: Callable[..., Any] | Field | None,
    f_fn: Callable[..., Any] | Field | None,
    data_grid_factor: int = 4,
) -> tuple[Field, Field]:
    """Noise-free ``u(T1)``, ``u(T2)`` at the nodes of ``domain``.

    The data are synthesized with the continuous eigensystem on a grid
    ``data_grid_factor`` times finer and injected onto ``domain``, so they do
    not come from the discretization used for reconstruction. ``a_fn`` and
    ``f_fn`` are callables sampled on the fine grid or fields prolonged to it.
    """
    if data_grid_factor < 1:
        raise DomainError(f"data_grid_factor must be >= 1: got {data_grid_factor}")
    fine = Domain(domain.dim, domain.K * data_grid_factor)
    eig = build_eigensystem(fine, Variant.CONTINUOUS)

    def lift(src: Callable[..., Any] | Field | None) -> Field:
        if isinstance(src, Field):
            return prolong(src, fine)
        return project_function(src, fine)

    setup = ProblemSetup(alpha, T1, T2, eig, lift(a_fn), lift(f_fn))
    return (
        restrict(solve_direct(setup, T1), domain),
        restrict(solve_direct(setup, T2), domain),
    )


def add_noise(
    g1: Field, g2: Field, epsilon: float, seed: int
) -> tuple[Field, Field, float, tuple[float, float]]:
    """Uniform relative perturbation ``epsilon * max|g| * U(-1, 1)`` per node."""
    if not epsilon >= 0:
        raise DomainError(f"epsilon must be >= 0: got {epsilon}")
    rng = np.random.default_rng(seed)
    delta = epsilon * max(g1.norm(), g2.norm())
    noisy, norms = [], []
    for g in (g1, g2):
        perturbation = epsilon * np.max(np.abs(g.v)) * rng.uniform(-1.0, 1.0, g.domain.shape)
        noisy.append(Field(g.domain, g.v + perturbation))
        norms.append(float(np.sqrt(g.domain.weight * np.sum(perturbation**2))))
    return noisy[0], noisy[1], delta, (norms[0], norms[1])


def synthesize(
    setup: ProblemSetup,
    epsilon: float,
    seed: int,
    data_grid_factor: int = 4,
    *,
    a_fn: Callable[..., Any] | None = None,
    f_fn: Callable[..., Any] | None = None,
) -> MeasurementPair:
    """Exact measurements for ``setup`` plus seeded uniform noise.

    The exact pair is taken from ``a_fn``/``f_fn`` when given (sampled on the
    fine data grid), otherwise from ``setup.a``/``setup.f``.
    """
    a_src = a_fn if a_fn is not None else setup.a
    f_src = f_fn if f_fn is not None else setup.f
    if a_src is None or f_src is None:
        raise ValueError("synthesize needs the exact initial value and source")

    g1, g2 = exact_measurements(
        setup.alpha, setup.T1, setup.T2, setup.domain, a_src, f_src, data_grid_factor
    )
    n1, n2, delta, norms = add_noise(g1, g2, epsilon, seed)
    return MeasurementPair(n1, n2, g1, g2, delta, float(epsilon), int(seed), norms)


# }}}

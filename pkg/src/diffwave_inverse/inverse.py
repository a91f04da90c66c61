r"""Simultaneous recovery of the initial value ``a`` and the source ``f``.

Everything here is diagonal in the sine basis. For one mode write
:math:`s_i = S_n(T_i)` and :math:`q_i = Q_n(T_i)`; the measurements are
:math:`\hat g_i = s_i \hat a + q_i \hat f`.

* :func:`cramer_invert` solves the 2x2 system directly.
* :func:`alternating_exact` alternates between the two equations, which
  contracts with ratio :math:`r_n = q_1 s_2 / (s_1 q_2)` per sweep.
* :func:`alternating_regularized` is the quasi-boundary-value version,
  :math:`\hat a = (\hat g_1 - q_1 \hat f)/(s_1 - \mu)` and
  :math:`\hat f = (\hat g_2 - s_2 \hat a)/(q_2 + \mu)`, with per-sweep ratio
  :math:`r^\mu_n = q_1 s_2 / ((s_1 - \mu)(q_2 + \mu))`.

The classical sign structure :math:`s_1 < 0` does not hold for every mode at
moderate times (low modes sit near zeros of :math:`E_{\alpha,1}`), so the
contraction check works with :math:`|r_n|` and records sign violations as
diagnostics instead of rejecting the configuration.
"""

from __future__ import annotations

import json
from collections.abc import Iterator
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from diffwave_inverse.errors import (
    ContractionError,
    DomainError,
    NonFiniteError,
    SingularModeError,
)
from diffwave_inverse.forward import ProblemSetup, operator
from diffwave_inverse.spectral import (
    EigenSystem,
    Field,
    field_from_dict,
    field_to_dict,
    to_nodal,
)

#: relative size of ``|R_n|`` below which a mode counts as singular
SINGULAR_RTOL = 1e-3

MODES = ("iterate", "solve", "auto")


def _field(eig: EigenSystem, coeffs: np.ndarray) -> Field:
    return to_nodal(Field.from_coeffs(eig.domain, coeffs))


def _labels(eig: EigenSystem, flat: np.ndarray) -> list[list[int]]:
    return eig.domain.mode_indices()[flat].tolist()


def relative_error(approx: Field, exact: Field) -> float:
    """:math:`\\|approx - exact\\| / \\|exact\\|` in the discrete :math:`L^2` norm."""
    if approx.domain != exact.domain:
        raise DomainError("fields live on different grids")
    return float(np.linalg.norm(approx.c - exact.c) / np.linalg.norm(exact.c))


def choose_mu(delta: float, p: float = 1.0, c: float = 1.0) -> float:
    """A-priori regularization parameter :math:`\\mu = c\\,\\delta^{1/(p+1)}`."""
    if not delta > 0:
        raise DomainError(f"delta must be positive: got {delta}")
    return c * delta ** (1.0 / (p + 1.0))


# {{{ per-mode coefficients


@dataclass(frozen=True)
class ModeCoefficients:
    """``S`` and ``Q`` at both measurement times, one entry per mode (flattened)."""

    s1: np.ndarray
    q1: np.ndarray
    s2: np.ndarray
    q2: np.ndarray

    @classmethod
    def build(cls, alpha: float, T1: float, T2: float, eig: EigenSystem) -> ModeCoefficients:
        # T1 == T2 is allowed so that diagnostics can report r_n = 1
        if not 0 < T1 <= T2:
            raise DomainError(f"need 0 < T1 <= T2: got T1={T1}, T2={T2}")
        return cls(
            operator("S", alpha, T1, eig).ravel(),
            operator("Q", alpha, T1, eig).ravel(),
            operator("S", alpha, T2, eig).ravel(),
            operator("Q", alpha, T2, eig).ravel(),
        )

    def ratio(self, mu: float = 0.0) -> np.ndarray:
        """Per-sweep contraction ratio of the (regularized) alternating scheme."""
        return self.q1 * self.s2 / ((self.s1 - mu) * (self.q2 + mu))

    def determinant(self, mu: float = 0.0) -> np.ndarray:
        return (self.s1 - mu) * (self.q2 + mu) - self.q1 * self.s2

    def fixed_point(
        self, g1: np.ndarray, g2: np.ndarray, mu: float = 0.0
    ) -> tuple[np.ndarray, np.ndarray]:
        """Closed-form solution of the per-mode (regularized) 2x2 system."""
        det = self.determinant(mu)
        a = ((self.q2 + mu) * g1 - self.q1 * g2) / det
        f = ((self.s1 - mu) * g2 - self.s2 * g1) / det
        return a, f


# }}}


# {{{ contraction diagnostics


@dataclass(frozen=True)
class ContractionReport:
    """Per-mode ratios ``r_n`` and what they say about the alternating scheme."""

    ratios: np.ndarray
    #: ``max |r_n|``
    d_estimate: float
    #: flat indices with ``|r_n| >= 1``
    failing: list[int]
    #: flat indices violating ``S_n(T1) < 0`` or ``r_n > 0``
    sign_violations: list[int]


def contraction_report(alpha: float, T1: float, T2: float, eig: EigenSystem) -> ContractionReport:
    coeffs = ModeCoefficients.build(alpha, T1, T2, eig)
    r = coeffs.ratio()
    return ContractionReport(
        ratios=r,
        d_estimate=float(np.max(np.abs(r))),
        failing=np.flatnonzero(~(np.abs(r) < 1.0)).tolist(),
        sign_violations=np.flatnonzero((coeffs.s1 >= 0) | (r <= 0)).tolist(),
    )


def check_contraction(
    alpha: float, T1: float, T2: float, eig: EigenSystem, *, strict: bool = False
) -> float:
    """Return ``d_estimate = max_n |r_n|`` or raise :class:`ContractionError`.

    By default only ``|r_n| < 1`` is required, which is what geometric
    convergence of the alternating scheme needs. With ``strict=True`` every
    ratio must also be positive, i.e. ``0 < r_n < 1``.
    """
    report = contraction_report(alpha, T1, T2, eig)
    bad = sorted(set(report.failing) | (set(report.sign_violations) if strict else set()))
    if bad:
        labels = _labels(eig, np.array(bad[:5]))
        raise ContractionError(
            f"{len(bad)} mode(s) do not contract (first: {labels}); "
            f"max |r_n| = {report.d_estimate:.4g}",
            modes=bad,
        )
    return report.d_estimate


# }}}


# {{{ exact inversion


def cramer_invert(
    g1: Field, g2: Field, alpha: float, T1: float, T2: float, eig: EigenSystem
) -> tuple[Field, Field]:
    """Solve :math:`s_1\\hat a + q_1\\hat f = \\hat g_1`, :math:`s_2\\hat a + q_2\\hat f = \\hat g_2` per mode."""
    coeffs = ModeCoefficients.build(alpha, T1, T2, eig)
    R = coeffs.determinant()
    singular = np.flatnonzero(np.abs(R) < SINGULAR_RTOL * np.abs(coeffs.s1 * coeffs.q2))
    if singular.size:
        mode = int(singular[0])
        raise SingularModeError(
            f"R_n is numerically zero for mode {_labels(eig, singular[:1])[0]}", mode=mode
        )

    a, f = coeffs.fixed_point(g1.c.ravel(), g2.c.ravel())
    shape = eig.domain.shape
    return _field(eig, a.reshape(shape)), _field(eig, f.reshape(shape))


# }}}


# {{{ unregularized alternating iteration


def iterate_exact(
    g1: Field, g2: Field, setup: ProblemSetup, f0: Field | None = None
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield the coefficient pairs ``(a^(k), f^(k))`` for ``k = 0, 1, ...``."""
    coeffs = ModeCoefficients.build(setup.alpha, setup.T1, setup.T2, setup.eig)
    shape = setup.domain.shape
    c1, c2 = g1.c.ravel(), g2.c.ravel()
    f = np.zeros_like(c1) if f0 is None else f0.c.ravel().copy()
    a = (c1 - coeffs.q1 * f) / coeffs.s1
    while True:
        yield a.reshape(shape), f.reshape(shape)
        f = (c2 - coeffs.s2 * a) / coeffs.q2
        a = (c1 - coeffs.q1 * f) / coeffs.s1


def alternating_exact(
    g1: Field, g2: Field, setup: ProblemSetup, f0: Field | None = None, k: int = 40
) -> tuple[Field, Field]:
    """``k`` sweeps of the unregularized alternating scheme from ``f^(0) = f0``.

    There is no regularization, so noise in ``g1``, ``g2`` is amplified by
    :math:`1/|S_n(T_1)|` and :math:`1/Q_n(T_2)`; use it on clean data.
    """
    if k < 0:
        raise DomainError(f"k must be >= 0: got {k}")
    for j, (a, f) in enumerate(iterate_exact(g1, g2, setup, f0)):
        if j == k:
            return _field(setup.eig, a), _field(setup.eig, f)
    raise AssertionError("unreachable")


# }}}


# {{{ regularized alternating iteration


@dataclass(frozen=True, eq=False)
class RegConfig:
    """Settings of the regularized alternating iteration.

    ``mode`` selects the solver: ``"iterate"`` runs the sweeps and refuses
    configurations whose per-sweep ratio reaches 1 in magnitude,
    ``"solve"`` returns the per-mode fixed point in closed form, and
    ``"auto"`` iterates the contracting modes and solves the rest directly.
    """

    mu: float
    k_max: int = 500
    stop_tol: float = 1e-8
    f0: Field | None = None
    smoothness_p: float = 1.0
    mode: str = "iterate"

    def __post_init__(self) -> None:
        if not self.mu > 0:
            raise DomainError(f"mu must be positive: got {self.mu}")
        if self.k_max < 1:
            raise DomainError(f"k_max must be >= 1: got {self.k_max}")
        if not self.stop_tol > 0:
            raise DomainError(f"stop_tol must be positive: got {self.stop_tol}")
        if not 0 < self.smoothness_p <= 1:
            raise DomainError(f"smoothness_p must lie in (0, 1]: got {self.smoothness_p}")
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}: got {self.mode!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "mu": self.mu,
            "k_max": self.k_max,
            "stop_tol": self.stop_tol,
            "f0": None if self.f0 is None else field_to_dict(self.f0),
            "smoothness_p": self.smoothness_p,
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RegConfig:
        data = dict(data)
        if data.get("f0") is not None:
            data["f0"] = field_from_dict(data["f0"])
        return cls(**data)


@dataclass(frozen=True)
class HistoryRecord:
    """One sweep: successive-change norms and, when the truth is known, errors."""

    da: float
    df: float
    re_a: float | None = None
    re_f: float | None = None


@dataclass(frozen=True, eq=False)
class ReconstructionRun:
    config: RegConfig
    a_rec: Field
    f_rec: Field
    iterations_used: int
    history: list[HistoryRecord]
    #: ``max_n |r_n|`` of the unregularized scheme
    d_estimate: float
    converged: bool
    #: ``max |r^mu_n|`` over the modes that were iterated (0 if none)
    mu_ratio: float = 0.0
    #: modes (as labels) that ``mode="auto"`` solved in closed form
    solved_modes: list[list[int]] = field(default_factory=list)
    #: modes (as labels) violating the classical sign structure
    sign_violations: list[list[int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.history) != self.iterations_used:
            raise ValueError("history length must equal iterations_used")

    @property
    def re_a(self) -> float | None:
        return self.history[-1].re_a if self.history else None

    @property
    def re_f(self) -> float | None:
        return self.history[-1].re_f if self.history else None

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "iterations_used": self.iterations_used,
            "converged": self.converged,
            "d_estimate": self.d_estimate,
            "mu_ratio": self.mu_ratio,
            "solved_modes": self.solved_modes,
            "sign_violations": self.sign_violations,
            "history": [vars(rec) for rec in self.history],
            "a_rec": field_to_dict(self.a_rec),
            "f_rec": field_to_dict(self.f_rec),
        }

    def to_json(self, **kwargs: Any) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ReconstructionRun:
        return cls(
            config=RegConfig.from_dict(data["config"]),
            a_rec=field_from_dict(data["a_rec"]),
            f_rec=field_from_dict(data["f_rec"]),
            iterations_used=int(data["iterations_used"]),
            history=[HistoryRecord(**rec) for rec in data["history"]],
            d_estimate=float(data["d_estimate"]),
            converged=bool(data["converged"]),
            mu_ratio=float(data["mu_ratio"]),
            solved_modes=data["solved_modes"],
            sign_violations=data["sign_violations"],
        )

    @classmethod
    def from_json(cls, text: str) -> ReconstructionRun:
        return cls.from_dict(json.loads(text))


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    scale = float(np.linalg.norm(new))
    diff = float(np.linalg.norm(new - old))
    return diff / scale if scale > 0 else diff


def alternating_regularized(
    g1: Field, g2: Field, setup: ProblemSetup, config: RegConfig
) -> ReconstructionRun:
    """Quasi-boundary-value regularized alternating reconstruction of ``(a, f)``."""
    eig, mu = setup.eig, config.mu
    if config.f0 is not None and config.f0.domain != setup.domain:
        raise DomainError("f0 lives on a different grid than the eigensystem")

    coeffs = ModeCoefficients.build(setup.alpha, setup.T1, setup.T2, eig)
    report = contraction_report(setup.alpha, setup.T1, setup.T2, eig)
    r_mu = coeffs.ratio(mu)
    contracting = np.abs(r_mu) < 1.0

    if config.mode == "iterate" and not contracting.all():
        bad = np.flatnonzero(~contracting)
        raise ContractionError(
            f"{bad.size} mode(s) have |r^mu| >= 1 (first: {_labels(eig, bad[:5])}); "
            "the iteration would diverge",
            modes=bad.tolist(),
        )

    shape = setup.domain.shape
    c1, c2 = g1.c.ravel(), g2.c.ravel()
    if not (np.all(np.isfinite(c1)) and np.all(np.isfinite(c2))):
        raise NonFiniteError("the measurements contain non-finite values")
    a_star, f_star = coeffs.fixed_point(c1, c2, mu)
    exact_a = None if setup.a is None else setup.a.c.ravel()
    exact_f = None if setup.f is None else setup.f.c.ravel()

    def errors(a: np.ndarray, f: np.ndarray) -> tuple[float | None, float | None]:
        re_a = None if exact_a is None else float(np.linalg.norm(a - exact_a) / np.linalg.norm(exact_a))
        re_f = None if exact_f is None else float(np.linalg.norm(f - exact_f) / np.linalg.norm(exact_f))
        return re_a, re_f

    history: list[HistoryRecord] = []
    if config.mode == "solve":
        a, f, converged = a_star, f_star, True
        iterated = np.zeros_like(contracting)
    else:
        iterated = contracting
        direct = ~iterated
        f = np.zeros_like(c1) if config.f0 is None else config.f0.c.ravel().astype(float)
        f = np.where(direct, f_star, f)
        a = np.where(direct, a_star, (c1 - coeffs.q1 * f) / (coeffs.s1 - mu))
        converged = False
        for _ in range(config.k_max):
            f_new = np.where(direct, f_star, (c2 - coeffs.s2 * a) / (coeffs.q2 + mu))
            a_new = np.where(direct, a_star, (c1 - coeffs.q1 * f_new) / (coeffs.s1 - mu))
            if not (np.all(np.isfinite(a_new)) and np.all(np.isfinite(f_new))):
                raise NonFiniteError(f"non-finite iterate at sweep {len(history) + 1}")
            da, df = _rel_change(a_new, a), _rel_change(f_new, f)
            history.append(HistoryRecord(
                float(np.linalg.norm(a_new - a)), float(np.linalg.norm(f_new - f)),
                *errors(a_new, f_new),
            ))
            a, f = a_new, f_new
            if da <= config.stop_tol and df <= config.stop_tol:
                converged = True
                break

    return ReconstructionRun(
        config=config,
        a_rec=_field(eig, a.reshape(shape)),
        f_rec=_field(eig, f.reshape(shape)),
        iterations_used=len(history),
        history=history,
        d_estimate=report.d_estimate,
        converged=converged,
        mu_ratio=float(np.max(np.abs(r_mu[iterated]), initial=0.0)),
        solved_modes=_labels(eig, np.flatnonzero(~iterated)) if config.mode == "auto" else [],
        sign_violations=_labels(eig, np.array(report.sign_violations, dtype=int)),
    )


# }}}

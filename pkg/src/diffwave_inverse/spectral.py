r"""Uniform grids on the unit interval/square and their Dirichlet eigensystems.

Every eigensystem used here shares the sampled sine eigenvectors
:math:`\varphi_n(x_i) = \sqrt{2}\sin(n\pi x_i)` (tensor products in 2D), which
are orthonormal under the nodal inner product with weight :math:`h^d`. Fields
therefore move between nodal values and sine coefficients with a type-I
discrete sine transform, and all solution operators act diagonally on the
coefficients.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Any

import numpy as np
import scipy.fft

from diffwave_inverse.errors import DomainError

#: grids with at least this many subintervals use the fast sine transform
FAST_TRANSFORM_MIN_K = 256


class Variant(str, enum.Enum):
    """Which Laplacian the eigenvalues belong to."""

    CONTINUOUS = "continuous"
    GALERKIN = "galerkin"
    LUMPED = "lumped"


@dataclass(frozen=True)
class Domain:
    """The unit interval or unit square split into ``K`` cells per axis."""

    dim: int
    K: int

    def __post_init__(self) -> None:
        if self.dim not in (1, 2):
            raise DomainError(f"dim must be 1 or 2: got {self.dim}")
        if self.K < 2:
            raise DomainError(f"K must be >= 2: got {self.K}")

    @property
    def h(self) -> float:
        return 1.0 / self.K

    @property
    def shape(self) -> tuple[int, ...]:
        """Shape of both the nodal and the coefficient arrays."""
        return (self.K - 1,) * self.dim

    @property
    def n_modes(self) -> int:
        return (self.K - 1) ** self.dim

    @property
    def nodes(self) -> np.ndarray:
        """Interior node coordinates along one axis."""
        return np.arange(1, self.K) / self.K

    @property
    def weight(self) -> float:
        """Quadrature weight of one node, :math:`h^d`."""
        return self.h**self.dim

    def mode_indices(self) -> np.ndarray:
        """Mode labels in row-major order, shape ``(n_modes, dim)``."""
        n = np.arange(1, self.K)
        if self.dim == 1:
            return n[:, None]
        nn, mm = np.meshgrid(n, n, indexing="ij")
        return np.column_stack([nn.ravel(), mm.ravel()])


# {{{ eigensystems


@dataclass(frozen=True)
class EigenSystem:
    domain: Domain
    variant: Variant
    eigenvalues: np.ndarray = field(compare=False, repr=False)

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.variant.value, self.domain.dim, self.domain.K)

    def __hash__(self) -> int:
        return hash(self.key)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, EigenSystem) and self.key == other.key

    @property
    def modes(self) -> np.ndarray:
        return self.domain.mode_indices()


def lumped_eigenvalues_1d(K: int) -> np.ndarray:
    n = np.arange(1, K)
    return 4.0 * K**2 * np.sin(n * np.pi / (2 * K)) ** 2


def build_eigensystem(domain: Domain, variant: Variant | str) -> EigenSystem:
    """Closed-form eigenvalues of the requested Dirichlet Laplacian.

    ``galerkin`` is only available in 1D, where the consistent-mass
    eigenvalues follow from the lumped ones as
    :math:`\\bar\\lambda / (1 - h^2\\bar\\lambda/6)`.
    """
    variant = Variant(variant)
    K, n = domain.K, np.arange(1, domain.K)

    if variant is Variant.CONTINUOUS:
        axis = (n * np.pi) ** 2
    elif variant is Variant.LUMPED:
        axis = lumped_eigenvalues_1d(K)
    else:
        if domain.dim != 1:
            raise DomainError("the galerkin eigensystem is only available in 1D")
        lumped = lumped_eigenvalues_1d(K)
        axis = lumped / (1.0 - domain.h**2 * lumped / 6.0)

    if domain.dim == 1:
        values = axis
    else:
        values = axis[:, None] + axis[None, :]

    values = np.array(values, dtype=float)
    values.setflags(write=False)
    return EigenSystem(domain, variant, values)


# }}}


# {{{ transforms


def _sine_matrix(K: int) -> np.ndarray:
    n = np.arange(1, K)
    return math.sqrt(2.0) * np.sin(np.pi * np.outer(n, n) / K)


def _dst_axis(values: np.ndarray, K: int, axis: int) -> np.ndarray:
    # sum_i v_i sqrt(2) sin(n pi x_i) along one axis
    if K >= FAST_TRANSFORM_MIN_K:
        return scipy.fft.dst(values, type=1, axis=axis) / math.sqrt(2.0)
    return np.moveaxis(np.tensordot(_sine_matrix(K), values, axes=([1], [axis])), 0, axis)


def sine_analysis(nodal: np.ndarray, domain: Domain) -> np.ndarray:
    """Coefficients :math:`c = h^d \\Phi v` of nodal values."""
    out = np.asarray(nodal, dtype=float)
    for axis in range(domain.dim):
        out = _dst_axis(out, domain.K, axis)
    return out * domain.weight


def sine_synthesis(coeffs: np.ndarray, domain: Domain) -> np.ndarray:
    """Nodal values :math:`\\sum_n c_n \\varphi_n(x_i)`; inverse of analysis."""
    out = np.asarray(coeffs, dtype=float)
    for axis in range(domain.dim):
        out = _dst_axis(out, domain.K, axis)
    return out


# }}}


# {{{ fields


@dataclass(frozen=True, eq=False)
class Field:
    """A grid function held as nodal values, sine coefficients, or both."""

    domain: Domain
    nodal: np.ndarray | None = None
    coeffs: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.nodal is None and self.coeffs is None:
            raise ValueError("a Field needs nodal values or coefficients")
        for name in ("nodal", "coeffs"):
            value = getattr(self, name)
            if value is not None and np.shape(value) != self.domain.shape:
                raise ValueError(
                    f"{name} has shape {np.shape(value)}, expected {self.domain.shape}"
                )

    @classmethod
    def zeros(cls, domain: Domain) -> Field:
        return cls(domain, np.zeros(domain.shape), np.zeros(domain.shape))

    @classmethod
    def from_coeffs(cls, domain: Domain, coeffs: np.ndarray) -> Field:
        return cls(domain, coeffs=np.asarray(coeffs, dtype=float))

    @cached_property
    def c(self) -> np.ndarray:
        """Sine coefficients, computed on first access if absent."""
        if self.coeffs is not None:
            return self.coeffs
        return sine_analysis(self.nodal, self.domain)

    @cached_property
    def v(self) -> np.ndarray:
        """Nodal values, computed on first access if absent."""
        if self.nodal is not None:
            return self.nodal
        return sine_synthesis(self.coeffs, self.domain)

    def norm(self) -> float:
        """Discrete :math:`L^2` norm, equal to the coefficient 2-norm."""
        return float(np.sqrt(np.sum(self.c**2)))


def to_coeffs(fld: Field) -> Field:
    if fld.nodal is None:
        raise ValueError("to_coeffs needs nodal values")
    return Field(fld.domain, fld.nodal, sine_analysis(fld.nodal, fld.domain))


def to_nodal(fld: Field) -> Field:
    if fld.coeffs is None:
        raise ValueError("to_nodal needs coefficients")
    return Field(fld.domain, sine_synthesis(fld.coeffs, fld.domain), fld.coeffs)


def project_function(fn: Callable[..., Any] | None, domain: Domain) -> Field:
    """Sample ``fn`` at the interior nodes and attach its sine coefficients.

    ``fn`` takes one coordinate array in 1D and two (``x``, ``y``) in 2D, and
    ``None`` gives the zero field.
    """
    if fn is None:
        return Field.zeros(domain)
    x = domain.nodes
    if domain.dim == 1:
        nodal = np.asarray(fn(x), dtype=float) * np.ones(domain.shape)
    else:
        xx, yy = np.meshgrid(x, x, indexing="ij")
        nodal = np.asarray(fn(xx, yy), dtype=float) * np.ones(domain.shape)
    return to_coeffs(Field(domain, nodal))


def field_from_series(coeff_fn: Callable[[np.ndarray], np.ndarray], domain: Domain) -> Field:
    """Field whose coefficients are given in closed form, ``coeff_fn(n)``.

    Only 1D series are supported; ``n`` is the array ``1, ..., K-1``.
    """
    if domain.dim != 1:
        raise DomainError("closed-form coefficient lists are 1D only")
    n = np.arange(1, domain.K)
    return to_nodal(Field.from_coeffs(domain, coeff_fn(n)))


def restrict(fine: Field, coarse: Domain) -> Field:
    """Injection of nodal values onto a coarser grid nested in ``fine``."""
    if fine.domain.dim != coarse.dim or fine.domain.K % coarse.K:
        raise DomainError(
            f"grid K={coarse.K} is not nested in K={fine.domain.K}"
        )
    step = fine.domain.K // coarse.K
    index = slice(step - 1, None, step)
    nodal = fine.v[(index,) * coarse.dim]
    return to_coeffs(Field(coarse, np.array(nodal)))


def prolong(coarse: Field, fine: Domain) -> Field:
    """Spectral prolongation: pad the sine coefficients with zeros."""
    if fine.dim != coarse.domain.dim or fine.K % coarse.domain.K:
        raise DomainError(
            f"grid K={coarse.domain.K} is not nested in K={fine.K}"
        )
    coeffs = np.zeros(fine.shape)
    coeffs[(slice(0, coarse.domain.K - 1),) * fine.dim] = coarse.c
    return to_nodal(Field.from_coeffs(fine, coeffs))


# }}}


# {{{ serialization


def field_to_csv(fld: Field, stream: IO[str] | None = None) -> str:
    """Write ``index, x[, y], value`` rows; returns the text as well."""
    buffer = io.StringIO() if stream is None else stream
    writer = csv.writer(buffer, lineterminator="\n")
    x = fld.domain.nodes
    values = fld.v
    if fld.domain.dim == 1:
        writer.writerow(["index", "x", "value"])
        for i, (xi, vi) in enumerate(zip(x, values), start=1):
            writer.writerow([i, repr(float(xi)), repr(float(vi))])
    else:
        writer.writerow(["i", "j", "x", "y", "value"])
        for i, xi in enumerate(x, start=1):
            for j, yj in enumerate(x, start=1):
                writer.writerow([i, j, repr(float(xi)), repr(float(yj)),
                                 repr(float(values[i - 1, j - 1]))])
    return buffer.getvalue() if stream is None else ""


def field_to_dict(fld: Field) -> dict[str, Any]:
    return {
        "dim": fld.domain.dim,
        "K": fld.domain.K,
        "modes": fld.domain.mode_indices().tolist(),
        "coeffs": [float(c) for c in fld.c.ravel()],
    }


def field_from_dict(data: dict[str, Any]) -> Field:
    domain = Domain(int(data["dim"]), int(data["K"]))
    modes = np.asarray(data["modes"], dtype=int).reshape(-1, domain.dim)
    if not np.array_equal(modes, domain.mode_indices()):
        raise ValueError("mode list does not match the row-major ordering")
    coeffs = np.asarray(data["coeffs"], dtype=float).reshape(domain.shape)
    return to_nodal(Field.from_coeffs(domain, coeffs))


def field_to_json(fld: Field) -> str:
    # json emits floats with repr, the shortest string that round-trips
    return json.dumps(field_to_dict(fld))


def field_from_json(text: str) -> Field:
    return field_from_dict(json.loads(text))


# }}}

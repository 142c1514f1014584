"""PCE representation, projection, polynomial composition, and truncation errors.

A :class:`PceVector` holds the coefficients of one scalar random variable in a
shared :class:`~pceuq.basis.BasisSpec`.  Truncation at index ``n`` keeps basis
elements 0..n in graded-lexicographic order; for univariate bases this agrees
with truncation by degree, and multivariate degree-based truncation maps to a
prefix length via ``BasisSpec.degree_prefix_length``.

Exact errors for discarded coefficients come from Parseval sums; errors for
arbitrary square-integrable maps come from the normal-equations identity
``e^2 = ||y||^2 - sum_j <y, phi_j>^2 / ||phi_j||^2`` evaluated by adaptive
Gauss quadrature.  A derivative-based upper bound is available for univariate
Gaussian germs.

All operations are pure given immutable inputs; values are safe to share
between threads.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .basis import BasisSpec, GermSpec, Hermite, build_basis
from .errors import (
    NumericsWarning,
    ResourceLimitError,
    UnsupportedConfigError,
    ValidationError,
)
from .quadrature import (
    QuadraturePolicy,
    QuadratureRule,
    evaluate_on_rule,
    refine,
    tensor_rule,
)

_DEFAULT_BASIS_CAP = 50_000


@dataclass(frozen=True)
class PceVector:
    """Coefficients of a scalar random variable in an orthogonal basis."""

    basis: BasisSpec
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.ndim != 1 or coeffs.shape[0] != len(self.basis):
            raise ValidationError(
                f"expected {len(self.basis)} coefficients, got shape {coeffs.shape}"
            )
        coeffs = coeffs.copy()
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    def __len__(self) -> int:
        return self.coeffs.shape[0]

    def mean(self) -> float:
        return float(self.coeffs[0])

    def variance(self) -> float:
        c = self.coeffs[1:]
        return float(c @ (c * self.basis.sq_norms[1:]))

    def min_degree(self, tol: float = 0.0) -> int:
        """Smallest degree beyond which all coefficients vanish (within tol)."""
        degs = self.basis.indices.sum(axis=1)
        nonzero = np.abs(self.coeffs) > tol
        return int(degs[nonzero].max(initial=0))

    def eval(self, points: np.ndarray) -> np.ndarray:
        """Realizations at canonical germ points, shape (m,)."""
        return self.coeffs @ self.basis.eval_at(points)

    def norm_sq(self) -> float:
        """Squared L2 norm by Parseval."""
        return float(self.coeffs @ (self.coeffs * self.basis.sq_norms))

    def to_json(self) -> dict:
        return {
            "basis_ref": {"germ": self.basis.germ.to_json(), "degree": self.basis.max_degree},
            "coeffs": [float(c) for c in self.coeffs],
        }

    @classmethod
    def from_json(cls, obj: dict, basis: BasisSpec | None = None) -> "PceVector":
        if not isinstance(obj, dict):
            raise ValidationError("PCE document must be a JSON object")
        extra = set(obj) - {"basis_ref", "coeffs"}
        if extra:
            raise ValidationError(f"unknown key in PCE document: {sorted(extra)[0]!r}")
        if "coeffs" not in obj:
            raise ValidationError("PCE document requires a 'coeffs' array")
        if basis is None:
            ref = obj.get("basis_ref")
            if ref is None:
                raise ValidationError("PCE document requires 'basis_ref' when no basis is supplied")
            extra = set(ref) - {"germ", "degree"}
            if extra:
                raise ValidationError(f"unknown key in basis_ref: {sorted(extra)[0]!r}")
            basis = build_basis(GermSpec.from_json(ref["germ"]), int(ref["degree"]))
        return cls(basis, np.asarray(obj["coeffs"], dtype=float))


def pce_constant(basis: BasisSpec, value: float) -> PceVector:
    coeffs = np.zeros(len(basis))
    coeffs[0] = value
    return PceVector(basis, coeffs)


def moments(y: PceVector) -> tuple[float, float]:
    """Mean and variance from the coefficients alone."""
    return y.mean(), y.variance()


@dataclass(frozen=True)
class PolynomialMap:
    """A polynomial in n_inputs variables, stored as (coefficient, exponents) terms."""

    n_inputs: int
    terms: tuple[tuple[float, tuple[int, ...]], ...]

    def __post_init__(self):
        if self.n_inputs < 1:
            raise ValidationError(f"n_inputs must be positive, got {self.n_inputs}")
        norm_terms = []
        for coeff, expo in self.terms:
            expo = tuple(int(e) for e in expo)
            if len(expo) != self.n_inputs:
                raise ValidationError(
                    f"term exponents {expo} do not match n_inputs={self.n_inputs}"
                )
            if any(e < 0 for e in expo):
                raise ValidationError(f"exponents must be non-negative, got {expo}")
            norm_terms.append((float(coeff), expo))
        object.__setattr__(self, "terms", tuple(norm_terms))

    @property
    def degree(self) -> int:
        return max((sum(e) for _, e in self.terms), default=0)

    def __call__(self, *values):
        if len(values) != self.n_inputs:
            raise ValidationError(
                f"map takes {self.n_inputs} inputs, got {len(values)}"
            )
        values = [np.asarray(v, dtype=float) for v in values]
        out = 0.0
        for coeff, expo in self.terms:
            term = coeff
            for v, e in zip(values, expo):
                if e:
                    term = term * v**e
            out = out + term
        return out

    @classmethod
    def identity(cls) -> "PolynomialMap":
        return cls(1, ((1.0, (1,)),))

    def to_json(self) -> dict:
        return {
            "n_inputs": self.n_inputs,
            "terms": [[c, list(e)] for c, e in self.terms],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PolynomialMap":
        if not isinstance(obj, dict):
            raise ValidationError("polynomial map document must be a JSON object")
        extra = set(obj) - {"n_inputs", "terms"}
        if extra:
            raise ValidationError(f"unknown key in polynomial map: {sorted(extra)[0]!r}")
        if "terms" not in obj:
            raise ValidationError("polynomial map requires a 'terms' array")
        terms = tuple((float(t[0]), tuple(t[1])) for t in obj["terms"])
        n_inputs = int(obj.get("n_inputs", len(terms[0][1]) if terms else 1))
        return cls(n_inputs, terms)


@dataclass(frozen=True)
class TruncationError:
    """Magnitude of a truncation error after retaining basis elements 0..n.

    ``detail`` carries the per-discarded-term contributions ``y_j^2 ||phi_j||^2``
    when the discarded coefficients are known; ``is_bound`` marks values that
    are upper bounds rather than exact errors.
    """

    value: float
    n: int
    detail: tuple[tuple[int, float], ...] | None = None
    is_bound: bool = False

    def __post_init__(self):
        if self.value < 0:
            raise ValidationError(f"error magnitude must be non-negative, got {self.value}")
        if self.detail is not None:
            total = sum(c for _, c in self.detail)
            if abs(self.value**2 - total) > 1e-12 * max(1.0, total):
                raise ValidationError(
                    "detail contributions do not sum to the squared error"
                )

    @property
    def flag(self) -> str:
        return "bound" if self.is_bound else "exact"


# ---------------------------------------------------------------------------
# Projection and composition
# ---------------------------------------------------------------------------

def project(y_fn: Callable, basis: BasisSpec, rule: QuadratureRule) -> PceVector:
    """Orthogonal projection of ``y_fn`` onto the basis span.

    ``coeffs[j] = <y, phi_j> / ||phi_j||^2`` with the inner products taken by
    ``rule``; exact when ``y_fn`` is polynomial and the rule is exact to
    ``basis.max_degree + deg(y_fn)``.  For non-polynomial maps prefer
    :func:`project_adaptive`.
    """
    yv = evaluate_on_rule(rule, y_fn)
    phi = basis.eval_at(rule.nodes)
    coeffs = phi @ (rule.weights * yv) / basis.sq_norms
    return PceVector(basis, coeffs)


def project_adaptive(
    y_fn: Callable,
    basis: BasisSpec,
    policy: QuadraturePolicy = QuadraturePolicy(),
    trace: list | None = None,
) -> PceVector:
    """Projection with the doubling rule policy, for non-polynomial maps."""
    coeffs = refine(
        basis.germ,
        lambda rule: project(y_fn, basis, rule).coeffs,
        policy,
        degree_hint=basis.max_degree,
        trace=trace,
    )
    return PceVector(basis, coeffs)


def galerkin_compose(
    f: PolynomialMap,
    inputs: Sequence[PceVector],
    max_basis_size: int = _DEFAULT_BASIS_CAP,
) -> PceVector:
    """Exact PCE of ``f(z_1, ..., z_nz)`` in the enlarged basis.

    All inputs must share one basis of degree ``d_z``; the result lands in the
    total-degree ``d_z * deg(f)`` basis of the same germ, computed by
    projecting the composed polynomial with a rule exact to twice that degree.
    """
    if len(inputs) != f.n_inputs:
        raise ValidationError(f"map takes {f.n_inputs} inputs, got {len(inputs)}")
    basis = inputs[0].basis
    for z in inputs[1:]:
        if z.basis is not basis and z.basis != basis:
            raise ValidationError("all inputs must share one basis")
    d_out = basis.max_degree * f.degree
    dim = math.comb(basis.germ.n_xi + d_out, d_out)
    if dim > max_basis_size:
        raise ResourceLimitError(
            f"composed basis would have {dim} elements, exceeding the cap of "
            f"{max_basis_size}"
        )
    rule = tensor_rule(basis.germ, [d_out + 1] * basis.germ.n_xi)
    out_basis = build_basis(basis.germ, d_out, rule=rule)
    zvals = [z.eval(rule.nodes) for z in inputs]
    yv = np.broadcast_to(np.asarray(f(*zvals), dtype=float), (rule.n_points,))
    phi = out_basis.eval_at(rule.nodes)
    coeffs = phi @ (rule.weights * yv) / out_basis.sq_norms
    return PceVector(out_basis, coeffs)


# ---------------------------------------------------------------------------
# Truncation errors
# ---------------------------------------------------------------------------

def truncation_error_poly(y: PceVector, n: int) -> TruncationError:
    """Exact error of keeping coefficients 0..n of a fully resolved expansion."""
    if n < 0:
        raise ValidationError(f"retained index must be non-negative, got {n}")
    tail = range(n + 1, len(y))
    detail = tuple(
        (j, float(y.coeffs[j] ** 2 * y.basis.sq_norms[j])) for j in tail
    )
    value = math.sqrt(sum(c for _, c in detail))
    return TruncationError(value=value, n=n, detail=detail)


def _normal_equation_error_sq(
    rule: QuadratureRule, y_fn: Callable, basis: BasisSpec, n: int
) -> np.ndarray:
    yv = evaluate_on_rule(rule, y_fn)
    y_norm_sq = float(rule.weights @ yv**2)
    phi = basis.eval_at(rule.nodes)[: n + 1]
    g = phi @ (rule.weights * yv)
    return np.array([y_norm_sq - float(g @ (g / basis.sq_norms[: n + 1]))])


def truncation_error_nonpoly(
    y_fn: Callable,
    basis: BasisSpec,
    policy: QuadraturePolicy = QuadraturePolicy(),
    n: int | None = None,
    trace: list | None = None,
) -> TruncationError:
    """Error of projecting an arbitrary square-integrable map onto a span.

    The retained span is the first ``n + 1`` basis elements (the whole basis
    when ``n`` is omitted).  ``e^2 = ||y||^2 - sum_j g_j^2 / ||phi_j||^2`` with
    ``g_j = <y, phi_j>``, evaluated under the doubling policy; a slightly
    negative radicand from rounding clamps to zero with a warning.
    """
    if n is None:
        n = len(basis) - 1
    if not 0 <= n < len(basis):
        raise ValidationError(f"retained index {n} outside basis of size {len(basis)}")
    e_sq = float(
        refine(
            basis.germ,
            lambda rule: _normal_equation_error_sq(rule, y_fn, basis, n),
            policy,
            degree_hint=basis.max_degree,
            trace=trace,
        )[0]
    )
    if e_sq < 0.0:
        if e_sq < -1e-8:
            warnings.warn(
                f"squared truncation error {e_sq} is negative beyond rounding "
                f"levels; clamping to zero",
                NumericsWarning,
                stacklevel=2,
            )
        e_sq = 0.0
    return TruncationError(value=math.sqrt(e_sq), n=n)


def augustin_bound(
    deriv_fn: Callable,
    k: int,
    n: int,
    germ: GermSpec | None = None,
    policy: QuadraturePolicy = QuadraturePolicy(),
    trace: list | None = None,
) -> TruncationError:
    """Derivative-based upper bound on the degree-n truncation error.

    Valid for a univariate standard Gaussian germ in the Hermite basis with
    ``k <= n + 1``; the caller supplies the k-th derivative of the mapped
    variable with respect to the germ, and the bound is its L2 norm divided
    by ``sqrt((n+1) n ... (n-k+2))``.
    """
    germ = germ or GermSpec.hermite(1)
    if germ.n_xi != 1 or not isinstance(germ.families[0], Hermite):
        raise UnsupportedConfigError(
            "the derivative bound requires a univariate Gaussian germ in the "
            "Hermite basis"
        )
    if k < 1:
        raise ValidationError(f"derivative order must be >= 1, got {k}")
    if k > n + 1:
        raise ValidationError(f"derivative order {k} must not exceed n + 1 = {n + 1}")
    norm_sq_val = float(
        refine(
            germ,
            lambda rule: np.array([rule.weights @ evaluate_on_rule(rule, deriv_fn) ** 2]),
            policy,
            degree_hint=n,
            trace=trace,
        )[0]
    )
    denom = math.prod(n - i + 1 for i in range(k))
    return TruncationError(value=math.sqrt(max(norm_sq_val, 0.0) / denom), n=n, is_bound=True)


# ---------------------------------------------------------------------------
# Hermite series helpers for the quadratic-map benchmark
# ---------------------------------------------------------------------------

def hermite_derivative_coeffs(coeffs: Sequence[float], order: int = 1) -> np.ndarray:
    """Coefficients of the derivative of a probabilists' Hermite series.

    Uses He_j' = j He_{j-1}, applied ``order`` times.
    """
    c = np.asarray(coeffs, dtype=float)
    for _ in range(order):
        c = c[1:] * np.arange(1, c.shape[0]) if c.shape[0] > 1 else np.zeros(1)
    return c if c.shape[0] else np.zeros(1)


def square_map_errors(
    input_coeffs: Sequence[float],
    policy: QuadraturePolicy = QuadraturePolicy(),
) -> tuple[TruncationError, TruncationError]:
    """Exact error and derivative bound for squaring a Hermite series.

    The input is ``z = sum_j c_j He_j`` of degree ``d_z = len(c) - 1``; the
    squared variable is expanded exactly, truncated back at index ``d_z``, and
    compared against the order ``d_z + 1`` derivative bound.  Returns
    ``(exact, bound)``.
    """
    c = np.asarray(input_coeffs, dtype=float)
    if c.ndim != 1 or c.shape[0] < 2:
        raise ValidationError("input series needs at least degree 1")
    d_z = c.shape[0] - 1
    germ = GermSpec.hermite(1)
    basis = build_basis(germ, d_z)
    z = PceVector(basis, c)
    square = PolynomialMap(1, ((1.0, (2,)),))
    y = galerkin_compose(square, [z])
    exact = truncation_error_poly(y, d_z)

    k = d_z + 1
    hermite = germ.families[0]
    ders = [hermite_derivative_coeffs(c, r) for r in range(k + 1)]

    def deriv_fn(x):
        table = hermite.eval_all(d_z, x)
        zd = [dc @ table[: dc.shape[0]] for dc in ders]
        out = np.zeros_like(np.asarray(x, dtype=float))
        for r in range(k + 1):
            out = out + math.comb(k, r) * zd[r] * zd[k - r]
        return out

    bound = augustin_bound(deriv_fn, k=k, n=d_z, germ=germ, policy=policy)
    return exact, bound

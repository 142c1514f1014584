"""Orthogonal polynomial families and total-degree multivariate bases.

Polynomials follow the classical (non-normalized) conventions: probabilists'
Hermite ``He_j`` against the standard normal density, Legendre ``P_j`` against
the uniform density 1/2 on [-1, 1], and Jacobi ``P_j^(a,b)`` against the
weight ``(1-x)^a (1+x)^b`` divided by its Beta-function normalizer.  Every
weight integrates to one, so ``||phi_0|| = 1`` and the zeroth coefficient of
any expansion equals its mean.  Squared norms are stored next to the index
set because the downstream error formulas carry explicit ``||phi_j||^2``
factors.

A ``Beta(alpha, beta)`` variable on a physical interval ``[lo, hi]``
corresponds to the ``Jacobi(a=beta-1, b=alpha-1)`` germ through the affine
map from the canonical interval [-1, 1]; the physical interval lives in
``GermSpec.supports``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ArithmeticOverflowError, ValidationError

_INT64_MAX = 2**63 - 1


# ---------------------------------------------------------------------------
# Univariate families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Hermite:
    """Probabilists' Hermite family; weight is the standard normal density."""

    tag = "hermite"
    canonical_support = (-math.inf, math.inf)

    def recurrence(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        """Monic three-term recurrence coefficients (alpha_0..m-1, beta_1..m-1)."""
        return np.zeros(m), np.arange(1, m, dtype=float)

    def eval_all(self, max_degree: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty((max_degree + 1,) + x.shape)
        out[0] = 1.0
        if max_degree >= 1:
            out[1] = x
        for k in range(1, max_degree):
            out[k + 1] = x * out[k] - k * out[k - 1]
        return out

    def moment(self, k: int) -> float:
        if k % 2:
            return 0.0
        return float(math.prod(range(1, k, 2)))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.standard_normal(size)

    def to_json(self) -> dict:
        return {"type": "hermite"}


@dataclass(frozen=True)
class Legendre:
    """Legendre family; weight is the uniform density 1/2 on [-1, 1]."""

    tag = "legendre"
    canonical_support = (-1.0, 1.0)

    def recurrence(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        k = np.arange(1, m, dtype=float)
        return np.zeros(m), k**2 / (4.0 * k**2 - 1.0)

    def eval_all(self, max_degree: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty((max_degree + 1,) + x.shape)
        out[0] = 1.0
        if max_degree >= 1:
            out[1] = x
        for k in range(1, max_degree):
            out[k + 1] = ((2 * k + 1) * x * out[k] - k * out[k - 1]) / (k + 1)
        return out

    def moment(self, k: int) -> float:
        return 0.0 if k % 2 else 1.0 / (k + 1)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size)

    def to_json(self) -> dict:
        return {"type": "legendre"}


@dataclass(frozen=True)
class Jacobi:
    """Jacobi family on [-1, 1] with weight (1-x)^a (1+x)^b, a > -1, b > -1."""

    a: float
    b: float

    tag = "jacobi"
    canonical_support = (-1.0, 1.0)

    def __post_init__(self):
        if not (self.a > -1.0 and self.b > -1.0):
            raise ValidationError(
                f"Jacobi parameters must satisfy a > -1 and b > -1, got "
                f"a={self.a}, b={self.b}"
            )

    def recurrence(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.a, self.b
        alpha = np.zeros(m)
        alpha[0] = (b - a) / (a + b + 2.0)
        beta = np.zeros(max(m - 1, 0))
        for k in range(1, m):
            s = 2.0 * k + a + b
            alpha[k] = (b**2 - a**2) / (s * (s + 2.0))
            if k == 1:
                # cancelled form, valid even when a + b + 1 == 0
                beta[0] = 4.0 * (1 + a) * (1 + b) / ((2 + a + b) ** 2 * (3 + a + b))
            else:
                beta[k - 1] = (
                    4.0 * k * (k + a) * (k + b) * (k + a + b)
                    / (s**2 * (s + 1.0) * (s - 1.0))
                )
        return alpha, beta

    def eval_all(self, max_degree: int, x) -> np.ndarray:
        a, b = self.a, self.b
        x = np.asarray(x, dtype=float)
        out = np.empty((max_degree + 1,) + x.shape)
        out[0] = 1.0
        if max_degree >= 1:
            out[1] = 0.5 * ((a + b + 2.0) * x + (a - b))
        for k in range(1, max_degree):
            c = 2.0 * k + a + b
            num = (c + 1.0) * ((c + 2.0) * c * x + a**2 - b**2) * out[k] \
                - 2.0 * (k + a) * (k + b) * (c + 2.0) * out[k - 1]
            out[k + 1] = num / (2.0 * (k + 1.0) * (k + a + b + 1.0) * c)
        return out

    def moment(self, k: int) -> float:
        # x = 2t - 1 with t ~ Beta(b+1, a+1) on [0, 1]; the alternating binomial
        # rebase cancels badly in floats, so accumulate exactly over rationals
        from fractions import Fraction

        al, be = Fraction(self.b) + 1, Fraction(self.a) + 1
        total = Fraction(0)
        t_mom = Fraction(1)
        for i in range(k + 1):
            total += math.comb(k, i) * Fraction(2) ** i * (-1) ** (k - i) * t_mom
            t_mom *= (al + i) / (al + be + i)
        return float(total)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return 2.0 * rng.beta(self.b + 1.0, self.a + 1.0, size) - 1.0

    def to_json(self) -> dict:
        return {"type": "jacobi", "a": self.a, "b": self.b}


Family = Hermite | Legendre | Jacobi

_FAMILY_TAGS = {"hermite": Hermite, "legendre": Legendre, "jacobi": Jacobi}


def family_from_json(obj: dict) -> Family:
    if not isinstance(obj, dict) or "type" not in obj:
        raise ValidationError(f"family entry must be an object with a 'type' key, got {obj!r}")
    kind = obj["type"]
    if kind == "jacobi":
        extra = set(obj) - {"type", "a", "b"}
        if extra:
            raise ValidationError(f"unknown key in jacobi family: {sorted(extra)[0]!r}")
        if "a" not in obj or "b" not in obj:
            raise ValidationError("jacobi family requires keys 'a' and 'b'")
        return Jacobi(float(obj["a"]), float(obj["b"]))
    if kind in ("hermite", "legendre"):
        extra = set(obj) - {"type"}
        if extra:
            raise ValidationError(f"unknown key in {kind} family: {sorted(extra)[0]!r}")
        return _FAMILY_TAGS[kind]()
    raise ValidationError(f"unknown family type {kind!r}")


# ---------------------------------------------------------------------------
# Germ specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GermSpec:
    """A tensorized stochastic germ: one polynomial family per dimension.

    ``supports`` holds the physical interval of each dimension.  Bounded
    families default to the canonical interval [-1, 1]; a different finite
    interval is understood as the affine image of the canonical one (see
    :meth:`to_physical`).  Hermite dimensions are unbounded and must keep
    the infinite support.

    Immutable after construction; safe for concurrent reads.
    """

    families: tuple[Family, ...]
    supports: tuple[tuple[float, float], ...] = None  # type: ignore[assignment]

    def __post_init__(self):
        families = tuple(self.families)
        if not families:
            raise ValidationError("germ needs at least one dimension")
        object.__setattr__(self, "families", families)
        if self.supports is None:
            sup = tuple(f.canonical_support for f in families)
        else:
            if len(self.supports) != len(families):
                raise ValidationError(
                    f"supports has {len(self.supports)} entries for "
                    f"{len(families)} germ dimensions"
                )
            sup = tuple(
                f.canonical_support if s is None else (float(s[0]), float(s[1]))
                for f, s in zip(families, self.supports)
            )
        for f, (lo, hi) in zip(families, sup):
            if isinstance(f, Hermite):
                if not (math.isinf(lo) and math.isinf(hi)):
                    raise ValidationError("hermite dimensions use the infinite support")
            else:
                if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                    raise ValidationError(f"bounded dimension needs a finite interval, got {(lo, hi)}")
        object.__setattr__(self, "supports", sup)

    @property
    def n_xi(self) -> int:
        return len(self.families)

    @classmethod
    def hermite(cls, n: int = 1) -> "GermSpec":
        return cls(tuple(Hermite() for _ in range(n)))

    @classmethod
    def legendre(cls, n: int = 1) -> "GermSpec":
        return cls(tuple(Legendre() for _ in range(n)))

    @classmethod
    def jacobi(cls, a: float, b: float, support: tuple[float, float] | None = None) -> "GermSpec":
        return cls((Jacobi(a, b),), (support,) if support else None)

    def bounded_dims(self) -> list[int]:
        return [i for i, f in enumerate(self.families) if not isinstance(f, Hermite)]

    def to_physical(self, xi: np.ndarray) -> np.ndarray:
        """Affine map from canonical germ points to the physical supports."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        out = xi.copy()
        for i, (f, (lo, hi)) in enumerate(zip(self.families, self.supports)):
            if isinstance(f, Hermite):
                continue
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            out[:, i] = mid + half * xi[:, i]
        return out

    def from_physical(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = x.copy()
        for i, (f, (lo, hi)) in enumerate(zip(self.families, self.supports)):
            if isinstance(f, Hermite):
                continue
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            out[:, i] = (x[:, i] - mid) / half
        return out

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Canonical germ samples, shape (size, n_xi)."""
        cols = [f.sample(rng, size) for f in self.families]
        return np.column_stack(cols)

    def to_json(self) -> dict:
        sups = [
            None if s == f.canonical_support else [s[0], s[1]]
            for f, s in zip(self.families, self.supports)
        ]
        return {"families": [f.to_json() for f in self.families], "supports": sups}

    @classmethod
    def from_json(cls, obj: dict) -> "GermSpec":
        if not isinstance(obj, dict):
            raise ValidationError("germ document must be a JSON object")
        extra = set(obj) - {"families", "supports"}
        if extra:
            raise ValidationError(f"unknown key in germ document: {sorted(extra)[0]!r}")
        if "families" not in obj:
            raise ValidationError("germ document requires a 'families' array")
        families = tuple(family_from_json(f) for f in obj["families"])
        supports = obj.get("supports")
        if supports is not None:
            if len(supports) != len(families):
                raise ValidationError("'supports' must have one entry per family")
            supports = tuple(None if s is None else (s[0], s[1]) for s in supports)
        return cls(families, supports)


# ---------------------------------------------------------------------------
# Multi-indices and basis construction
# ---------------------------------------------------------------------------

MultiIndex = tuple[int, ...]


def total_degree(index: MultiIndex) -> int:
    return sum(index)


def basis_dimension(n_xi: int, d: int) -> int:
    """Number of n_xi-variate polynomials of total degree at most d.

    Evaluates the binomial count (n_xi + d)! / (n_xi! d!) exactly; raises
    :class:`ArithmeticOverflowError` once the count no longer fits a signed
    64-bit integer, the limit for downstream array indexing.
    """
    if n_xi < 1:
        raise ValidationError(f"n_xi must be positive, got {n_xi}")
    if d < 0:
        raise ValidationError(f"degree must be non-negative, got {d}")
    count = math.comb(n_xi + d, d)
    if count > _INT64_MAX:
        raise ArithmeticOverflowError(
            f"basis dimension for n_xi={n_xi}, d={d} exceeds the 64-bit integer range"
        )
    return count


def _compositions(total: int, parts: int) -> Iterable[MultiIndex]:
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def multi_indices(n_xi: int, d: int) -> list[MultiIndex]:
    """All multi-indices of total degree <= d, graded then lexicographic.

    Within one total degree, tuples appear in ascending lexicographic order,
    e.g. for two dimensions: (0,0), (0,1), (1,0), (0,2), (1,1), (2,0).
    """
    out: list[MultiIndex] = []
    for deg in range(d + 1):
        out.extend(_compositions(deg, n_xi))
    return out


def eval_univariate(family: Family, j: int, x):
    """Value of the degree-j classical polynomial of ``family`` at ``x``."""
    if j < 0:
        raise ValidationError(f"degree must be non-negative, got {j}")
    vals = family.eval_all(j, x)
    return vals[j]


def eval_multi(germ: GermSpec, indices: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate multivariate basis polynomials at canonical germ points.

    Parameters
    ----------
    germ : GermSpec
    indices : (L, n_xi) integer array of multi-indices.
    points : (m, n_xi) array of canonical germ points.

    Returns
    -------
    (L, m) array with entry [j, k] = phi_j(points[k]).
    """
    indices = np.asarray(indices, dtype=int)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != germ.n_xi:
        raise ValidationError(
            f"points have {points.shape[1]} columns, germ has {germ.n_xi} dimensions"
        )
    out = np.ones((indices.shape[0], points.shape[0]))
    for i, fam in enumerate(germ.families):
        maxdeg = int(indices[:, i].max(initial=0))
        table = fam.eval_all(maxdeg, points[:, i])
        out *= table[indices[:, i], :]
    return out


@dataclass(frozen=True, eq=False)
class BasisSpec:
    """A total-degree multivariate orthogonal basis with stored squared norms.

    ``indices`` lists all multi-indices of total degree <= ``max_degree`` in
    graded-lexicographic order (index 0 is the all-zeros constant), and
    ``sq_norms[j]`` is the squared norm of the j-th product polynomial under
    the germ's probability measure.  Immutable; safe for concurrent reads.
    """

    germ: GermSpec
    max_degree: int
    indices: np.ndarray
    sq_norms: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int)
        sq = np.asarray(self.sq_norms, dtype=float)
        if idx.shape[0] != sq.shape[0]:
            raise ValidationError("one squared norm per index is required")
        if np.any(sq <= 0):
            raise ValidationError("squared norms must be strictly positive")
        idx.setflags(write=False)
        sq.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "sq_norms", sq)

    def __len__(self) -> int:
        return self.indices.shape[0]

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if not isinstance(other, BasisSpec):
            return NotImplemented
        return (
            self.germ == other.germ
            and self.max_degree == other.max_degree
            and self.indices.shape == other.indices.shape
            and np.array_equal(self.indices, other.indices)
            and np.allclose(self.sq_norms, other.sq_norms, rtol=1e-14, atol=0.0)
        )

    def __hash__(self):
        return hash((self.germ, self.max_degree, self.indices.shape))

    @property
    def n_xi(self) -> int:
        return self.germ.n_xi

    def index_tuples(self) -> list[MultiIndex]:
        return [tuple(int(v) for v in row) for row in self.indices]

    def eval_at(self, points: np.ndarray) -> np.ndarray:
        """(L, m) matrix of basis values at canonical germ points."""
        return eval_multi(self.germ, self.indices, points)

    def degree_prefix_length(self, degree: int) -> int:
        """Number of leading basis elements with total degree <= degree."""
        degs = self.indices.sum(axis=1)
        return int(np.searchsorted(degs, degree + 1, side="left"))


def build_basis(germ: GermSpec, d: int, rule=None) -> BasisSpec:
    """Construct the total-degree-d basis with quadrature-computed norms.

    The squared norms are evaluated with a tensor rule exact to degree 2d
    (one is built on demand when ``rule`` is not given).
    """
    if d < 0:
        raise ValidationError(f"degree must be non-negative, got {d}")
    from . import quadrature  # local import: quadrature depends on this module

    idx_list = multi_indices(germ.n_xi, d)
    assert len(idx_list) == basis_dimension(germ.n_xi, d)
    indices = np.array(idx_list, dtype=int).reshape(len(idx_list), germ.n_xi)
    if rule is None:
        rule = quadrature.tensor_rule(germ, [d + 1] * germ.n_xi)
    elif rule.exact_degree < 2 * d:
        raise ValidationError(
            f"rule exact to degree {rule.exact_degree} cannot integrate squared "
            f"degree-{d} polynomials"
        )
    phi = eval_multi(germ, indices, rule.nodes)
    sq = (phi**2) @ rule.weights
    return BasisSpec(germ=germ, max_degree=d, indices=indices, sq_norms=sq)

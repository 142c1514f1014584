"""Gauss quadrature under the germ measures, plus tensorized rules.

Univariate rules come from the symmetric tridiagonal Jacobi matrix of the
family's monic recurrence (Golub-Welsch): nodes are its eigenvalues and
weights the squared first eigenvector components, scaled by the measure's
unit mass.  Tensor rules take full products; their exactness is limited by
the weakest dimension.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .basis import Family, GermSpec
from .errors import (
    AccuracyError,
    EvaluationError,
    QuadratureError,
    ResourceLimitError,
    ValidationError,
)

_DEFAULT_GRID_CAP = 10_000_000


def _grid_cap() -> int:
    raw = os.environ.get("PCEUQ_MAX_GRID")
    if raw is None:
        return _DEFAULT_GRID_CAP
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ValidationError(f"PCEUQ_MAX_GRID must be an integer, got {raw!r}") from exc
    if cap < 1:
        raise ValidationError(f"PCEUQ_MAX_GRID must be positive, got {cap}")
    return cap


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes (points x n_xi), positive weights summing to one, and the
    polynomial total degree the rule integrates exactly.

    Immutable; :func:`inner_product` is pure, so rules may be shared freely
    across threads.
    """

    nodes: np.ndarray
    weights: np.ndarray
    exact_degree: int

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes.reshape(-1, 1)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.shape[0] != weights.shape[0]:
            raise ValidationError("one weight per node is required")
        if np.any(weights <= 0):
            raise QuadratureError("quadrature weights must be strictly positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise QuadratureError(
                f"weights must sum to 1 within 1e-12, got {weights.sum()!r}"
            )
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def n_points(self) -> int:
        return self.nodes.shape[0]

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def write_csv(self, path) -> None:
        """Dump nodes and weights as CSV with columns x_1..x_nxi, w."""
        from . import reporting

        header = [f"x_{i + 1}" for i in range(self.dim)] + ["w"]
        rows = [list(row) + [w] for row, w in zip(self.nodes, self.weights)]
        reporting.write_csv(path, header, rows)


@lru_cache(maxsize=256)
def _gauss_points(family: Family, m: int) -> tuple[np.ndarray, np.ndarray]:
    alpha, beta = family.recurrence(m)
    if m == 1:
        nodes = np.array([alpha[0]])
        weights = np.array([1.0])
    else:
        try:
            vals, vecs = scipy.linalg.eigh_tridiagonal(alpha, np.sqrt(beta))
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
            raise QuadratureError(
                f"eigensolver failed for {family.tag} rule with {m} points"
            ) from exc
        nodes = vals
        weights = vecs[0, :] ** 2  # zeroth moment of the measure is 1
        # extreme Gauss-Hermite weights can underflow double precision to an
        # exact zero; such nodes carry no representable mass and are dropped
        keep = weights > 0.0
        nodes, weights = nodes[keep], weights[keep]
        weights = weights / weights.sum()
    lo, hi = family.canonical_support
    if math.isfinite(lo):
        # rounding can push extreme Jacobi nodes marginally outside the support
        nodes = np.clip(nodes, lo, hi)
    return nodes, weights


def gauss_rule(family: Family, m: int) -> QuadratureRule:
    """Univariate m-point Gauss rule for ``family``; exact to degree 2m - 1."""
    if m < 1:
        raise ValidationError(f"point count must be >= 1, got {m}")
    nodes, weights = _gauss_points(family, m)
    return QuadratureRule(nodes.reshape(-1, 1), weights, exact_degree=2 * m - 1)


def tensor_rule(germ: GermSpec, m_per_dim: Sequence[int]) -> QuadratureRule:
    """Full tensor-product rule; exact degree is min over dims of 2 m_i - 1.

    Raises :class:`ResourceLimitError` when the product grid would exceed the
    cap from the ``PCEUQ_MAX_GRID`` environment variable (default 10^7).
    """
    m_per_dim = list(int(m) for m in m_per_dim)
    if len(m_per_dim) != germ.n_xi:
        raise ValidationError(
            f"m_per_dim has {len(m_per_dim)} entries, germ has {germ.n_xi} dimensions"
        )
    total = math.prod(m_per_dim)
    cap = _grid_cap()
    if total > cap:
        raise ResourceLimitError(
            f"tensor grid of {total} points exceeds the cap of {cap} "
            f"(set PCEUQ_MAX_GRID to raise it)"
        )
    rules = [gauss_rule(f, m) for f, m in zip(germ.families, m_per_dim)]
    if germ.n_xi == 1:
        return rules[0]
    grids = np.meshgrid(*[r.nodes[:, 0] for r in rules], indexing="ij")
    nodes = np.column_stack([g.ravel() for g in grids])
    weights = np.ones(total)
    wgrids = np.meshgrid(*[r.weights for r in rules], indexing="ij")
    for wg in wgrids:
        weights = weights * wg.ravel()
    exact = min(2 * m - 1 for m in m_per_dim)
    return QuadratureRule(nodes, weights, exact_degree=exact)


def evaluate_on_rule(rule: QuadratureRule, f: Callable) -> np.ndarray:
    """Evaluate ``f`` at the rule's nodes, one positional argument per dim.

    The function receives 1-D coordinate arrays (``f(x1, ..., xn)``) and must
    return values broadcastable to one value per node.  A non-finite value
    raises :class:`EvaluationError` carrying the offending node.
    """
    vals = np.asarray(f(*rule.nodes.T), dtype=float)
    vals = np.broadcast_to(vals, (rule.n_points,)).astype(float, copy=False)
    bad = ~np.isfinite(vals)
    if bad.any():
        k = int(np.argmax(bad))
        raise EvaluationError(
            f"integrand returned {vals[k]!r} at node {rule.nodes[k]}",
            node=np.array(rule.nodes[k]),
        )
    return vals


def inner_product(rule: QuadratureRule, f: Callable, g: Callable) -> float:
    """Weighted inner product sum_k w_k f(x_k) g(x_k).

    Exact whenever deg(f*g) <= rule.exact_degree.
    """
    fv = evaluate_on_rule(rule, f)
    gv = fv if g is f else evaluate_on_rule(rule, g)
    return float(rule.weights @ (fv * gv))


def norm_sq(rule: QuadratureRule, f: Callable) -> float:
    return inner_product(rule, f, f)


@dataclass(frozen=True)
class QuadraturePolicy:
    """Refinement policy for non-polynomial integrands.

    Starting from ``initial`` points per dimension (derived from the basis
    degree when omitted), the point count doubles until the computed quantity
    changes by less than ``rtol`` relative (plus ``atol`` absolute slack),
    capped at ``max_points`` per dimension.
    """

    initial: int | None = None
    rtol: float = 1e-10
    atol: float = 1e-12
    max_points: int = 2**14

    def start(self, degree_hint: int) -> int:
        if self.initial is not None:
            if self.initial < 1:
                raise ValidationError(f"initial point count must be >= 1, got {self.initial}")
            return self.initial
        return max(2 * (degree_hint + 1), 2)


def refine(
    germ: GermSpec,
    compute: Callable[[QuadratureRule], np.ndarray],
    policy: QuadraturePolicy,
    degree_hint: int,
    trace: list | None = None,
) -> np.ndarray:
    """Run ``compute`` on successively doubled tensor rules until stable.

    Returns the converged value; raises :class:`AccuracyError` carrying the
    last two estimates when the cap is reached first.
    """
    m = policy.start(degree_hint)
    prev = None
    last = None
    while m <= policy.max_points:
        rule = tensor_rule(germ, [m] * germ.n_xi)
        val = np.asarray(compute(rule), dtype=float)
        if trace is not None:
            trace.append((m, val.copy()))
        if last is not None:
            scale = max(float(np.abs(val).max(initial=0.0)),
                        float(np.abs(last).max(initial=0.0)))
            if np.all(np.abs(val - last) <= policy.rtol * scale + policy.atol):
                return val
        prev, last = last, val
        m *= 2
    raise AccuracyError(
        f"quadrature refinement did not converge within {policy.max_points} "
        f"points per dimension",
        estimates=(prev, last),
    )

"""Convex QPs with uncertain linear cost and constraint offsets.

The problem is ``min 0.5 x'Hx + z1'x  s.t.  A x + z2 <= 0`` with positive
definite ``H`` and PCE-valued ``z1`` (the cost vector ``h``) and ``z2`` (the
offset vector ``b``).  Under a constant active set the argmin is a linear map
of the data, so the optimizer's PCE coefficients follow from the inverted KKT
matrix and truncation errors reduce to Parseval sums over the discarded
coefficient combinations.

``solve_qp`` is a dense primal active-set method: it starts from the
unconstrained minimizer, alternately adds the most violated constraint and
drops constraints with negative multipliers (smallest-index tie-breaking),
and solves each working-set KKT system by LU with partial pivoting.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .basis import BasisSpec
from .errors import (
    AccuracyError,
    DegeneracyError,
    InfeasibleError,
    UnsupportedConfigError,
    ValidationError,
)
from .pce import PceVector, TruncationError
from .quadrature import tensor_rule

_FEAS_TOL = 1e-9
_DUAL_TOL = 1e-10
_RANK_TOL = 1e-10


def _full_row_rank(rows: np.ndarray) -> bool:
    if rows.shape[0] > rows.shape[1]:
        return False
    sv = np.linalg.svd(rows, compute_uv=False)
    return bool(sv[-1] > _RANK_TOL * max(1.0, sv[0]))


@dataclass(frozen=True)
class ActiveSet:
    """Ordered subset of constraint indices (0-based) holding with equality."""

    indices: tuple[int, ...]
    n_con: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(i < 0 or i >= self.n_con for i in idx):
            raise ValidationError(f"active indices {idx} outside 0..{self.n_con - 1}")
        if len(set(idx)) != len(idx):
            raise ValidationError(f"active indices must be distinct, got {idx}")
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.indices)

    def selector(self) -> np.ndarray:
        """One-hot selection matrix M with M[i, indices[i]] = 1."""
        m = np.zeros((len(self.indices), self.n_con))
        for row, col in enumerate(self.indices):
            m[row, col] = 1.0
        return m


@dataclass(frozen=True)
class KktPropagation:
    """Blocks of the negated inverse KKT matrix for a fixed active set.

    ``[[W_h, W_b], [V_h, V_b]]`` equals minus the inverse of
    ``[[H, (M A)'], [M A, 0]]``; the optimizer coefficients are
    ``y_j = W_h h_j + W_b M b_j`` per basis index j and the multipliers follow
    from the V blocks.
    """

    active: ActiveSet
    W_h: np.ndarray
    W_b: np.ndarray
    V_h: np.ndarray
    V_b: np.ndarray


def _extended_precision_inverse(matrix: np.ndarray) -> np.ndarray:
    """Gauss-Jordan inverse with partial pivoting in extended precision.

    Used as a fallback when plain LU cannot push the multiply-back residual
    of an ill-conditioned KKT matrix below the contract level.
    """
    m = matrix.shape[0]
    aug = np.hstack([matrix.astype(np.longdouble), np.eye(m, dtype=np.longdouble)])
    for col in range(m):
        piv = col + int(np.argmax(np.abs(aug[col:, col])))
        if aug[piv, col] == 0:
            raise DegeneracyError("KKT matrix is singular")
        if piv != col:
            aug[[col, piv]] = aug[[piv, col]]
        aug[col] = aug[col] / aug[col, col]
        mask = np.ones(m, dtype=bool)
        mask[col] = False
        aug[mask] -= np.outer(aug[mask, col], aug[col])
    return aug[:, m:].astype(float)


def _inverse_residual(matrix: np.ndarray, inv: np.ndarray) -> float:
    eye = np.eye(matrix.shape[0])
    return max(
        float(np.abs(matrix @ inv - eye).max(initial=0.0)),
        float(np.abs(inv @ matrix - eye).max(initial=0.0)),
    )


def kkt_propagation(H: np.ndarray, A: np.ndarray, active: ActiveSet) -> KktPropagation:
    """Invert the KKT matrix of the active-set equality system.

    Raises :class:`DegeneracyError` when the active rows violate LICQ, and
    :class:`AccuracyError` when the multiply-back identity fails at 1e-9.
    """
    H = np.asarray(H, dtype=float)
    A = np.asarray(A, dtype=float)
    n = H.shape[0]
    M = active.selector()
    A_act = M @ A
    n_act = A_act.shape[0]
    if n_act and not _full_row_rank(A_act):
        raise DegeneracyError(
            f"active constraint rows {active.indices} are linearly dependent"
        )
    kkt = np.zeros((n + n_act, n + n_act))
    kkt[:n, :n] = H
    kkt[:n, n:] = A_act.T
    kkt[n:, :n] = A_act
    inv = np.linalg.solve(kkt, np.eye(n + n_act))
    if _inverse_residual(kkt, inv) > 1e-10:
        inv = _extended_precision_inverse(kkt)
    resid = _inverse_residual(kkt, inv)
    if resid > 1e-9:
        raise AccuracyError(
            f"KKT inverse residual {resid:.3e} exceeds 1e-9", estimates=(resid,)
        )
    blocks = -inv
    return KktPropagation(
        active=active,
        W_h=blocks[:n, :n],
        W_b=blocks[:n, n:],
        V_h=blocks[n:, :n],
        V_b=blocks[n:, n:],
    )


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    active: ActiveSet
    multipliers: np.ndarray  # full length n_con, zero off the active set
    weakly_active: tuple[int, ...]
    iterations: int


def _solve_eqp(H, A, z1, z2, working: list[int]):
    n = H.shape[0]
    na = len(working)
    kkt = np.zeros((n + na, n + na))
    kkt[:n, :n] = H
    if na:
        rows = A[working]
        kkt[:n, n:] = rows.T
        kkt[n:, :n] = rows
    rhs = np.concatenate([-z1, -z2[working] if na else np.zeros(0)])
    sol = np.linalg.solve(kkt, rhs)
    # one step of iterative refinement keeps residuals near machine level
    sol += np.linalg.solve(kkt, rhs - kkt @ sol)
    return sol[:n], sol[n:]


def _farkas_certificate(A, z2):
    """A Farkas vector y >= 0 with A'y = 0 and y'(-z2) < 0, if one exists."""
    from scipy.optimize import linprog

    n_con = A.shape[0]
    res = linprog(
        c=-z2,
        A_eq=np.vstack([A.T, np.ones((1, n_con))]),
        b_eq=np.concatenate([np.zeros(A.shape[1]), [1.0]]),
        bounds=[(0, None)] * n_con,
        method="highs",
    )
    if res.status == 0 and res.fun < -1e-12:
        return np.asarray(res.x)
    return None


def _is_feasible_lp(A, z2):
    from scipy.optimize import linprog

    res = linprog(
        c=np.zeros(A.shape[1]),
        A_ub=A,
        b_ub=-z2,
        bounds=[(None, None)] * A.shape[1],
        method="highs",
    )
    return res.status == 0


def _feasible_start_solve(H, A, z1, z2, feas_tol, dual_tol, max_iter):
    """Textbook primal active-set iteration from an LP-supplied feasible point.

    Fallback when the combinatorial add/drop loop cycles: every step either
    strictly decreases the objective or drops a negative multiplier, so the
    method terminates for strictly convex problems away from degeneracy.
    Returns (x, lam_working, working) or None when it stalls.
    """
    from scipy.optimize import linprog

    n, n_con = H.shape[0], A.shape[0]
    c = np.zeros(n + 1)
    c[-1] = 1.0
    # minimize the worst violation t, floored at -1 so the LP stays bounded
    res = linprog(
        c,
        A_ub=np.hstack([A, -np.ones((n_con, 1))]),
        b_ub=-z2,
        bounds=[(None, None)] * n + [(-1.0, None)],
        method="highs",
    )
    # feasibility itself was certified by the caller; a start point that the
    # LP cannot place within its own accuracy means degenerate geometry
    if res.status != 0 or res.x[-1] > 1e-7:
        return None
    x = res.x[:n]
    working: list[int] = []
    for i in np.flatnonzero(A @ x + z2 >= -feas_tol):
        if _full_row_rank(A[working + [int(i)]]):
            working.append(int(i))

    lam = np.zeros(len(working))
    for _ in range(max_iter):
        grad = H @ x + z1
        na = len(working)
        kkt = np.zeros((n + na, n + na))
        kkt[:n, :n] = H
        if na:
            rows = A[working]
            kkt[:n, n:] = rows.T
            kkt[n:, :n] = rows
        rhs = np.concatenate([-grad, np.zeros(na)])
        sol = np.linalg.solve(kkt, rhs)
        sol += np.linalg.solve(kkt, rhs - kkt @ sol)
        p, lam = sol[:n], sol[n:]
        if np.abs(p).max(initial=0.0) <= 1e-12 * max(1.0, np.abs(x).max()):
            negative = [i for pos, i in enumerate(working) if lam[pos] < -dual_tol]
            if not negative:
                return x, lam, working
            working.remove(min(negative))
            continue
        # ratio test against the inactive constraints
        alpha, blocker = 1.0, None
        for i in range(n_con):
            if i in working:
                continue
            slope = float(A[i] @ p)
            if slope <= feas_tol:
                continue
            ratio = float((-z2[i] - A[i] @ x) / slope)
            if ratio < alpha - 1e-14:
                alpha, blocker = max(ratio, 0.0), i
        x = x + alpha * p
        if blocker is not None:
            if not _full_row_rank(A[working + [blocker]]):
                return None  # degenerate geometry
            working.append(blocker)
    return None


def _brute_force_solution(H, A, z1, z2, feas_tol, dual_tol):
    n, n_con = H.shape[0], A.shape[0]
    best = None
    for r in range(min(n, n_con) + 1):
        for combo in itertools.combinations(range(n_con), r):
            working = list(combo)
            if working and not _full_row_rank(A[working]):
                continue
            try:
                x, lam = _solve_eqp(H, A, z1, z2, working)
            except np.linalg.LinAlgError:
                continue
            if np.any(A @ x + z2 > feas_tol) or np.any(lam < -dual_tol):
                continue
            obj = 0.5 * x @ H @ x + z1 @ x
            if best is None or obj < best[0]:
                best = (obj, x, working, lam)
    return best


def solve_qp(
    H: np.ndarray,
    A: np.ndarray,
    z1: np.ndarray,
    z2: np.ndarray,
    feas_tol: float = _FEAS_TOL,
    dual_tol: float = _DUAL_TOL,
    max_iter: int | None = None,
) -> QpSolution:
    """Solve one realization of the QP and report its active set.

    Post-conditions checked before returning: KKT residual <= 1e-8,
    multipliers >= -1e-10, complementary slackness <= 1e-8.  Infeasible
    problems raise :class:`InfeasibleError` with a Farkas certificate;
    LICQ failures raise :class:`DegeneracyError`.
    """
    H = np.asarray(H, dtype=float)
    z1 = np.asarray(z1, dtype=float).ravel()
    n = H.shape[0]
    if A is None or np.size(A) == 0:
        A = np.zeros((0, n))
        z2 = np.zeros(0)
    A = np.asarray(A, dtype=float).reshape(-1, n)
    z2 = np.asarray(z2, dtype=float).ravel()
    n_con = A.shape[0]
    if z2.shape[0] != n_con:
        raise ValidationError(f"z2 has {z2.shape[0]} entries for {n_con} constraints")
    if max_iter is None:
        max_iter = 50 + 6 * n_con

    working: list[int] = []
    x, lam = _solve_eqp(H, A, z1, z2, working)
    visited = {frozenset()}
    cycle = False
    for it in range(max_iter):
        v = A @ x + z2 if n_con else np.zeros(0)
        worst = float(v.max(initial=-math.inf))
        if worst > feas_tol:
            # add the most violated constraint; break ties at the smallest index
            order = sorted(range(n_con), key=lambda j: (-v[j], j))
            chosen = None
            for j in order:
                if v[j] <= feas_tol or j in working:
                    continue
                if _full_row_rank(A[working + [j]]):
                    chosen = j
                    break
            if chosen is None:
                # every violated row lies in the span of the working set:
                # either the problem is infeasible, or the working set holds
                # a wrong member that must leave before the right one enters
                negative = [i for pos, i in enumerate(working) if lam[pos] < -dual_tol]
                if negative:
                    working.remove(min(negative))
                elif not _is_feasible_lp(A, z2):
                    raise InfeasibleError(
                        "the feasible set is empty",
                        certificate=_farkas_certificate(A, z2),
                    )
                elif working:
                    weakest = min(range(len(working)), key=lambda p: (lam[p], working[p]))
                    working.pop(weakest)
                else:
                    raise DegeneracyError(
                        "violated constraints are linearly dependent at the origin"
                    )
            else:
                working.append(chosen)
        else:
            negative = [i for pos, i in enumerate(working) if lam[pos] < -dual_tol]
            if not negative:
                return _finish(H, A, z1, z2, x, lam, working, v, feas_tol, dual_tol, it)
            working.remove(min(negative))
        key = frozenset(working)
        if key in visited:
            cycle = True
            break
        visited.add(key)
        x, lam = _solve_eqp(H, A, z1, z2, working)

    if not _is_feasible_lp(A, z2):
        raise InfeasibleError(
            "the feasible set is empty", certificate=_farkas_certificate(A, z2)
        )
    if cycle:
        result = _feasible_start_solve(H, A, z1, z2, feas_tol, dual_tol, max_iter)
        if result is not None:
            x, lam, working = result
            v = A @ x + z2
            return _finish(H, A, z1, z2, x, lam, working, v, feas_tol, dual_tol, max_iter)
        if n_con <= 18:
            best = _brute_force_solution(H, A, z1, z2, feas_tol, dual_tol)
            if best is not None:
                _, x, working, lam = best
                v = A @ x + z2
                return _finish(H, A, z1, z2, x, lam, working, v, feas_tol, dual_tol, max_iter)
    raise DegeneracyError(
        "active-set iteration cycled without reaching optimality; the problem "
        "is degenerate"
    )


def _finish(H, A, z1, z2, x, lam, working, v, feas_tol, dual_tol, iterations):
    n_con = A.shape[0]
    full_lam = np.zeros(n_con)
    for pos, i in enumerate(working):
        full_lam[i] = lam[pos]
    # minimal active set: drop working constraints whose multiplier vanishes
    strict = tuple(sorted(i for i in working if full_lam[i] > dual_tol))
    weakly = tuple(sorted(
        i for i in range(n_con) if v[i] >= -feas_tol and i not in strict
    ))
    full_lam[full_lam < 0] = 0.0

    stat = H @ x + z1 + A.T @ full_lam
    resid = float(np.abs(stat).max(initial=0.0))
    comp = float(np.abs(full_lam * v).max(initial=0.0))
    if resid > 1e-8 or comp > 1e-8:
        raise AccuracyError(
            f"KKT residual {resid:.3e} / complementarity {comp:.3e} exceed 1e-8",
            estimates=(resid, comp),
        )
    return QpSolution(
        x=x,
        active=ActiveSet(strict, n_con),
        multipliers=full_lam,
        weakly_active=weakly,
        iterations=iterations,
    )


# ---------------------------------------------------------------------------
# Uncertain problems
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QpProblem:
    """QP data with PCE-valued cost vector ``h`` and offset vector ``b``.

    All PCE entries must share one basis; mixing expansion degrees would
    require zero-padding the shorter coefficient vectors onto the common
    basis first.
    """

    H: np.ndarray
    A: np.ndarray
    h: tuple[PceVector, ...]
    b: tuple[PceVector, ...]

    def __post_init__(self):
        H = np.array(self.H, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValidationError(f"H must be square, got shape {H.shape}")
        if np.abs(H - H.T).max(initial=0.0) > 1e-12 * max(1.0, np.abs(H).max(initial=0.0)):
            raise ValidationError("H must be symmetric within 1e-12")
        eigmin = float(np.linalg.eigvalsh(H).min())
        if eigmin <= 0:
            raise ValidationError(f"H must be positive definite, smallest eigenvalue {eigmin}")
        A = np.array(self.A, dtype=float)
        if A.size == 0:
            A = np.zeros((0, H.shape[0]))
        if A.ndim != 2 or A.shape[1] != H.shape[0]:
            raise ValidationError(f"A must have {H.shape[0]} columns, got shape {A.shape}")
        h = tuple(self.h)
        b = tuple(self.b)
        if len(h) != H.shape[0]:
            raise ValidationError(f"h must have {H.shape[0]} entries, got {len(h)}")
        if len(b) != A.shape[0]:
            raise ValidationError(f"b must have {A.shape[0]} entries, got {len(b)}")
        basis = h[0].basis if h else (b[0].basis if b else None)
        if basis is None:
            raise ValidationError("the problem needs at least one PCE entry")
        for entry in (*h, *b):
            if entry.basis is not basis and entry.basis != basis:
                raise ValidationError("all PCE entries must share one basis")
        H.setflags(write=False)
        A.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "b", b)

    @property
    def basis(self) -> BasisSpec:
        return self.h[0].basis if self.h else self.b[0].basis

    @property
    def n_x(self) -> int:
        return self.H.shape[0]

    @property
    def n_con(self) -> int:
        return self.A.shape[0]

    def h_coeff_matrix(self) -> np.ndarray:
        """(n_x, L) matrix of cost-vector coefficients per basis index."""
        return np.array([entry.coeffs for entry in self.h])

    def b_coeff_matrix(self) -> np.ndarray:
        if not self.b:
            return np.zeros((0, len(self.basis)))
        return np.array([entry.coeffs for entry in self.b])

    def realize(self, point: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Evaluate the random data at one canonical germ point."""
        point = np.atleast_2d(np.asarray(point, dtype=float))
        phi = self.basis.eval_at(point)[:, 0]
        z1 = self.h_coeff_matrix() @ phi
        z2 = self.b_coeff_matrix() @ phi
        return z1, z2

    def to_json(self) -> dict:
        return {
            "H": self.H.tolist(),
            "A": self.A.tolist(),
            "basis": {"germ": self.basis.germ.to_json(), "degree": self.basis.max_degree},
            "h": [entry.to_json() for entry in self.h],
            "b": [entry.to_json() for entry in self.b],
        }


@dataclass(frozen=True)
class ProbePolicy:
    """How the constant-active-set assumption is probed.

    The QP is solved at every node of a tensor rule exact to twice the input
    degree (``points_per_dim`` overrides the per-dimension count) plus, for
    bounded germ dimensions, the corners of the canonical support box.  This
    is a sound check for data linear in the germ on box supports and a
    documented heuristic for unbounded germs.
    """

    points_per_dim: int | None = None
    include_vertices: bool = True
    extra_points: np.ndarray | None = None


@dataclass(frozen=True)
class PropagationReport:
    varying: bool
    active: ActiveSet | None
    kkt: KktPropagation | None
    multipliers: tuple[PceVector, ...] | None
    probed_nodes: np.ndarray
    probed_active_sets: tuple[tuple[int, ...], ...]


def _probe_points(qp: QpProblem, policy: ProbePolicy) -> np.ndarray:
    basis = qp.basis
    germ = basis.germ
    d = basis.max_degree
    m = policy.points_per_dim or (d + 1)
    rule = tensor_rule(germ, [m] * germ.n_xi)
    points = [rule.nodes]
    if policy.include_vertices:
        bounded = germ.bounded_dims()
        if bounded:
            axes = [(-1.0, 1.0) if i in bounded else (0.0,) for i in range(germ.n_xi)]
            corners = np.array(list(itertools.product(*axes)))
            points.append(corners)
    if policy.extra_points is not None:
        points.append(np.atleast_2d(np.asarray(policy.extra_points, dtype=float)))
    return np.vstack(points)


def propagate(
    qp: QpProblem, policy: ProbePolicy = ProbePolicy()
) -> tuple[list[PceVector], PropagationReport]:
    """PCE of the optimizer under the probed-constant active set.

    With a constant active set the optimizer is exact in the input basis:
    coefficients follow from the KKT propagation blocks.  When the probed
    active sets differ, the per-node solutions are projected instead and the
    report is flagged ``varying`` (the exact error formulas then no longer
    apply).
    """
    nodes = _probe_points(qp, policy)
    solutions = []
    for node in nodes:
        z1, z2 = qp.realize(node)
        try:
            solutions.append(solve_qp(qp.H, qp.A, z1, z2))
        except DegeneracyError as exc:
            raise DegeneracyError(
                f"LICQ failure at probed realization {node}", realization=node
            ) from exc
    active_sets = tuple(sol.active.indices for sol in solutions)
    basis = qp.basis

    if len(set(active_sets)) == 1:
        active = solutions[0].active
        kkt = kkt_propagation(qp.H, qp.A, active)
        hm = qp.h_coeff_matrix()
        bm = active.selector() @ qp.b_coeff_matrix()
        ycoef = kkt.W_h @ hm + kkt.W_b @ bm
        lcoef = kkt.V_h @ hm + kkt.V_b @ bm
        ys = [PceVector(basis, ycoef[i]) for i in range(qp.n_x)]
        lams = tuple(PceVector(basis, lcoef[i]) for i in range(len(active)))
        report = PropagationReport(
            varying=False,
            active=active,
            kkt=kkt,
            multipliers=lams,
            probed_nodes=nodes,
            probed_active_sets=active_sets,
        )
        return ys, report

    # varying active set: project the per-node solutions on the probing rule
    germ = basis.germ
    d = basis.max_degree
    m = policy.points_per_dim or (d + 1)
    rule = tensor_rule(germ, [m] * germ.n_xi)
    xs = []
    for node in rule.nodes:
        z1, z2 = qp.realize(node)
        xs.append(solve_qp(qp.H, qp.A, z1, z2).x)
    xs = np.array(xs)
    phi = basis.eval_at(rule.nodes)
    ycoef = (phi * rule.weights) @ xs / basis.sq_norms[:, None]
    ys = [PceVector(basis, ycoef[:, i]) for i in range(qp.n_x)]
    report = PropagationReport(
        varying=True,
        active=None,
        kkt=None,
        multipliers=None,
        probed_nodes=nodes,
        probed_active_sets=active_sets,
    )
    return ys, report


def qp_truncation_error(
    qp: QpProblem, report: PropagationReport, n: int
) -> list[TruncationError]:
    """Element-wise truncation errors of the optimizer after retaining 0..n.

    Requires the constant-active-set propagation; each entry sums the
    discarded squared coefficient combinations times the squared norms, so
    the result is exactly zero once n reaches the last input index.
    """
    if report.varying or report.kkt is None:
        raise UnsupportedConfigError(
            "truncation errors need a constant active set; use the sampled "
            "projection from the varying-active-set report instead"
        )
    if n < 0:
        raise ValidationError(f"retained index must be non-negative, got {n}")
    basis = qp.basis
    kkt = report.kkt
    hm = qp.h_coeff_matrix()
    bm = report.active.selector() @ qp.b_coeff_matrix()
    ycoef = kkt.W_h @ hm + kkt.W_b @ bm
    out = []
    for i in range(qp.n_x):
        detail = tuple(
            (j, float(ycoef[i, j] ** 2 * basis.sq_norms[j]))
            for j in range(n + 1, len(basis))
        )
        value = math.sqrt(sum(c for _, c in detail))
        out.append(TruncationError(value=value, n=n, detail=detail))
    return out

"""LTI layer: MPC condensation, uncertain state transition, LQR synthesis.

Uncertainty enters the state matrix affinely, ``A(z) = A0 + z * A1``; the
general polynomial-in-z case reduces to this on the caller's side.  The MPC
path condenses a linear-quadratic problem with box constraints into the dense
QP form consumed by :mod:`pceuq.qp`, with both the cost vector and the
constraint offsets linear in the (possibly random) initial condition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .basis import BasisSpec, GermSpec, Jacobi, build_basis
from .errors import AccuracyError, SynthesisError, ValidationError
from .pce import PceVector
from .qp import QpProblem
from .quadrature import QuadraturePolicy, refine


@dataclass(frozen=True)
class LtiSystem:
    """State-space system with an affine uncertainty direction.

    ``a0`` is the nominal state matrix, ``a1`` the uncertainty direction so
    that ``A(z) = a0 + z * a1``, and ``b`` the input matrix.  ``discrete``
    selects the difference-equation interpretation with sampling time ``dt``.
    """

    a0: np.ndarray
    a1: np.ndarray
    b: np.ndarray
    discrete: bool = False
    dt: float | None = None

    def __post_init__(self):
        a0 = np.array(self.a0, dtype=float)
        a1 = np.array(self.a1, dtype=float)
        b = np.array(self.b, dtype=float)
        if b.ndim == 1:
            b = b.reshape(-1, 1)
        n = a0.shape[0]
        if a0.shape != (n, n) or a1.shape != (n, n):
            raise ValidationError("state matrices must be square and equally sized")
        if b.shape[0] != n:
            raise ValidationError(f"input matrix must have {n} rows, got {b.shape}")
        if self.discrete and (self.dt is None or self.dt <= 0):
            raise ValidationError("discrete systems need a positive sampling time")
        for arr in (a0, a1, b):
            arr.setflags(write=False)
        object.__setattr__(self, "a0", a0)
        object.__setattr__(self, "a1", a1)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.a0.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]

    def a_of(self, z: float) -> np.ndarray:
        return self.a0 + float(z) * self.a1

    def to_json(self) -> dict:
        return {
            "a0": self.a0.tolist(),
            "a1": self.a1.tolist(),
            "b": self.b.tolist(),
            "discrete": self.discrete,
            "dt": self.dt,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LtiSystem":
        extra = set(obj) - {"a0", "a1", "b", "discrete", "dt"}
        if extra:
            raise ValidationError(f"unknown key in system document: {sorted(extra)[0]!r}")
        a0 = np.asarray(obj["a0"], dtype=float)
        a1 = np.asarray(obj.get("a1", np.zeros_like(a0)), dtype=float)
        return cls(
            a0=a0,
            a1=a1,
            b=np.asarray(obj["b"], dtype=float),
            discrete=bool(obj.get("discrete", False)),
            dt=obj.get("dt"),
        )


def discretize(sys: LtiSystem, dt: float) -> LtiSystem:
    """Zero-order-hold discretization of the nominal continuous system.

    Only the nominal matrix is discretized exactly; the uncertainty direction
    must be zero (a discrete-time affine uncertainty is not the exponential
    of a continuous one).
    """
    if sys.discrete:
        raise ValidationError("system is already discrete")
    if np.abs(sys.a1).max(initial=0.0) != 0.0:
        raise ValidationError("only systems without uncertainty direction can be discretized")
    n, m = sys.n, sys.m
    block = np.zeros((n + m, n + m))
    block[:n, :n] = sys.a0 * dt
    block[:n, n:] = sys.b * dt
    exp_block = scipy.linalg.expm(block)
    return LtiSystem(
        a0=exp_block[:n, :n],
        a1=np.zeros((n, n)),
        b=exp_block[:n, n:],
        discrete=True,
        dt=dt,
    )


def state_transition(
    sys: LtiSystem, gain: np.ndarray, x0: np.ndarray, t: float, z: float
) -> np.ndarray:
    """Closed-loop state at time t for one uncertainty realization.

    Computes ``expm((A(z) - B K) t) x0`` (scaling-and-squaring Pade matrix
    exponential).
    """
    if sys.discrete:
        raise ValidationError("state transition over continuous time needs a continuous system")
    if t < 0:
        raise ValidationError(f"time must be non-negative, got {t}")
    gain = np.asarray(gain, dtype=float).reshape(sys.m, sys.n)
    x0 = np.asarray(x0, dtype=float).ravel()
    return scipy.linalg.expm((sys.a_of(z) - sys.b @ gain) * t) @ x0


# ---------------------------------------------------------------------------
# LQR synthesis
# ---------------------------------------------------------------------------

def _solve_lyapunov(a: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve a p + p a' + rhs = 0 by a Kronecker-product linear solve."""
    n = a.shape[0]
    eye = np.eye(n)
    lhs = np.kron(eye, a) + np.kron(a, eye)
    p = np.linalg.solve(lhs, -rhs.flatten(order="F")).reshape((n, n), order="F")
    return 0.5 * (p + p.T)


def _bass_initial_gain(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stabilizing gain via a shifted Lyapunov equation (Bass's method)."""
    beta = float(np.linalg.norm(a, 2)) + 0.5
    shifted = a + beta * np.eye(a.shape[0])
    z = _solve_lyapunov(shifted, -2.0 * b @ b.T)
    eigmin = float(np.linalg.eigvalsh(z).min())
    if eigmin <= 1e-12 * max(1.0, float(np.linalg.eigvalsh(z).max())):
        raise SynthesisError(
            "no stabilizing initial gain found (plant may be uncontrollable); "
            "supply one explicitly"
        )
    return b.T @ np.linalg.solve(z, np.eye(a.shape[0]))


@dataclass(frozen=True)
class LqrDesign:
    """Continuous-time LQR weights, Riccati solution, and state-feedback gain."""

    q: np.ndarray
    r: np.ndarray
    k: np.ndarray
    p: np.ndarray

    def riccati_residual(self, a: np.ndarray, b: np.ndarray) -> float:
        res = (
            a.T @ self.p
            + self.p @ a
            - self.p @ b @ np.linalg.solve(self.r, b.T @ self.p)
            + self.q
        )
        return float(np.linalg.norm(res))


def lqr_gain(
    a: np.ndarray,
    b: np.ndarray,
    q: np.ndarray,
    r: np.ndarray,
    initial_gain: np.ndarray | None = None,
    max_iter: int = 100,
) -> LqrDesign:
    """Continuous-time LQR via Newton iterations on the Riccati equation.

    Each step solves a Lyapunov equation for the current closed loop and
    refreshes the gain ``K = R^-1 B' P``; iteration stops once the Riccati
    residual drops below 1e-9 (at most ``max_iter`` steps).  The initial
    stabilizing gain comes from an eigenvalue-shift heuristic unless supplied.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if b.ndim == 1:
        b = b.reshape(-1, 1)
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    if r.ndim == 0:
        r = r.reshape(1, 1)
    if np.linalg.eigvalsh(0.5 * (r + r.T)).min() <= 0:
        raise ValidationError("input weight R must be positive definite")

    if initial_gain is not None:
        k = np.asarray(initial_gain, dtype=float).reshape(b.shape[1], a.shape[0])
    elif np.max(np.linalg.eigvals(a).real) < -1e-12:
        k = np.zeros((b.shape[1], a.shape[0]))
    else:
        k = _bass_initial_gain(a, b)
    if np.max(np.linalg.eigvals(a - b @ k).real) >= 0:
        raise SynthesisError(
            "initial gain does not stabilize the plant; supply a stabilizing one"
        )

    p = np.zeros_like(a)
    for _ in range(max_iter):
        a_cl = a - b @ k
        p = _solve_lyapunov(a_cl.T, q + k.T @ r @ k)
        k = np.linalg.solve(r, b.T @ p)
        design = LqrDesign(q=q, r=r, k=k, p=p)
        if design.riccati_residual(a, b) <= 1e-9:
            return design
    design = LqrDesign(q=q, r=r, k=k, p=p)
    resid = design.riccati_residual(a, b)
    if resid > 1e-8:
        raise AccuracyError(
            f"Riccati iteration stalled at residual {resid:.3e}", estimates=(resid,)
        )
    return design


# ---------------------------------------------------------------------------
# MPC condensation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MpcSpec:
    """Finite-horizon linear-quadratic problem with box constraints.

    Stage costs use the 0.5-weighted quadratic form; states are penalized at
    stages 1..N-1 with ``q`` and at stage N with the terminal weight ``p``.
    Bounds set to +-inf are skipped when building constraint rows.  The
    initial condition is a vector of PCE coefficients sharing one basis.
    """

    system: LtiSystem
    horizon: int
    q: np.ndarray
    r: np.ndarray
    p: np.ndarray
    x0: tuple[PceVector, ...]
    x_min: np.ndarray | None = None
    x_max: np.ndarray | None = None
    u_min: np.ndarray | None = None
    u_max: np.ndarray | None = None

    def __post_init__(self):
        if not self.system.discrete:
            raise ValidationError("MPC condensation needs a discrete-time system")
        if self.horizon < 1:
            raise ValidationError(f"horizon must be positive, got {self.horizon}")
        n, m = self.system.n, self.system.m
        q = np.asarray(self.q, dtype=float).reshape(n, n)
        r = np.asarray(self.r, dtype=float).reshape(m, m)
        p = np.asarray(self.p, dtype=float).reshape(n, n)
        if len(self.x0) != n:
            raise ValidationError(f"x0 must have {n} PCE entries, got {len(self.x0)}")
        basis = self.x0[0].basis
        for entry in self.x0:
            if entry.basis is not basis and entry.basis != basis:
                raise ValidationError("x0 entries must share one basis")

        def _bound(vec, size, default):
            if vec is None:
                return np.full(size, default)
            out = np.asarray(vec, dtype=float).ravel()
            if out.shape[0] != size:
                raise ValidationError(f"bound vector must have {size} entries")
            return out

        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "x0", tuple(self.x0))
        object.__setattr__(self, "x_min", _bound(self.x_min, n, -math.inf))
        object.__setattr__(self, "x_max", _bound(self.x_max, n, math.inf))
        object.__setattr__(self, "u_min", _bound(self.u_min, m, -math.inf))
        object.__setattr__(self, "u_max", _bound(self.u_max, m, math.inf))

    @property
    def basis(self) -> BasisSpec:
        return self.x0[0].basis

    def x0_coeff_matrix(self) -> np.ndarray:
        return np.array([entry.coeffs for entry in self.x0])


@dataclass(frozen=True)
class ConstraintLabel:
    """Origin of one condensed constraint row."""

    kind: str  # state_upper | state_lower | input_upper | input_lower
    stage: int
    index: int


def prediction_matrices(a: np.ndarray, b: np.ndarray, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Stacked free response Gamma and forced response Phi over the horizon.

    The stacked predicted state is ``[x_1; ...; x_N] = Gamma x0 + Phi U`` for
    the stacked input ``U = [u_0; ...; u_{N-1}]``.
    """
    n, m = a.shape[0], b.shape[1]
    gamma = np.zeros((n * horizon, n))
    phi = np.zeros((n * horizon, m * horizon))
    a_pow = np.eye(n)
    for k in range(horizon):
        a_pow = a @ a_pow  # A^(k+1)
        gamma[k * n:(k + 1) * n] = a_pow
    for k in range(horizon):
        block = b
        for j in range(k, horizon):
            phi[j * n:(j + 1) * n, k * m:(k + 1) * m] = block
            block = a @ block
    return gamma, phi


def mpc_constraint_labels(spec: MpcSpec) -> tuple[ConstraintLabel, ...]:
    """Row labels of the condensed constraint matrix, in construction order."""
    labels = []
    n, m = spec.system.n, spec.system.m
    for k in range(1, spec.horizon + 1):
        for s in range(n):
            if math.isfinite(spec.x_max[s]):
                labels.append(ConstraintLabel("state_upper", k, s))
            if math.isfinite(spec.x_min[s]):
                labels.append(ConstraintLabel("state_lower", k, s))
    for k in range(spec.horizon):
        for j in range(m):
            if math.isfinite(spec.u_max[j]):
                labels.append(ConstraintLabel("input_upper", k, j))
            if math.isfinite(spec.u_min[j]):
                labels.append(ConstraintLabel("input_lower", k, j))
    return tuple(labels)


def condense_mpc(spec: MpcSpec) -> QpProblem:
    """Eliminate the predicted states and return the dense QP.

    The quadratic term is ``H = Rbar + Phi' Qbar Phi`` and the linear term
    inherits the initial condition's PCE coefficients through
    ``z1 = Phi' Qbar Gamma x0``; box constraints on states become rows of
    ``Phi`` with offsets linear in ``x0`` as well, so the whole problem stays
    degree-1 in the germ whenever ``x0`` is.
    """
    sysd = spec.system
    n, m, N = sysd.n, sysd.m, spec.horizon
    gamma, phi = prediction_matrices(sysd.a0, sysd.b, N)
    qbar = np.zeros((n * N, n * N))
    for k in range(N - 1):
        qbar[k * n:(k + 1) * n, k * n:(k + 1) * n] = spec.q
    qbar[(N - 1) * n:, (N - 1) * n:] = spec.p
    rbar = np.kron(np.eye(N), spec.r)

    H = rbar + phi.T @ qbar @ phi
    H = 0.5 * (H + H.T)
    x0m = spec.x0_coeff_matrix()  # (n, L)
    basis = spec.basis
    z1_coeffs = phi.T @ qbar @ gamma @ x0m  # (mN, L)
    h = tuple(PceVector(basis, z1_coeffs[i]) for i in range(m * N))

    rows = []
    offsets = []  # (L,) coefficient vectors
    L = len(basis)
    e0 = np.zeros(L)
    e0[0] = 1.0
    for k in range(1, N + 1):
        base = (k - 1) * n
        for s in range(n):
            if math.isfinite(spec.x_max[s]):
                rows.append(phi[base + s])
                offsets.append(gamma[base + s] @ x0m - spec.x_max[s] * e0)
            if math.isfinite(spec.x_min[s]):
                rows.append(-phi[base + s])
                offsets.append(spec.x_min[s] * e0 - gamma[base + s] @ x0m)
    for k in range(N):
        for j in range(m):
            unit = np.zeros(m * N)
            unit[k * m + j] = 1.0
            if math.isfinite(spec.u_max[j]):
                rows.append(unit)
                offsets.append(-spec.u_max[j] * e0)
            if math.isfinite(spec.u_min[j]):
                rows.append(-unit)
                offsets.append(spec.u_min[j] * e0)
    if rows:
        A = np.array(rows)
        b = tuple(PceVector(basis, off) for off in offsets)
    else:
        A = np.zeros((0, m * N))
        b = ()
    return QpProblem(H=H, A=A, h=h, b=b)


def simulate(sys: LtiSystem, x0: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Step the discrete dynamics; returns the stacked states x_1..x_N."""
    if not sys.discrete:
        raise ValidationError("simulation needs a discrete-time system")
    x = np.asarray(x0, dtype=float).ravel()
    inputs = np.asarray(inputs, dtype=float).reshape(-1, sys.m)
    out = []
    for u in inputs:
        x = sys.a0 @ x + sys.b @ u
        out.append(x)
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# Trajectory truncation errors
# ---------------------------------------------------------------------------

def pce_trajectory_error(
    sys: LtiSystem,
    gain: np.ndarray,
    x0: np.ndarray,
    germ: GermSpec,
    t_grid: Sequence[float],
    n_list: Sequence[int],
    components: Sequence[int] | None = None,
    policy: QuadraturePolicy | None = None,
) -> list[tuple[float, int, int, float]]:
    """Truncation error of each state component over time and retained degree.

    For every ``t`` the map ``z -> expm((A(z) - B K) t) x0`` is treated as a
    non-polynomial function of the univariate germ; the error of keeping
    degrees 0..n follows from the normal-equations identity evaluated under
    the doubling quadrature policy.  Rows are ordered by (t, n, component)
    and ready for CSV emission as (t, n, component, value).
    """
    if germ.n_xi != 1:
        raise ValidationError("trajectory errors are defined for univariate germs")
    n_list = sorted(int(n) for n in n_list)
    if n_list[0] < 0:
        raise ValidationError("retained degrees must be non-negative")
    components = list(range(sys.n)) if components is None else [int(c) for c in components]
    policy = policy or QuadraturePolicy()
    n_max = n_list[-1]
    basis = build_basis(germ, n_max)
    gain = np.asarray(gain, dtype=float).reshape(sys.m, sys.n)
    x0 = np.asarray(x0, dtype=float).ravel()
    a_cl0 = sys.a0 - sys.b @ gain

    rows: list[tuple[float, int, int, float]] = []
    for t in t_grid:
        def errors_sq(rule, t=float(t)):
            states = np.empty((rule.n_points, sys.n))
            for idx, z in enumerate(rule.nodes[:, 0]):
                states[idx] = scipy.linalg.expm((a_cl0 + z * sys.a1) * t) @ x0
            phi = basis.eval_at(rule.nodes)  # (n_max+1, npoints)
            norms = (rule.weights @ states**2)  # (n_states,)
            g = phi @ (rule.weights[:, None] * states)  # (n_max+1, n_states)
            contrib = g**2 / basis.sq_norms[:, None]
            out = np.empty((len(n_list), len(components)))
            for i, n in enumerate(n_list):
                tail = norms[components] - contrib[: n + 1, components].sum(axis=0)
                out[i] = tail
            return out.ravel()

        vals = refine(germ, errors_sq, policy, degree_hint=n_max)
        vals = np.sqrt(np.maximum(vals.reshape(len(n_list), len(components)), 0.0))
        for i, n in enumerate(n_list):
            for c_pos, comp in enumerate(components):
                rows.append((float(t), int(n), int(comp), float(vals[i, c_pos])))
    return rows


# ---------------------------------------------------------------------------
# Built-in demonstration models
# ---------------------------------------------------------------------------

def demo_aircraft() -> LtiSystem:
    """Four-state linearized pitch/altitude airframe with an uncertain
    aerodynamic coefficient entering the (1, 1) entry affinely.

    States: angle of attack, pitch angle, pitch rate, altitude; the input is
    the elevator command.
    """
    a0 = np.array([
        [-1.2822, 0.0, 0.98, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [-5.4293, 0.0, -1.8366, 0.0],
        [-128.2, 128.2, 0.0, 0.0],
    ])
    a1 = np.zeros((4, 4))
    a1[0, 0] = 0.4
    b = np.array([[-0.3], [0.0], [-17.0], [0.0]])
    return LtiSystem(a0=a0, a1=a1, b=b, discrete=False)


def demo_lqr() -> LqrDesign:
    """LQR design for the nominal demo airframe (Q = 0.001 I, R = 100)."""
    sys = demo_aircraft()
    return lqr_gain(sys.a0, sys.b, 0.001 * np.eye(4), np.array([[100.0]]))


_MPC_DEFAULTS = {
    "dt": 0.5,
    "horizon": 35,
    "elevator_limit": 0.02,
    "q_diag": [0.0, 0.0, 0.0, 1e-4, 0.0],
    "r": 1.0,
    "terminal_diag": [0.0, 0.0, 0.0, 1e-4, 0.0],
    "jacobi_a": 4.0,
    "jacobi_b": 1.0,
    "x0_coeffs": [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [-396.0, 3.0], [0.0, 0.0]],
    "x0_support": [-402.0, -381.0],
}


def demo_mpc_spec(overrides: dict | None = None) -> MpcSpec:
    """Stand-in altitude-acquisition MPC demo.

    The plant is the demo airframe augmented with the elevator angle as a
    fifth state, so the decision variable is the elevator rate of change and
    the elevator deflection carries an actuator limit.  The initial altitude
    is random with a Beta-shaped distribution expressed in a degree-1 Jacobi
    basis.  During the aggressive initial climb the deflection saturates at
    its lower stop for every realization; while saturated the optimal input
    is pinned by the active constraints (slam to the stop, hold), so its
    higher-order PCE coefficients vanish, and uncertainty reappears once the
    actuator leaves the stop.  ``overrides`` replaces individual entries
    (including full ``A``/``B`` matrices for a drop-in plant).
    """
    cfg = dict(_MPC_DEFAULTS)
    if overrides:
        unknown = set(overrides) - set(_MPC_DEFAULTS) - {"A", "B"}
        if unknown:
            raise ValidationError(f"unknown key in MPC overrides: {sorted(unknown)[0]!r}")
        cfg.update(overrides)

    if "A" in cfg or "B" in cfg:
        a_full = np.asarray(cfg["A"], dtype=float)
        b_full = np.asarray(cfg["B"], dtype=float)
        plant = LtiSystem(a_full, np.zeros_like(a_full), b_full, discrete=False)
    else:
        core = demo_aircraft()
        n = core.n
        a_full = np.zeros((n + 1, n + 1))
        a_full[:n, :n] = core.a0
        a_full[:n, n:] = core.b
        b_full = np.zeros((n + 1, 1))
        b_full[n, 0] = 1.0
        plant = LtiSystem(a_full, np.zeros_like(a_full), b_full, discrete=False)

    sysd = discretize(plant, float(cfg["dt"]))
    n = sysd.n
    germ = GermSpec(
        (Jacobi(float(cfg["jacobi_a"]), float(cfg["jacobi_b"])),),
        (tuple(cfg["x0_support"]),),
    )
    basis = build_basis(germ, 1)
    x0 = tuple(
        PceVector(basis, np.asarray(c, dtype=float)) for c in cfg["x0_coeffs"]
    )
    if len(x0) != n:
        raise ValidationError(f"x0_coeffs must provide {n} entries, got {len(x0)}")
    x_min = np.full(n, -math.inf)
    x_min[n - 1] = -float(cfg["elevator_limit"])
    return MpcSpec(
        system=sysd,
        horizon=int(cfg["horizon"]),
        q=np.diag(np.asarray(cfg["q_diag"], dtype=float)),
        r=np.array([[float(cfg["r"])]]),
        p=np.diag(np.asarray(cfg["terminal_diag"], dtype=float)),
        x0=x0,
        x_min=x_min,
    )

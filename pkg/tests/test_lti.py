"""LTI layer: condensation, state transition, LQR, trajectory errors."""

import math

import numpy as np
import pytest
import scipy.linalg
from scipy.integrate import solve_ivp

from pceuq import (
    GermSpec,
    LtiSystem,
    MpcSpec,
    PceVector,
    SynthesisError,
    ValidationError,
    build_basis,
    condense_mpc,
    demo_aircraft,
    discretize,
    lqr_gain,
    pce_trajectory_error,
    prediction_matrices,
    propagate,
    solve_qp,
    state_transition,
)
from pceuq.lti import demo_lqr, demo_mpc_spec, mpc_constraint_labels, simulate


def hermite_basis(d=1):
    return build_basis(GermSpec.hermite(1), d)


def integrator():
    return LtiSystem(np.array([[1.0]]), np.zeros((1, 1)), np.array([[1.0]]),
                     discrete=True, dt=1.0)


class TestCondensation:
    def test_two_step_integrator_by_hand(self):
        basis = hermite_basis()
        spec = MpcSpec(
            system=integrator(), horizon=2,
            q=np.array([[1.0]]), r=np.array([[1.0]]), p=np.array([[1.0]]),
            x0=(PceVector(basis, [1.0, 0.0]),),
        )
        qp = condense_mpc(spec)
        np.testing.assert_allclose(qp.H, [[3.0, 1.0], [1.0, 2.0]])
        np.testing.assert_allclose([h.mean() for h in qp.h], [2.0, 1.0])
        assert qp.n_con == 0

    def test_cost_vector_inherits_initial_pce(self):
        basis = hermite_basis()
        spec = MpcSpec(
            system=integrator(), horizon=2,
            q=np.array([[1.0]]), r=np.array([[1.0]]), p=np.array([[1.0]]),
            x0=(PceVector(basis, [1.0, 0.1]),),
        )
        qp = condense_mpc(spec)
        np.testing.assert_allclose(qp.h[0].coeffs, [2.0, 0.2], rtol=1e-12)
        np.testing.assert_allclose(qp.h[1].coeffs, [1.0, 0.1], rtol=1e-12)

    def test_zero_initial_condition_gives_zero_input(self):
        basis = hermite_basis()
        spec = MpcSpec(
            system=integrator(), horizon=3,
            q=np.array([[1.0]]), r=np.array([[1.0]]), p=np.array([[1.0]]),
            x0=(PceVector(basis, [0.0, 0.0]),),
        )
        qp = condense_mpc(spec)
        sol = solve_qp(qp.H, qp.A, *qp.realize(np.array([[0.0]])))
        np.testing.assert_allclose(sol.x, np.zeros(3), atol=1e-12)

    def test_non_pd_cost_rejected(self):
        # with R = 0 and no terminal weight the last input is free, so the
        # condensed quadratic term is singular
        basis = hermite_basis()
        spec = MpcSpec(
            system=integrator(), horizon=2,
            q=np.array([[1.0]]), r=np.array([[0.0]]), p=np.array([[0.0]]),
            x0=(PceVector(basis, [1.0, 0.0]),),
        )
        with pytest.raises(ValidationError):
            condense_mpc(spec)

    def test_prediction_matches_simulation(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((3, 3)) * 0.4
        b = rng.standard_normal((3, 2))
        sysd = LtiSystem(a, np.zeros((3, 3)), b, discrete=True, dt=0.1)
        gamma, phi = prediction_matrices(a, b, 6)
        x0 = rng.standard_normal(3)
        inputs = rng.standard_normal((6, 2))
        stacked = gamma @ x0 + phi @ inputs.ravel()
        np.testing.assert_allclose(stacked, simulate(sysd, x0, inputs), atol=1e-10)

    def test_constraint_rows_linear_in_x0(self):
        basis = hermite_basis()
        spec = MpcSpec(
            system=integrator(), horizon=2,
            q=np.array([[1.0]]), r=np.array([[1.0]]), p=np.array([[1.0]]),
            x0=(PceVector(basis, [1.0, 0.25]),),
            x_max=np.array([2.0]),
        )
        qp = condense_mpc(spec)
        assert qp.n_con == 2
        # offset = Gamma x0 - xmax, so coefficient 1 inherits Gamma * 0.25
        np.testing.assert_allclose(qp.b[0].coeffs, [1.0 - 2.0, 0.25], rtol=1e-12)


class TestStateTransition:
    def test_time_zero_is_identity(self):
        sys = demo_aircraft()
        x0 = np.array([0.1, -0.2, 0.3, 4.0])
        np.testing.assert_allclose(
            state_transition(sys, np.zeros((1, 4)), x0, 0.0, 0.7), x0
        )

    def test_scalar_exponential(self):
        sys = LtiSystem(np.array([[-0.5]]), np.zeros((1, 1)), np.array([[0.0]]))
        val = state_transition(sys, np.zeros((1, 1)), np.array([1.0]), 2.0, 0.0)
        assert val[0] == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_matches_adaptive_integrator(self):
        sys = demo_aircraft()
        design = demo_lqr()
        x0 = np.array([0.0, 0.0, 0.0, 40.0])
        a_cl = sys.a0 - sys.b @ design.k

        result = solve_ivp(
            lambda t, x: a_cl @ x, (0.0, 8.0), x0, rtol=1e-11, atol=1e-11,
            t_eval=[2.0, 5.0, 8.0],
        )
        for idx, t in enumerate([2.0, 5.0, 8.0]):
            np.testing.assert_allclose(
                state_transition(sys, design.k, x0, t, 0.0),
                result.y[:, idx],
                rtol=1e-8, atol=1e-8,
            )

    def test_exponential_inverse_identity(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            m = rng.standard_normal((4, 4))
            m = m - 1.5 * np.eye(4)  # push spectrum leftward
            prod = scipy.linalg.expm(m) @ scipy.linalg.expm(-m)
            assert np.abs(prod - np.eye(4)).max() <= 1e-10

    def test_negative_time_rejected(self):
        with pytest.raises(ValidationError):
            state_transition(demo_aircraft(), np.zeros((1, 4)),
                             np.zeros(4), -1.0, 0.0)


class TestLqr:
    def test_scalar_unit_problem(self):
        design = lqr_gain(np.array([[0.0]]), np.array([[1.0]]),
                          np.array([[1.0]]), np.array([[1.0]]))
        np.testing.assert_allclose(design.p, [[1.0]], rtol=1e-10)
        np.testing.assert_allclose(design.k, [[1.0]], rtol=1e-10)

    def test_scalar_unstable_plant(self):
        design = lqr_gain(np.array([[1.0]]), np.array([[1.0]]),
                          np.array([[0.0]]), np.array([[1.0]]))
        np.testing.assert_allclose(design.p, [[2.0]], rtol=1e-9)
        np.testing.assert_allclose(design.k, [[2.0]], rtol=1e-9)

    def test_returned_gain_stabilizes(self):
        rng = np.random.default_rng(15)
        for _ in range(8):
            n, m = 4, 2
            a = rng.standard_normal((n, n))
            b = rng.standard_normal((n, m))
            design = lqr_gain(a, b, np.eye(n), np.eye(m))
            eigs = np.linalg.eigvals(a - b @ design.k)
            assert eigs.real.max() < 0

    def test_riccati_residual_contract(self):
        sys = demo_aircraft()
        design = demo_lqr()
        assert design.riccati_residual(sys.a0, sys.b) <= 1e-8

    def test_lyapunov_solver_against_scipy(self):
        rng = np.random.default_rng(2)
        from pceuq.lti import _solve_lyapunov

        for _ in range(5):
            a = rng.standard_normal((4, 4)) - 2 * np.eye(4)
            q = rng.standard_normal((4, 4))
            q = q @ q.T
            p = _solve_lyapunov(a, q)
            ref = scipy.linalg.solve_continuous_lyapunov(a, -q)
            np.testing.assert_allclose(p, ref, rtol=1e-9, atol=1e-11)

    def test_uncontrollable_plant_raises(self):
        a = np.diag([1.0, 2.0])
        b = np.array([[0.0], [0.0]])
        with pytest.raises(SynthesisError):
            lqr_gain(a, b, np.eye(2), np.eye(1))


class TestTrajectoryError:
    def setup_method(self):
        self.sys = demo_aircraft()
        self.design = demo_lqr()
        self.x0 = np.array([0.0, 0.0, 0.0, 40.0])
        self.germ = GermSpec.legendre(1)

    def test_zero_at_time_zero(self):
        rows = pce_trajectory_error(
            self.sys, self.design.k, self.x0, self.germ, [0.0], [2, 3, 4],
            components=[3],
        )
        assert all(v == 0.0 for _, _, _, v in rows)

    def test_monotone_in_retained_degree(self):
        t_grid = [0.5 * i for i in range(0, 41)]
        rows = pce_trajectory_error(
            self.sys, self.design.k, self.x0, self.germ, t_grid, [2, 3, 4],
            components=[3],
        )
        series = {n: {} for n in (2, 3, 4)}
        for t, n, _, v in rows:
            series[n][t] = v
        for t in t_grid:
            assert series[3][t] <= series[2][t] + 1e-12
            assert series[4][t] <= series[3][t] + 1e-12

    def test_decay_under_stability(self):
        rows = pce_trajectory_error(
            self.sys, self.design.k, self.x0, self.germ, [2.0, 20.0], [3],
            components=[3],
        )
        early, late = rows[0][3], rows[1][3]
        assert late < early

    def test_high_degree_resolves_smooth_map(self):
        rows = pce_trajectory_error(
            self.sys, self.design.k, self.x0, self.germ, [5.0], [12],
            components=[3],
        )
        assert rows[0][3] <= 1e-6

    def test_row_ordering(self):
        rows = pce_trajectory_error(
            self.sys, self.design.k, self.x0, self.germ, [0.0, 1.0], [2, 3],
            components=[0, 3],
        )
        key = [(t, n, c) for t, n, c, _ in rows]
        assert key == sorted(key)

    def test_multivariate_germ_rejected(self):
        with pytest.raises(ValidationError):
            pce_trajectory_error(
                self.sys, self.design.k, self.x0, GermSpec.legendre(2),
                [1.0], [2],
            )


class TestDiscretize:
    def test_integrator_exact(self):
        cont = LtiSystem(np.zeros((1, 1)), np.zeros((1, 1)), np.array([[1.0]]))
        sysd = discretize(cont, 0.25)
        np.testing.assert_allclose(sysd.a0, [[1.0]])
        np.testing.assert_allclose(sysd.b, [[0.25]])

    def test_scalar_decay(self):
        cont = LtiSystem(np.array([[-2.0]]), np.zeros((1, 1)), np.array([[1.0]]))
        sysd = discretize(cont, 0.5)
        assert sysd.a0[0, 0] == pytest.approx(math.exp(-1.0), rel=1e-12)
        assert sysd.b[0, 0] == pytest.approx((1 - math.exp(-1.0)) / 2.0, rel=1e-12)


class TestMpcDemo:
    def test_constant_contiguous_initial_window(self):
        spec = demo_mpc_spec()
        qp = condense_mpc(spec)
        labels = mpc_constraint_labels(spec)
        ys, report = propagate(qp)
        assert not report.varying
        stages = sorted(labels[i].stage for i in report.active.indices)
        assert stages[0] == 1
        assert stages == list(range(1, stages[-1] + 1))

    def test_input_deterministic_while_saturated(self):
        spec = demo_mpc_spec()
        qp = condense_mpc(spec)
        labels = mpc_constraint_labels(spec)
        ys, report = propagate(qp)
        window_end = max(labels[i].stage for i in report.active.indices)
        higher = np.array([np.abs(y.coeffs[1:]).max() for y in ys])
        assert higher[:window_end].max() <= 1e-9
        assert np.all(higher[window_end:] > 1e-9)

    def test_override_hook(self):
        spec = demo_mpc_spec({"horizon": 10, "elevator_limit": 0.05})
        assert spec.horizon == 10
        assert spec.x_min[-1] == pytest.approx(-0.05)
        with pytest.raises(ValidationError, match="bogus"):
            demo_mpc_spec({"bogus": 1.0})

    def test_initial_condition_matches_support(self):
        spec = demo_mpc_spec()
        basis = spec.basis
        phi = basis.eval_at(np.array([[-1.0], [1.0]]))
        alt = spec.x0[3].coeffs @ phi
        np.testing.assert_allclose(np.sort(alt), [-402.0, -381.0], rtol=1e-12)

    def test_active_set_constant_under_dense_probing(self):
        # the default probe uses four points; a dense sweep across the whole
        # support must report the same constant window
        from pceuq.qp import ProbePolicy

        spec = demo_mpc_spec()
        qp = condense_mpc(spec)
        _, sparse = propagate(qp)
        _, dense = propagate(qp, ProbePolicy(points_per_dim=25))
        assert not dense.varying
        assert dense.active.indices == sparse.active.indices

    def test_propagation_matches_per_node_solves(self):
        from pceuq.quadrature import tensor_rule

        spec = demo_mpc_spec()
        qp = condense_mpc(spec)
        ys, report = propagate(qp)
        assert not report.varying
        rule = tensor_rule(qp.basis.germ, [qp.basis.max_degree + 1])
        xs = np.array([solve_qp(qp.H, qp.A, *qp.realize(p)).x for p in rule.nodes])
        phi = qp.basis.eval_at(rule.nodes)
        coef = (phi * rule.weights) @ xs / qp.basis.sq_norms[:, None]
        lib = np.array([y.coeffs for y in ys]).T
        np.testing.assert_allclose(lib, coef, atol=1e-8)

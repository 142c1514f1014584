"""Gauss rules: exactness, positivity, symmetry, tensorization."""

import math

import numpy as np
import numpy.polynomial.hermite_e as herme
import numpy.polynomial.legendre as leg
import pytest
import scipy.special

from pceuq import (
    EvaluationError,
    GermSpec,
    Hermite,
    Jacobi,
    Legendre,
    ResourceLimitError,
    ValidationError,
    gauss_rule,
    inner_product,
    tensor_rule,
)
from pceuq.quadrature import QuadraturePolicy, refine
from pceuq.errors import AccuracyError


class TestUnivariateRules:
    def test_hermite_single_point(self):
        rule = gauss_rule(Hermite(), 1)
        np.testing.assert_allclose(rule.nodes.ravel(), [0.0], atol=1e-14)
        np.testing.assert_allclose(rule.weights, [1.0])

    def test_legendre_two_points(self):
        rule = gauss_rule(Legendre(), 2)
        np.testing.assert_allclose(
            np.sort(rule.nodes.ravel()), [-1 / math.sqrt(3), 1 / math.sqrt(3)], rtol=1e-14
        )
        np.testing.assert_allclose(rule.weights, [0.5, 0.5], rtol=1e-14)

    def test_hermite_two_points(self):
        rule = gauss_rule(Hermite(), 2)
        np.testing.assert_allclose(np.sort(rule.nodes.ravel()), [-1.0, 1.0], rtol=1e-14)
        np.testing.assert_allclose(rule.weights, [0.5, 0.5], rtol=1e-14)

    def test_rejects_zero_points(self):
        with pytest.raises(ValidationError):
            gauss_rule(Legendre(), 0)

    def test_matches_numpy_hermite(self):
        rule = gauss_rule(Hermite(), 7)
        x, w = herme.hermegauss(7)
        np.testing.assert_allclose(np.sort(rule.nodes.ravel()), np.sort(x), rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(
            rule.weights[np.argsort(rule.nodes.ravel())],
            w[np.argsort(x)] / math.sqrt(2 * math.pi),
            rtol=1e-12,
        )

    def test_matches_numpy_legendre(self):
        rule = gauss_rule(Legendre(), 6)
        x, w = leg.leggauss(6)
        np.testing.assert_allclose(np.sort(rule.nodes.ravel()), np.sort(x), rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(
            rule.weights[np.argsort(rule.nodes.ravel())], w[np.argsort(x)] / 2, rtol=1e-12
        )

    def test_matches_scipy_jacobi(self):
        a, b = 4.0, 1.0
        rule = gauss_rule(Jacobi(a, b), 5)
        x, w = scipy.special.roots_jacobi(5, a, b)
        mass = 2.0 ** (a + b + 1) * scipy.special.beta(a + 1, b + 1)
        np.testing.assert_allclose(np.sort(rule.nodes.ravel()), np.sort(x), rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(
            rule.weights[np.argsort(rule.nodes.ravel())], w[np.argsort(x)] / mass, rtol=1e-11
        )


_FAMILIES = [
    Hermite(),
    Legendre(),
    Jacobi(0.0, 0.0),
    Jacobi(4.0, 1.0),
    Jacobi(-0.5, -0.5),
    Jacobi(2.5, 0.3),
]


class TestExactnessSweep:
    @pytest.mark.parametrize("family", _FAMILIES, ids=lambda f: repr(f))
    @pytest.mark.parametrize("m", range(1, 11))
    def test_monomial_moments(self, family, m):
        rule = gauss_rule(family, m)
        x = rule.nodes[:, 0]
        for k in range(2 * m):
            approx = float(rule.weights @ x**k)
            exact = family.moment(k)
            # zero odd moments are compared at the cancellation scale E|x|^k
            scale = max(1.0, float(rule.weights @ np.abs(x) ** k))
            assert abs(approx - exact) <= 1e-11 * max(scale, abs(exact))

    @pytest.mark.parametrize("family", _FAMILIES, ids=lambda f: repr(f))
    @pytest.mark.parametrize("m", range(1, 11))
    def test_weights_positive(self, family, m):
        rule = gauss_rule(family, m)
        assert np.all(rule.weights > 0)

    @pytest.mark.parametrize(
        "family", [Hermite(), Legendre(), Jacobi(1.5, 1.5)], ids=lambda f: repr(f)
    )
    @pytest.mark.parametrize("m", [2, 5, 9])
    def test_symmetric_measures_have_symmetric_nodes(self, family, m):
        rule = gauss_rule(family, m)
        nodes = np.sort(rule.nodes.ravel())
        np.testing.assert_allclose(nodes, -nodes[::-1], atol=1e-12)


class TestTensorRules:
    def test_univariate_passthrough(self):
        germ = GermSpec.hermite(1)
        rule = tensor_rule(germ, [3])
        assert rule.n_points == 3
        assert rule.exact_degree == 5

    def test_product_weights(self):
        germ = GermSpec.legendre(2)
        rule = tensor_rule(germ, [2, 2])
        assert rule.n_points == 4
        np.testing.assert_allclose(rule.weights, [0.25] * 4)

    def test_exactness_limited_by_weakest_dimension(self):
        germ = GermSpec.legendre(2)
        rule = tensor_rule(germ, [1, 3])
        assert rule.exact_degree == 1

    def test_mixed_moments(self):
        germ = GermSpec((Hermite(), Legendre()))
        rule = tensor_rule(germ, [4, 4])
        x, y = rule.nodes[:, 0], rule.nodes[:, 1]
        # E[x^4 y^2] = 3 * 1/3 under the product measure
        assert rule.weights @ (x**4 * y**2) == pytest.approx(1.0, rel=1e-12)

    def test_grid_cap(self, monkeypatch):
        monkeypatch.setenv("PCEUQ_MAX_GRID", "100")
        germ = GermSpec.legendre(3)
        with pytest.raises(ResourceLimitError):
            tensor_rule(germ, [5, 5, 5])
        monkeypatch.setenv("PCEUQ_MAX_GRID", "200")
        rule = tensor_rule(germ, [5, 5, 5])
        assert rule.n_points == 125

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            tensor_rule(GermSpec.legendre(2), [3])


class TestInnerProduct:
    def test_hermite_degree_one_norm(self):
        rule = tensor_rule(GermSpec.hermite(1), [3])
        assert inner_product(rule, lambda x: x, lambda x: x) == pytest.approx(1.0, rel=1e-12)

    def test_hermite_orthogonality(self):
        rule = tensor_rule(GermSpec.hermite(1), [3])
        val = inner_product(rule, lambda x: x, lambda x: x**2 - 1)
        assert val == pytest.approx(0.0, abs=1e-12)

    def test_legendre_quadratic_norm(self):
        rule = tensor_rule(GermSpec.legendre(1), [4])
        p2 = lambda x: (3 * x**2 - 1) / 2
        assert inner_product(rule, p2, p2) == pytest.approx(1 / 5, rel=1e-12)

    def test_non_finite_value_names_the_node(self):
        rule = tensor_rule(GermSpec.legendre(1), [4])
        with pytest.raises(EvaluationError) as info:
            inner_product(rule, lambda x: np.where(x > 0, np.nan, x), lambda x: x)
        assert info.value.node is not None


class TestRefinement:
    def test_converges_for_smooth_integrand(self):
        germ = GermSpec.hermite(1)
        policy = QuadraturePolicy(initial=4)
        val = refine(
            germ,
            lambda rule: np.array([rule.weights @ np.exp(rule.nodes[:, 0])]),
            policy,
            degree_hint=1,
        )
        assert val[0] == pytest.approx(math.exp(0.5), rel=1e-10)

    def test_reports_last_two_estimates_on_failure(self):
        germ = GermSpec.legendre(1)
        policy = QuadraturePolicy(initial=2, rtol=0.0, atol=0.0, max_points=8)
        rng = np.random.default_rng(0)

        def jitter(rule):
            return np.array([rng.standard_normal()])

        with pytest.raises(AccuracyError) as info:
            refine(germ, jitter, policy, degree_hint=1)
        assert info.value.estimates is not None
        assert info.value.estimates[1] is not None


def test_csv_dump(tmp_path):
    rule = tensor_rule(GermSpec.legendre(2), [2, 2])
    path = tmp_path / "rule.csv"
    rule.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "x_1,x_2,w"
    assert len(lines) == 5

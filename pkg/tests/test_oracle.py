"""Enumeration, exact conditionals, Gaussian analytics, finite differences."""

import math

import numpy as np
import pytest

from netinfer.errors import NumericalError, ValidationError
from netinfer.model import (
    Dataset,
    DirectedApplicationModel,
    Population,
    ResponseFamily,
    Theta,
    UndirectedExampleModel,
    eta_connection,
    eta_response,
)
from netinfer.oracle import (
    enumerate_joint,
    exact_conditionals,
    fd_gradient,
    fd_hessian,
    fd_jacobian,
    gaussian_conditional_params,
)

from conftest import random_population, random_theta


@pytest.fixture
def small_enum(fig_pop, rng):
    spec = UndirectedExampleModel(ResponseFamily("bernoulli"))
    x = rng.uniform(0, 1, (3, 1))
    return spec, x, enumerate_joint(spec, fig_pop, x)


class TestEnumeration:
    def test_probabilities_sum_to_one(self, fig_pop, small_enum, rng):
        spec, x, enum = small_enum
        th = random_theta(rng, spec, fig_pop, scale=0.7)
        assert enum.probabilities(th).sum() == pytest.approx(1.0, abs=1e-12)

    def test_zero_theta_is_uniform(self, fig_pop, small_enum):
        spec, x, enum = small_enum
        lay = spec.layout(fig_pop)
        probs = enum.probabilities(Theta(np.zeros(lay.p), lay))
        np.testing.assert_allclose(probs, 1.0 / enum.n_states, atol=1e-15)

    def test_state_space_cap(self, rng):
        pop = random_population(rng, 7)  # 7 + 21 bits > 22
        spec = UndirectedExampleModel(ResponseFamily("bernoulli"))
        with pytest.raises(ValidationError):
            enumerate_joint(spec, pop, rng.uniform(0, 1, (7, 1)))

    def test_requires_bernoulli(self, fig_pop, rng):
        spec = UndirectedExampleModel(ResponseFamily("gaussian"))
        with pytest.raises(ValidationError):
            enumerate_joint(spec, fig_pop, rng.uniform(0, 1, (3, 1)))

    def test_hand_expanded_state_pair(self, fig_pop):
        """One mass ratio worked out from the raw model formula.

        State A: y = (1,0,0), single edge {0,1}.  State B: same but
        y_0 = 0.  With weights below, the exponent difference is
        alpha_Y + beta x_0 + spill * (x_1 z_01 + x_2 z_02) * ... reduced
        by hand to 0.5 + 0.25 + 0.1 * 0.5 (covariate spillover through
        the one edge).
        """
        spec = UndirectedExampleModel(ResponseFamily("bernoulli"))
        x = np.array([[0.5], [0.5], [1.0]])
        enum = enumerate_joint(spec, fig_pop, x)
        lay = spec.layout(fig_pop)
        v = np.zeros(lay.p)
        v[lay.index_of("resp_intercept")] = 0.5
        v[lay.index_of("resp_slope")] = 0.5
        v[lay.index_of("covariate_spillover")] = 0.1
        th = Theta(v, lay)
        bit_y0 = enum.coord_bit("y", 0)
        bit_z01 = enum.coord_bit("z", 0, 1)
        state_a = (1 << bit_y0) | (1 << bit_z01)
        state_b = 1 << bit_z01
        lm = enum.log_masses(th)
        # by hand: alpha*y0 + beta*x0*y0 + gXYZ*c01*(x0 y1 + x1 y0)*z01
        expected = 0.5 * 1 + 0.5 * 0.5 + 0.1 * (0.5 * 0.0 + 0.5 * 1.0)
        assert lm[state_a] - lm[state_b] == pytest.approx(expected, abs=1e-12)


class TestExactConditionals:
    def test_sums_to_one_per_rest_state(self, fig_pop, small_enum, rng):
        spec, x, enum = small_enum
        th = random_theta(rng, spec, fig_pop)
        bit = enum.coord_bit("z", 0, 1)
        table = exact_conditionals(enum, th, bit)
        present = table[~np.isnan(table)]
        assert present.size == enum.n_states // 2
        assert np.all((present > 0) & (present < 1))

    def test_matches_model_logodds(self, fig_pop, small_enum, rng):
        spec, x, enum = small_enum
        for _ in range(25):
            th = random_theta(rng, spec, fig_pop, scale=0.8)
            state = int(rng.integers(0, enum.n_states))
            y, z = enum.decode(state)
            data = Dataset(x, y, z)
            for i in range(3):
                want = enum.conditional_logodds(th, enum.coord_bit("y", i), state)
                assert eta_response(spec, fig_pop, data, th, i) == pytest.approx(
                    want, abs=1e-11)
            for (i, j) in enum.slots:
                want = enum.conditional_logodds(th, enum.coord_bit("z", i, j), state)
                assert eta_connection(spec, fig_pop, data, th, i, j) == pytest.approx(
                    want, abs=1e-11)

    def test_independence_submodel_ignores_rest_state(self, fig_pop, small_enum):
        spec, x, enum = small_enum
        lay = spec.layout(fig_pop)
        v = np.zeros(lay.p)
        v[lay.index_of("resp_intercept")] = 0.4
        v[lay.index_of("resp_slope")] = -0.8
        th = Theta(v, lay)
        table = exact_conditionals(enum, th, enum.coord_bit("y", 1))
        present = table[~np.isnan(table)]
        np.testing.assert_allclose(present, present[0], atol=1e-12)

    def test_log_normalizer_is_convex_along_segments(self, fig_pop, small_enum, rng):
        spec, x, enum = small_enum
        for _ in range(10):
            a = random_theta(rng, spec, fig_pop, scale=0.6)
            b = random_theta(rng, spec, fig_pop, scale=0.6)
            for t in (0.2, 0.5, 0.8):
                mid = Theta(t * a.values + (1 - t) * b.values, a.layout)
                lhs = enum.log_phi(mid)
                rhs = t * enum.log_phi(a) + (1 - t) * enum.log_phi(b)
                assert lhs <= rhs + 1e-10


class TestGaussianConditional:
    def test_zero_coupling(self, rng):
        pop = random_population(rng, 4)
        x = rng.uniform(0, 1, (4, 1))
        z = np.zeros((4, 4), dtype=np.int8)
        params = {"resp_intercept": 0.3, "resp_slope": -1.0,
                  "covariate_spillover": 0.5, "response_spillover": 0.0}
        m, cov = gaussian_conditional_params(pop, x, z, params, psi=2.0)
        np.testing.assert_allclose(m, 0.3 - 1.0 * x[:, 0], atol=1e-12)
        np.testing.assert_allclose(cov, 2.0 * np.eye(4), atol=1e-12)

    def test_two_unit_hand_inverse(self):
        pop = Population.complete(2)
        x = np.zeros((2, 1))
        z = np.array([[0, 1], [1, 0]], dtype=np.int8)
        params = {"resp_intercept": 0.0, "resp_slope": 0.0,
                  "covariate_spillover": 0.0, "response_spillover": 0.5}
        _, cov = gaussian_conditional_params(pop, x, z, params, psi=1.0)
        np.testing.assert_allclose(cov, [[4 / 3, 2 / 3], [2 / 3, 4 / 3]], atol=1e-12)

    def test_rejects_non_positive_definite(self):
        pop = Population.complete(2)
        z = np.array([[0, 1], [1, 0]], dtype=np.int8)
        params = {"resp_intercept": 0.0, "resp_slope": 0.0,
                  "covariate_spillover": 0.0, "response_spillover": 1.5}
        with pytest.raises(NumericalError, match="eigenvalue"):
            gaussian_conditional_params(pop, np.zeros((2, 1)), z, params, psi=1.0)


class TestFiniteDifferences:
    def test_linear_function_exact(self):
        w = np.array([1.5, -2.0, 0.25])
        f = lambda v: float(w @ v)
        g = fd_gradient(f, np.array([0.3, -0.7, 2.0]))
        np.testing.assert_allclose(g, w, atol=1e-9)
        h = fd_hessian(f, np.array([0.3, -0.7, 2.0]), step=1e-3)
        np.testing.assert_allclose(h, 0.0, atol=1e-9)

    def test_quadratic_recovers_matrix(self):
        a = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, -0.25], [0.0, -0.25, 0.5]])
        f = lambda v: float(0.5 * v @ a @ v)
        h = fd_hessian(f, np.array([0.1, 0.2, -0.1]), step=1e-4)
        np.testing.assert_allclose(h, a, atol=1e-6)
        jac = fd_jacobian(lambda v: a @ v, np.zeros(3))
        np.testing.assert_allclose(jac, a, atol=1e-10)

    def test_nonfinite_reported(self):
        f = lambda v: float("nan")
        with pytest.raises(NumericalError):
            fd_gradient(f, np.zeros(2))

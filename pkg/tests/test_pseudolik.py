"""Objective value, analytic gradient, and Hessian blocks."""

import math

import numpy as np
import pytest

from netinfer.errors import NumericalError
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
from netinfer.oracle import fd_gradient, fd_jacobian
from netinfer.pseudolik import (
    compile_design,
    design_value_grad,
    evaluate,
    gradient,
    neg_hessian_blocks,
    pseudo_loglik,
)

from conftest import random_dataset, random_population, random_theta

FAMILIES = [ResponseFamily("bernoulli"), ResponseFamily("poisson"),
            ResponseFamily("gaussian", psi=1.6)]


class TestValue:
    def test_zero_theta_undirected(self, fig_pop):
        spec = UndirectedExampleModel(ResponseFamily("bernoulli"))
        data = Dataset(np.zeros((3, 1)), np.zeros(3), np.zeros((3, 3), dtype=np.int8))
        th = Theta(np.zeros(spec.layout(fig_pop).p), spec.layout(fig_pop))
        assert pseudo_loglik(spec, fig_pop, data, th) == pytest.approx(-6 * math.log(2))

    def test_zero_theta_directed(self, fig_pop):
        spec = DirectedApplicationModel()
        data = Dataset(np.zeros((3, 4)), np.zeros(3),
                       np.zeros((3, 3), dtype=np.int8), directed=True)
        th = Theta(np.zeros(spec.layout(fig_pop).p), spec.layout(fig_pop))
        assert pseudo_loglik(spec, fig_pop, data, th) == pytest.approx(-9 * math.log(2))

    @pytest.mark.parametrize("family", FAMILIES, ids=lambda f: f.kind)
    def test_matches_sum_of_conditional_logdensities(self, rng, family):
        spec = UndirectedExampleModel(family)
        pop = random_population(rng, 5)
        data = random_dataset(rng, spec, pop)
        th = random_theta(rng, spec, pop)
        total = 0.0
        for i in range(5):
            eta = eta_response(spec, pop, data, th, i)
            total += float(family.log_pdf(data.responses[i], eta))
        for i in range(5):
            for j in range(i + 1, 5):
                eta = eta_connection(spec, pop, data, th, i, j)
                total += data.network[i, j] * eta - np.logaddexp(0.0, eta)
        assert pseudo_loglik(spec, pop, data, th) == pytest.approx(total, abs=1e-10)

    def test_nonfinite_eta_raises_with_index(self, fig_pop):
        spec = UndirectedExampleModel(ResponseFamily("bernoulli"))
        data = Dataset(np.zeros((3, 1)), np.zeros(3), np.zeros((3, 3), dtype=np.int8))
        lay = spec.layout(fig_pop)
        v = np.zeros(lay.p)
        v[0] = np.inf
        with pytest.raises(NumericalError, match="pair"):
            pseudo_loglik(spec, fig_pop, data, Theta(v, lay))

    def test_poisson_cap_fails_loudly(self, fig_pop):
        spec = UndirectedExampleModel(ResponseFamily("poisson"))
        data = Dataset(np.ones((3, 1)), np.ones(3), np.zeros((3, 3), dtype=np.int8))
        lay = spec.layout(fig_pop)
        v = np.zeros(lay.p)
        v[lay.index_of("resp_intercept")] = 400.0
        with pytest.raises(NumericalError):
            pseudo_loglik(spec, fig_pop, data, Theta(v, lay))

    def test_invariant_under_relabeling(self, rng):
        spec = UndirectedExampleModel(ResponseFamily("bernoulli"))
        pop = random_population(rng, 6)
        data = random_dataset(rng, spec, pop)
        th = random_theta(rng, spec, pop)
        perm = rng.permutation(6)
        inv = np.argsort(perm)
        pop2 = Population([sorted(inv[list(pop.neighborhoods[perm[i]])])
                           for i in range(6)])
        data2 = Dataset(data.covariates[perm], data.responses[perm],
                        data.network[np.ix_(perm, perm)])
        v2 = th.values.copy()
        v2[:6] = th.values[:6][perm]
        th2 = Theta(v2, spec.layout(pop2))
        assert pseudo_loglik(spec, pop2, data2, th2) == pytest.approx(
            pseudo_loglik(spec, pop, data, th), abs=1e-9)


class TestGradient:
    @pytest.mark.parametrize("family", FAMILIES, ids=lambda f: f.kind)
    def test_matches_finite_differences(self, rng, family):
        spec = UndirectedExampleModel(family)
        pop = random_population(rng, 6)
        data = random_dataset(rng, spec, pop)
        lay = spec.layout(pop)
        th = random_theta(rng, spec, pop, scale=0.3)
        g = gradient(spec, pop, data, th)
        f = lambda v: pseudo_loglik(spec, pop, data, Theta(v, lay))
        gfd = fd_gradient(f, th.values)
        assert np.max(np.abs(g - gfd)) / (1 + np.max(np.abs(g))) < 1e-6

    def test_directed_matches_finite_differences(self, rng):
        spec = DirectedApplicationModel()
        pop = random_population(rng, 5)
        data = random_dataset(rng, spec, pop)
        lay = spec.layout(pop)
        th = random_theta(rng, spec, pop, scale=0.3)
        g = gradient(spec, pop, data, th)
        f = lambda v: pseudo_loglik(spec, pop, data, Theta(v, lay))
        gfd = fd_gradient(f, th.values)
        assert np.max(np.abs(g - gfd)) / (1 + np.max(np.abs(g))) < 1e-6

    def test_hand_computed_balanced_instance(self):
        """theta = 0, complete overlap, hand-countable score coordinates."""
        pop = Population.complete(4)
        spec = UndirectedExampleModel(ResponseFamily("bernoulli"))
        x = np.array([[1.0], [1.0], [0.0], [0.0]])
        y = np.array([1.0, 0.0, 1.0, 0.0])
        z = np.zeros((4, 4), dtype=np.int8)
        z[0, 1] = z[1, 0] = 1
        z[2, 3] = z[3, 2] = 1
        data = Dataset(x, y, z)
        lay = spec.layout(pop)
        g = gradient(spec, pop, data, Theta(np.zeros(lay.p), lay))
        # Response part: resid = y - 1/2 = (+-1/2); intercept coord sums to 0.
        assert g[lay.index_of("resp_intercept")] == pytest.approx(0.0)
        # Slope coord: sum x * (y - 1/2) = 1/2 - 1/2 + 0 + 0 = 0.
        assert g[lay.index_of("resp_slope")] == pytest.approx(0.0)
        # Degree coord of unit 0: pairs (0,1),(0,2),(0,3): (1-1/2)+(0-1/2)*2 = -1/2.
        assert g[0] == pytest.approx(-0.5)
        # Transitivity: empty two-path changes everywhere except through the
        # two disjoint edges; every change statistic is 0 at this z except
        # pairs closing a path, but no unit has two edges, so coord = sum of
        # (z-1/2)*0 ... = 0.
        assert g[lay.index_of("transitivity")] == pytest.approx(0.0)
        # Response-spillover coord has two parts.  Response side: the
        # coefficient of y_i is sum_j y_j z_ij, nonzero (=1) for units 1 and
        # 3, each with residual -1/2, so -1.  Pair side: the only pair with
        # y_i y_j = 1 is (0,2) with z = 0, giving (0 - 1/2)*1 = -1/2.
        assert g[lay.index_of("response_spillover")] == pytest.approx(-1.5)

    def test_gaussian_without_response_spillover_is_least_squares_score(self, rng):
        spec = UndirectedExampleModel(ResponseFamily("gaussian", psi=2.0))
        pop = random_population(rng, 6)
        data = random_dataset(rng, spec, pop)
        lay = spec.layout(pop)
        th = random_theta(rng, spec, pop, scale=0.3)
        th.values[lay.index_of("response_spillover")] = 0.0
        g = gradient(spec, pop, data, th)
        u = (pop.overlap * (data.network != 0)).astype(float)
        design = np.column_stack([np.ones(6), data.covariates[:, 0],
                                  u @ data.covariates[:, 0]])
        beta = th.values[[lay.index_of("resp_intercept"), lay.index_of("resp_slope"),
                          lay.index_of("covariate_spillover")]]
        resid = (data.responses - design @ beta) / 2.0
        score = design.T @ resid
        got = g[[lay.index_of("resp_intercept"), lay.index_of("resp_slope"),
                 lay.index_of("covariate_spillover")]]
        # The covariate-spillover coordinate also carries the connection-side
        # part of the statistic; isolate by comparing on an empty network too.
        assert got[0] == pytest.approx(score[0], abs=1e-9)
        assert got[1] == pytest.approx(score[1], abs=1e-9)


class TestHessianBlocks:
    def test_zero_theta_propensity_block_closed_form(self, rng):
        n = 7
        pop = random_population(rng, n)
        spec = UndirectedExampleModel(ResponseFamily("bernoulli"))
        data = random_dataset(rng, spec, pop)
        lay = spec.layout(pop)
        a, _, _ = neg_hessian_blocks(spec, pop, data, Theta(np.zeros(lay.p), lay))
        expected = ((n - 2) * np.eye(n) + np.ones((n, n))) / 4.0
        np.testing.assert_allclose(a, expected, atol=1e-12)

    @pytest.mark.parametrize("family", FAMILIES, ids=lambda f: f.kind)
    def test_matches_finite_differences_of_gradient(self, rng, family):
        spec = UndirectedExampleModel(family)
        pop = random_population(rng, 5)
        data = random_dataset(rng, spec, pop)
        lay = spec.layout(pop)
        th = random_theta(rng, spec, pop, scale=0.3)
        a, b, c = neg_hessian_blocks(spec, pop, data, th)
        h = np.vstack([np.hstack([a, b]), np.hstack([b.T, c])])
        hfd = -fd_jacobian(lambda v: gradient(spec, pop, data, Theta(v, lay)),
                           th.values)
        assert np.max(np.abs(h - hfd)) < 1e-5

    def test_positive_semidefinite(self, rng):
        spec = UndirectedExampleModel(ResponseFamily("bernoulli"))
        pop = random_population(rng, 4)
        data = random_dataset(rng, spec, pop)
        th = random_theta(rng, spec, pop, scale=0.8)
        obj = evaluate(spec, pop, data, th, blocks=True)
        evals = np.linalg.eigvalsh(obj.neg_hessian())
        assert evals.min() >= -1e-10

    def test_concavity_along_segments(self, rng):
        for family in FAMILIES:
            spec = UndirectedExampleModel(family)
            pop = random_population(rng, 5)
            data = random_dataset(rng, spec, pop)
            a = random_theta(rng, spec, pop, scale=0.5)
            b = random_theta(rng, spec, pop, scale=0.5)
            fa = pseudo_loglik(spec, pop, data, a)
            fb = pseudo_loglik(spec, pop, data, b)
            for t in (0.25, 0.5, 0.75):
                mid = Theta(t * a.values + (1 - t) * b.values, a.layout)
                assert pseudo_loglik(spec, pop, data, mid) >= t * fa + (1 - t) * fb - 1e-10


class TestDesign:
    def test_value_grad_consistent_with_wrappers(self, rng):
        spec = DirectedApplicationModel()
        pop = random_population(rng, 5)
        data = random_dataset(rng, spec, pop)
        th = random_theta(rng, spec, pop)
        design = compile_design(spec, pop, data)
        value, grad = design_value_grad(design, th.values)
        assert value == pytest.approx(pseudo_loglik(spec, pop, data, th))
        np.testing.assert_allclose(grad, gradient(spec, pop, data, th), atol=1e-12)

    def test_deterministic_value(self, rng):
        spec = UndirectedExampleModel(ResponseFamily("bernoulli"))
        pop = random_population(rng, 8)
        data = random_dataset(rng, spec, pop)
        th = random_theta(rng, spec, pop)
        vals = {pseudo_loglik(spec, pop, data, th) for _ in range(5)}
        assert len(vals) == 1

import numpy as np
import pytest

from netinfer.model import (
    Dataset,
    DirectedApplicationModel,
    Population,
    ResponseFamily,
    Theta,
    UndirectedExampleModel,
)


@pytest.fixture
def fig_pop():
    """Three units with chained neighborhoods {0,1}, {0,1,2}, {1,2}."""
    return Population([[0, 1], [0, 1, 2], [1, 2]])


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_population(rng, n, reach=4):
    nbs = [np.unique(np.append(rng.integers(0, n, reach), i)) for i in range(n)]
    return Population(nbs)


def random_dataset(rng, spec, pop, density=0.4):
    n = pop.n_units
    if spec.directed:
        x = np.column_stack([
            rng.integers(0, 2, n), rng.integers(0, 2, n),
            rng.integers(0, 2, n), rng.integers(0, 4, n),
        ]).astype(float)
    else:
        x = rng.uniform(0.0, 1.0, (n, 1))
    z = (rng.random((n, n)) < density).astype(np.int8)
    np.fill_diagonal(z, 0)
    if not spec.directed:
        z = np.triu(z, 1)
        z = z + z.T
    kind = spec.family.kind
    if kind == "bernoulli":
        y = rng.integers(0, 2, n).astype(float)
    elif kind == "poisson":
        y = rng.poisson(2.0, n).astype(float)
    else:
        y = rng.normal(0.0, 1.0, n)
    return Dataset(x, y, z, directed=spec.directed)


def random_theta(rng, spec, pop, scale=0.4):
    lay = spec.layout(pop)
    return Theta(rng.normal(0.0, scale, lay.p), lay)

"""Domain types and model definitions.

A model couples a response family (Bernoulli, Poisson, or Gaussian with
known scale) with a set of unit-level terms ``g`` and pair-level terms
``h``.  Every term is affine in the scaled response ``y* = y / psi`` of
the unit it belongs to, which is what makes the full conditionals of
responses ordinary GLMs and the full conditionals of connections
logistic regressions.

Two concrete models are provided:

* :class:`UndirectedExampleModel` -- a single covariate, undirected
  connections, degree propensities, a non-overlap penalty, transitivity,
  and covariate/response spillover.
* :class:`DirectedApplicationModel` -- binary responses, directed
  connections, out/in propensities (the last in-propensity is pinned to
  zero for identifiability), covariate matching, reciprocity,
  transitivity, and covariate-response spillover.

The per-term callables here are the slow, obviously-correct reference
path used by the enumeration oracle and the test-suite; the vectorised
design construction in :mod:`netinfer.pseudolik` is validated against
them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, gammaln

from .errors import NumericalError, ValidationError

# Largest linear predictor for which exp(eta) is safely representable.
POISSON_ETA_MAX = math.log(np.finfo(np.float64).max) / 2.0

FAMILY_KINDS = ("bernoulli", "poisson", "gaussian")


# --------------------------------------------------------------------------
# Response families
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ResponseFamily:
    """One-parameter exponential family for responses, with known scale.

    ``psi`` is fixed at 1 for Bernoulli and Poisson responses and is the
    (known) variance for Gaussian responses.
    """

    kind: str
    psi: float = 1.0

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValidationError(f"unknown response family {self.kind!r}")
        if not self.psi > 0:
            raise ValidationError("scale psi must be positive")
        if self.kind != "gaussian" and self.psi != 1.0:
            raise ValidationError(f"psi must equal 1 for {self.kind} responses")

    def cumulant(self, eta):
        """Cumulant b(eta) of the conditional response distribution."""
        eta = np.asarray(eta, dtype=np.float64)
        if self.kind == "gaussian":
            return eta * eta / 2.0
        if self.kind == "poisson":
            self._check_poisson_eta(eta)
            return np.exp(eta)
        # Overflow-safe log(1 + exp(eta)).
        return np.logaddexp(0.0, eta)

    def mean(self, eta):
        """Conditional mean, the derivative of the cumulant."""
        eta = np.asarray(eta, dtype=np.float64)
        if self.kind == "gaussian":
            return eta + 0.0
        if self.kind == "poisson":
            self._check_poisson_eta(eta)
            return np.exp(eta)
        return expit(eta)

    def cumulant_second(self, eta):
        """Second derivative b''(eta); the conditional variance is psi * b''."""
        eta = np.asarray(eta, dtype=np.float64)
        if self.kind == "gaussian":
            return np.ones_like(eta)
        if self.kind == "poisson":
            self._check_poisson_eta(eta)
            return np.exp(eta)
        p = expit(eta)
        return p * (1.0 - p)

    def log_pdf(self, y, eta):
        """Log conditional density of y given linear predictor eta.

        Includes the base-measure part, so Gaussian values are genuine
        log densities and Poisson values include the -log(y!) term.
        """
        y = np.asarray(y, dtype=np.float64)
        eta = np.asarray(eta, dtype=np.float64)
        if self.kind == "gaussian":
            return (eta * y - eta * eta / 2.0) / self.psi \
                - y * y / (2.0 * self.psi) - 0.5 * math.log(2.0 * math.pi * self.psi)
        if self.kind == "poisson":
            self._check_poisson_eta(eta)
            return y * eta - np.exp(eta) - gammaln(y + 1.0)
        return y * eta - np.logaddexp(0.0, eta)

    def sample(self, eta, rng):
        """Draw one response per linear predictor."""
        eta = np.asarray(eta, dtype=np.float64)
        if self.kind == "gaussian":
            return rng.normal(eta, math.sqrt(self.psi))
        if self.kind == "poisson":
            self._check_poisson_eta(eta)
            return rng.poisson(np.exp(eta)).astype(np.float64)
        return (rng.random(eta.shape if eta.shape else None) < expit(eta)).astype(np.float64)

    def check_support(self, y):
        y = np.asarray(y, dtype=np.float64)
        if not np.all(np.isfinite(y)):
            raise ValidationError("responses contain non-finite values")
        if self.kind == "bernoulli" and not np.isin(y, (0.0, 1.0)).all():
            raise ValidationError("Bernoulli responses must lie in {0, 1}")
        if self.kind == "poisson" and not ((y >= 0).all() and (y == np.floor(y)).all()):
            raise ValidationError("Poisson responses must be nonnegative integers")

    def _check_poisson_eta(self, eta):
        if np.any(np.asarray(eta) > POISSON_ETA_MAX):
            raise NumericalError(
                f"Poisson linear predictor exceeds {POISSON_ETA_MAX:.1f}; exp(eta) would overflow"
            )


def cumulant(family: ResponseFamily, eta):
    return family.cumulant(eta)


def mean(family: ResponseFamily, eta):
    return family.mean(eta)


# --------------------------------------------------------------------------
# Population and dataset
# --------------------------------------------------------------------------

def _freeze(a):
    a.setflags(write=False)
    return a


class Population:
    """Units with fixed, known neighbourhoods.

    Neighbourhoods gate which pairs of units may interact; the overlap
    matrix and the overlap pair list are precomputed once because they
    are consulted on every objective evaluation and every Gibbs sweep.
    """

    def __init__(self, neighborhoods: Sequence[Sequence[int]]):
        n = len(neighborhoods)
        if n < 2:
            raise ValidationError("population needs at least 2 units")
        self.n_units = n
        nb_mask = np.zeros((n, n), dtype=bool)
        nbhd = []
        for i, members in enumerate(neighborhoods):
            idx = np.unique(np.asarray(list(members), dtype=np.int64))
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ValidationError(f"neighborhood of unit {i} has out-of-range members")
            if i not in idx:
                raise ValidationError(f"unit {i} must belong to its own neighborhood")
            nb_mask[i, idx] = True
            nbhd.append(_freeze(idx))
        self.neighborhoods = tuple(nbhd)
        self.nb_mask = _freeze(nb_mask)
        overlap = (nb_mask.astype(np.float32) @ nb_mask.astype(np.float32).T) > 0
        np.fill_diagonal(overlap, False)
        self.overlap = _freeze(overlap)
        iu = np.triu_indices(n, k=1)
        keep = overlap[iu]
        self.overlap_pairs = _freeze(
            np.stack([iu[0][keep], iu[1][keep]], axis=1).astype(np.int32)
        )

    @classmethod
    def complete(cls, n: int) -> "Population":
        """All units share one neighborhood; every pair overlaps."""
        full = list(range(n))
        return cls([full] * n)

    def check_pair(self, i: int, j: int):
        n = self.n_units
        if not (0 <= i < n and 0 <= j < n):
            raise ValidationError(f"unit index out of range: ({i}, {j}) with {n} units")
        if i == j:
            raise ValidationError("pair indices must be distinct")


@dataclass(frozen=True)
class Dataset:
    """Observed covariates, responses, and binary adjacency.

    ``network`` is an N x N 0/1 matrix with a zero diagonal, symmetric
    when ``directed`` is False.
    """

    covariates: np.ndarray
    responses: np.ndarray
    network: np.ndarray
    directed: bool = False

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.covariates, dtype=np.float64))
        if x.shape[0] == 1 and x.shape[1] > 1 and np.asarray(self.covariates).ndim == 1:
            x = x.T
        y = np.asarray(self.responses, dtype=np.float64)
        z = np.asarray(self.network)
        n = y.shape[0]
        if x.shape[0] != n or z.shape != (n, n):
            raise ValidationError(
                f"inconsistent shapes: covariates {x.shape}, responses {y.shape}, network {z.shape}"
            )
        if not np.isin(z, (0, 1)).all():
            raise ValidationError("network entries must be 0 or 1")
        z = z.astype(np.int8)
        if np.any(np.diag(z) != 0):
            raise ValidationError("network diagonal must be zero")
        if not self.directed and np.any(z != z.T):
            raise ValidationError("undirected network must be symmetric")
        object.__setattr__(self, "covariates", _freeze(x))
        object.__setattr__(self, "responses", _freeze(y))
        object.__setattr__(self, "network", _freeze(z))

    @property
    def n_units(self) -> int:
        return self.responses.shape[0]


# --------------------------------------------------------------------------
# Parameter layout
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamLayout:
    """Names and nuisance/interest split for a parameter vector.

    The vector is stored as [theta1 | theta2]: the per-unit connection
    propensities first, then the low-dimensional structural weights.
    """

    names: tuple
    n_theta1: int

    @property
    def p(self) -> int:
        return len(self.names)

    @property
    def n_theta2(self) -> int:
        return self.p - self.n_theta1

    @property
    def theta2_names(self) -> tuple:
        return self.names[self.n_theta1:]

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"unknown parameter name {name!r}") from None


@dataclass
class Theta:
    """Parameter vector plus its layout."""

    values: np.ndarray
    layout: ParamLayout

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.layout.p,):
            raise ValidationError(
                f"theta has {v.shape} entries, layout expects {self.layout.p}"
            )
        self.values = v

    @property
    def theta1(self) -> np.ndarray:
        return self.values[: self.layout.n_theta1]

    @property
    def theta2(self) -> np.ndarray:
        return self.values[self.layout.n_theta1:]

    def named(self) -> dict:
        return {name: float(v) for name, v in zip(self.layout.names, self.values)}

    def replace(self, theta1=None, theta2=None) -> "Theta":
        v = self.values.copy()
        if theta1 is not None:
            v[: self.layout.n_theta1] = theta1
        if theta2 is not None:
            v[self.layout.n_theta1:] = theta2
        return Theta(v, self.layout)


# --------------------------------------------------------------------------
# Neighborhood-bound pair indicators
# --------------------------------------------------------------------------

def overlap_indicator(pop: Population, i: int, j: int) -> int:
    """1 when the neighborhoods of i and j intersect."""
    pop.check_pair(i, j)
    return int(pop.overlap[i, j])


def two_path_indicator(pop: Population, z: np.ndarray, i: int, j: int) -> int:
    """1 when some shared-neighborhood unit k links i and j via z[i,k] = z[k,j] = 1."""
    pop.check_pair(i, j)
    ks = np.flatnonzero(pop.nb_mask[i] & pop.nb_mask[j])
    for k in ks:
        if k != i and k != j and z[i, k] == 1 and z[k, j] == 1:
            return 1
    return 0


def transitive_total(pop: Population, z: np.ndarray, directed: bool) -> int:
    """Sum of two-path indicators over present edges (the transitivity statistic)."""
    total = 0
    n = pop.n_units
    for i in range(n):
        js = range(n) if directed else range(i + 1, n)
        for j in js:
            if j != i and z[i, j] == 1 and two_path_indicator(pop, z, i, j):
                total += 1
    return total


def change_statistic_transitive(pop: Population, z: np.ndarray, i: int, j: int,
                                directed: bool = False) -> int:
    """Change in the transitivity statistic when z[i,j] is switched from 0 to 1.

    Recomputes the full statistic at both edge states; quadratic in N but
    exact, which is what the fast vectorised and incremental routes are
    checked against.
    """
    pop.check_pair(i, j)
    z1 = np.array(z, dtype=np.int8)
    z1[i, j] = 1
    if not directed:
        z1[j, i] = 1
    z0 = np.array(z, dtype=np.int8)
    z0[i, j] = 0
    if not directed:
        z0[j, i] = 0
    return transitive_total(pop, z1, directed) - transitive_total(pop, z0, directed)


def transitive_change_matrix(pop: Population, z: np.ndarray, directed: bool) -> np.ndarray:
    """Change in the transitivity statistic for every pair, vectorised.

    Entry (i, j) equals ``change_statistic_transitive(pop, z, i, j)``.
    Built from three masked matrix products; exact because all factors
    are small integers.
    """
    nb = pop.nb_mask.astype(np.float32)
    zf = np.asarray(z, dtype=np.float32)
    if directed:
        t = (zf * nb) @ (zf * nb.T)
    else:
        w = zf * nb
        t = w @ w.T
    t = np.rint(t).astype(np.int32)
    np.fill_diagonal(t, 0)
    d = (t >= 1)

    zi = np.asarray(z, dtype=bool)
    g = (zf * nb.T)  # g[j, b] = z[j, b] * (j in N_b)
    f0 = zf * (t == 0)
    f1 = zf * (t == 1)
    if directed:
        a0 = f0 @ g.T
        a1 = f1 @ g.T
        a = pop.nb_mask * np.where(zi, a1, a0)
        w = zf * nb
        b0 = w.T @ f0
        b1 = w.T @ f1
        b = pop.nb_mask.T * np.where(zi, b1, b0)
        delta = d.astype(np.int64) + np.rint(a).astype(np.int64) + np.rint(b).astype(np.int64)
    else:
        p0 = f0 @ g.T
        p1 = f1 @ g.T
        term = pop.nb_mask * np.where(zi, p1, p0)
        term = np.rint(term).astype(np.int64)
        delta = d.astype(np.int64) + term + term.T
    np.fill_diagonal(delta, 0)
    return delta


# --------------------------------------------------------------------------
# Term abstraction
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GTerm:
    """Unit-level term: value(x_i, y*) = part0(x_i) + part1(x_i) * y*."""

    name: str
    width: int
    part0: Callable
    part1: Callable
    indices: np.ndarray

    def value(self, x_i, ystar_i):
        return np.asarray(self.part0(x_i), dtype=np.float64) \
            + np.asarray(self.part1(x_i), dtype=np.float64) * ystar_i


@dataclass(frozen=True)
class HTerm:
    """Pair-level term.

    ``value`` evaluates the statistic for one pair; ``ycoef`` is the
    coefficient of unit i's scaled response in the pair terms that touch
    it (both edge orientations for directed models); ``zchange`` is the
    change in the term's total statistic when z[i,j] flips 0 -> 1.
    """

    name: str
    width: int
    value: Callable       # (pop, x, ystar, z, i, j) -> (width,)
    ycoef: Callable       # (pop, x, ystar, z, i, j) -> (width,)
    zchange: Callable     # (pop, x, ystar, z, i, j) -> (width,)
    indices: np.ndarray


class ModelSpec:
    """Base class wiring terms, layout, and reference computations."""

    family: ResponseFamily
    directed: bool

    # Subclasses populate these in __init__.
    _g_terms: list
    _h_terms: list
    _layout_cache: dict

    def layout(self, pop: Population) -> ParamLayout:
        raise NotImplementedError

    def validate_data(self, pop: Population, data: Dataset):
        if data.n_units != pop.n_units:
            raise ValidationError("dataset and population disagree on the unit count")
        if data.directed != self.directed:
            raise ValidationError(
                f"model expects directed={self.directed} but dataset has directed={data.directed}"
            )
        self.family.check_support(data.responses)

    def g_terms(self, pop: Population) -> list:
        return self._g_terms

    def h_terms(self, pop: Population) -> list:
        return self._h_terms

    # -- reference computations (per-pair python; exact, test oracle) ------

    def _pairs(self, n):
        if self.directed:
            return [(i, j) for i in range(n) for j in range(n) if i != j]
        return [(i, j) for i in range(n) for j in range(i + 1, n)]

    def sufficient_statistics(self, pop: Population, data: Dataset) -> np.ndarray:
        """Stacked totals of every term at the observed data."""
        lay = self.layout(pop)
        x, z = data.covariates, data.network
        ystar = data.responses / self.family.psi
        out = np.zeros(lay.p)
        for i in range(pop.n_units):
            for term in self.g_terms(pop):
                out[term.indices] += term.value(x[i], ystar[i])
        for (i, j) in self._pairs(pop.n_units):
            for term in self.h_terms(pop):
                out[term.indices] += term.value(pop, x, ystar, z, i, j)
        return out

    def response_coef(self, pop: Population, data: Dataset, i: int) -> np.ndarray:
        """Coefficient vector of y*_i in the joint exponent (Prop.-1 style)."""
        lay = self.layout(pop)
        x, z = data.covariates, data.network
        ystar = data.responses / self.family.psi
        out = np.zeros(lay.p)
        for term in self.g_terms(pop):
            out[term.indices] += np.asarray(term.part1(x[i]), dtype=np.float64)
        for j in range(pop.n_units):
            if j == i:
                continue
            for term in self.h_terms(pop):
                out[term.indices] += term.ycoef(pop, x, ystar, z, i, j)
        return out

    def pair_change(self, pop: Population, data: Dataset, i: int, j: int) -> np.ndarray:
        """Change of the full statistic vector when z[i,j] flips 0 -> 1."""
        pop.check_pair(i, j)
        lay = self.layout(pop)
        x, z = data.covariates, data.network
        ystar = data.responses / self.family.psi
        out = np.zeros(lay.p)
        for term in self.h_terms(pop):
            out[term.indices] += term.zchange(pop, x, ystar, z, i, j)
        return out


def eta_response(spec: ModelSpec, pop: Population, data: Dataset, theta: Theta, i: int) -> float:
    """Linear predictor of unit i's response conditional."""
    coef = spec.response_coef(pop, data, i)
    eta = float(theta.values @ coef)
    if not math.isfinite(eta):
        raise NumericalError(f"non-finite response linear predictor at unit {i}")
    return eta


def eta_connection(spec: ModelSpec, pop: Population, data: Dataset, theta: Theta,
                   i: int, j: int) -> float:
    """Log odds of connection (i, j) given everything else."""
    chg = spec.pair_change(pop, data, i, j)
    eta = float(theta.values @ chg)
    if not math.isfinite(eta):
        raise NumericalError(f"non-finite connection linear predictor at pair ({i}, {j})")
    return eta


def sufficient_statistics(spec: ModelSpec, pop: Population, data: Dataset) -> np.ndarray:
    return spec.sufficient_statistics(pop, data)


# --------------------------------------------------------------------------
# Concrete model: undirected example
# --------------------------------------------------------------------------

class UndirectedExampleModel(ModelSpec):
    """Single-covariate undirected model.

    theta1: per-unit edge propensities (N weights).
    theta2: non-overlap penalty, response intercept and slope,
    transitivity, covariate spillover, response spillover.
    """

    THETA2_NAMES = (
        "nonoverlap_penalty",   # weight on -(1 - c_ij) z_ij log N
        "resp_intercept",
        "resp_slope",
        "transitivity",
        "covariate_spillover",
        "response_spillover",
    )

    def __init__(self, family: ResponseFamily):
        self.family = family
        self.directed = False
        self._layouts = {}

    def layout(self, pop: Population) -> ParamLayout:
        n = pop.n_units
        if n not in self._layouts:
            names = tuple(f"edge_propensity[{i + 1}]" for i in range(n)) + self.THETA2_NAMES
            self._layouts[n] = ParamLayout(names=names, n_theta1=n)
        return self._layouts[n]

    def validate_data(self, pop, data):
        super().validate_data(pop, data)
        if data.covariates.shape[1] != 1:
            raise ValidationError("undirected example model expects a single covariate column")

    def g_terms(self, pop):
        n = pop.n_units
        return [
            GTerm("resp_intercept", 1, lambda xi: 0.0, lambda xi: 1.0,
                  np.array([n + 1])),
            GTerm("resp_slope", 1, lambda xi: 0.0, lambda xi: float(xi[0]),
                  np.array([n + 2])),
        ]

    def h_terms(self, pop):
        n = pop.n_units
        logn = math.log(n)

        def deg_value(pop, x, ys, z, i, j):
            v = np.zeros(n)
            v[i] = z[i, j]
            v[j] = z[i, j]
            return v

        def deg_ycoef(pop, x, ys, z, i, j):
            return np.zeros(n)

        def deg_zchange(pop, x, ys, z, i, j):
            v = np.zeros(n)
            v[i] = 1.0
            v[j] = 1.0
            return v

        def pen_value(pop, x, ys, z, i, j):
            return -(1.0 - pop.overlap[i, j]) * z[i, j] * logn

        def pen_zchange(pop, x, ys, z, i, j):
            return -(1.0 - pop.overlap[i, j]) * logn

        def trans_value(pop, x, ys, z, i, j):
            return float(two_path_indicator(pop, z, i, j) * z[i, j])

        def trans_zchange(pop, x, ys, z, i, j):
            return float(change_statistic_transitive(pop, z, i, j, directed=False))

        def cov_value(pop, x, ys, z, i, j):
            return pop.overlap[i, j] * (x[i, 0] * ys[j] + x[j, 0] * ys[i]) * z[i, j]

        def cov_ycoef(pop, x, ys, z, i, j):
            return pop.overlap[i, j] * x[j, 0] * z[i, j]

        def cov_zchange(pop, x, ys, z, i, j):
            return pop.overlap[i, j] * (x[i, 0] * ys[j] + x[j, 0] * ys[i])

        def resp_value(pop, x, ys, z, i, j):
            return pop.overlap[i, j] * ys[i] * ys[j] * z[i, j]

        def resp_ycoef(pop, x, ys, z, i, j):
            return pop.overlap[i, j] * ys[j] * z[i, j]

        def resp_zchange(pop, x, ys, z, i, j):
            return pop.overlap[i, j] * ys[i] * ys[j]

        zero = lambda pop, x, ys, z, i, j: 0.0
        return [
            HTerm("edge_propensity", n, deg_value, deg_ycoef, deg_zchange,
                  np.arange(n)),
            HTerm("nonoverlap_penalty", 1, pen_value, zero, pen_zchange,
                  np.array([n])),
            HTerm("transitivity", 1, trans_value, zero, trans_zchange,
                  np.array([n + 3])),
            HTerm("covariate_spillover", 1, cov_value, cov_ycoef, cov_zchange,
                  np.array([n + 4])),
            HTerm("response_spillover", 1, resp_value, resp_ycoef, resp_zchange,
                  np.array([n + 5])),
        ]


# --------------------------------------------------------------------------
# Concrete model: directed application
# --------------------------------------------------------------------------

class DirectedApplicationModel(ModelSpec):
    """Directed binary-response model with four covariate columns.

    Column 0 is a binary focal covariate (the spillover source); columns
    1 and 2 are binary attributes matched between sender and receiver;
    column 3 is a categorical attribute matched exactly.  The last
    in-propensity is excluded from the parameter vector: in- and
    out-degree totals coincide, so one weight is redundant.
    """

    THETA2_NAMES = (
        "resp_intercept",
        "resp_slope[1]",
        "resp_slope[2]",
        "resp_slope[3]",
        "nonoverlap_penalty",
        "reciprocity",
        "transitivity",
        "focal_edge",
        "match_edge[2]",
        "match_edge[3]",
        "match_edge[4]",
        "response_edge",
        "focal_response_spillover",
    )

    def __init__(self, family: ResponseFamily | None = None):
        self.family = family if family is not None else ResponseFamily("bernoulli")
        if self.family.kind != "bernoulli":
            raise ValidationError("directed application model requires Bernoulli responses")
        self.directed = True
        self._layouts = {}

    def layout(self, pop: Population) -> ParamLayout:
        n = pop.n_units
        if n not in self._layouts:
            names = tuple(f"out_propensity[{i + 1}]" for i in range(n)) \
                + tuple(f"in_propensity[{j + 1}]" for j in range(n - 1)) \
                + self.THETA2_NAMES
            self._layouts[n] = ParamLayout(names=names, n_theta1=2 * n - 1)
        return self._layouts[n]

    def validate_data(self, pop, data):
        super().validate_data(pop, data)
        if data.covariates.shape[1] != 4:
            raise ValidationError("directed application model expects 4 covariate columns")
        for col in (0, 1, 2):
            if not np.isin(data.covariates[:, col], (0.0, 1.0)).all():
                raise ValidationError(f"covariate column {col} must be binary")

    def g_terms(self, pop):
        n1 = 2 * pop.n_units - 1
        terms = [GTerm("resp_intercept", 1, lambda xi: 0.0, lambda xi: 1.0,
                       np.array([n1]))]
        for m in range(3):
            terms.append(GTerm(
                f"resp_slope[{m + 1}]", 1, lambda xi: 0.0,
                lambda xi, m=m: float(xi[m]), np.array([n1 + 1 + m]),
            ))
        return terms

    def h_terms(self, pop):
        n = pop.n_units
        n1 = 2 * n - 1
        logn = math.log(n)

        def out_value(pop, x, ys, z, i, j):
            v = np.zeros(n)
            v[i] = z[i, j]
            return v

        def out_ycoef(pop, x, ys, z, i, j):
            return np.zeros(n)

        def out_zchange(pop, x, ys, z, i, j):
            v = np.zeros(n)
            v[i] = 1.0
            return v

        def in_value(pop, x, ys, z, i, j):
            v = np.zeros(n - 1)
            if j < n - 1:
                v[j] = z[i, j]
            return v

        def in_ycoef(pop, x, ys, z, i, j):
            return np.zeros(n - 1)

        def in_zchange(pop, x, ys, z, i, j):
            v = np.zeros(n - 1)
            if j < n - 1:
                v[j] = 1.0
            return v

        def pen_value(pop, x, ys, z, i, j):
            return -(1.0 - pop.overlap[i, j]) * z[i, j] * logn

        def pen_zchange(pop, x, ys, z, i, j):
            return -(1.0 - pop.overlap[i, j]) * logn

        def recip_value(pop, x, ys, z, i, j):
            return 0.5 * z[i, j] * z[j, i]

        def recip_zchange(pop, x, ys, z, i, j):
            # The statistic z_ij z_ji / 2 appears once for each edge
            # orientation, so the flip contributes z_ji in total.
            return float(z[j, i])

        def trans_value(pop, x, ys, z, i, j):
            return float(two_path_indicator(pop, z, i, j) * z[i, j])

        def trans_zchange(pop, x, ys, z, i, j):
            return float(change_statistic_transitive(pop, z, i, j, directed=True))

        def focal_value(pop, x, ys, z, i, j):
            return pop.overlap[i, j] * x[i, 0] * z[i, j]

        def focal_zchange(pop, x, ys, z, i, j):
            return pop.overlap[i, j] * x[i, 0]

        def make_match(m):
            def value(pop, x, ys, z, i, j):
                return pop.overlap[i, j] * float(x[i, m] == x[j, m]) * z[i, j]

            def zchange(pop, x, ys, z, i, j):
                return pop.overlap[i, j] * float(x[i, m] == x[j, m])

            return value, zchange

        def respedge_value(pop, x, ys, z, i, j):
            return pop.overlap[i, j] * ys[j] * z[i, j]

        def respedge_ycoef(pop, x, ys, z, i, j):
            # y_i appears in the reversed pair term (j, i).
            return pop.overlap[j, i] * z[j, i]

        def respedge_zchange(pop, x, ys, z, i, j):
            return pop.overlap[i, j] * ys[j]

        def spill_value(pop, x, ys, z, i, j):
            return pop.overlap[i, j] * x[i, 0] * ys[j] * z[i, j]

        def spill_ycoef(pop, x, ys, z, i, j):
            return pop.overlap[j, i] * x[j, 0] * z[j, i]

        def spill_zchange(pop, x, ys, z, i, j):
            return pop.overlap[i, j] * x[i, 0] * ys[j]

        zero = lambda pop, x, ys, z, i, j: 0.0
        terms = [
            HTerm("out_propensity", n, out_value, out_ycoef, out_zchange,
                  np.arange(n)),
            HTerm("in_propensity", n - 1, in_value, in_ycoef, in_zchange,
                  np.arange(n, 2 * n - 1)),
            HTerm("nonoverlap_penalty", 1, pen_value, zero, pen_zchange,
                  np.array([n1 + 4])),
            HTerm("reciprocity", 1, recip_value, zero, recip_zchange,
                  np.array([n1 + 5])),
            HTerm("transitivity", 1, trans_value, zero, trans_zchange,
                  np.array([n1 + 6])),
            HTerm("focal_edge", 1, focal_value, zero, focal_zchange,
                  np.array([n1 + 7])),
        ]
        for m in (1, 2, 3):
            value, zchange = make_match(m)
            terms.append(HTerm(f"match_edge[{m + 1}]", 1, value, zero, zchange,
                               np.array([n1 + 7 + m])))
        terms.append(HTerm("response_edge", 1, respedge_value, respedge_ycoef,
                           respedge_zchange, np.array([n1 + 11])))
        terms.append(HTerm("focal_response_spillover", 1, spill_value, spill_ycoef,
                           spill_zchange, np.array([n1 + 12])))
        return terms

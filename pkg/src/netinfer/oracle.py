"""Exact brute-force machinery for tiny instances.

Complete enumeration of the joint law of binary responses and binary
connections (with its normalising constant), exact conditionals derived
from the enumeration, the closed-form Gaussian conditional of the
response vector given the network, and finite-difference derivatives.
These are the independent ground truth that the linear predictors, the
analytic gradient/Hessian, and the Gibbs sampler are verified against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import NumericalError, ValidationError
from .model import ModelSpec, Population, Theta

MAX_STATE_BITS = 22


@dataclass
class Enumeration:
    """All joint states of (responses, connections) with their statistics.

    States are encoded as integers: bit ``i`` (i < N) is the response of
    unit i, bit ``N + s`` is connection slot ``s``.  Connection slots are
    the pairs i < j in lexicographic order for undirected models and all
    ordered pairs (i, j), i != j, in lexicographic order for directed
    models.  Statistics are precomputed once, so evaluating the law at a
    new parameter vector is a single matrix-vector product.
    """

    spec: ModelSpec
    pop: Population
    covariates: np.ndarray
    slots: list            # list of (i, j) per connection bit
    stats: np.ndarray      # (n_states, p)

    @property
    def n_bits(self) -> int:
        return self.pop.n_units + len(self.slots)

    @property
    def n_states(self) -> int:
        return self.stats.shape[0]

    def coord_bit(self, kind: str, i: int, j: int | None = None) -> int:
        """Bit position of a response coordinate ('y', i) or connection ('z', i, j)."""
        if kind == "y":
            return i
        if kind == "z":
            if not self.spec.directed and i > j:
                i, j = j, i
            return self.pop.n_units + self.slots.index((i, j))
        raise ValidationError(f"unknown coordinate kind {kind!r}")

    def decode(self, state: int):
        """State integer -> (y vector, z matrix)."""
        n = self.pop.n_units
        y = np.array([(state >> b) & 1 for b in range(n)], dtype=np.float64)
        z = np.zeros((n, n), dtype=np.int8)
        for s, (i, j) in enumerate(self.slots):
            if (state >> (n + s)) & 1:
                z[i, j] = 1
                if not self.spec.directed:
                    z[j, i] = 1
        return y, z

    def log_masses(self, theta: Theta) -> np.ndarray:
        return self.stats @ theta.values

    def log_phi(self, theta: Theta) -> float:
        return float(logsumexp(self.log_masses(theta)))

    def probabilities(self, theta: Theta) -> np.ndarray:
        lm = self.log_masses(theta)
        return np.exp(lm - logsumexp(lm))

    def conditional_prob_one(self, theta: Theta, bit: int, state: int) -> float:
        """P(coordinate at ``bit`` equals 1 | all other coordinates of ``state``)."""
        probs = self.probabilities(theta)
        s1 = state | (1 << bit)
        s0 = s1 ^ (1 << bit)
        return float(probs[s1] / (probs[s0] + probs[s1]))

    def conditional_logodds(self, theta: Theta, bit: int, state: int) -> float:
        p1 = self.conditional_prob_one(theta, bit, state)
        return math.log(p1) - math.log(1.0 - p1)


def enumerate_joint(spec: ModelSpec, pop: Population, covariates, theta: Theta | None = None):
    """Enumerate the joint distribution of a small Bernoulli instance.

    Returns an :class:`Enumeration`; when ``theta`` is given, also the
    probability table and the normalising constant at that value.
    """
    if spec.family.kind != "bernoulli":
        raise ValidationError("joint enumeration requires Bernoulli responses")
    n = pop.n_units
    if spec.directed:
        slots = [(i, j) for i in range(n) for j in range(n) if i != j]
    else:
        slots = [(i, j) for i in range(n) for j in range(i + 1, n)]
    n_bits = n + len(slots)
    if n_bits > MAX_STATE_BITS:
        raise ValidationError(
            f"state space of {n_bits} bits exceeds the {MAX_STATE_BITS}-bit enumeration cap"
        )

    x = np.atleast_2d(np.asarray(covariates, dtype=np.float64))
    if x.shape[0] == 1 and np.asarray(covariates).ndim == 1:
        x = x.T
    lay = spec.layout(pop)
    g_terms = spec.g_terms(pop)
    h_terms = spec.h_terms(pop)
    pairs = spec._pairs(n)

    n_states = 1 << n_bits
    stats = np.zeros((n_states, lay.p))
    z = np.zeros((n, n), dtype=np.int8)
    for state in range(n_states):
        y = np.array([(state >> b) & 1 for b in range(n)], dtype=np.float64)
        z[:] = 0
        for s, (i, j) in enumerate(slots):
            if (state >> (n + s)) & 1:
                z[i, j] = 1
                if not spec.directed:
                    z[j, i] = 1
        row = stats[state]
        for i in range(n):
            for term in g_terms:
                row[term.indices] += term.value(x[i], y[i])
        for (i, j) in pairs:
            for term in h_terms:
                row[term.indices] += term.value(pop, x, y, z, i, j)

    enum = Enumeration(spec=spec, pop=pop, covariates=x, slots=slots, stats=stats)
    if theta is None:
        return enum
    return enum, enum.probabilities(theta), math.exp(enum.log_phi(theta))


def exact_conditionals(enum: Enumeration, theta: Theta, bit: int) -> np.ndarray:
    """P(coordinate = 1 | rest) for every rest-state, by direct summation.

    Returns an array indexed by the state with the coordinate cleared;
    entries at indices with the bit set are NaN.
    """
    probs = enum.probabilities(theta)
    out = np.full(enum.n_states, np.nan)
    mask = 1 << bit
    for s0 in range(enum.n_states):
        if s0 & mask:
            continue
        s1 = s0 | mask
        out[s0] = probs[s1] / (probs[s0] + probs[s1])
    return out


def gaussian_conditional_params(pop: Population, covariates, z, theta2_map: dict,
                                psi: float):
    """Mean and covariance of the Gaussian response vector given the network.

    ``theta2_map`` must provide ``resp_intercept``, ``resp_slope``,
    ``covariate_spillover`` and ``response_spillover``.  The response
    vector is jointly Gaussian with mean ``(I - xi U)^-1 v`` and
    covariance ``psi (I - xi U)^-1`` where ``U`` is the overlap-gated
    adjacency and ``xi = response_spillover / psi``; positive
    definiteness of ``I - xi U`` is required and checked.
    """
    x = np.asarray(covariates, dtype=np.float64).reshape(pop.n_units, -1)[:, 0]
    u = pop.overlap * (np.asarray(z) != 0)
    u = u.astype(np.float64)
    xi = theta2_map["response_spillover"] / psi
    mat = np.eye(pop.n_units) - xi * u
    evals = np.linalg.eigvalsh((mat + mat.T) / 2.0)
    if evals.min() <= 0:
        raise NumericalError(
            f"I - xi*U is not positive definite (smallest eigenvalue {evals.min():.6g})"
        )
    v = theta2_map["resp_intercept"] + theta2_map["resp_slope"] * x \
        + theta2_map["covariate_spillover"] * (u @ x)
    inv = np.linalg.inv(mat)
    return inv @ v, psi * inv


def fd_gradient(f, theta: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient with per-coordinate scaled steps."""
    theta = np.asarray(theta, dtype=np.float64)
    out = np.empty_like(theta)
    for k in range(theta.size):
        h = step * max(1.0, abs(theta[k]))
        tp = theta.copy()
        tm = theta.copy()
        tp[k] += h
        tm[k] -= h
        fp, fm = f(tp), f(tm)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericalError(f"non-finite function value near coordinate {k}")
        out[k] = (fp - fm) / (2.0 * h)
    return out


def fd_jacobian(g, theta: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of a vector-valued function.

    Applied to an analytic gradient this gives a Hessian estimate that is
    far more accurate than second differences of the scalar objective.
    """
    theta = np.asarray(theta, dtype=np.float64)
    cols = []
    for k in range(theta.size):
        h = step * max(1.0, abs(theta[k]))
        tp = theta.copy()
        tm = theta.copy()
        tp[k] += h
        tm[k] -= h
        cols.append((np.asarray(g(tp)) - np.asarray(g(tm))) / (2.0 * h))
    return np.stack(cols, axis=1)


def fd_hessian(f, theta: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference Hessian with per-coordinate scaled steps."""
    theta = np.asarray(theta, dtype=np.float64)
    p = theta.size
    h = step * np.maximum(1.0, np.abs(theta))
    out = np.empty((p, p))
    f0 = f(theta)
    if not math.isfinite(f0):
        raise NumericalError("non-finite function value at the expansion point")
    for k in range(p):
        tp = theta.copy()
        tm = theta.copy()
        tp[k] += h[k]
        tm[k] -= h[k]
        out[k, k] = (f(tp) - 2.0 * f0 + f(tm)) / h[k] ** 2
        for l in range(k + 1, p):
            tpp = theta.copy(); tpp[k] += h[k]; tpp[l] += h[l]
            tpm = theta.copy(); tpm[k] += h[k]; tpm[l] -= h[l]
            tmp = theta.copy(); tmp[k] -= h[k]; tmp[l] += h[l]
            tmm = theta.copy(); tmm[k] -= h[k]; tmm[l] -= h[l]
            val = (f(tpp) - f(tpm) - f(tmp) + f(tmm)) / (4.0 * h[k] * h[l])
            out[k, l] = out[l, k] = val
    return out

"""Goodness-of-fit diagnostics.

Simulation-based reference envelopes for network and spillover
statistics, ROC/AUC evaluation of response predictions, and the
covariates-only logistic baseline the joint model is compared against.
Everything here emits plain arrays or plot-ready rows; rendering is out
of scope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .errors import ValidationError
from .glmfit import glm_fit
from .model import Dataset, ModelSpec, Population, ResponseFamily, Theta
from .pseudolik import response_design
from .sampler import GibbsConfig, make_chain


def shared_partner_distribution(z: np.ndarray, directed: bool) -> np.ndarray:
    """Histogram over present edges of their shared-partner counts.

    Undirected: partners k adjacent to both endpoints.  Directed: the
    two-step sense, counting k with z[i,k] = 1 and z[k,j] = 1 for an
    edge i -> j.  Entry [k] is the number of edges with exactly k shared
    partners, k = 0 .. N-2.
    """
    z = np.asarray(z)
    n = z.shape[0]
    zf = (z != 0).astype(np.float32)
    common = zf @ zf if directed else zf @ zf.T
    if directed:
        ii, jj = np.nonzero(z)
    else:
        ii, jj = np.nonzero(np.triu(z, k=1))
    counts = np.zeros(max(n - 1, 1), dtype=np.int64)
    if ii.size:
        vals = np.rint(common[ii, jj]).astype(np.int64)
        np.add.at(counts, vals, 1)
    return counts


def spillover_degrees(pop: Population, data: Dataset, treat_col: int = 0):
    """In- and out-degrees in the spillover channel subnetwork.

    The subnetwork keeps edges (i, j) with z[i,j] = 1, a treated sender
    (covariate ``treat_col`` equal to 1), a positive receiver response,
    and overlapping neighborhoods.
    """
    x = data.covariates
    if not np.isin(x[:, treat_col], (0.0, 1.0)).all():
        raise ValidationError("spillover degrees need a binary treatment column")
    if not np.isin(data.responses, (0.0, 1.0)).all():
        raise ValidationError("spillover degrees need binary responses")
    keep = (data.network != 0) & pop.overlap \
        & (x[:, treat_col][:, None] == 1.0) & (data.responses[None, :] == 1.0)
    out_deg = keep.sum(axis=1).astype(np.int64)
    in_deg = keep.sum(axis=0).astype(np.int64)
    return in_deg, out_deg


def roc_auc(scores, labels):
    """Threshold-sweep ROC curve and trapezoid AUC with tie averaging.

    Returns ``(points, auc)`` where points rows are (threshold, fpr,
    tpr); the AUC equals the Mann-Whitney probability of ranking a
    positive above a negative, ties counted one half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if not np.isin(labels, (0, 1)).all():
        raise ValidationError("labels must be 0/1")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("ROC needs at least one positive and one negative label")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    distinct = np.flatnonzero(np.diff(sorted_scores)) if scores.size > 1 else np.array([], int)
    cut_ends = np.append(distinct, scores.size - 1)
    tp = np.cumsum(sorted_labels == 1)[cut_ends]
    fp = np.cumsum(sorted_labels == 0)[cut_ends]
    points = np.zeros((cut_ends.size + 1, 3))
    points[0] = (np.inf, 0.0, 0.0)
    points[1:, 0] = sorted_scores[cut_ends]
    points[1:, 1] = fp / n_neg
    points[1:, 2] = tp / n_pos

    ranks = rankdata(scores)
    auc = (ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    return points, float(auc)


def predict_response_probs(spec: ModelSpec, pop: Population, data: Dataset,
                           theta: Theta) -> np.ndarray:
    """Joint-model conditional response probabilities on the observed data."""
    if spec.family.kind != "bernoulli":
        raise ValidationError("response prediction requires Bernoulli responses")
    ystar = data.responses / spec.family.psi
    g2 = response_design(spec, pop, data.covariates, ystar, data.network)
    return expit(g2 @ theta.theta2)


def baseline_response_probs(spec: ModelSpec, data: Dataset):
    """Covariates-only logistic fit and its fitted probabilities."""
    if spec.family.kind != "bernoulli":
        raise ValidationError("the logistic baseline requires Bernoulli responses")
    cols = data.covariates[:, 0:3] if spec.directed else data.covariates[:, 0:1]
    design = np.column_stack([np.ones(data.n_units), cols])
    beta = glm_fit(design, data.responses, ResponseFamily("bernoulli"))
    return expit(design @ beta), beta


# --------------------------------------------------------------------------
# Simulation envelopes
# --------------------------------------------------------------------------

def _stat_edge_count(spec, pop, data):
    total = int(data.network.sum())
    return np.array([total if spec.directed else total // 2], dtype=np.float64)


def _stat_mean_degree(spec, pop, data):
    return np.array([data.network.sum() / data.n_units], dtype=np.float64)


def _stat_shared_partners(spec, pop, data):
    return shared_partner_distribution(data.network, spec.directed).astype(np.float64)


def _degree_hist(values, n):
    counts = np.zeros(n, dtype=np.float64)
    np.add.at(counts, np.minimum(values, n - 1), 1.0)
    return counts


def _stat_spillover_in(spec, pop, data):
    in_deg, _ = spillover_degrees(pop, data)
    return _degree_hist(in_deg, data.n_units)


def _stat_spillover_out(spec, pop, data):
    _, out_deg = spillover_degrees(pop, data)
    return _degree_hist(out_deg, data.n_units)


STATISTICS = {
    "edge_count": _stat_edge_count,
    "mean_degree": _stat_mean_degree,
    "shared_partners": _stat_shared_partners,
    "spillover_in_degrees": _stat_spillover_in,
    "spillover_out_degrees": _stat_spillover_out,
}


@dataclass
class StatEnvelope:
    """Observed statistic with simulated quantile envelopes, per component."""

    name: str
    observed: np.ndarray
    sim_min: np.ndarray
    q05: np.ndarray
    median: np.ndarray
    q95: np.ndarray
    sim_max: np.ndarray
    n_sims: int

    def observed_inside(self) -> bool:
        return bool(np.all((self.observed >= self.q05) & (self.observed <= self.q95)))

    def rows(self) -> list:
        out = []
        for k in range(self.observed.size):
            out.append({
                "statistic": self.name, "k_or_threshold": k,
                "observed": self.observed[k], "q05": self.q05[k],
                "median": self.median[k], "q95": self.q95[k],
            })
        return out


def gof_reference(spec: ModelSpec, pop: Population, data: Dataset, theta: Theta,
                  statistics, n_sims: int, seed: int = 0, burn_in: int = 300,
                  thin: int = 25, mode: str = "restart") -> dict:
    """Simulated reference envelopes for the requested statistics.

    Simulates ``n_sims`` datasets from the fitted model (warm-started at
    the observed state, conditioning on the observed covariates) and
    returns a :class:`StatEnvelope` per statistic name.  ``n_sims=0``
    returns observed values with degenerate envelopes.

    ``mode="restart"`` starts an independent chain at the observed state
    for every replicate (``burn_in`` sweeps each); slow-mixing network
    statistics such as shared partners make a single thinned chain
    (``mode="thin"``) drift and understate the envelope spread.
    """
    for name in statistics:
        if name not in STATISTICS:
            raise ValidationError(
                f"unknown statistic {name!r}; available: {sorted(STATISTICS)}"
            )
    if mode not in ("restart", "thin"):
        raise ValidationError(f"unknown simulation mode {mode!r}")
    observed = {name: STATISTICS[name](spec, pop, data) for name in statistics}
    sims: dict = {name: [] for name in statistics}
    if n_sims > 0:
        root = np.random.SeedSequence(seed)

        def record(chain):
            y, z = chain.state()
            sim_data = Dataset(data.covariates, y, z, directed=spec.directed)
            for name in statistics:
                sims[name].append(STATISTICS[name](spec, pop, sim_data))

        initial = (data.responses, data.network)
        if mode == "thin":
            chain_seed = int(root.generate_state(1, np.uint64)[0] >> np.uint64(1))
            config = GibbsConfig(burn_in=0, thin=1, seed=chain_seed,
                                 initial_state=initial)
            chain = make_chain(spec, pop, data.covariates, theta, config)
            chain.run(burn_in)
            for _ in range(n_sims):
                chain.run(thin)
                record(chain)
        else:
            for child in root.spawn(n_sims):
                chain_seed = int(child.generate_state(1, np.uint64)[0] >> np.uint64(1))
                config = GibbsConfig(burn_in=0, thin=1, seed=chain_seed,
                                     initial_state=initial)
                chain = make_chain(spec, pop, data.covariates, theta, config)
                chain.run(burn_in)
                record(chain)

    report = {}
    for name in statistics:
        obs = observed[name]
        if n_sims == 0:
            report[name] = StatEnvelope(name, obs, obs, obs, obs, obs, obs, 0)
            continue
        width = max(obs.size, max(s.size for s in sims[name]))
        def pad(v):
            return np.pad(v, (0, width - v.size))
        mat = np.stack([pad(s) for s in sims[name]])
        obs = pad(obs)
        report[name] = StatEnvelope(
            name=name, observed=obs,
            sim_min=mat.min(axis=0),
            q05=np.quantile(mat, 0.05, axis=0),
            median=np.quantile(mat, 0.5, axis=0),
            q95=np.quantile(mat, 0.95, axis=0),
            sim_max=mat.max(axis=0),
            n_sims=n_sims,
        )
    return report

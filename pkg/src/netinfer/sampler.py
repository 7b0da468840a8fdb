"""Gibbs simulation from the joint law and the simulation-study driver.

``gibbs_sweep`` is the family-general reference scan built directly on
the model's conditional linear predictors; ``simulate`` dispatches to
compiled kernels for Bernoulli responses and falls back to the reference
scan otherwise.  Both perform one systematic scan per sweep: responses
in index order, then overlapping pairs in lexicographic order, then the
conditionally independent non-overlapping pairs as a block.

``run_simulation_study`` reproduces the synthetic-design study: per
replication it draws unit propensities, simulates one dataset, fits it,
and optionally attaches sandwich confidence intervals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import _kernels
from .errors import NumericalError, ValidationError
from .model import (
    Dataset,
    DirectedApplicationModel,
    ModelSpec,
    Population,
    ResponseFamily,
    Theta,
    UndirectedExampleModel,
)
from .optimizer import FitOptions, fit
from .pseudolik import response_design


# --------------------------------------------------------------------------
# Neighborhood generator for the synthetic study design
# --------------------------------------------------------------------------

def make_subpopulation_neighborhoods(n: int) -> Population:
    """Chain of 50-unit subpopulations overlapping by 25 units.

    Block l (1-based, l = 1..(n-25)/25) holds units 25(l-1)+1 .. 25(l+1)
    in 1-based terms; each unit belongs to one or two blocks and its
    neighborhood is the union of its blocks (50 or 75 units).
    """
    if n < 50 or n % 25 != 0:
        raise ValidationError("subpopulation layout requires n >= 50 and n % 25 == 0")
    n_blocks = (n - 25) // 25
    members: list = [set() for _ in range(n)]
    for block in range(1, n_blocks + 1):
        lo = 25 * (block - 1)
        hi = 25 * (block + 1)  # exclusive, 0-based
        units = range(lo, hi)
        for u in units:
            members[u].add(block)
    neighborhoods = []
    for u in range(n):
        nbh: set = set()
        for block in members[u]:
            lo = 25 * (block - 1)
            nbh.update(range(lo, lo + 50))
        neighborhoods.append(sorted(nbh))
    return Population(neighborhoods)


# --------------------------------------------------------------------------
# Reference sweep (any family; small instances)
# --------------------------------------------------------------------------

def gibbs_sweep(spec: ModelSpec, pop: Population, covariates, y, z, theta: Theta,
                rng: np.random.Generator, update_responses: bool = True,
                update_connections: bool = True):
    """One systematic scan using the model's reference conditionals.

    Returns new (y, z) arrays; the inputs are not modified.  Quadratic
    per coordinate, intended for small instances and as the ground truth
    for the compiled kernels.
    """
    x = np.atleast_2d(np.asarray(covariates, dtype=np.float64))
    if x.shape[0] == 1 and np.asarray(covariates).ndim == 1:
        x = x.T
    y = np.array(y, dtype=np.float64)
    z = np.array(z, dtype=np.int8)
    fam = spec.family
    ystar = y / fam.psi
    th2 = theta.theta2
    n = pop.n_units
    if update_responses:
        for i in range(n):
            g2 = response_design(spec, pop, x, ystar, z)
            eta = float(g2[i] @ th2)
            y[i] = float(fam.sample(np.float64(eta), rng))
            ystar[i] = y[i] / fam.psi
    if update_connections:
        data = None
        pairs = spec._pairs(n)
        for (i, j) in pairs:
            data = Dataset(x, y, z, directed=spec.directed)
            chg = spec.pair_change(pop, data, i, j)
            eta = float(theta.values @ chg)
            z[i, j] = 1 if rng.random() < expit(eta) else 0
            if not spec.directed:
                z[j, i] = z[i, j]
    return y, z


# --------------------------------------------------------------------------
# Compiled chains
# --------------------------------------------------------------------------

@dataclass
class GibbsConfig:
    burn_in: int = 1000
    thin: int = 10
    seed: int = 0
    initial_state: tuple | None = None  # (y, z)

    def __post_init__(self):
        if self.burn_in < 0 or self.thin < 1:
            raise ValidationError("burn_in must be >= 0 and thin >= 1")


def _initial_state(spec, pop, config):
    n = pop.n_units
    if config.initial_state is not None:
        y0, z0 = config.initial_state
        y0 = np.array(y0, dtype=np.float64)
        z0 = np.array(z0, dtype=np.int8)
        if y0.shape != (n,) or z0.shape != (n, n):
            raise ValidationError("initial state has wrong shape")
        return y0, z0
    return np.zeros(n), np.zeros((n, n), dtype=np.int8)


class _ChainBase:
    def state(self):
        return self.y.copy(), self.z.copy()

    def run(self, sweeps, update_responses=True, update_connections=True):
        for _ in range(sweeps):
            self.sweep(update_responses, update_connections)


class _UndirectedChain(_ChainBase):
    """Bernoulli-response undirected chain backed by the compiled kernel."""

    def __init__(self, spec, pop, x, theta, y0, z0, seed_seq):
        n = pop.n_units
        self.n = n
        self.pop = pop
        self.x = x[:, 0].astype(np.float64)
        self.y = y0.copy()
        self.z = z0.copy()
        th1 = theta.theta1.copy()
        th2 = theta.theta2
        self.alpha = th1
        (self.lam, self.a_y, self.b_xy,
         self.g_zz, self.g_xyz, self.g_yyz) = (float(v) for v in th2)

        ov = pop.overlap
        zov = (self.z != 0) & ov
        cap = max(int(ov.sum(axis=1).max()), 1)
        self.adj = np.zeros((n, cap), dtype=np.int64)
        self.deg = np.zeros(n, dtype=np.int64)
        for i in range(n):
            nbrs = np.flatnonzero(zov[i])
            self.deg[i] = nbrs.size
            self.adj[i, : nbrs.size] = nbrs
        w = (self.z * pop.nb_mask).astype(np.float32)
        self.t = np.rint(w @ w.T).astype(np.int64)
        np.fill_diagonal(self.t, 0)
        u = (ov & (self.z != 0)).astype(np.float64)
        self.sx = u @ self.x
        self.sy = u @ self.y

        iu, ju = np.triu_indices(n, k=1)
        keep = ~ov[iu, ju]
        self.nov_i = iu[keep]
        self.nov_j = ju[keep]
        eta_nov = th1[self.nov_i] + th1[self.nov_j] - self.lam * math.log(n)
        self.p_nov = expit(eta_nov)
        self.ov_i = pop.overlap_pairs[:, 0].astype(np.int64)
        self.ov_j = pop.overlap_pairs[:, 1].astype(np.int64)

        kern_ss, np_ss = seed_seq.spawn(2)
        self.rng_state = kern_ss.generate_state(1, np.uint64)
        self.np_rng = np.random.Generator(np.random.Philox(np_ss))

    def sweep(self, update_responses=True, update_connections=True):
        _kernels.sweep_undirected(
            self.y, self.z, self.t, self.adj, self.deg, self.pop.nb_mask,
            self.x, self.sx, self.sy, self.alpha,
            self.a_y, self.b_xy, self.g_zz, self.g_xyz, self.g_yyz,
            self.ov_i, self.ov_j, self.rng_state,
            update_responses, update_connections,
        )
        if update_connections and self.nov_i.size:
            draws = (self.np_rng.random(self.nov_i.size) < self.p_nov).astype(np.int8)
            self.z[self.nov_i, self.nov_j] = draws
            self.z[self.nov_j, self.nov_i] = draws


class _DirectedChain(_ChainBase):
    """Bernoulli directed chain backed by the compiled kernel."""

    def __init__(self, spec, pop, x, theta, y0, z0, seed_seq):
        n = pop.n_units
        self.n = n
        self.pop = pop
        self.x1 = x[:, 0].astype(np.float64)
        self.y = y0.copy()
        self.z = z0.copy()
        th1 = theta.theta1
        th2 = theta.theta2
        self.alpha_out = th1[:n].copy()
        self.alpha_in = np.append(th1[n: 2 * n - 1], 0.0)
        (a_y, b1, b2, b3, lam, g_zz1, g_zz2, g_xz1, g_xz2, g_xz3, g_xz4,
         g_yz, g_xyz) = (float(v) for v in th2)
        self.lam = lam
        self.g_zz1, self.g_zz2 = g_zz1, g_zz2
        self.g_yz, self.g_xyz = g_yz, g_xyz
        self.resp_base = a_y + x[:, 0:3] @ np.array([b1, b2, b3])

        ov = pop.overlap
        xstat = g_xz1 * self.x1[:, None] \
            + g_xz2 * (x[:, 1][:, None] == x[:, 1][None, :]) \
            + g_xz3 * (x[:, 2][:, None] == x[:, 2][None, :]) \
            + g_xz4 * (x[:, 3][:, None] == x[:, 3][None, :])
        self.xstat = np.where(ov, xstat, 0.0)

        zb = self.z != 0
        zov = zb & ov
        cap = max(int(ov.sum(axis=1).max()), int(ov.sum(axis=0).max()), 1)
        self.out_adj = np.zeros((n, cap), dtype=np.int64)
        self.out_deg = np.zeros(n, dtype=np.int64)
        self.in_adj = np.zeros((n, cap), dtype=np.int64)
        self.in_deg = np.zeros(n, dtype=np.int64)
        for i in range(n):
            nbrs = np.flatnonzero(zov[i])
            self.out_deg[i] = nbrs.size
            self.out_adj[i, : nbrs.size] = nbrs
            srcs = np.flatnonzero(zov[:, i])
            self.in_deg[i] = srcs.size
            self.in_adj[i, : srcs.size] = srcs
        nb = pop.nb_mask
        self.t = np.rint(((self.z * nb).astype(np.float32)
                          @ (self.z * nb.T).astype(np.float32))).astype(np.int64)
        np.fill_diagonal(self.t, 0)
        uin = ov & zb.T
        self.s_in = uin.sum(axis=1).astype(np.float64)
        self.s_inx = uin.astype(np.float64) @ self.x1

        iu, ju = np.triu_indices(n, k=1)
        keep = ~ov[iu, ju]
        self.nov_i = iu[keep]
        self.nov_j = ju[keep]
        logn = math.log(n)
        self.base_ij = self.alpha_out[self.nov_i] + self.alpha_in[self.nov_j] - lam * logn
        self.base_ji = self.alpha_out[self.nov_j] + self.alpha_in[self.nov_i] - lam * logn
        self.ov_i = pop.overlap_pairs[:, 0].astype(np.int64)
        self.ov_j = pop.overlap_pairs[:, 1].astype(np.int64)
        # Ordered overlap pairs in lexicographic order.
        oi = np.concatenate([self.ov_i, self.ov_j])
        oj = np.concatenate([self.ov_j, self.ov_i])
        order = np.lexsort((oj, oi))
        self.ord_i = oi[order]
        self.ord_j = oj[order]

        kern_ss, np_ss = seed_seq.spawn(2)
        self.rng_state = kern_ss.generate_state(1, np.uint64)
        self.np_rng = np.random.Generator(np.random.Philox(np_ss))

    def sweep(self, update_responses=True, update_connections=True):
        _kernels.sweep_directed(
            self.y, self.z, self.t, self.out_adj, self.out_deg, self.in_adj,
            self.in_deg, self.pop.nb_mask, self.x1, self.xstat, self.s_in,
            self.s_inx, self.alpha_out, self.alpha_in, self.resp_base,
            self.g_yz, self.g_xyz, self.g_zz1, self.g_zz2,
            self.ord_i, self.ord_j, self.rng_state,
            update_responses, update_connections,
        )
        if update_connections and self.nov_i.size:
            z_ji = self.z[self.nov_j, self.nov_i].astype(np.float64)
            u1 = self.np_rng.random(self.nov_i.size)
            z_ij = (u1 < expit(self.base_ij + self.g_zz1 * z_ji)).astype(np.int8)
            self.z[self.nov_i, self.nov_j] = z_ij
            u2 = self.np_rng.random(self.nov_i.size)
            z_ji = (u2 < expit(self.base_ji + self.g_zz1 * z_ij)).astype(np.int8)
            self.z[self.nov_j, self.nov_i] = z_ji


class _ReferenceChain(_ChainBase):
    """Fallback chain for non-Bernoulli families (small instances)."""

    def __init__(self, spec, pop, x, theta, y0, z0, seed_seq):
        self.spec, self.pop, self.x, self.theta = spec, pop, x, theta
        self.y = y0.copy()
        self.z = z0.copy()
        self.rng = np.random.Generator(np.random.Philox(seed_seq))

    def sweep(self, update_responses=True, update_connections=True):
        self.y, self.z = gibbs_sweep(
            self.spec, self.pop, self.x, self.y, self.z, self.theta, self.rng,
            update_responses, update_connections,
        )


def _check_gaussian_config(spec, pop, theta, z0, update_connections):
    """Positive-definiteness restriction on the response spillover weight."""
    lay = spec.layout(pop)
    xi = theta.values[lay.index_of("response_spillover")] / spec.family.psi
    if xi == 0.0:
        return
    u0 = (pop.overlap & (np.asarray(z0) != 0)).astype(np.float64)
    ev = np.linalg.eigvalsh(np.eye(pop.n_units) - xi * (u0 + u0.T) / 2.0)
    if ev.min() <= 0:
        raise NumericalError(
            f"I - xi*U not positive definite at the initial state "
            f"(smallest eigenvalue {ev.min():.6g})"
        )
    if update_connections:
        # Worst case over reachable networks: all overlap edges present.
        lam_max = np.linalg.eigvalsh(pop.overlap.astype(np.float64)).max()
        if 1.0 - abs(xi) * lam_max <= 0:
            raise NumericalError(
                "response spillover weight too large: I - xi*U can lose positive "
                "definiteness for reachable networks"
            )


def make_chain(spec: ModelSpec, pop: Population, covariates, theta: Theta,
               config: GibbsConfig):
    """Build a Gibbs chain positioned at the configured initial state."""
    x = np.atleast_2d(np.asarray(covariates, dtype=np.float64))
    if x.shape[0] == 1 and np.asarray(covariates).ndim == 1:
        x = x.T
    y0, z0 = _initial_state(spec, pop, config)
    if spec.family.kind == "gaussian" and isinstance(spec, UndirectedExampleModel):
        _check_gaussian_config(spec, pop, theta, z0, update_connections=True)
    seed_seq = np.random.SeedSequence(config.seed)
    if spec.family.kind != "bernoulli":
        return _ReferenceChain(spec, pop, x, theta, y0, z0, seed_seq)
    if isinstance(spec, UndirectedExampleModel):
        return _UndirectedChain(spec, pop, x, theta, y0, z0, seed_seq)
    if isinstance(spec, DirectedApplicationModel):
        return _DirectedChain(spec, pop, x, theta, y0, z0, seed_seq)
    return _ReferenceChain(spec, pop, x, theta, y0, z0, seed_seq)


def simulate(spec: ModelSpec, pop: Population, covariates, theta: Theta,
             config: GibbsConfig, n_draws: int = 1,
             update_responses: bool = True, update_connections: bool = True) -> list:
    """Run burn_in + thin * n_draws sweeps and return the retained states.

    Bit-reproducible for a given seed and configuration.  ``n_draws=0``
    returns an empty list without running the chain.
    """
    if n_draws < 0:
        raise ValidationError("n_draws must be >= 0")
    if n_draws == 0:
        return []
    chain = make_chain(spec, pop, covariates, theta, config)
    chain.run(config.burn_in, update_responses, update_connections)
    draws = []
    for _ in range(n_draws):
        chain.run(config.thin, update_responses, update_connections)
        draws.append(chain.state())
    return draws


# --------------------------------------------------------------------------
# Simulation study
# --------------------------------------------------------------------------

@dataclass
class SimStudyConfig:
    """Synthetic-design study: propensities drawn per replication."""

    n_values: tuple = (250,)
    replications: int = 100
    theta2_star: tuple = (0.3, -2.0, 2.0, 0.2, 0.1, 0.1)
    theta1_mean: float = -1.4
    theta1_sd: float = 0.2
    seed: int = 0
    burn_in: int = 1000
    compute_se: bool = True
    se_draws: int = 200
    se_mode: str = "thin"       # "thin": one warm chain; "restart": independent restarts
    se_burn_in: int = 200
    se_thin: int = 20
    level: float = 0.95
    init: str = "warm"
    max_iters: int = 1000

    def __post_init__(self):
        for n in self.n_values:
            if n < 50 or n % 25 != 0:
                raise ValidationError("every study size must satisfy n >= 50, n % 25 == 0")
        if not self.n_values and self.replications:
            raise ValidationError("empty n_values")


@dataclass
class RepOutcome:
    n: int
    rep: int
    ok: bool
    error: str | None
    theta2_star: np.ndarray | None = None
    theta2_hat: np.ndarray | None = None
    max_abs_err_all: float | None = None
    se2: np.ndarray | None = None
    ci2: np.ndarray | None = None
    covered: np.ndarray | None = None
    iterations: int = 0
    converged: bool = False
    grad_inf: float = float("nan")


_POP_CACHE: dict = {}


def _study_population(n: int) -> Population:
    if n not in _POP_CACHE:
        _POP_CACHE[n] = make_subpopulation_neighborhoods(n)
    return _POP_CACHE[n]


def run_study_replication(config: SimStudyConfig, n: int, rep: int) -> RepOutcome:
    """Simulate, fit, and (optionally) attach CIs for one replication."""
    from .inference import confidence_intervals, godambe_cov

    try:
        pop = _study_population(n)
        spec = UndirectedExampleModel(ResponseFamily("bernoulli"))
        lay = spec.layout(pop)
        ss = np.random.SeedSequence(entropy=config.seed, spawn_key=(n, rep))
        theta_ss, cov_ss, sim_ss, se_ss = ss.spawn(4)
        rng = np.random.Generator(np.random.Philox(theta_ss))
        theta1_star = rng.normal(config.theta1_mean, config.theta1_sd, size=n)
        theta_star = Theta(np.concatenate([theta1_star, np.asarray(config.theta2_star,
                                                                   dtype=np.float64)]), lay)
        cov_rng = np.random.Generator(np.random.Philox(cov_ss))
        x = cov_rng.uniform(0.0, 1.0, size=(n, 1))

        sim_seed = int(sim_ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
        gibbs = GibbsConfig(burn_in=config.burn_in, thin=1, seed=sim_seed)
        y, z = simulate(spec, pop, x, theta_star, gibbs, n_draws=1)[0]
        data = Dataset(x, y, z, directed=False)

        res = fit(spec, pop, data, options=FitOptions(init=config.init,
                                                      max_iters=config.max_iters))
        err_all = float(np.max(np.abs(res.theta_hat.values - theta_star.values)))
        out = RepOutcome(
            n=n, rep=rep, ok=True, error=None,
            theta2_star=np.asarray(config.theta2_star, dtype=np.float64),
            theta2_hat=res.theta_hat.theta2.copy(),
            max_abs_err_all=err_all,
            iterations=res.iterations, converged=res.converged,
            grad_inf=res.final_grad_inf_norm,
        )
        if config.compute_se:
            se_seed = int(se_ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
            cov = godambe_cov(
                spec, pop, data, res.theta_hat, r_draws=config.se_draws,
                seed=se_seed, mode=config.se_mode,
                per_draw_sweeps=config.se_burn_in, thin=config.se_thin,
            )
            ci = confidence_intervals(cov, res.theta_hat, config.level)
            out.se2 = cov.se[lay.n_theta1:].copy()
            out.ci2 = ci[lay.n_theta1:].copy()
            star = out.theta2_star
            out.covered = (out.ci2[:, 0] <= star) & (star <= out.ci2[:, 1])
        return out
    except Exception as exc:  # individual replication failures are recorded
        return RepOutcome(n=n, rep=rep, ok=False, error=f"{type(exc).__name__}: {exc}")


def run_simulation_study(config: SimStudyConfig, threads: int = 1,
                         progress=None) -> list:
    """All (n, replication) outcomes, optionally in a worker pool."""
    tasks = [(n, rep) for n in config.n_values for rep in range(config.replications)]
    if not tasks:
        return []
    if threads <= 1:
        outcomes = []
        for (n, rep) in tasks:
            outcomes.append(run_study_replication(config, n, rep))
            if progress:
                progress(outcomes[-1])
        return outcomes
    import multiprocessing as mp

    ctx = mp.get_context("fork")
    with ctx.Pool(threads) as pool:
        results = [pool.apply_async(run_study_replication, (config, n, rep))
                   for (n, rep) in tasks]
        outcomes = []
        for r in results:
            outcomes.append(r.get())
            if progress:
                progress(outcomes[-1])
    return outcomes


def study_rows(outcomes: list, component_names=UndirectedExampleModel.THETA2_NAMES) -> list:
    """Flatten outcomes into CSV-ready rows.

    One row per interest component plus a summary row (component
    ``max_abs_error_all``) holding the full-vector maximum error; failed
    replications produce a single ``fit_error`` row.
    """
    rows = []
    for o in outcomes:
        if not o.ok:
            rows.append({"n": o.n, "rep": o.rep, "component": "fit_error",
                         "theta_star": "", "theta_hat": "", "abs_err": "",
                         "ci_lo": "", "ci_hi": "", "covered": "", "note": o.error})
            continue
        for k, name in enumerate(component_names):
            row = {
                "n": o.n, "rep": o.rep, "component": name,
                "theta_star": o.theta2_star[k], "theta_hat": o.theta2_hat[k],
                "abs_err": abs(o.theta2_hat[k] - o.theta2_star[k]),
                "ci_lo": "", "ci_hi": "", "covered": "", "note": "",
            }
            if o.ci2 is not None:
                row["ci_lo"] = o.ci2[k, 0]
                row["ci_hi"] = o.ci2[k, 1]
                row["covered"] = int(o.covered[k])
            rows.append(row)
        rows.append({"n": o.n, "rep": o.rep, "component": "max_abs_error_all",
                     "theta_star": "", "theta_hat": "", "abs_err": o.max_abs_err_all,
                     "ci_lo": "", "ci_hi": "", "covered": "", "note": ""})
    return rows

"""Sandwich covariance and confidence intervals for pseudo-likelihood fits.

The estimating function is a pseudo-score, not the true score, so the
asymptotic covariance is H^-1 Var[G] H^-1: H is the negative Hessian of
the objective at the estimate on the observed data, and Var[G] is the
covariance of the gradient over datasets simulated from the fitted
model, approximated by Monte Carlo with chains warm-started at the
observed state and conditioned on the observed covariates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy.stats import norm

from .errors import ValidationError
from .model import Dataset, ModelSpec, Population, Theta
from .pseudolik import compile_design, design_blocks, design_value_grad
from .sampler import GibbsConfig, make_chain


@dataclass
class CovEstimate:
    """Sandwich covariance of the parameter estimate."""

    sandwich: np.ndarray
    se: np.ndarray
    mc_draws: int
    h: np.ndarray
    var_g: np.ndarray
    ridge_used: bool = False
    naive: np.ndarray | None = None   # inverse-Hessian covariance, diagnostics only


def _assemble_h(design, v):
    a, b, c = design_blocks(design, v)
    return np.vstack([np.hstack([a, b]), np.hstack([b.T, c])])


def _spd_solve(h, rhs, ridge_scale):
    """Solve h @ x = rhs with a Cholesky factorisation, ridging if needed."""
    ridge_used = False
    try:
        factor = sla.cho_factor(h, lower=True)
    except np.linalg.LinAlgError:
        ridge_used = True
        bump = ridge_scale * np.trace(h) / h.shape[0]
        factor = sla.cho_factor(h + bump * np.eye(h.shape[0]), lower=True)
    return sla.cho_solve(factor, rhs), factor, ridge_used


def godambe_cov(spec: ModelSpec, pop: Population, data: Dataset, theta_hat: Theta,
                r_draws: int = 500, seed: int = 0, *, mode: str = "restart",
                per_draw_sweeps: int = 500, thin: int = 20, threads: int = 1,
                ridge_scale: float = 1e-8, include_naive: bool = False,
                fix=()) -> CovEstimate:
    """Monte Carlo sandwich covariance at the fitted parameter vector.

    ``mode="restart"`` runs ``r_draws`` independent chains for
    ``per_draw_sweeps`` sweeps each, warm-started at the observed state;
    ``mode="thin"`` takes thinned draws from one warm chain, which is
    several times cheaper and adequate when the chain mixes quickly.
    ``fix`` names interest parameters that were pinned during fitting;
    their rows and columns are excluded from the sandwich (zero in the
    returned matrices, so their intervals are degenerate).
    """
    if r_draws < 2:
        raise ValidationError("at least 2 Monte Carlo draws are required")
    if mode not in ("restart", "thin"):
        raise ValidationError(f"unknown draw mode {mode!r}")
    design = compile_design(spec, pop, data)
    v = theta_hat.values
    if not np.all(np.isfinite(v)):
        raise ValidationError("theta_hat contains non-finite values")
    h = _assemble_h(design, v)

    root = np.random.SeedSequence(seed)
    initial = (data.responses, data.network)
    grads = np.empty((r_draws, design.p))

    def _grad_of_state(y, z):
        d = Dataset(data.covariates, y, z, directed=spec.directed)
        return design_value_grad(compile_design(spec, pop, d), v)[1]

    if mode == "thin":
        chain_seed = int(root.generate_state(1, np.uint64)[0] >> np.uint64(1))
        config = GibbsConfig(burn_in=0, thin=1, seed=chain_seed, initial_state=initial)
        chain = make_chain(spec, pop, data.covariates, theta_hat, config)
        chain.run(per_draw_sweeps)
        for r in range(r_draws):
            chain.run(thin)
            y, z = chain.state()
            grads[r] = _grad_of_state(y, z)
    else:
        seeds = [int(s.generate_state(1, np.uint64)[0] >> np.uint64(1))
                 for s in root.spawn(r_draws)]
        args = [(spec, pop, data, theta_hat, v, per_draw_sweeps, seeds[r], r)
                for r in range(r_draws)]
        if threads > 1:
            import multiprocessing as mp

            ctx = mp.get_context("fork")
            with ctx.Pool(threads) as pool:
                for r, g in pool.imap_unordered(_one_draw_worker, args):
                    grads[r] = g
        else:
            for a in args:
                r, g = _one_draw_worker(a)
                grads[r] = g

    centered = grads - grads.mean(axis=0)
    var_g = centered.T @ centered / (r_draws - 1)

    free = np.ones(design.p, dtype=bool)
    for name in fix:
        free[theta_hat.layout.index_of(name)] = False
    fidx = np.flatnonzero(free)
    hf = h[np.ix_(fidx, fidx)]
    vf = var_g[np.ix_(fidx, fidx)]
    half, factor, ridge_used = _spd_solve(hf, vf, ridge_scale)
    sub = sla.cho_solve(factor, half.T)
    sub = (sub + sub.T) / 2.0
    sandwich = np.zeros((design.p, design.p))
    sandwich[np.ix_(fidx, fidx)] = sub
    se = np.sqrt(np.clip(np.diag(sandwich), 0.0, None))
    naive = None
    if include_naive:
        naive = np.zeros((design.p, design.p))
        naive[np.ix_(fidx, fidx)] = sla.cho_solve(factor, np.eye(fidx.size))
        naive = (naive + naive.T) / 2.0
    return CovEstimate(sandwich=sandwich, se=se, mc_draws=r_draws, h=h,
                       var_g=var_g, ridge_used=ridge_used, naive=naive)


def _one_draw_worker(args):
    spec, pop, data, theta_hat, v, sweeps, seed, r = args
    config = GibbsConfig(burn_in=0, thin=1, seed=seed,
                         initial_state=(data.responses, data.network))
    chain = make_chain(spec, pop, data.covariates, theta_hat, config)
    chain.run(sweeps)
    y, z = chain.state()
    d = Dataset(data.covariates, y, z, directed=spec.directed)
    return r, design_value_grad(compile_design(spec, pop, d), v)[1]


def confidence_intervals(cov: CovEstimate, theta_hat: Theta, level: float = 0.95) -> np.ndarray:
    """Per-component normal intervals theta_k +/- z * se_k, shape (p, 2)."""
    if not 0.0 < level < 1.0:
        raise ValidationError("level must lie strictly between 0 and 1")
    zq = norm.ppf((1.0 + level) / 2.0)
    lo = theta_hat.values - zq * cov.se
    hi = theta_hat.values + zq * cov.se
    return np.column_stack([lo, hi])

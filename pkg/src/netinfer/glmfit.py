"""Tiny Newton solver for independent-response GLMs.

Used for warm-starting the joint fit and as the covariates-only
prediction baseline in the goodness-of-fit module.  Not a general GLM
package: fixed iteration budget, ridge-stabilised, no inference.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError
from .model import ResponseFamily


def glm_fit(design: np.ndarray, y: np.ndarray, family: ResponseFamily,
            max_iters: int = 50, tol: float = 1e-10) -> np.ndarray:
    """Maximise sum_i log f(y_i | eta_i = design_i . beta) over beta."""
    design = np.asarray(design, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    beta = np.zeros(design.shape[1])
    for _ in range(max_iters):
        eta = design @ beta
        mu = family.mean(eta)
        w = family.cumulant_second(eta) / family.psi
        score = design.T @ ((y - mu) / family.psi)
        info = design.T @ (w[:, None] * design)
        info[np.diag_indices_from(info)] += 1e-10
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular information matrix in GLM fit") from exc
        # Cap the step size to keep separation from shooting eta to infinity.
        nrm = np.max(np.abs(step))
        if nrm > 10.0:
            step *= 10.0 / nrm
        beta = beta + step
        if nrm < tol:
            break
    return beta

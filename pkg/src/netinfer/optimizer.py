"""Two-step maximisation of the pseudo-loglikelihood.

Step 1 raises the objective over the per-unit propensity block with a
minorize-maximize update whose curvature matrix is constant and has a
closed-form inverse applicable in O(N) time, optionally accelerated by a
symmetric rank-one quasi-Newton correction (the accelerated candidate is
kept only when it beats the plain update, preserving monotone ascent).
Step 2 is a dense Newton step with step-halving on the small block of
interest parameters.  Convergence requires both a small parameter step
(Euclidean norm) and a small relative objective change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InternalConsistencyError, NumericalError, ValidationError
from .glmfit import glm_fit
from .model import Dataset, ModelSpec, Population, Theta
from .pseudolik import (
    Design,
    compile_design,
    design_c_block,
    design_value,
    design_value_grad,
)

SR1_SKIP_FACTOR = 1e-8  # skip the rank-one update when |q.k| < factor * |q| * |k|


# --------------------------------------------------------------------------
# Constant minorizer curvature matrix
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MinorizerMatrix:
    """Constant curvature bound for the propensity block.

    Undirected: (1/4)[(N-2) I + 1 1'] over the N propensities, inverted
    in closed form.  Directed: a 2x2 block matrix over the 2N-1 out/in
    propensities, inverted in O(N) through a paired-coordinate diagonal
    plus a rank-two correction.
    """

    mode: str           # "undirected" | "directed"
    n: int              # number of units

    def __post_init__(self):
        if self.mode not in ("undirected", "directed"):
            raise ValidationError(f"unknown minorizer mode {self.mode!r}")
        if self.mode == "undirected" and self.n < 3:
            raise ValidationError("undirected minorizer requires at least 3 units")
        if self.mode == "directed" and self.n < 3:
            raise ValidationError("directed minorizer requires at least 3 units")

    @classmethod
    def for_model(cls, spec: ModelSpec, pop: Population) -> "MinorizerMatrix":
        return cls("directed" if spec.directed else "undirected", pop.n_units)

    @property
    def dim(self) -> int:
        return self.n if self.mode == "undirected" else 2 * self.n - 1

    def dense(self) -> np.ndarray:
        n = self.n
        if self.mode == "undirected":
            return 0.25 * ((n - 2) * np.eye(n) + np.ones((n, n)))
        a = np.zeros((2 * n - 1, 2 * n - 1))
        np.fill_diagonal(a, (n - 1) / 4.0)
        cross = np.full((n, n - 1), 0.25)
        cross[np.arange(n - 1), np.arange(n - 1)] = 0.0
        a[:n, n:] = cross
        a[n:, :n] = cross.T
        return a

    def apply_inverse(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ValidationError(f"vector of length {v.shape} does not match dimension {self.dim}")
        n = self.n
        if self.mode == "undirected":
            return (4.0 / (n - 2)) * (v - v.sum() / (2.0 * n - 2.0))

        # Solve (D + u v' + v u') x = 4 b via a rank-two Woodbury
        # correction; D couples the out and in propensity of each unit.
        def d_solve(w):
            out = np.empty_like(w)
            det = (n - 1.0) ** 2 - 1.0
            wa = w[: n - 1]
            wb = w[n: 2 * n - 1]
            out[: n - 1] = ((n - 1.0) * wa + wb) / det
            out[n: 2 * n - 1] = ((n - 1.0) * wb + wa) / det
            out[n - 1] = w[n - 1] / (n - 1.0)
            return out

        u = np.zeros(self.dim)
        u[:n] = 1.0
        w = np.zeros(self.dim)
        w[n:] = 1.0
        du = d_solve(u)
        dw = d_solve(w)
        db = d_solve(4.0 * v)
        m = np.array([
            [1.0 + w @ du, w @ dw],
            [u @ du, 1.0 + u @ dw],
        ])
        rhs = np.array([w @ db, u @ db])
        coef = np.linalg.solve(m, rhs)
        return db - du * coef[0] - dw * coef[1]


def astar_apply_inverse(m: MinorizerMatrix, v: np.ndarray) -> np.ndarray:
    return m.apply_inverse(v)


# --------------------------------------------------------------------------
# Fit configuration and results
# --------------------------------------------------------------------------

@dataclass
class QNState:
    """Symmetric rank-one approximation state for the accelerated step.

    ``m`` approximates the gap between the constant-curvature inverse and
    the true inverse curvature of the propensity block; it starts at zero
    so the first accelerated candidate coincides with the plain update.
    """

    m: np.ndarray
    prev_theta1: np.ndarray | None = None
    prev_grad1: np.ndarray | None = None

    @classmethod
    def fresh(cls, dim: int) -> "QNState":
        return cls(m=np.zeros((dim, dim)))


@dataclass
class FitOptions:
    tol_step: float = 1e-6
    tol_rel_ll: float = 1e-6
    max_iters: int = 1000
    max_halvings: int = 30
    use_quasi_newton: bool = True
    ridge: float = 1e-8
    ascent_tol: float = 1e-10
    init: str = "zeros"               # "zeros" | "warm"; ignored when an explicit Theta is given
    fix: dict = field(default_factory=dict)  # interest-parameter name -> pinned value


@dataclass
class TraceEntry:
    ll_after_step1: float
    ll_after_step2: float
    step_norm: float
    choice: str


@dataclass
class FitResult:
    theta_hat: Theta
    iterations: int
    final_loglik: float
    final_grad_inf_norm: float
    converged: bool
    trace: list
    step_choices: list
    warnings: list

    def loglik_trace(self) -> np.ndarray:
        out = []
        for entry in self.trace:
            out.append(entry.ll_after_step1)
            out.append(entry.ll_after_step2)
        return np.asarray(out)


# --------------------------------------------------------------------------
# Individual steps (module-level operations)
# --------------------------------------------------------------------------

def _ascent_slack(ll: float, tol: float) -> float:
    # 1e-10 absolute for small objectives; proportionally looser once the
    # objective magnitude exhausts float64 resolution at that scale.
    return max(tol, 16.0 * np.finfo(float).eps * abs(ll))


def mm_step_theta1(spec: ModelSpec, pop: Population, data: Dataset, theta: Theta,
                   ascent_tol: float = 1e-10) -> Theta:
    """One closed-form minorizer maximisation of the propensity block."""
    design = compile_design(spec, pop, data)
    astar = MinorizerMatrix.for_model(spec, pop)
    v = theta.values.copy()
    ll0, grad = design_value_grad(design, v)
    v[: design.n1] += astar.apply_inverse(grad[: design.n1])
    ll1 = design_value(design, v)
    if ll1 < ll0 - _ascent_slack(ll0, ascent_tol):
        raise InternalConsistencyError(
            f"minorizer step decreased the objective: {ll0} -> {ll1}"
        )
    return Theta(v, theta.layout)


def qn_step_theta1(state: QNState, spec: ModelSpec, pop: Population, data: Dataset,
                   theta: Theta):
    """Symmetric rank-one accelerated candidate for the propensity block.

    Returns ``(candidate_theta, updated_state)``.  The caller is expected
    to evaluate the objective at this candidate and at the plain
    minorizer candidate and keep whichever is higher.
    """
    design = compile_design(spec, pop, data)
    astar = MinorizerMatrix.for_model(spec, pop)
    v = theta.values.copy()
    n1 = design.n1
    _, grad = design_value_grad(design, v)
    g1 = grad[:n1]
    if state.prev_theta1 is not None:
        prev = v.copy()
        prev[:n1] = state.prev_theta1
        _, grad_prev = design_value_grad(design, prev)
        _sr1_update(state, astar, v[:n1], g1, grad_prev[:n1])
    cand = v.copy()
    cand[:n1] += astar.apply_inverse(g1) - state.m @ g1
    state.prev_theta1 = v[:n1].copy()
    state.prev_grad1 = g1.copy()
    return Theta(cand, theta.layout), state


def _sr1_update(state: QNState, astar: MinorizerMatrix, th1: np.ndarray,
                g1: np.ndarray, g1_prev: np.ndarray):
    """Rank-one secant update of the inverse-curvature gap approximation."""
    k = g1 - g1_prev
    r = (th1 - state.prev_theta1) + astar.apply_inverse(k)
    q = r - state.m @ k
    c = float(q @ k)
    if abs(c) >= SR1_SKIP_FACTOR * np.linalg.norm(q) * np.linalg.norm(k) and c != 0.0:
        state.m += np.outer(q, q) / c


def newton_step_theta2(spec: ModelSpec, pop: Population, data: Dataset, theta: Theta,
                       ridge: float = 1e-8, max_halvings: int = 30):
    """Dense Newton step with step-halving on the interest block."""
    design = compile_design(spec, pop, data)
    v = theta.values.copy()
    ll0, grad = design_value_grad(design, v)
    free = np.arange(design.n1, design.p)
    v_new, ll_new, _ = _newton_theta2(design, v, ll0, grad, free, ridge, max_halvings)
    return Theta(v_new, theta.layout), ll_new


def _newton_theta2(design: Design, v: np.ndarray, ll0: float, grad: np.ndarray,
                   free: np.ndarray, ridge: float, max_halvings: int):
    """Shared Newton-with-halving implementation; returns (v, ll, used_ridge)."""
    c = design_c_block(design, v)
    fidx = free - design.n1
    cf = c[np.ix_(fidx, fidx)]
    gf = grad[free]
    used_ridge = False
    try:
        step = np.linalg.solve(cf, gf)
        if not np.all(np.isfinite(step)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        used_ridge = True
        step = np.linalg.solve(cf + ridge * np.eye(cf.shape[0]), gf)
    scale = 1.0
    slack = _ascent_slack(ll0, 0.0)
    for _ in range(max_halvings + 1):
        cand = v.copy()
        cand[free] += scale * step
        try:
            ll = design_value(design, cand)
        except NumericalError:
            ll = -np.inf
        if math.isfinite(ll) and ll >= ll0 - slack:
            return cand, ll, used_ridge
        scale *= 0.5
    return v, ll0, used_ridge


# --------------------------------------------------------------------------
# Full fit
# --------------------------------------------------------------------------

def _warm_start(design: Design, pop: Population, data: Dataset) -> np.ndarray:
    """Propensities from observed degrees, response weights from a plain GLM."""
    spec = design.spec
    n = design.n
    v = np.zeros(design.p)
    z = data.network.astype(np.float64)
    if spec.directed:
        out_d = z.sum(axis=1)
        in_d = z.sum(axis=0)
        p_out = np.clip((out_d + 0.5) / n, 1e-4, 1 - 1e-4)
        p_in = np.clip((in_d + 0.5) / n, 1e-4, 1 - 1e-4)
        v[:n] = 0.5 * np.log(p_out / (1 - p_out))
        v[n: 2 * n - 1] = 0.5 * np.log(p_in / (1 - p_in))[: n - 1]
        gcols = np.column_stack([np.ones(n), data.covariates[:, 0:3]])
        beta = glm_fit(gcols, data.responses, spec.family)
        v[design.n1: design.n1 + 4] = beta
    else:
        deg = z.sum(axis=1)
        p_deg = np.clip((deg + 0.5) / n, 1e-4, 1 - 1e-4)
        v[:n] = 0.5 * np.log(p_deg / (1 - p_deg))
        gcols = np.column_stack([np.ones(n), data.covariates[:, 0]])
        beta = glm_fit(gcols, data.responses, spec.family)
        v[design.n1 + 1] = beta[0]
        v[design.n1 + 2] = beta[1]
    return v


def fit(spec: ModelSpec, pop: Population, data: Dataset, init=None,
        options: FitOptions | None = None) -> FitResult:
    """Alternate propensity and interest updates until the dual criterion holds.

    ``init`` may be a :class:`Theta`, "zeros", "warm", or None (zeros).
    Raises :class:`NumericalError` if the objective becomes non-finite;
    exhausting ``max_iters`` is reported through ``converged=False``, not
    an exception.
    """
    options = options or FitOptions()
    design = compile_design(spec, pop, data)
    lay = design.layout
    astar = MinorizerMatrix.for_model(spec, pop)
    n1 = design.n1

    if isinstance(init, Theta):
        v = init.values.copy()
    else:
        mode = init if init is not None else options.init
        if mode == "zeros":
            v = np.zeros(design.p)
        elif mode == "warm":
            v = _warm_start(design, pop, data)
        else:
            raise ValidationError(f"unknown init {init!r}")
    if not np.all(np.isfinite(v)):
        raise ValidationError("initial parameter vector contains non-finite values")

    fixed_idx = []
    for name, value in options.fix.items():
        k = lay.index_of(name)
        if k < n1:
            raise ValidationError(f"only interest parameters can be pinned, not {name!r}")
        v[k] = value
        fixed_idx.append(k)
    free2 = np.array(sorted(set(range(n1, design.p)) - set(fixed_idx)), dtype=np.int64)

    warnings: list = []
    trace: list = []
    choices: list = []
    qn = QNState.fresh(astar.dim) if options.use_quasi_newton else None

    try:
        ll, grad = design_value_grad(design, v)
    except NumericalError as exc:
        raise NumericalError(f"objective not finite at the initial point: {exc}") from exc

    converged = False
    iterations = 0
    for it in range(1, options.max_iters + 1):
        iterations = it
        v_old = v.copy()
        ll_old = ll

        # -- Step 1: propensity block ----------------------------------
        g1 = grad[:n1]
        mm_dir = astar.apply_inverse(g1)
        cand_mm = v.copy()
        cand_mm[:n1] += mm_dir
        ll_mm = design_value(design, cand_mm)
        if ll_mm < ll - _ascent_slack(ll, options.ascent_tol):
            raise InternalConsistencyError(
                f"minorizer step decreased the objective at iteration {it}: {ll} -> {ll_mm}"
            )
        chosen, ll1, choice = cand_mm, ll_mm, "mm"
        if qn is not None:
            if qn.prev_theta1 is not None:
                prev = v.copy()
                prev[:n1] = qn.prev_theta1
                _, grad_prev = design_value_grad(design, prev)
                _sr1_update(qn, astar, v[:n1], g1, grad_prev[:n1])
                cand_qn = v.copy()
                cand_qn[:n1] += mm_dir - qn.m @ g1
                try:
                    ll_qn = design_value(design, cand_qn)
                except NumericalError:
                    ll_qn = -np.inf
                if ll_qn > ll_mm:
                    chosen, ll1, choice = cand_qn, ll_qn, "qn"
            qn.prev_theta1 = v[:n1].copy()
            qn.prev_grad1 = g1.copy()
        v = chosen
        choices.append(choice)

        # -- Step 2: interest block -------------------------------------
        _, grad = design_value_grad(design, v)
        if free2.size:
            v, ll, used_ridge = _newton_theta2(
                design, v, ll1, grad, free2, options.ridge, options.max_halvings
            )
            if used_ridge and "ridge" not in warnings:
                warnings.append("ridge")
        else:
            ll = ll1
        if not math.isfinite(ll):
            raise NumericalError(f"objective became non-finite at iteration {it}")

        step_norm = float(np.linalg.norm(v - v_old))
        trace.append(TraceEntry(ll1, ll, step_norm, choice))
        rel = abs(ll - ll_old) / max(abs(ll_old), 1e-300)
        ll, grad = design_value_grad(design, v)
        if step_norm < options.tol_step and rel < options.tol_rel_ll:
            converged = True
            break

    free_mask = np.ones(design.p, dtype=bool)
    free_mask[fixed_idx] = False
    grad_inf = float(np.max(np.abs(grad[free_mask]))) if free_mask.any() else 0.0
    return FitResult(
        theta_hat=Theta(v, lay),
        iterations=iterations,
        final_loglik=ll,
        final_grad_inf_norm=grad_inf,
        converged=converged,
        trace=trace,
        step_choices=choices,
        warnings=warnings,
    )

"""Command-line interface and file-format plumbing.

Subcommands: ``simulate`` (draw one dataset and write it out), ``fit``
(estimate a model from a data directory), ``se`` (augment a fit with
sandwich standard errors), ``gof`` (simulation envelopes and ROC
curves), ``study`` (the replication study driver).  Unit ids are
1-based in every file; undirected edges are stored once with
src < dst.  Every command is deterministic given its inputs and seed,
and every artifact embeds the seed and a configuration hash.

Exit codes: 0 success (a flagged non-converged fit is still success),
2 validation or configuration problems, 3 numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .errors import InternalConsistencyError, NumericalError, ValidationError
from .gof import baseline_response_probs, gof_reference, predict_response_probs, roc_auc
from .inference import confidence_intervals, godambe_cov
from .model import (
    Dataset,
    DirectedApplicationModel,
    Population,
    ResponseFamily,
    Theta,
    UndirectedExampleModel,
)
from .optimizer import FitOptions, fit
from .oracle import enumerate_joint
from .sampler import (
    GibbsConfig,
    SimStudyConfig,
    make_subpopulation_neighborhoods,
    simulate,
    study_rows,
)

MODELS = ("undirected-example", "directed-application")


def _threads_default() -> int:
    env = os.environ.get("NETINFER_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError("NETINFER_THREADS must be an integer") from None
    return os.cpu_count() or 1


def _atomic_write(path: str, text: str):
    tmp = path + ".tmp"
    with open(tmp, "w") as handle:
        handle.write(text)
    os.replace(tmp, path)


def _config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _require(config: dict, key: str, kind=None):
    if key not in config:
        raise ValidationError(f"config is missing required field {key!r}")
    value = config[key]
    if kind is not None and not isinstance(value, kind):
        raise ValidationError(f"config field {key!r} has the wrong type")
    return value


def _build_spec(model: str, family: str, psi: float):
    if model not in MODELS:
        raise ValidationError(f"unknown model {model!r}; choose from {MODELS}")
    fam = ResponseFamily(family, psi)
    if model == "directed-application":
        return DirectedApplicationModel(fam)
    return UndirectedExampleModel(fam)


# --------------------------------------------------------------------------
# Data directory round trip
# --------------------------------------------------------------------------

def write_dataset(out_dir: str, pop: Population, data: Dataset):
    os.makedirs(out_dir, exist_ok=True)
    n, d = data.covariates.shape
    lines = ["unit_id," + ",".join(f"x{k + 1}" for k in range(d)) + ",y"]
    for i in range(n):
        xs = ",".join(repr(float(v)) for v in data.covariates[i])
        lines.append(f"{i + 1},{xs},{repr(float(data.responses[i]))}")
    _atomic_write(os.path.join(out_dir, "nodes.csv"), "\n".join(lines) + "\n")

    lines = ["src,dst"]
    if data.directed:
        ii, jj = np.nonzero(data.network)
    else:
        ii, jj = np.nonzero(np.triu(data.network, k=1))
    for i, j in zip(ii, jj):
        lines.append(f"{i + 1},{j + 1}")
    _atomic_write(os.path.join(out_dir, "edges.csv"), "\n".join(lines) + "\n")

    nbh = {str(i + 1): [int(u) + 1 for u in pop.neighborhoods[i]] for i in range(n)}
    _atomic_write(os.path.join(out_dir, "neighborhoods.json"),
                  json.dumps(nbh, indent=0, sort_keys=True) + "\n")


def read_dataset(data_dir: str, directed: bool):
    nodes_path = os.path.join(data_dir, "nodes.csv")
    edges_path = os.path.join(data_dir, "edges.csv")
    nbh_path = os.path.join(data_dir, "neighborhoods.json")
    for path in (nodes_path, edges_path, nbh_path):
        if not os.path.exists(path):
            raise ValidationError(f"missing data file: {path}")

    with open(nodes_path) as handle:
        reader = csv.DictReader(handle)
        cols = reader.fieldnames or []
        xcols = [c for c in cols if c.startswith("x")]
        if "unit_id" not in cols or "y" not in cols or not xcols:
            raise ValidationError("nodes.csv must have columns unit_id, x1.., y")
        rows = list(reader)
    n = len(rows)
    x = np.zeros((n, len(xcols)))
    y = np.zeros(n)
    seen = set()
    for row in rows:
        try:
            uid = int(row["unit_id"])
        except ValueError:
            raise ValidationError(f"bad unit_id {row['unit_id']!r} in nodes.csv") from None
        if not 1 <= uid <= n or uid in seen:
            raise ValidationError(f"unit_id {uid} out of range or duplicated in nodes.csv")
        seen.add(uid)
        for k, c in enumerate(xcols):
            x[uid - 1, k] = float(row[c])
        y[uid - 1] = float(row["y"])

    z = np.zeros((n, n), dtype=np.int8)
    with open(edges_path) as handle:
        reader = csv.DictReader(handle)
        if set(reader.fieldnames or []) != {"src", "dst"}:
            raise ValidationError("edges.csv must have columns src,dst")
        for lineno, row in enumerate(reader, start=2):
            i, j = int(row["src"]) - 1, int(row["dst"]) - 1
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise ValidationError(f"edges.csv line {lineno}: bad pair ({row['src']}, {row['dst']})")
            if not directed and i > j:
                raise ValidationError(
                    f"edges.csv line {lineno}: undirected edges must be stored with src < dst"
                )
            z[i, j] = 1
            if not directed:
                z[j, i] = 1

    with open(nbh_path) as handle:
        nbh_raw = json.load(handle)
    neighborhoods = []
    for i in range(n):
        key = str(i + 1)
        if key not in nbh_raw:
            raise ValidationError(f"neighborhoods.json is missing unit {key}")
        neighborhoods.append([int(u) - 1 for u in nbh_raw[key]])
    pop = Population(neighborhoods)
    data = Dataset(x, y, z, directed=directed)
    return pop, data


# --------------------------------------------------------------------------
# Fit artifact
# --------------------------------------------------------------------------

@dataclass
class FitArtifact:
    """Serialisable record of one fit (plus optional uncertainty)."""

    model: str
    family: str
    psi: float
    n_units: int
    data_dir: str
    config_hash: str
    seed: int
    theta_hat: dict
    converged: bool
    iterations: int
    final_loglik: float
    final_grad_inf_norm: float
    warnings: list = field(default_factory=list)
    version: str = __version__
    se: dict | None = None
    ci: dict | None = None
    se_config: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FitArtifact":
        return cls(**json.loads(text))


def _load_artifact(path: str) -> FitArtifact:
    if not os.path.exists(path):
        raise ValidationError(f"fit artifact not found: {path}")
    with open(path) as handle:
        return FitArtifact.from_json(handle.read())


def _artifact_theta(artifact: FitArtifact, spec, pop) -> Theta:
    lay = spec.layout(pop)
    values = np.array([artifact.theta_hat[name] for name in lay.names])
    return Theta(values, lay)


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------

def _theta_from_config(spec, pop, config, rng) -> Theta:
    lay = spec.layout(pop)
    n = pop.n_units
    t1_spec = _require(config, "theta1")
    if isinstance(t1_spec, dict):
        mean = float(_require(t1_spec, "mean"))
        sd = float(_require(t1_spec, "sd"))
        theta1 = rng.normal(mean, sd, size=lay.n_theta1)
    else:
        theta1 = np.asarray(t1_spec, dtype=np.float64)
        if theta1.shape != (lay.n_theta1,):
            raise ValidationError(
                f"theta1 must have {lay.n_theta1} entries, got {theta1.shape}"
            )
    t2_spec = _require(config, "theta2")
    if isinstance(t2_spec, dict):
        theta2 = np.zeros(lay.n_theta2)
        names = list(lay.theta2_names)
        for name, value in t2_spec.items():
            if name not in names:
                raise ValidationError(f"unknown theta2 component {name!r}")
            theta2[names.index(name)] = float(value)
    else:
        theta2 = np.asarray(t2_spec, dtype=np.float64)
        if theta2.shape != (lay.n_theta2,):
            raise ValidationError(
                f"theta2 must have {lay.n_theta2} entries, got {theta2.shape}"
            )
    return Theta(np.concatenate([theta1, theta2]), lay)


def _covariates_from_config(spec, n, config, rng):
    cov = config.get("covariates", {"dist": "uniform"})
    if isinstance(cov, list):
        x = np.asarray(cov, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] != n:
            raise ValidationError("covariates list must have one row per unit")
        return x
    dist = cov.get("dist", "uniform")
    if spec.directed:
        if dist != "binary_categorical":
            raise ValidationError(
                "directed-application covariates need dist='binary_categorical'"
            )
        k = int(cov.get("categories", 10))
        return np.column_stack([
            rng.integers(0, 2, n), rng.integers(0, 2, n),
            rng.integers(0, 2, n), rng.integers(0, k, n),
        ]).astype(np.float64)
    if dist != "uniform":
        raise ValidationError(f"unknown covariate dist {dist!r} for the undirected model")
    return rng.uniform(0.0, 1.0, size=(n, 1))


def _population_from_config(config, n):
    nbh = config.get("neighborhoods", "subpopulations")
    if nbh == "subpopulations":
        return make_subpopulation_neighborhoods(n)
    if isinstance(nbh, dict):
        neighborhoods = []
        for i in range(n):
            key = str(i + 1)
            if key not in nbh:
                raise ValidationError(f"neighborhoods config is missing unit {key}")
            neighborhoods.append([int(u) - 1 for u in nbh[key]])
        return Population(neighborhoods)
    raise ValidationError("neighborhoods must be 'subpopulations' or a unit->list map")


def cmd_simulate(args) -> int:
    with open(args.config) as handle:
        try:
            config = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from None
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    model = _require(config, "model", str)
    family = config.get("family", "bernoulli")
    psi = float(config.get("psi", 1.0))
    n = int(_require(config, "n"))
    spec = _build_spec(model, family, psi)
    pop = _population_from_config(config, n)

    ss = np.random.SeedSequence(seed)
    theta_ss, cov_ss, sim_ss = ss.spawn(3)
    rng = np.random.Generator(np.random.Philox(theta_ss))
    theta = _theta_from_config(spec, pop, config, rng)
    x = _covariates_from_config(spec, n, config, np.random.Generator(np.random.Philox(cov_ss)))

    gibbs_cfg = config.get("gibbs", {})
    sim_seed = int(sim_ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
    gibbs = GibbsConfig(burn_in=int(gibbs_cfg.get("burn_in", 1000)),
                        thin=int(gibbs_cfg.get("thin", 10)), seed=sim_seed)
    y, z = simulate(spec, pop, x, theta, gibbs, n_draws=1)[0]
    data = Dataset(x, y, z, directed=spec.directed)

    write_dataset(args.out, pop, data)
    truth = {
        "model": model, "family": family, "psi": psi, "n": n,
        "seed": seed, "config_hash": _config_hash(config),
        "gibbs": {"burn_in": gibbs.burn_in, "thin": gibbs.thin},
        "theta": theta.named(), "version": __version__,
    }
    _atomic_write(os.path.join(args.out, "truth.json"),
                  json.dumps(truth, indent=2, sort_keys=True) + "\n")
    print(f"wrote dataset with {n} units and {len(np.nonzero(z)[0])} directed "
          f"edge slots to {args.out}")
    return 0


# --------------------------------------------------------------------------
# fit / se / gof
# --------------------------------------------------------------------------

def cmd_fit(args) -> int:
    spec = _build_spec(args.model, args.family, args.psi)
    pop, data = read_dataset(args.data, spec.directed)
    options = FitOptions(init=args.init, max_iters=args.max_iters)
    result = fit(spec, pop, data, options=options)
    artifact = FitArtifact(
        model=args.model, family=args.family, psi=args.psi,
        n_units=pop.n_units, data_dir=os.path.abspath(args.data),
        config_hash=_config_hash({
            "model": args.model, "family": args.family, "psi": args.psi,
            "init": args.init, "max_iters": args.max_iters,
        }),
        seed=0,
        theta_hat=result.theta_hat.named(),
        converged=result.converged,
        iterations=result.iterations,
        final_loglik=result.final_loglik,
        final_grad_inf_norm=result.final_grad_inf_norm,
        warnings=list(result.warnings),
    )
    _atomic_write(args.out, artifact.to_json() + "\n")
    status = "converged" if result.converged else "NOT converged (flagged in artifact)"
    print(f"fit {status} after {result.iterations} iterations; "
          f"loglik {result.final_loglik:.6f}; wrote {args.out}")
    return 0


def cmd_se(args) -> int:
    artifact = _load_artifact(args.fit)
    spec = _build_spec(artifact.model, artifact.family, artifact.psi)
    data_dir = args.data or artifact.data_dir
    pop, data = read_dataset(data_dir, spec.directed)
    theta = _artifact_theta(artifact, spec, pop)
    cov = godambe_cov(spec, pop, data, theta, r_draws=args.draws, seed=args.seed,
                      mode=args.mode, per_draw_sweeps=args.sweeps, thin=args.thin)
    ci = confidence_intervals(cov, theta, args.level)
    lay = spec.layout(pop)
    artifact.se = {name: float(s) for name, s in zip(lay.names, cov.se)}
    artifact.ci = {name: [float(lo), float(hi)]
                   for name, (lo, hi) in zip(lay.names, ci)}
    artifact.se_config = {
        "draws": args.draws, "seed": args.seed, "mode": args.mode,
        "sweeps": args.sweeps, "thin": args.thin, "level": args.level,
        "ridge_used": cov.ridge_used,
    }
    _atomic_write(args.fit, artifact.to_json() + "\n")
    print(f"augmented {args.fit} with sandwich standard errors ({args.draws} draws)")
    return 0


def cmd_gof(args) -> int:
    artifact = _load_artifact(args.fit)
    spec = _build_spec(artifact.model, artifact.family, artifact.psi)
    data_dir = args.data or artifact.data_dir
    pop, data = read_dataset(data_dir, spec.directed)
    theta = _artifact_theta(artifact, spec, pop)
    stats = [s.strip() for s in args.stats.split(",") if s.strip()]
    report = gof_reference(spec, pop, data, theta, stats, n_sims=args.sims,
                           seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for name in stats:
        rows.extend(report[name].rows())
    lines = ["statistic,k_or_threshold,observed,q05,median,q95"]
    for row in rows:
        cells = [str(row["statistic"]), str(row["k_or_threshold"])]
        cells += [repr(float(row[c])) for c in ("observed", "q05", "median", "q95")]
        lines.append(",".join(cells))
    _atomic_write(os.path.join(args.out, "envelopes.csv"), "\n".join(lines) + "\n")

    summary = {"statistics": stats, "sims": args.sims, "seed": args.seed,
               "fit": os.path.abspath(args.fit)}
    if spec.family.kind == "bernoulli":
        probs_joint = predict_response_probs(spec, pop, data, theta)
        probs_base, _ = baseline_response_probs(spec, data)
        labels = data.responses.astype(int)
        if 0 < labels.sum() < labels.size:
            for tag, probs in (("joint", probs_joint), ("baseline", probs_base)):
                points, auc = roc_auc(probs, labels)
                lines = ["threshold,fpr,tpr"]
                for thr, fpr, tpr in points:
                    lines.append(f"{repr(float(thr))},{repr(float(fpr))},{repr(float(tpr))}")
                _atomic_write(os.path.join(args.out, f"roc_{tag}.csv"),
                              "\n".join(lines) + "\n")
                summary[f"auc_{tag}"] = auc
    _atomic_write(os.path.join(args.out, "gof_summary.json"),
                  json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"wrote goodness-of-fit outputs to {args.out}")
    return 0


# --------------------------------------------------------------------------
# study
# --------------------------------------------------------------------------

_STUDY_FIELDS = ("n", "rep", "component", "theta_star", "theta_hat", "abs_err",
                 "ci_lo", "ci_hi", "covered", "note")


def cmd_study(args) -> int:
    with open(args.config) as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from None
    known = set(SimStudyConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"unknown study config fields: {sorted(unknown)}")
    if "n_values" in raw:
        raw["n_values"] = tuple(raw["n_values"])
    if "theta2_star" in raw:
        raw["theta2_star"] = tuple(raw["theta2_star"])
    config = SimStudyConfig(**raw)
    if not config.n_values:
        raise ValidationError("study config needs a non-empty n_values list")

    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "study.csv")
    done = set()
    existing_rows = []
    if os.path.exists(csv_path) and args.resume:
        with open(csv_path) as handle:
            for row in csv.DictReader(handle):
                existing_rows.append(row)
                done.add((int(row["n"]), int(row["rep"])))

    tasks = [(n, rep) for n in config.n_values for rep in range(config.replications)
             if (n, rep) not in done]
    from .sampler import run_study_replication

    threads = args.threads or _threads_default()
    outcomes = []
    if tasks:
        if threads <= 1:
            for (n, rep) in tasks:
                outcomes.append(run_study_replication(config, n, rep))
        else:
            import multiprocessing as mp

            ctx = mp.get_context("fork")
            with ctx.Pool(threads) as pool:
                results = [pool.apply_async(run_study_replication, (config, n, rep))
                           for (n, rep) in tasks]
                outcomes = [r.get() for r in results]
    new_rows = study_rows(outcomes)
    all_rows = existing_rows + [{k: str(v) for k, v in row.items()} for row in new_rows]
    all_rows.sort(key=lambda r: (int(r["n"]), int(r["rep"]), r["component"]))
    lines = [",".join(_STUDY_FIELDS)]
    for row in all_rows:
        lines.append(",".join(str(row.get(c, "")) for c in _STUDY_FIELDS))
    _atomic_write(csv_path, "\n".join(lines) + "\n")

    import numba

    manifest = {
        "config": raw, "seed": config.seed, "config_hash": _config_hash(raw),
        "versions": {"netinfer": __version__, "numpy": np.__version__,
                     "numba": numba.__version__,
                     "python": sys.version.split()[0]},
    }
    _atomic_write(os.path.join(args.out, "manifest.json"),
                  json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"study complete: {len(all_rows)} rows in {csv_path}")
    return 0


def cmd_debug_enumerate(args) -> int:
    spec = _build_spec(args.model, args.family, args.psi)
    pop, data = read_dataset(args.data, spec.directed)
    enum = enumerate_joint(spec, pop, data.covariates)
    artifact = _load_artifact(args.fit) if args.fit else None
    if artifact is not None:
        theta = _artifact_theta(artifact, spec, pop)
    else:
        lay = spec.layout(pop)
        theta = Theta(np.zeros(lay.p), lay)
    probs = enum.probabilities(theta)
    print(json.dumps({
        "n_states": enum.n_states,
        "log_normalizer": enum.log_phi(theta),
        "max_state_probability": float(probs.max()),
    }, indent=2))
    return 0


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netinfer",
        description="Joint regression for interdependent unit attributes and network ties",
    )
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="{simulate,fit,se,gof,study}")

    p = sub.add_parser("simulate", help="simulate one dataset and write it to a directory")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a model to a data directory")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, choices=MODELS)
    p.add_argument("--family", default="bernoulli",
                   choices=("bernoulli", "poisson", "gaussian"))
    p.add_argument("--psi", type=float, default=1.0)
    p.add_argument("--init", default="warm", choices=("warm", "zeros"))
    p.add_argument("--max-iters", type=int, default=1000, dest="max_iters")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("se", help="augment a fit artifact with sandwich standard errors")
    p.add_argument("--fit", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--draws", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", default="restart", choices=("restart", "thin"))
    p.add_argument("--sweeps", type=int, default=500)
    p.add_argument("--thin", type=int, default=20)
    p.add_argument("--level", type=float, default=0.95)
    p.set_defaults(func=cmd_se)

    p = sub.add_parser("gof", help="simulation envelopes and prediction ROC curves")
    p.add_argument("--fit", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--sims", type=int, default=200)
    p.add_argument("--stats", default="edge_count,shared_partners")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gof)

    p = sub.add_parser("study", help="run the replication study")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_study)

    # Debugging aid; intentionally undocumented.
    p = sub.add_parser("debug-enumerate")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, choices=MODELS)
    p.add_argument("--family", default="bernoulli")
    p.add_argument("--psi", type=float, default=1.0)
    p.add_argument("--fit", default=None)
    p.set_defaults(func=cmd_debug_enumerate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, InternalConsistencyError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

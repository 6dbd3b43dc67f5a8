"""Training inputs for the precision surrogate.

The surrogate learns log lambda, where lambda is sqrt(n) times the
asymptotic posterior sd of the estimand, as a function of the simulation
parameters. Training points come from a maximin Latin hypercube over a
box in parameter space; the response at each point is estimated from
replicate simulated trials, each fitted by MCMC, with a bootstrap
standard error recording the replication noise.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, NumericalError
from .models import DesignPrior, GaussianPrior, ModelSpec
from .posterior import McmcConfig, run_chain_batch
from .seeds import child_seed, rng_for

MIN_REPLICATES = 30
MIN_N = 50
MAX_DROP_FRACTION = 0.10
BOOTSTRAP_RESAMPLES = 200
ESTIMATORS = ("replicate-sd", "posterior-sd")


@dataclass(frozen=True)
class DesignBox:
    """Axis-aligned box in natural parameter space."""

    names: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.shape[0] != len(self.names):
            raise ConfigError("box bounds must be 1-d and match the name list")
        if np.any(hi <= lo):
            raise ConfigError("box upper bounds must exceed lower bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @classmethod
    def from_prior(cls, prior: DesignPrior, width: float = 2.0) -> "DesignBox":
        bounds = [m.bounds(width) for m in prior.marginals]
        return cls(prior.names, np.array([b[0] for b in bounds]), np.array([b[1] for b in bounds]))

    def contains(self, points: np.ndarray, inflate: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(points)
        pad = inflate * self.width / 2.0
        lo = self.lower - pad
        hi = self.upper + pad
        return np.all((pts >= lo) & (pts <= hi), axis=1)


def maximin_lhs(
    box: DesignBox, k: int, seed, candidates: int = 100
) -> np.ndarray:
    """Best of ``candidates`` Latin hypercube samples by smallest pairwise
    distance in the unit-scaled box. One point per stratum per dimension,
    uniform within its cell."""
    if k < 1:
        raise ConfigError("need at least one design point")
    if candidates < 1:
        raise ConfigError("need at least one candidate")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    d = box.dim
    best = None
    best_score = -np.inf
    for _ in range(candidates):
        unit = np.empty((k, d))
        for j in range(d):
            perm = rng.permutation(k)
            unit[:, j] = (perm + rng.random(k)) / k
        if k == 1:
            score = np.inf
        else:
            diff = unit[:, None, :] - unit[None, :, :]
            dist = np.sqrt((diff**2).sum(axis=2))
            score = dist[np.triu_indices(k, 1)].min()
        if score > best_score:
            best_score = score
            best = unit
    return box.lower + best * box.width


@dataclass
class LambdaEstimate:
    """Estimated scaled posterior sd at one parameter point."""

    theta: np.ndarray
    lam: float
    log_lam: float
    mc_se: float
    mc_se_log: float
    n: int
    replicates: int
    dropped: int
    estimator: str


def _estimator_value(psi_means, psi_sds, n, estimator) -> float:
    if estimator == "replicate-sd":
        return float(np.sqrt(n) * np.std(psi_means, ddof=1))
    return float(np.mean(np.sqrt(n) * psi_sds))


def estimate_lambda(
    spec: ModelSpec,
    theta,
    n: int,
    replicates: int = 200,
    estimator: str = "replicate-sd",
    mcmc: Optional[McmcConfig] = None,
    seed=0,
) -> LambdaEstimate:
    """Replicate trials at theta, fit each posterior, reduce to lambda.

    The default estimator is sqrt(n) times the sd over replicates of the
    posterior mean of the estimand; "posterior-sd" instead averages
    sqrt(n) times each replicate's posterior sd. The bootstrap standard
    error resamples replicates.
    """
    model = spec.model
    values = np.asarray(getattr(theta, "values", theta), dtype=float)
    model.validate_theta(values)
    if n < MIN_N:
        raise ConfigError(f"n={n} too small, need at least {MIN_N}")
    if replicates < MIN_REPLICATES:
        raise ConfigError(f"replicates={replicates} too few, need at least {MIN_REPLICATES}")
    if estimator not in ESTIMATORS:
        raise ConfigError(f"estimator must be one of {ESTIMATORS}")
    mcmc = mcmc if mcmc is not None else McmcConfig()

    stats = np.empty((replicates, model.suffstats_dim))
    for r in range(replicates):
        data = model.simulate(values, n, rng_for(seed, 0, r))
        stats[r] = model.suffstats(data)

    res = run_chain_batch(
        model, stats, spec.analysis_prior, mcmc, rng_for(seed, 1, 0), keep_draws=False
    )
    psi_means = res["psi_mean"]
    psi_sds = res["psi_sd"]
    ok = np.isfinite(psi_means) & np.isfinite(psi_sds) & (res["accept_rate"] > 0)
    dropped = int(replicates - ok.sum())
    if dropped > MAX_DROP_FRACTION * replicates:
        raise NumericalError(
            f"{dropped}/{replicates} replicate fits failed at theta={values.tolist()}"
        )
    psi_means = psi_means[ok]
    psi_sds = psi_sds[ok]

    lam = _estimator_value(psi_means, psi_sds, n, estimator)
    if not np.isfinite(lam) or lam <= 0:
        raise NumericalError(f"degenerate lambda estimate {lam} at theta={values.tolist()}")

    boot_rng = rng_for(seed, 2, 0)
    m = psi_means.shape[0]
    boot = np.empty(BOOTSTRAP_RESAMPLES)
    for b in range(BOOTSTRAP_RESAMPLES):
        ix = boot_rng.integers(0, m, size=m)
        boot[b] = _estimator_value(psi_means[ix], psi_sds[ix], n, estimator)
    boot = boot[np.isfinite(boot) & (boot > 0)]
    mc_se = float(np.std(boot, ddof=1)) if boot.size > 1 else float("nan")
    mc_se_log = float(np.std(np.log(boot), ddof=1)) if boot.size > 1 else float("nan")

    return LambdaEstimate(
        theta=values,
        lam=lam,
        log_lam=float(np.log(lam)),
        mc_se=mc_se,
        mc_se_log=mc_se_log,
        n=n,
        replicates=replicates,
        dropped=dropped,
        estimator=estimator,
    )


@dataclass
class TrainingSet:
    """Design points with lambda estimates, ready for surrogate fitting."""

    family: str
    names: tuple[str, ...]
    box: DesignBox
    points: np.ndarray  # (k, d)
    log_lam: np.ndarray  # (k,)
    lam: np.ndarray
    mc_se: np.ndarray
    mc_se_log: np.ndarray
    n: int
    replicates: int
    dropped: np.ndarray  # (k,)
    estimator: str
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.points.shape[0]


def build_training_set(
    spec: ModelSpec,
    k: int,
    n: int,
    replicates: int = 200,
    box: Optional[DesignBox] = None,
    estimator: str = "replicate-sd",
    mcmc: Optional[McmcConfig] = None,
    seed: int = 0,
    threads: int = 1,
) -> TrainingSet:
    box = box if box is not None else DesignBox.from_prior(spec.design_prior)
    if tuple(box.names) != tuple(spec.model.param_names):
        raise ConfigError("box dimensions must match the model parameters")
    points = maximin_lhs(box, k, rng_for(seed, 0))

    def one(i: int) -> LambdaEstimate:
        point_seed = child_seed(seed, 1, i).generate_state(4).tolist()
        return estimate_lambda(
            spec, points[i], n, replicates, estimator, mcmc, seed=point_seed
        )

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            estimates = list(pool.map(one, range(k)))
    else:
        estimates = [one(i) for i in range(k)]

    return TrainingSet(
        family=spec.model.family,
        names=tuple(box.names),
        box=box,
        points=points,
        log_lam=np.array([e.log_lam for e in estimates]),
        lam=np.array([e.lam for e in estimates]),
        mc_se=np.array([e.mc_se for e in estimates]),
        mc_se_log=np.array([e.mc_se_log for e in estimates]),
        n=n,
        replicates=replicates,
        dropped=np.array([e.dropped for e in estimates], dtype=int),
        estimator=estimator,
        seed=seed,
        meta={"mcmc": (mcmc or McmcConfig()).__dict__.copy()},
    )


def training_set_to_csv(ts: TrainingSet, path) -> None:
    """Write point rows; provenance goes to a JSON sidecar next to it."""
    import csv as _csv

    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(list(ts.names) + ["lambda_hat", "mc_se", "n", "R", "estimator"])
        for i in range(ts.k):
            row = [repr(float(v)) for v in ts.points[i]]
            row += [
                repr(float(ts.lam[i])),
                repr(float(ts.mc_se[i])),
                str(ts.n),
                str(ts.replicates),
                ts.estimator,
            ]
            w.writerow(row)
    _write_sidecar(ts, str(path) + ".provenance.json")


def _write_sidecar(ts: TrainingSet, path) -> None:
    import datetime

    obj = {
        "format": "seqoc-training",
        "version": 1,
        "family": ts.family,
        "names": list(ts.names),
        "box": {"lower": ts.box.lower.tolist(), "upper": ts.box.upper.tolist()},
        "n": ts.n,
        "replicates": ts.replicates,
        "estimator": ts.estimator,
        "seed": ts.seed,
        "mc_se_log": ts.mc_se_log.tolist(),
        "dropped": ts.dropped.tolist(),
        "meta": ts.meta,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def training_set_from_csv(path) -> TrainingSet:
    import csv as _csv

    sidecar = str(path) + ".provenance.json"
    try:
        with open(sidecar) as fh:
            meta = json.load(fh)
    except OSError:
        raise ConfigError(f"missing provenance sidecar {sidecar}") from None
    with open(path, newline="") as fh:
        r = _csv.reader(fh)
        header = next(r, None)
        rows = [row for row in r if row]
    if header is None or not rows:
        raise ConfigError(f"{path}: empty training table")
    names = tuple(meta["names"])
    d = len(names)
    if header[:d] != list(names):
        raise ConfigError(f"{path}: parameter columns {header[:d]} do not match sidecar {list(names)}")
    if header[d:] != ["lambda_hat", "mc_se", "n", "R", "estimator"]:
        raise ConfigError(f"{path}: unexpected value columns {header[d:]}")
    try:
        points = np.array([[float(v) for v in row[:d]] for row in rows])
        lam = np.array([float(row[d]) for row in rows])
        mc_se = np.array([float(row[d + 1]) for row in rows])
    except (ValueError, IndexError) as e:
        raise ConfigError(f"{path}: malformed row ({e})") from None
    if np.any(lam <= 0):
        raise ConfigError(f"{path}: lambda_hat must be positive")
    box = DesignBox(names, np.asarray(meta["box"]["lower"]), np.asarray(meta["box"]["upper"]))
    k = points.shape[0]
    mc_se_log = np.asarray(meta.get("mc_se_log", (mc_se / lam).tolist()), dtype=float)
    dropped = np.asarray(meta.get("dropped", [0] * k), dtype=int)
    return TrainingSet(
        family=meta["family"],
        names=names,
        box=box,
        points=points,
        lam=lam,
        log_lam=np.log(lam),
        mc_se=mc_se,
        mc_se_log=mc_se_log,
        dropped=dropped,
        n=int(meta["n"]),
        replicates=int(meta["replicates"]),
        estimator=meta["estimator"],
        seed=int(meta["seed"]),
        meta=meta.get("meta", {}),
    )

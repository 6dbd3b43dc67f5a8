"""Trial models, design priors, and simulated datasets.

A model bundles three things: a parameter vector with named components, a
data generating process for one trial of size n, and a likelihood written
against sufficient statistics so that posterior fitting scales with the
number of summary cells rather than the number of patients.

Two families are built in. ``logistic-subgroup`` is a binary endpoint with
a 0/1 subgroup covariate, 1:1 randomization, and a treatment effect that
may differ by subgroup; the estimand is the log odds ratio in the
reference subgroup. ``piecewise-exp-survival`` is a time-to-event endpoint
with constant hazard on four 7 day intervals, 28 days of follow-up, visit
level dropout, and a proportional hazards treatment effect; the estimand
is the log hazard ratio.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .seeds import rng_for

N_INTERVALS = 4
VISIT_SPACING = 7.0
FOLLOW_UP = N_INTERVALS * VISIT_SPACING


@dataclass(frozen=True)
class ParameterPoint:
    """A named point in a model's parameter space."""

    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.shape[0] != len(self.names):
            raise ConfigError(
                f"parameter point needs {len(self.names)} values, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ConfigError("parameter values must be finite")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __getitem__(self, name: str) -> float:
        try:
            return float(self.values[self.names.index(name)])
        except ValueError:
            raise KeyError(name) from None

    def as_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in zip(self.names, self.values)}


@dataclass(frozen=True)
class Marginal:
    """One independent prior marginal. ``dist`` is normal, lognormal,
    uniform, or fixed; lognormal parameters are the mean and sd of the
    underlying normal."""

    name: str
    dist: str
    params: tuple[float, ...]

    def sample(self, k: int, rng: np.random.Generator) -> np.ndarray:
        if self.dist == "normal":
            mu, sd = self.params
            return mu + sd * rng.standard_normal(k)
        if self.dist == "lognormal":
            mu, sd = self.params
            return np.exp(mu + sd * rng.standard_normal(k))
        if self.dist == "uniform":
            lo, hi = self.params
            return lo + (hi - lo) * rng.random(k)
        if self.dist == "fixed":
            return np.full(k, self.params[0])
        raise ConfigError(f"unknown marginal dist {self.dist!r}")

    def bounds(self, width: float = 2.0) -> tuple[float, float]:
        """Central range used for default training boxes."""
        if self.dist == "normal":
            mu, sd = self.params
            return mu - width * sd, mu + width * sd
        if self.dist == "lognormal":
            mu, sd = self.params
            return float(np.exp(mu - width * sd)), float(np.exp(mu + width * sd))
        if self.dist == "uniform":
            lo, hi = self.params
            return lo, hi
        if self.dist == "fixed":
            v = self.params[0]
            return v, v
        raise ConfigError(f"unknown marginal dist {self.dist!r}")


@dataclass(frozen=True)
class DesignPrior:
    """Independent marginals over the model's parameter vector, in the
    model's parameter order."""

    marginals: tuple[Marginal, ...]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.marginals)

    def sample_matrix(self, k: int, rng: np.random.Generator) -> np.ndarray:
        if k < 0:
            raise ConfigError("sample size must be nonnegative")
        out = np.empty((k, len(self.marginals)))
        for j, m in enumerate(self.marginals):
            out[:, j] = m.sample(k, rng)
        return out


@dataclass(frozen=True)
class GaussianPrior:
    """Independent normal analysis prior on the unconstrained sampled
    parameters."""

    means: np.ndarray
    sds: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.means, dtype=float))
        s = np.atleast_1d(np.asarray(self.sds, dtype=float))
        if m.shape != s.shape or m.ndim != 1:
            raise ConfigError("prior means and sds must be 1-d and match")
        if np.any(s <= 0):
            raise ConfigError("prior sds must be positive")
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "sds", s)

    def logpdf_terms(self, j: int, x: np.ndarray) -> np.ndarray:
        # only terms depending on x; normalizing constants cancel in MH ratios
        return -0.5 * ((x - self.means[j]) / self.sds[j]) ** 2


@dataclass
class Dataset:
    """Per-record trial data. ``columns`` keeps insertion order, which is
    the canonical CSV column order."""

    family: str
    columns: dict[str, np.ndarray]

    @property
    def n(self) -> int:
        if not self.columns:
            return 0
        return len(next(iter(self.columns.values())))

    def prefix(self, n: int) -> "Dataset":
        """First n records, sharing storage with the parent."""
        if not 0 <= n <= self.n:
            raise ConfigError(f"prefix size {n} outside [0, {self.n}]")
        return Dataset(self.family, {k: v[:n] for k, v in self.columns.items()})

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            names = list(self.columns)
            w.writerow(names)
            cols = [self.columns[k] for k in names]
            for row in zip(*cols):
                w.writerow([_cell(v) for v in row])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            try:
                names = next(r)
            except StopIteration:
                raise ConfigError(f"{path}: empty dataset file") from None
            rows = [row for row in r if row]
        fam = _family_for_columns(names)
        data = {}
        for j, name in enumerate(names):
            vals = [row[j] for row in rows]
            if name == "time":
                data[name] = np.array([float(v) for v in vals])
            else:
                data[name] = np.array([int(v) for v in vals], dtype=np.int8)
        return cls(fam, data)


def _cell(v) -> str:
    if isinstance(v, (np.floating, float)):
        return repr(float(v))
    return str(int(v))


def _family_for_columns(names: Sequence[str]) -> str:
    s = set(names)
    if s == {"response", "subgroup", "arm"}:
        return "logistic-subgroup"
    if s == {"time", "event", "arm"}:
        return "piecewise-exp-survival"
    raise ConfigError(f"unrecognized dataset columns {sorted(s)}")


def _balanced_arms(n: int, rng: np.random.Generator) -> np.ndarray:
    """Randomly ordered 1:1 allocation; arm counts differ by at most one."""
    a = np.empty(n, dtype=np.int8)
    a[rng.permutation(n)] = np.arange(n) % 2
    return a


class LogisticSubgroupModel:
    """Binary endpoint with a binary subgroup covariate.

    Success probability follows a logistic regression with terms
    intercept + subgroup effect + (treatment + interaction * subgroup) * arm.
    The estimand is the treatment coefficient, the log odds ratio for
    treated versus control in the reference subgroup.
    """

    family = "logistic-subgroup"
    param_names = ("intercept", "subgroup", "treatment", "interaction")
    suffstats_dim = 8
    psi_index = 2
    sampled_names = param_names
    psi_u_index = 2
    psi_label = "log odds ratio (reference subgroup)"
    default_analysis_prior = GaussianPrior(np.zeros(4), np.full(4, 2.5))

    # cells ordered (subgroup, arm) = (0,0), (1,0), (0,1), (1,1)
    _cells = np.array(
        [[1, 0, 0, 0], [1, 1, 0, 0], [1, 0, 1, 0], [1, 1, 1, 1]], dtype=float
    )

    @property
    def n_params(self) -> int:
        return 4

    @property
    def n_sampled(self) -> int:
        return 4

    def point(self, values) -> ParameterPoint:
        return ParameterPoint(self.param_names, np.asarray(values, dtype=float))

    def validate_theta(self, values: np.ndarray) -> None:
        v = np.asarray(values, dtype=float)
        if v.shape[-1] != 4:
            raise ConfigError(f"{self.family} expects 4 parameters, got {v.shape[-1]}")
        if not np.all(np.isfinite(v)):
            raise ConfigError("parameters must be finite")

    def psi_of_matrix(self, theta: np.ndarray) -> np.ndarray:
        return np.asarray(theta, dtype=float)[..., self.psi_index]

    def simulate(self, theta: np.ndarray, n: int, rng: np.random.Generator) -> Dataset:
        self.validate_theta(theta)
        if n < 2:
            raise ConfigError("n must be at least 2")
        b0, b1, trt, inter = np.asarray(theta, dtype=float)
        x = (rng.random(n) < 0.5).astype(np.int8)
        a = _balanced_arms(n, rng)
        logit = b0 + b1 * x + (trt + inter * x) * a
        p = 1.0 / (1.0 + np.exp(-logit))
        y = (rng.random(n) < p).astype(np.int8)
        return Dataset(self.family, {"response": y, "subgroup": x, "arm": a})

    def validate_data(self, data: Dataset) -> None:
        if data.family != self.family:
            raise ConfigError(f"dataset family {data.family!r} does not match {self.family!r}")
        for name in ("response", "subgroup", "arm"):
            col = data.columns[name]
            if col.size and not np.all((col == 0) | (col == 1)):
                raise ConfigError(f"column {name} must be 0/1")

    def suffstats(self, data: Dataset) -> np.ndarray:
        """Cell counts and cell successes: (N00, N10, N01, N11, S00, ...),
        cells ordered by (subgroup, arm)."""
        self.validate_data(data)
        x = data.columns["subgroup"]
        a = data.columns["arm"]
        y = data.columns["response"]
        cell = (x + 2 * a).astype(np.intp)
        counts = np.bincount(cell, minlength=4).astype(float)
        successes = np.bincount(cell, weights=y, minlength=4)
        return np.concatenate([counts, successes])

    def suffstats_prefixes(self, data: Dataset, ns: Sequence[int]) -> np.ndarray:
        self.validate_data(data)
        x = data.columns["subgroup"]
        a = data.columns["arm"]
        y = data.columns["response"]
        cell = (x + 2 * a).astype(np.intp)
        out = np.empty((len(ns), 8))
        for i, n in enumerate(ns):
            c = cell[:n]
            out[i, :4] = np.bincount(c, minlength=4)
            out[i, 4:] = np.bincount(c, weights=y[:n], minlength=4)
        return out

    def loglik_rows(self, stats: np.ndarray, u: np.ndarray) -> np.ndarray:
        stats = np.atleast_2d(stats)
        u = np.atleast_2d(u)
        logits = u @ self._cells.T
        n_c, s_c = stats[:, :4], stats[:, 4:]
        # stable log(1 + exp(logit))
        softplus = np.maximum(logits, 0.0) + np.log1p(np.exp(-np.abs(logits)))
        return np.sum(s_c * logits - n_c * softplus, axis=-1)

    def to_unconstrained(self, theta: np.ndarray) -> np.ndarray:
        self.validate_theta(theta)
        return np.asarray(theta, dtype=float).copy()

    def draws_to_natural(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u, dtype=float)

    draw_names = param_names


class PiecewiseExpSurvivalModel:
    """Time-to-event endpoint with piecewise constant hazards.

    Control hazard is constant on each of four 7 day intervals; treatment
    multiplies all interval hazards by a common rate ratio, so the
    estimand is its log. Follow-up ends at day 28. Patients are assessed
    at weekly visits and drop out with a fixed per-visit probability; a
    dropout before visit j is last seen at day 7(j-1), which is where
    censoring lands. Event times are observed exactly. The dropout
    probability shapes the data but is not an analysis parameter.
    """

    family = "piecewise-exp-survival"
    param_names = (
        "hazard_w1",
        "hazard_w2",
        "hazard_w3",
        "hazard_w4",
        "log_hr",
        "dropout",
    )
    suffstats_dim = 4 * N_INTERVALS
    psi_index = 4
    sampled_names = ("hazard_w1", "hazard_w2", "hazard_w3", "hazard_w4", "log_hr")
    psi_u_index = 4
    psi_label = "log hazard ratio"
    default_analysis_prior = GaussianPrior(np.zeros(5), np.full(5, 10.0))
    draw_names = sampled_names

    @property
    def n_params(self) -> int:
        return 6

    @property
    def n_sampled(self) -> int:
        return 5

    def point(self, values) -> ParameterPoint:
        return ParameterPoint(self.param_names, np.asarray(values, dtype=float))

    def validate_theta(self, values: np.ndarray) -> None:
        v = np.asarray(values, dtype=float)
        if v.shape[-1] != 6:
            raise ConfigError(f"{self.family} expects 6 parameters, got {v.shape[-1]}")
        if not np.all(np.isfinite(v)):
            raise ConfigError("parameters must be finite")
        if np.any(v[..., :4] <= 0):
            raise ConfigError("interval hazards must be positive")
        kappa = v[..., 5]
        if np.any((kappa < 0) | (kappa >= 1)):
            raise ConfigError("per-visit dropout probability must lie in [0, 1)")

    def psi_of_matrix(self, theta: np.ndarray) -> np.ndarray:
        return np.asarray(theta, dtype=float)[..., self.psi_index]

    def simulate(self, theta: np.ndarray, n: int, rng: np.random.Generator) -> Dataset:
        self.validate_theta(theta)
        if n < 2:
            raise ConfigError("n must be at least 2")
        theta = np.asarray(theta, dtype=float)
        haz = theta[:4]
        log_hr = theta[4]
        kappa = theta[5]

        a = _balanced_arms(n, rng)
        e = rng.exponential(1.0, n)
        visit_u = rng.random((n, N_INTERVALS))

        # invert the piecewise-linear cumulative hazard, arm by arm
        event_time = np.full(n, np.inf)
        for arm in (0, 1):
            idx = np.nonzero(a == arm)[0]
            if idx.size == 0:
                continue
            rate = np.exp(log_hr * arm)
            cum = np.cumsum(haz * rate) * VISIT_SPACING
            k = np.searchsorted(cum, e[idx], side="right")
            inside = k < N_INTERVALS
            ki = k[inside]
            lower = np.concatenate([[0.0], cum])[ki]
            event_time[idx[inside]] = VISIT_SPACING * ki + (
                (e[idx][inside] - lower) / (haz[ki] * rate)
            )

        time = np.minimum(event_time, FOLLOW_UP)
        event = (event_time <= FOLLOW_UP).astype(np.int8)
        # dropout before visit j censors at day 7(j-1); only patients still
        # event-free at visit j are at risk of dropping
        for j in range(1, N_INTERVALS + 1):
            day = VISIT_SPACING * j
            at_risk = (event_time > day) & (time >= day)
            drop = at_risk & (visit_u[:, j - 1] < kappa)
            time[drop] = day - VISIT_SPACING
            event[drop] = 0
        return Dataset(self.family, {"time": time, "event": event, "arm": a})

    def validate_data(self, data: Dataset) -> None:
        if data.family != self.family:
            raise ConfigError(f"dataset family {data.family!r} does not match {self.family!r}")
        t = data.columns["time"]
        d = data.columns["event"]
        a = data.columns["arm"]
        if t.size == 0:
            return
        if np.any((t < 0) | (t > FOLLOW_UP)):
            raise ConfigError(f"times must lie in [0, {FOLLOW_UP}]")
        if not np.all((d == 0) | (d == 1)):
            raise ConfigError("event indicator must be 0/1")
        if not np.all((a == 0) | (a == 1)):
            raise ConfigError("arm must be 0/1")
        cens = t[d == 0]
        if cens.size and not np.all(np.isin(cens, np.arange(N_INTERVALS + 1) * VISIT_SPACING)):
            raise ConfigError("censoring times must fall on visit days")

    def suffstats(self, data: Dataset) -> np.ndarray:
        """Event counts then exposures, one entry per (arm, interval):
        (D[0,1..4], D[1,1..4], E[0,1..4], E[1,1..4])."""
        return self.suffstats_prefixes(data, [data.n])[0]

    def suffstats_prefixes(self, data: Dataset, ns: Sequence[int]) -> np.ndarray:
        self.validate_data(data)
        t = data.columns["time"]
        d = data.columns["event"]
        a = data.columns["arm"].astype(np.intp)
        n_total = data.n
        edges = np.arange(N_INTERVALS + 1) * VISIT_SPACING

        # event interval index for each record (0..3), -1 when censored
        ev_int = np.full(n_total, -1, dtype=np.intp)
        if n_total:
            pos = d == 1
            ev_int[pos] = np.clip(
                np.searchsorted(edges, t[pos], side="left") - 1, 0, N_INTERVALS - 1
            )
        # time at risk inside each interval
        expo = np.clip(t[:, None] - edges[None, :-1], 0.0, VISIT_SPACING)

        out = np.empty((len(ns), 4 * N_INTERVALS))
        for i, n in enumerate(ns):
            dmat = np.zeros((2, N_INTERVALS))
            emat = np.zeros((2, N_INTERVALS))
            sl = slice(0, n)
            ev = ev_int[sl]
            arm = a[sl]
            has = ev >= 0
            np.add.at(dmat, (arm[has], ev[has]), 1.0)
            for armval in (0, 1):
                emat[armval] = expo[sl][arm == armval].sum(axis=0)
            out[i] = np.concatenate([dmat.ravel(), emat.ravel()])
        return out

    def loglik_rows(self, stats: np.ndarray, u: np.ndarray) -> np.ndarray:
        stats = np.atleast_2d(stats)
        u = np.atleast_2d(u)
        log_h = u[:, :N_INTERVALS]
        beta = u[:, N_INTERVALS]
        d0 = stats[:, 0:4]
        d1 = stats[:, 4:8]
        e0 = stats[:, 8:12]
        e1 = stats[:, 12:16]
        h = np.exp(log_h)
        ll = np.sum(d0 * log_h - h * e0, axis=-1)
        ll += np.sum(d1 * (log_h + beta[:, None]) - h * np.exp(beta)[:, None] * e1, axis=-1)
        return ll

    def to_unconstrained(self, theta: np.ndarray) -> np.ndarray:
        self.validate_theta(theta)
        theta = np.asarray(theta, dtype=float)
        return np.concatenate([np.log(theta[:4]), theta[4:5]])

    def draws_to_natural(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        out = u.copy()
        out[..., :N_INTERVALS] = np.exp(u[..., :N_INTERVALS])
        return out


FAMILIES = {
    LogisticSubgroupModel.family: LogisticSubgroupModel,
    PiecewiseExpSurvivalModel.family: PiecewiseExpSurvivalModel,
}


@dataclass
class ModelSpec:
    """A model together with its design prior, analysis prior, and the
    null value of the estimand."""

    model: object
    design_prior: DesignPrior
    analysis_prior: GaussianPrior
    psi_null: float = 0.0


def psi(model, theta) -> float:
    """Estimand value at a parameter point."""
    values = theta.values if isinstance(theta, ParameterPoint) else np.asarray(theta, float)
    model.validate_theta(values)
    return float(values[model.psi_index])


def simulate_dataset(model, theta, n: int, rng) -> Dataset:
    values = theta.values if isinstance(theta, ParameterPoint) else np.asarray(theta, float)
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    return model.simulate(values, n, rng)


def sample_design_prior(prior: DesignPrior, k: int, seed) -> list[ParameterPoint]:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mat = prior.sample_matrix(k, rng)
    names = prior.names
    return [ParameterPoint(names, row) for row in mat]


def prior_sample_matrix(spec: "ModelSpec", k: int, seed) -> np.ndarray:
    """Design prior draws as a (k, p) matrix on a stream reserved for
    integration sampling, so the same seed gives the same sample from
    every front end."""
    if k < 1:
        raise ConfigError("need at least one prior draw")
    return spec.design_prior.sample_matrix(int(k), rng_for(seed, 3))


def log_likelihood(model, theta, data: Dataset) -> float:
    """Log likelihood at a natural-scale parameter point."""
    values = theta.values if isinstance(theta, ParameterPoint) else np.asarray(theta, float)
    u = model.to_unconstrained(values)
    stats = model.suffstats(data)
    return float(model.loglik_rows(stats[None, :], u[None, :])[0])


def _marginal_from_json(obj: dict) -> Marginal:
    try:
        name = obj["name"]
        dist = obj["dist"]
    except KeyError as e:
        raise ConfigError(f"prior marginal missing field {e}") from None
    if dist == "normal" or dist == "lognormal":
        params = (float(obj["mean"]), float(obj["sd"]))
        if params[1] < 0:
            raise ConfigError(f"marginal {name}: sd must be nonnegative")
    elif dist == "uniform":
        params = (float(obj["low"]), float(obj["high"]))
        if params[1] < params[0]:
            raise ConfigError(f"marginal {name}: high < low")
    elif dist == "fixed":
        params = (float(obj["value"]),)
    else:
        raise ConfigError(f"marginal {name}: unknown dist {dist!r}")
    return Marginal(name, dist, params)


def _marginal_to_json(m: Marginal) -> dict:
    if m.dist in ("normal", "lognormal"):
        return {"name": m.name, "dist": m.dist, "mean": m.params[0], "sd": m.params[1]}
    if m.dist == "uniform":
        return {"name": m.name, "dist": m.dist, "low": m.params[0], "high": m.params[1]}
    return {"name": m.name, "dist": m.dist, "value": m.params[0]}


def load_model_spec(path) -> ModelSpec:
    """Read a model description file. See configs/ for the schema by
    example: family, psi_null, design_prior marginals, and optionally an
    analysis_prior overriding the family default."""
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as e:
        raise ConfigError(f"{path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return model_spec_from_json(obj, where=str(path))


def model_spec_from_json(obj: dict, where: str = "model spec") -> ModelSpec:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    fam = obj.get("family")
    if fam not in FAMILIES:
        raise ConfigError(f"{where}: unknown family {fam!r}, expected one of {sorted(FAMILIES)}")
    model = FAMILIES[fam]()
    raw = obj.get("design_prior")
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{where}: design_prior must be a non-empty list of marginals")
    marginals = tuple(_marginal_from_json(m) for m in raw)
    if tuple(m.name for m in marginals) != model.param_names:
        raise ConfigError(
            f"{where}: design_prior names {[m.name for m in marginals]} must match "
            f"{list(model.param_names)} in order"
        )
    ap = obj.get("analysis_prior")
    if ap is None:
        analysis = model.default_analysis_prior
    else:
        try:
            analysis = GaussianPrior(np.asarray(ap["mean"], float), np.asarray(ap["sd"], float))
        except (KeyError, TypeError) as e:
            raise ConfigError(f"{where}: bad analysis_prior ({e})") from None
        if analysis.means.shape[0] != model.n_sampled:
            raise ConfigError(
                f"{where}: analysis_prior needs {model.n_sampled} components"
            )
    psi_null = float(obj.get("psi_null", 0.0))
    return ModelSpec(model, DesignPrior(marginals), analysis, psi_null)


def model_spec_to_json(spec: ModelSpec) -> dict:
    return {
        "format": "seqoc-model",
        "version": 1,
        "family": spec.model.family,
        "psi_null": spec.psi_null,
        "design_prior": [_marginal_to_json(m) for m in spec.design_prior.marginals],
        "analysis_prior": {
            "mean": [float(v) for v in spec.analysis_prior.means],
            "sd": [float(v) for v in spec.analysis_prior.sds],
        },
    }

"""Posterior fitting by adaptive Metropolis within Gibbs.

Sampling happens on the unconstrained scale against sufficient
statistics. The same kernel runs one chain on one dataset or, for
replicate studies, many independent chains side by side as rows of a
batch; per-chain step sizes adapt toward a target acceptance rate during
burn-in only and stay frozen afterwards, so retained draws come from a
fixed kernel.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigError, NumericalError
from .models import Dataset, GaussianPrior

TARGET_ACCEPT = 0.44
RHAT_WARN = 1.1


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 3000
    burnin: int = 1000
    chains: int = 1
    initial_step: float = 0.5
    adapt_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.iterations <= 0 or self.burnin < 0:
            raise ConfigError("iterations must be positive and burnin nonnegative")
        if self.iterations - self.burnin < 10:
            raise ConfigError("need at least 10 retained iterations")
        if self.chains < 1:
            raise ConfigError("chains must be >= 1")
        if self.initial_step <= 0:
            raise ConfigError("initial_step must be positive")
        if self.adapt_every < 1:
            raise ConfigError("adapt_every must be >= 1")


@dataclass
class PosteriorDraws:
    """Retained draws on the natural parameter scale plus diagnostics."""

    names: tuple[str, ...]
    params: np.ndarray  # (n_draws, n_params), chains concatenated
    psi: np.ndarray  # (n_draws,)
    accept_rate: float
    rhat: np.ndarray  # (n_params,)
    warnings: list = field(default_factory=list)

    @property
    def n_draws(self) -> int:
        return self.params.shape[0]


def _split_halves(kept: int) -> tuple[slice, slice, int]:
    m = kept // 2
    return slice(0, m), slice(m, 2 * m), m


def split_rhat(draws: np.ndarray) -> np.ndarray:
    """Split-half potential scale reduction over (chains, kept, params)."""
    c, kept, p = draws.shape
    h1, h2, m = _split_halves(kept)
    if m < 2:
        return np.full(p, np.nan)
    groups = np.concatenate([draws[:, h1, :], draws[:, h2, :]], axis=0)
    means = groups.mean(axis=1)
    variances = groups.var(axis=1, ddof=1)
    w = variances.mean(axis=0)
    b = m * means.var(axis=0, ddof=1)
    out = np.full(p, np.inf)
    ok = w > 0
    out[ok] = np.sqrt(((m - 1) / m * w[ok] + b[ok] / m) / w[ok])
    return out


def run_chain_batch(
    model,
    stats: np.ndarray,
    prior: GaussianPrior,
    config: McmcConfig,
    rng: np.random.Generator,
    keep_draws: bool = False,
    psi_null: Optional[float] = None,
) -> dict:
    """Run one chain per row of ``stats``.

    Returns per-chain summaries of the estimand draws and, when asked,
    the retained draws themselves as (chains, kept, params). Chains all
    start at zero on the unconstrained scale and see only their own row.
    """
    stats = np.atleast_2d(np.asarray(stats, dtype=float))
    n_chains = stats.shape[0]
    p = model.n_sampled
    kept = config.iterations - config.burnin

    cur = np.zeros((n_chains, p))
    lp_lik = model.loglik_rows(stats, cur)
    lp_pr = np.empty((n_chains, p))
    for j in range(p):
        lp_pr[:, j] = prior.logpdf_terms(j, cur[:, j])

    log_step = np.full((n_chains, p), np.log(config.initial_step))
    step = np.exp(log_step)
    window_acc = np.zeros((n_chains, p))
    post_acc = np.zeros(n_chains)

    psi_ix = model.psi_u_index
    psi_sum = np.zeros(n_chains)
    psi_sumsq = np.zeros(n_chains)
    psi_gt = np.zeros(n_chains)
    h1, h2, m_half = _split_halves(kept)
    half_sum = np.zeros((n_chains, p, 2))
    half_sumsq = np.zeros((n_chains, p, 2))
    draws = np.empty((n_chains, kept, p)) if keep_draws else None

    prop = np.empty_like(cur)
    for it in range(config.iterations):
        z = rng.standard_normal((n_chains, p))
        logu = np.log(rng.random((n_chains, p)))
        for j in range(p):
            np.copyto(prop, cur)
            prop[:, j] = cur[:, j] + step[:, j] * z[:, j]
            lp_lik_prop = model.loglik_rows(stats, prop)
            lp_pr_prop = prior.logpdf_terms(j, prop[:, j])
            # inf-inf and nan deltas mean "reject"; the comparison below
            # already does that, so the arithmetic warning is noise
            with np.errstate(invalid="ignore"):
                delta = (lp_lik_prop - lp_lik) + (lp_pr_prop - lp_pr[:, j])
            acc = logu[:, j] < delta
            if acc.any():
                cur[acc, j] = prop[acc, j]
                lp_lik[acc] = lp_lik_prop[acc]
                lp_pr[acc, j] = lp_pr_prop[acc]
            window_acc[:, j] += acc
            if it >= config.burnin:
                post_acc += acc

        if it < config.burnin and (it + 1) % config.adapt_every == 0:
            rate = window_acc / config.adapt_every
            bump = min(0.05, ((it + 1) // config.adapt_every) ** -0.5)
            log_step += np.where(rate > TARGET_ACCEPT, bump, -bump)
            np.exp(log_step, out=step)
            window_acc[:] = 0.0

        if it >= config.burnin:
            k = it - config.burnin
            psi_val = cur[:, psi_ix]
            psi_sum += psi_val
            psi_sumsq += psi_val * psi_val
            if psi_null is not None:
                psi_gt += psi_val > psi_null
            if k < m_half:
                half_sum[:, :, 0] += cur
                half_sumsq[:, :, 0] += cur * cur
            elif k < 2 * m_half:
                half_sum[:, :, 1] += cur
                half_sumsq[:, :, 1] += cur * cur
            if keep_draws:
                draws[:, k, :] = cur

    psi_mean = psi_sum / kept
    psi_var = np.maximum(psi_sumsq / kept - psi_mean**2, 0.0) * kept / (kept - 1)
    out = {
        "psi_mean": psi_mean,
        "psi_sd": np.sqrt(psi_var),
        "accept_rate": post_acc / (kept * p),
        "rhat": _rhat_from_halves(half_sum, half_sumsq, m_half),
    }
    if psi_null is not None:
        out["tau"] = psi_gt / kept
    if keep_draws:
        out["draws"] = draws
    return out


def _rhat_from_halves(half_sum, half_sumsq, m) -> np.ndarray:
    if m < 2:
        return np.full(half_sum.shape[:2], np.nan)
    means = half_sum / m
    variances = (half_sumsq - m * means**2) / (m - 1)
    w = variances.mean(axis=2)
    b = m * 0.5 * (means[:, :, 0] - means[:, :, 1]) ** 2
    out = np.full(w.shape, np.inf)
    ok = w > 0
    out[ok] = np.sqrt(((m - 1) / m * w[ok] + b[ok] / m) / w[ok])
    return out


def fit_posterior(
    model,
    data: Dataset,
    prior: Optional[GaussianPrior] = None,
    config: Optional[McmcConfig] = None,
) -> PosteriorDraws:
    """Fit one dataset, concatenating draws across chains."""
    prior = prior if prior is not None else model.default_analysis_prior
    config = config if config is not None else McmcConfig()
    if prior.means.shape[0] != model.n_sampled:
        raise ConfigError(
            f"analysis prior has {prior.means.shape[0]} components, model needs {model.n_sampled}"
        )
    if data.n < 1:
        raise ConfigError("cannot fit a posterior to an empty dataset")
    stats = model.suffstats(data)
    lp0 = model.loglik_rows(stats[None, :], np.zeros((1, model.n_sampled)))[0]
    if not np.isfinite(lp0):
        raise NumericalError(
            "log likelihood is not finite at the chain starting point (zero on the "
            "unconstrained scale); the model cannot be initialized on this dataset"
        )
    tiled = np.tile(stats, (config.chains, 1))
    rng = np.random.default_rng(config.seed)
    res = run_chain_batch(model, tiled, prior, config, rng, keep_draws=True)

    draws_u = res["draws"]
    rhat = split_rhat(draws_u)
    warnings = []
    bad = ~(rhat < RHAT_WARN)
    if np.any(bad & np.isfinite(rhat)) or np.any(np.isinf(rhat)):
        worst = float(np.nanmax(rhat))
        warnings.append(f"split-rhat up to {worst:.3f} exceeds {RHAT_WARN}; inspect mixing")

    flat_u = draws_u.reshape(-1, model.n_sampled)
    params = model.draws_to_natural(flat_u)
    return PosteriorDraws(
        names=tuple(model.draw_names),
        params=params,
        psi=flat_u[:, model.psi_u_index].copy(),
        accept_rate=float(res["accept_rate"].mean()),
        rhat=rhat,
        warnings=warnings,
    )


def tau(draws: PosteriorDraws, psi_null: float) -> float:
    """Posterior probability that the estimand exceeds its null value."""
    if draws.n_draws == 0:
        raise ConfigError("no draws")
    return float(np.mean(draws.psi > psi_null))


DEFAULT_QUANTILES = (0.025, 0.5, 0.975)
MIN_SUMMARY_DRAWS = 100


def posterior_summary(draws: PosteriorDraws, quantiles=DEFAULT_QUANTILES) -> dict:
    if draws.n_draws < MIN_SUMMARY_DRAWS:
        raise ConfigError(
            f"summary needs at least {MIN_SUMMARY_DRAWS} draws, have {draws.n_draws}"
        )
    qs = tuple(float(q) for q in quantiles)
    if any(not 0.0 < q < 1.0 for q in qs):
        raise ConfigError(f"quantiles must lie strictly inside (0, 1), got {list(qs)}")
    out = {"n_draws": draws.n_draws, "accept_rate": draws.accept_rate, "params": {}}
    for j, name in enumerate(draws.names):
        col = draws.params[:, j]
        out["params"][name] = {
            "mean": float(col.mean()),
            "sd": float(col.std(ddof=1)),
            "quantiles": {repr(q): float(np.quantile(col, q)) for q in qs},
            "rhat": float(draws.rhat[j]),
        }
    out["psi"] = {
        "mean": float(draws.psi.mean()),
        "sd": float(draws.psi.std(ddof=1)),
        "quantiles": {repr(q): float(np.quantile(draws.psi, q)) for q in qs},
    }
    if draws.warnings:
        out["warnings"] = list(draws.warnings)
    return out


def default_mcmc() -> McmcConfig:
    return McmcConfig()


def mcmc_from_json(obj: Optional[dict], base: Optional[McmcConfig] = None) -> McmcConfig:
    cfg = base if base is not None else McmcConfig()
    if obj is None:
        return cfg
    if not isinstance(obj, dict):
        raise ConfigError("mcmc settings must be an object")
    known = {"iterations", "burnin", "chains", "initial_step", "adapt_every", "seed"}
    extra = set(obj) - known
    if extra:
        raise ConfigError(f"unknown mcmc settings {sorted(extra)}")
    return replace(cfg, **obj)

"""Direct Monte Carlo evaluation of a design, no surrogate anywhere.

Each replicate simulates one maximal dataset, reuses its prefixes at
every analysis, and fits the analysis posterior per prefix. The decision
statistic is the posterior probability that the estimand clears its null
value, so this path exercises the full simulate-fit-decide loop and
serves as the reference the fast engine is checked against.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .models import ModelSpec, ParameterPoint
from .oc import IESS_NOTE, CostSpec, OcReport, TrialDesign
from .posterior import RHAT_WARN, McmcConfig, run_chain_batch
from .seeds import rng_for

MIN_NSIM = 100
MAX_FAIL_FRACTION = 0.10


@dataclass(frozen=True)
class OracleConfig:
    nsim: int = 400
    seed: int = 0
    mcmc: McmcConfig = McmcConfig()

    def __post_init__(self):
        if self.nsim < MIN_NSIM:
            raise ConfigError(f"need at least {MIN_NSIM} oracle replicates")


def _futility_levels(design: TrialDesign) -> np.ndarray:
    out = np.full(design.t_count, -np.inf)
    if design.futility is not None:
        for t, l in enumerate(design.futility):
            if l is not None:
                out[t] = l
    return out


def mc_gsd(
    design: TrialDesign,
    spec: ModelSpec,
    config: OracleConfig | None = None,
    theta=None,
    cost: CostSpec | None = None,
) -> OcReport:
    """Sequential operating characteristics by brute force.

    ``theta`` fixes the simulation truth; when omitted each replicate
    draws its own truth from the design prior, so the aggregate
    quantities are prior-integrated.
    """
    config = config if config is not None else OracleConfig()
    model = spec.model
    n_max = design.n[-1]
    t_count = design.t_count
    nsim = config.nsim

    fixed = None
    if theta is not None:
        if isinstance(theta, ParameterPoint):
            fixed = theta.values
        else:
            fixed = np.asarray(theta, dtype=float)
        model.validate_theta(fixed)

    stats = np.empty((nsim, t_count, model.suffstats_dim))
    psi_vec = np.empty(nsim)
    for r in range(nsim):
        rng = rng_for(config.seed, 0, r)
        if fixed is None:
            theta_r = spec.design_prior.sample_matrix(1, rng)[0]
        else:
            theta_r = fixed
        psi_vec[r] = theta_r[model.psi_index]
        data = model.simulate(theta_r, n_max, rng)
        stats[r] = model.suffstats_prefixes(data, design.n)

    tau = np.empty((nsim, t_count))
    warnings = []
    for t in range(t_count):
        res = run_chain_batch(
            model,
            stats[:, t, :],
            spec.analysis_prior,
            config.mcmc,
            rng_for(config.seed, 1, t),
            psi_null=design.psi_null,
        )
        tau[:, t] = res["tau"]
        bad_mix = int((res["rhat"] > RHAT_WARN).any(axis=1).sum())
        if bad_mix:
            warnings.append(
                f"analysis {t + 1}: split-half diagnostic above {RHAT_WARN} in "
                f"{bad_mix} of {nsim} replicate chains"
            )

    ok = np.all(np.isfinite(tau), axis=1)
    n_failed = int(nsim - ok.sum())
    if n_failed > MAX_FAIL_FRACTION * nsim:
        raise NumericalError(
            f"{n_failed} of {nsim} oracle replicates failed to produce a finite decision statistic"
        )
    if n_failed:
        warnings.append(f"dropped {n_failed} replicates with non-finite decision statistics")
        tau = tau[ok]
        psi_vec = psi_vec[ok]
    kept = tau.shape[0]

    u = np.asarray(design.efficacy)
    levels = _futility_levels(design)
    eff_at = np.full(kept, -1, dtype=np.int64)
    fut_at = np.full(kept, -1, dtype=np.int64)
    active = np.ones(kept, dtype=bool)
    for t in range(t_count):
        col = tau[:, t]
        eff_now = active & (col > u[t])
        fut_now = active & (col <= levels[t])
        eff_at[eff_now] = t
        fut_at[fut_now] = t
        active &= ~(eff_now | fut_now)

    stop_eff = np.array([(eff_at == t).mean() for t in range(t_count)])
    stop_fut = np.array([(fut_at == t).mean() for t in range(t_count)])
    end_at = stop_eff + stop_fut
    end_at[-1] += 1.0 - end_at.sum()
    cum_eff = np.cumsum(stop_eff)

    def binom_se(p):
        return np.sqrt(np.clip(p * (1.0 - p), 0.0, None) / kept)

    end_idx = np.where(eff_at >= 0, eff_at, np.where(fut_at >= 0, fut_at, t_count - 1))
    n_draw = design.n_array[end_idx]
    iess_val = float(n_draw.mean())
    se_iess = float(n_draw.std(ddof=1) / np.sqrt(kept)) if kept > 1 else 0.0

    iec_val = None
    iec_terms = None
    if cost is not None:
        succ = eff_at >= 0
        null_flags = psi_vec <= design.psi_null
        type1 = cost.type1 * float((null_flags & succ).mean())
        type2 = cost.type2 * float((~null_flags & ~succ).mean())
        size_term = cost.per_patient * iess_val
        iec_terms = {"type1": type1, "type2": type2, "sample_size": size_term}
        iec_val = type1 + type2 + size_term

    return OcReport(
        design=design,
        source="mc-oracle",
        n_theta=kept,
        draws_per_theta=1,
        stop_for_efficacy=stop_eff,
        se_stop_for_efficacy=binom_se(stop_eff),
        stop_for_futility=stop_fut,
        se_stop_for_futility=binom_se(stop_fut),
        cumulative_efficacy=cum_eff,
        se_cumulative_efficacy=binom_se(cum_eff),
        end_at=end_at,
        assurance=float(cum_eff[-1]),
        se_assurance=float(binom_se(cum_eff)[-1]),
        iess=iess_val,
        se_iess=se_iess,
        iec=iec_val,
        iec_terms=iec_terms,
        cost=cost,
        warnings=warnings,
        notes=[IESS_NOTE],
        provenance={
            "nsim": nsim,
            "kept": kept,
            "seed": config.seed,
            "mcmc_iterations": config.mcmc.iterations,
            "mcmc_burnin": config.mcmc.burnin,
            "theta": None if fixed is None else [float(v) for v in fixed],
        },
    )


def mc_power_fixed(
    n: int,
    u: float,
    spec: ModelSpec,
    config: OracleConfig | None = None,
    theta=None,
) -> OcReport:
    """Fixed-design rejection probability as the one-analysis special
    case of the sequential oracle, sharing its seed stream."""
    design = TrialDesign(n=(int(n),), efficacy=(float(u),), psi_null=spec.psi_null, name="fixed")
    return mc_gsd(design, spec, config=config, theta=theta)

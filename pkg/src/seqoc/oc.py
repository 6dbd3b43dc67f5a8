"""Operating characteristics under the normal-approximation layer.

The decision statistic at each analysis, mapped through the probit, is
asymptotically normal with mean proportional to the standardized effect
and a correlation structure across analyses fixed by the sample size
schedule. Everything here follows from that: closed-form fixed-design
power, Monte Carlo stopping probabilities for sequential designs via the
Cholesky factor, integration over a design prior, expected sample size
and expected cost, and uncertainty propagation by re-evaluating under
each retained state of the precision surrogate.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from .bart import BartPosterior, bart_predict
from .errors import ConfigError
from .models import ParameterPoint
from .seeds import rng_for

MIN_MVN_DRAWS = 1000
MIN_UNCERTAINTY_STATES = 50
IESS_NOTE = (
    "expected sample size counts every non-stopping path at the final analysis size; "
    "summaries computed under a different enrollment accounting will not match"
)


@dataclass(frozen=True)
class TrialDesign:
    """Analysis schedule with efficacy and optional futility thresholds.

    ``n`` holds cumulative sample sizes; ``efficacy`` the posterior
    probability thresholds; ``futility`` (length T-1, entries may be
    None) the lower posterior probability bounds that stop for futility
    at interim analyses. ``psi_null`` is the null value of the estimand.
    """

    n: tuple[int, ...]
    efficacy: tuple[float, ...]
    futility: Optional[tuple] = None
    psi_null: float = 0.0
    name: str = ""

    def __post_init__(self):
        errors = _design_errors(self.n, self.efficacy, self.futility)
        if errors:
            e = ConfigError("; ".join(f"{loc}: {msg}" for loc, msg in errors))
            e.field_errors = errors
            raise e
        object.__setattr__(self, "n", tuple(int(v) for v in self.n))
        object.__setattr__(self, "efficacy", tuple(float(v) for v in self.efficacy))
        if self.futility is not None:
            object.__setattr__(
                self,
                "futility",
                tuple(None if v is None else float(v) for v in self.futility),
            )

    @property
    def t_count(self) -> int:
        return len(self.n)

    @property
    def n_array(self) -> np.ndarray:
        return np.asarray(self.n, dtype=float)

    def efficacy_bounds(self) -> np.ndarray:
        return norm.ppf(np.asarray(self.efficacy))

    def futility_bounds(self) -> np.ndarray:
        """Probit-scale lower bounds, -inf where no futility rule applies."""
        out = np.full(self.t_count, -np.inf)
        if self.futility is not None:
            for t, l in enumerate(self.futility):
                if l is not None and l > 0:
                    out[t] = norm.ppf(l)
        return out

    def label(self) -> str:
        return self.name or "design"


def _design_errors(n, efficacy, futility) -> list:
    errors = []
    try:
        n_list = [int(v) for v in n]
    except (TypeError, ValueError):
        return [("n", "must be a list of integers")]
    if len(n_list) < 1:
        errors.append(("n", "needs at least one analysis"))
    if any(v <= 0 for v in n_list):
        errors.append(("n", "sample sizes must be positive"))
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        errors.append(("n", "schedule must be strictly increasing"))
    try:
        u_list = [float(v) for v in efficacy]
    except (TypeError, ValueError):
        return errors + [("efficacy", "must be a list of numbers")]
    if len(u_list) != len(n_list):
        errors.append(("efficacy", f"needs {len(n_list)} thresholds, got {len(u_list)}"))
    if any(not 0 < v < 1 for v in u_list):
        errors.append(("efficacy", "thresholds must lie strictly in (0, 1)"))
    if futility is not None:
        fut = list(futility)
        if len(fut) != max(len(n_list) - 1, 0):
            errors.append(
                ("futility", f"needs {max(len(n_list) - 1, 0)} entries (interim analyses), got {len(fut)}")
            )
        else:
            for t, l in enumerate(fut):
                if l is None:
                    continue
                try:
                    lv = float(l)
                except (TypeError, ValueError):
                    errors.append(("futility", f"entry {t + 1} is not a number"))
                    continue
                if not 0 <= lv < 1:
                    errors.append(("futility", f"entry {t + 1} must lie in [0, 1)"))
                elif t < len(u_list) and lv >= u_list[t]:
                    errors.append(
                        ("futility", f"entry {t + 1} must be below the efficacy threshold")
                    )
    return errors


def design_from_json(obj: dict, where: str = "design") -> TrialDesign:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(obj) - {"name", "n", "efficacy", "futility", "psi_null"}
    if unknown:
        raise ConfigError(f"{where}: unknown fields {sorted(unknown)}")
    try:
        return TrialDesign(
            n=tuple(obj.get("n", ())),
            efficacy=tuple(obj.get("efficacy", ())),
            futility=tuple(obj["futility"]) if obj.get("futility") is not None else None,
            psi_null=float(obj.get("psi_null", 0.0)),
            name=str(obj.get("name", "")),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def design_to_json(d: TrialDesign) -> dict:
    out = {"name": d.name, "n": list(d.n), "efficacy": list(d.efficacy), "psi_null": d.psi_null}
    if d.futility is not None:
        out["futility"] = list(d.futility)
    return out


def load_design(path) -> TrialDesign:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as e:
        raise ConfigError(f"{path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return design_from_json(obj, where=str(path))


@dataclass(frozen=True)
class MvnConfig:
    draws: int = 100_000
    seed: int = 0
    antithetic: bool = True

    def __post_init__(self):
        if self.draws < MIN_MVN_DRAWS:
            raise ConfigError(f"need at least {MIN_MVN_DRAWS} MVN draws")
        if self.antithetic and self.draws % 2:
            raise ConfigError("antithetic draws must come in pairs; use an even draw count")


@dataclass(frozen=True)
class CostSpec:
    """Loss weights: wrong efficacy conclusion under the null, missed
    efficacy under the alternative, and per enrolled patient."""

    type1: float = 1000.0
    type2: float = 10.0
    per_patient: float = 1.0

    def __post_init__(self):
        vals = (self.type1, self.type2, self.per_patient)
        if any(v < 0 for v in vals):
            raise ConfigError("costs must be nonnegative")
        if all(v == 0 for v in vals):
            raise ConfigError("at least one cost must be positive")


def cost_from_json(obj) -> Optional[CostSpec]:
    if obj is None:
        return None
    if not isinstance(obj, dict):
        raise ConfigError("cost: expected an object")
    unknown = set(obj) - {"type1", "type2", "per_patient"}
    if unknown:
        raise ConfigError(f"cost: unknown fields {sorted(unknown)}")
    return CostSpec(
        type1=float(obj.get("type1", 1000.0)),
        type2=float(obj.get("type2", 10.0)),
        per_patient=float(obj.get("per_patient", 1.0)),
    )


@dataclass(frozen=True)
class GsdJointDistribution:
    mean: np.ndarray
    corr: np.ndarray
    chol: np.ndarray


def power_fixed(psi, psi_null: float, n: int, u: float, lam) -> float:
    """Probability the posterior probability statistic clears u in a
    fixed design of size n.

    At psi == psi_null the z term vanishes and the value is returned as
    1 - u directly, which keeps null calibration exact instead of
    round-tripping through the normal quantile and survival function.
    """
    if not 0 < u < 1:
        raise ConfigError("u must lie strictly in (0, 1)")
    if n < 1:
        raise ConfigError("n must be >= 1")
    psi_arr = np.asarray(psi, dtype=float)
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(lam_arr <= 0):
        raise ConfigError("lambda must be positive")
    z = np.sqrt(float(n)) * (psi_arr - psi_null) / lam_arr
    out = np.where(z == 0.0, 1.0 - u, norm.sf(norm.ppf(u) - z))
    if np.ndim(psi) == 0 and np.ndim(lam) == 0:
        return float(out)
    return out


def gamma_joint(psi: float, psi_null: float, design: TrialDesign, lam: float) -> GsdJointDistribution:
    """Joint normal law of the probit decision statistics across analyses."""
    if lam <= 0:
        raise ConfigError("lambda must be positive")
    sqrt_n = np.sqrt(design.n_array)
    mean = (float(psi) - float(psi_null)) / float(lam) * sqrt_n
    corr = _schedule_corr(design.n_array)
    return GsdJointDistribution(mean=mean, corr=corr, chol=np.linalg.cholesky(corr))


def _schedule_corr(n: np.ndarray) -> np.ndarray:
    ratio = np.minimum.outer(n, n) / np.maximum.outer(n, n)
    return np.sqrt(ratio)


def _mvn_eps(mvn: MvnConfig, rows: int, t: int) -> np.ndarray:
    """Standard normal innovations, stream keyed by (seed, T) so that any
    two evaluations of same-shape designs under one seed share draws."""
    rng = rng_for(mvn.seed, t)
    if mvn.antithetic:
        half = (rows + 1) // 2
        e = rng.standard_normal((half, t))
        return np.concatenate([e, -e], axis=0)[:rows]
    return rng.standard_normal((rows, t))


def _apply_rules(gamma: np.ndarray, design: TrialDesign) -> tuple[np.ndarray, np.ndarray]:
    """Sequential decision per draw. Returns analysis indices of efficacy
    and futility stops (-1 where none)."""
    rows, t_count = gamma.shape
    b = design.efficacy_bounds()
    a = design.futility_bounds()
    eff_at = np.full(rows, -1, dtype=np.int64)
    fut_at = np.full(rows, -1, dtype=np.int64)
    active = np.ones(rows, dtype=bool)
    for t in range(t_count):
        g = gamma[:, t]
        eff_now = active & (g >= b[t])
        fut_now = active & (g <= a[t])
        eff_at[eff_now] = t
        fut_at[fut_now] = t
        active &= ~(eff_now | fut_now)
    return eff_at, fut_at


def _indicator_se(values: np.ndarray, n_theta: int, m_rep: int, antithetic: bool) -> float:
    """MC standard error of a mean over (theta, innovation) draws.
    Clusters by theta when integrating; uses antithetic pairs for a
    single theta."""
    rows = values.shape[0]
    if n_theta > 1:
        per_theta = values.reshape(n_theta, m_rep).mean(axis=1)
        return float(per_theta.std(ddof=1) / np.sqrt(n_theta))
    if antithetic and rows % 2 == 0:
        half = rows // 2
        pair = (values[:half] + values[half:]) / 2.0
        return float(pair.std(ddof=1) / np.sqrt(half))
    return float(values.std(ddof=1) / np.sqrt(rows))


@dataclass
class StopProbs:
    """Point-evaluation stopping probabilities for one (psi, lambda)."""

    design: TrialDesign
    stop_for_efficacy: np.ndarray
    stop_for_futility: np.ndarray
    cumulative_efficacy: np.ndarray
    end_at: np.ndarray
    se_stop_for_efficacy: np.ndarray
    se_stop_for_futility: np.ndarray
    se_cumulative_efficacy: np.ndarray
    draws: int


def stop_probs(design: TrialDesign, psi: float, lam: float, mvn: Optional[MvnConfig] = None) -> StopProbs:
    mvn = mvn if mvn is not None else MvnConfig()
    joint = gamma_joint(psi, design.psi_null, design, lam)
    t_count = design.t_count
    eps = _mvn_eps(mvn, mvn.draws, t_count)
    gamma = joint.mean[None, :] + eps @ joint.chol.T
    eff_at, fut_at = _apply_rules(gamma, design)

    stop_eff = np.empty(t_count)
    stop_fut = np.empty(t_count)
    se_eff = np.empty(t_count)
    se_fut = np.empty(t_count)
    se_cum = np.empty(t_count)
    for t in range(t_count):
        ind_e = (eff_at == t).astype(float)
        ind_f = (fut_at == t).astype(float)
        ind_c = ((eff_at >= 0) & (eff_at <= t)).astype(float)
        stop_eff[t] = ind_e.mean()
        stop_fut[t] = ind_f.mean()
        se_eff[t] = _indicator_se(ind_e, 1, mvn.draws, mvn.antithetic)
        se_fut[t] = _indicator_se(ind_f, 1, mvn.draws, mvn.antithetic)
        se_cum[t] = _indicator_se(ind_c, 1, mvn.draws, mvn.antithetic)
    cum_eff = np.cumsum(stop_eff)
    end_at = stop_eff + stop_fut
    end_at[-1] += 1.0 - end_at.sum()
    return StopProbs(
        design=design,
        stop_for_efficacy=stop_eff,
        stop_for_futility=stop_fut,
        cumulative_efficacy=cum_eff,
        end_at=end_at,
        se_stop_for_efficacy=se_eff,
        se_stop_for_futility=se_fut,
        se_cumulative_efficacy=se_cum,
        draws=mvn.draws,
    )


@dataclass
class OcReport:
    """Everything a design evaluation produces, from either engine."""

    design: TrialDesign
    source: str
    n_theta: int
    draws_per_theta: int
    stop_for_efficacy: np.ndarray
    se_stop_for_efficacy: np.ndarray
    stop_for_futility: np.ndarray
    se_stop_for_futility: np.ndarray
    cumulative_efficacy: np.ndarray
    se_cumulative_efficacy: np.ndarray
    end_at: np.ndarray
    assurance: float
    se_assurance: float
    iess: float
    se_iess: float
    iec: Optional[float] = None
    iec_terms: Optional[dict] = None
    cost: Optional[CostSpec] = None
    intervals: dict = field(default_factory=dict)
    extrapolation_fraction: float = 0.0
    warnings: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)


def _theta_matrix(theta, model) -> np.ndarray:
    if isinstance(theta, ParameterPoint):
        mat = theta.values[None, :]
    elif isinstance(theta, (list, tuple)) and theta and isinstance(theta[0], ParameterPoint):
        mat = np.stack([p.values for p in theta])
    else:
        mat = np.atleast_2d(np.asarray(theta, dtype=float))
    if mat.shape[0] < 1:
        raise ConfigError("need at least one parameter point")
    if mat.shape[1] != model.n_params:
        raise ConfigError(
            f"parameter points have {mat.shape[1]} components, model needs {model.n_params}"
        )
    return mat


def predict_log_lambda(
    predictor: BartPosterior, theta: np.ndarray, max_states: int = 100
) -> np.ndarray:
    """Per-state log lambda predictions at the parameter points, shaped
    (states, points)."""
    return bart_predict(predictor, theta, max_states=max_states)


def evaluate_design(
    design: TrialDesign,
    theta,
    model,
    predictor: BartPosterior,
    mvn: Optional[MvnConfig] = None,
    cost: Optional[CostSpec] = None,
    log_lam_states: Optional[np.ndarray] = None,
    uncertainty_states: int = 100,
    source: str = "surrogate",
) -> OcReport:
    """Stopping probabilities and integrated summaries at one or many
    parameter points, with surrogate-predicted precision.

    The plug-in evaluation uses the posterior mean of log lambda; the
    uncertainty intervals re-evaluate every quantity once per retained
    surrogate state against the same innovations.
    """
    mvn = mvn if mvn is not None else MvnConfig()
    theta_mat = _theta_matrix(theta, model)
    n_theta = theta_mat.shape[0]
    t_count = design.t_count
    psi_vec = model.psi_of_matrix(theta_mat)

    if log_lam_states is None:
        log_lam_states = predict_log_lambda(predictor, theta_mat, max_states=uncertainty_states)
    elif log_lam_states.shape[1] != n_theta:
        raise ConfigError("cached predictions do not match the parameter sample")
    lam_plug = np.exp(log_lam_states.mean(axis=0))

    warnings = []
    inside = _inside_training_box(predictor, theta_mat)
    extrap = float(1.0 - inside.mean())
    if extrap > 0:
        warnings.append(
            f"{int(round(extrap * n_theta))} of {n_theta} parameter points fall outside "
            "the surrogate's training box inflated by 20%; predictions there are extrapolations"
        )

    m_rep = max(1, mvn.draws // n_theta)
    rows = n_theta * m_rep
    eps = _mvn_eps(mvn, rows, t_count)
    corr = _schedule_corr(design.n_array)
    noise = eps @ np.linalg.cholesky(corr).T
    sqrt_n = np.sqrt(design.n_array)

    psi_null = design.psi_null
    alt_flags = np.repeat(psi_vec > psi_null, m_rep)
    null_flags = ~alt_flags
    n_end_values = design.n_array

    def quantities(lam_vec: np.ndarray) -> dict:
        z = ((psi_vec - psi_null) / lam_vec)[:, None] * sqrt_n[None, :]
        gamma = np.repeat(z, m_rep, axis=0)
        gamma += noise
        eff_at, fut_at = _apply_rules(gamma, design)
        stop_eff = np.array([(eff_at == t).mean() for t in range(t_count)])
        stop_fut = np.array([(fut_at == t).mean() for t in range(t_count)])
        end_at = stop_eff + stop_fut
        end_at[-1] += 1.0 - end_at.sum()
        cum_eff = np.cumsum(stop_eff)
        end_idx = np.where(eff_at >= 0, eff_at, np.where(fut_at >= 0, fut_at, t_count - 1))
        n_draw = n_end_values[end_idx]
        out = {
            "stop_eff": stop_eff,
            "stop_fut": stop_fut,
            "end_at": end_at,
            "cum_eff": cum_eff,
            "assurance": float(cum_eff[-1]),
            "iess": float(n_draw.mean()),
            "eff_at": eff_at,
            "fut_at": fut_at,
            "n_draw": n_draw,
        }
        if cost is not None:
            succ = eff_at >= 0
            type1 = cost.type1 * float((null_flags & succ).mean())
            type2 = cost.type2 * float((alt_flags & ~succ).mean())
            size_term = cost.per_patient * out["iess"]
            out["iec_terms"] = {"type1": type1, "type2": type2, "sample_size": size_term}
            out["iec"] = type1 + type2 + size_term
        return out

    main = quantities(lam_plug)

    se_eff = np.empty(t_count)
    se_fut = np.empty(t_count)
    se_cum = np.empty(t_count)
    eff_at = main["eff_at"]
    fut_at = main["fut_at"]
    for t in range(t_count):
        se_eff[t] = _indicator_se((eff_at == t).astype(float), n_theta, m_rep, mvn.antithetic)
        se_fut[t] = _indicator_se((fut_at == t).astype(float), n_theta, m_rep, mvn.antithetic)
        se_cum[t] = _indicator_se(
            ((eff_at >= 0) & (eff_at <= t)).astype(float), n_theta, m_rep, mvn.antithetic
        )
    se_iess = _indicator_se(main["n_draw"].astype(float), n_theta, m_rep, mvn.antithetic)

    intervals = {}
    n_states = log_lam_states.shape[0]
    if n_states >= MIN_UNCERTAINTY_STATES:
        per_state = {"cum_eff": [], "assurance": [], "iess": [], "iec": []}
        for s in range(n_states):
            q = quantities(np.exp(log_lam_states[s]))
            per_state["cum_eff"].append(q["cum_eff"])
            per_state["assurance"].append(q["assurance"])
            per_state["iess"].append(q["iess"])
            if cost is not None:
                per_state["iec"].append(q["iec"])
        cum_states = np.stack(per_state["cum_eff"])
        intervals["cumulative_efficacy"] = (
            np.quantile(cum_states, 0.025, axis=0),
            np.quantile(cum_states, 0.975, axis=0),
        )
        for key in ("assurance", "iess") + (("iec",) if cost is not None else ()):
            vals = np.asarray(per_state[key])
            intervals[key] = (float(np.quantile(vals, 0.025)), float(np.quantile(vals, 0.975)))
    else:
        warnings.append(
            f"surrogate has {n_states} retained states, fewer than {MIN_UNCERTAINTY_STATES}; "
            "uncertainty intervals omitted"
        )

    report = OcReport(
        design=design,
        source=source,
        n_theta=n_theta,
        draws_per_theta=m_rep,
        stop_for_efficacy=main["stop_eff"],
        se_stop_for_efficacy=se_eff,
        stop_for_futility=main["stop_fut"],
        se_stop_for_futility=se_fut,
        cumulative_efficacy=main["cum_eff"],
        se_cumulative_efficacy=se_cum,
        end_at=main["end_at"],
        assurance=main["assurance"],
        se_assurance=float(se_cum[-1]),
        iess=main["iess"],
        se_iess=se_iess,
        iec=main.get("iec"),
        iec_terms=main.get("iec_terms"),
        cost=cost,
        intervals=intervals,
        extrapolation_fraction=extrap,
        warnings=warnings,
        notes=[IESS_NOTE],
        provenance={
            "mvn_seed": mvn.seed,
            "mvn_draws": mvn.draws,
            "antithetic": mvn.antithetic,
            "uncertainty_states": int(n_states),
        },
    )
    return report


def _inside_training_box(predictor: BartPosterior, theta: np.ndarray) -> np.ndarray:
    width = predictor.train_upper - predictor.train_lower
    pad = 0.1 * width
    lo = predictor.train_lower - pad
    hi = predictor.train_upper + pad
    return np.all((theta >= lo) & (theta <= hi), axis=1)


def assurance(
    design: TrialDesign,
    prior_sample,
    model,
    predictor: BartPosterior,
    mvn: Optional[MvnConfig] = None,
    cost: Optional[CostSpec] = None,
) -> OcReport:
    """Design-prior average of the stopping probabilities."""
    return evaluate_design(design, prior_sample, model, predictor, mvn=mvn, cost=cost)


def iess(design: TrialDesign, end_at_probs: Sequence[float]) -> float:
    """Expected sample size from the per-analysis trial-ending
    probabilities; mass that reaches the end without stopping must
    already be included in the final entry."""
    p = np.asarray(end_at_probs, dtype=float)
    if p.shape != (design.t_count,):
        raise ConfigError(f"need {design.t_count} probabilities, got shape {p.shape}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
        raise ConfigError("trial-ending probabilities must be nonnegative and sum to 1")
    return float(p @ design.n_array)


def iec(
    design: TrialDesign,
    cost: CostSpec,
    prior_sample,
    model,
    predictor: BartPosterior,
    mvn: Optional[MvnConfig] = None,
) -> dict:
    """Integrated expected cost with its decomposition."""
    report = evaluate_design(design, prior_sample, model, predictor, mvn=mvn, cost=cost)
    return {"iec": report.iec, **report.iec_terms}


def integrated_power_curve(
    psi_grid: Sequence[float],
    design: TrialDesign,
    nuisance_sample,
    model,
    predictor: BartPosterior,
    mvn: Optional[MvnConfig] = None,
    uncertainty_states: int = 100,
) -> dict:
    """Cumulative efficacy by analysis as the estimand sweeps a grid,
    averaging the rest of the parameter vector over the design prior.
    Common innovations across grid values keep the curve smooth."""
    mvn = mvn if mvn is not None else MvnConfig()
    grid = np.asarray(list(psi_grid), dtype=float)
    if grid.size == 0:
        raise ConfigError("psi grid must be non-empty")
    if not np.all(np.isfinite(grid)):
        raise ConfigError("psi grid must be finite")
    theta_mat = _theta_matrix(nuisance_sample, model)
    n_theta = theta_mat.shape[0]
    t_count = design.t_count

    m_rep = max(1, mvn.draws // n_theta)
    rows = n_theta * m_rep
    eps = _mvn_eps(mvn, rows, t_count)
    noise = eps @ np.linalg.cholesky(_schedule_corr(design.n_array)).T
    sqrt_n = np.sqrt(design.n_array)
    psi_null = design.psi_null

    cum = np.empty((grid.size, t_count))
    se = np.empty((grid.size, t_count))
    lo = np.full((grid.size, t_count), np.nan)
    hi = np.full((grid.size, t_count), np.nan)
    for gi, g in enumerate(grid):
        theta_g = theta_mat.copy()
        theta_g[:, model.psi_index] = g
        log_lam = predict_log_lambda(predictor, theta_g, max_states=uncertainty_states)
        lam_plug = np.exp(log_lam.mean(axis=0))

        def cum_for(lam_vec: np.ndarray) -> np.ndarray:
            z = ((g - psi_null) / lam_vec)[:, None] * sqrt_n[None, :]
            gamma = np.repeat(z, m_rep, axis=0)
            gamma += noise
            eff_at, _ = _apply_rules(gamma, design)
            stop_eff = np.array([(eff_at == t).mean() for t in range(t_count)])
            return np.cumsum(stop_eff), eff_at

        cum[gi], eff_at = cum_for(lam_plug)
        for t in range(t_count):
            se[gi, t] = _indicator_se(
                ((eff_at >= 0) & (eff_at <= t)).astype(float), n_theta, m_rep, mvn.antithetic
            )
        n_states = log_lam.shape[0]
        if n_states >= MIN_UNCERTAINTY_STATES:
            states = np.stack([cum_for(np.exp(log_lam[s]))[0] for s in range(n_states)])
            lo[gi] = np.quantile(states, 0.025, axis=0)
            hi[gi] = np.quantile(states, 0.975, axis=0)
    return {
        "psi": grid,
        "n": design.n_array,
        "cumulative_efficacy": cum,
        "mc_se": se,
        "lo95": lo,
        "hi95": hi,
        "design": design,
        "n_theta": n_theta,
        "draws_per_theta": m_rep,
    }


def power_uncertainty(fn, predictor: BartPosterior, theta: np.ndarray, max_states: int = 100) -> dict:
    """Re-evaluate an operating characteristic once per surrogate state.

    ``fn`` maps a lambda vector (one value per parameter point) to a
    scalar or array; returns the across-state mean and central 95%
    interval alongside the per-state values.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    log_lam = predict_log_lambda(predictor, theta, max_states=max_states)
    if log_lam.shape[0] < MIN_UNCERTAINTY_STATES:
        raise ConfigError(
            f"need at least {MIN_UNCERTAINTY_STATES} surrogate states, have {log_lam.shape[0]}"
        )
    values = np.stack([np.asarray(fn(np.exp(log_lam[s])), dtype=float) for s in range(log_lam.shape[0])])
    return {
        "mean": values.mean(axis=0),
        "lower": np.quantile(values, 0.025, axis=0),
        "upper": np.quantile(values, 0.975, axis=0),
        "values": values,
    }


OBJECTIVES = ("min-iec", "min-iess")


@dataclass
class RankedDesign:
    rank: int
    design: TrialDesign
    score: float
    feasible: bool
    report: OcReport


def optimize_design(
    candidates: Sequence[TrialDesign],
    objective: str,
    prior_sample,
    model,
    predictor: BartPosterior,
    cost: Optional[CostSpec] = None,
    mvn: Optional[MvnConfig] = None,
    target: Optional[float] = None,
) -> dict:
    """Exhaustive candidate evaluation under common innovations.

    ``min-iec`` ranks by integrated expected cost; ``min-iess`` ranks by
    expected sample size among candidates whose final cumulative
    efficacy meets ``target``. Ties break toward the smaller final
    sample size, then fewer analyses.
    """
    if not candidates:
        raise ConfigError("candidate list must be non-empty")
    if objective not in OBJECTIVES:
        raise ConfigError(f"objective must be one of {OBJECTIVES}")
    if objective == "min-iec" and cost is None:
        raise ConfigError("min-iec needs a cost specification")
    if objective == "min-iess":
        if target is None or not 0 < target < 1:
            raise ConfigError("min-iess needs a target assurance in (0, 1)")
    mvn = mvn if mvn is not None else MvnConfig()

    rows = []
    for d in candidates:
        report = evaluate_design(d, prior_sample, model, predictor, mvn=mvn, cost=cost)
        feasible = True
        if objective == "min-iess":
            feasible = report.assurance >= target
        score = report.iec if objective == "min-iec" else report.iess
        rows.append((d, report, float(score), feasible))

    feasible_rows = [r for r in rows if r[3]]
    feasible_rows.sort(key=lambda r: (r[2], r[0].n[-1], r[0].t_count))
    ranked = [
        RankedDesign(rank=i + 1, design=d, score=s, feasible=True, report=rep)
        for i, (d, rep, s, _) in enumerate(feasible_rows)
    ]
    diagnostic = ""
    if not ranked:
        diagnostic = (
            f"no candidate reached the target assurance {target}; best final cumulative "
            f"efficacy was {max(r[1].assurance for r in rows):.3f}"
        )
    infeasible = [
        RankedDesign(rank=0, design=d, score=s, feasible=False, report=rep)
        for d, rep, s, ok in rows
        if not ok
    ]
    return {"ranking": ranked, "infeasible": infeasible, "objective": objective, "diagnostic": diagnostic}


def report_to_json(report: OcReport) -> dict:
    t_count = report.design.t_count
    analyses = []
    iv_cum = report.intervals.get("cumulative_efficacy")
    for t in range(t_count):
        row = {
            "analysis": t + 1,
            "n": report.design.n[t],
            "stop_for_efficacy": float(report.stop_for_efficacy[t]),
            "se_stop_for_efficacy": float(report.se_stop_for_efficacy[t]),
            "stop_for_futility": float(report.stop_for_futility[t]),
            "se_stop_for_futility": float(report.se_stop_for_futility[t]),
            "cumulative_efficacy": float(report.cumulative_efficacy[t]),
            "se_cumulative_efficacy": float(report.se_cumulative_efficacy[t]),
            "end_at": float(report.end_at[t]),
        }
        if iv_cum is not None:
            row["lo95_cumulative_efficacy"] = float(iv_cum[0][t])
            row["hi95_cumulative_efficacy"] = float(iv_cum[1][t])
        analyses.append(row)
    out = {
        "format": "seqoc-report",
        "version": 1,
        "source": report.source,
        "design": design_to_json(report.design),
        "n_theta": report.n_theta,
        "draws_per_theta": report.draws_per_theta,
        "analyses": analyses,
        "assurance": report.assurance,
        "se_assurance": report.se_assurance,
        "iess": report.iess,
        "se_iess": report.se_iess,
        "extrapolation_fraction": report.extrapolation_fraction,
        "warnings": list(report.warnings),
        "notes": list(report.notes),
        "provenance": dict(report.provenance),
    }
    for key in ("assurance", "iess", "iec"):
        iv = report.intervals.get(key)
        if iv is not None:
            out[f"lo95_{key}"] = iv[0]
            out[f"hi95_{key}"] = iv[1]
    if report.cost is not None:
        out["cost"] = {
            "type1": report.cost.type1,
            "type2": report.cost.type2,
            "per_patient": report.cost.per_patient,
        }
    if report.iec is not None:
        out["iec"] = report.iec
        out["iec_terms"] = dict(report.iec_terms)
    return out


def report_from_json(obj: dict) -> OcReport:
    if not isinstance(obj, dict) or obj.get("format") != "seqoc-report":
        raise ConfigError("not a saved report")
    design = design_from_json(obj["design"])
    analyses = obj["analyses"]

    def col(name):
        return np.array([a[name] for a in analyses], dtype=float)

    intervals = {}
    if analyses and "lo95_cumulative_efficacy" in analyses[0]:
        intervals["cumulative_efficacy"] = (col("lo95_cumulative_efficacy"), col("hi95_cumulative_efficacy"))
    for key in ("assurance", "iess", "iec"):
        if f"lo95_{key}" in obj:
            intervals[key] = (obj[f"lo95_{key}"], obj[f"hi95_{key}"])
    cost = cost_from_json(obj.get("cost"))
    return OcReport(
        design=design,
        source=obj.get("source", "surrogate"),
        n_theta=int(obj["n_theta"]),
        draws_per_theta=int(obj["draws_per_theta"]),
        stop_for_efficacy=col("stop_for_efficacy"),
        se_stop_for_efficacy=col("se_stop_for_efficacy"),
        stop_for_futility=col("stop_for_futility"),
        se_stop_for_futility=col("se_stop_for_futility"),
        cumulative_efficacy=col("cumulative_efficacy"),
        se_cumulative_efficacy=col("se_cumulative_efficacy"),
        end_at=col("end_at"),
        assurance=float(obj["assurance"]),
        se_assurance=float(obj["se_assurance"]),
        iess=float(obj["iess"]),
        se_iess=float(obj["se_iess"]),
        iec=obj.get("iec"),
        iec_terms=obj.get("iec_terms"),
        cost=cost,
        intervals=intervals,
        extrapolation_fraction=float(obj.get("extrapolation_fraction", 0.0)),
        warnings=list(obj.get("warnings", [])),
        notes=list(obj.get("notes", [])),
        provenance=dict(obj.get("provenance", {})),
    )


def save_report(report: OcReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report_to_json(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


REPORT_CSV_HEADER = ["design", "source", "analysis", "n", "quantity", "value", "mc_se", "lo95", "hi95"]


def report_csv_rows(report: OcReport) -> list:
    """Tidy rows, one per analysis per quantity, then scalar rows with a
    blank analysis column."""
    label = report.design.label()
    iv_cum = report.intervals.get("cumulative_efficacy")
    rows = []

    def fmt(v):
        return "" if v is None else repr(float(v))

    per_analysis = [
        ("stop_for_efficacy", report.stop_for_efficacy, report.se_stop_for_efficacy, None),
        ("stop_for_futility", report.stop_for_futility, report.se_stop_for_futility, None),
        ("cumulative_efficacy", report.cumulative_efficacy, report.se_cumulative_efficacy, iv_cum),
        ("end_at", report.end_at, None, None),
    ]
    for name, values, ses, iv in per_analysis:
        for t in range(report.design.t_count):
            rows.append(
                [
                    label,
                    report.source,
                    str(t + 1),
                    str(report.design.n[t]),
                    name,
                    fmt(values[t]),
                    fmt(ses[t]) if ses is not None else "",
                    fmt(iv[0][t]) if iv is not None else "",
                    fmt(iv[1][t]) if iv is not None else "",
                ]
            )
    scalars = [
        ("assurance", report.assurance, report.se_assurance),
        ("iess", report.iess, report.se_iess),
    ]
    if report.iec is not None:
        scalars.append(("iec", report.iec, None))
        for part in ("type1", "type2", "sample_size"):
            scalars.append((f"iec_{part}", report.iec_terms[part], None))
    for name, value, se_v in scalars:
        iv = report.intervals.get(name)
        rows.append(
            [
                label,
                report.source,
                "",
                "",
                name,
                fmt(value),
                fmt(se_v) if se_v is not None else "",
                fmt(iv[0]) if iv is not None else "",
                fmt(iv[1]) if iv is not None else "",
            ]
        )
    return rows


def report_to_csv(report: OcReport, path) -> None:
    import csv as _csv

    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(REPORT_CSV_HEADER)
        w.writerows(report_csv_rows(report))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqoc.errors import ConfigError
from seqoc.models import (
    Dataset,
    DesignPrior,
    LogisticSubgroupModel,
    Marginal,
    ParameterPoint,
    PiecewiseExpSurvivalModel,
    load_model_spec,
    log_likelihood,
    model_spec_from_json,
    model_spec_to_json,
    prior_sample_matrix,
    psi,
    sample_design_prior,
    simulate_dataset,
)

from conftest import CONFIG_DIR
from oracles import (
    LOG_HALF,
    LOG_RR_13,
    SURV_LL_CENSORED_7,
    SURV_LL_EVENT_10,
    SURVIVOR_DAY_28,
    logistic_fisher_lambda,
)

LOGISTIC = LogisticSubgroupModel()
SURVIVAL = PiecewiseExpSurvivalModel()

# interval hazards at their prior medians; S(28) = exp(-7 * sum) = exp(-1.47)
HAZARDS = (0.055, 0.095, 0.040, 0.020)


def surv_theta(h=HAZARDS, beta=0.0, kappa=0.0):
    return np.array([*h, beta, kappa])


class TestPsi:
    def test_logistic_is_treatment_coefficient(self):
        assert psi(LOGISTIC, np.array([0.0, 0.0, 0.3, 0.0])) == 0.3

    def test_survival_is_log_rate_ratio(self):
        theta = surv_theta(beta=np.log(1.3))
        assert psi(SURVIVAL, theta) == pytest.approx(LOG_RR_13, abs=1e-12)

    def test_survival_null_is_zero(self):
        assert psi(SURVIVAL, surv_theta(beta=0.0)) == 0.0

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            psi(LOGISTIC, np.array([0.0, 0.0, 0.3]))
        with pytest.raises(ConfigError):
            psi(SURVIVAL, np.zeros(4))

    def test_accepts_parameter_points(self):
        point = LOGISTIC.point([0.1, -0.2, 0.25, 0.0])
        assert psi(LOGISTIC, point) == 0.25


class TestSimulate:
    def test_null_logistic_response_rate(self):
        data = simulate_dataset(LOGISTIC, np.zeros(4), 100_000, 11)
        assert abs(data.columns["response"].mean() - 0.5) < 0.005

    def test_survival_unresolved_fraction_at_28(self):
        data = simulate_dataset(SURVIVAL, surv_theta(), 100_000, 12)
        unresolved = (data.columns["event"] == 0).mean()
        assert abs(unresolved - SURVIVOR_DAY_28) < 0.005

    def test_no_dropout_means_no_early_censoring(self):
        data = simulate_dataset(SURVIVAL, surv_theta(kappa=0.0), 5000, 13)
        early_censored = (data.columns["event"] == 0) & (data.columns["time"] < 28)
        assert not early_censored.any()

    def test_small_n_rejected(self):
        with pytest.raises(ConfigError):
            simulate_dataset(LOGISTIC, np.zeros(4), 1, 0)
        with pytest.raises(ConfigError):
            simulate_dataset(SURVIVAL, surv_theta(), 0, 0)

    def test_reproducible_given_seed(self):
        for model, theta in ((LOGISTIC, np.zeros(4)), (SURVIVAL, surv_theta(kappa=0.03))):
            a = simulate_dataset(model, theta, 500, 99)
            b = simulate_dataset(model, theta, 500, 99)
            assert a.columns.keys() == b.columns.keys()
            for name in a.columns:
                assert np.array_equal(a.columns[name], b.columns[name])

    @given(n=st.integers(2, 400), seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_arms_balanced(self, n, seed):
        data = simulate_dataset(LOGISTIC, np.zeros(4), n, seed)
        arm = data.columns["arm"]
        assert abs(int(arm.sum()) - (n - int(arm.sum()))) <= 1

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_survival_censoring_only_on_visit_days(self, seed):
        data = simulate_dataset(SURVIVAL, surv_theta(kappa=0.05), 300, seed)
        time, event = data.columns["time"], data.columns["event"]
        censored_times = time[event == 0]
        assert np.isin(censored_times, (0.0, 7.0, 14.0, 21.0, 28.0)).all()
        assert (time[event == 1] < 28.0).all()
        assert (time >= 0).all()

    def test_survivor_function_matches_closed_form(self):
        n = 100_000
        data = simulate_dataset(SURVIVAL, surv_theta(), n, 14)
        time, event = data.columns["time"], data.columns["event"]
        # with kappa=0 everyone is followed to resolution or day 28, so the
        # empirical survivor function is exact up to binomial noise
        cum = 0.0
        for day, h in zip((7, 14, 21, 28), HAZARDS):
            cum += 7.0 * h
            s_true = np.exp(-cum)
            alive = ((event == 0) | (time > day)).mean()
            se = np.sqrt(s_true * (1 - s_true) / n)
            assert abs(alive - s_true) < 3 * se, f"day {day}"


class TestDesignPrior:
    def test_section3_treatment_mean(self):
        spec = load_model_spec(CONFIG_DIR / "model_logistic.json")
        points = sample_design_prior(spec.design_prior, 100_000, 7)
        trt = np.array([p["treatment"] for p in points])
        assert abs(trt.mean() - 0.3) < 0.002

    def test_survival_dropout_support(self):
        spec = load_model_spec(CONFIG_DIR / "model_survival.json")
        mat = spec.design_prior.sample_matrix(5000, np.random.default_rng(8))
        kappa = mat[:, list(spec.design_prior.names).index("dropout")]
        assert kappa.min() >= 0.01 and kappa.max() <= 0.05

    def test_degenerate_prior_collapses_to_mean(self):
        prior = DesignPrior((Marginal("effect", "normal", (0.3, 1e-12)),))
        mat = prior.sample_matrix(1000, np.random.default_rng(0))
        assert np.allclose(mat, 0.3, atol=1e-9)

    def test_deterministic_given_seed(self):
        spec = load_model_spec(CONFIG_DIR / "model_survival.json")
        a = prior_sample_matrix(spec, 50, 123)
        b = prior_sample_matrix(spec, 50, 123)
        assert np.array_equal(a, b)

    def test_moments_match_declared_marginals(self):
        spec = load_model_spec(CONFIG_DIR / "model_logistic.json")
        k = 200_000
        mat = spec.design_prior.sample_matrix(k, np.random.default_rng(5))
        wants = {"intercept": (0.0, 0.6), "subgroup": (0.0, 0.075),
                 "treatment": (0.3, 0.15), "interaction": (0.0, 0.05)}
        for j, name in enumerate(spec.design_prior.names):
            mean, sd = wants[name]
            se = sd / np.sqrt(k)
            assert abs(mat[:, j].mean() - mean) < 4 * se, name

    def test_invalid_marginals_rejected(self):
        obj = model_spec_to_json(load_model_spec(CONFIG_DIR / "model_logistic.json"))
        bad_sd = {**obj, "design_prior": [dict(m) for m in obj["design_prior"]]}
        bad_sd["design_prior"][0]["sd"] = -1.0
        with pytest.raises(ConfigError):
            model_spec_from_json(bad_sd)
        obj_s = model_spec_to_json(load_model_spec(CONFIG_DIR / "model_survival.json"))
        bad_u = {**obj_s, "design_prior": [dict(m) for m in obj_s["design_prior"]]}
        bad_u["design_prior"][-1] = {"name": "dropout", "dist": "uniform", "low": 0.05, "high": 0.01}
        with pytest.raises(ConfigError):
            model_spec_from_json(bad_u)


class TestLogLikelihood:
    def test_survival_censored_week_one(self):
        data = Dataset(
            "piecewise-exp-survival",
            {"time": np.array([7.0]), "event": np.zeros(1, np.int8), "arm": np.zeros(1, np.int8)},
        )
        theta = surv_theta(h=(0.1, 0.2, 0.3, 0.4))
        assert log_likelihood(SURVIVAL, theta, data) == pytest.approx(SURV_LL_CENSORED_7, abs=1e-9)

    def test_logistic_single_success_at_null(self):
        data = Dataset(
            "logistic-subgroup",
            {
                "response": np.ones(1, np.int8),
                "subgroup": np.zeros(1, np.int8),
                "arm": np.zeros(1, np.int8),
            },
        )
        assert log_likelihood(LOGISTIC, np.zeros(4), data) == pytest.approx(LOG_HALF, abs=1e-9)

    def test_survival_event_in_week_two(self):
        data = Dataset(
            "piecewise-exp-survival",
            {"time": np.array([10.0]), "event": np.ones(1, np.int8), "arm": np.ones(1, np.int8)},
        )
        theta = surv_theta(h=(0.1, 0.2, 0.05, 0.05), beta=0.0)
        assert log_likelihood(SURVIVAL, theta, data) == pytest.approx(SURV_LL_EVENT_10, abs=1e-6)

    def test_nonpositive_hazard_rejected(self):
        data = simulate_dataset(SURVIVAL, surv_theta(), 10, 0)
        with pytest.raises(ConfigError):
            log_likelihood(SURVIVAL, surv_theta(h=(0.0, 0.1, 0.1, 0.1)), data)

    def test_mle_near_truth_for_large_n(self):
        # grid refinement over the treatment coefficient only, profile at truth
        theta_star = np.array([0.0, 0.0, 0.3, 0.0])
        n = 10_000
        data = simulate_dataset(LOGISTIC, theta_star, n, 21)
        lam = logistic_fisher_lambda(theta_star)

        def ll(t):
            return log_likelihood(LOGISTIC, np.array([0.0, 0.0, t, 0.0]), data)

        lo, hi = -1.0, 1.5
        for _ in range(5):
            grid = np.linspace(lo, hi, 41)
            vals = [ll(t) for t in grid]
            j = int(np.argmax(vals))
            lo, hi = grid[max(0, j - 1)], grid[min(len(grid) - 1, j + 1)]
        mle = 0.5 * (lo + hi)
        assert abs(mle - 0.3) < 5 * lam / np.sqrt(n)


class TestSerialization:
    def test_dataset_csv_round_trip(self, tmp_path):
        for model, theta in ((LOGISTIC, np.zeros(4)), (SURVIVAL, surv_theta(kappa=0.04))):
            data = simulate_dataset(model, theta, 200, 3)
            path = tmp_path / f"{model.family}.csv"
            data.to_csv(path)
            back = Dataset.from_csv(path)
            assert back.family == data.family
            for name in data.columns:
                assert np.array_equal(back.columns[name], data.columns[name])

    def test_model_spec_json_round_trip(self):
        for name in ("model_logistic.json", "model_survival.json"):
            spec = load_model_spec(CONFIG_DIR / name)
            again = model_spec_from_json(model_spec_to_json(spec))
            assert again.model.family == spec.model.family
            assert again.psi_null == spec.psi_null
            for a, b in zip(again.design_prior.marginals, spec.design_prior.marginals):
                assert (a.name, a.dist, a.params) == (b.name, b.dist, b.params)
            assert np.array_equal(again.analysis_prior.means, spec.analysis_prior.means)
            assert np.array_equal(again.analysis_prior.sds, spec.analysis_prior.sds)

    def test_unknown_family_rejected(self):
        with pytest.raises(ConfigError):
            model_spec_from_json({"family": "weibull", "design_prior": []})

    def test_prior_names_must_match_model(self):
        obj = model_spec_to_json(load_model_spec(CONFIG_DIR / "model_logistic.json"))
        obj["design_prior"][0]["name"] = "offset"
        with pytest.raises(ConfigError):
            model_spec_from_json(obj)


class TestParameterPoint:
    def test_lookup_by_name(self):
        p = ParameterPoint(("a", "b"), np.array([1.0, 2.0]))
        assert p["b"] == 2.0
        with pytest.raises(KeyError):
            p["c"]

    def test_length_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            ParameterPoint(("a",), np.array([1.0, 2.0]))

    def test_non_finite_rejected(self):
        with pytest.raises(ConfigError):
            ParameterPoint(("a",), np.array([np.nan]))

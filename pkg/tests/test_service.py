"""HTTP service: session lifecycle, request validation, and exact
agreement with the command line pipeline under shared seeds."""
import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from conftest import CONFIG_DIR, RUNS_DIR, build_if_missing
from seqoc.service import DEFAULT_PRIOR_POINTS, build_app

COST = {"type1": 1000.0, "type2": 10.0, "per_patient": 1.0}


def load_json(path):
    return json.loads(path.read_text())


@pytest.fixture(scope="module")
def client():
    return TestClient(build_app())


@pytest.fixture(scope="module")
def model_obj():
    return load_json(CONFIG_DIR / "model_survival.json")


@pytest.fixture(scope="module")
def surrogate_obj(surrogate_survival_path):
    return load_json(surrogate_survival_path)


@pytest.fixture(scope="module")
def session_payload(model_obj, surrogate_obj):
    # mirrors the shipped evaluate config so responses can be compared
    # against the files the command line writes
    return {
        "model": model_obj,
        "surrogate": surrogate_obj,
        "seed": 41,
        "prior_points": 2000,
        "mvn": {"draws": 100000, "seed": 40, "antithetic": True},
    }


@pytest.fixture(scope="module")
def session(client, session_payload):
    resp = client.post("/sessions", json=session_payload)
    assert resp.status_code == 201
    return resp.json()


@pytest.fixture(scope="module")
def d1_obj():
    return load_json(CONFIG_DIR / "design_d1.json")


@pytest.fixture(scope="module")
def d2_obj():
    return load_json(CONFIG_DIR / "design_d2.json")


@pytest.fixture(scope="module")
def report_d1(surrogate_survival_path):
    out = build_if_missing(RUNS_DIR / "report_d1.json", "evaluate", "evaluate_d1.json")
    return load_json(out)


class TestHealth:
    def test_healthz(self, client):
        resp = client.get("/healthz")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert isinstance(body["sessions"], int)


class TestSessionLifecycle:
    def test_create_returns_summary(self, session):
        assert session["id"].startswith("s-")
        assert session["family"] == "piecewise-exp-survival"
        assert session["prior_points"] == 2000
        assert session["seed"] == 41
        assert session["mvn"] == {"draws": 100000, "seed": 40, "antithetic": True}
        assert session["uncertainty_states"] == 100
        assert len(session["training_box"]["lower"]) == len(session["param_names"])

    def test_summary_can_be_fetched_again(self, client, session):
        resp = client.get(f"/sessions/{session['id']}")
        assert resp.status_code == 200
        assert resp.json() == session

    def test_missing_surrogate_is_400(self, client, model_obj):
        resp = client.post("/sessions", json={"model": model_obj})
        assert resp.status_code == 400
        assert "surrogate" in resp.json()["detail"]

    def test_missing_model_is_400(self, client, surrogate_obj):
        resp = client.post("/sessions", json={"surrogate": surrogate_obj})
        assert resp.status_code == 400
        assert "model" in resp.json()["detail"]

    def test_garbage_surrogate_is_400(self, client, model_obj):
        resp = client.post("/sessions", json={"model": model_obj, "surrogate": {"bogus": 1}})
        assert resp.status_code == 400
        assert "ensemble" in resp.json()["detail"]

    def test_mismatched_surrogate_is_400(self, client, surrogate_obj):
        logistic = load_json(CONFIG_DIR / "model_logistic.json")
        resp = client.post("/sessions", json={"model": logistic, "surrogate": surrogate_obj})
        assert resp.status_code == 400
        assert "do not match" in resp.json()["detail"]

    def test_repeated_create_gives_fresh_sessions(self, client, session_payload, session):
        resp = client.post("/sessions", json=session_payload)
        assert resp.status_code == 201
        other = resp.json()
        assert other["id"] != session["id"]
        a, b = dict(session), dict(other)
        a.pop("id"), b.pop("id")
        assert a == b

    def test_unknown_session_is_404(self, client, d1_obj):
        resp = client.post("/sessions/s-9999/evaluate", json={"design": d1_obj})
        assert resp.status_code == 404

    def test_excessive_prior_points_is_400(self, client, model_obj, surrogate_obj):
        resp = client.post(
            "/sessions",
            json={"model": model_obj, "surrogate": surrogate_obj, "prior_points": 10**7},
        )
        assert resp.status_code == 400


class TestEvaluate:
    def test_matches_the_command_line_report(self, client, session, d1_obj, report_d1):
        resp = client.post(
            f"/sessions/{session['id']}/evaluate", json={"design": d1_obj, "cost": COST}
        )
        assert resp.status_code == 200
        assert resp.json() == report_d1

    def test_identical_requests_identical_responses(self, client, session, d1_obj):
        payload = {"design": d1_obj, "cost": COST}
        first = client.post(f"/sessions/{session['id']}/evaluate", json=payload)
        second = client.post(f"/sessions/{session['id']}/evaluate", json=payload)
        assert first.content == second.content

    def test_survives_a_service_restart(self, session_payload, d1_obj, report_d1):
        # a fresh process with the same refs and seeds reproduces the numbers
        fresh = TestClient(build_app())
        created = fresh.post("/sessions", json=session_payload)
        assert created.status_code == 201
        resp = fresh.post(
            f"/sessions/{created.json()['id']}/evaluate", json={"design": d1_obj, "cost": COST}
        )
        assert resp.json() == report_d1

    def test_more_looks_cost_less_here(self, client, session, d1_obj, d2_obj):
        sid = session["id"]
        r1 = client.post(f"/sessions/{sid}/evaluate", json={"design": d1_obj, "cost": COST}).json()
        r2 = client.post(f"/sessions/{sid}/evaluate", json={"design": d2_obj, "cost": COST}).json()
        assert r2["iec"] < r1["iec"]

    def test_missing_design_is_422(self, client, session):
        resp = client.post(f"/sessions/{session['id']}/evaluate", json={})
        assert resp.status_code == 422
        assert resp.json()["detail"][0]["loc"] == ["design"]

    def test_decreasing_schedule_is_422_with_field_errors(self, client, session):
        bad = {"n": [500, 300], "efficacy": [0.99, 0.975]}
        resp = client.post(f"/sessions/{session['id']}/evaluate", json={"design": bad})
        assert resp.status_code == 422
        detail = resp.json()["detail"]
        assert isinstance(detail, list)
        locs = {tuple(e["loc"]) for e in detail}
        assert ("design", "n") in locs
        assert all(e["msg"] for e in detail)

    def test_out_of_range_threshold_is_422(self, client, session):
        bad = {"n": [300], "efficacy": [1.5]}
        resp = client.post(f"/sessions/{session['id']}/evaluate", json={"design": bad})
        assert resp.status_code == 422
        locs = {tuple(e["loc"]) for e in resp.json()["detail"]}
        assert ("design", "efficacy") in locs

    def test_bad_cost_is_422(self, client, session, d1_obj):
        resp = client.post(
            f"/sessions/{session['id']}/evaluate",
            json={"design": d1_obj, "cost": {"type1": -5.0}},
        )
        assert resp.status_code == 422
        assert resp.json()["detail"][0]["loc"] == ["cost"]

    def test_five_analysis_latency(self, client, model_obj, surrogate_obj):
        created = client.post(
            "/sessions",
            json={"model": model_obj, "surrogate": surrogate_obj, "prior_points": DEFAULT_PRIOR_POINTS},
        )
        assert created.status_code == 201
        design = {
            "n": [150, 300, 450, 600, 750],
            "efficacy": [0.99, 0.99, 0.98, 0.98, 0.975],
            "name": "five-look",
        }
        start = time.monotonic()
        resp = client.post(f"/sessions/{created.json()['id']}/evaluate", json={"design": design})
        elapsed = time.monotonic() - start
        assert resp.status_code == 200
        assert elapsed < 2.0
        assert len(resp.json()["analyses"]) == 5


class TestCurve:
    def test_three_point_grid(self, client, session, d1_obj):
        resp = client.post(
            f"/sessions/{session['id']}/curve",
            json={"design": d1_obj, "grid": [0.0, 0.15, 0.3]},
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["psi"] == [0.0, 0.15, 0.3]
        cum = np.asarray(body["cumulative_efficacy"])
        assert cum.shape == (3, 3)
        for row in cum:
            assert all(b >= a for a, b in zip(row, row[1:]))

    def test_monotone_in_the_estimand_up_to_noise(self, client, session, d1_obj):
        resp = client.post(
            f"/sessions/{session['id']}/curve",
            json={"design": d1_obj, "grid": [0.0, 0.15, 0.3]},
        )
        body = resp.json()
        cum = np.asarray(body["cumulative_efficacy"])[:, -1]
        se = np.asarray(body["mc_se"])[:, -1]
        for i in range(len(cum) - 1):
            assert cum[i + 1] >= cum[i] - 3 * (se[i] + se[i + 1])

    def test_prior_points_subset(self, client, session, d1_obj):
        resp = client.post(
            f"/sessions/{session['id']}/curve",
            json={"design": d1_obj, "grid": [0.3], "prior_points": 50},
        )
        assert resp.status_code == 200
        assert resp.json()["n_theta"] == 50

    def test_empty_grid_is_422(self, client, session, d1_obj):
        resp = client.post(
            f"/sessions/{session['id']}/curve", json={"design": d1_obj, "grid": []}
        )
        assert resp.status_code == 422
        assert resp.json()["detail"][0]["loc"] == ["grid"]

    def test_non_numeric_grid_is_422(self, client, session, d1_obj):
        resp = client.post(
            f"/sessions/{session['id']}/curve", json={"design": d1_obj, "grid": ["wide"]}
        )
        assert resp.status_code == 422

    def test_oversized_grid_is_422(self, client, session, d1_obj):
        resp = client.post(
            f"/sessions/{session['id']}/curve",
            json={"design": d1_obj, "grid": list(np.linspace(0, 1, 300))},
        )
        assert resp.status_code == 422

    def test_missing_design_is_422(self, client, session):
        resp = client.post(f"/sessions/{session['id']}/curve", json={"grid": [0.1]})
        assert resp.status_code == 422
        assert resp.json()["detail"][0]["loc"] == ["design"]

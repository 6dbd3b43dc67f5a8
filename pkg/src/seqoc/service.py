"""HTTP front end for interactive design evaluation.

A session pins a model, a fitted surrogate, a design-prior sample, and
innovation settings. Creating the session does the expensive part once
(surrogate predictions at every prior point, one row per retained
state); evaluate and curve requests then reuse the cache, so repeated
calls with the same seeds reproduce the command line numbers exactly.
"""
from __future__ import annotations

import threading
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware

from .bart import BartPosterior, bart_from_json
from .errors import ConfigError, NumericalError
from .models import ModelSpec, model_spec_from_json, prior_sample_matrix
from .oc import (
    MvnConfig,
    cost_from_json,
    design_from_json,
    evaluate_design,
    integrated_power_curve,
    predict_log_lambda,
    report_to_json,
)

DEFAULT_PRIOR_POINTS = 10_000
DEFAULT_DRAWS = 20_000
DEFAULT_STATES = 100
MAX_PRIOR_POINTS = 100_000
MAX_DRAWS = 1_000_000
CURVE_MAX_POINTS = 2_000


class Session:
    def __init__(
        self,
        sid: str,
        spec: ModelSpec,
        surrogate: BartPosterior,
        seed: int,
        prior_points: int,
        mvn: MvnConfig,
        uncertainty_states: int,
    ):
        self.id = sid
        self.spec = spec
        self.surrogate = surrogate
        self.seed = seed
        self.mvn = mvn
        self.uncertainty_states = uncertainty_states
        self.theta = prior_sample_matrix(spec, prior_points, seed)
        self.log_lam = predict_log_lambda(surrogate, self.theta, max_states=uncertainty_states)

    def summary(self) -> dict:
        return {
            "id": self.id,
            "family": self.spec.model.family,
            "param_names": list(self.spec.model.param_names),
            "psi_null": self.spec.psi_null,
            "prior_points": int(self.theta.shape[0]),
            "seed": self.seed,
            "mvn": {"draws": self.mvn.draws, "seed": self.mvn.seed, "antithetic": self.mvn.antithetic},
            "uncertainty_states": int(self.log_lam.shape[0]),
            "surrogate_states": self.surrogate.n_states,
            "training_box": {
                "lower": [float(v) for v in self.surrogate.train_lower],
                "upper": [float(v) for v in self.surrogate.train_upper],
            },
        }


def _field_errors(exc: ConfigError, default_loc: str) -> list:
    errors = getattr(exc, "field_errors", None)
    if errors:
        return [{"loc": ["design", loc], "msg": msg} for loc, msg in errors]
    return [{"loc": [default_loc], "msg": str(exc)}]


def _require(payload, key, where: str):
    if not isinstance(payload, dict) or payload.get(key) is None:
        raise HTTPException(status_code=400, detail=f"{where}: missing '{key}'")
    return payload[key]


def _int_in(payload: dict, key: str, default: int, low: int, high: int) -> int:
    raw = payload.get(key, default)
    try:
        v = int(raw)
    except (TypeError, ValueError):
        raise HTTPException(status_code=400, detail=f"'{key}' must be an integer") from None
    if not low <= v <= high:
        raise HTTPException(status_code=400, detail=f"'{key}' must lie in [{low}, {high}]")
    return v


def build_app() -> FastAPI:
    app = FastAPI(title="seqoc", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origin_regex=r"http://(localhost|127\.0\.0\.1)(:\d+)?",
        allow_methods=["*"],
        allow_headers=["*"],
    )
    sessions: dict[str, Session] = {}
    lock = threading.Lock()
    counter = {"next": 1}

    def get_session(sid: str) -> Session:
        s = sessions.get(sid)
        if s is None:
            raise HTTPException(status_code=404, detail=f"no session {sid!r}")
        return s

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "sessions": len(sessions)}

    @app.post("/sessions", status_code=201)
    def create_session(payload: dict):
        model_obj = _require(payload, "model", "session")
        surrogate_obj = _require(payload, "surrogate", "session")
        try:
            spec = model_spec_from_json(model_obj)
            surrogate = bart_from_json(surrogate_obj)
        except ConfigError as e:
            raise HTTPException(status_code=400, detail=str(e)) from None
        if tuple(surrogate.x_names) != spec.model.param_names:
            raise HTTPException(
                status_code=400,
                detail="surrogate inputs do not match the model's parameters",
            )
        seed = _int_in(payload, "seed", 0, 0, 2**32 - 1)
        prior_points = _int_in(payload, "prior_points", DEFAULT_PRIOR_POINTS, 1, MAX_PRIOR_POINTS)
        states = _int_in(payload, "uncertainty_states", DEFAULT_STATES, 1, 10_000)
        mvn_obj = payload.get("mvn") or {}
        try:
            mvn = MvnConfig(
                draws=int(mvn_obj.get("draws", DEFAULT_DRAWS)),
                seed=int(mvn_obj.get("seed", 0)),
                antithetic=bool(mvn_obj.get("antithetic", True)),
            )
        except (ConfigError, TypeError, ValueError) as e:
            raise HTTPException(status_code=400, detail=f"mvn: {e}") from None
        if mvn.draws > MAX_DRAWS:
            raise HTTPException(status_code=400, detail=f"mvn draws capped at {MAX_DRAWS}")
        with lock:
            sid = f"s-{counter['next']}"
            counter["next"] += 1
        session = Session(sid, spec, surrogate, seed, prior_points, mvn, states)
        with lock:
            sessions[sid] = session
        return session.summary()

    @app.get("/sessions/{sid}")
    def show_session(sid: str):
        return get_session(sid).summary()

    @app.post("/sessions/{sid}/evaluate")
    def evaluate(sid: str, payload: dict):
        session = get_session(sid)
        design_obj = payload.get("design") if isinstance(payload, dict) else None
        if design_obj is None:
            raise HTTPException(status_code=422, detail=[{"loc": ["design"], "msg": "missing design"}])
        try:
            design = design_from_json(design_obj)
        except ConfigError as e:
            raise HTTPException(status_code=422, detail=_field_errors(e, "design")) from None
        try:
            cost = cost_from_json(payload.get("cost"))
        except ConfigError as e:
            raise HTTPException(status_code=422, detail=[{"loc": ["cost"], "msg": str(e)}]) from None
        states = payload.get("uncertainty_states")
        if states is None or int(states) == session.log_lam.shape[0]:
            cache = session.log_lam
            states_n = session.log_lam.shape[0]
        else:
            states_n = _int_in(payload, "uncertainty_states", DEFAULT_STATES, 1, 10_000)
            cache = predict_log_lambda(session.surrogate, session.theta, max_states=states_n)
        try:
            report = evaluate_design(
                design,
                session.theta,
                session.spec.model,
                session.surrogate,
                mvn=session.mvn,
                cost=cost,
                log_lam_states=cache,
                uncertainty_states=states_n,
            )
        except NumericalError as e:
            raise HTTPException(status_code=500, detail=str(e)) from None
        return report_to_json(report)

    @app.post("/sessions/{sid}/curve")
    def curve(sid: str, payload: dict):
        session = get_session(sid)
        grid = payload.get("grid") if isinstance(payload, dict) else None
        if grid is None or not isinstance(grid, list) or len(grid) == 0:
            raise HTTPException(
                status_code=422, detail=[{"loc": ["grid"], "msg": "grid must be a non-empty list"}]
            )
        if len(grid) > 200:
            raise HTTPException(
                status_code=422, detail=[{"loc": ["grid"], "msg": "grid capped at 200 points"}]
            )
        design_obj = payload.get("design")
        if design_obj is None:
            raise HTTPException(status_code=422, detail=[{"loc": ["design"], "msg": "missing design"}])
        try:
            design = design_from_json(design_obj)
        except ConfigError as e:
            raise HTTPException(status_code=422, detail=_field_errors(e, "design")) from None
        k = _int_in(payload, "prior_points", min(500, session.theta.shape[0]), 1, CURVE_MAX_POINTS)
        k = min(k, session.theta.shape[0])
        theta = session.theta[:k]
        try:
            grid_arr = np.asarray(grid, dtype=float)
        except (TypeError, ValueError):
            raise HTTPException(
                status_code=422, detail=[{"loc": ["grid"], "msg": "grid entries must be numbers"}]
            ) from None
        if not np.all(np.isfinite(grid_arr)):
            raise HTTPException(
                status_code=422, detail=[{"loc": ["grid"], "msg": "grid entries must be finite"}]
            )
        try:
            res = integrated_power_curve(
                grid_arr,
                design,
                theta,
                session.spec.model,
                session.surrogate,
                mvn=session.mvn,
                uncertainty_states=_int_in(payload, "uncertainty_states", DEFAULT_STATES, 1, 10_000),
            )
        except ConfigError as e:
            raise HTTPException(status_code=422, detail=[{"loc": ["grid"], "msg": str(e)}]) from None
        except NumericalError as e:
            raise HTTPException(status_code=500, detail=str(e)) from None
        return {
            "design": design.label(),
            "psi": [float(v) for v in res["psi"]],
            "n": [int(v) for v in res["n"]],
            "cumulative_efficacy": [[float(v) for v in row] for row in res["cumulative_efficacy"]],
            "mc_se": [[float(v) for v in row] for row in res["mc_se"]],
            "lo95": [[float(v) for v in row] for row in res["lo95"]],
            "hi95": [[float(v) for v in row] for row in res["hi95"]],
            "n_theta": res["n_theta"],
            "draws_per_theta": res["draws_per_theta"],
        }

    return app


app = build_app()

"""Command line front end.

Every subcommand reads one JSON config file and writes its outputs to
paths named in the config (or overridden by --out). Paths inside a
config resolve relative to the config file's own directory, so shipped
configs work from anywhere. Exit codes: 0 success, 2 bad configuration,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .bart import BartConfig, bart_fit, load_bart, loocv, save_bart
from .design_space import DesignBox, build_training_set, training_set_from_csv, training_set_to_csv
from .errors import ConfigError, NumericalError
from .models import load_model_spec, model_spec_from_json, prior_sample_matrix
from .oc import (
    REPORT_CSV_HEADER,
    MvnConfig,
    cost_from_json,
    design_from_json,
    evaluate_design,
    integrated_power_curve,
    load_design,
    optimize_design,
    report_csv_rows,
    report_to_csv,
    report_to_json,
)
from .oracle import OracleConfig, mc_gsd
from .posterior import mcmc_from_json

DEFAULT_PORT = 8787


def _read_config(path: str) -> tuple[dict, Path]:
    p = Path(path)
    try:
        obj = json.loads(p.read_text())
    except OSError as e:
        raise ConfigError(f"{path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return obj, p.parent


def _resolve_path(entry: str, base: Path) -> Path:
    p = Path(entry)
    return p if p.is_absolute() else base / p


def _model_from(cfg: dict, base: Path):
    entry = cfg.get("model")
    if entry is None:
        raise ConfigError("config needs a 'model' entry (path or inline object)")
    if isinstance(entry, str):
        return load_model_spec(_resolve_path(entry, base))
    return model_spec_from_json(entry)


def _design_from(entry, base: Path):
    if isinstance(entry, str):
        return load_design(_resolve_path(entry, base))
    return design_from_json(entry)


def _mvn_from(cfg: dict) -> MvnConfig:
    obj = cfg.get("mvn") or {}
    unknown = set(obj) - {"draws", "seed", "antithetic"}
    if unknown:
        raise ConfigError(f"mvn: unknown fields {sorted(unknown)}")
    return MvnConfig(
        draws=int(obj.get("draws", 100_000)),
        seed=int(obj.get("seed", 0)),
        antithetic=bool(obj.get("antithetic", True)),
    )


def _bart_from(cfg: dict, seed: int) -> BartConfig:
    obj = dict(cfg.get("bart") or {})
    obj.setdefault("seed", seed)
    known = {f for f in BartConfig.__dataclass_fields__}
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"bart: unknown fields {sorted(unknown)}")
    if "move_probs" in obj:
        obj["move_probs"] = tuple(obj["move_probs"])
    return BartConfig(**obj)


def _seed_of(cfg: dict, args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    return int(cfg.get("seed", 0))


def _out_of(cfg: dict, args, base: Path, key: str = "out") -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    entry = cfg.get(key)
    if entry is None:
        raise ConfigError(f"config needs an '{key}' path (or pass --out)")
    return _resolve_path(entry, base)


def _theta_from(cfg: dict, spec, seed: int) -> np.ndarray:
    if cfg.get("theta") is not None:
        mat = np.atleast_2d(np.asarray(cfg["theta"], dtype=float))
        for row in mat:
            spec.model.validate_theta(row)
        return mat
    k = int(cfg.get("prior_points", 2000))
    return prior_sample_matrix(spec, k, seed)


def _write_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train(args) -> int:
    cfg, base = _read_config(args.config)
    spec = _model_from(cfg, base)
    seed = _seed_of(cfg, args)
    # resolve the output before the expensive part so config mistakes fail fast
    out = _out_of(cfg, args, base)
    box = None
    if cfg.get("box") is not None:
        b = cfg["box"]
        box = DesignBox(
            names=spec.model.param_names,
            lower=np.asarray(b["lower"], dtype=float),
            upper=np.asarray(b["upper"], dtype=float),
        )
    mcmc = mcmc_from_json(cfg.get("mcmc"))
    ts = build_training_set(
        spec,
        k=int(cfg.get("points", 40)),
        n=int(cfg["n"]),
        replicates=int(cfg.get("replicates", 200)),
        box=box,
        estimator=cfg.get("estimator", "replicate-sd"),
        mcmc=mcmc,
        seed=seed,
        threads=args.threads,
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    training_set_to_csv(ts, out)
    dropped = int(ts.dropped.sum())
    print(f"trained {ts.k} points at n={ts.n} with R={ts.replicates} ({dropped} replicates dropped)")
    print(f"wrote {out}")
    return 0


def cmd_fit(args) -> int:
    cfg, base = _read_config(args.config)
    ts = training_set_from_csv(_resolve_path(cfg["training"], base))
    seed = _seed_of(cfg, args)
    config = _bart_from(cfg, seed)
    post = bart_fit(ts.points, ts.log_lam, config, x_names=ts.names)
    out = _out_of(cfg, args, base)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_bart(post, out)
    print(f"fit surrogate on {ts.k} points, kept {post.n_states} states")
    print(f"wrote {out}")
    return 0


def cmd_loocv(args) -> int:
    cfg, base = _read_config(args.config)
    ts = training_set_from_csv(_resolve_path(cfg["training"], base))
    seed = _seed_of(cfg, args)
    config = _bart_from(cfg, seed)
    noise = ts.mc_se_log if cfg.get("use_noise", True) else None
    res = loocv(ts.points, ts.log_lam, config, x_names=ts.names, noise_se=noise, threads=args.threads)
    out = _out_of(cfg, args, base)
    out.parent.mkdir(parents=True, exist_ok=True)
    header = list(ts.names) + ["observed", "mean", "lower", "upper"]
    cols = [res["mean"], res["lower"], res["upper"]]
    if "coverage_noise" in res:
        header += ["lower_noise", "upper_noise"]
        cols += [res["lower_noise"], res["upper_noise"]]
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(ts.k):
            row = [repr(float(v)) for v in ts.points[i]]
            row.append(repr(float(ts.log_lam[i])))
            row += [repr(float(c[i])) for c in cols]
            w.writerow(row)
    cov = res.get("coverage_noise", res["coverage"])
    print(f"loocv rmse={res['rmse']:.4f} mae={res['mae']:.4f} coverage={cov:.3f}")
    print(f"wrote {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg, base = _read_config(args.config)
    seed = _seed_of(cfg, args)
    design = _design_from(cfg.get("design"), base)
    spec = _model_from(cfg, base)
    post = load_bart(_resolve_path(cfg["surrogate"], base))
    theta = _theta_from(cfg, spec, seed)
    report = evaluate_design(
        design,
        theta,
        spec.model,
        post,
        mvn=_mvn_from(cfg),
        cost=cost_from_json(cfg.get("cost")),
        uncertainty_states=int(cfg.get("uncertainty_states", 100)),
    )
    out = _out_of(cfg, args, base)
    _write_json(report_to_json(report), out)
    print(f"{design.label()}: assurance={report.assurance:.4f} iess={report.iess:.1f}")
    if report.iec is not None:
        print(f"iec={report.iec:.3f}")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if cfg.get("csv"):
        csv_path = _resolve_path(cfg["csv"], base)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        report_to_csv(report, csv_path)
        print(f"wrote {csv_path}")
    print(f"wrote {out}")
    return 0


def _psi_grid(cfg: dict, spec) -> np.ndarray:
    if cfg.get("grid") is not None:
        return np.asarray(cfg["grid"], dtype=float)
    g = cfg.get("grid_spec") or {}
    points = int(g.get("points", 41))
    width = float(g.get("width_sds", 3.0))
    m = spec.design_prior.marginals[spec.model.psi_index]
    if m.dist != "normal":
        raise ConfigError(
            "automatic grids need a normal design prior on the estimand; pass 'grid' explicitly"
        )
    mean, sd = m.params
    return np.linspace(mean - width * sd, mean + width * sd, points)


def cmd_curve(args) -> int:
    cfg, base = _read_config(args.config)
    seed = _seed_of(cfg, args)
    spec = _model_from(cfg, base)
    post = load_bart(_resolve_path(cfg["surrogate"], base))
    design = _design_from(cfg.get("design"), base)
    grid = _psi_grid(cfg, spec)
    theta = _theta_from(cfg, spec, seed)
    res = integrated_power_curve(
        grid,
        design,
        theta,
        spec.model,
        post,
        mvn=_mvn_from(cfg),
        uncertainty_states=int(cfg.get("uncertainty_states", 100)),
    )
    out = _out_of(cfg, args, base)
    payload = {
        "format": "seqoc-curve",
        "version": 1,
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
    _write_json(payload, out)
    if cfg.get("csv"):
        csv_path = _resolve_path(cfg["csv"], base)
        _curve_csv(res, design, csv_path)
        print(f"wrote {csv_path}")
    print(f"curve over {len(grid)} grid points, final analysis range "
          f"[{res['cumulative_efficacy'][:, -1].min():.3f}, {res['cumulative_efficacy'][:, -1].max():.3f}]")
    print(f"wrote {out}")
    return 0


def _curve_csv(res, design, path: Path) -> None:
    import csv as _csv

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["design", "psi", "analysis", "n", "cumulative_efficacy", "mc_se", "lo95", "hi95"])
        for gi, g in enumerate(res["psi"]):
            for t in range(design.t_count):
                w.writerow(
                    [
                        design.label(),
                        repr(float(g)),
                        t + 1,
                        design.n[t],
                        repr(float(res["cumulative_efficacy"][gi, t])),
                        repr(float(res["mc_se"][gi, t])),
                        repr(float(res["lo95"][gi, t])),
                        repr(float(res["hi95"][gi, t])),
                    ]
                )


def cmd_compare(args) -> int:
    cfg, base = _read_config(args.config)
    seed = _seed_of(cfg, args)
    spec = _model_from(cfg, base)
    post = load_bart(_resolve_path(cfg["surrogate"], base))
    entries = cfg.get("designs")
    if not entries:
        raise ConfigError("config needs a non-empty 'designs' list")
    designs = [_design_from(e, base) for e in entries]
    theta = _theta_from(cfg, spec, seed)
    mvn = _mvn_from(cfg)
    cost = cost_from_json(cfg.get("cost"))
    states = int(cfg.get("uncertainty_states", 100))
    reports = [
        evaluate_design(d, theta, spec.model, post, mvn=mvn, cost=cost, uncertainty_states=states)
        for d in designs
    ]
    out = _out_of(cfg, args, base)
    _write_json(
        {"format": "seqoc-compare", "version": 1, "reports": [report_to_json(r) for r in reports]},
        out,
    )
    for r in reports:
        line = f"{r.design.label()}: assurance={r.assurance:.4f} iess={r.iess:.1f}"
        if r.iec is not None:
            line += f" iec={r.iec:.3f}"
        print(line)
    if cfg.get("csv"):
        csv_path = _resolve_path(cfg["csv"], base)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        _concat_csv(reports, csv_path)
        print(f"wrote {csv_path}")
    print(f"wrote {out}")
    return 0


def _concat_csv(reports, path: Path) -> None:
    import csv as _csv

    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(REPORT_CSV_HEADER)
        for r in reports:
            w.writerows(report_csv_rows(r))


def cmd_optimize(args) -> int:
    cfg, base = _read_config(args.config)
    seed = _seed_of(cfg, args)
    spec = _model_from(cfg, base)
    post = load_bart(_resolve_path(cfg["surrogate"], base))
    entries = cfg.get("candidates")
    if not entries:
        raise ConfigError("config needs a non-empty 'candidates' list")
    candidates = [_design_from(e, base) for e in entries]
    theta = _theta_from(cfg, spec, seed)
    res = optimize_design(
        candidates,
        objective=cfg.get("objective", "min-iec"),
        prior_sample=theta,
        model=spec.model,
        predictor=post,
        cost=cost_from_json(cfg.get("cost")),
        mvn=_mvn_from(cfg),
        target=cfg.get("target"),
    )
    out = _out_of(cfg, args, base)
    payload = {
        "format": "seqoc-optimize",
        "version": 1,
        "objective": res["objective"],
        "diagnostic": res["diagnostic"],
        "ranking": [
            {
                "rank": r.rank,
                "design": r.design.label(),
                "score": r.score,
                "assurance": r.report.assurance,
                "iess": r.report.iess,
                "iec": r.report.iec,
            }
            for r in res["ranking"]
        ],
        "infeasible": [
            {"design": r.design.label(), "score": r.score, "assurance": r.report.assurance}
            for r in res["infeasible"]
        ],
    }
    _write_json(payload, out)
    if res["ranking"]:
        best = res["ranking"][0]
        print(f"best: {best.design.label()} score={best.score:.3f}")
    else:
        print(res["diagnostic"])
    print(f"wrote {out}")
    return 0


def cmd_oracle(args) -> int:
    cfg, base = _read_config(args.config)
    seed = _seed_of(cfg, args)
    spec = _model_from(cfg, base)
    design = _design_from(cfg.get("design"), base)
    config = OracleConfig(
        nsim=int(cfg.get("nsim", 400)),
        seed=seed,
        mcmc=mcmc_from_json(cfg.get("mcmc")),
    )
    theta = cfg.get("theta")
    report = mc_gsd(design, spec, config=config, theta=theta, cost=cost_from_json(cfg.get("cost")))
    out = _out_of(cfg, args, base)
    _write_json(report_to_json(report), out)
    print(
        f"{design.label()} (oracle, {report.n_theta} replicates): "
        f"assurance={report.assurance:.4f} iess={report.iess:.1f}"
    )
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if cfg.get("csv"):
        csv_path = _resolve_path(cfg["csv"], base)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        report_to_csv(report, csv_path)
        print(f"wrote {csv_path}")
    print(f"wrote {out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app

    app = build_app()
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqoc",
        description="operating characteristics of sequential Bayesian designs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, config=True):
        p = sub.add_parser(name, help=help_text)
        if config:
            p.add_argument("--config", required=True, help="JSON config file")
            p.add_argument("--seed", type=int, default=None, help="override the config seed")
            p.add_argument("--out", default=None, help="override the config output path")
            p.add_argument("--threads", type=int, default=1, help="worker threads where supported")
        p.set_defaults(func=fn)
        return p

    add("train", cmd_train, "estimate the precision scale over a parameter design")
    add("fit", cmd_fit, "fit the surrogate to a training table")
    add("loocv", cmd_loocv, "leave one out check of the surrogate")
    add("evaluate", cmd_evaluate, "operating characteristics of one design")
    add("curve", cmd_curve, "cumulative efficacy across an estimand grid")
    add("compare", cmd_compare, "evaluate several designs under common draws")
    add("optimize", cmd_optimize, "rank candidate designs")
    add("oracle", cmd_oracle, "brute force Monte Carlo evaluation")
    serve = add("serve", cmd_serve, "run the HTTP service", config=False)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=DEFAULT_PORT)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Full study on the survival model: precision surface, surrogate fit,
then the two candidate schedules compared head to head on assurance,
expected sample size, and expected cost, plus a ranking over a small
candidate set. Full scale is about an hour on one core; --quick for a
fast pass."""
import argparse
import json
import time
from pathlib import Path

import numpy as np

from seqoc import (
    BartConfig,
    CostSpec,
    McmcConfig,
    MvnConfig,
    bart_fit,
    build_training_set,
    evaluate_design,
    load_design,
    load_model_spec,
    optimize_design,
    prior_sample_matrix,
    report_to_csv,
    save_bart,
    save_report,
    training_set_to_csv,
)

here = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out-dir", default=str(here / "runs" / "survival"))
    ap.add_argument("--seed", type=int, default=21)
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    spec = load_model_spec(here / "configs" / "model_survival.json")
    if args.quick:
        k, n, reps = 20, 120, 40
        mcmc = McmcConfig(iterations=1000, burnin=400)
        bart = BartConfig(iterations=1000, burnin=300, thin=5, seed=args.seed)
        draws, points = 20000, 1000
    else:
        k, n, reps = 60, 350, 200
        mcmc = None
        bart = BartConfig(seed=args.seed)
        draws, points = 100000, 2000

    t0 = time.time()
    ts = build_training_set(spec, k=k, n=n, replicates=reps, mcmc=mcmc,
                            seed=args.seed, threads=args.threads)
    training_set_to_csv(ts, out / "train.csv")
    print(f"[{time.time()-t0:7.1f}s] {ts.k} training points, "
          f"lambda in [{ts.lam.min():.2f}, {ts.lam.max():.2f}]")

    post = bart_fit(ts.points, ts.log_lam, bart, x_names=ts.names)
    save_bart(post, out / "surrogate.json")
    print(f"[{time.time()-t0:7.1f}s] surrogate fit, {post.n_states} states")

    d1 = load_design(here / "configs" / "design_d1.json")
    d2 = load_design(here / "configs" / "design_d2.json")
    theta = prior_sample_matrix(spec, points, args.seed)
    mvn = MvnConfig(draws=draws, seed=args.seed)
    cost = CostSpec()
    for d in (d1, d2):
        rep = evaluate_design(d, theta, spec.model, post, mvn=mvn, cost=cost)
        save_report(rep, out / f"report_{d.name.lower()}.json")
        report_to_csv(rep, out / f"report_{d.name.lower()}.csv")
        ba = ", ".join(f"{v:.2f}" for v in rep.cumulative_efficacy)
        print(f"[{time.time()-t0:7.1f}s] {d.name}: cumulative efficacy [{ba}] "
              f"iess={rep.iess:.0f} iec={rep.iec:.1f}")

    candidates = [d1, d2,
                  load_design(here / "configs" / "design_fixed_n500.json"),
                  load_design(here / "configs" / "design_d1_futility.json")]
    res = optimize_design(candidates, "min-iec", theta, spec.model, post,
                          cost=cost, mvn=mvn)
    ranking = [{"rank": r.rank, "design": r.design.name, "iec": r.report.iec,
                "assurance": r.report.assurance, "iess": r.report.iess}
               for r in res["ranking"]]
    (out / "ranking.json").write_text(json.dumps(ranking, indent=2) + "\n")
    best = res["ranking"][0]
    print(f"[{time.time()-t0:7.1f}s] best by cost: {best.design.name} "
          f"(iec={best.report.iec:.1f})")


if __name__ == "__main__":
    main()

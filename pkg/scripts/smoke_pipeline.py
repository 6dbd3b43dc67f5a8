"""Fast end to end run on the binary endpoint model: small training set,
surrogate fit, one design evaluation, and an oracle spot check at a
single parameter point. Finishes in about a minute on one core."""
import argparse
import json
import time
from pathlib import Path

import numpy as np

from seqoc import (
    BartConfig,
    McmcConfig,
    MvnConfig,
    OracleConfig,
    TrialDesign,
    bart_fit,
    build_training_set,
    evaluate_design,
    load_model_spec,
    mc_gsd,
    prior_sample_matrix,
    report_to_json,
    save_bart,
    training_set_to_csv,
)

here = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out-dir", default=str(here / "runs" / "smoke"))
    ap.add_argument("--seed", type=int, default=22)
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    spec = load_model_spec(here / "configs" / "model_logistic.json")
    t0 = time.time()
    ts = build_training_set(
        spec, k=12, n=80, replicates=30,
        mcmc=McmcConfig(iterations=800, burnin=300),
        seed=args.seed,
    )
    training_set_to_csv(ts, out / "train.csv")
    print(f"[{time.time()-t0:6.1f}s] training set: {ts.k} points, "
          f"lambda in [{ts.lam.min():.2f}, {ts.lam.max():.2f}]")

    post = bart_fit(ts.points, ts.log_lam,
                    BartConfig(iterations=800, burnin=300, thin=5, seed=args.seed),
                    x_names=ts.names)
    save_bart(post, out / "surrogate.json")
    print(f"[{time.time()-t0:6.1f}s] surrogate: {post.n_states} states")

    design = TrialDesign(n=(300, 500), efficacy=(0.99, 0.975), name="smoke-gsd")
    theta = prior_sample_matrix(spec, 1000, args.seed)
    report = evaluate_design(design, theta, spec.model, post,
                             mvn=MvnConfig(draws=20000, seed=args.seed))
    (out / "report.json").write_text(
        json.dumps(report_to_json(report), indent=2, sort_keys=True) + "\n")
    print(f"[{time.time()-t0:6.1f}s] assurance={report.assurance:.3f} iess={report.iess:.1f}")

    point = np.array([0.0, 0.0, 0.3, 0.0])
    oracle = mc_gsd(design, spec,
                    OracleConfig(nsim=100, seed=args.seed,
                                 mcmc=McmcConfig(iterations=800, burnin=300)),
                    theta=point)
    fast = evaluate_design(design, point[None, :], spec.model, post,
                           mvn=MvnConfig(draws=20000, seed=args.seed))
    print(f"[{time.time()-t0:6.1f}s] at a fixed point: "
          f"surrogate={fast.assurance:.3f} oracle={oracle.assurance:.3f} "
          f"(oracle se {oracle.se_assurance:.3f})")


if __name__ == "__main__":
    main()

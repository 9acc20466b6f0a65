"""Run the epsilon ladder for a config and print the gap table.

    python3 scripts/run_gamma.py configs/laminate.json --jobs 2
"""
import argparse

from plasthom import io
from plasthom.gamma import ExperimentConfig, convergence_table


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    cfg = io.load_config(args.config)
    exp = dict(cfg.get("experiment", {}), model=io.model_section(cfg))
    ct = convergence_table(ExperimentConfig.from_dict(exp), jobs=args.jobs)
    print(f"min F_hom = {ct.hom.value:.8f}  (table: {ct.table.solves} cell solves, {ct.table.seconds:.1f}s)")
    print(f"{'eps':>8} {'min F_eps':>12} {'gap':>10} {'rel':>8} {'iters':>6} {'sec':>7}")
    for r in ct.rows:
        print(f"{r.eps:8.4f} {r.min_Feps:12.8f} {r.gap:10.3e} {r.rel_gap:8.3%} {r.iterations:6d} {r.seconds:7.1f}")
    print(f"trend non-increasing within 10%: {ct.trend_ok()}")


if __name__ == "__main__":
    main()

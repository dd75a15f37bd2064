"""Ring-of-Gaussians ablation: full method vs reverted loss vs no adversarial training.

Usage: python scripts/run_directional_suite.py [--out results/directional] [--iters 20000] [--seeds 0 1 2]

Finished runs whose snapshot matches are reused, so the script can be resumed.
"""

import argparse
import time

from fastgan_lab.experiments import directional_suite, run_or_load
from fastgan_lab.harness import compare_runs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/directional")
    ap.add_argument("--iters", type=int, default=20000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()

    suite = directional_suite(args.out, tuple(args.seeds), args.iters)
    records = {}
    for key, cfg in suite.items():
        t = time.perf_counter()
        records[key] = run_or_load(cfg)
        last = records[key].metrics[-1]
        print(
            f"{cfg.name:<22} {records[key].status:<10} fid={last['fid']:.5f} cover={last['mode_coverage']:.3f} "
            f"cond_ent={last['conditional_entropy']:.5f} ({time.perf_counter() - t:.0f}s)",
            flush=True,
        )
    for seed in args.seeds:
        table = compare_runs([records["no_adv", seed], records["fastgan", seed], records["robgan_revert", seed]])
        print(f"\nseed {seed}")
        print(table.to_text(), end="")


if __name__ == "__main__":
    main()

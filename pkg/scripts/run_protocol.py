"""Run the incremental protocol for one config and print per-task metrics and relabel counts.

    python3 scripts/run_protocol.py configs/oracle.json --seeds 0 1 2
"""

import argparse
import time
from dataclasses import replace

import numpy as np

from hypow.config import load_run_config
from hypow.protocol import headline, run_protocol
from hypow.world import gen_world


def main():
    p = argparse.ArgumentParser()
    p.add_argument("config")
    p.add_argument("--seeds", type=int, nargs="*")
    args = p.parse_args()
    cfg = load_run_config(args.config)
    seeds = args.seeds or cfg.seeds
    heads = []
    for seed in seeds:
        t0 = time.perf_counter()
        result = run_protocol(gen_world(replace(cfg.world, seed=seed)), cfg.method, cfg.phases(), seed=seed)
        for r, (n_unmatched, n_relabeled) in zip(result.reports, result.relabel_counts):
            ur = "n/a" if r.u_recall is None else f"{100 * r.u_recall:.1f}"
            print(f"seed {seed} task {r.task}: U-Recall {ur:>5}  mAP {100 * r.map_both:5.1f}  A-OSE {r.a_ose:4d}"
                  f"  relabeled {n_relabeled}/{n_unmatched}")
        heads.append(headline(result.reports))
        print(f"seed {seed} done in {time.perf_counter() - t0:.1f}s")
    ur = [u for u, _ in heads if u is not None]
    print(f"mean over {len(seeds)} seeds: U-Recall {100 * np.mean(ur):.1f}  mAP {100 * np.mean([m for _, m in heads]):.1f}")


if __name__ == "__main__":
    main()

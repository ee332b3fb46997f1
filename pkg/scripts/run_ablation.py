"""Component ablation and curvature sweep on the synthetic world.

    python3 scripts/run_ablation.py configs/ablation.json --out runs/ablation.json
"""

import argparse
import json
import time

from hypow.config import load_run_config
from hypow.protocol import ablation_suite, format_ablation


def main():
    p = argparse.ArgumentParser()
    p.add_argument("config")
    p.add_argument("--out", help="write the table as JSON")
    args = p.parse_args()
    cfg = load_run_config(args.config)
    t0 = time.perf_counter()
    table = ablation_suite(cfg.world, cfg.method, seeds=cfg.seeds)
    print(format_ablation(table))
    print(f"{len(cfg.seeds)} seeds in {time.perf_counter() - t0:.0f}s")
    if args.out:
        with open(args.out, "w") as f:
            json.dump({"config": cfg.to_dict(), "table": table}, f, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()

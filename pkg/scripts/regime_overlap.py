"""Semantic overlap of the synthetic worlds per split mode, averaged over seeds."""

import argparse

import numpy as np

from hypow.world import WorldConfig, gen_world, prototype_overlap


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--tasks", type=int, default=2)
    args = p.parse_args()
    for mode in ("low", "medium", "high"):
        vals = []
        for seed in range(args.seeds):
            w = gen_world(WorldConfig(split_mode=mode, num_tasks=args.tasks, seed=seed))
            vals.append([prototype_overlap(w, t) for t in range(1, args.tasks)])
        per_task = np.mean(vals, axis=0)
        print(f"{mode:>6}: " + "  ".join(f"S_{t}={v:.3f}" for t, v in enumerate(per_task, 1)))


if __name__ == "__main__":
    main()

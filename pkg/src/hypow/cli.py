"""``hypow`` command line: geometry checks, training, ablations, split overlap and scoring.

Exit status is 0 on success, 1 when a check or input validation fails and 2
on a runtime error. Every JSON artifact embeds the configuration, seed and
package version and is written with sorted keys, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import RunConfig, load_run_config
from .embedder import TrainingDivergence
from .geomcheck import run_suite
from .metrics import evaluate, read_detections, read_ground_truth
from .protocol import ablation_suite, format_ablation, headline, run_protocol
from .relabel import RELABEL_MODES
from .splitsim import (
    EmbeddingParseError,
    SplitDefinition,
    TokenLookupError,
    UndefinedOverlap,
    format_table,
    load_embeddings,
    regime_report,
)
from .world import SPLIT_MODES, ConfigError, gen_world

log = logging.getLogger("hypow")

OUT_ENV = "HYPOW_OUT"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class ValidationFailure(Exception):
    """Bad input or a failed check; maps to exit status 1."""


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or "runs")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _envelope(kind: str, **body) -> dict:
    return {"kind": kind, "version": __version__, **body}


def _run_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    return cfg.with_overrides(seed=args.seed, relabel=args.relabel, curvature=args.curvature, split_mode=args.split_mode)


def cmd_geom_check(args) -> int:
    variant = "arctan" if args.arctan else "artanh"
    seed = 0 if args.seed is None else args.seed
    results = run_suite(seed=seed, cases=args.cases, variant=variant)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    if args.out or os.environ.get(OUT_ENV):
        doc = _envelope("geom-check", seed=seed, config={"variant": variant, "cases": args.cases},
                        passed=ok, checks=[r.to_dict() for r in results])
        _write_json(_out_dir(args) / "geom_check.json", doc)
    return EXIT_OK if ok else EXIT_INVALID


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args)
    summary = []
    for seed in cfg.seeds:
        world = gen_world(replace(cfg.world, seed=seed))
        tag = f"seed{seed}"

        def checkpoint(t, state, report, seed=seed, tag=tag):
            doc = _envelope("checkpoint", seed=seed, config=cfg.to_dict(), state=state.checkpoint())
            _write_json(out / f"{tag}_task{t}_checkpoint.json", doc)

        result = run_protocol(world, cfg.method, cfg.phases(), seed=seed, on_task_end=checkpoint)
        ur, mp = headline(result.reports)
        doc = _envelope(
            "metrics", seed=seed, config=cfg.to_dict(),
            reports=[r.to_dict() for r in result.reports],
            relabel_counts=[list(c) for c in result.relabel_counts],
            headline={"u_recall": ur, "map": mp},
        )
        _write_json(out / f"{tag}_metrics.json", doc)
        for r in result.reports:
            summary.append(f"seed {seed} task {r.task}: U-Recall {_pct(r.u_recall)}  mAP prev {_pct(r.map_previous)}"
                           f"  cur {_pct(r.map_current)}  both {_pct(r.map_both)}  A-OSE {r.a_ose}")
    text = "\n".join(summary) + "\n"
    (out / "summary.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def _pct(v) -> str:
    return "  n/a" if v is None else f"{100 * v:5.1f}"


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    table = ablation_suite(cfg.world, cfg.method, seeds=cfg.seeds)
    out = _out_dir(args)
    _write_json(out / "ablation.json", _envelope("ablation", seed=table["seeds"], config=cfg.to_dict(), table=table))
    text = format_ablation(table)
    (out / "ablation.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_split_sim(args) -> int:
    split = SplitDefinition.from_json(args.split)
    table = load_embeddings(args.embeddings)
    report = regime_report(split, table)
    print(format_table(report))
    if args.out or os.environ.get(OUT_ENV):
        doc = _envelope("split-sim", seed=None, config={"split": [list(g) for g in split.tasks]}, report=report)
        _write_json(_out_dir(args) / "split_sim.json", doc)
    return EXIT_OK


def cmd_eval(args) -> int:
    dets = read_detections(args.detections)
    gts = read_ground_truth(args.ground_truth)
    report = evaluate(dets, gts, previous=args.previous or ())
    doc = _envelope("eval", seed=None, config={"previous": sorted(args.previous or [])}, report=report.to_dict())
    text = json.dumps(doc, sort_keys=True, indent=2)
    print(text)
    if args.out or os.environ.get(OUT_ENV):
        (_out_dir(args) / "eval.json").write_text(text + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hypow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hypow {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, run=False):
        sp.add_argument("--seed", type=int, help="root seed (overrides the config)")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")
        if run:
            sp.add_argument("--config", help="run configuration JSON")
            sp.add_argument("--relabel", choices=RELABEL_MODES)
            sp.add_argument("--curvature", type=float)
            sp.add_argument("--split-mode", choices=SPLIT_MODES)

    g = sub.add_parser("geom-check", help="run the geometric invariant suite")
    common(g)
    g.add_argument("--arctan", action="store_true", help="use the arctan distance variant")
    g.add_argument("--cases", type=int, default=200)
    g.set_defaults(func=cmd_geom_check)

    t = sub.add_parser("train", help="run the incremental protocol")
    common(t, run=True)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="component ablation and curvature sweep")
    common(a, run=True)
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("split-sim", help="semantic overlap of a task split")
    common(s)
    s.add_argument("--split", required=True, help='JSON file {"tasks": [[names], ...]}')
    s.add_argument("--embeddings", required=True, help="whitespace-separated token vectors")
    s.set_defaults(func=cmd_split_sim)

    e = sub.add_parser("eval", help="score a detection dump")
    common(e)
    e.add_argument("--detections", required=True)
    e.add_argument("--ground-truth", required=True)
    e.add_argument("--previous", type=int, nargs="*", help="class ids known before the current task")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValidationFailure, EmbeddingParseError, TokenLookupError, UndefinedOverlap,
            FileNotFoundError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"hypow: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except TrainingDivergence as exc:
        print(f"hypow: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit status
        print(f"hypow: runtime error: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

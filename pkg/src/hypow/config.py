"""Run configuration: world, method, schedule and seeds in one JSON document."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .embedder import Phase, default_schedule
from .losses import LossConfig
from .protocol import MethodConfig
from .world import ConfigError, WorldConfig

RUN_SCHEMA = "hypow.run/1"


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    extra = sorted(set(data) - known)
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(extra)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    method: MethodConfig = field(default_factory=MethodConfig)
    schedule: tuple[Phase, ...] | None = None  # None: default schedule from the method's lr and epoch scale
    seeds: tuple[int, ...] = (0,)

    def phases(self) -> list[Phase]:
        if self.schedule is not None:
            return list(self.schedule)
        return default_schedule(self.world.num_tasks, self.method.base_lr, self.method.epoch_scale)

    def to_dict(self) -> dict:
        return {
            "schema": RUN_SCHEMA,
            "world": asdict(self.world),
            "method": self.method.to_dict(),
            "schedule": None if self.schedule is None else [asdict(p) for p in self.schedule],
            "seeds": list(self.seeds),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("run config must be a JSON object")
        schema = d.get("schema", RUN_SCHEMA)
        if schema != RUN_SCHEMA:
            raise ConfigError(f"expected schema {RUN_SCHEMA}, got {schema}")
        extra = sorted(set(d) - {"schema", "world", "method", "schedule", "seeds", "seed"})
        if extra:
            raise ConfigError(f"unknown section(s) {', '.join(extra)}")
        world = _build(WorldConfig, d.get("world", {}), "world")
        method_d = dict(d.get("method", {}))
        loss = _build(LossConfig, method_d.pop("loss", {}), "method.loss")
        method = _build(MethodConfig, {**method_d, "loss": loss}, "method")
        schedule = None
        if d.get("schedule") is not None:
            schedule = tuple(_build(Phase, p, f"schedule[{i}]") for i, p in enumerate(d["schedule"]))
            for p in schedule:
                if p.epochs < 0 or p.lr <= 0 or not 1 <= p.task <= world.num_tasks:
                    raise ConfigError(f"schedule: invalid phase {p}")
        if "seeds" in d:
            seeds = tuple(int(s) for s in d["seeds"])
        else:
            seeds = (int(d.get("seed", 0)),)
        if not seeds:
            raise ConfigError("seeds must not be empty")
        return cls(world, method, schedule, seeds)

    def with_overrides(self, seed=None, relabel=None, curvature=None, split_mode=None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seeds=(seed,))
        if relabel is not None:
            cfg = replace(cfg, method=replace(cfg.method, relabel=relabel))
        if curvature is not None:
            if curvature < 0:
                raise ConfigError("curvature must be >= 0")
            cfg = replace(cfg, method=replace(cfg.method, loss=replace(cfg.method.loss, curvature=curvature)))
        if split_mode is not None:
            cfg = replace(cfg, world=replace(cfg.world, split_mode=split_mode))
        return cfg


def load_run_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return RunConfig.from_dict(data)

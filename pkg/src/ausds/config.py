"""Run configuration: one JSON document mirroring every config type.

Any field may be omitted (defaults apply) and the run/seed/out/strategy
fields can be overridden from the command line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .attacks import AttackConfig
from .data import load_dataset
from .errors import ConfigurationError
from .loop import ActiveLoop, LoopConfig, RunResult
from .model import DecoderModel, TrainConfig
from .sampler import SamplerConfig


@dataclass
class RunConfig:
    dataset: str = ""
    out: str = "runs"
    strategies: list[str] = field(default_factory=lambda: ["ausds"])
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    seed_fraction: float | None = None
    decoder_architecture: str = "linear"
    hidden_width: int = 32
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    loop: LoopConfig = field(default_factory=LoopConfig)

    def validate(self) -> None:
        if not self.dataset:
            raise ConfigurationError("config needs a dataset manifest path")
        if not self.strategies:
            raise ConfigurationError("config needs at least one strategy")
        if not self.seeds:
            raise ConfigurationError("config needs at least one seed")


def _fill(target, doc: dict, path: str) -> None:
    for key, value in doc.items():
        if not hasattr(target, key):
            raise ConfigurationError(f"unknown config key {path}.{key}")
        setattr(target, key, value)


def run_config_from_dict(doc: dict) -> RunConfig:
    cfg = RunConfig()
    doc = dict(doc)
    attack_doc = doc.pop("attack", {})
    for section, target in (
        ("train", cfg.train),
        ("sampler", cfg.sampler),
        ("loop", cfg.loop),
    ):
        _fill(target, doc.pop(section, {}), section)
    _fill(cfg.sampler.attack, attack_doc, "attack")
    decoder_doc = doc.pop("decoder", {})
    cfg.decoder_architecture = decoder_doc.get("architecture", cfg.decoder_architecture)
    cfg.hidden_width = int(decoder_doc.get("hidden_width", cfg.hidden_width))
    for key in ("dataset", "out", "strategies", "seeds", "seed_fraction"):
        if key in doc:
            setattr(cfg, key, doc.pop(key))
    if doc:
        raise ConfigurationError(f"unknown config keys: {sorted(doc)}")
    cfg.loop.budget_checkpoints = tuple(cfg.loop.budget_checkpoints)
    return cfg


def load_run_config(path: str | Path) -> RunConfig:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return run_config_from_dict(doc)


def run_dir(cfg: RunConfig, strategy: str, seed: int) -> Path:
    return Path(cfg.out) / strategy / f"seed_{seed}"


def execute_single(cfg: RunConfig, strategy: str, seed: int,
                   out_dir: Path | None = None) -> RunResult:
    """One (strategy, seed) run: load, initialize, iterate to the stop rule."""
    dataset, pool, oracle = load_dataset(cfg.dataset, seed=seed,
                                         seed_fraction=cfg.seed_fraction)
    decoder = DecoderModel.create(
        cfg.decoder_architecture, dataset.dim, dataset.num_classes,
        cfg.hidden_width, seed=seed,
    )
    sampler_config = SamplerConfig(
        strategy=strategy,
        attack=cfg.sampler.attack,
        mix_ratio=cfg.sampler.mix_ratio,
        selection_size=cfg.sampler.selection_size,
        knn_k=cfg.sampler.knn_k,
        rank_scope=cfg.sampler.rank_scope,
        us_scan_interval=cfg.sampler.us_scan_interval,
    )
    loop_config = LoopConfig(**{**cfg.loop.__dict__, "seed": seed})
    train_config = TrainConfig(**{**cfg.train.__dict__, "seed": seed})
    if out_dir is None:
        out_dir = run_dir(cfg, strategy, seed)
    loop = ActiveLoop(dataset, pool, oracle, decoder, sampler_config,
                      loop_config, train_config, out_dir=out_dir)
    result = loop.run()
    seed_set_size = loop.pool.labeled_count - loop.oracle.query_count
    meta = {
        "strategy": strategy,
        "seed": seed,
        "dataset": dataset.name,
        "task": dataset.task,
        "dim": dataset.dim,
        "pool_total": dataset.count,
        "unlabeled_initial": dataset.count - seed_set_size,
        "steps": result.steps,
        "labeled_final": loop.pool.labeled_count,
        "selection_size": sampler_config.selection_size,
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return result


def execute_all(cfg: RunConfig) -> list[tuple[str, int, RunResult]]:
    cfg.validate()
    results = []
    for strategy in cfg.strategies:
        for seed in cfg.seeds:
            results.append((strategy, seed, execute_single(cfg, strategy, seed)))
    return results

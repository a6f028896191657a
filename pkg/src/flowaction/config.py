"""Experiment configuration files (TOML).

Example::

    seed = 7
    output_dir = "results"

    [input]
    captures = ["capture.csv"]
    labels = ["labels.csv"]
    owner_map = "owners.csv"
    target_owners = ["app", "cdn"]
    device_ip = "10.0.0.2"
    timeout = 4.5                 # optional, seconds
    actions = ["send mail"]       # optional; other labels become "other"

    [distance]
    preset = "gmail-conf1"        # or a list of [[distance.views]]
    # [[distance.views]]
    # weight = 0.8
    # series = "complete"         # incoming | outgoing | complete
    # interval = [1, 6]

    [clusters]
    k = 12                        # fixed cluster count, or
    k_range = [4, 24]             # inclusive sweep bounds (or k_values = [...])

    [forest]
    n_estimators = 40
    bootstrap = true
    # max_features = 3            # default floor(sqrt(k))
    # max_depth = 10              # default unbounded

    [split]
    test_accounts = ["acct09", "acct10"]
    validation_accounts = ["acct07", "acct08"]

Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import tomli

from .cluster import PRESETS, DistanceConfig, View
from .forest import ForestParams
from .ingest import DEFAULT_TIMEOUT


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    captures: list[Path]
    labels: list[Path]
    owner_map: Path
    target_owners: list[str]
    device_ip: str
    distance: DistanceConfig
    test_accounts: list[str]
    output_dir: Path
    validation_accounts: list[str] = field(default_factory=list)
    timeout: float = DEFAULT_TIMEOUT
    actions: Optional[list[str]] = None
    k: Optional[int] = None
    k_values: Optional[list[int]] = None
    forest: ForestParams = ForestParams()
    seed: int = 0

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed, forest=replace(self.forest, seed=seed))


def _distance(section: dict) -> DistanceConfig:
    if "preset" in section:
        name = section["preset"]
        if name not in PRESETS:
            raise ConfigError(f"unknown distance preset {name!r}; known: {sorted(PRESETS)}")
        return PRESETS[name]
    views = section.get("views")
    if not views:
        raise ConfigError("[distance] needs 'preset' or at least one [[distance.views]]")
    try:
        return DistanceConfig(tuple(View.from_dict(v) for v in views), section.get("name", "custom"))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad distance view: {exc}") from exc


def parse_config(data: dict, base: Path = Path(".")) -> ExperimentConfig:
    def path(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else base / p

    try:
        inp = data["input"]
        captures = [path(p) for p in inp["captures"]]
        labels = [path(p) for p in inp.get("labels", [])]
        if labels and len(labels) != len(captures):
            raise ConfigError("input.labels must pair one-to-one with input.captures")
        clusters = data.get("clusters", {})
        k_values = clusters.get("k_values")
        if k_values is None and "k_range" in clusters:
            lo, hi = clusters["k_range"]
            k_values = list(range(int(lo), int(hi) + 1))
        k = clusters.get("k")
        if k is None and not k_values:
            raise ConfigError("[clusters] needs k, k_range or k_values")
        seed = int(data.get("seed", 0))
        f = data.get("forest", {})
        forest = ForestParams(
            n_estimators=int(f.get("n_estimators", 40)),
            max_features=f.get("max_features"),
            bootstrap=bool(f.get("bootstrap", True)),
            max_depth=f.get("max_depth"),
            seed=seed,
        )
        split = data.get("split", {})
        return ExperimentConfig(
            captures=captures,
            labels=labels,
            owner_map=path(inp["owner_map"]),
            target_owners=list(inp["target_owners"]),
            device_ip=inp["device_ip"],
            timeout=float(inp.get("timeout", DEFAULT_TIMEOUT)),
            actions=inp.get("actions"),
            distance=_distance(data.get("distance", {})),
            k=int(k) if k is not None else None,
            k_values=[int(v) for v in k_values] if k_values else None,
            forest=forest,
            seed=seed,
            test_accounts=[str(a) for a in split.get("test_accounts", [])],
            validation_accounts=[str(a) for a in split.get("validation_accounts", [])],
            output_dir=path(data.get("output_dir", "results")),
        )
    except KeyError as exc:
        raise ConfigError(f"missing config key {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            data = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data, path.parent)


def dump_config(cfg: ExperimentConfig) -> str:
    """Render a config back to TOML (paths written as given)."""
    def lst(items):
        return "[" + ", ".join(f'"{i}"' for i in items) + "]"

    lines = [f"seed = {cfg.seed}", f'output_dir = "{cfg.output_dir}"', "", "[input]",
             f"captures = {lst(cfg.captures)}", f"labels = {lst(cfg.labels)}",
             f'owner_map = "{cfg.owner_map}"', f"target_owners = {lst(cfg.target_owners)}",
             f'device_ip = "{cfg.device_ip}"', f"timeout = {cfg.timeout}"]
    if cfg.actions:
        lines.append(f"actions = {lst(cfg.actions)}")
    lines += ["", "[distance]"]
    if cfg.distance.name in PRESETS and PRESETS[cfg.distance.name] == cfg.distance:
        lines.append(f'preset = "{cfg.distance.name}"')
    else:
        lines.append(f'name = "{cfg.distance.name}"')
        for v in cfg.distance.views:
            lines += ["", "[[distance.views]]", f"weight = {v.weight}", f'series = "{v.series_type.value}"',
                      f"interval = [{v.interval.x}, {v.interval.y}]"]
    lines += ["", "[clusters]"]
    if cfg.k is not None:
        lines.append(f"k = {cfg.k}")
    if cfg.k_values:
        lines.append(f"k_values = {cfg.k_values}")
    lines += ["", "[forest]", f"n_estimators = {cfg.forest.n_estimators}",
              f"bootstrap = {'true' if cfg.forest.bootstrap else 'false'}"]
    if cfg.forest.max_features is not None:
        lines.append(f"max_features = {cfg.forest.max_features}")
    if cfg.forest.max_depth is not None:
        lines.append(f"max_depth = {cfg.forest.max_depth}")
    lines += ["", "[split]", f"test_accounts = {lst(cfg.test_accounts)}",
              f"validation_accounts = {lst(cfg.validation_accounts)}", ""]
    return "\n".join(lines)

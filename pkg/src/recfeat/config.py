"""Run configuration: TOML file plus CLI overrides.

Relative paths in the file (dataset, transcripts, output directory) are
resolved against the config file's own directory. The merged effective
config is snapshotted into the run manifest.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dedup import DedupConfig
from .gateway import (
    DeterministicMockBackend,
    Gateway,
    OpenAICompatBackend,
    PlaybackBackend,
    RecordingBackend,
)
from .search.strategies import StrategyConfig

BACKEND_ROLES = ("policy", "reward", "recommender", "judge", "embedding")


class ConfigError(Exception):
    """Invalid or incomplete run configuration."""


# Generation stays stochastic (distinct Best-of-N samples need it); every
# decision role runs at temperature 0 for stability.
_ROLE_DEFAULTS: dict[str, dict] = {
    "policy": {"temperature": 1.0, "max_tokens": 1024},
    "reward": {"temperature": 0.0, "max_tokens": 512},
    "recommender": {"temperature": 0.0, "max_tokens": 512},
    "judge": {"temperature": 0.0, "max_tokens": 16},
    "embedding": {},
}


@dataclass
class BackendConfig:
    kind: str = "mock"
    model_id: str = "mock"
    base_url: str = ""
    api_key_env: str = ""
    max_parallel: int = 4
    timeout_s: float = 60.0
    temperature: float = 0.0
    max_tokens: int = 512
    transcript: str = ""
    record: str = ""
    dim: int = 64


@dataclass
class EvalSettings:
    c: int = 20
    ks: tuple[int, ...] = (5, 10)
    repeats: int = 3
    seeds: list[int] = field(default_factory=lambda: [101, 202, 303])
    tasks: list[str] = field(
        default_factory=lambda: [
            "direct_ranking",
            "in_context_learning",
            "next_item_prediction",
        ]
    )
    include_baseline: bool = True
    exclude_noncompliant: bool = False
    example_seed: int = 7


@dataclass
class JudgeSettings:
    judges: list[str] = field(default_factory=list)
    pairing_seed: int = 0
    sample_size: int | None = None
    sets_a: str = ""
    sets_b: str = ""


@dataclass
class RunConfig:
    interactions_path: Path
    catalog_path: Path
    output_dir: Path
    cache_dir: Path | None
    min_history: int
    rating_threshold: int
    strategy: StrategyConfig
    dedup: DedupConfig
    eval: EvalSettings
    judge: JudgeSettings
    backends: dict[str, BackendConfig]
    snapshot: dict


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else base / path


def load_run_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Load a TOML run config; ``overrides`` are dotted-key CLI values."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc

    for key, value in (overrides or {}).items():
        section = data
        parts = key.split(".")
        for part in parts[:-1]:
            section = section.setdefault(part, {})
        section[parts[-1]] = value

    base = path.parent
    try:
        dataset = data["dataset"]
        interactions = _resolve(base, dataset["interactions"])
        catalog = _resolve(base, dataset["catalog"])
    except KeyError as exc:
        raise ConfigError(f"missing required dataset key: {exc}") from exc

    output = data.get("output", {})
    output_dir = _resolve(base, output.get("directory", "runs"))
    cache_dir = _resolve(base, output["cache"]) if "cache" in output else output_dir / "cache"

    try:
        strategy = StrategyConfig(**data.get("strategy", {}))
        dedup = DedupConfig(**data.get("dedup", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    eval_raw = dict(data.get("eval", {}))
    if "ks" in eval_raw:
        eval_raw["ks"] = tuple(int(k) for k in eval_raw["ks"])
    try:
        eval_settings = EvalSettings(**eval_raw)
    except TypeError as exc:
        raise ConfigError(f"bad [eval] section: {exc}") from exc
    if len(eval_settings.seeds) != eval_settings.repeats:
        raise ConfigError(
            f"eval.seeds must list {eval_settings.repeats} seeds, "
            f"got {len(eval_settings.seeds)}"
        )
    unknown = set(eval_settings.tasks) - {
        "direct_ranking",
        "in_context_learning",
        "next_item_prediction",
    }
    if unknown:
        raise ConfigError(f"unknown eval tasks: {sorted(unknown)}")

    try:
        judge_settings = JudgeSettings(**data.get("judge", {}))
    except TypeError as exc:
        raise ConfigError(f"bad [judge] section: {exc}") from exc

    backends: dict[str, BackendConfig] = {}
    backend_raw = data.get("backends", {})
    for role in BACKEND_ROLES:
        merged = dict(_ROLE_DEFAULTS.get(role, {}))
        merged.update(backend_raw.get(role, {}))
        try:
            backends[role] = BackendConfig(**merged)
        except TypeError as exc:
            raise ConfigError(f"bad [backends.{role}] section: {exc}") from exc
    for role, backend in backends.items():
        if backend.kind not in ("mock", "openai", "playback"):
            raise ConfigError(f"backends.{role}.kind must be mock, openai, or playback")
        if backend.kind == "openai" and not backend.base_url:
            raise ConfigError(f"backends.{role} needs base_url for kind=openai")
        if backend.kind == "playback" and not backend.transcript:
            raise ConfigError(f"backends.{role} needs transcript for kind=playback")

    return RunConfig(
        interactions_path=interactions,
        catalog_path=catalog,
        output_dir=output_dir,
        cache_dir=cache_dir,
        min_history=int(dataset.get("min_history", 5)),
        rating_threshold=int(dataset.get("rating_threshold", 4)),
        strategy=strategy,
        dedup=dedup,
        eval=eval_settings,
        judge=judge_settings,
        backends=backends,
        snapshot=data,
    )


def build_gateway(config: RunConfig, role: str) -> Gateway:
    """Construct the gateway for one backend role."""
    backend_cfg = config.backends[role]
    base = config.output_dir
    if backend_cfg.kind == "mock":
        backend = DeterministicMockBackend(dim=backend_cfg.dim)
    elif backend_cfg.kind == "playback":
        backend = PlaybackBackend(_resolve(base, backend_cfg.transcript))
    else:
        backend = OpenAICompatBackend(
            base_url=backend_cfg.base_url,
            api_key_env=backend_cfg.api_key_env or None,
            timeout_s=backend_cfg.timeout_s,
        )
    if backend_cfg.record:
        backend = RecordingBackend(backend, _resolve(base, backend_cfg.record))
    return Gateway(
        backend,
        cache_dir=config.cache_dir,
        max_parallel=backend_cfg.max_parallel,
    )

"""Pipeline configuration: nested dataclasses loaded from JSON or flat ``key=value`` files."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .align import DPO_LR, SFT_LR, TrainConfig
from .decode import DecodeConfig

ARTIFACTS_ENV = "GENR_ARTIFACTS"


@dataclass
class ModelConfig:
    d: int = 32
    k: int = 3
    h: int = 64
    init_scale: float = 0.1


@dataclass
class PipelineConfig:
    catalog: str = "data/catalog.jsonl"
    clicks: str = "data/clicks.tsv"
    lexicon: str = "data/lexicon.txt"
    artifacts: str = "artifacts"
    span_len: int = 8
    task: str = "multi-span"  # or "title" (query2title baseline)
    holdout: float = 0.2
    sample_rate: int = 8
    pref_ratio: int = 1
    eval_ks: list[int] = field(default_factory=lambda: [10, 50])
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    sft: TrainConfig = field(default_factory=lambda: TrainConfig(lr=SFT_LR))
    dpo: TrainConfig = field(default_factory=lambda: TrainConfig(lr=DPO_LR))
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    def __post_init__(self):
        if self.span_len < 2:
            raise ValueError("span_len must be >= 2")
        if self.task not in ("multi-span", "title"):
            raise ValueError("task must be 'multi-span' or 'title'")
        if not 0.0 < self.holdout < 1.0:
            raise ValueError("holdout must be in (0, 1)")

    @property
    def artifacts_dir(self) -> Path:
        return Path(os.environ.get(ARTIFACTS_ENV) or self.artifacts)

    def decode_config(self) -> DecodeConfig:
        """Decode settings with the default max length filled in (l + 1 for spans)."""
        dc = dataclasses.replace(self.decode)
        if dc.max_len is None and self.task == "multi-span":
            dc.max_len = self.span_len + 1
        return dc

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(value: Any, current: Any, name: str) -> Any:
    if isinstance(value, str):
        if isinstance(current, bool):
            return value.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(current, int) and not isinstance(current, bool):
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, list):
            return [int(v) for v in value.replace(",", " ").split()]
        if current is None:
            v = value.strip()
            if v.lower() in ("none", "null", ""):
                return None
            try:
                return int(v)
            except ValueError:
                return v
    if isinstance(current, float) and isinstance(value, int):
        return float(value)
    return value


def _apply(obj: Any, key: str, value: Any) -> Any:
    head, _, rest = key.partition(".")
    names = {f.name for f in dataclasses.fields(obj)}
    if head not in names:
        raise KeyError(f"unknown config key {key!r}")
    current = getattr(obj, head)
    if rest:
        if not dataclasses.is_dataclass(current):
            raise KeyError(f"config key {key!r} descends into a scalar")
        return dataclasses.replace(obj, **{head: _apply(current, rest, value)})
    if dataclasses.is_dataclass(current):
        if not isinstance(value, dict):
            raise KeyError(f"config key {key!r} expects a mapping")
        for k, v in value.items():
            current = _apply(current, k, v)
        return dataclasses.replace(obj, **{head: current})
    return dataclasses.replace(obj, **{head: _coerce(value, current, key)})


def apply_overrides(cfg: PipelineConfig, overrides: dict[str, Any]) -> PipelineConfig:
    for k, v in overrides.items():
        cfg = _apply(cfg, k, v)
    return cfg


def parse_text(text: str) -> dict[str, Any]:
    """JSON object, or flat ``key=value`` lines (``#`` comments, dotted keys)."""
    stripped = text.strip()
    if stripped.startswith("{"):
        return json.loads(stripped)
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        p = Path(path)
        raw = parse_text(p.read_text(encoding="utf-8"))
        cfg = apply_overrides(cfg, raw)
        # relative data paths resolve against the config file's directory
        base = p.resolve().parent
        for name in ("catalog", "clicks", "lexicon", "artifacts"):
            val = getattr(cfg, name)
            if not Path(val).is_absolute():
                cfg = dataclasses.replace(cfg, **{name: str(base / val)})
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def digest(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]

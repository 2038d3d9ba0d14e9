"""Run configuration: one JSON file, overridable from the command line.

Secrets never live in the file; backends name the environment variable that
holds their API key.
"""

from __future__ import annotations

import dataclasses
import importlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .gateway import (
    DEFAULT_CONCURRENCY,
    DETECTOR_TEMPERATURE,
    Backend,
    MockBackend,
    OpenAIBackend,
    ReplayBackend,
    ReplayStore,
)

REPLAY_MODES = ("live", "record", "replay-strict")
BACKEND_KINDS = ("openai", "mock")
STRATEGIES = ("eavit", "baseline")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass
class BackendSpec:
    kind: str = "openai"
    model: str = ""
    base_url: str = ""
    api_key_env: str | None = "OPENAI_API_KEY"
    max_concurrency: int = DEFAULT_CONCURRENCY
    max_attempts: int = 3
    script: str | None = None
    # "module:factory"; factory() returns a request -> reply callable
    responder: str | None = None

    def validate(self, label: str, mode: str) -> list[str]:
        errs = []
        if self.kind not in BACKEND_KINDS:
            errs.append(f"{label}.kind must be one of {BACKEND_KINDS}, got {self.kind!r}")
        if not self.model:
            errs.append(f"{label}.model is required")
        if self.kind == "openai" and mode != "replay-strict" and not self.base_url:
            errs.append(f"{label}.base_url is required for live calls")
        if self.kind == "mock" and mode != "replay-strict":
            if bool(self.script) == bool(self.responder):
                errs.append(f"{label}: a mock backend needs exactly one of script or responder")
            elif self.script and not Path(self.script).exists():
                errs.append(f"{label}.script not found: {self.script}")
        if self.max_concurrency < 1:
            errs.append(f"{label}.max_concurrency must be >= 1")
        return errs

    def build(self) -> Backend:
        if self.kind == "mock":
            if self.responder:
                module, _, attr = self.responder.partition(":")
                return MockBackend(getattr(importlib.import_module(module), attr)(), model=self.model)
            script = json.loads(Path(self.script).read_text(encoding="utf-8"))  # type: ignore[arg-type]
            return MockBackend(script, model=self.model)
        return OpenAIBackend(
            self.base_url,
            self.model,
            api_key_env=self.api_key_env,
            max_concurrency=self.max_concurrency,
            max_attempts=self.max_attempts,
        )


@dataclass
class SamplingSpec:
    L: int = 5
    temperature: float = DETECTOR_TEMPERATURE


@dataclass
class ThresholdSpec:
    p_low: float = 0.2
    p_high: float = 0.8


@dataclass
class StrategySpec:
    kind: str = "eavit"
    batch_size: int | None = None
    cot: bool = False
    shuffle_seed: int | None = None


@dataclass
class DatagenSpec:
    mode: str = "emit"
    count: int = 100
    max_calls: int | None = None
    k: int = 3
    per_value: int = 10
    dedup_threshold: float = 0.7
    include_reflection: bool = True
    explanation_cap: int = 20


@dataclass
class PersonaSpec:
    wvs_answers: str | None = None
    min_texts: int = 3
    topics: list[str] | None = None


@dataclass
class RunConfig:
    value_system: str = "schwartz"
    detector: BackendSpec = field(default_factory=BackendSpec)
    llm: BackendSpec = field(default_factory=BackendSpec)
    sampling: SamplingSpec = field(default_factory=SamplingSpec)
    thresholds: ThresholdSpec = field(default_factory=ThresholdSpec)
    strategy: StrategySpec = field(default_factory=StrategySpec)
    dataset: str | None = None
    output_dir: str = "runs/out"
    replay_mode: str = "live"
    replay_store: str | None = None
    workers: int = 1
    seed: int = 0
    final_cot: bool = False
    repeats: int = 10
    limit: int | None = None
    datagen: DatagenSpec = field(default_factory=DatagenSpec)
    persona: PersonaSpec = field(default_factory=PersonaSpec)

    # -- serialisation ------------------------------------------------------------------

    def to_json(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> RunConfig:
        return _from_dict(cls, obj, "")

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    def override(self, dotted: str, value: Any) -> None:
        """Set ``a.b.c`` to ``value``; the path must already exist."""
        target: Any = self
        parts = dotted.split(".")
        for p in parts[:-1]:
            if not hasattr(target, p):
                raise ConfigError([f"unknown config key {dotted!r}"])
            target = getattr(target, p)
        if not dataclasses.is_dataclass(target) or parts[-1] not in {f.name for f in dataclasses.fields(target)}:
            raise ConfigError([f"unknown config key {dotted!r}"])
        setattr(target, parts[-1], value)

    # -- checks -----------------------------------------------------------------------------

    @property
    def store_path(self) -> Path:
        return Path(self.replay_store) if self.replay_store else Path(self.output_dir) / "replay.jsonl"

    def validate(self, command: str = "identify", system_size: int | None = None) -> list[str]:
        errs: list[str] = []
        t = self.thresholds
        if not (isinstance(t.p_low, (int, float)) and isinstance(t.p_high, (int, float)) and 0 < t.p_low < t.p_high < 1):
            errs.append(f"thresholds must satisfy 0 < p_low < p_high < 1 (got p_low={t.p_low}, p_high={t.p_high})")
        if not isinstance(self.sampling.L, int) or self.sampling.L < 1:
            errs.append(f"sampling.L must be an integer >= 1 (got {self.sampling.L})")
        if self.sampling.temperature < 0:
            errs.append("sampling.temperature must be >= 0")
        if self.replay_mode not in REPLAY_MODES:
            errs.append(f"replay_mode must be one of {REPLAY_MODES}, got {self.replay_mode!r}")
        elif self.replay_mode == "replay-strict" and not self.store_path.exists():
            errs.append(f"replay store not found: {self.store_path}")
        if self.workers < 1:
            errs.append("workers must be >= 1")
        if self.value_system not in ("", "schwartz") and not Path(self.value_system).exists():
            errs.append(f"value system file not found: {self.value_system}")
        s = self.strategy
        if s.kind not in STRATEGIES:
            errs.append(f"strategy.kind must be one of {STRATEGIES}, got {s.kind!r}")
        elif s.kind == "baseline":
            if s.batch_size is None:
                errs.append("strategy.batch_size is required for the baseline strategy")
            elif system_size is not None and not 1 <= s.batch_size <= system_size:
                errs.append(f"strategy.batch_size must be in [1, {system_size}] (got {s.batch_size})")

        needs_detector = command in ("identify", "consistency", "persona") and s.kind == "eavit"
        needs_llm = command in ("identify", "consistency", "persona") or (
            command == "datagen" and self.datagen.mode in ("explain", "icl", "targeted")
        )
        if needs_detector:
            errs.extend(self.detector.validate("detector", self.replay_mode))
        if needs_llm:
            errs.extend(self.llm.validate("llm", self.replay_mode))
        if command in ("identify", "consistency", "datagen", "eval"):
            if not self.dataset:
                errs.append("dataset is required")
            elif not Path(self.dataset).exists():
                errs.append(f"dataset not found: {self.dataset}")
        if command == "consistency" and self.repeats < 2:
            errs.append(f"repeats must be >= 2 (got {self.repeats})")
        if command == "datagen":
            d = self.datagen
            if d.mode not in ("explain", "icl", "targeted", "emit"):
                errs.append(f"datagen.mode must be explain|icl|targeted|emit, got {d.mode!r}")
            if not 0 < d.dedup_threshold <= 1:
                errs.append("datagen.dedup_threshold must be in (0, 1]")
        if command == "persona":
            if not self.persona.wvs_answers:
                errs.append("persona.wvs_answers is required")
            elif not Path(self.persona.wvs_answers).exists():
                errs.append(f"WVS answers file not found: {self.persona.wvs_answers}")
        return errs

    def backend(self, which: str, store: ReplayStore | None = None) -> Backend:
        """Build the ``detector`` or ``llm`` backend wrapped for the replay mode.

        Pass one ``store`` to every backend of a run so that all recording
        goes through a single writer.
        """
        spec: BackendSpec = getattr(self, which)
        if self.replay_mode == "live":
            return spec.build()
        store = store or ReplayStore(self.store_path)
        if self.replay_mode == "replay-strict":
            return ReplayBackend(store, None, strict=True, model=spec.model)
        return ReplayBackend(store, spec.build(), strict=False)


def _from_dict(cls: type, obj: dict[str, Any], prefix: str):
    if not isinstance(obj, dict):
        raise ConfigError([f"{prefix or 'config'} must be an object"])
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = [k for k in obj if k not in fields]
    if unknown:
        raise ConfigError([f"unknown config key {prefix}{k!r}" for k in unknown])
    kwargs = {}
    nested = {
        "detector": BackendSpec,
        "llm": BackendSpec,
        "sampling": SamplingSpec,
        "thresholds": ThresholdSpec,
        "strategy": StrategySpec,
        "datagen": DatagenSpec,
        "persona": PersonaSpec,
    }
    for k, v in obj.items():
        if k in nested and cls is RunConfig:
            kwargs[k] = _from_dict(nested[k], v, f"{k}.")
        else:
            kwargs[k] = v
    return cls(**kwargs)

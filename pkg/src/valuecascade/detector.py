"""Detector stage: repeated sampling of the local model and aggregation of the
samples into per-value relevance probabilities."""

from __future__ import annotations

import json
import re
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .gateway import DETECTOR_TEMPERATURE, Backend, ChatExchange, ChatRequest
from .prompts import render_detector_prompt
from .values import LabelVector, ValueSystem

_ENTRY_SPLIT = re.compile(r"(?:^|[;\n])\s*\(\d+\)\s*")
_EXPLANATION = re.compile(r"\bexplanation\s*:", re.IGNORECASE)
_TRIM = " \t\r\n.,;:!?'\"`*"


class DetectorError(RuntimeError):
    def __init__(self, message: str, sample_index: int):
        super().__init__(message)
        self.sample_index = sample_index


@dataclass(frozen=True)
class DetectorSample:
    labels: LabelVector
    explanations: dict[str, str] = field(default_factory=dict)
    raw: str = ""
    warnings: tuple[str, ...] = ()

    @property
    def parse_failed(self) -> bool:
        return any(w.startswith("unparseable") for w in self.warnings)


@dataclass(frozen=True)
class SamplingConfig:
    L: int = 5
    temperature: float = DETECTOR_TEMPERATURE
    seed_policy: str = "sample-index"
    max_output_tokens: int = 512
    max_workers: int = 1

    def __post_init__(self) -> None:
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class RelevanceEstimate:
    probs: tuple[float, ...]
    L_used: int
    counts: tuple[int, ...] = ()

    def exact(self, i: int) -> Fraction:
        return Fraction(self.counts[i], self.L_used)


def normalize_name(name: str) -> str:
    return " ".join(name.strip(_TRIM).split()).casefold()


def parse_detector_response(raw: str, system: ValueSystem) -> DetectorSample:
    roster = {normalize_name(n): n for n in system.names}
    chunks = _ENTRY_SPLIT.split(raw)
    entries = [c for c in chunks[1:] if c.strip()]
    if not entries:
        return DetectorSample(LabelVector.zeros(system), {}, raw, ("unparseable response: no numbered entries",))

    warnings: list[str] = []
    found: dict[str, str] = {}
    for entry in entries:
        m = _EXPLANATION.search(entry)
        if m:
            name_part, expl = entry[: m.start()], entry[m.end():]
        else:
            name_part, expl = entry, ""
        name = roster.get(normalize_name(name_part))
        if name is None:
            warnings.append(f"unknown value name {name_part.strip(_TRIM)!r}")
            continue
        if name in found:
            continue
        found[name] = " ".join(expl.split()).rstrip(";").strip()
    labels = LabelVector.from_names(found, system)
    explanations = {n: found[n] for n in system.names if n in found and found[n]}
    return DetectorSample(labels, explanations, raw, tuple(warnings))


def detector_request(system: ValueSystem, text: str, model: str, config: SamplingConfig, tag: str) -> ChatRequest:
    return ChatRequest.user(
        model,
        render_detector_prompt(system, text),
        temperature=config.temperature,
        max_output_tokens=config.max_output_tokens,
        sample_tag=tag,
    )


def sample_detector_exchanges(
    backend: Backend,
    system: ValueSystem,
    text: str,
    config: SamplingConfig,
    tag_prefix: str = "",
) -> list[tuple[DetectorSample, ChatExchange]]:
    """Draw ``config.L`` completions of the detector prompt, in index order."""

    def one(j: int) -> tuple[DetectorSample, ChatExchange]:
        req = detector_request(system, text, backend.model, config, f"{tag_prefix}{j}")
        try:
            ex = backend.complete(req)
        except Exception as exc:
            raise DetectorError(f"detector sample {j} failed: {exc}", j) from exc
        return parse_detector_response(ex.response_text, system), ex

    if config.max_workers <= 1 or config.L == 1:
        return [one(j) for j in range(config.L)]
    with ThreadPoolExecutor(max_workers=min(config.max_workers, config.L)) as pool:
        return list(pool.map(one, range(config.L)))


def sample_detector(backend: Backend, system: ValueSystem, text: str, config: SamplingConfig) -> list[DetectorSample]:
    return [s for s, _ in sample_detector_exchanges(backend, system, text, config)]


def aggregate(samples: Sequence[DetectorSample]) -> RelevanceEstimate:
    if not samples:
        raise ValueError("aggregate needs at least one sample")
    first = samples[0].labels
    for s in samples[1:]:
        if s.labels.system_name != first.system_name or len(s.labels) != len(first):
            raise ValueError("samples come from different value systems")
    L = len(samples)
    counts = tuple(sum(s.labels[i] for s in samples) for i in range(len(first)))
    return RelevanceEstimate(tuple(c / L for c in counts), L, counts)


def dump_samples(path: str | Path, instance_id: str, samples: Sequence[DetectorSample], system: ValueSystem) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for j, s in enumerate(samples):
            row = {"id": instance_id, "sample": j, "raw": s.raw, "labels": s.labels.names(system), "warnings": list(s.warnings)}
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")

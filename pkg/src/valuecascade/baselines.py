"""LLM-only comparison strategies: single-step, k-step batched and sequential
prompting, optionally with the chain-of-thought template."""

from __future__ import annotations

import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .gateway import FINAL_TEMPERATURE, Backend, ChatExchange, ChatRequest, sum_usage
from .pipeline import FinalResult, StageError, parse_final_response
from .prompts import render_baseline_prompt
from .values import LabelVector, ValueSystem


@dataclass(frozen=True)
class StrategyConfig:
    batch_size: int
    cot: bool = False
    shuffle_seed: int | None = None
    max_workers: int = 1
    max_output_tokens: int = 2048

    def validate(self, system: ValueSystem) -> None:
        if not 1 <= self.batch_size <= len(system):
            raise ValueError(f"batch_size must be in [1, {len(system)}], got {self.batch_size}")

    @property
    def label(self) -> str:
        return f"baseline:batch={self.batch_size}{',cot' if self.cot else ''}"


def batches(system: ValueSystem, config: StrategyConfig) -> list[list[int]]:
    order = list(range(len(system)))
    if config.shuffle_seed is not None:
        random.Random(config.shuffle_seed).shuffle(order)
    k = config.batch_size
    return [order[i : i + k] for i in range(0, len(order), k)]


def call_count(system: ValueSystem, config: StrategyConfig) -> int:
    return math.ceil(len(system) / config.batch_size)


def run_strategy(backend: Backend, system: ValueSystem, text: str, config: StrategyConfig, sample_tag: str = "") -> FinalResult:
    config.validate(system)
    chunks = batches(system, config)

    def one(b: int) -> ChatExchange:
        values = [system[i] for i in chunks[b]]
        req = ChatRequest.user(
            backend.model,
            render_baseline_prompt(values, text, config.cot),
            temperature=FINAL_TEMPERATURE,
            max_output_tokens=config.max_output_tokens,
            sample_tag=f"{sample_tag}b{b}" if sample_tag else "",
        )
        try:
            return backend.complete(req)
        except Exception as exc:
            raise StageError(f"baseline batch {b}", exc) from exc

    if config.max_workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
            exchanges = list(pool.map(one, range(len(chunks))))
    else:
        exchanges = [one(b) for b in range(len(chunks))]

    provenance = ["llm_irrelevant"] * len(system)
    warnings: list[str] = []
    for idx, ex in zip(chunks, exchanges):
        parsed = parse_final_response(ex.response_text, [system[i] for i in idx])
        warnings.extend(parsed.warnings)
        for i in idx:
            if parsed.verdicts.get(system[i].name) == "relevant":
                provenance[i] = "llm_relevant"
    labels = LabelVector(tuple(int(p == "llm_relevant") for p in provenance), system.name)
    usage = sum_usage(ex.usage for ex in exchanges)
    return FinalResult(
        labels,
        tuple(provenance),
        usage,
        len(system),
        llm_usage=usage,
        llm_calls=len(exchanges),
        warnings=tuple(warnings),
        exchanges=tuple(exchanges),
    )

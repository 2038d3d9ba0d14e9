"""Candidate partitioning and final LLM identification.

The detector estimate splits values three ways: above ``p_high`` they are
accepted outright, below ``p_low`` dropped, and everything in between is sent
to the stronger model in one joint prompt.
"""

from __future__ import annotations

import re
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Literal

from .detector import RelevanceEstimate, SamplingConfig, aggregate, sample_detector_exchanges
from .gateway import FINAL_TEMPERATURE, Backend, ChatExchange, ChatRequest, Usage, sum_usage
from .metrics import ConsistencyReport, consistency_variance
from .prompts import render_final_prompt
from .values import LabelVector, ValueDef, ValueSystem

Provenance = Literal["detector_confirmed", "llm_relevant", "llm_irrelevant", "detector_rejected"]
POSITIVE = ("detector_confirmed", "llm_relevant")

Verdict = Literal["relevant", "irrelevant"]


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PartitionConfig:
    p_low: float = 0.2
    p_high: float = 0.8

    def __post_init__(self) -> None:
        if not (0 < self.p_low < self.p_high < 1):
            raise ValueError(f"thresholds must satisfy 0 < p_low < p_high < 1, got {self.p_low}, {self.p_high}")


@dataclass(frozen=True)
class CandidatePartition:
    confirmed: frozenset[int]
    candidates: frozenset[int]
    rejected: frozenset[int]

    def __post_init__(self) -> None:
        if self.confirmed & self.candidates or self.confirmed & self.rejected or self.candidates & self.rejected:
            raise ValueError("partition cells must be disjoint")


@dataclass(frozen=True)
class FinalResult:
    labels: LabelVector
    provenance: tuple[str, ...]
    usage_total: Usage
    candidate_count: int
    llm_usage: Usage = Usage()
    detector_usage: Usage = Usage()
    llm_calls: int = 0
    warnings: tuple[str, ...] = ()
    exchanges: tuple[ChatExchange, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self) -> None:
        for lab, prov in zip(self.labels.labels, self.provenance):
            if lab != (prov in POSITIVE):
                raise ValueError(f"label {lab} inconsistent with provenance {prov}")


def partition(estimate: RelevanceEstimate, config: PartitionConfig) -> CandidatePartition:
    confirmed, candidates, rejected = set(), set(), set()
    for i, p in enumerate(estimate.probs):
        if p > config.p_high:
            confirmed.add(i)
        elif p >= config.p_low:
            candidates.add(i)
        else:
            rejected.add(i)
    return CandidatePartition(frozenset(confirmed), frozenset(candidates), frozenset(rejected))


# -- final response parsing ----------------------------------------------------------------

_LINE_VERDICT = re.compile(
    r"^\s*(?:[-*•]\s*|\d+[.)]\s*|\(\d+\)\s*)?\**(?P<name>.+?)\**\s+[-–—]\s+['\"“‘*]*(?P<verdict>relevant|irrelevant)\b",
    re.IGNORECASE,
)
_COT_VERDICT = re.compile(
    r"I identify\s+(?P<name>.+?)\s+as\s+['\"“‘*]*(?P<verdict>relevant|irrelevant)\b",
    re.IGNORECASE,
)
_NAME_TRIM = " \t.,;:'\"`*“”‘’"


def _norm(name: str) -> str:
    return " ".join(name.strip(_NAME_TRIM).split()).casefold()


@dataclass
class VerdictParse:
    verdicts: dict[str, Verdict]
    unresolved: list[str]
    warnings: list[str]


def parse_final_response(raw: str, candidates: Sequence[ValueDef]) -> VerdictParse:
    """Extract a Relevant/Irrelevant verdict per candidate.

    Both the ``Name - Relevant`` line format and the chain-of-thought closing
    sentence ``I identify Name as 'Relevant'`` are recognised; when a
    candidate is judged more than once the last verdict wins.
    """
    by_norm = {_norm(v.name): v.name for v in candidates}
    hits: list[tuple[int, str, str]] = []
    for m in _COT_VERDICT.finditer(raw):
        hits.append((m.start(), m.group("name"), m.group("verdict")))
    offset = 0
    for line in raw.splitlines(keepends=True):
        m = _LINE_VERDICT.match(line)
        if m and not _COT_VERDICT.search(line):
            hits.append((offset + m.start(), m.group("name"), m.group("verdict")))
        offset += len(line)
    hits.sort(key=lambda h: h[0])

    verdicts: dict[str, Verdict] = {}
    warnings: list[str] = []
    for _, name, verdict in hits:
        canonical = by_norm.get(_norm(name))
        if canonical is None:
            warnings.append(f"verdict for non-candidate value {name.strip(_NAME_TRIM)!r} ignored")
            continue
        verdicts[canonical] = verdict.lower()  # type: ignore[assignment]
    unresolved = [v.name for v in candidates if v.name not in verdicts]
    warnings.extend(f"no verdict for candidate {n!r}; defaulting to irrelevant" for n in unresolved)
    return VerdictParse(verdicts, unresolved, warnings)


# -- stages ------------------------------------------------------------------------------------


def final_request(model: str, candidates: Sequence[ValueDef], text: str, cot: bool, tag: str = "", max_output_tokens: int = 1024) -> ChatRequest:
    return ChatRequest.user(
        model,
        render_final_prompt(candidates, text, cot),
        temperature=FINAL_TEMPERATURE,
        max_output_tokens=max_output_tokens,
        sample_tag=tag,
    )


def finalize(
    backend: Backend,
    system: ValueSystem,
    text: str,
    part: CandidatePartition,
    cot: bool = False,
    sample_tag: str = "",
) -> FinalResult:
    n = len(system)
    provenance: list[str] = []
    for i in range(n):
        if i in part.confirmed:
            provenance.append("detector_confirmed")
        elif i in part.rejected:
            provenance.append("detector_rejected")
        else:
            provenance.append("llm_irrelevant")
    cand_idx = sorted(part.candidates)
    if not cand_idx:
        labels = LabelVector.from_indices(part.confirmed, system)
        return FinalResult(labels, tuple(provenance), Usage(), 0)

    candidates = [system[i] for i in cand_idx]
    exchange = backend.complete(final_request(backend.model, candidates, text, cot, sample_tag))
    parsed = parse_final_response(exchange.response_text, candidates)
    for i in cand_idx:
        if parsed.verdicts.get(system[i].name) == "relevant":
            provenance[i] = "llm_relevant"
    labels = LabelVector(tuple(int(p in POSITIVE) for p in provenance), system.name)
    return FinalResult(
        labels,
        tuple(provenance),
        exchange.usage,
        len(cand_idx),
        llm_usage=exchange.usage,
        llm_calls=1,
        warnings=tuple(parsed.warnings),
        exchanges=(exchange,),
    )


@dataclass(frozen=True)
class IdentifyTrace:
    """Intermediate outputs of one :func:`identify` run."""

    result: FinalResult
    first_sample: LabelVector
    estimate: RelevanceEstimate
    partition: CandidatePartition
    parse_warnings: int


def identify_traced(
    backend_detector: Backend,
    backend_llm: Backend,
    system: ValueSystem,
    text: str,
    sampling: SamplingConfig | None = None,
    thresholds: PartitionConfig | None = None,
    cot: bool = False,
    tag_prefix: str = "",
) -> IdentifyTrace:
    sampling = sampling or SamplingConfig()
    thresholds = thresholds or PartitionConfig()
    try:
        drawn = sample_detector_exchanges(backend_detector, system, text, sampling, tag_prefix)
    except Exception as exc:
        raise StageError("detector", exc) from exc
    samples = [s for s, _ in drawn]
    estimate = aggregate(samples)
    part = partition(estimate, thresholds)
    try:
        fin = finalize(backend_llm, system, text, part, cot, sample_tag=tag_prefix)
    except Exception as exc:
        raise StageError("final", exc) from exc
    det_usage = sum_usage(ex.usage for _, ex in drawn)
    parse_warnings = sum(len(s.warnings) for s in samples)
    result = FinalResult(
        fin.labels,
        fin.provenance,
        det_usage + fin.llm_usage,
        fin.candidate_count,
        llm_usage=fin.llm_usage,
        detector_usage=det_usage,
        llm_calls=fin.llm_calls,
        warnings=tuple(w for s in samples for w in s.warnings) + fin.warnings,
        exchanges=tuple(ex for _, ex in drawn) + fin.exchanges,
    )
    return IdentifyTrace(result, samples[0].labels, estimate, part, parse_warnings)


def identify(
    backend_detector: Backend,
    backend_llm: Backend,
    system: ValueSystem,
    text: str,
    sampling: SamplingConfig | None = None,
    thresholds: PartitionConfig | None = None,
    cot: bool = False,
) -> FinalResult:
    return identify_traced(backend_detector, backend_llm, system, text, sampling, thresholds, cot).result


def result_row(instance_id: str, result: FinalResult, system: ValueSystem, **extra: object) -> dict[str, object]:
    row: dict[str, object] = {
        "id": instance_id,
        "labels": result.labels.names(system),
        "provenance": dict(zip(system.names, result.provenance)),
        "candidate_count": result.candidate_count,
        "prompt_tokens": result.usage_total.prompt_tokens,
        "completion_tokens": result.usage_total.completion_tokens,
        "llm_prompt_tokens": result.llm_usage.prompt_tokens,
        "llm_completion_tokens": result.llm_usage.completion_tokens,
        "detector_prompt_tokens": result.detector_usage.prompt_tokens,
        "detector_completion_tokens": result.detector_usage.completion_tokens,
        "llm_calls": result.llm_calls,
        "warnings": list(result.warnings),
    }
    row.update(extra)
    return row


def consistency_study(
    backend_detector: Backend,
    backend_llm: Backend,
    system: ValueSystem,
    texts: Sequence[str],
    repeats: int = 10,
    sampling: SamplingConfig | None = None,
    thresholds: PartitionConfig | None = None,
    cot: bool = False,
) -> list[ConsistencyReport]:
    """Re-run the pipeline ``repeats`` times per text and report the mean
    per-stage output variance (each stage output seen as an n-dim vector)."""
    if repeats < 2:
        raise ValueError("consistency needs at least 2 repeats")
    totals = {"detector_1": 0.0, "detector_L": 0.0, "candidate_set": 0.0, "final": 0.0}
    for t, text in enumerate(texts):
        runs = [
            identify_traced(backend_detector, backend_llm, system, text, sampling, thresholds, cot, tag_prefix=f"c{t}r{r}s")
            for r in range(repeats)
        ]
        n = len(system)
        totals["detector_1"] += consistency_variance([run.first_sample.labels for run in runs])
        totals["detector_L"] += consistency_variance([run.estimate.probs for run in runs])
        totals["candidate_set"] += consistency_variance(
            [[int(i in run.partition.candidates) for i in range(n)] for run in runs]
        )
        totals["final"] += consistency_variance([run.result.labels.labels for run in runs])
    div = len(texts) or 1
    return [ConsistencyReport(stage, v / div) for stage, v in totals.items()]

"""Training-data factory for the detector.

Explanation augmentation, ICL and targeted generation, ROUGE-L
near-duplicate filtering, definition-reflection records and Alpaca emission.
"""

from __future__ import annotations

import json
import logging
import random
import re
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal

from .detector import parse_detector_response
from .gateway import Backend, ChatRequest, count_tokens
from .metrics import class_distribution
from .prompts import (
    ICL_EXAMPLE_COUNT,
    detector_instruction,
    format_detector_response,
    render_datagen_prompt,
    render_explanation_prompt,
    render_reflection_record,
)
from .values import LabelVector, Record, TextInstance, ValueDef, ValueSystem

log = logging.getLogger(__name__)

AnnotatedRecord = Record
Source = Literal["original", "icl_generated", "targeted_generated"]

EXPLANATION_TOKEN_CAP = 20
GENERATION_TEMPERATURE = 1.0
EMPTY_RESPONSE = "None."


class DatagenError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingRecord:
    instruction: str
    input: str
    output: str

    def __post_init__(self) -> None:
        if not (self.instruction and self.input and self.output):
            raise ValueError("training records need nonempty instruction, input and output")


# -- ROUGE-L -------------------------------------------------------------------------------


def _tokens(s: str) -> list[str]:
    return s.lower().split()


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(a: str, b: str) -> float:
    """LCS F-measure over lowercased whitespace tokens."""
    return _rouge_tokens(_tokens(a), _tokens(b))


def _rouge_tokens(ta: list[str], tb: list[str]) -> float:
    lcs = lcs_length(ta, tb)
    if lcs == 0:
        return 0.0
    precision = lcs / len(tb)
    recall = lcs / len(ta)
    return 2 * precision * recall / (precision + recall)


def _text(item: Record | TextInstance | str) -> str:
    if isinstance(item, Record):
        return item.instance.text
    if isinstance(item, TextInstance):
        return item.text
    return item


def dedup_filter(
    records: Sequence[Record],
    corpus: Iterable[Record | TextInstance | str] = (),
    threshold: float = 0.7,
) -> tuple[list[Record], list[Record]]:
    """Greedy near-duplicate filter in arrival order.

    A record is dropped iff its ROUGE-L against any corpus text or any
    earlier kept record exceeds ``threshold``.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    reference = [_tokens(_text(c)) for c in corpus]
    kept: list[Record] = []
    dropped: list[Record] = []
    for rec in records:
        toks = _tokens(rec.instance.text)
        if any(_rouge_tokens(toks, other) > threshold for other in reference):
            dropped.append(rec)
        else:
            kept.append(rec)
            reference.append(toks)
    return kept, dropped


# -- label statistics ------------------------------------------------------------------------


def least_frequent_values(records: Sequence[Record], system: ValueSystem, k: int) -> list[str]:
    if k > len(system):
        raise ValueError(f"k={k} exceeds system size {len(system)}")
    counts = class_distribution([r.labels for r in records if r.labels is not None], system).counts
    order = sorted(range(len(system)), key=lambda i: (counts[system[i].name], i))
    return [system[i].name for i in order[:k]]


# -- explanation augmentation -------------------------------------------------------------------


@dataclass
class AugmentReport:
    calls: int = 0
    explained: int = 0
    over_cap: list[tuple[str, str]] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)


def augment_explanations(
    backend: Backend,
    system: ValueSystem,
    records: Sequence[Record],
    token_cap: int = EXPLANATION_TOKEN_CAP,
    report: AugmentReport | None = None,
) -> list[Record]:
    """Fill in a short explanation for every positive label that lacks one."""
    rep = report if report is not None else AugmentReport()
    out = []
    for rec in records:
        if rec.labels is None:
            out.append(rec)
            continue
        explanations = dict(rec.explanations)
        try:
            for name in rec.labels.names(system):
                if explanations.get(name):
                    continue
                prompt = render_explanation_prompt(system.get(name), rec.instance.text)
                rep.calls += 1
                ex = backend.complete(ChatRequest.user(backend.model, prompt, temperature=0.0, max_output_tokens=64))
                reply = ex.response_text.strip()
                explanations[name] = reply
                rep.explained += 1
                if count_tokens(reply) > token_cap:
                    rep.over_cap.append((rec.instance.id, name))
        except Exception as exc:
            log.warning("explanation for record %s failed: %s", rec.instance.id, exc)
            rep.skipped.append((rec.instance.id, str(exc)))
            out.append(rec)
            continue
        out.append(replace(rec, explanations=explanations))
    return out


# -- generation -----------------------------------------------------------------------------------

_DATA_SPLIT = re.compile(r"(?:^|\n)\s*DATA\s+\d+\s*:", re.IGNORECASE)
_ICL_ITEM = re.compile(r"^\s*(?P<text>.*?)\s+-\s+(?P<labels>\(1\).*)$", re.DOTALL)
_TARGETED_ITEM = re.compile(
    r"Text\s*-\s*(?P<text>.+?)\s*(?:\n\s*)?Explanation\s*:\s*(?P<expl>.+?)\s*(?=(?:\n\s*(?:Output\s*:\s*)?Text\s*-)|\Z)",
    re.DOTALL | re.IGNORECASE,
)


@dataclass
class GenerationReport:
    calls: int = 0
    kept: int = 0
    dropped: Counter = field(default_factory=Counter)
    budget_exhausted: bool = False
    counts_before: dict[str, int] = field(default_factory=dict)
    counts_after: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "calls": self.calls,
            "kept": self.kept,
            "dropped": dict(sorted(self.dropped.items())),
            "budget_exhausted": self.budget_exhausted,
            "counts_before": self.counts_before,
            "counts_after": self.counts_after,
        }


def parse_icl_reply(reply: str, system: ValueSystem) -> tuple[list[tuple[str, LabelVector, dict[str, str]]], Counter]:
    items, errors = [], Counter()
    for chunk in _DATA_SPLIT.split(reply):
        if not chunk.strip():
            continue
        m = _ICL_ITEM.match(chunk.strip())
        if not m:
            errors["parse"] += 1
            continue
        text = " ".join(m.group("text").split())
        if not text:
            errors["empty_text"] += 1
            continue
        sample = parse_detector_response(m.group("labels"), system)
        if any(w.startswith("unknown value") for w in sample.warnings):
            errors["out_of_roster"] += 1
            continue
        if sample.parse_failed or not sample.labels.positive_indices():
            errors["parse"] += 1
            continue
        items.append((text, sample.labels, dict(sample.explanations)))
    return items, errors


def parse_targeted_reply(reply: str) -> tuple[list[tuple[str, str]], Counter]:
    items, errors = [], Counter()
    for m in _TARGETED_ITEM.finditer(reply):
        text = " ".join(m.group("text").split())
        expl = " ".join(m.group("expl").split())
        if not text:
            errors["empty_text"] += 1
            continue
        items.append((text, expl))
    if not items:
        errors["parse"] += 1
    return items, errors


class SlateRotation:
    """Choose 8-example ICL slates so successive slates cover every value.

    Seeds are picked greedily by how many not-yet-shown values they carry;
    once every coverable value has appeared the cycle restarts.
    """

    def __init__(self, seeds: Sequence[Record], system: ValueSystem, rng: random.Random):
        self.seeds = list(seeds)
        self.system = system
        self.rng = rng
        self.coverable = {i for r in self.seeds for i in r.labels.positive_indices()}
        self.uncovered = set(self.coverable)
        self.cycles = 0

    def next(self) -> list[Record]:
        pool = list(range(len(self.seeds)))
        self.rng.shuffle(pool)
        chosen: list[int] = []
        while len(chosen) < ICL_EXAMPLE_COUNT and self.uncovered:
            best = max(pool, key=lambda j: len(self.uncovered & set(self.seeds[j].labels.positive_indices())))
            gain = set(self.seeds[best].labels.positive_indices()) & self.uncovered
            if not gain:
                break
            chosen.append(best)
            pool.remove(best)
            self.uncovered -= gain
        chosen.extend(pool[: ICL_EXAMPLE_COUNT - len(chosen)])
        if not self.uncovered:
            self.uncovered = set(self.coverable)
            self.cycles += 1
        return [self.seeds[j] for j in chosen]


def _icl_payload(slate: Sequence[Record], system: ValueSystem) -> list[tuple[str, list[tuple[str, str]]]]:
    payload = []
    for rec in slate:
        entries = [(n, rec.explanations.get(n, "")) for n in rec.labels.names(system)]
        payload.append((rec.instance.text, entries))
    return payload


def generate_batch(
    backend: Backend,
    system: ValueSystem,
    kind: Literal["icl", "targeted"],
    inputs: Sequence[Record] | Sequence[ValueDef],
    count: int,
    max_calls: int | None = None,
    seed: int = 0,
    id_prefix: str | None = None,
    report: GenerationReport | None = None,
) -> list[Record]:
    """Call the generator until ``count`` records survive parsing or the
    call budget (default ``3 * count``) runs out."""
    rep = report if report is not None else GenerationReport()
    rng = random.Random(seed)
    budget = max_calls if max_calls is not None else max(3 * count, 1)
    prefix = id_prefix or kind
    out: list[Record] = []

    if kind == "icl":
        seeds = [r for r in inputs if isinstance(r, Record) and r.labels is not None and r.labels.positive_indices()]
        if len(seeds) < ICL_EXAMPLE_COUNT:
            raise DatagenError(f"ICL generation needs at least {ICL_EXAMPLE_COUNT} labeled seed records, got {len(seeds)}")
        for rec in seeds:
            missing = [n for n in rec.labels.names(system) if not rec.explanations.get(n)]
            if missing:
                raise DatagenError(f"seed {rec.instance.id!r} lacks explanations for {missing}")
        rotation = SlateRotation(seeds, system, rng)
    elif kind == "targeted":
        targets = list(inputs)
        if not targets or not all(isinstance(v, ValueDef) for v in targets):
            raise DatagenError("targeted generation needs at least one target value")
        for v in targets:
            system.index(v.name)
        target_labels = LabelVector.from_names([v.name for v in targets], system)
    else:
        raise DatagenError(f"unknown generation kind {kind!r}")

    while len(out) < count:
        if rep.calls >= budget:
            rep.budget_exhausted = True
            log.warning("generation budget of %d calls exhausted with %d/%d records", budget, len(out), count)
            break
        call_no = rep.calls
        rep.calls += 1
        if kind == "icl":
            prompt = render_datagen_prompt("icl", _icl_payload(rotation.next(), system))
        else:
            prompt = render_datagen_prompt("targeted", targets)
        ex = backend.complete(
            ChatRequest.user(backend.model, prompt, temperature=GENERATION_TEMPERATURE, max_output_tokens=1024, sample_tag=f"{prefix}-{call_no}")
        )
        if kind == "icl":
            items, errors = parse_icl_reply(ex.response_text, system)
            rep.dropped.update(errors)
            new = [(t, lab, expl) for t, lab, expl in items]
            source = "icl_generated"
        else:
            pairs, errors = parse_targeted_reply(ex.response_text)
            rep.dropped.update(errors)
            new = [(t, target_labels, {v.name: e for v in targets}) for t, e in pairs]
            source = "targeted_generated"
        for k, (text, labels, expl) in enumerate(new):
            if len(out) >= count:
                break
            inst = TextInstance(f"{prefix}-{call_no}-{k}", text)
            out.append(Record(inst, labels, expl, source))
    rep.kept += len(out)
    return out


def rebalance_round(
    backend: Backend,
    system: ValueSystem,
    records: Sequence[Record],
    k: int,
    per_value: int,
    seed: int = 0,
    report: GenerationReport | None = None,
) -> list[Record]:
    """One targeted round for the ``k`` rarest values.

    Each target gets at most ``per_value`` new records and is never pushed
    past the current most frequent value, so the max/min ratio cannot grow.
    """
    rep = report if report is not None else GenerationReport()
    labelled = [r.labels for r in records if r.labels is not None]
    before = class_distribution(labelled, system)
    rep.counts_before = dict(before.counts)
    top = max(before.counts.values())
    new: list[Record] = []
    for j, name in enumerate(least_frequent_values(records, system, k)):
        want = min(per_value, top - before.counts[name])
        if want <= 0:
            continue
        new.extend(
            generate_batch(backend, system, "targeted", [system.get(name)], want, seed=seed + j, id_prefix=f"targeted-{j}", report=rep)
        )
    after = class_distribution(labelled + [r.labels for r in new], system)
    rep.counts_after = dict(after.counts)
    return new


# -- Alpaca emission -------------------------------------------------------------------------


def detector_training_record(rec: Record, system: ValueSystem, instruction: str | None = None) -> TrainingRecord:
    if rec.labels is None:
        raise DatagenError(f"record {rec.instance.id!r} is unlabeled")
    names = rec.labels.names(system)
    missing = [n for n in names if not rec.explanations.get(n)]
    if missing:
        raise DatagenError(f"record {rec.instance.id!r} lacks explanations for {missing}")
    output = format_detector_response([(n, rec.explanations[n]) for n in names]) if names else EMPTY_RESPONSE
    return TrainingRecord(instruction or detector_instruction(system), rec.instance.text, output)


def emit_alpaca(records: Sequence[Record], system: ValueSystem, include_reflection: bool = False) -> list[TrainingRecord]:
    out: list[TrainingRecord] = []
    if include_reflection:
        out.extend(TrainingRecord(*render_reflection_record(v)) for v in system)
    instruction = detector_instruction(system)
    out.extend(detector_training_record(r, system, instruction) for r in records)
    return out


def write_alpaca(path: str | Path, records: Sequence[TrainingRecord]) -> None:
    doc = [{"instruction": r.instruction, "input": r.input, "output": r.output} for r in records]
    Path(path).write_text(json.dumps(doc, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")

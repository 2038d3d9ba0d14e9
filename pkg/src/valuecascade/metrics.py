"""Evaluation: cell accuracy, macro-F1, class distribution, token reports and
output-consistency variance."""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Literal

from .values import LabelVector, ValueSystem

Stage = Literal["detector_1", "detector_L", "candidate_set", "final"]
STAGES: tuple[str, ...] = ("detector_1", "detector_L", "candidate_set", "final")


def _check(preds: Sequence[LabelVector], golds: Sequence[LabelVector]) -> int:
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} gold vectors")
    width = None
    for p, g in zip(preds, golds):
        if len(p) != len(g) or p.system_name != g.system_name:
            raise ValueError("prediction and gold vectors are not aligned")
        if width is None:
            width = len(g)
        elif len(g) != width:
            raise ValueError("gold vectors have inconsistent lengths")
    return width or 0


def accuracy(preds: Sequence[LabelVector], golds: Sequence[LabelVector]) -> float:
    """Fraction of correct (instance, value) decisions."""
    width = _check(preds, golds)
    cells = len(golds) * width
    if cells == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    correct = sum(int(a == b) for p, g in zip(preds, golds) for a, b in zip(p.labels, g.labels))
    return correct / cells


def f1_score(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def confusion(preds: Sequence[LabelVector], golds: Sequence[LabelVector]) -> list[tuple[int, int, int, int]]:
    """Per-value (tp, fp, fn, tn)."""
    width = _check(preds, golds)
    out = []
    for i in range(width):
        tp = fp = fn = tn = 0
        for p, g in zip(preds, golds):
            a, b = p[i], g[i]
            if a and b:
                tp += 1
            elif a:
                fp += 1
            elif b:
                fn += 1
            else:
                tn += 1
        out.append((tp, fp, fn, tn))
    return out


def macro_f1(
    preds: Sequence[LabelVector], golds: Sequence[LabelVector], system: ValueSystem | None = None
) -> tuple[float, dict[str, float]]:
    table = confusion(preds, golds)
    names = system.names if system is not None else [str(i) for i in range(len(table))]
    if len(names) != len(table):
        raise ValueError("system size does not match label width")
    per_value = {n: f1_score(tp, fp, fn) for n, (tp, fp, fn, _) in zip(names, table)}
    macro = sum(per_value.values()) / len(per_value) if per_value else 0.0
    return macro, per_value


@dataclass(frozen=True)
class Distribution:
    counts: dict[str, int]
    ratio: float | None

    def to_json(self) -> dict[str, Any]:
        return {"counts": self.counts, "max_min_ratio": self.ratio}


def class_distribution(labelsets: Sequence[LabelVector], system: ValueSystem) -> Distribution:
    """Positive count per value plus the max/min count ratio.

    The ratio is ``None`` when the dataset is empty or some value never
    occurs (division by a zero minimum).
    """
    counts = {n: 0 for n in system.names}
    for lab in labelsets:
        if len(lab) != len(system):
            raise ValueError("label vector does not match system size")
        for i in lab.positive_indices():
            counts[system[i].name] += 1
    lo, hi = min(counts.values()), max(counts.values())
    return Distribution(counts, hi / lo if lo > 0 else None)


def consistency_variance(samples: Sequence[Sequence[float]]) -> float:
    """Mean over coordinates of the population variance across samples."""
    if len(samples) < 2:
        raise ValueError("consistency variance needs at least 2 samples")
    vecs = [list(s.labels) if isinstance(s, LabelVector) else list(s) for s in samples]
    width = len(vecs[0])
    if any(len(v) != width for v in vecs) or width == 0:
        raise ValueError("samples must be nonempty vectors of equal length")
    m = len(vecs)
    total = 0.0
    for i in range(width):
        col = [v[i] for v in vecs]
        mean = sum(col) / m
        total += sum((x - mean) ** 2 for x in col) / m
    return total / width


@dataclass(frozen=True)
class ConsistencyReport:
    stage: str
    mean_variance: float

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.mean_variance < 0:
            raise ValueError("variance must be >= 0")


# -- token accounting ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TokenReport:
    samples: int
    mean_online_tokens: float
    mean_online_prompt_tokens: float
    mean_online_completion_tokens: float
    mean_detector_tokens: float
    total_online_tokens: int
    total_detector_tokens: int
    total_llm_calls: int

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


def token_report(results: Sequence[Any]) -> TokenReport:
    """Average online-LLM tokens per sample; detector tokens kept separate.

    Accepts :class:`~valuecascade.pipeline.FinalResult` objects or
    results-file rows (dicts).
    """
    n = len(results)
    op = oc = dp = calls = 0
    for r in results:
        if isinstance(r, Mapping):
            op += r.get("llm_prompt_tokens", 0)
            oc += r.get("llm_completion_tokens", 0)
            dp += r.get("detector_prompt_tokens", 0) + r.get("detector_completion_tokens", 0)
            calls += r.get("llm_calls", 0)
        else:
            op += r.llm_usage.prompt_tokens
            oc += r.llm_usage.completion_tokens
            dp += r.detector_usage.total
            calls += r.llm_calls
    div = n or 1
    return TokenReport(n, (op + oc) / div, op / div, oc / div, dp / div, op + oc, dp, calls)


# -- reports -------------------------------------------------------------------------------------


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    per_value_f1: dict[str, float]
    support: dict[str, int]
    mean_prompt_tokens: float = 0.0
    mean_completion_tokens: float = 0.0
    instances: int = 0
    extra: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return asdict(self)

    def table(self) -> str:
        width = max(len(n) for n in self.per_value_f1)
        lines = [f"{'value':<{width}}  {'F1':>6}  {'support':>7}"]
        for name, f1 in self.per_value_f1.items():
            lines.append(f"{name:<{width}}  {f1:6.3f}  {self.support[name]:7d}")
        lines.append(f"{'macro-F1':<{width}}  {self.macro_f1:6.3f}")
        lines.append(f"{'accuracy':<{width}}  {self.accuracy:6.3f}")
        lines.append(f"instances={self.instances} mean prompt tokens={self.mean_prompt_tokens:.1f} "
                     f"mean completion tokens={self.mean_completion_tokens:.1f}")
        return "\n".join(lines)


def evaluate(
    preds: Sequence[LabelVector],
    golds: Sequence[LabelVector],
    system: ValueSystem,
    results: Sequence[Any] = (),
) -> EvalReport:
    macro, per_value = macro_f1(preds, golds, system)
    support = class_distribution(golds, system).counts
    report = EvalReport(accuracy(preds, golds), macro, per_value, support, instances=len(golds))
    if results:
        tr = token_report(results)
        report.mean_prompt_tokens = tr.mean_online_prompt_tokens
        report.mean_completion_tokens = tr.mean_online_completion_tokens
    return report


def level_table(report: EvalReport, level_map: Mapping[str, str]) -> list[dict[str, Any]]:
    """Plot-ready rows (value, level-1 parent, F1, support)."""
    return [
        {"value": n, "level": level_map.get(n, ""), "f1": f1, "support": report.support[n]}
        for n, f1 in report.per_value_f1.items()
    ]


def write_json(path: str | Path, doc: Any) -> None:
    Path(path).write_text(json.dumps(doc, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")

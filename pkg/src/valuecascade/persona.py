"""Virtual-individual study: WVS questionnaire scoring, per-person aggregation
of text-level predictions and agreement with the questionnaire."""

from __future__ import annotations

import json
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .prompts import frame
from .values import LabelVector, ValueSystem

MIN_TEXTS = 3
AGREEMENT_TOLERANCE = 0.5


@lru_cache(maxsize=None)
def _data(name: str):
    return json.loads(resources.files("valuecascade.data").joinpath(name).read_text(encoding="utf-8"))


def wvs_questions() -> list[dict[str, str]]:
    return list(_data("wvs_questions.json")["questions"])


def question_value_map() -> dict[str, str]:
    return {q["id"]: q["value"] for q in wvs_questions()}


def level1_values() -> list[str]:
    """The ten level-1 values in questionnaire order (v70..v79)."""
    return [q["value"] for q in wvs_questions()]


def level1_map() -> dict[str, str]:
    return dict(_data("schwartz_level1_map.json"))


def persona_topics() -> list[str]:
    return list(_data("persona_topics.json"))


@dataclass(frozen=True)
class WvsAnswer:
    question_id: str
    answer: int
    mapped_value: str = ""

    def __post_init__(self) -> None:
        qmap = question_value_map()
        if self.question_id not in qmap:
            raise ValueError(f"unknown WVS question {self.question_id!r}")
        if self.answer not in range(1, 7):
            raise ValueError(f"WVS answer must be in 1..6, got {self.answer}")
        if not self.mapped_value:
            object.__setattr__(self, "mapped_value", qmap[self.question_id])
        elif self.mapped_value != qmap[self.question_id]:
            raise ValueError(f"{self.question_id} maps to {qmap[self.question_id]}, not {self.mapped_value}")


@dataclass(frozen=True)
class PersonaScore:
    s_real: dict[str, float]
    s_pred: dict[str, int]

    def __post_init__(self) -> None:
        if any(not 0 <= v <= 1 for v in self.s_real.values()):
            raise ValueError("s_real must lie in [0, 1]")
        if any(v not in (0, 1) for v in self.s_pred.values()):
            raise ValueError("s_pred must be 0 or 1")


def wvs_score(answer: int) -> float:
    """Questionnaire answer (1 = very much like me) to a 0-1 value score."""
    if isinstance(answer, bool) or answer not in range(1, 7):
        raise ValueError(f"WVS answer must be an integer in 1..6, got {answer!r}")
    return max((4.5 - answer) / 3.5, 0.0)


def real_scores(answers: Sequence[WvsAnswer]) -> dict[str, float]:
    return {a.mapped_value: wvs_score(a.answer) for a in answers}


def to_level1(labels: LabelVector, system: ValueSystem, mapping: Mapping[str, str] | None = None) -> dict[str, int]:
    """Collapse level-2 labels onto level-1 parents (any positive child wins)."""
    mapping = mapping if mapping is not None else level1_map()
    out = {v: 0 for v in level1_values()}
    for name in labels.names(system):
        parent = mapping[name]
        out[parent] = 1
    return out


def aggregate_individual(per_text: Sequence[Mapping[str, int]], min_texts: int = MIN_TEXTS) -> dict[str, int]:
    """A value is attributed to the person iff at least ``min_texts`` texts show it."""
    counts = {v: 0 for v in level1_values()}
    for labels in per_text:
        for v, x in labels.items():
            counts[v] += int(bool(x))
    return {v: int(c >= min_texts) for v, c in counts.items()}


@dataclass(frozen=True)
class AgreementResult:
    correct: dict[str, bool]
    accuracy: float


def persona_accuracy(score: PersonaScore) -> AgreementResult:
    if set(score.s_real) != set(score.s_pred):
        raise ValueError("s_real and s_pred must cover the same values")
    correct = {v: abs(score.s_pred[v] - score.s_real[v]) < AGREEMENT_TOLERANCE for v in score.s_real}
    return AgreementResult(correct, sum(correct.values()) / len(correct))


def mean_accuracy(results: Sequence[AgreementResult]) -> float:
    flags = [c for r in results for c in r.correct.values()]
    return sum(flags) / len(flags) if flags else 0.0


# -- files and persona prompts ------------------------------------------------------------------


def read_wvs_answers(path: str | Path) -> dict[str, list[WvsAnswer]]:
    """JSON-lines ``{"individual": "...", "answers": {"v70": 2, ...}}``."""
    people: dict[str, list[WvsAnswer]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            pid = str(obj["individual"])
            if pid in people:
                raise ValueError(f"duplicate individual {pid!r}")
            people[pid] = [WvsAnswer(q.lower(), int(a)) for q, a in obj["answers"].items()]
            missing = set(question_value_map()) - {a.question_id for a in people[pid]}
            if missing:
                raise ValueError(f"individual {pid!r} lacks answers for {sorted(missing)}")
    return people


def render_persona_prompt(answers: Sequence[WvsAnswer], topic: str) -> str:
    data = _data("wvs_questions.json")
    texts = {q["id"]: q["text"] for q in data["questions"]}
    lines = [f"{a.question_id.upper()}. {texts[a.question_id]} Answer: {data['answers'][str(a.answer)]} ({a.answer})" for a in answers]
    return frame("persona_statement", preamble=data["preamble"].rstrip(), answers="\n".join(lines), topic=topic)


_EXPLANATION = re.compile(r"Explanation\s*:\s*(?P<text>.+)", re.IGNORECASE | re.DOTALL)


def persona_text(topic: str, reply: str) -> str:
    """Turn a persona reply into an identification input: topic plus view."""
    m = _EXPLANATION.search(reply)
    view = m.group("text") if m else reply
    view = " ".join(view.split())
    if not view:
        raise ValueError(f"empty persona reply for topic {topic!r}")
    return f"{topic.strip()} {view}"

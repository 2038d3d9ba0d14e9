"""Prompt rendering for every template family.

Template text lives in ``data/templates/<version>/`` with ``{slot}``
placeholders; ``manifest.json`` maps each family to its file and slot roster.
Only slots named in the manifest are substituted, so braces inside inserted
text are never re-expanded.
"""

from __future__ import annotations

import json
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Literal

from .values import ValueDef, ValueSystem

TEMPLATE_VERSION = "v1"

Kind = Literal[
    "detector_instruction",
    "final_identify",
    "final_identify_cot",
    "explanation_gen",
    "icl_datagen",
    "targeted_datagen",
    "reflection",
    "baseline_batch",
]
KINDS: tuple[str, ...] = Kind.__args__  # type: ignore[attr-defined]

ICL_EXAMPLE_COUNT = 8

_SLOT_RE = re.compile(r"\{(\w+)\}")


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class PromptFamily:
    kind: str
    template_version: str = TEMPLATE_VERSION

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise PromptError(f"unknown prompt family {self.kind!r}")

    def sections(self) -> dict[str, str]:
        return _load(self.template_version, "families", self.kind)

    @property
    def slots(self) -> list[str]:
        return list(_manifest(self.template_version)["families"][self.kind]["slots"])


@lru_cache(maxsize=None)
def _manifest(version: str) -> dict:
    root = resources.files("valuecascade.data").joinpath("templates", version)
    return json.loads(root.joinpath("manifest.json").read_text(encoding="utf-8"))


@lru_cache(maxsize=None)
def _load(version: str, group: str, name: str) -> dict[str, str]:
    entry = _manifest(version)[group][name]
    raw = resources.files("valuecascade.data").joinpath("templates", version, entry["file"]).read_text(encoding="utf-8")
    sections: dict[str, str] = {}
    current, buf = "body", []
    for line in raw.split("\n"):
        if line.startswith("@@"):
            sections[current] = "\n".join(buf).rstrip("\n")
            current, buf = line[2:].strip(), []
        else:
            buf.append(line)
    sections[current] = "\n".join(buf).rstrip("\n")
    return sections


def fill(template: str, slots: Mapping[str, object]) -> str:
    def sub(m: re.Match) -> str:
        key = m.group(1)
        if key not in slots:
            return m.group(0)
        return str(slots[key])

    out = _SLOT_RE.sub(sub, template)
    return out


def frame(name: str, version: str = TEMPLATE_VERSION, **slots: object) -> str:
    return fill(_load(version, "frames", name)["body"], slots)


def _require_text(text: str) -> None:
    if not text or not text.strip():
        raise PromptError("input text must be nonempty")


def value_roster(system: ValueSystem) -> str:
    return ", ".join(f"'{v.name}'" for v in system)


def value_block(values: Sequence[ValueDef]) -> str:
    return "\n        ".join(f"{v.name}, Definition: {v.definition}" for v in values)


# -- detector --------------------------------------------------------------------------


def detector_instruction(system: ValueSystem, version: str = TEMPLATE_VERSION) -> str:
    body = PromptFamily("detector_instruction", version).sections()["body"]
    return fill(body, {"value_count": len(system), "value_roster": value_roster(system)})


def render_detector_prompt(system: ValueSystem, text: str, version: str = TEMPLATE_VERSION) -> str:
    _require_text(text)
    return frame("alpaca", version, instruction=detector_instruction(system, version), input=text) + "\n"


def format_detector_response(entries: Sequence[tuple[str, str]]) -> str:
    """Numbered ``(k) Value. Explanation: text;`` lines."""
    lines = []
    for k, (name, expl) in enumerate(entries, 1):
        expl = " ".join(expl.split()).rstrip(";")
        lines.append(f"({k}) {name}. Explanation: {expl};")
    return "\n".join(lines)


# -- final identification / baselines ----------------------------------------------------


def render_final_prompt(candidates: Sequence[ValueDef], text: str, cot: bool = False, version: str = TEMPLATE_VERSION) -> str:
    if not candidates:
        raise PromptError("final identification needs at least one candidate value")
    _require_text(text)
    kind = "final_identify_cot" if cot else "final_identify"
    body = PromptFamily(kind, version).sections()["body"]
    return fill(body, {"value_block": value_block(candidates), "input_text": text})


def render_baseline_prompt(values: Sequence[ValueDef], text: str, cot: bool = False, version: str = TEMPLATE_VERSION) -> str:
    if not values:
        raise PromptError("baseline prompt needs at least one value")
    _require_text(text)
    kind = "final_identify_cot" if cot else "baseline_batch"
    body = PromptFamily(kind, version).sections()["body"]
    return fill(body, {"value_block": value_block(values), "input_text": text})


# -- data generation -----------------------------------------------------------------------


def render_explanation_prompt(value: ValueDef, text: str, version: str = TEMPLATE_VERSION) -> str:
    _require_text(text)
    body = PromptFamily("explanation_gen", version).sections()["body"]
    return fill(body, {"value_name": value.name, "definition": value.definition, "input_text": text})


def format_icl_example(index: int, text: str, entries: Sequence[tuple[str, str]]) -> str:
    labels = format_detector_response(entries).replace("\n", " ")
    return f"DATA {index}: {' '.join(text.split())} - {labels}"


def render_datagen_prompt(
    kind: Literal["icl", "targeted"],
    payload: Sequence[tuple[str, Sequence[tuple[str, str]]]] | Sequence[ValueDef],
    version: str = TEMPLATE_VERSION,
) -> str:
    """Render an ICL or targeted generation prompt.

    For ``icl`` the payload is eight ``(text, [(value, explanation), ...])``
    examples. For ``targeted`` it is the list of target :class:`ValueDef`.
    """
    if kind == "icl":
        if len(payload) != ICL_EXAMPLE_COUNT:
            raise PromptError(f"ICL generation takes exactly {ICL_EXAMPLE_COUNT} examples, got {len(payload)}")
        lines = [format_icl_example(i, text, entries) for i, (text, entries) in enumerate(payload, 1)]  # type: ignore[misc]
        body = PromptFamily("icl_datagen", version).sections()["body"]
        return fill(body, {"examples": "\n".join(lines), "next_index": ICL_EXAMPLE_COUNT + 1})
    if kind == "targeted":
        if not payload:
            raise PromptError("targeted generation needs at least one target value")
        body = PromptFamily("targeted_datagen", version).sections()["body"]
        return fill(body, {"value_block": value_block(payload)})  # type: ignore[arg-type]
    raise PromptError(f"unknown datagen kind {kind!r}")


def render_reflection_record(value: ValueDef, version: str = TEMPLATE_VERSION) -> tuple[str, str, str]:
    sections = PromptFamily("reflection", version).sections()
    slots = {"value_name": value.name}
    return fill(sections["body"], slots), fill(sections["input"], slots), value.definition

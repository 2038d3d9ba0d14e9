"""Value systems, text instances, label vectors and dataset I/O.

The canonical on-disk dataset is a JSON-lines file, one record per line::

    {"id": "...", "text": "...", "labels": ["Hedonism", ...],
     "explanations": {"Hedonism": "..."}, "meta": {...}, "source": "original"}

``labels`` lists the names of positive values; a record without a ``labels``
key is unlabeled. The Touché tab-separated layout is handled by
:func:`import_touche`, which converts into the same in-memory shape.
"""

from __future__ import annotations

import csv
import json
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Any

SCHWARTZ_RESOURCE = "schwartz_values.json"
SCHWARTZ_NAME = "schwartz-touche23-level2"


class ValueSystemError(ValueError):
    """Malformed value-system document."""


class DuplicateValueError(ValueSystemError):
    pass


class EmptyDefinitionError(ValueSystemError):
    pass


class DatasetError(ValueError):
    """Problem reading or converting a dataset file."""


class SchemaError(DatasetError):
    pass


class LabelParseError(DatasetError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class ValueDef:
    name: str
    definition: str

    def __post_init__(self) -> None:
        if not self.name or not self.name.strip():
            raise ValueSystemError("value name must be nonempty")
        if not self.definition or not self.definition.strip():
            raise EmptyDefinitionError(f"value {self.name!r} has an empty definition")


@dataclass(frozen=True)
class ValueSystem:
    """Ordered registry of values; the order fixes label-vector indices."""

    values: tuple[ValueDef, ...]
    name: str = "custom"

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise ValueSystemError("a value system needs at least one value")
        seen: set[str] = set()
        for v in self.values:
            if v.name in seen:
                raise DuplicateValueError(f"duplicate value name {v.name!r}")
            seen.add(v.name)

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self) -> Iterator[ValueDef]:
        return iter(self.values)

    def __getitem__(self, i: int) -> ValueDef:
        return self.values[i]

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.values]

    def index(self, name: str) -> int:
        for i, v in enumerate(self.values):
            if v.name == name:
                return i
        raise KeyError(name)

    def get(self, name: str) -> ValueDef:
        return self.values[self.index(name)]

    def to_document(self) -> dict[str, list[str]]:
        return {v.name: [v.definition] for v in self.values}


@dataclass(frozen=True)
class TextInstance:
    id: str
    text: str
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise DatasetError(f"instance {self.id!r} has empty text")
        object.__setattr__(self, "meta", MappingProxyType(dict(self.meta)))


@dataclass(frozen=True)
class LabelVector:
    labels: tuple[int, ...]
    system_name: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(int(x) for x in self.labels))
        for x in self.labels:
            if x not in (0, 1):
                raise ValueError(f"label entries must be 0 or 1, got {x}")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> int:
        return self.labels[i]

    @classmethod
    def zeros(cls, system: ValueSystem) -> LabelVector:
        return cls((0,) * len(system), system.name)

    @classmethod
    def from_names(cls, names: Iterable[str], system: ValueSystem) -> LabelVector:
        wanted = set(names)
        unknown = wanted - set(system.names)
        if unknown:
            raise KeyError(f"unknown value names: {sorted(unknown)}")
        return cls(tuple(int(n in wanted) for n in system.names), system.name)

    @classmethod
    def from_indices(cls, indices: Iterable[int], system: ValueSystem) -> LabelVector:
        on = set(indices)
        return cls(tuple(int(i in on) for i in range(len(system))), system.name)

    def positive_indices(self) -> list[int]:
        return [i for i, x in enumerate(self.labels) if x]

    def names(self, system: ValueSystem) -> list[str]:
        check_aligned(self, system)
        return [system.values[i].name for i in self.positive_indices()]


def check_aligned(labels: LabelVector, system: ValueSystem) -> None:
    if len(labels) != len(system) or labels.system_name != system.name:
        raise ValueError(
            f"label vector ({labels.system_name}, n={len(labels)}) does not match "
            f"system ({system.name}, n={len(system)})"
        )


# -- value-system documents ---------------------------------------------------


def _pairs_no_dupes(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in pairs:
        if k in out:
            raise DuplicateValueError(f"duplicate value name {k!r}")
        out[k] = v
    return out


def load_value_system(source: str | Path | Mapping[str, Any], name: str | None = None) -> ValueSystem:
    """Build a :class:`ValueSystem` from a name -> [definition] document.

    ``source`` may be a path, a JSON string, or an already-parsed mapping.
    Multi-element definition lists are joined with a single space.
    """
    if isinstance(source, Mapping):
        doc: Any = source
        default_name = "custom"
    else:
        text = source
        default_name = "custom"
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            path = Path(source)
            text = path.read_text(encoding="utf-8")
            default_name = path.stem
        try:
            doc = json.loads(text, object_pairs_hook=_pairs_no_dupes)
        except json.JSONDecodeError as exc:
            raise ValueSystemError(f"value-system document is not valid JSON: {exc}") from exc

    if not isinstance(doc, Mapping) or not doc:
        raise ValueSystemError("value-system document must be a nonempty map of name -> [definition]")
    values = []
    for key, defs in doc.items():
        if not isinstance(key, str):
            raise ValueSystemError(f"value name must be a string, got {key!r}")
        if isinstance(defs, str) or not isinstance(defs, Sequence) or not all(isinstance(d, str) for d in defs):
            raise ValueSystemError(f"definition of {key!r} must be a list of strings")
        definition = " ".join(d.strip() for d in defs if d.strip())
        if not definition:
            raise EmptyDefinitionError(f"value {key!r} has an empty definition")
        values.append(ValueDef(key, definition))
    return ValueSystem(tuple(values), name=name or default_name)


def schwartz_system() -> ValueSystem:
    """The bundled 20-value level-2 Schwartz system (Touché23 wording)."""
    text = resources.files("valuecascade.data").joinpath(SCHWARTZ_RESOURCE).read_text(encoding="utf-8")
    return load_value_system(text, name=SCHWARTZ_NAME)


def load_system_arg(path: str | Path | None) -> ValueSystem:
    return schwartz_system() if path in (None, "", "schwartz") else load_value_system(Path(path))


# -- text rendering -------------------------------------------------------------


def render_plain_text(stance: str, conclusion: str, premise: str) -> str:
    for label, arg in (("stance", stance), ("conclusion", conclusion), ("premise", premise)):
        if not arg or not arg.strip():
            raise ValueError(f"{label} must be nonempty")
    return f"I am {stance} the opinion of {conclusion}, because {premise}."


# -- datasets -------------------------------------------------------------------


@dataclass(frozen=True)
class Record:
    """One dataset line: an instance, its labels (if any) and explanations."""

    instance: TextInstance
    labels: LabelVector | None = None
    explanations: Mapping[str, str] = field(default_factory=dict)
    source: str = "original"

    def __post_init__(self) -> None:
        object.__setattr__(self, "explanations", MappingProxyType(dict(self.explanations)))


def record_to_json(rec: Record, system: ValueSystem) -> dict[str, Any]:
    out: dict[str, Any] = {"id": rec.instance.id, "text": rec.instance.text}
    if rec.labels is not None:
        out["labels"] = rec.labels.names(system)
    if rec.explanations:
        out["explanations"] = {n: rec.explanations[n] for n in system.names if n in rec.explanations}
    if rec.instance.meta:
        out["meta"] = dict(rec.instance.meta)
    if rec.source != "original":
        out["source"] = rec.source
    return out


def record_from_json(obj: Mapping[str, Any], system: ValueSystem) -> Record:
    try:
        instance = TextInstance(str(obj["id"]), obj["text"], obj.get("meta") or {})
    except KeyError as exc:
        raise SchemaError(f"record is missing field {exc}") from None
    labels = None
    if "labels" in obj:
        try:
            labels = LabelVector.from_names(obj["labels"], system)
        except KeyError as exc:
            raise SchemaError(f"record {instance.id!r}: {exc.args[0]}") from None
    return Record(instance, labels, obj.get("explanations") or {}, obj.get("source", "original"))


def read_records(path: str | Path, system: ValueSystem) -> list[Record]:
    records = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            rec = record_from_json(obj, system)
            if rec.instance.id in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate id {rec.instance.id!r}")
            seen.add(rec.instance.id)
            records.append(rec)
    return records


def write_records(path: str | Path, records: Iterable[Record], system: ValueSystem) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_json(rec, system), ensure_ascii=False) + "\n")


@dataclass
class ImportReport:
    only_in_arguments: list[str] = field(default_factory=list)
    only_in_labels: list[str] = field(default_factory=list)


ARGUMENT_COLUMNS = ("Argument ID", "Conclusion", "Stance", "Premise")


def _read_tsv(path: str | Path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        return list(reader.fieldnames or []), list(reader)


def import_touche(
    arguments_table: str | Path,
    labels_table: str | Path,
    system: ValueSystem,
    report: ImportReport | None = None,
) -> list[tuple[TextInstance, LabelVector]]:
    """Join the Touché arguments and labels tables into labeled instances.

    Output follows the arguments table's row order. IDs present in only one
    table are listed on ``report`` rather than silently discarded.
    """
    arg_cols, arg_rows = _read_tsv(arguments_table)
    missing = [c for c in ARGUMENT_COLUMNS if c not in arg_cols]
    if missing:
        raise SchemaError(f"arguments table is missing column(s): {', '.join(missing)}")
    lab_cols, lab_rows = _read_tsv(labels_table)
    if "Argument ID" not in lab_cols:
        raise SchemaError("labels table is missing column: Argument ID")
    for name in system.names:
        if name not in lab_cols:
            raise SchemaError(f"labels table is missing value column: {name}")

    labels_by_id: dict[str, LabelVector] = {}
    for rowno, row in enumerate(lab_rows, 2):
        aid = row["Argument ID"]
        if aid in labels_by_id:
            raise DatasetError(f"labels table row {rowno}: ID collision {aid!r}")
        cells = []
        for name in system.names:
            cell = (row[name] or "").strip()
            if cell not in ("0", "1"):
                raise LabelParseError(
                    f"labels table row {rowno}, column {name!r}: non-binary label {cell!r}",
                    row=rowno,
                    column=name,
                )
            cells.append(int(cell))
        labels_by_id[aid] = LabelVector(tuple(cells), system.name)

    pairs = []
    seen: set[str] = set()
    rep = report if report is not None else ImportReport()
    for rowno, row in enumerate(arg_rows, 2):
        aid = row["Argument ID"]
        if aid in seen:
            raise DatasetError(f"arguments table row {rowno}: ID collision {aid!r}")
        seen.add(aid)
        if aid not in labels_by_id:
            rep.only_in_arguments.append(aid)
            continue
        meta = {"stance": row["Stance"], "conclusion": row["Conclusion"], "premise": row["Premise"]}
        text = render_plain_text(row["Stance"], row["Conclusion"], row["Premise"])
        pairs.append((TextInstance(aid, text, meta), labels_by_id[aid]))
    rep.only_in_labels.extend(aid for aid in labels_by_id if aid not in seen)
    return pairs


def export_touche_labels(path: str | Path, pairs: Sequence[tuple[TextInstance, LabelVector]], system: ValueSystem) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", quoting=csv.QUOTE_NONE, lineterminator="\n")
        writer.writerow(["Argument ID", *system.names])
        for inst, lab in pairs:
            writer.writerow([inst.id, *lab.labels])


def export_touche_arguments(path: str | Path, pairs: Sequence[tuple[TextInstance, LabelVector]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", quoting=csv.QUOTE_NONE, lineterminator="\n")
        writer.writerow(list(ARGUMENT_COLUMNS))
        for inst, _ in pairs:
            writer.writerow([inst.id, inst.meta["conclusion"], inst.meta["stance"], inst.meta["premise"]])

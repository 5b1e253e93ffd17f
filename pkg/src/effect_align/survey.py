"""Survey data model and tabulation.

Holds the attribute schema, question catalog, personas, respondent records,
CSV ingestion, subgroup response tables, and enumeration of controlled-edit
contexts (toggle one attribute, hold the rest of the profile fixed).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from itertools import product
from typing import Any

import numpy as np


class SurveyError(Exception):
    """Base error for survey-data problems."""


class IngestError(SurveyError):
    """Malformed input file or row."""


class EmptySupportError(SurveyError):
    """A subgroup query matched no respondents."""


def content_hash(obj: Any) -> str:
    """Stable sha256 hex digest of a JSON-serializable object."""
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class Attribute:
    """A binary demographic attribute with labels for its two levels."""

    name: str
    level0: str
    level1: str

    def label(self, level: int) -> str:
        if level not in (0, 1):
            raise ValueError(f"attribute level must be 0 or 1, got {level!r}")
        return self.level1 if level == 1 else self.level0


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered universe of binary attributes; fixes the 0/1 convention globally."""

    attributes: tuple[Attribute, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "attributes", tuple(self.attributes))
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate attribute names in schema: {names}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def __len__(self) -> int:
        return len(self.attributes)

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def get(self, name: str) -> Attribute:
        for a in self.attributes:
            if a.name == name:
                return a
        raise KeyError(f"unknown attribute: {name!r}")

    def index(self, name: str) -> int:
        for i, a in enumerate(self.attributes):
            if a.name == name:
                return i
        raise KeyError(f"unknown attribute: {name!r}")

    def to_dict(self) -> dict:
        return {
            "attributes": [
                {"name": a.name, "level0": a.level0, "level1": a.level1}
                for a in self.attributes
            ]
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "AttributeSchema":
        return cls(
            tuple(
                Attribute(d["name"], d["level0"], d["level1"])
                for d in data["attributes"]
            )
        )

    def hash(self) -> str:
        return content_hash(self.to_dict())


def default_schema() -> AttributeSchema:
    """The four-attribute schema used throughout: level 1 is the
    less-represented side of each pair by convention."""
    return AttributeSchema(
        (
            Attribute("Gender", "Male", "Female"),
            Attribute("Education", "College Educated", "Not College Educated"),
            Attribute("Residence", "Urban", "Rural"),
            Attribute("Marital Status", "Married", "Not Married"),
        )
    )


@dataclass(frozen=True)
class Question:
    """An ordinal multiple-choice survey item; option order is the ordinal order."""

    id: str
    topic: str
    prompt_text: str
    option_labels: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "option_labels", tuple(self.option_labels))
        if len(self.option_labels) < 2:
            raise ValueError(f"question {self.id!r} needs at least 2 options")

    @property
    def num_options(self) -> int:
        return len(self.option_labels)


def catalog_hash(questions: Sequence[Question]) -> str:
    return content_hash(
        [
            {
                "id": q.id,
                "topic": q.topic,
                "prompt_text": q.prompt_text,
                "options": list(q.option_labels),
            }
            for q in questions
        ]
    )


@dataclass(frozen=True)
class Persona:
    """A country plus a partial assignment of binary attributes.

    Granularity is the number of assigned attributes. Assignments are stored
    canonically (sorted by attribute name) so personas hash and compare by
    content.
    """

    country: str
    assignments: tuple[tuple[str, int], ...] = ()

    def __post_init__(self) -> None:
        if isinstance(self.assignments, Mapping):
            items = self.assignments.items()
        else:
            items = tuple(self.assignments)
        norm = tuple(sorted((str(k), int(v)) for k, v in items))
        names = [k for k, _ in norm]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate attribute in persona: {names}")
        for k, v in norm:
            if v not in (0, 1):
                raise ValueError(f"attribute {k!r} level must be 0 or 1, got {v}")
        object.__setattr__(self, "assignments", norm)

    @property
    def granularity(self) -> int:
        return len(self.assignments)

    @property
    def assigned(self) -> dict[str, int]:
        return dict(self.assignments)

    def get(self, name: str) -> int | None:
        return self.assigned.get(name)

    def assign(self, name: str, level: int) -> "Persona":
        if name in self.assigned:
            raise ValueError(f"attribute {name!r} already assigned")
        return Persona(self.country, self.assignments + ((name, int(level)),))

    def project(self, keep: Iterable[str]) -> "Persona":
        """Restrict to the kept attributes; country carries over."""
        keep = set(keep)
        assigned = self.assigned
        missing = keep - assigned.keys()
        if missing:
            raise ValueError(f"cannot keep unassigned attributes: {sorted(missing)}")
        return Persona(self.country, tuple((k, v) for k, v in self.assignments if k in keep))

    def matches(self, country: str, attribute_values: Mapping[str, int]) -> bool:
        if country != self.country:
            return False
        return all(attribute_values.get(k) == v for k, v in self.assignments)

    def describe(self) -> str:
        parts = [f"{k}={v}" for k, v in self.assignments]
        return f"{self.country}[{','.join(parts)}]"


@dataclass(frozen=True)
class RespondentRecord:
    """One survey respondent: complete demographics plus answered items."""

    country: str
    attribute_values: tuple[tuple[str, int], ...]
    answers: tuple[tuple[str, int], ...]
    weight: float = 1.0

    def __post_init__(self) -> None:
        if isinstance(self.attribute_values, Mapping):
            attrs = self.attribute_values.items()
        else:
            attrs = tuple(self.attribute_values)
        if isinstance(self.answers, Mapping):
            answers = self.answers.items()
        else:
            answers = tuple(self.answers)
        object.__setattr__(self, "attribute_values", tuple(sorted((str(k), int(v)) for k, v in attrs)))
        object.__setattr__(self, "answers", tuple(sorted((str(k), int(v)) for k, v in answers)))
        if self.weight <= 0:
            raise ValueError(f"weight must be positive, got {self.weight}")

    @property
    def attributes(self) -> dict[str, int]:
        return dict(self.attribute_values)

    @property
    def answer_map(self) -> dict[str, int]:
        return dict(self.answers)


@dataclass(frozen=True, eq=False)
class SubgroupTable:
    """Weighted option counts for one (persona, question) subgroup.

    ``respondent_count`` is the unweighted number of matched records that
    answered the question; it drives the support filter.
    """

    persona: Persona
    question_id: str
    counts: np.ndarray
    respondent_count: int

    @property
    def empty(self) -> bool:
        return self.respondent_count == 0

    def distribution(self) -> np.ndarray:
        """Normalized option distribution; raises on empty support."""
        total = float(self.counts.sum())
        if self.respondent_count == 0 or total <= 0:
            raise EmptySupportError(
                f"no respondents for {self.persona.describe()} on {self.question_id!r}"
            )
        return self.counts / total


@dataclass(frozen=True)
class EditContext:
    """A controlled edit: one treatment attribute toggled against a fixed base.

    The base persona carries the country and every other attribute; it never
    assigns the treatment attribute itself.
    """

    attribute: str
    base: Persona
    question_id: str

    def __post_init__(self) -> None:
        if self.attribute in self.base.assigned:
            raise ValueError(
                f"base context already assigns treatment attribute {self.attribute!r}"
            )

    @property
    def s1(self) -> Persona:
        return self.base.assign(self.attribute, 1)

    @property
    def s0(self) -> Persona:
        return self.base.assign(self.attribute, 0)

    def endpoints(self) -> tuple[Persona, Persona]:
        return self.s1, self.s0

    def describe(self) -> str:
        return f"{self.attribute}@{self.base.describe()}:{self.question_id}"


# ---------------------------------------------------------------------------
# dataset


DROP_MISSING_DEMOGRAPHICS = "missing_demographics"
DROP_OUT_OF_RANGE = "out_of_range"
DROP_MALFORMED = "malformed"


@dataclass
class IngestionReport:
    """What ingestion kept and what it dropped, by reason."""

    rows_read: int = 0
    records_kept: int = 0
    rows_dropped: dict[str, int] = field(default_factory=dict)
    answers_missing: int = 0

    def drop(self, reason: str) -> None:
        self.rows_dropped[reason] = self.rows_dropped.get(reason, 0) + 1

    @property
    def total_dropped(self) -> int:
        return sum(self.rows_dropped.values())

    def to_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "records_kept": self.records_kept,
            "rows_dropped": dict(sorted(self.rows_dropped.items())),
            "answers_missing": self.answers_missing,
        }


class _CellStats:
    """Per-question option tallies for one (country, full attribute combo) cell."""

    __slots__ = ("weighted", "unweighted", "record_count")

    def __init__(self) -> None:
        self.weighted: dict[str, np.ndarray] = {}
        self.unweighted: dict[str, np.ndarray] = {}
        self.record_count = 0


class SurveyDataset:
    """Immutable collection of respondent records with fast subgroup queries.

    All query methods are pure; the dataset is safe for concurrent reads.
    """

    def __init__(
        self,
        schema: AttributeSchema,
        questions: Sequence[Question],
        records: Sequence[RespondentRecord],
    ) -> None:
        self.schema = schema
        self.questions: dict[str, Question] = {}
        for q in questions:
            if q.id in self.questions:
                raise ValueError(f"duplicate question id: {q.id!r}")
            self.questions[q.id] = q
        self.records: tuple[RespondentRecord, ...] = tuple(records)
        self._validate_records()
        self._cells = self._build_cells()

    def _validate_records(self) -> None:
        names = set(self.schema.names)
        for rec in self.records:
            attrs = rec.attributes
            if set(attrs) != names:
                raise ValueError(
                    f"record demographics {sorted(attrs)} do not cover schema {sorted(names)}"
                )
            for qid, k in rec.answers:
                q = self.questions.get(qid)
                if q is None:
                    raise ValueError(f"record answers unknown question {qid!r}")
                if not 1 <= k <= q.num_options:
                    raise ValueError(
                        f"answer {k} out of range 1..{q.num_options} for question {qid!r}"
                    )

    def _build_cells(self) -> dict[tuple[str, tuple[int, ...]], _CellStats]:
        cells: dict[tuple[str, tuple[int, ...]], _CellStats] = {}
        order = self.schema.names
        for rec in self.records:
            attrs = rec.attributes
            key = (rec.country, tuple(attrs[n] for n in order))
            cell = cells.get(key)
            if cell is None:
                cell = cells[key] = _CellStats()
            cell.record_count += 1
            for qid, k in rec.answers:
                K = self.questions[qid].num_options
                if qid not in cell.weighted:
                    cell.weighted[qid] = np.zeros(K)
                    cell.unweighted[qid] = np.zeros(K)
                cell.weighted[qid][k - 1] += rec.weight
                cell.unweighted[qid][k - 1] += 1.0
        return cells

    # -- queries ------------------------------------------------------------

    @property
    def countries(self) -> tuple[str, ...]:
        return tuple(sorted({rec.country for rec in self.records}))

    def question(self, question_id: str) -> Question:
        try:
            return self.questions[question_id]
        except KeyError:
            raise KeyError(f"unknown question: {question_id!r}") from None

    def _matching_cells(self, persona: Persona) -> list[_CellStats]:
        unknown = set(persona.assigned) - set(self.schema.names)
        if unknown:
            raise ValueError(f"persona references unknown attributes: {sorted(unknown)}")
        order = self.schema.names
        assigned = persona.assigned
        out = []
        for (country, levels), cell in self._cells.items():
            if country != persona.country:
                continue
            if all(assigned.get(n, levels[i]) == levels[i] for i, n in enumerate(order)):
                out.append(cell)
        return out

    def subgroup_distribution(
        self, persona: Persona, question_id: str, weighted: bool = True
    ) -> SubgroupTable:
        """Option counts over records matching every assigned attribute and
        the country, restricted to records that answered the question."""
        q = self.question(question_id)
        counts = np.zeros(q.num_options)
        respondents = 0
        for cell in self._matching_cells(persona):
            source = cell.weighted if weighted else cell.unweighted
            if question_id in source:
                counts += source[question_id]
                respondents += int(cell.unweighted[question_id].sum())
        return SubgroupTable(persona, question_id, counts, respondents)

    def matched_respondents(self, persona: Persona) -> int:
        """Records matching the persona regardless of which items they answered."""
        return sum(cell.record_count for cell in self._matching_cells(persona))

    def empirical_mode(
        self, persona: Persona, question_id: str, weighted: bool = True
    ) -> int:
        """Most frequent option index (1-based); ties go to the lowest index."""
        table = self.subgroup_distribution(persona, question_id, weighted=weighted)
        if table.empty:
            raise EmptySupportError(
                f"no respondents for {persona.describe()} on {question_id!r}"
            )
        return int(np.argmax(table.counts)) + 1

    def enumerate_contexts(
        self,
        min_support: int = 10,
        questions: Sequence[str] | None = None,
    ) -> list[EditContext]:
        """All controlled-edit contexts whose two endpoints each have at least
        ``min_support`` respondents (unweighted) for the question.

        Base contexts are full assignments of the non-treatment attributes,
        so endpoints are finest-granularity personas. Output order is fixed:
        country, question id, treatment attribute in schema order, then the
        remaining attribute levels in binary order.
        """
        qids = sorted(self.questions) if questions is None else list(questions)
        order = self.schema.names
        contexts: list[EditContext] = []
        for country in self.countries:
            for qid in qids:
                self.question(qid)
                for attr in order:
                    others = [n for n in order if n != attr]
                    for levels in product((0, 1), repeat=len(others)):
                        assignment = dict(zip(others, levels))
                        ok = True
                        for treat_level in (0, 1):
                            full = dict(assignment)
                            full[attr] = treat_level
                            key = (country, tuple(full[n] for n in order))
                            cell = self._cells.get(key)
                            n = (
                                int(cell.unweighted[qid].sum())
                                if cell is not None and qid in cell.unweighted
                                else 0
                            )
                            if n < min_support:
                                ok = False
                                break
                        if ok:
                            base = Persona(country, assignment)
                            contexts.append(EditContext(attr, base, qid))
        return contexts

    def __len__(self) -> int:
        return len(self.records)


# ---------------------------------------------------------------------------
# file formats

WEIGHT_COLUMN = "weight"
COUNTRY_COLUMN = "country"


def _open_lines(source) -> Iterable[str]:
    if hasattr(source, "read"):
        return source
    with open(os.fspath(source), "r", encoding="utf-8") as fh:
        return io.StringIO(fh.read())


def ingest_survey(
    source,
    schema: AttributeSchema,
    question_catalog: Sequence[Question],
    *,
    strict: bool = True,
) -> tuple[SurveyDataset, IngestionReport]:
    """Read a delimited survey file into a dataset.

    Header is ``country,<attributes...>[,weight],<question ids...>``. Empty
    answer cells are missing answers (the record keeps its other answers).
    Rows with missing demographics or an out-of-range answer index are
    dropped and counted. A structurally malformed row is a hard error in
    strict mode and a counted drop otherwise. Unknown header columns are
    always a hard error.
    """
    questions = {q.id: q for q in question_catalog}
    reader = csv.reader(_open_lines(source))
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("empty survey file") from None
    header = [h.strip() for h in header]
    if not header or header[0] != COUNTRY_COLUMN:
        raise IngestError(f"first column must be {COUNTRY_COLUMN!r}, got {header[:1]}")

    attr_cols: dict[int, str] = {}
    question_cols: dict[int, str] = {}
    weight_col: int | None = None
    for idx, name in enumerate(header[1:], start=1):
        if name in schema.names:
            attr_cols[idx] = name
        elif name == WEIGHT_COLUMN:
            weight_col = idx
        elif name in questions:
            question_cols[idx] = name
        else:
            raise IngestError(f"unknown question id in header: {name!r}")
    missing_attrs = set(schema.names) - set(attr_cols.values())
    if missing_attrs:
        raise IngestError(f"header missing attribute columns: {sorted(missing_attrs)}")

    report = IngestionReport()
    records: list[RespondentRecord] = []
    for row_num, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        report.rows_read += 1

        def malformed(msg: str) -> bool:
            if strict:
                raise IngestError(f"row {row_num}: {msg}")
            report.drop(DROP_MALFORMED)
            return True

        if len(row) != len(header):
            if malformed(f"expected {len(header)} fields, got {len(row)}"):
                continue
        country = row[0].strip()
        if not country:
            report.drop(DROP_MISSING_DEMOGRAPHICS)
            continue

        attrs: dict[str, int] = {}
        bad = False
        for idx, name in attr_cols.items():
            cell = row[idx].strip()
            if cell == "":
                report.drop(DROP_MISSING_DEMOGRAPHICS)
                bad = True
                break
            if cell not in ("0", "1"):
                malformed(f"attribute {name!r} must be 0 or 1, got {cell!r}")
                bad = True
                break
        if bad:
            continue

        weight = 1.0
        if weight_col is not None:
            cell = row[weight_col].strip()
            if cell:
                try:
                    weight = float(cell)
                except ValueError:
                    malformed(f"invalid weight {cell!r}")
                    continue
                if weight <= 0:
                    malformed(f"weight must be positive, got {cell!r}")
                    continue

        answers: dict[str, int] = {}
        missing_answers = 0
        out_of_range = False
        malformed_answer = False
        for idx, qid in question_cols.items():
            cell = row[idx].strip()
            if cell == "":
                missing_answers += 1
                continue
            try:
                k = int(cell)
            except ValueError:
                malformed(f"answer for {qid!r} must be an integer, got {cell!r}")
                malformed_answer = True
                break
            if not 1 <= k <= questions[qid].num_options:
                out_of_range = True
                break
            answers[qid] = k
        if malformed_answer:
            continue
        if out_of_range:
            report.drop(DROP_OUT_OF_RANGE)
            continue

        report.answers_missing += missing_answers
        records.append(RespondentRecord(country, attrs, answers, weight))
        report.records_kept += 1

    dataset = SurveyDataset(schema, list(question_catalog), records)
    return dataset, report


def write_survey_csv(
    dataset: SurveyDataset,
    path,
    *,
    include_weight: bool = True,
) -> None:
    """Write records in the ingestion format; round-trips through ingest_survey."""
    qids = sorted(dataset.questions)
    names = dataset.schema.names
    header = [COUNTRY_COLUMN, *names]
    if include_weight:
        header.append(WEIGHT_COLUMN)
    header.extend(qids)
    with open(os.fspath(path), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in dataset.records:
            attrs = rec.attributes
            answers = rec.answer_map
            row = [rec.country, *(str(attrs[n]) for n in names)]
            if include_weight:
                row.append(repr(rec.weight))
            row.extend(str(answers[q]) if q in answers else "" for q in qids)
            writer.writerow(row)


def save_schema(schema: AttributeSchema, path) -> None:
    with open(os.fspath(path), "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_schema(path) -> AttributeSchema:
    with open(os.fspath(path), "r", encoding="utf-8") as fh:
        return AttributeSchema.from_dict(json.load(fh))


def save_question_catalog(questions: Sequence[Question], path) -> None:
    payload = {
        "questions": [
            {
                "id": q.id,
                "topic": q.topic,
                "prompt_text": q.prompt_text,
                "options": list(q.option_labels),
            }
            for q in questions
        ]
    }
    with open(os.fspath(path), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_question_catalog(path) -> list[Question]:
    with open(os.fspath(path), "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return [
        Question(d["id"], d["topic"], d["prompt_text"], tuple(d["options"]))
        for d in payload["questions"]
    ]

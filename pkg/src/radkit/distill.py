"""Teacher-rationale ingestion and knowledge-augmented training-example emission.

The pipeline is: ingest rationales from JSONL, filter out rationales whose
declared answer disagrees with the gold answer, retrieve passages with the
rationale as the query, and emit byte-exact input/target text pairs for an
external seq2seq trainer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

from .answers import extract_answer, option_letters
from .corpus import Document, PostingsIndex, ScoredDoc, retrieve
from .errors import AnswerNotInOptions, NoKnowledge, ParseError

QUESTION_MARKER = "Question: "
KNOWLEDGE_MARKER = "Knowledge: "
EXPLANATION_MARKER = "Explanation:"
ANSWER_MARKER = "Answer: "

HEADERS = {
    "medqa": (
        "The following are multiple-choice questions about medical knowledge. "
        "Generate a step-by-step explanation for each question:"
    ),
    "strategyqa": (
        "The following are multiple-choice questions. "
        "Generate a step-by-step explanation for each question:"
    ),
}


@dataclass(frozen=True)
class RationaleRecord:
    """One training question with its gold answer and teacher rationales."""

    example_id: str
    question: str
    answer: str
    rationales: tuple[str, ...] = ()


@dataclass(frozen=True)
class TrainingExample:
    example_id: str
    rationale_index: int
    input_text: str
    target_text: str
    knowledge_doc_ids: tuple[str, ...]


@dataclass(frozen=True)
class TrainingTemplate:
    """Header line plus whether a Knowledge block is included."""

    template_id: str
    header: str
    with_knowledge: bool = True

    @classmethod
    def named(cls, name: str, with_knowledge: bool = True) -> "TrainingTemplate":
        """Resolve "medqa", "strategyqa", or "custom:<path to header file>"."""
        if name in HEADERS:
            return cls(name, HEADERS[name], with_knowledge)
        if name.startswith("custom:"):
            header = Path(name[len("custom:"):]).read_text(encoding="utf-8").rstrip("\n")
            return cls(name, header, with_knowledge)
        raise ValueError(f"unknown template {name!r}")


def ingest_rationales(path: str | Path) -> list[RationaleRecord]:
    """Read and validate a JSONL file of {"id", "question", "answer", "rationales"}.

    Raises ParseError with the offending line number, or AnswerNotInOptions
    when a gold answer is not among the question's option letters.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, f"invalid JSON: {exc}") from exc
            missing = {"id", "question", "answer"} - set(obj)
            if missing:
                raise ParseError(line_no, f"missing fields: {sorted(missing)}")
            rationales = obj.get("rationales", [])
            if not isinstance(rationales, list) or not all(
                isinstance(r, str) for r in rationales
            ):
                raise ParseError(line_no, '"rationales" must be a list of strings')
            record = RationaleRecord(
                example_id=str(obj["id"]),
                question=str(obj["question"]),
                answer=str(obj["answer"]).strip().upper(),
                rationales=tuple(rationales),
            )
            options = option_letters(record.question)
            if record.answer not in options:
                raise AnswerNotInOptions(record.example_id, record.answer, options)
            records.append(record)
    return records


def filter_rationales(
    records: Sequence[RationaleRecord],
    extract: Callable[[str], str | None] = extract_answer,
) -> tuple[list[RationaleRecord], dict[str, int]]:
    """Keep rationales whose extracted answer equals the gold answer.

    Rationales without an extractable answer count as incorrect. Records
    left with no rationales are dropped. Returns the surviving records and
    a per-record count of dropped rationales. Idempotent.
    """
    kept_records = []
    drops: dict[str, int] = {}
    for record in records:
        kept = tuple(r for r in record.rationales if extract(r) == record.answer)
        dropped = len(record.rationales) - len(kept)
        if dropped:
            drops[record.example_id] = dropped
        if kept:
            kept_records.append(replace(record, rationales=kept))
    return kept_records, drops


def filter_by_verdicts(
    records: Sequence[RationaleRecord], verdicts: dict[tuple[str, int], bool]
) -> tuple[list[RationaleRecord], dict[str, int]]:
    """Filter with an external verdict table keyed by (example_id, rationale index).

    Pairs absent from the table are dropped (the table is an allowlist).
    """
    kept_records = []
    drops: dict[str, int] = {}
    for record in records:
        kept = tuple(
            r
            for j, r in enumerate(record.rationales)
            if verdicts.get((record.example_id, j), False)
        )
        dropped = len(record.rationales) - len(kept)
        if dropped:
            drops[record.example_id] = dropped
        if kept:
            kept_records.append(replace(record, rationales=kept))
    return kept_records, drops


def load_verdicts(path: str | Path) -> dict[tuple[str, int], bool]:
    """Read a verdict JSONL file of {"id", "j", "keep"} objects."""
    verdicts: dict[tuple[str, int], bool] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, f"invalid JSON: {exc}") from exc
            verdicts[(str(obj["id"]), int(obj["j"]))] = bool(obj["keep"])
    return verdicts


def retrieve_knowledge(
    index: PostingsIndex, record: RationaleRecord, j: int, k: int
) -> list[ScoredDoc]:
    """Top-k passages retrieved with rationale ``j`` (not the question) as query."""
    return retrieve(index, record.rationales[j], k)


def emit_training_example(
    record: RationaleRecord,
    j: int,
    knowledge_docs: Sequence[Document],
    template: TrainingTemplate,
    max_knowledge_chars: int | None = None,
) -> TrainingExample:
    """Compose one input/target pair.

    Input layout: header, blank line, "Question: ...", blank line,
    "Knowledge: ..." (rank-ordered passages separated by blank lines,
    omitted for knowledge-free templates), blank line, "Explanation:".
    Target layout: rationale, blank line, "Answer: <gold letter>".
    """
    if template.with_knowledge and not knowledge_docs:
        raise NoKnowledge(record.example_id, j)
    parts = [template.header, QUESTION_MARKER + record.question]
    doc_ids: tuple[str, ...] = ()
    if template.with_knowledge:
        texts = [d.text for d in knowledge_docs]
        if max_knowledge_chars is not None:
            texts = [t[:max_knowledge_chars] for t in texts]
        parts.append(KNOWLEDGE_MARKER + "\n\n".join(texts))
        doc_ids = tuple(d.doc_id for d in knowledge_docs)
    parts.append(EXPLANATION_MARKER)
    input_text = "\n\n".join(parts)
    target_text = record.rationales[j] + "\n\n" + ANSWER_MARKER + record.answer
    return TrainingExample(
        example_id=record.example_id,
        rationale_index=j,
        input_text=input_text,
        target_text=target_text,
        knowledge_doc_ids=doc_ids,
    )


@dataclass(frozen=True)
class ParsedExample:
    header: str
    question: str
    knowledge_texts: tuple[str, ...]
    rationale: str
    answer: str


def parse_training_example(input_text: str, target_text: str) -> ParsedExample:
    """Invert emit_training_example.

    Splitting multiple passages back apart assumes passages contain no
    blank lines (the emitter joins them with one).
    """
    q_marker = "\n\n" + QUESTION_MARKER
    q_at = input_text.index(q_marker)
    header = input_text[:q_at]
    rest = input_text[q_at + len(q_marker):]
    suffix = "\n\n" + EXPLANATION_MARKER
    if not rest.endswith(suffix):
        raise ValueError("input text does not end with the explanation marker")
    rest = rest[: -len(suffix)]
    k_marker = "\n\n" + KNOWLEDGE_MARKER
    if k_marker in rest:
        question, _sep, knowledge_block = rest.partition(k_marker)
        knowledge = tuple(knowledge_block.split("\n\n"))
    else:
        question, knowledge = rest, ()
    a_marker = "\n\n" + ANSWER_MARKER
    rationale, sep, answer = target_text.rpartition(a_marker)
    if not sep:
        raise ValueError("target text carries no answer marker")
    return ParsedExample(header, question, knowledge, rationale, answer)


def training_jsonl_text(examples: Sequence[TrainingExample]) -> str:
    return "".join(
        json.dumps(
            {
                "id": ex.example_id,
                "j": ex.rationale_index,
                "input": ex.input_text,
                "target": ex.target_text,
                "doc_ids": list(ex.knowledge_doc_ids),
            },
            ensure_ascii=False,
        )
        + "\n"
        for ex in examples
    )


def write_training_jsonl(examples: Sequence[TrainingExample], path: str | Path) -> None:
    Path(path).write_text(training_jsonl_text(examples), encoding="utf-8")


def read_training_jsonl(path: str | Path) -> list[TrainingExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            out.append(
                TrainingExample(
                    example_id=obj["id"],
                    rationale_index=int(obj["j"]),
                    input_text=obj["input"],
                    target_text=obj["target"],
                    knowledge_doc_ids=tuple(obj["doc_ids"]),
                )
            )
    return out

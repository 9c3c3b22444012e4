from __future__ import annotations

import json
import re
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Any

from ..grounding import REF_ID

MAX_PASSAGE_CHARS = 1000

_TOKEN = re.compile(r"\w+")
_SENTENCE_BREAK = re.compile(r"(?<=[.!?。])\s+|\n+")


class CorpusError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, then split on Unicode word characters."""
    return _TOKEN.findall(text.lower())


def parse_timestamp(value: str | date | datetime) -> datetime:
    """Parse an ISO date or datetime into an aware UTC datetime."""
    if isinstance(value, datetime):
        dt = value
    elif isinstance(value, date):
        dt = datetime(value.year, value.month, value.day)
    else:
        text = value.strip()
        if text.endswith("Z"):
            text = text[:-1] + "+00:00"
        try:
            dt = datetime.fromisoformat(text)
        except ValueError:
            raise CorpusError(f"bad timestamp {value!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


@dataclass(frozen=True)
class Document:
    doc_id: str
    source_module: str
    text: str
    published_at: datetime
    metadata: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if not REF_ID.fullmatch(self.doc_id):
            raise CorpusError(f"doc_id {self.doc_id!r} must match [A-Za-z0-9._-]+")
        if not self.source_module:
            raise CorpusError(f"document {self.doc_id!r} has no source_module")
        object.__setattr__(self, "published_at", parse_timestamp(self.published_at))

    @classmethod
    def from_dict(cls, row: Mapping[str, Any]) -> Document:
        try:
            return cls(
                doc_id=row["doc_id"],
                source_module=row["source_module"],
                text=row["text"],
                published_at=row["published_at"],
                metadata=dict(row.get("metadata") or {}),
            )
        except KeyError as exc:
            raise CorpusError(f"document missing field {exc}") from None

    def to_dict(self) -> dict[str, Any]:
        return {
            "doc_id": self.doc_id,
            "source_module": self.source_module,
            "text": self.text,
            "published_at": self.published_at.isoformat(),
            "metadata": dict(self.metadata),
        }


@dataclass(frozen=True)
class Passage:
    """Citable retrieval unit. Whole document, or one chunk of a long one."""

    passage_id: str
    doc_id: str
    source_module: str
    text: str
    published_at: datetime
    owner: str | None = None


def chunk_text(text: str, limit: int = MAX_PASSAGE_CHARS) -> list[str]:
    """Pack sentences into chunks of at most ``limit`` characters.

    A single sentence longer than ``limit`` is hard-split.
    """
    if len(text) <= limit:
        return [text]
    chunks: list[str] = []
    current = ""
    for sentence in (s.strip() for s in _SENTENCE_BREAK.split(text)):
        if not sentence:
            continue
        while len(sentence) > limit:
            if current:
                chunks.append(current)
                current = ""
            chunks.append(sentence[:limit])
            sentence = sentence[limit:].lstrip()
        candidate = f"{current} {sentence}" if current else sentence
        if len(candidate) <= limit:
            current = candidate
        else:
            chunks.append(current)
            current = sentence
    if current:
        chunks.append(current)
    return chunks


def passages_for(doc: Document) -> list[Passage]:
    """Split ``doc`` into passages. ``metadata["owner"]`` restricts them to one user."""
    chunks = chunk_text(doc.text)
    owner = doc.metadata.get("owner")
    if len(chunks) == 1:
        return [Passage(doc.doc_id, doc.doc_id, doc.source_module, chunks[0], doc.published_at, owner)]
    return [
        Passage(f"{doc.doc_id}.p{i}", doc.doc_id, doc.source_module, chunk, doc.published_at, owner)
        for i, chunk in enumerate(chunks, 1)
    ]


def load_corpus(path: str | Path, known_modules: Iterable[str] | None = None) -> list[Document]:
    """Read a JSONL corpus; optionally check every source_module is known."""
    allowed = None if known_modules is None else set(known_modules)
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = Document.from_dict(json.loads(line))
            except (json.JSONDecodeError, CorpusError) as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
            if allowed is not None and doc.source_module not in allowed:
                raise CorpusError(f"{path}:{lineno}: unknown source_module {doc.source_module!r}")
            docs.append(doc)
    return docs


def write_corpus(path: str | Path, docs: Iterable[Document]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_dict(), ensure_ascii=False) + "\n")

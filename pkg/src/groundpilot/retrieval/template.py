from __future__ import annotations

import re
from collections.abc import Sequence
from dataclasses import dataclass

from ..grounding import ref_token, split_sentences, strip_tokens
from .fusion import EvidencePassage

_WS = re.compile(r"\s+")


@dataclass(frozen=True)
class TemplateEntry:
    doc_id: str
    text: str

    @property
    def token(self) -> str:
        return ref_token(self.doc_id)

    def render(self) -> str:
        return f"{self.token} {self.text}" if self.text else self.token


@dataclass(frozen=True)
class EvidenceTemplate:
    entries: tuple[TemplateEntry, ...]
    max_chars: int

    @property
    def doc_ids(self) -> tuple[str, ...]:
        return tuple(e.doc_id for e in self.entries)

    def render(self) -> str:
        return "\n".join(e.render() for e in self.entries)


def _clean(text: str) -> str:
    # passage text must not smuggle in reference tokens of its own
    return _WS.sub(" ", strip_tokens(text)).strip()


def build_evidence_template(passages: Sequence[EvidencePassage], max_chars: int) -> EvidenceTemplate:
    """Serialize passages into ``[ref:<id>] text`` lines within ``max_chars``.

    Entries follow fused rank. Passage text is cut at a sentence boundary so
    the rendered block fits the budget. The first entry is always kept: if not
    even its first sentence fits, that sentence is cut mid-way (possibly to
    nothing) and the entry still carries its reference token. Later entries
    that cannot fit a single whole sentence are dropped along with everything
    after them.
    """
    if not passages:
        raise ValueError("build_evidence_template needs at least one passage")
    entries: list[TemplateEntry] = []
    used = 0
    for passage in sorted(passages, key=lambda p: p.fused_rank):
        prefix = len(ref_token(passage.doc_id)) + 1
        sep = 1 if entries else 0
        room = max_chars - used - sep - prefix
        kept: list[str] = []
        length = 0
        for sentence in split_sentences(_clean(passage.passage_text)):
            extra = len(sentence) + (1 if kept else 0)
            if length + extra > room:
                break
            kept.append(sentence)
            length += extra
        if kept:
            text = " ".join(kept)
        elif not entries:
            sentences = split_sentences(_clean(passage.passage_text))
            text = sentences[0][: max(room, 0)].rstrip() if sentences else ""
        else:
            break
        entry = TemplateEntry(passage.doc_id, text)
        entries.append(entry)
        used += sep + len(entry.render())
    return EvidenceTemplate(tuple(entries), max_chars)

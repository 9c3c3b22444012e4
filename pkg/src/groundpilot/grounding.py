"""Reference-token grounding checks.

Token grammar (bit-exact)::

    [ref:<id>]    with <id> matching [A-Za-z0-9._-]+

Segmentation: text is split on newlines, then after terminal punctuation
(``.``, ``!``, ``?``, ``。``) followed by whitespace. Reference tokens that
open a segment belong to the sentence before it, so ``"Up. [ref:a] Down."``
is two sentences, the first citing ``a``. Segments with no letters or digits
left once tokens are removed are folded into the previous sentence.
"""

from __future__ import annotations

import re
from collections.abc import Collection
from dataclasses import dataclass

REF_TOKEN = re.compile(r"\[ref:([A-Za-z0-9._-]+)\]")
REF_ID = re.compile(r"[A-Za-z0-9._-]+")

_SENTENCE_BREAK = re.compile(r"(?<=[.!?。])\s+")
_LEADING_TOKENS = re.compile(r"^(?:\s*\[ref:[A-Za-z0-9._-]+\])+")
_WORDLIKE = re.compile(r"\w")
_SPACES = re.compile(r"[ \t]{2,}")
_SPACED_TOKEN = re.compile(r"[ \t]*\[ref:[A-Za-z0-9._-]+\]")


def ref_token(doc_id: str) -> str:
    if not REF_ID.fullmatch(doc_id):
        raise ValueError(f"id {doc_id!r} is not representable as a reference token")
    return f"[ref:{doc_id}]"


def split_sentences(text: str) -> list[str]:
    sentences: list[str] = []
    for line in text.splitlines():
        for piece in _SENTENCE_BREAK.split(line):
            piece = piece.strip()
            if not piece:
                continue
            lead = _LEADING_TOKENS.match(piece)
            if lead and sentences:
                sentences[-1] = f"{sentences[-1]} {lead.group(0).strip()}"
                piece = piece[lead.end() :].strip()
                if not piece:
                    continue
            if sentences and not _WORDLIKE.search(REF_TOKEN.sub("", piece)):
                sentences[-1] = f"{sentences[-1]} {piece}"
                continue
            sentences.append(piece)
    return sentences


@dataclass(frozen=True)
class GroundingReport:
    total_sentences: int
    grounded_sentences: int
    groundedness: float
    unresolved_tokens: tuple[str, ...]
    ungrounded_sentence_indices: tuple[int, ...]

    @property
    def passed(self) -> bool:
        return not self.ungrounded_sentence_indices and not self.unresolved_tokens

    def to_dict(self) -> dict:
        return {
            "total_sentences": self.total_sentences,
            "grounded_sentences": self.grounded_sentences,
            "groundedness": self.groundedness,
            "unresolved_tokens": list(self.unresolved_tokens),
            "ungrounded_sentence_indices": list(self.ungrounded_sentence_indices),
            "passed": self.passed,
        }


def validate(text: str, evidence_ids: Collection[str]) -> GroundingReport:
    """Check that every sentence cites at least one retrieved document.

    A sentence is grounded when it carries a token whose id is in
    ``evidence_ids``. Token ids not in ``evidence_ids`` are reported as
    unresolved (each id once, in order of first appearance). Text with no
    sentences has groundedness 1.0.
    """
    evidence = frozenset(evidence_ids)
    sentences = split_sentences(text)
    ungrounded = []
    unresolved: dict[str, None] = {}
    for i, sentence in enumerate(sentences):
        ids = REF_TOKEN.findall(sentence)
        for ref in ids:
            if ref not in evidence:
                unresolved.setdefault(ref)
        if not any(ref in evidence for ref in ids):
            ungrounded.append(i)
    total = len(sentences)
    grounded = total - len(ungrounded)
    return GroundingReport(
        total_sentences=total,
        grounded_sentences=grounded,
        groundedness=1.0 if total == 0 else grounded / total,
        unresolved_tokens=tuple(unresolved),
        ungrounded_sentence_indices=tuple(ungrounded),
    )


def strip_tokens(text: str) -> str:
    """Remove reference tokens for display.

    Text without tokens is returned unchanged. Removal repeats until no token
    remains (``[ref:[ref:a]b]`` collapses to a new token on the first pass),
    which makes the function idempotent.
    """
    while REF_TOKEN.search(text):
        text = _SPACED_TOKEN.sub("", text)
        text = _SPACES.sub(" ", text)
        text = "\n".join(line.strip() for line in text.split("\n")).strip()
    return text

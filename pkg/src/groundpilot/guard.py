"""Rule-based input/output guard with categorical verdicts.

Rules are regular expressions in Python ``re`` syntax, compiled with
``IGNORECASE``. A verdict is ``BLOCK`` exactly when at least one rule fires;
its categories are the union of the fired rules' categories. Any object with
a ``screen(text, direction)`` method returning a :class:`GuardVerdict` can be
used wherever :class:`RuleGuard` is (e.g. a wrapper around a classifier).
"""

from __future__ import annotations

import enum
import json
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol


class GuardError(ValueError):
    pass


class Decision(str, enum.Enum):
    ALLOW = "ALLOW"
    BLOCK = "BLOCK"


class GuardCategory(str, enum.Enum):
    TOXICITY = "toxicity"
    PRIVACY_PII = "privacy_pii"
    PROMPT_INJECTION = "prompt_injection"
    POLICY_OTHER = "policy_other"


class Direction(str, enum.Enum):
    INPUT = "input"
    OUTPUT = "output"
    BOTH = "both"


# Highest priority first; decides which fallback template a multi-category verdict gets.
CATEGORY_PRIORITY: tuple[GuardCategory, ...] = (
    GuardCategory.PRIVACY_PII,
    GuardCategory.PROMPT_INJECTION,
    GuardCategory.TOXICITY,
    GuardCategory.POLICY_OTHER,
)

FALLBACK_TEMPLATES: dict[GuardCategory, str] = {
    GuardCategory.PRIVACY_PII: (
        "For your protection we cannot process messages that contain personal identifiers "
        "such as resident registration, account or card numbers. Please remove them and ask again."
    ),
    GuardCategory.PROMPT_INJECTION: (
        "This request cannot be processed. Please ask a question about markets, companies or your portfolio."
    ),
    GuardCategory.TOXICITY: (
        "We are unable to respond to this message. We are happy to help with questions about markets and investing."
    ),
    GuardCategory.POLICY_OTHER: (
        "This service provides general market information only and does not give investment advice, "
        "guarantee returns, or discuss non-public information."
    ),
}


@dataclass(frozen=True)
class GuardVerdict:
    decision: Decision
    categories: frozenset[GuardCategory] = frozenset()
    matched_rules: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if (self.decision is Decision.BLOCK) != bool(self.categories):
            raise GuardError("BLOCK verdicts must carry categories and ALLOW verdicts must not")

    @property
    def blocked(self) -> bool:
        return self.decision is Decision.BLOCK

    def to_dict(self) -> dict:
        return {
            "decision": self.decision.value,
            "categories": sorted(c.value for c in self.categories),
            "matched_rules": list(self.matched_rules),
        }


ALLOW = GuardVerdict(Decision.ALLOW)


@dataclass(frozen=True)
class GuardRule:
    id: str
    category: GuardCategory
    pattern: str
    direction: Direction = Direction.BOTH
    _regex: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        try:
            compiled = re.compile(self.pattern, re.IGNORECASE)
        except re.error as exc:
            raise GuardError(f"rule {self.id!r}: pattern does not compile ({exc})") from None
        object.__setattr__(self, "_regex", compiled)

    def applies_to(self, direction: Direction) -> bool:
        return self.direction is Direction.BOTH or direction is Direction.BOTH or self.direction is direction

    def matches(self, text: str) -> bool:
        return self._regex.search(text) is not None


class Guard(Protocol):
    def screen(self, text: str, direction: Direction | str) -> GuardVerdict: ...


class RuleGuard:
    """Pattern-rule guard. Immutable after construction, safe to share across threads."""

    def __init__(self, rules: Iterable[GuardRule]) -> None:
        rules = tuple(rules)
        seen: set[str] = set()
        for rule in rules:
            if rule.id in seen:
                raise GuardError(f"duplicate rule id {rule.id!r}")
            seen.add(rule.id)
        self._rules = rules

    @property
    def rules(self) -> tuple[GuardRule, ...]:
        return self._rules

    def screen(self, text: str, direction: Direction | str = Direction.INPUT) -> GuardVerdict:
        direction = Direction(direction)
        fired = [r for r in self._rules if r.applies_to(direction) and r.matches(text)]
        if not fired:
            return ALLOW
        return GuardVerdict(
            Decision.BLOCK,
            frozenset(r.category for r in fired),
            tuple(r.id for r in fired),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> RuleGuard:
        return cls(load_rules(path))

    @classmethod
    def default(cls) -> RuleGuard:
        return cls.from_file(default_rules_path())


def parse_rules(raw: dict | list) -> list[GuardRule]:
    entries = raw["rules"] if isinstance(raw, dict) else raw
    rules = []
    for i, entry in enumerate(entries):
        try:
            rules.append(
                GuardRule(
                    id=entry["id"],
                    category=GuardCategory(entry["category"]),
                    pattern=entry["pattern"],
                    direction=Direction(entry.get("direction", "both")),
                )
            )
        except KeyError as exc:
            raise GuardError(f"rules[{i}]: missing field {exc}") from None
        except ValueError as exc:
            if isinstance(exc, GuardError):
                raise
            raise GuardError(f"rules[{i}]: {exc}") from None
    return rules


def load_rules(path: str | Path) -> list[GuardRule]:
    return parse_rules(json.loads(Path(path).read_text(encoding="utf-8")))


def default_rules_path() -> Path:
    return Path(__file__).parent / "data" / "guard_rules.json"


def fallback_for(verdict: GuardVerdict, templates: dict[GuardCategory, str] | None = None) -> str:
    """Return the safe template for the highest-priority category of a BLOCK verdict."""
    if not verdict.blocked:
        raise GuardError("fallback_for called with an ALLOW verdict")
    templates = FALLBACK_TEMPLATES if templates is None else templates
    for category in CATEGORY_PRIORITY:
        if category in verdict.categories:
            return templates[category]
    raise GuardError(f"no fallback template for categories {verdict.categories}")  # pragma: no cover


# --- evaluation harness -----------------------------------------------------


@dataclass(frozen=True)
class LabeledSample:
    text: str
    gold_positive: bool

    def __post_init__(self) -> None:
        if not self.text:
            raise GuardError("labeled sample text must be non-empty")


@dataclass(frozen=True)
class F1Report:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn},
        }


def f1_from_counts(tp: int, fp: int, fn: int, tn: int = 0) -> F1Report:
    """Precision/recall/F1 with explicit zero-denominator conventions.

    With no predicted positives and no gold positives both precision and
    recall are 1.0 (nothing to find, nothing wrongly flagged). Otherwise a
    zero denominator gives 0.0. F1 is 0.0 when precision and recall are both 0.
    """
    nothing_to_find = tp + fn == 0
    nothing_flagged = tp + fp == 0
    if nothing_flagged:
        precision = 1.0 if nothing_to_find else 0.0
    else:
        precision = tp / (tp + fp)
    if nothing_to_find:
        recall = 1.0 if nothing_flagged else 0.0
    else:
        recall = tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return F1Report(precision, recall, f1, tp, fp, fn, tn)


def evaluate_f1(
    samples: Sequence[LabeledSample], guard: Guard, direction: Direction | str = Direction.INPUT
) -> F1Report:
    if not samples:
        raise GuardError("evaluate_f1 needs at least one sample")
    tp = fp = fn = tn = 0
    for sample in samples:
        predicted = guard.screen(sample.text, direction).blocked
        if predicted and sample.gold_positive:
            tp += 1
        elif predicted:
            fp += 1
        elif sample.gold_positive:
            fn += 1
        else:
            tn += 1
    return f1_from_counts(tp, fp, fn, tn)


def load_samples(path: str | Path) -> list[LabeledSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            try:
                samples.append(LabeledSample(text=row["text"], gold_positive=bool(row["gold_positive"])))
            except KeyError as exc:
                raise GuardError(f"{path}:{lineno}: missing field {exc}") from None
    return samples

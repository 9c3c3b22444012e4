"""Query expansion: ontology synonyms plus relative-date normalization.

Temporal phrase table (matched on token sequences, longest phrase first, first
match in the query wins; weeks start on Monday, quarters are calendar
quarters)::

    today, 오늘                         -> [d, d]
    yesterday, 어제                     -> [d-1, d-1]
    this week, 이번 주, 이번주          -> [monday(d), d]
    last week, 지난주, 지난 주          -> previous Monday..Sunday
    this month, 이번 달, 이번달         -> [first of month, d]
    last month, 지난달, 지난 달         -> previous calendar month
    this quarter, 이번 분기             -> [quarter start, d]
    last quarter, 지난 분기, 지난분기   -> previous calendar quarter
    this year, ytd, year to date, 올해, 금년 -> [Jan 1, d]
    last year, 작년, 지난해             -> previous calendar year

Anything else is left as a plain keyword.
"""

from __future__ import annotations

import json
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

from .documents import tokenize

DateWindow = tuple[date, date]


@dataclass(frozen=True)
class ExpandedQuery:
    original: str
    expansion_terms: tuple[str, ...] = ()
    time_window: DateWindow | None = None
    # tokens of ``original`` minus any matched temporal phrase
    keywords: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(set(self.expansion_terms)) != len(self.expansion_terms):
            raise ValueError("expansion_terms must be deduplicated")
        if self.time_window is not None and self.time_window[0] > self.time_window[1]:
            raise ValueError("time_window start after end")

    @classmethod
    def plain(cls, text: str) -> ExpandedQuery:
        return cls(original=text, keywords=tuple(tokenize(text)))

    def search_terms(self) -> list[str]:
        """Distinct sparse-search terms, sorted."""
        terms = set(self.keywords)
        for term in self.expansion_terms:
            terms.update(tokenize(term))
        return sorted(terms)

    def embedding_text(self) -> str:
        return " ".join([*self.keywords, *self.expansion_terms])


def _quarter_start(d: date) -> date:
    return date(d.year, 3 * ((d.month - 1) // 3) + 1, 1)


def _month_start(d: date) -> date:
    return d.replace(day=1)


def _today(d: date) -> DateWindow:
    return d, d


def _yesterday(d: date) -> DateWindow:
    y = d - timedelta(days=1)
    return y, y


def _this_week(d: date) -> DateWindow:
    return d - timedelta(days=d.weekday()), d


def _last_week(d: date) -> DateWindow:
    monday = d - timedelta(days=d.weekday() + 7)
    return monday, monday + timedelta(days=6)


def _this_month(d: date) -> DateWindow:
    return _month_start(d), d


def _last_month(d: date) -> DateWindow:
    end = _month_start(d) - timedelta(days=1)
    return _month_start(end), end


def _this_quarter(d: date) -> DateWindow:
    return _quarter_start(d), d


def _last_quarter(d: date) -> DateWindow:
    end = _quarter_start(d) - timedelta(days=1)
    return _quarter_start(end), end


def _this_year(d: date) -> DateWindow:
    return date(d.year, 1, 1), d


def _last_year(d: date) -> DateWindow:
    return date(d.year - 1, 1, 1), date(d.year - 1, 12, 31)


TEMPORAL_PHRASES: dict[str, Callable[[date], DateWindow]] = {
    "today": _today,
    "오늘": _today,
    "yesterday": _yesterday,
    "어제": _yesterday,
    "this week": _this_week,
    "이번 주": _this_week,
    "이번주": _this_week,
    "last week": _last_week,
    "지난주": _last_week,
    "지난 주": _last_week,
    "this month": _this_month,
    "이번 달": _this_month,
    "이번달": _this_month,
    "last month": _last_month,
    "지난달": _last_month,
    "지난 달": _last_month,
    "this quarter": _this_quarter,
    "이번 분기": _this_quarter,
    "last quarter": _last_quarter,
    "지난 분기": _last_quarter,
    "지난분기": _last_quarter,
    "this year": _this_year,
    "ytd": _this_year,
    "year to date": _this_year,
    "올해": _this_year,
    "금년": _this_year,
    "last year": _last_year,
    "작년": _last_year,
    "지난해": _last_year,
}

_PHRASE_TOKENS = sorted(
    ((tuple(tokenize(p)), fn) for p, fn in TEMPORAL_PHRASES.items()),
    key=lambda item: -len(item[0]),
)


def _find_phrase(tokens: Sequence[str], phrase: Sequence[str], start: int = 0) -> int:
    n = len(phrase)
    for i in range(start, len(tokens) - n + 1):
        if tuple(tokens[i : i + n]) == tuple(phrase):
            return i
    return -1


def expand_query(
    query: str, ontology: Mapping[str, Sequence[str]] | None = None, reference_date: date | None = None
) -> ExpandedQuery:
    """Expand ``query`` with ontology terms and resolve one relative-date phrase.

    ``reference_date`` of ``None`` disables temporal normalization.
    """
    tokens = tokenize(query)
    window: DateWindow | None = None
    keywords = list(tokens)

    if reference_date is not None:
        best: tuple[int, int, Callable[[date], DateWindow]] | None = None
        for phrase, fn in _PHRASE_TOKENS:
            pos = _find_phrase(tokens, phrase)
            if pos >= 0 and (best is None or pos < best[0]):
                best = (pos, len(phrase), fn)
        if best is not None:
            pos, n, fn = best
            window = fn(reference_date)
            keywords = tokens[:pos] + tokens[pos + n :]

    expansions: dict[str, None] = {}
    for key, related in (ontology or {}).items():
        key_tokens = tokenize(key)
        if key_tokens and _find_phrase(tokens, key_tokens) >= 0:
            for term in related:
                term = term.strip().lower()
                if term:
                    expansions.setdefault(term)

    return ExpandedQuery(
        original=query,
        expansion_terms=tuple(expansions),
        time_window=window,
        keywords=tuple(keywords),
    )


def load_ontology(path: str | Path) -> dict[str, list[str]]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict) or not all(isinstance(v, list) for v in raw.values()):
        raise ValueError(f"{path}: ontology must be an object of term -> [related terms]")
    return {str(k): [str(t) for t in v] for k, v in raw.items()}


def default_ontology_path() -> Path:
    return Path(__file__).resolve().parent.parent / "data" / "ontology.json"

"""Per-user pre-generation of the 22 daily insight cards.

Builders are plain functions ``(user, market) -> CardDraft``. A builder that
lacks data raises :class:`SkipInsight`; any other exception is caught, logged
and reported as a skip so one bad builder never sinks the batch. Every body
sentence carries a ``[ref:<doc_id>]`` token and is validated before the card
is emitted.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path

from ..grounding import ref_token, split_sentences, validate
from .model import TYPE_IDS, InsightCard

log = logging.getLogger(__name__)


class SkipInsight(Exception):
    """Builder has nothing to say for this user (missing data)."""


@dataclass(frozen=True)
class Quote:
    ticker: str
    name: str
    sector: str
    close: float
    change_pct: float
    doc_id: str


@dataclass(frozen=True)
class Disclosure:
    ticker: str
    title: str
    doc_id: str


@dataclass(frozen=True)
class Fact:
    text: str
    doc_id: str
    ticker: str | None = None


@dataclass(frozen=True)
class MarketData:
    as_of: date
    quotes: Mapping[str, Quote] = field(default_factory=dict)
    disclosures: tuple[Disclosure, ...] = ()
    # keyed by insight type (market-wide) or by "dividends"/"earnings" (per ticker)
    facts: Mapping[str, tuple[Fact, ...]] = field(default_factory=dict)

    def facts_for(self, key: str) -> tuple[Fact, ...]:
        return tuple(self.facts.get(key, ()))


@dataclass(frozen=True)
class UserData:
    user_id: str
    holdings: Mapping[str, float] = field(default_factory=dict)
    watchlist: tuple[str, ...] = ()


@dataclass(frozen=True)
class CardDraft:
    tickers: tuple[str, ...]
    sentences: tuple[tuple[str, tuple[str, ...]], ...]

    @property
    def evidence_ids(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for _, refs in self.sentences:
            for r in refs:
                seen.setdefault(r)
        return tuple(seen)

    def body(self) -> str:
        out = []
        for text, refs in self.sentences:
            tokens = " ".join(ref_token(r) for r in refs)
            for sentence in split_sentences(text):
                out.append(f"{sentence.rstrip(' .!?')} {tokens}.")
        return " ".join(out)


Builder = Callable[[UserData, MarketData], CardDraft]


def _held_quotes(user: UserData, market: MarketData) -> list[tuple[Quote, float]]:
    if not user.holdings:
        raise SkipInsight("no portfolio")
    rows = [(market.quotes[t], q) for t, q in sorted(user.holdings.items()) if t in market.quotes and q > 0]
    if not rows:
        raise SkipInsight("no quotes for held tickers")
    return rows


def _contributions(user: UserData, market: MarketData) -> list[tuple[Quote, float]]:
    rows = _held_quotes(user, market)
    total = sum(q.close * qty for q, qty in rows)
    # contribution in percentage points of portfolio value
    return [(q, q.close * qty / total * q.change_pct) for q, qty in rows]


def _top_contributors(user: UserData, market: MarketData) -> CardDraft:
    rows = sorted(_contributions(user, market), key=lambda r: (-r[1], r[0].ticker))[:3]
    return CardDraft(
        tuple(q.ticker for q, _ in rows),
        tuple((f"{q.name} added {c:+.2f} points to your portfolio return as it moved {q.change_pct:+.2f}%", (q.doc_id,)) for q, c in rows),
    )


def _top_detractors(user: UserData, market: MarketData) -> CardDraft:
    rows = sorted(_contributions(user, market), key=lambda r: (r[1], r[0].ticker))[:3]
    return CardDraft(
        tuple(q.ticker for q, _ in rows),
        tuple((f"{q.name} weighed {c:+.2f} points on your portfolio return after a {q.change_pct:+.2f}% move", (q.doc_id,)) for q, c in rows),
    )


def _daily_summary(user: UserData, market: MarketData) -> CardDraft:
    rows = _contributions(user, market)
    total = sum(c for _, c in rows)
    best = max(rows, key=lambda r: (r[0].change_pct, r[0].ticker))[0]
    return CardDraft(
        tuple(q.ticker for q, _ in rows),
        (
            (f"Your {len(rows)}-holding portfolio moved {total:+.2f}% today", tuple(q.doc_id for q, _ in rows)),
            (f"The strongest holding was {best.name} at {best.change_pct:+.2f}%", (best.doc_id,)),
        ),
    )


def _sector_exposure(user: UserData, market: MarketData) -> CardDraft:
    rows = _held_quotes(user, market)
    total = sum(q.close * qty for q, qty in rows)
    by_sector: dict[str, list[tuple[Quote, float]]] = {}
    for q, qty in rows:
        by_sector.setdefault(q.sector, []).append((q, q.close * qty / total * 100))
    ranked = sorted(by_sector.items(), key=lambda kv: (-sum(w for _, w in kv[1]), kv[0]))[:3]
    return CardDraft(
        tuple(q.ticker for q, _ in rows),
        tuple(
            (f"{sector} makes up {sum(w for _, w in members):.1f}% of your portfolio", tuple(q.doc_id for q, _ in members))
            for sector, members in ranked
        ),
    )


def _ticker_facts(key: str, which: str, missing: str) -> Builder:
    """Per-ticker facts (dividends, earnings) for held or watched tickers."""

    def build(user: UserData, market: MarketData) -> CardDraft:
        wanted = set(user.holdings) if which == "holdings" else set(user.watchlist)
        if not wanted:
            raise SkipInsight("no portfolio" if which == "holdings" else "empty watchlist")
        facts = [f for f in market.facts_for(key) if f.ticker in wanted]
        if not facts:
            raise SkipInsight(missing)
        return CardDraft(tuple(sorted({f.ticker for f in facts if f.ticker})), tuple((f.text, (f.doc_id,)) for f in facts[:4]))

    return build


def _disclosure_alert(which: str) -> Builder:
    def build(user: UserData, market: MarketData) -> CardDraft:
        tickers = set(user.holdings) if which == "holdings" else set(user.watchlist)
        if not tickers:
            raise SkipInsight("no portfolio" if which == "holdings" else "empty watchlist")
        hits = [d for d in market.disclosures if d.ticker in tickers]
        if not hits:
            raise SkipInsight(f"no disclosures for {which}")
        return CardDraft(
            tuple(sorted({d.ticker for d in hits})),
            tuple((f"{d.ticker} filed: {d.title}", (d.doc_id,)) for d in hits[:5]),
        )

    return build


def _watchlist_movers(user: UserData, market: MarketData) -> CardDraft:
    if not user.watchlist:
        raise SkipInsight("empty watchlist")
    quotes = [market.quotes[t] for t in user.watchlist if t in market.quotes]
    if not quotes:
        raise SkipInsight("no quotes for watchlist")
    quotes.sort(key=lambda q: (-abs(q.change_pct), q.ticker))
    return CardDraft(
        tuple(q.ticker for q in quotes[:3]),
        tuple((f"{q.name} closed at {q.close:,.0f}, {q.change_pct:+.2f}% on the day", (q.doc_id,)) for q in quotes[:3]),
    )


def _market_movers(user: UserData, market: MarketData) -> CardDraft:
    if not market.quotes:
        raise SkipInsight("no market quotes")
    quotes = sorted(market.quotes.values(), key=lambda q: (-abs(q.change_pct), q.ticker))[:3]
    return CardDraft(
        tuple(q.ticker for q in quotes),
        tuple((f"{q.name} was among the biggest movers at {q.change_pct:+.2f}%", (q.doc_id,)) for q in quotes),
    )


def _sector_narrative(user: UserData, market: MarketData) -> CardDraft:
    if not market.quotes:
        raise SkipInsight("no market quotes")
    by_sector: dict[str, list[Quote]] = {}
    for q in market.quotes.values():
        by_sector.setdefault(q.sector, []).append(q)
    avg = {s: sum(q.change_pct for q in qs) / len(qs) for s, qs in by_sector.items()}
    ranked = sorted(avg, key=lambda s: (-avg[s], s))
    lead, lag = ranked[0], ranked[-1]
    sentences = [(f"{lead} led sectors with an average move of {avg[lead]:+.2f}%", tuple(sorted(q.doc_id for q in by_sector[lead])))]
    if lag != lead:
        sentences.append((f"{lag} lagged at {avg[lag]:+.2f}%", tuple(sorted(q.doc_id for q in by_sector[lag]))))
    return CardDraft((), tuple(sentences))


def _disclosure_digest(user: UserData, market: MarketData) -> CardDraft:
    if not market.disclosures:
        raise SkipInsight("no disclosures today")
    items = market.disclosures[:5]
    return CardDraft(
        tuple(sorted({d.ticker for d in items})),
        tuple((f"{d.ticker}: {d.title}", (d.doc_id,)) for d in items),
    )


def _market_facts(key: str) -> Builder:
    def build(user: UserData, market: MarketData) -> CardDraft:
        facts = market.facts_for(key)
        if not facts:
            raise SkipInsight(f"no {key} data")
        return CardDraft(
            tuple(sorted({f.ticker for f in facts if f.ticker})),
            tuple((f.text, (f.doc_id,)) for f in facts[:4]),
        )

    return build


DEFAULT_BUILDERS: dict[str, Builder] = {
    "portfolio_top_contributors": _top_contributors,
    "portfolio_top_detractors": _top_detractors,
    "portfolio_daily_summary": _daily_summary,
    "portfolio_sector_exposure": _sector_exposure,
    "portfolio_dividend_calendar": _ticker_facts("dividends", "holdings", "no dividends on holdings"),
    "holding_disclosure_alert": _disclosure_alert("holdings"),
    "watchlist_disclosure_alert": _disclosure_alert("watchlist"),
    "watchlist_price_movers": _watchlist_movers,
    "watchlist_earnings_preview": _ticker_facts("earnings", "watchlist", "no earnings dates for watchlist"),
    "market_movers": _market_movers,
    "market_index_wrap": _market_facts("market_index_wrap"),
    "sector_narrative": _sector_narrative,
    "theme_leaders": _market_facts("theme_leaders"),
    "disclosure_digest": _disclosure_digest,
    "earnings_calendar": _market_facts("earnings_calendar"),
    "analyst_rating_changes": _market_facts("analyst_rating_changes"),
    "investor_flows": _market_facts("investor_flows"),
    "fx_brief": _market_facts("fx_brief"),
    "commodity_brief": _market_facts("commodity_brief"),
    "economic_calendar": _market_facts("economic_calendar"),
    "ipo_calendar": _market_facts("ipo_calendar"),
    "short_interest_changes": _market_facts("short_interest_changes"),
}
assert set(DEFAULT_BUILDERS) == set(TYPE_IDS)


@dataclass
class PregenBatch:
    user_id: str
    cards: list[InsightCard] = field(default_factory=list)
    skipped: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "emitted": len(self.cards),
            "skipped": dict(self.skipped),
            "cards": [c.to_dict() for c in self.cards],
        }


def card_id_for(user_id: str, insight_type: str, as_of: date) -> str:
    return f"{user_id}.{insight_type}.{as_of:%Y%m%d}"


def pregenerate(
    user: UserData,
    market: MarketData,
    clock: Callable[[], datetime],
    builders: Mapping[str, Builder] | None = None,
    on_skip: Callable[[str, str, str], None] | None = None,
) -> PregenBatch:
    """Attempt one card per insight type for ``user``."""
    builders = DEFAULT_BUILDERS if builders is None else builders
    missing = set(TYPE_IDS) - set(builders)
    if missing:
        raise ValueError(f"no builder registered for {sorted(missing)}")
    batch = PregenBatch(user.user_id)
    created = clock()

    def skip(type_id: str, reason: str) -> None:
        batch.skipped[type_id] = reason
        log.info("pregen skip user=%s type=%s reason=%s", user.user_id, type_id, reason)
        if on_skip is not None:
            on_skip(user.user_id, type_id, reason)

    for type_id in TYPE_IDS:
        try:
            draft = builders[type_id](user, market)
        except SkipInsight as exc:
            skip(type_id, str(exc))
            continue
        except Exception as exc:
            log.warning("pregen builder failed user=%s type=%s: %r", user.user_id, type_id, exc)
            skip(type_id, f"error: {type(exc).__name__}: {exc}")
            continue
        body = draft.body()
        report = validate(body, draft.evidence_ids)
        if not draft.sentences or not report.passed:
            skip(type_id, "ungrounded body")
            continue
        batch.cards.append(
            InsightCard(
                card_id=card_id_for(user.user_id, type_id, market.as_of),
                user_id=user.user_id,
                insight_type=type_id,
                tickers=draft.tickers,
                created_at=created,
                body=body,
                evidence_ids=draft.evidence_ids,
            )
        )
    return batch


# --- data files --------------------------------------------------------------


def market_from_dict(raw: Mapping) -> MarketData:
    facts: dict[str, tuple[Fact, ...]] = {}
    for key, rows in raw.get("facts", {}).items():
        facts[key] = tuple(Fact(r["text"], r["doc_id"], r.get("ticker")) for r in rows)
    return MarketData(
        as_of=date.fromisoformat(raw["as_of"]),
        quotes={
            q["ticker"]: Quote(q["ticker"], q["name"], q["sector"], float(q["close"]), float(q["change_pct"]), q["doc_id"])
            for q in raw.get("quotes", [])
        },
        disclosures=tuple(Disclosure(d["ticker"], d["title"], d["doc_id"]) for d in raw.get("disclosures", [])),
        facts=facts,
    )


def users_from_dict(raw: Mapping | Sequence) -> dict[str, UserData]:
    rows = raw["users"] if isinstance(raw, Mapping) else raw
    users = {}
    for r in rows:
        users[r["user_id"]] = UserData(
            user_id=r["user_id"],
            holdings={t: float(q) for t, q in r.get("holdings", {}).items()},
            watchlist=tuple(r.get("watchlist", ())),
        )
    return users


def load_market(path: str | Path) -> MarketData:
    return market_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def load_users(path: str | Path) -> dict[str, UserData]:
    return users_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

from __future__ import annotations

import enum
from collections.abc import Mapping
from dataclasses import dataclass, field
from datetime import datetime


@dataclass(frozen=True)
class InsightType:
    id: str
    title: str
    needs_portfolio: bool = False
    needs_watchlist: bool = False
    # Disclosure types are exempt from read down-weighting so they keep surfacing.
    mandatory: bool = False


INSIGHT_TYPES: tuple[InsightType, ...] = (
    InsightType("portfolio_top_contributors", "Top contributors to portfolio return", needs_portfolio=True),
    InsightType("portfolio_top_detractors", "Largest drags on portfolio return", needs_portfolio=True),
    InsightType("portfolio_daily_summary", "Portfolio daily summary", needs_portfolio=True),
    InsightType("portfolio_sector_exposure", "Portfolio sector exposure", needs_portfolio=True),
    InsightType("portfolio_dividend_calendar", "Upcoming dividends on holdings", needs_portfolio=True),
    InsightType("holding_disclosure_alert", "Disclosure alerts for held companies", needs_portfolio=True, mandatory=True),
    InsightType("watchlist_disclosure_alert", "Disclosure alerts for watched companies", needs_watchlist=True, mandatory=True),
    InsightType("watchlist_price_movers", "Watchlist price movers", needs_watchlist=True),
    InsightType("watchlist_earnings_preview", "Earnings preview for watched companies", needs_watchlist=True),
    InsightType("market_movers", "Market movers"),
    InsightType("market_index_wrap", "Market index wrap"),
    InsightType("sector_narrative", "Sector narrative"),
    InsightType("theme_leaders", "Theme leaders"),
    InsightType("disclosure_digest", "Disclosure digest", mandatory=True),
    InsightType("earnings_calendar", "Earnings calendar"),
    InsightType("analyst_rating_changes", "Analyst rating changes"),
    InsightType("investor_flows", "Foreign and institutional flows"),
    InsightType("fx_brief", "FX brief"),
    InsightType("commodity_brief", "Commodity brief"),
    InsightType("economic_calendar", "Economic calendar"),
    InsightType("ipo_calendar", "New listings and IPOs"),
    InsightType("short_interest_changes", "Short interest changes"),
)

TYPE_IDS: tuple[str, ...] = tuple(t.id for t in INSIGHT_TYPES)
TYPE_INDEX: Mapping[str, int] = {t: i for i, t in enumerate(TYPE_IDS)}
TYPES_BY_ID: Mapping[str, InsightType] = {t.id: t for t in INSIGHT_TYPES}
N_TYPES = len(INSIGHT_TYPES)
MANDATORY_TYPES = frozenset(t.id for t in INSIGHT_TYPES if t.mandatory)

assert N_TYPES == 22


class EventType(str, enum.Enum):
    IMPRESSION = "impression"
    CLICK = "click"
    DWELL = "dwell"


@dataclass(frozen=True)
class InsightCard:
    card_id: str
    user_id: str
    insight_type: str
    tickers: tuple[str, ...]
    created_at: datetime
    body: str
    evidence_ids: tuple[str, ...] = ()
    base_score: float = 0.0

    def __post_init__(self) -> None:
        if self.insight_type not in TYPE_INDEX:
            raise ValueError(f"unknown insight type {self.insight_type!r}")

    def to_dict(self) -> dict:
        return {
            "card_id": self.card_id,
            "user_id": self.user_id,
            "insight_type": self.insight_type,
            "tickers": list(self.tickers),
            "created_at": self.created_at.isoformat(),
            "body": self.body,
            "evidence_ids": list(self.evidence_ids),
            "base_score": self.base_score,
        }


@dataclass(frozen=True)
class Interaction:
    insight_type: str
    event: EventType
    ts: datetime
    card_id: str | None = None
    dwell_ms: int | None = None


@dataclass
class UserProfile:
    user_id: str
    owned_tickers: frozenset[str] = frozenset()
    watched_tickers: frozenset[str] = frozenset()
    read_cards: dict[str, datetime] = field(default_factory=dict)
    history: list[Interaction] = field(default_factory=list)

    def record(self, interaction: Interaction) -> None:
        if self.history and interaction.ts < self.history[-1].ts:
            raise ValueError("interaction history must stay time-ordered")
        self.history.append(interaction)
        if interaction.event is not EventType.IMPRESSION and interaction.card_id is not None:
            self.read_cards.setdefault(interaction.card_id, interaction.ts)

    def reading_sequence(self) -> list[str]:
        """Insight types the user opened, in order (clicks only)."""
        return [i.insight_type for i in self.history if i.event is EventType.CLICK]

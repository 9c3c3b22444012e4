"""Deterministic demo dataset: corpus, market snapshot and users.

Everything here is fictional. The same tables feed the corpus and the market
snapshot, so every evidence id a pre-generated card cites exists as a
document in the corpus.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from typing import Any

from .retrieval.documents import Document, write_corpus

AS_OF = date(2025, 1, 6)
_STAMP = AS_OF.strftime("%Y%m%d")


@dataclass(frozen=True)
class Company:
    ticker: str
    name: str
    sector: str
    city: str
    close: float
    change_pct: float
    theme: str


COMPANIES: tuple[Company, ...] = (
    Company("HNBS", "Hanbit Semiconductor", "Semiconductors", "Icheon", 71200, 3.41, "AI chips"),
    Company("DSMC", "Daesan Memory", "Semiconductors", "Pyeongtaek", 182500, 1.92, "AI chips"),
    Company("KRBT", "Korea Robotics", "Industrials", "Changwon", 45300, -2.15, "automation"),
    Company("SLBT", "Seoul Battery", "Materials", "Cheongju", 398000, -4.02, "secondary batteries"),
    Company("HGEN", "Hangang Energy", "Utilities", "Naju", 21850, 0.46, "renewables"),
    Company("MRBK", "Mirae Bank Holdings", "Financials", "Seoul", 58700, 0.86, "value-up"),
    Company("BSSH", "Busan Shipbuilding", "Industrials", "Geoje", 15420, 5.12, "shipbuilding"),
    Company("JJBI", "Jeju Biologics", "Health Care", "Songdo", 812000, -1.33, "biosimilars"),
    Company("GWGM", "Gangwon Games", "Communication", "Pangyo", 162300, 2.70, "gaming"),
    Company("NMAU", "Namhae Auto Parts", "Consumer Discretionary", "Ulsan", 33900, -0.59, "EV parts"),
    Company("HSFD", "Hansol Foods", "Consumer Staples", "Seoul", 120400, 0.17, "K-food exports"),
    Company("DGTL", "Daegu Telecom", "Communication", "Daegu", 52100, -0.38, "value-up"),
)
BY_TICKER = {c.ticker: c for c in COMPANIES}

USERS: tuple[dict[str, Any], ...] = (
    {"user_id": "u001", "holdings": {"HNBS": 120, "SLBT": 10, "MRBK": 80}, "watchlist": ["DSMC", "BSSH", "JJBI"]},
    {"user_id": "u002", "holdings": {"KRBT": 200, "HGEN": 300, "GWGM": 15}, "watchlist": ["HNBS", "NMAU", "HSFD"]},
    {"user_id": "u003", "holdings": {"DSMC": 25, "BSSH": 400, "DGTL": 90}, "watchlist": ["SLBT", "KRBT", "GWGM"]},
    {"user_id": "u004", "holdings": {}, "watchlist": ["JJBI"]},
)

# (ticker, title) pairs filed on the as-of date
DISCLOSURES: tuple[tuple[str, str], ...] = (
    ("HNBS", "Supply agreement with a domestic foundry customer"),
    ("SLBT", "Capital expenditure plan for a new cathode line"),
    ("MRBK", "Quarterly dividend declaration"),
    ("DSMC", "Treasury share buyback programme"),
    ("KRBT", "Order intake from an overseas logistics operator"),
    ("GWGM", "Release date set for a new console title"),
    ("JJBI", "Regulatory approval for a biosimilar in Europe"),
    ("HGEN", "Solar farm acquisition in the southern region"),
    ("BSSH", "LNG carrier contract win"),
    ("NMAU", "Change in largest shareholder"),
)

DIVIDENDS: tuple[tuple[str, str], ...] = (
    ("MRBK", "Mirae Bank Holdings pays a quarterly dividend of 700 won per share with a record date of 31 January"),
    ("HGEN", "Hangang Energy pays a year-end dividend of 1,150 won per share"),
    ("HNBS", "Hanbit Semiconductor pays a quarterly dividend of 361 won per share"),
    ("DGTL", "Daegu Telecom pays a quarterly dividend of 830 won per share"),
    ("BSSH", "Busan Shipbuilding resumes a 100 won per share annual dividend"),
)

EARNINGS: tuple[tuple[str, str], ...] = (
    ("DSMC", "Daesan Memory reports fourth quarter earnings on 30 January with consensus operating profit of 7.1 trillion won"),
    ("HNBS", "Hanbit Semiconductor reports fourth quarter earnings on 23 January"),
    ("NMAU", "Namhae Auto Parts reports fourth quarter earnings on 5 February"),
    ("SLBT", "Seoul Battery reports fourth quarter earnings on 28 January with consensus calling for a narrower loss"),
    ("KRBT", "Korea Robotics reports fourth quarter earnings on 12 February"),
    ("GWGM", "Gangwon Games reports fourth quarter earnings on 7 February"),
    ("BSSH", "Busan Shipbuilding reports fourth quarter earnings on 4 February"),
    ("JJBI", "Jeju Biologics reports fourth quarter earnings on 22 January"),
    ("HSFD", "Hansol Foods reports fourth quarter earnings on 13 February"),
)

MARKET_FACTS: dict[str, tuple[tuple[str | None, str], ...]] = {
    "market_index_wrap": (
        (None, "The KOSPI rose 1.91% to 2,488 on broad foreign buying"),
        (None, "The KOSDAQ gained 1.24% to 717 led by robotics and battery names"),
    ),
    "theme_leaders": (
        ("HNBS", "AI chip names led themes as Hanbit Semiconductor gained 3.41%"),
        ("BSSH", "Shipbuilding extended its rally with Busan Shipbuilding up 5.12%"),
    ),
    "earnings_calendar": (
        ("JJBI", "Jeju Biologics opens the large-cap reporting season on 22 January"),
        ("HNBS", "Hanbit Semiconductor follows on 23 January"),
    ),
    "analyst_rating_changes": (
        ("SLBT", "Two brokers cut Seoul Battery to neutral on slower electric vehicle demand"),
        ("BSSH", "Busan Shipbuilding drew a target price increase to 19,000 won"),
    ),
    "investor_flows": (
        (None, "Foreign investors were net buyers of 512 billion won on the main board"),
        (None, "Retail investors sold 430 billion won, mostly in semiconductors"),
    ),
    "fx_brief": (
        (None, "The won strengthened to 1,466 per dollar as the dollar index eased"),
        (None, "The yen traded at 935 won per 100 yen"),
    ),
    "commodity_brief": (
        (None, "Brent crude held near 76 dollars a barrel"),
        (None, "Lithium carbonate prices were flat for a third week"),
    ),
    "economic_calendar": (
        (None, "The Bank of Korea rate decision is scheduled for 16 January"),
        (None, "December export data is due on 15 January"),
    ),
    "ipo_calendar": (
        (None, "Two KOSDAQ listings price their offerings this week"),
        (None, "A logistics software maker begins book-building on 9 January"),
    ),
    "short_interest_changes": (
        ("SLBT", "Short interest in Seoul Battery rose to 4.8% of float"),
        ("KRBT", "Short interest in Korea Robotics fell to 2.1% of float"),
    ),
}

# market-wide prose keyed by module, for the chat path
MODULE_PROSE: dict[str, tuple[str, ...]] = {
    "market_breadth_analyzer": (
        "Advancers outnumbered decliners by 612 to 281 on the main board. New 52-week highs were concentrated in shipbuilding.",
    ),
    "macro_news_search": (
        "Consumer sentiment improved in December after two months of decline. Inflation slowed to 1.9% year on year.",
        "Exports of semiconductors reached a record for the month, driven by high-bandwidth memory.",
    ),
    "flow_trend_analyzer": (
        "Foreign investors have been net buyers for three sessions in a row. Pension funds trimmed battery exposure.",
    ),
    "theme_membership_lookup": (
        "The AI chips theme includes Hanbit Semiconductor and Daesan Memory.",
        "The value-up theme includes Mirae Bank Holdings and Daegu Telecom.",
        "The shipbuilding theme includes Busan Shipbuilding.",
    ),
    "sector_classifier": (
        "Semiconductor and memory makers are grouped in the information technology sector.",
        "Shipbuilders and robotics makers are grouped in industrials.",
    ),
    "news_search": (
        "Chip stocks rallied after a large cloud provider raised its capital spending guidance.",
        "Battery makers fell as a major automaker delayed an electric vehicle launch.",
    ),
    "news_deduplicator": ("Several outlets carried the same report on the shipbuilding order backlog.",),
    "glossary_lookup": (
        "Market capitalization is the share price multiplied by the number of shares outstanding.",
        "The price to earnings ratio divides the share price by earnings per share.",
        "A dividend yield is the annual dividend divided by the share price.",
        "Short interest is the share of float that has been sold short.",
    ),
    "regulation_faq_search": (
        "Short selling of listed shares resumed in March under a new monitoring system.",
        "Companies must file material disclosures on the exchange system within one business day.",
    ),
    "evidence_packager": ("Evidence packages list the cited source documents for each answer.",),
    "citation_formatter": ("Citations name the source document and the publication date.",),
    "narrative_summarizer": ("Daily summaries describe the main market moves in plain language.",),
    "bullet_summarizer": ("Bullet summaries list at most five points per topic.",),
    "disclosure_classifier": ("Supply contracts and buybacks are classified as material disclosures.",),
    "disclosure_digest_builder": ("The disclosure digest collects filings made during the trading day.",),
}


def _ts(days_back: int, hour: int = 9) -> datetime:
    return datetime.combine(AS_OF - timedelta(days=days_back), time(hour), tzinfo=timezone.utc)


def quote_doc_id(ticker: str) -> str:
    return f"quote.{ticker.lower()}.{_STAMP}"


def disclosure_doc_id(ticker: str) -> str:
    return f"disc.{ticker.lower()}.{_STAMP}"


def _company_docs(c: Company) -> list[Document]:
    t = c.ticker.lower()
    direction = "rose" if c.change_pct >= 0 else "fell"
    return [
        Document(f"profile.{t}", "company_profile_lookup",
                 f"{c.name} ({c.ticker}) is a {c.sector.lower()} company based in {c.city}. "
                 f"It is part of the {c.theme} theme.", _ts(30)),
        Document(f"news.{t}.{_STAMP}", "company_news_search",
                 f"{c.name} shares {direction} {abs(c.change_pct):.2f}% as investors weighed the {c.theme} outlook.",
                 _ts(0, 15)),
        Document(quote_doc_id(c.ticker), "quote_lookup",
                 f"{c.name} closed at {c.close:,.0f} won, {c.change_pct:+.2f}% on the day.", _ts(0, 16)),
        Document(f"hist.{t}.{_STAMP}", "price_history_lookup",
                 f"Over the past month {c.name} traded between {c.close * 0.9:,.0f} and {c.close * 1.05:,.0f} won.",
                 _ts(0, 16)),
        Document(f"tech.{t}.{_STAMP}", "technical_indicator_calc",
                 f"{c.name} trades {'above' if c.change_pct >= 0 else 'below'} its 20-day moving average.", _ts(0, 16)),
        Document(f"fin.{t}.2024q3", "financial_statement_lookup",
                 f"{c.name} reported third quarter revenue growth and a stable operating margin.", _ts(60)),
        Document(f"ratio.{t}.2024q3", "ratio_calculator",
                 f"{c.name} trades at a price to earnings ratio of {8 + (c.close % 17):.0f} times trailing earnings.",
                 _ts(1)),
        Document(f"peer.{t}", "peer_comparison",
                 f"Within {c.sector.lower()}, {c.name} is compared with peers on margin and valuation.", _ts(2)),
        Document(f"cons.{t}", "consensus_lookup",
                 f"The analyst consensus on {c.name} is a buy rating.", _ts(3)),
        Document(f"sector.{t}.{_STAMP}", "sector_performance_analyzer",
                 f"The {c.sector.lower()} sector moved with {c.name} today.", _ts(0, 16)),
        Document(f"mover.{t}.{_STAMP}", "mover_screener",
                 f"{c.name} was {'a gainer' if c.change_pct >= 0 else 'a decliner'} at {c.change_pct:+.2f}% on the day.",
                 _ts(0, 16)),
    ]


def demo_corpus() -> list[Document]:
    docs: list[Document] = []
    for c in COMPANIES:
        docs.extend(_company_docs(c))
    for ticker, title in DISCLOSURES:
        docs.append(Document(disclosure_doc_id(ticker), "disclosure_search",
                             f"{BY_TICKER[ticker].name} filed a disclosure: {title}.", _ts(0, 11)))
    for ticker, text in DIVIDENDS:
        docs.append(Document(f"div.{ticker.lower()}", "dividend_history_lookup", text + ".", _ts(5)))
        docs.append(Document(f"yield.{ticker.lower()}", "dividend_yield_analyzer",
                             f"{BY_TICKER[ticker].name} offers a dividend yield above the market average.", _ts(5)))
    for ticker, text in EARNINGS:
        docs.append(Document(f"earn.{ticker.lower()}", "earnings_release_search", text + ".", _ts(4)))
        docs.append(Document(f"surprise.{ticker.lower()}", "earnings_surprise_analyzer",
                             f"{BY_TICKER[ticker].name} beat consensus earnings in two of the last four quarters.", _ts(4)))
    for key, rows in MARKET_FACTS.items():
        for i, (_, text) in enumerate(rows):
            docs.append(Document(f"fact.{key}.{i}", _FACT_MODULE[key], text + ".", _ts(0, 17)))
    for module, texts in MODULE_PROSE.items():
        for i, text in enumerate(texts):
            docs.append(Document(f"note.{module}.{i}", module, text, _ts(i % 7, 10)))
    docs.extend(_personal_docs())
    return docs


_FACT_MODULE = {
    "market_index_wrap": "index_snapshot_lookup",
    "theme_leaders": "theme_momentum_ranker",
    "earnings_calendar": "earnings_release_search",
    "analyst_rating_changes": "rating_change_tracker",
    "investor_flows": "investor_flow_lookup",
    "fx_brief": "fx_rate_lookup",
    "commodity_brief": "commodity_price_lookup",
    "economic_calendar": "macro_calendar_lookup",
    "ipo_calendar": "ipo_schedule_lookup",
    "short_interest_changes": "short_interest_lookup",
}


def _personal_docs() -> list[Document]:
    """Account-level records for the personal-data modules.

    Each record is owned by one user, so retrieval only shows it to that user.
    Accounts are named by opaque aliases and nothing resembles a real identifier.
    """
    docs: list[Document] = []
    for u in USERS:
        uid = u["user_id"]
        alias = uid.upper()
        holdings = u["holdings"]

        def owned(doc_id: str, module: str, text: str, when: datetime) -> None:
            docs.append(Document(doc_id, module, text, when, {"owner": uid}))

        if holdings:
            listed = ", ".join(f"{q} shares of {BY_TICKER[t].name}" for t, q in sorted(holdings.items()))
            owned(f"acct.{uid}.holdings", "holdings_lookup", f"Account alias {alias} holds {listed}.", _ts(0, 18))
            value = sum(BY_TICKER[t].close * q for t, q in holdings.items())
            ret = sum(BY_TICKER[t].close * q * BY_TICKER[t].change_pct for t, q in holdings.items()) / value
            owned(f"acct.{uid}.return", "portfolio_return_analyzer",
                  f"Portfolio return for account alias {alias} was {ret:+.2f}% today.", _ts(0, 18))
            largest = max(holdings, key=lambda t: BY_TICKER[t].close * holdings[t])
            owned(f"acct.{uid}.risk", "portfolio_risk_analyzer",
                  f"Portfolio risk for account alias {alias} is concentrated in {BY_TICKER[largest].name}.", _ts(0, 18))
            first = sorted(holdings)[0]
            owned(f"trade.{uid}.1", "trade_history_lookup",
                  f"Account alias {alias} bought {holdings[first]} shares of {BY_TICKER[first].name} last month.", _ts(20))
            owned(f"pattern.{uid}", "trading_pattern_analyzer",
                  f"Account alias {alias} trades about twice a month, mostly at the open.", _ts(1))
            owned(f"pnl.{uid}", "realized_pnl_calculator",
                  f"Realized profit and loss for account alias {alias} this year is positive.", _ts(1))
        owned(f"profile.{uid}", "account_profile_lookup", f"Account alias {alias} has a moderate risk profile.", _ts(90))
    docs.append(Document("acct.package.note", "personal_evidence_packager",
                         "Personal evidence packages cite only account records for the requesting alias.", _ts(90)))
    return docs


def demo_market() -> dict[str, Any]:
    facts: dict[str, list[dict[str, Any]]] = {
        "dividends": [{"ticker": t, "text": text, "doc_id": f"div.{t.lower()}"} for t, text in DIVIDENDS],
        "earnings": [{"ticker": t, "text": text, "doc_id": f"earn.{t.lower()}"} for t, text in EARNINGS],
    }
    for key, rows in MARKET_FACTS.items():
        facts[key] = [
            {"ticker": ticker, "text": text, "doc_id": f"fact.{key}.{i}"} for i, (ticker, text) in enumerate(rows)
        ]
    return {
        "as_of": AS_OF.isoformat(),
        "quotes": [
            {"ticker": c.ticker, "name": c.name, "sector": c.sector, "close": c.close,
             "change_pct": c.change_pct, "doc_id": quote_doc_id(c.ticker)}
            for c in COMPANIES
        ],
        "disclosures": [
            {"ticker": t, "title": title, "doc_id": disclosure_doc_id(t)} for t, title in DISCLOSURES
        ],
        "facts": facts,
    }


def demo_users() -> dict[str, Any]:
    return {"users": [dict(u) for u in USERS]}


def write_demo_bundle(directory: str | Path) -> dict[str, Path]:
    """Write corpus.jsonl, market.json, users.json and config.json into ``directory``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in ("corpus.jsonl", "market.json", "users.json", "config.json")}
    write_corpus(paths["corpus.jsonl"], demo_corpus())
    paths["market.json"].write_text(json.dumps(demo_market(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    paths["users.json"].write_text(json.dumps(demo_users(), indent=2) + "\n", encoding="utf-8")
    config = {
        "listen": "127.0.0.1:8080",
        "manifest": "../manifest.json",
        "corpus": "corpus.jsonl",
        "users": "users.json",
        "market": "market.json",
        "state_dir": "state",
        "fixed_now": f"{AS_OF.isoformat()}T18:00:00+00:00",
        "routing": {"allow_external": True},
        "recommender": {"budget": 2, "alpha": 0.5},
        "pregen": {"enabled": True, "interval_seconds": 900},
    }
    paths["config.json"].write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    return paths

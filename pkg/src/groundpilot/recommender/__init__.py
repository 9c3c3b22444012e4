"""Feed recommender: rule layer, sequential layer, LinUCB under a trust budget."""

from .bandit import (
    ArmStore,
    BanditArmState,
    bandit_select,
    bandit_update,
    load_snapshot,
    save_snapshot,
    shaped_reward,
    snapshot_from_dict,
    snapshot_to_dict,
)
from .model import (
    INSIGHT_TYPES,
    MANDATORY_TYPES,
    N_TYPES,
    TYPE_IDS,
    EventType,
    InsightCard,
    InsightType,
    Interaction,
    UserProfile,
)
from .pregen import (
    DEFAULT_BUILDERS,
    CardDraft,
    Disclosure,
    Fact,
    MarketData,
    PregenBatch,
    Quote,
    SkipInsight,
    UserData,
    load_market,
    load_users,
    market_from_dict,
    pregenerate,
    users_from_dict,
)
from .ranking import CONTEXT_DIM, RankingTrace, RankWeights, budgeted_order, card_contexts, rank_feed
from .scoring import MarkovPredictor, RuleParams, SequentialPredictor, rule_score, sequential_predict

__all__ = [
    "CONTEXT_DIM",
    "DEFAULT_BUILDERS",
    "INSIGHT_TYPES",
    "MANDATORY_TYPES",
    "N_TYPES",
    "TYPE_IDS",
    "ArmStore",
    "BanditArmState",
    "CardDraft",
    "Disclosure",
    "EventType",
    "Fact",
    "InsightCard",
    "InsightType",
    "Interaction",
    "MarketData",
    "MarkovPredictor",
    "PregenBatch",
    "Quote",
    "RankWeights",
    "RankingTrace",
    "RuleParams",
    "SequentialPredictor",
    "SkipInsight",
    "UserData",
    "UserProfile",
    "bandit_select",
    "bandit_update",
    "budgeted_order",
    "card_contexts",
    "load_market",
    "load_snapshot",
    "load_users",
    "market_from_dict",
    "pregenerate",
    "rank_feed",
    "rule_score",
    "save_snapshot",
    "sequential_predict",
    "shaped_reward",
    "snapshot_from_dict",
    "snapshot_to_dict",
    "users_from_dict",
]

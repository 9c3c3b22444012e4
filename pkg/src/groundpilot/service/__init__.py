"""Deployable surface: HTTP app, service state, pre-generation scheduling."""

from .app import create_app
from .config import ENV_CONFIG, ENV_LISTEN, ConfigError, RecommenderConfig, ServiceConfig
from .core import (
    AuditGauges,
    BadEventError,
    EventLog,
    FeedbackEvent,
    PregenReport,
    Service,
    UnknownCardError,
    UnknownUserError,
)

__all__ = [
    "ENV_CONFIG",
    "ENV_LISTEN",
    "AuditGauges",
    "BadEventError",
    "ConfigError",
    "EventLog",
    "FeedbackEvent",
    "PregenReport",
    "RecommenderConfig",
    "Service",
    "ServiceConfig",
    "UnknownCardError",
    "UnknownUserError",
    "create_app",
]

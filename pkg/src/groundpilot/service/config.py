from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

ENV_CONFIG = "GROUNDPILOT_CONFIG"
ENV_LISTEN = "GROUNDPILOT_LISTEN"

DEFAULT_PREGEN_INTERVAL_S = 15 * 60


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RecommenderConfig:
    budget: int = 2
    alpha: float = 0.5
    w_rule: float = 1.0
    w_seq: float = 0.5
    w_own: float = 2.0
    w_watch: float = 1.5
    w_base: float = 1.0
    read_multiplier: float = 0.2
    half_life_hours: float = 24.0


@dataclass(frozen=True)
class ServiceConfig:
    manifest: Path
    corpus: Path
    users: Path
    market: Path
    state_dir: Path
    listen: str = "127.0.0.1:8080"
    strict_manifest: bool = True
    ontology: Path | None = None
    guard_rules: Path | None = None
    allow_external: bool = True
    retrieval_k: int = 4
    template_chars: int = 1200
    recommender: RecommenderConfig = field(default_factory=RecommenderConfig)
    pregen_enabled: bool = True
    pregen_interval_s: float = DEFAULT_PREGEN_INTERVAL_S
    # pins the service clock, e.g. to replay a dated snapshot
    fixed_now: datetime | None = None

    @property
    def host_port(self) -> tuple[str, int]:
        host, _, port = self.listen.rpartition(":")
        try:
            return host or "127.0.0.1", int(port)
        except ValueError:
            raise ConfigError(f"bad listen address {self.listen!r}") from None

    def check_paths(self) -> None:
        for name in ("manifest", "corpus", "users", "market", "ontology", "guard_rules"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{name}: file not found: {path}")

    @classmethod
    def from_dict(cls, raw: dict[str, Any], base_dir: Path | None = None) -> ServiceConfig:
        base = base_dir or Path.cwd()

        def path(key: str, required: bool = True) -> Path | None:
            value = raw.get(key)
            if value is None:
                if required:
                    raise ConfigError(f"missing required key {key!r}")
                return None
            p = Path(value)
            return p if p.is_absolute() else (base / p)

        rec = raw.get("recommender", {})
        try:
            recommender = RecommenderConfig(**rec)
        except TypeError as exc:
            raise ConfigError(f"recommender: {exc}") from None
        routing = raw.get("routing", {})
        pregen = raw.get("pregen", {})
        listen = os.environ.get(ENV_LISTEN) or raw.get("listen", "127.0.0.1:8080")
        fixed_now = None
        if raw.get("fixed_now"):
            try:
                fixed_now = datetime.fromisoformat(raw["fixed_now"])
            except ValueError:
                raise ConfigError(f"fixed_now: bad timestamp {raw['fixed_now']!r}") from None
            if fixed_now.tzinfo is None:
                fixed_now = fixed_now.replace(tzinfo=timezone.utc)
        cfg = cls(
            manifest=path("manifest"),
            corpus=path("corpus"),
            users=path("users"),
            market=path("market"),
            state_dir=path("state_dir"),
            listen=listen,
            strict_manifest=bool(raw.get("strict_manifest", True)),
            ontology=path("ontology", required=False),
            guard_rules=path("guard_rules", required=False),
            allow_external=bool(routing.get("allow_external", True)),
            retrieval_k=int(raw.get("retrieval_k", 4)),
            template_chars=int(raw.get("template_chars", 1200)),
            recommender=recommender,
            pregen_enabled=bool(pregen.get("enabled", True)),
            pregen_interval_s=float(pregen.get("interval_seconds", DEFAULT_PREGEN_INTERVAL_S)),
            fixed_now=fixed_now,
        )
        cfg.check_paths()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> ServiceConfig:
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw, path.resolve().parent)

    @classmethod
    def from_env(cls) -> ServiceConfig:
        value = os.environ.get(ENV_CONFIG)
        if not value:
            raise ConfigError(f"no config given and ${ENV_CONFIG} is unset")
        return cls.from_file(value)

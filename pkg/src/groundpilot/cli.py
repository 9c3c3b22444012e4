"""Command-line entry point. Exit codes: 0 ok, 1 config/input error, 2 runtime failure."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import uuid
from datetime import date
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

DEFAULT_STATE_DIR = "groundpilot-state"


class InputError(Exception):
    """Bad arguments or unreadable input files; maps to exit code 1."""


def _print_json(obj: Any) -> None:
    print(json.dumps(obj, indent=2, ensure_ascii=False, default=str))


def demo_config_path() -> Path:
    return Path(str(resources.files("groundpilot") / "data" / "demo" / "config.json"))


def _load_config(path: str | None):
    from .service import ENV_CONFIG, ServiceConfig

    chosen = path or os.environ.get(ENV_CONFIG)
    if chosen:
        return ServiceConfig.from_file(chosen), False
    return ServiceConfig.from_file(demo_config_path()), True


def _service(args: argparse.Namespace):
    """Service for one-shot commands. The bundled demo config keeps its
    state in ./groundpilot-state instead of the package directory."""
    from .service import Service

    config, is_demo = _load_config(args.config)
    overrides: dict[str, Any] = {"pregen_interval_s": None}
    if is_demo:
        overrides["state_dir"] = Path(DEFAULT_STATE_DIR)
    return Service.from_config(config, **overrides)


# --- commands --------------------------------------------------------------------


def cmd_validate_manifest(args: argparse.Namespace) -> int:
    from .registry import Sensitivity, load_manifest

    manifest = load_manifest(args.path, strict=args.strict)
    pii = sorted(c.id for c in manifest.components.values() if c.sensitivity is Sensitivity.PII)
    _print_json(
        {
            "valid": True,
            "strict": args.strict,
            "digest": manifest.digest,
            "sources": len(manifest.sources),
            "modules": len(manifest.modules),
            "components": len(manifest.components),
            "pii_modules": sorted(manifest.pii_module_ids()),
            "pii_components": pii,
        }
    )
    return EXIT_OK


def cmd_route(args: argparse.Namespace) -> int:
    from .registry import UnknownComponentError
    from .router import RoutedRequest

    svc = _service(args)
    try:
        req = RoutedRequest(uuid.uuid4().hex, args.user, args.component, args.query, svc.clock())
        try:
            result, record = svc.router.invoke(req)
        except UnknownComponentError as exc:
            raise InputError(f"unknown component {exc.component_id!r}") from None
        _print_json({"response": result.to_dict(), "audit": record.to_dict()})
    finally:
        svc.shutdown()
    return EXIT_OK


def cmd_eval_guard(args: argparse.Namespace) -> int:
    from .guard import RuleGuard, evaluate_f1, load_samples

    guard = RuleGuard.from_file(args.rules) if args.rules else RuleGuard.default()
    samples = load_samples(args.samples)
    report = evaluate_f1(samples, guard, args.direction)
    _print_json({"samples": len(samples), "direction": args.direction, **report.to_dict()})
    return EXIT_OK


def cmd_ingest(args: argparse.Namespace) -> int:
    from .retrieval import load_corpus

    svc = _service(args)
    try:
        before = svc.index.current
        docs = load_corpus(args.corpus, svc.manifest.modules)
        generation = svc.ingest(docs)
        after = svc.index.current
        _print_json(
            {
                "ingested_documents": len(docs),
                "generation_before": before.generation,
                "generation": generation,
                "documents": len(after.documents),
                "passages": len(after.passages),
            }
        )
    finally:
        svc.shutdown()
    return EXIT_OK


def cmd_search(args: argparse.Namespace) -> int:
    from .retrieval import HashingEmbedder, build_generation, hybrid_search, load_corpus, load_ontology
    from .retrieval.query import default_ontology_path

    config, _ = _load_config(args.config)
    corpus = args.corpus or config.corpus
    index = build_generation(load_corpus(corpus), HashingEmbedder())
    ontology = load_ontology(args.ontology or config.ontology or default_ontology_path())
    ref = date.fromisoformat(args.date) if args.date else (config.fixed_now.date() if config.fixed_now else date.today())
    modules = None
    if args.component:
        from .registry import load_manifest

        modules = load_manifest(config.manifest, strict=config.strict_manifest).get_component(args.component).module_ids
    result = hybrid_search(index, args.query, args.k, ontology=ontology, reference_date=ref, modules=modules, user=args.user)
    q = result.query
    _print_json(
        {
            "generation": result.generation,
            "keywords": list(q.keywords),
            "expansion_terms": list(q.expansion_terms),
            "time_window": [d.isoformat() for d in q.time_window] if q.time_window else None,
            "results": [
                {
                    "rank": p.fused_rank,
                    "doc_id": p.doc_id,
                    "fused_score": p.fused_score,
                    "sparse_score": p.sparse_score,
                    "dense_score": p.dense_score,
                    "source_module": p.source_module,
                    "text": p.passage_text,
                }
                for p in result.passages
            ],
        }
    )
    return EXIT_OK


def cmd_pregen(args: argparse.Namespace) -> int:
    svc = _service(args)
    try:
        if args.user not in svc.users:
            raise InputError(f"unknown user {args.user!r}")
        report = svc.run_pregen_cycle([args.user])
        pool = svc.pools.get(args.user)
        out = report.to_dict()
        out["cards"] = [c.to_dict() for c in pool.cards] if pool else []
        _print_json(out)
    finally:
        svc.shutdown()
    return EXIT_OK


def cmd_feed(args: argparse.Namespace) -> int:
    from .service import UnknownUserError

    svc = _service(args)
    try:
        if args.user not in svc.users:
            raise InputError(f"unknown user {args.user!r}")
        svc.run_pregen_cycle([args.user])
        try:
            trace_id, cards, trace = svc.feed(args.user, args.budget)
        except UnknownUserError:
            raise InputError(f"unknown user {args.user!r}") from None
        _print_json(
            {
                "user_id": args.user,
                "trace_id": trace_id,
                "budget": trace.budget,
                "max_displacement": trace.max_displacement,
                "items": [
                    {
                        "rank": i + 1,
                        "card_id": c.card_id,
                        "insight_type": c.insight_type,
                        "baseline_rank": trace.baseline_order.index(c.card_id) + 1,
                        "text": svc.display_text(c),
                    }
                    for i, c in enumerate(cards)
                ],
            }
        )
    finally:
        svc.shutdown()
    return EXIT_OK


def cmd_eval_routing(args: argparse.Namespace) -> int:
    from .evalmetrics import load_routing_cases, routing_score_batch

    cases = load_routing_cases(args.cases)
    result = routing_score_batch(cases, args.alpha, args.beta)
    out = {"cases": len(cases), "alpha": args.alpha, "beta": args.beta, "mean": result.mean, "sum": result.total}
    if args.per_case:
        out["scores"] = list(result.scores)
    _print_json(out)
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    from .evalmetrics import load_bandit_log, make_policy, replay_evaluate

    log = load_bandit_log(args.log)
    if not log.events:
        raise InputError(f"{args.log}: no events")
    d = len(next(iter(log.events[0].contexts.values())))
    try:
        policy = make_policy(args.policy, d, seed=args.seed, alpha=args.alpha)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    result = replay_evaluate(log, policy)
    _print_json({"policy": args.policy, "logging_policy": log.logging_policy, **result.to_dict()})
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import Service, create_app

    config, is_demo = _load_config(args.config)
    svc = Service.from_config(config, **({"state_dir": Path(DEFAULT_STATE_DIR)} if is_demo else {}))
    svc.run_pregen_cycle()
    host, port = config.host_port
    uvicorn.run(create_app(svc), host=host, port=port, log_level=args.log_level)
    return EXIT_OK


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="groundpilot", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("--config", help="service config JSON (default: $GROUNDPILOT_CONFIG, else the bundled demo)")
        return p

    p = sub.add_parser("validate-manifest", help="validate a component/module manifest")
    p.add_argument("path")
    p.add_argument("--strict", action="store_true", help="also enforce the 20-component / 48-module catalog")
    p.set_defaults(func=cmd_validate_manifest)

    p = with_config(sub.add_parser("route", help="run one request through the router"))
    p.add_argument("--component", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--user", default="u001")
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("eval-guard", help="precision/recall/F1 of a guard rule file on labeled samples")
    p.add_argument("--rules", help="rule file (default: bundled rules)")
    p.add_argument("--samples", required=True)
    p.add_argument("--direction", choices=["input", "output"], default="input")
    p.set_defaults(func=cmd_eval_guard)

    p = with_config(sub.add_parser("ingest", help="refresh the index with a corpus file"))
    p.add_argument("corpus")
    p.set_defaults(func=cmd_ingest)

    p = with_config(sub.add_parser("search", help="hybrid search over a corpus"))
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--corpus", help="corpus JSONL (default: the config's corpus)")
    p.add_argument("--ontology")
    p.add_argument("--component", help="restrict to this component's modules")
    p.add_argument("--user", help="requesting user, for owned documents")
    p.add_argument("--date", help="reference date for temporal phrases (YYYY-MM-DD)")
    p.set_defaults(func=cmd_search)

    p = with_config(sub.add_parser("pregen", help="pre-generate one user's insight cards"))
    p.add_argument("--user", required=True)
    p.set_defaults(func=cmd_pregen)

    p = with_config(sub.add_parser("feed", help="rank one user's feed"))
    p.add_argument("--user", required=True)
    p.add_argument("--budget", type=int)
    p.set_defaults(func=cmd_feed)

    p = sub.add_parser("eval-routing", help="component-classification score over labeled cases")
    p.add_argument("--cases", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--per-case", action="store_true")
    p.set_defaults(func=cmd_eval_routing)

    p = sub.add_parser("replay", help="offline replay evaluation of a bandit policy")
    p.add_argument("--log", required=True)
    p.add_argument("--policy", required=True, help="linucb, random, or fixed:<arm>")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_replay)

    p = with_config(sub.add_parser("serve", help="run the HTTP service"))
    p.add_argument("--log-level", default="info")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    from .registry import ManifestError
    from .retrieval import CorpusError
    from .service import ConfigError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ManifestError, CorpusError, InputError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyError as exc:
        print(f"error: unknown id {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"fatal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

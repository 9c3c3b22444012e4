"""Pre-generate insight cards, rank a feed, and learn from feedback.

Part one serves one user's feed, records clicks on two cards and shows how
the bandit arms and the next ranking move. Part two runs the two offline
simulations behind the learning and repetition checks.

    python3 demos/03_feed_and_bandit.py
"""

from __future__ import annotations

import tempfile
from pathlib import Path

from groundpilot.cli import demo_config_path
from groundpilot.recommender.simulation import LinearEnvironment, run_linear_bandit, simulate_repetition
from groundpilot.service import Service, ServiceConfig


def show(cards, trace, n=6) -> None:
    for rank, card in enumerate(cards[:n], 1):
        moved = trace.displacements.get(card.card_id, 0)
        print(f"  {rank:>2}. {card.insight_type:<28} shift={moved:+d} ucb={trace.ucb_scores.get(card.card_id, 0.0):.3f}")


def main() -> None:
    config = ServiceConfig.from_file(demo_config_path())
    with tempfile.TemporaryDirectory() as tmp:
        svc = Service.from_config(config, state_dir=Path(tmp), pregen_interval_s=None)
        report = svc.run_pregen_cycle()
        print(f"pre-generated cards per user: {report.emitted}")

        _, cards, trace = svc.feed("u001")
        print(f"\nfeed for u001, budget={trace.budget}, max shift={trace.max_displacement}")
        show(cards, trace)

        for card in cards[3:5]:
            ev, _ = svc.feedback("u001", card.card_id, "dwell", dwell_ms=9000)
            print(f"dwell on {card.insight_type}: reward={ev.reward:.2f}")

        _, cards, trace = svc.feed("u001")
        print("\nfeed after feedback")
        show(cards, trace)
        svc.shutdown()

    env = LinearEnvironment.make(n_arms=5, d=5, seed=0)
    linucb = run_linear_bandit(env, 10_000, policy="linucb", alpha=0.5, seed=1)
    uniform = run_linear_bandit(env, 10_000, policy="random", seed=1)
    print(f"\nlinear environment: LinUCB reward {linucb:.1f} vs uniform {uniform:.1f} ({linucb / uniform:.2f}x)")

    down = simulate_repetition(0.2, n_users=100, sessions_per_user=10, seed=2025)
    flat = simulate_repetition(1.0, n_users=100, sessions_per_user=10, seed=2025)
    cut = 1 - down.reshow_fraction / flat.reshow_fraction
    print(f"re-shown read cards: {down.reshow_fraction:.3f} with read down-weighting vs {flat.reshow_fraction:.3f} without ({cut:.0%} fewer)")


if __name__ == "__main__":
    main()

"""Drive the HTTP API in-process with FastAPI's test client.

Exercises chat, feed, idempotent feedback and the Prometheus metrics page,
then restarts the service on the same state directory to show that bandit
state and the event log survive. Needs httpx (installed by the test extra).

    python3 demos/04_http_service.py
"""

from __future__ import annotations

import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from groundpilot.cli import demo_config_path
from groundpilot.service import Service, ServiceConfig, create_app


def main() -> None:
    config = ServiceConfig.from_file(demo_config_path())
    with tempfile.TemporaryDirectory() as tmp:
        state = Path(tmp)
        svc = Service.from_config(config, state_dir=state, pregen_interval_s=None)
        svc.run_pregen_cycle()
        with TestClient(create_app(svc, manage_lifecycle=False)) as client:
            chat = client.post("/v1/chat", json={"user_id": "u002", "component_id": "market_movers", "query": "what moved today"})
            body = chat.json()
            print(f"POST /v1/chat -> {chat.status_code} {body['status']} cites {body['evidence_ids']}")
            print(f"  {body['text'].splitlines()[0]}")

            feed = client.get("/v1/feed/u002").json()
            top = feed["items"][0]
            print(f"GET /v1/feed/u002 -> {len(feed['items'])} cards, top={top['insight_type']}")

            payload = {"user_id": "u002", "card_id": top["card_id"], "event": "click"}
            for _ in range(2):
                ack = client.post("/v1/feedback", json=payload, headers={"Idempotency-Key": "demo-1"}).json()
                print(f"POST /v1/feedback -> {ack['status']} offset={ack['offset']} pulls={ack['pull_count']}")

            metrics = client.get("/metrics").text
            wanted = ("groundpilot_guard_rejection_rate", "groundpilot_pregen_cards_total", "groundpilot_feedback_events_total")
            for line in metrics.splitlines():
                if line.startswith(wanted):
                    print(f"  {line}")
        snapshot = svc.arms.snapshot()
        svc.shutdown()

        again = Service.from_config(config, state_dir=state, pregen_interval_s=None)
        same = all(again.arms.get(arm).same_as(st) for arm, st in snapshot.items())
        print(f"restart: arms identical={same}, next event offset={again.events.next_offset}")
        again.shutdown()


if __name__ == "__main__":
    main()

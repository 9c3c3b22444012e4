"""Disjoint LinUCB over insight-type arms.

Each arm keeps ``A = I + sum x x^T`` and ``b = sum r x``. Scores are

    p_a(x) = theta_a . x + alpha * sqrt(x^T A_a^{-1} x),   theta_a = A_a^{-1} b_a

computed with linear solves rather than explicit inverses.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import threading
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DWELL_SATURATION_MS = 30_000
SNAPSHOT_FORMAT = "groundpilot.bandit-arms"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class BanditArmState:
    arm_id: str
    A: np.ndarray
    b: np.ndarray
    pull_count: int = 0

    @classmethod
    def fresh(cls, arm_id: str, d: int) -> BanditArmState:
        return cls(arm_id, np.eye(d), np.zeros(d), 0)

    @property
    def dimension(self) -> int:
        return self.b.shape[0]

    def theta(self) -> np.ndarray:
        return np.linalg.solve(self.A, self.b)

    def ucb(self, x: np.ndarray, alpha: float) -> float:
        x = _check_context(x, self.dimension)
        width = float(x @ np.linalg.solve(self.A, x))
        return float(self.theta() @ x) + alpha * math.sqrt(max(width, 0.0))

    def same_as(self, other: BanditArmState) -> bool:
        """Bitwise equality of the sufficient statistics."""
        return (
            self.arm_id == other.arm_id
            and self.pull_count == other.pull_count
            and self.A.tobytes() == other.A.tobytes()
            and self.b.tobytes() == other.b.tobytes()
        )


def _check_context(x: np.ndarray, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (d,):
        raise ValueError(f"context has shape {x.shape}, expected ({d},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("context contains non-finite values")
    return x


def shaped_reward(clicked: bool, dwell_ms: float | None = None) -> float:
    """Click indicator, or 0.5*click + 0.5*min(dwell/30s, 1) when dwell is known."""
    if dwell_ms is None:
        return 1.0 if clicked else 0.0
    if dwell_ms < 0:
        raise ValueError("dwell_ms must be non-negative")
    return 0.5 * float(clicked) + 0.5 * min(dwell_ms / DWELL_SATURATION_MS, 1.0)


def bandit_update(arm: BanditArmState, context: np.ndarray, reward: float) -> BanditArmState:
    if not 0.0 <= reward <= 1.0 or math.isnan(reward):
        raise ValueError(f"reward {reward} outside [0, 1]")
    x = _check_context(context, arm.dimension)
    return BanditArmState(arm.arm_id, arm.A + np.outer(x, x), arm.b + reward * x, arm.pull_count + 1)


def bandit_select(
    contexts: Mapping[str, np.ndarray], arms: Mapping[str, BanditArmState], alpha: float
) -> tuple[str, dict[str, float]]:
    """Pick the arm with the highest UCB; ties go to the smallest arm id."""
    if not contexts:
        raise ValueError("no arms to choose from")
    scores = {arm_id: arms[arm_id].ucb(x, alpha) for arm_id, x in contexts.items()}
    best = min(scores, key=lambda a: (-scores[a], a))
    return best, scores


class ArmStore:
    """Shared arm states with one lock per arm.

    Updates to the same arm are serialized; updates to different arms run in
    parallel. ``snapshot`` takes every lock (in sorted order) so it sees a
    consistent cut.
    """

    def __init__(self, arm_ids: Iterable[str], d: int, states: Mapping[str, BanditArmState] | None = None) -> None:
        self.d = d
        self._states: dict[str, BanditArmState] = {a: BanditArmState.fresh(a, d) for a in arm_ids}
        for arm_id, state in (states or {}).items():
            if state.dimension != d:
                raise ValueError(f"arm {arm_id!r} has dimension {state.dimension}, store uses {d}")
            self._states[arm_id] = state
        self._locks = {a: threading.Lock() for a in self._states}

    def __contains__(self, arm_id: str) -> bool:
        return arm_id in self._states

    def arm_ids(self) -> list[str]:
        return sorted(self._states)

    def get(self, arm_id: str) -> BanditArmState:
        return self._states[arm_id]

    def update(self, arm_id: str, context: np.ndarray, reward: float) -> BanditArmState:
        with self._locks[arm_id]:
            new = bandit_update(self._states[arm_id], context, reward)
            self._states[arm_id] = new
            return new

    def snapshot(self) -> dict[str, BanditArmState]:
        ids = sorted(self._locks)
        for a in ids:
            self._locks[a].acquire()
        try:
            return dict(self._states)
        finally:
            for a in reversed(ids):
                self._locks[a].release()

    def pull_counts(self) -> dict[str, int]:
        return {a: s.pull_count for a, s in sorted(self.snapshot().items())}


def snapshot_to_dict(states: Mapping[str, BanditArmState], d: int) -> dict:
    """Versioned, JSON-ready layout. Matrices are flattened row-major."""
    return {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "dimension": d,
        "arms": [
            {
                "arm_id": s.arm_id,
                "pull_count": s.pull_count,
                "A": [float(v) for v in s.A.reshape(-1, order="C")],
                "b": [float(v) for v in s.b],
            }
            for s in sorted(states.values(), key=lambda s: s.arm_id)
        ],
    }


def snapshot_from_dict(raw: Mapping) -> tuple[int, dict[str, BanditArmState]]:
    if raw.get("format") != SNAPSHOT_FORMAT:
        raise ValueError(f"not a bandit snapshot (format={raw.get('format')!r})")
    if raw.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {raw.get('version')!r}")
    d = int(raw["dimension"])
    states = {}
    for entry in raw["arms"]:
        A = np.array(entry["A"], dtype=float).reshape((d, d), order="C")
        b = np.array(entry["b"], dtype=float)
        if b.shape != (d,):
            raise ValueError(f"arm {entry['arm_id']!r}: b has wrong length")
        states[entry["arm_id"]] = BanditArmState(entry["arm_id"], A, b, int(entry["pull_count"]))
    return d, states


def save_snapshot(path: str | Path, store: ArmStore) -> None:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = json.dumps(snapshot_to_dict(store.snapshot(), store.d), separators=(",", ":"))
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_snapshot(path: str | Path, arm_ids: Iterable[str] = ()) -> ArmStore:
    d, states = snapshot_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    return ArmStore(set(arm_ids) | set(states), d, states)

"""Safety and liveness verdicts computed from a consensus trace."""

from __future__ import annotations


def check_safety(trace: list[dict]) -> bool:
    """No two honest validators finalize different blocks at one height."""
    finalized: dict[int, str] = {}
    for event in trace:
        if event.get("kind") != "finalize" or event.get("byzantine"):
            continue
        height, digest = event["height"], event["digest"]
        if height in finalized and finalized[height] != digest:
            return False
        finalized.setdefault(height, digest)
    return True


def check_liveness(trace: list[dict], gst: int, window: int = 10) -> bool:
    """After GST, every stretch of ``window`` new consensus rounds contains
    at least one finalization."""
    events = sorted(
        (e for e in trace if e.get("kind") in ("round_start", "finalize")),
        key=lambda e: (e["tick"],),
    )
    seen_rounds: set[tuple[int, int]] = set()
    streak = 0
    for event in events:
        if event["tick"] < gst:
            if event["kind"] == "round_start":
                seen_rounds.add((event["height"], event["round"]))
            continue
        if event["kind"] == "finalize":
            if not event.get("byzantine"):
                streak = 0
        else:
            key = (event["height"], event["round"])
            if key not in seen_rounds:
                seen_rounds.add(key)
                streak += 1
                if streak >= window:
                    return False
    return True


def views_per_height(trace: list[dict]) -> dict[int, int]:
    """Highest round number observed per height (0 = single view)."""
    views: dict[int, int] = {}
    for event in trace:
        if event.get("kind") == "round_start":
            h, r = event["height"], event["round"]
            views[h] = max(views.get(h, 0), r)
    return views

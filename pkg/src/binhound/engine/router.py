"""Rule-based specialist routing over the twelve analyst task types.

Rules ship as ordered data: each task carries regex patterns, and the
first task with any pattern matching the query wins. Routing runs on the
prompt document's query section when given a full prompt, so evidence
text can never steer the route.
"""
from __future__ import annotations

import json
import re
from functools import lru_cache
from importlib import resources

_QUERY_MARK = "## query"


@lru_cache(maxsize=1)
def _rules() -> tuple:
    raw = (resources.files("binhound") / "data" / "specialist_rules.json")
    loaded = json.loads(raw.read_text("utf-8"))
    return tuple(
        (entry["task"], tuple(re.compile(p, re.IGNORECASE) for p in entry["patterns"]),
         entry.get("focus", ""))
        for entry in loaded
    )


def task_types() -> tuple:
    return tuple(task for task, _, _ in _rules())


def task_focus(task: str) -> str:
    for name, _, focus in _rules():
        if name == task:
            return focus
    return ""


def match_specialist(text: str) -> str | None:
    """First task whose patterns hit; None falls through to the generalist."""
    if _QUERY_MARK in text:
        text = text.split(_QUERY_MARK, 1)[1]
    for task, patterns, _ in _rules():
        if any(p.search(text) for p in patterns):
            return task
    return None

"""Extraction of structured JSON fields from free-form model replies.

Models frequently wrap the requested JSON object in prose, markdown fences,
or apologies. All extractors here share one rule: scan the reply for the
first balanced ``{...}`` substring that parses as a JSON object, and read
the expected fields out of it. Surrounding prose never changes the result.
"""

from __future__ import annotations

import json
from typing import Any, Iterator


def iter_balanced_objects(text: str) -> Iterator[str]:
    """Yield every top-level balanced ``{...}`` substring, left to right.

    Brace counting is string-aware: braces inside JSON string literals
    (including escaped quotes) do not open or close objects.
    """
    depth = 0
    start = -1
    in_string = False
    escaped = False
    for i, ch in enumerate(text):
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            if depth > 0:
                in_string = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}":
            if depth > 0:
                depth -= 1
                if depth == 0:
                    yield text[start : i + 1]


def first_json_object(text: str) -> dict[str, Any] | None:
    """First balanced substring that parses as a JSON object, or None."""
    for candidate in iter_balanced_objects(text):
        try:
            obj = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


def _field_as_text(obj: dict[str, Any], key: str) -> str:
    if key not in obj:
        return ""
    value = obj[key]
    if isinstance(value, str):
        return value
    return json.dumps(value)


def extract_hints(reply: str) -> tuple[str, str] | None:
    """Extract ("text", "image") hint fields from a critical-agent reply.

    Returns None when no balanced JSON object is present. A missing key
    yields an empty string for that hint.
    """
    obj = first_json_object(reply)
    if obj is None:
        return None
    return _field_as_text(obj, "text"), _field_as_text(obj, "image")


def extract_answer(reply: str) -> str | None:
    """Extract the "Answer" field from a summarizer reply, or None on miss."""
    obj = first_json_object(reply)
    if obj is None or "Answer" not in obj:
        return None
    value = obj["Answer"]
    return value if isinstance(value, str) else json.dumps(value)


def extract_correctness(reply: str) -> int | None:
    """Extract a binary "correctness" field from a judge reply.

    Accepts 0/1 as JSON numbers or numeric strings; anything else is a miss.
    """
    obj = first_json_object(reply)
    if obj is None or "correctness" not in obj:
        return None
    value = obj["correctness"]
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, int) and value in (0, 1):
        return value
    if isinstance(value, str) and value.strip() in ("0", "1"):
        return int(value.strip())
    return None

"""Shared word/punctuation splitting rules.

One rule set backs both the gateway's budget token counter and the metric
tokenizer: split on whitespace, then peel punctuation off word boundaries,
keeping apostrophe contractions as their own tokens ("I'm" -> "I", "'m").
"""

from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"'\w+|\w+|[^\w\s]")


def split_tokens(text: str) -> list[str]:
    """Split ``text`` into word and punctuation tokens (case preserved)."""
    return _TOKEN_RE.findall(text)


def count_tokens(text: str) -> int:
    return sum(1 for _ in _TOKEN_RE.finditer(text))


def truncate_tokens(text: str, limit: int) -> str:
    """Return the prefix of ``text`` covering at most ``limit`` tokens."""
    if limit <= 0:
        return ""
    end = 0
    for i, match in enumerate(_TOKEN_RE.finditer(text)):
        if i >= limit:
            break
        end = match.end()
    return text[:end]

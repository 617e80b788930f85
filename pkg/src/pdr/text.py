"""Small text helpers shared by ingestion, embedding and metrics."""

from __future__ import annotations

import re

_WORD = re.compile(r"[^\W_]+")
_HSPACE = re.compile(r"[ \t\f\v]+")
_MANY_NEWLINES = re.compile(r"\n{3,}")


def tokenize(text: str) -> list[str]:
    """Lowercase ``text`` and split it on maximal runs of non-alphanumerics.

    >>> tokenize("The cat, sat!")
    ['the', 'cat', 'sat']
    >>> tokenize("R2-D2")
    ['r2', 'd2']
    """
    return _WORD.findall(text.lower())


def normalize_whitespace(text: str) -> str:
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    text = _HSPACE.sub(" ", text)
    # trailing spaces before a newline would otherwise survive as " \n"
    text = re.sub(r" *\n *", "\n", text)
    text = _MANY_NEWLINES.sub("\n\n", text)
    return text.strip()


def truncate(text: str, limit: int) -> str:
    return text if len(text) <= limit else text[:limit]

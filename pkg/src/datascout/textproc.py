"""Shared text primitives: tokenization, sentence splitting, word extraction.

Token counts everywhere in this package use the same whitespace-and-punctuation
approximation, so budgets, chunk windows, and length statistics are mutually
consistent. This is an approximation of model tokenizers, not a replacement.
"""

from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_WORD_RE = re.compile(r"[0-9a-z]+")
_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")


def tokenize(text: str) -> list[str]:
    """Split text into word and punctuation tokens."""
    return _TOKEN_RE.findall(text)


def count_tokens(text: str) -> int:
    return len(_TOKEN_RE.findall(text))


def words(text: str) -> list[str]:
    """Lowercased alphanumeric runs, in order of appearance."""
    return _WORD_RE.findall(text.lower())


def split_sentences(text: str) -> list[str]:
    """Split on sentence-final punctuation.

    Each returned sentence is a contiguous substring of the input (modulo
    surrounding whitespace), which downstream extractive stubs rely on.
    """
    parts = [p.strip() for p in _SENTENCE_SPLIT_RE.split(text)]
    return [p for p in parts if p]

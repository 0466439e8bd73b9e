"""Final-answer extraction and canonicalization for free-form solution text.

Answer equivalence is deliberately simple and documented: exact rational
equality for anything that parses as an integer, decimal, or a/b fraction,
case-insensitive surface equality otherwise.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from typing import Optional

_BOXED_OPEN = re.compile(r"\\boxed\s*\{")
_ANSWER_MARKER = re.compile(
    r"\b(?:final\s+answer|answer)\s*(?:is\b|[:=])\s*", re.IGNORECASE
)
_NUMBER = re.compile(r"[-+]?\d+(?:,\d{3})*(?:\.\d+)?(?:\s*/\s*\d+)?")
_DECIMAL = re.compile(r"^[-+]?(?:\d+\.\d*|\.\d+|\d+)$")
_FRACTION = re.compile(r"^([-+]?\d+)\s*/\s*(\d+)$")
_SENTENCE_END = re.compile(r"\.(?=\s|$)")

# delimiter pairs stripped from the outside of a raw answer, repeatedly
_WRAPPERS = [("$$", "$$"), ("$", "$"), ("\\(", "\\)"), ("\\[", "\\]")]


@dataclass(frozen=True, eq=False)
class CanonicalAnswer:
    """A voteable answer: normalized surface plus an optional exact rational."""

    surface: str
    numeric: Optional[Fraction] = None

    @property
    def key(self) -> str:
        """Stable identity used for counting votes and comparing answers."""
        return str(self.numeric) if self.numeric is not None else self.surface

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CanonicalAnswer):
            return NotImplemented
        return self.key == other.key

    def __hash__(self) -> int:
        return hash(self.key)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"CanonicalAnswer({self.surface!r})"


def _strip_wrappers(s: str) -> str:
    while True:
        s = s.strip()
        for left, right in _WRAPPERS:
            if len(s) > len(left) + len(right) and s.startswith(left) and s.endswith(right):
                s = s[len(left):-len(right)]
                break
        else:
            return s


def _parse_numeric(s: str) -> Optional[Fraction]:
    compact = s.replace(",", "") if re.fullmatch(r"[-+]?\d{1,3}(?:,\d{3})+(?:\.\d+)?", s) else s
    m = _FRACTION.match(compact)
    if m:
        num, den = int(m.group(1)), int(m.group(2))
        if den != 0:
            return Fraction(num, den)
        return None
    if _DECIMAL.match(compact):
        try:
            return Fraction(Decimal(compact))
        except (InvalidOperation, ValueError):
            return None
    return None


def canonicalize(raw: str) -> Optional[CanonicalAnswer]:
    """Normalize a raw answer string; returns None if nothing is left.

    Trims whitespace, strips surrounding math delimiters and trailing
    punctuation, collapses internal whitespace, lowercases non-numeric text,
    and parses integers/decimals/simple fractions into exact rationals.
    Idempotent: canonicalizing a canonical surface is a no-op.
    """
    s = _strip_wrappers(raw)
    s = s.rstrip(".,;:!?")
    s = " ".join(s.split())
    if not s:
        return None
    numeric = _parse_numeric(s)
    if numeric is not None:
        return CanonicalAnswer(surface=s, numeric=numeric)
    return CanonicalAnswer(surface=s.lower())


def _balanced_brace_span(text: str, start: int) -> Optional[str]:
    """Content of a brace group opening right before `start`; None if unbalanced."""
    depth = 1
    i = start
    while i < len(text) and depth > 0:
        if text[i] == "{":
            depth += 1
        elif text[i] == "}":
            depth -= 1
        i += 1
    if depth != 0:
        return None
    return text[start:i - 1]


def _last_boxed(text: str) -> Optional[str]:
    content = None
    for m in _BOXED_OPEN.finditer(text):
        span = _balanced_brace_span(text, m.end())
        if span is not None:
            content = span
    if content is None:
        return None
    # drill into nested \boxed{...} and keep the innermost expression
    inner = _last_boxed(content)
    return inner if inner is not None else content.strip()


def _after_last_marker(text: str) -> Optional[str]:
    last = None
    for m in _ANSWER_MARKER.finditer(text):
        last = m
    if last is None:
        return None
    segment = text[last.end():].splitlines()[0].strip()
    cut = _SENTENCE_END.search(segment)
    if cut:
        segment = segment[:cut.start()]
    return segment or None


def _last_number(text: str) -> Optional[str]:
    matches = _NUMBER.findall(text)
    return matches[-1] if matches else None


def extract_answer(text: str) -> Optional[CanonicalAnswer]:
    """Pull the final answer out of a solution text, canonicalized.

    Cascade: innermost boxed expression, then the text following the last
    final-answer marker phrase, then the last standalone number. Each rule is
    attempted in order; the first whose result canonicalizes wins. Returns
    None (an abstention, not an error) when every rule fails.
    """
    for candidate in (_last_boxed(text), _after_last_marker(text), _last_number(text)):
        if candidate is None:
            continue
        answer = canonicalize(candidate)
        if answer is not None:
            return answer
    return None

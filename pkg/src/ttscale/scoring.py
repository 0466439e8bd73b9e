"""Pluggable verifier scoring for candidate pools.

Scores can arrive inline in candidates.jsonl or be produced here: reference
scorers for testing (exact-match-to-gold, constant) and an HTTP scorer that
asks a grading model over the same chat-completions contract the generation
backend uses.
"""

from __future__ import annotations

import re
from typing import Protocol, Sequence

from .answers import canonicalize
from .core import BackendError, Candidate, Problem, RunConfig, ValidationError, with_score
from .generation import HttpBackend

GRADING_PROMPT = (
    "You are grading one candidate solution to a problem.\n"
    "Problem:\n{problem}\n\nCandidate solution:\n{solution}\n\n"
    "Reply with a single quality score between 0 and 1."
)

_SCORE_RE = re.compile(r"[-+]?\d*\.?\d+")


class Scorer(Protocol):
    def score(self, problem: Problem, candidate: Candidate) -> float:
        """Quality score for one candidate; higher is better."""


class ExactMatchScorer:
    """1.0 when the extracted answer equals the gold answer, else 0.0."""

    def score(self, problem: Problem, candidate: Candidate) -> float:
        if candidate.extracted_answer is None:
            return 0.0
        answer = canonicalize(candidate.extracted_answer)
        gold = canonicalize(problem.gold_answer)
        return 1.0 if answer is not None and gold is not None and answer == gold else 0.0


class ConstantScorer:
    def __init__(self, value: float = 0.5):
        self.value = value

    def score(self, problem: Problem, candidate: Candidate) -> float:
        return self.value


class HttpScorer:
    """Grades through a chat-completions endpoint with a fixed prompt.

    The response's first number is taken as the score and clamped to [0, 1].
    """

    def __init__(self, backend: HttpBackend, prompt_template: str = GRADING_PROMPT):
        if "{problem}" not in prompt_template or "{solution}" not in prompt_template:
            raise ValidationError("grading prompt needs {problem} and {solution}")
        self.backend = backend
        self.prompt_template = prompt_template

    def score(self, problem: Problem, candidate: Candidate) -> float:
        prompt = (self.prompt_template
                  .replace("{problem}", problem.prompt)
                  .replace("{solution}", candidate.text))
        text, _ = self.backend.complete(problem, prompt, 1, candidate.gen_seed,
                                        RunConfig(temperature=0.0))
        match = _SCORE_RE.search(text)
        if not match:
            raise BackendError(f"scorer returned no number: {text[:120]!r}")
        return min(1.0, max(0.0, float(match.group())))


def score_pool(problems: Sequence[Problem], pool: Sequence[Candidate],
               scorer: Scorer,
               overwrite: bool = False) -> list[Candidate]:
    """Attach verifier scores to every candidate, keeping existing ones
    unless asked to overwrite."""
    by_id = {p.id: p for p in problems}
    scored = []
    for candidate in pool:
        problem = by_id.get(candidate.problem_id)
        if problem is None:
            raise ValidationError(f"no problem for candidate {candidate.problem_id!r}")
        if candidate.score is not None and not overwrite:
            scored.append(candidate)
        else:
            scored.append(with_score(candidate, scorer.score(problem, candidate)))
    return scored

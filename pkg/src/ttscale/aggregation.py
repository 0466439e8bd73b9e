"""Majority voting over candidate pools and subset accuracy estimation.

The tie rule lives in one place (`tally`) and is shared with the simulator so
the exact oracle and the production vote can never diverge: ties go to the
answer with the higher mean verifier score when scores are available, else to
the answer whose earliest supporting entry appears first.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Sequence

from .answers import CanonicalAnswer, canonicalize
from .core import Candidate, Problem, ValidationError, stable_seed

ENUMERATION_LIMIT = 10_000


@dataclass(frozen=True)
class VotingResult:
    winner: Optional[CanonicalAnswer]
    counts: dict
    abstentions: int
    tie: bool
    correct: bool


@dataclass(frozen=True)
class AccEstimate:
    """Majority-vote accuracy at sample budget n, averaged over problems."""

    n: int
    mean_acc: float
    stderr: float
    method: str  # "exact" | "monte_carlo"
    rounds: int


def tally(entries: Sequence[tuple[Optional[str], Optional[float], int]]) -> tuple[Optional[str], dict, int, bool]:
    """Count votes over (answer_key, score, order_index) entries.

    Returns (winner_key, counts, abstentions, tie). None keys are abstentions
    and never enter the counts. This is the single authoritative tie rule.
    """
    counts: dict[str, int] = {}
    scores: dict[str, list[float]] = {}
    earliest: dict[str, int] = {}
    abstentions = 0
    for key, score, order in entries:
        if key is None:
            abstentions += 1
            continue
        counts[key] = counts.get(key, 0) + 1
        if score is not None:
            scores.setdefault(key, []).append(score)
        if key not in earliest or order < earliest[key]:
            earliest[key] = order
    if not counts:
        return None, counts, abstentions, False
    top = max(counts.values())
    tied = [k for k, v in counts.items() if v == top]
    if len(tied) == 1:
        return tied[0], counts, abstentions, False
    if all(k in scores for k in tied):
        best_mean = max(sum(scores[k]) / len(scores[k]) for k in tied)
        tied = [k for k in tied if sum(scores[k]) / len(scores[k]) == best_mean]
        if len(tied) == 1:
            return tied[0], counts, abstentions, True
    winner = min(tied, key=lambda k: earliest[k])
    return winner, counts, abstentions, True


def _entry_key(candidate: Candidate) -> Optional[str]:
    if candidate.extracted_answer is None:
        return None
    answer = canonicalize(candidate.extracted_answer)
    return answer.key if answer is not None else None


def majority_vote(pool: Sequence[Candidate], gold: CanonicalAnswer) -> VotingResult:
    """Vote over extracted answers; abstentions are excluded from counts."""
    if not pool:
        raise ValidationError("majority_vote requires a non-empty pool")
    entries = [(_entry_key(c), c.score, c.sample_index) for c in pool]
    winner_key, counts, abstentions, tie = tally(entries)
    winner: Optional[CanonicalAnswer] = None
    if winner_key is not None:
        for c in pool:
            if _entry_key(c) == winner_key:
                winner = canonicalize(c.extracted_answer)  # type: ignore[arg-type]
                break
    correct = winner_key is not None and winner_key == gold.key
    return VotingResult(winner=winner, counts=counts, abstentions=abstentions,
                        tie=tie, correct=correct)


def best_of_n_by_score(pool: Sequence[Candidate]) -> Candidate:
    """Highest-score candidate; equal scores go to the smallest sample_index."""
    if not pool:
        raise ValidationError("best_of_n_by_score requires a non-empty pool")
    for c in pool:
        if c.score is None:
            raise ValidationError(
                f"candidate ({c.problem_id!r}, {c.sample_index}) has no score"
            )
    return max(pool, key=lambda c: (c.score, -c.sample_index))


def _subset_wins(keys: Sequence[Optional[str]], scores: Sequence[Optional[float]],
                 indices: Sequence[int], gold_key: str) -> bool:
    entries = [(keys[i], scores[i], i) for i in indices]
    winner, _, _, _ = tally(entries)
    return winner == gold_key


def subset_accuracy(pool: Sequence[Candidate], gold: CanonicalAnswer, n: int,
                    rounds: int, seed: int,
                    enumeration_limit: int = ENUMERATION_LIMIT) -> tuple[float, float, bool]:
    """P(size-n subset of the pool votes for gold), with its MC variance.

    Exhaustive over all C(|pool|, n) subsets when that count is within
    enumeration_limit, else `rounds` seeded Monte-Carlo draws without
    replacement. Returns (probability, variance, exact).
    """
    size = len(pool)
    if n > size:
        raise ValidationError(f"subset size {n} exceeds pool size {size}")
    if n < 1:
        raise ValidationError("subset size must be >= 1")
    ordered = sorted(pool, key=lambda c: c.sample_index)
    keys = [_entry_key(c) for c in ordered]
    scores = [c.score for c in ordered]
    if math.comb(size, n) <= enumeration_limit:
        wins = sum(
            _subset_wins(keys, scores, combo, gold.key)
            for combo in combinations(range(size), n)
        )
        return wins / math.comb(size, n), 0.0, True
    rng = random.Random(seed)
    wins = 0
    for _ in range(rounds):
        indices = rng.sample(range(size), n)
        if _subset_wins(keys, scores, indices, gold.key):
            wins += 1
    p = wins / rounds
    return p, p * (1.0 - p) / rounds, False


def acc_maj_at(problems: Sequence[Problem], pools: dict[str, Sequence[Candidate]],
               n: int, rounds: int, seed: int,
               enumeration_limit: int = ENUMERATION_LIMIT) -> AccEstimate:
    """Estimate majority-vote accuracy at budget n across all problems.

    Each problem's pool is subsampled without replacement; per-problem
    probabilities are averaged. stderr comes from the per-problem Monte-Carlo
    variances and is exactly 0 when every problem was fully enumerated.
    """
    if not problems:
        raise ValidationError("acc_maj_at requires at least one problem")
    values: list[float] = []
    variances: list[float] = []
    all_exact = True
    for problem in problems:
        pool = pools.get(problem.id)
        if not pool:
            raise ValidationError(f"no candidate pool for problem {problem.id!r}")
        gold = canonicalize(problem.gold_answer)
        assert gold is not None  # load_problems guarantees canonical golds
        p, var, exact = subset_accuracy(
            pool, gold, n, rounds, stable_seed(seed, problem.id, n),
            enumeration_limit=enumeration_limit,
        )
        values.append(p)
        variances.append(var)
        all_exact = all_exact and exact
    mean = sum(values) / len(values)
    stderr = math.sqrt(sum(variances)) / len(values)
    return AccEstimate(
        n=n, mean_acc=mean, stderr=0.0 if all_exact else stderr,
        method="exact" if all_exact else "monte_carlo", rounds=rounds,
    )

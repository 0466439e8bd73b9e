"""Exact and Monte-Carlo majority-vote accuracy under answer distributions.

Serves as the brute-force oracle for the aggregation pipeline. Monte-Carlo
trials apply the aggregation tie rule verbatim through the shared `tally`
code path; the exact engine sums multinomial outcome probabilities, resolving
ties by their expected outcome (each of m equal-count labels wins the
earliest-occurrence rule with probability 1/m, by exchangeability of the
sample order).
"""

from __future__ import annotations

import json
import math
import random
from bisect import bisect_right
from dataclasses import dataclass
from itertools import accumulate
from typing import Iterator, Union

import numpy as np

from .aggregation import tally
from .core import ParseError, PathLike, ValidationError

PROB_TOLERANCE = 1e-9
ENUM_OUTCOME_LIMIT = 1_000_000
# enumeration keeps exact integer multinomial coefficients, so bound the n it
# may see; beyond it (or beyond the outcome cap) an exact convolution over
# per-label count series takes over, up to an O(k * n^2) work ceiling
ENUM_N_LIMIT = 1024
CONVOLUTION_N_LIMIT = 8192


@dataclass(frozen=True)
class AnswerDistribution:
    """Per-problem categorical answer model; the first label is correct."""

    labels: tuple[str, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.labels) != len(self.probs) or not self.labels:
            raise ValidationError("labels and probs must be equal-length and non-empty")
        if any(p < 0 for p in self.probs):
            raise ValidationError("probabilities must be non-negative")
        if abs(sum(self.probs) - 1.0) > PROB_TOLERANCE:
            raise ValidationError(f"probabilities sum to {sum(self.probs)}, not 1")
        if len(set(self.labels)) != len(self.labels):
            raise ValidationError("labels must be distinct")
        if any(not lbl for lbl in self.labels):
            raise ValidationError("labels must be non-empty strings")

    def sample(self, rng: random.Random) -> str:
        """One seeded draw; consumes exactly one rng.random() call."""
        cumulative = list(accumulate(self.probs))
        idx = bisect_right(cumulative, rng.random() * cumulative[-1])
        return self.labels[min(idx, len(self.labels) - 1)]


def _dist_from_record(record: dict, origin: str) -> AnswerDistribution:
    if not isinstance(record, dict) or "labels" not in record or "probs" not in record:
        raise ParseError(f"{origin}: distribution needs 'labels' and 'probs'")
    return AnswerDistribution(tuple(record["labels"]), tuple(record["probs"]))


def load_distributions(path: PathLike) -> dict[str, AnswerDistribution]:
    """Read dist.json: either one {labels, probs} object or a map of them."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: malformed JSON: {exc.msg}") from exc
    if isinstance(data, dict) and "labels" in data:
        return {"*": _dist_from_record(data, str(path))}
    if not isinstance(data, dict):
        raise ParseError(f"{path}: expected an object")
    return {pid: _dist_from_record(rec, f"{path}[{pid}]") for pid, rec in data.items()}


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    """All count vectors of length `parts` summing to `total`."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in _compositions(total - head, parts - 1):
            yield (head,) + rest


def _win_probability(counts: tuple[int, ...]) -> float:
    """Expected vote outcome for the correct label given a count vector."""
    top = max(counts)
    if counts[0] < top or top == 0:
        return 0.0
    tied = sum(1 for c in counts if c == top)
    return 1.0 if tied == 1 else 1.0 / tied


def _exact_by_enumeration(dist: AnswerDistribution, n: int) -> float:
    k = len(dist.labels)
    total = 0.0
    terms = []
    for counts in _compositions(n, k):
        win = _win_probability(counts)
        if win == 0.0:
            continue
        coeff = math.factorial(n)
        prob = 1.0
        for c, p in zip(counts, dist.probs):
            coeff //= math.factorial(c)
            prob *= p ** c
        terms.append(win * coeff * prob)
    total = math.fsum(terms)
    return min(total, 1.0)


def _log_binom_pmf(n: int, c: int, p: float) -> float:
    if p == 0.0:
        return 0.0 if c == 0 else -math.inf
    if p == 1.0:
        return 0.0 if c == n else -math.inf
    return (math.lgamma(n + 1) - math.lgamma(c + 1) - math.lgamma(n - c + 1)
            + c * math.log(p) + (n - c) * math.log1p(-p))


def _poisson_series(lam: float, upto: int, lgamma_table: np.ndarray) -> np.ndarray:
    """Poisson(lam) pmf for counts 0..upto (a well-scaled weight series)."""
    if lam == 0.0:
        out = np.zeros(upto + 1)
        out[0] = 1.0
        return out
    w = np.arange(upto + 1)
    return np.exp(w * math.log(lam) - lam - lgamma_table[: upto + 1])


def _exact_by_convolution(dist: AnswerDistribution, n: int) -> float:
    """Exact win probability without enumerating the outcome space.

    For each correct-label count c, the wrong labels' joint count law
    (multinomial) is expressed as independent Poissons conditioned on their
    sum, so per-label weight series can be convolved. A second polynomial
    dimension tracks how many wrong labels sit exactly at count c, which
    feeds the expected tie outcome 1/(t+1).
    """
    p0 = dist.probs[0]
    wrong = [p for p in dist.probs[1:]]
    total_wrong = sum(wrong)
    lgamma_table = np.array([math.lgamma(w + 1) for w in range(n + 1)])
    result = 0.0
    for c in range(1, n + 1):
        log_pc = _log_binom_pmf(n, c, p0)
        if log_pc == -math.inf:
            continue
        pc = math.exp(log_pc)
        if pc == 0.0:
            continue
        m = n - c
        if m == 0:
            result += pc
            continue
        ratios = [q / total_wrong for q in wrong]
        # slices[t][s]: scaled P(first labels use s samples, t of them == c, rest < c)
        slices = [np.zeros(m + 1) for _ in range(len(wrong) + 1)]
        slices[0][0] = 1.0
        for r in ratios:
            lam = m * r
            series = _poisson_series(lam, min(c, m), lgamma_table)
            below = series[:min(c, m + 1)]  # counts 0..c-1
            at = series[c] if c <= m else 0.0
            new = [np.zeros(m + 1) for _ in range(len(slices))]
            for t, cur in enumerate(slices):
                if not cur.any():
                    continue
                conv = np.convolve(cur, below)[: m + 1]
                new[t] += conv
                if at > 0.0 and t + 1 < len(new):
                    shifted = np.zeros(m + 1)
                    shifted[c:] = cur[: m + 1 - c] * at
                    new[t + 1] += shifted
            slices = new
        # Poisson(m; m) is the weight conditioning the sum back to exactly m
        norm = float(_poisson_series(float(m), m, lgamma_table)[m])
        win = math.fsum(
            float(slices[t][m]) / (t + 1) for t in range(len(slices)) if slices[t][m] > 0.0
        )
        result += pc * (win / norm)
    return min(result, 1.0)


def exact_maj_accuracy(dist: AnswerDistribution, n: int) -> float:
    """Exact probability that the correct label wins the majority vote at n."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    k = len(dist.labels)
    if k == 1:
        return 1.0
    if n <= ENUM_N_LIMIT and math.comb(n + k - 1, k - 1) <= ENUM_OUTCOME_LIMIT:
        return _exact_by_enumeration(dist, n)
    if n > CONVOLUTION_N_LIMIT:
        raise ValidationError(
            f"outcome space too large for exact computation (n={n}, k={k})"
        )
    return _exact_by_convolution(dist, n)


def mc_maj_accuracy(dist: AnswerDistribution, n: int, trials: int, seed: int) -> dict:
    """Seeded Monte-Carlo estimate; applies the shared vote rule per trial."""
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = random.Random(seed)
    gold = dist.labels[0]
    wins = 0
    for _ in range(trials):
        entries = [(dist.sample(rng), None, i) for i in range(n)]
        winner, _, _, _ = tally(entries)
        if winner == gold:
            wins += 1
    mean = wins / trials
    stderr = math.sqrt(mean * (1.0 - mean) / trials)
    return {"mean": mean, "stderr": stderr, "trials": trials}


def scaling_curve(dist: AnswerDistribution, schedule: Union[list, tuple]) -> dict[int, float]:
    """Exact majority accuracy at every scheduled n."""
    ns = list(schedule)
    if not ns or any(not isinstance(x, int) or x < 1 for x in ns):
        raise ValidationError("schedule must hold positive integers")
    return {n: exact_maj_accuracy(dist, n) for n in ns}

"""Scaling metrics over accuracy curves and diversity metrics over pools.

Scaling side: absolute improvement over the smallest budget, mean accuracy
gain per doubling of the sample budget, and the smallest budget reaching a
target accuracy. Diversity side: distinct-n, leave-one-out self-BLEU, answer
entropy, and mean pairwise token-Jaccard distance.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

from .answers import canonicalize
from .core import Candidate, ValidationError

UNREACHED = "unreached"


@dataclass(frozen=True)
class AccuracyCurve:
    """Majority-vote accuracy at each sampled budget N for one model."""

    points: dict  # N -> accuracy in [0, 1]
    model_label: str

    def __post_init__(self):
        if not self.points:
            raise ValidationError("curve needs at least one point")
        for n, acc in self.points.items():
            if not isinstance(n, int) or n < 1:
                raise ValidationError(f"curve key {n!r} is not a positive integer")
            if not 0.0 <= acc <= 1.0:
                raise ValidationError(f"accuracy {acc} at N={n} outside [0, 1]")

    def sorted_points(self) -> list[tuple[int, float]]:
        return sorted(self.points.items())


@dataclass(frozen=True)
class ScalingReport:
    improvement: Optional[float]  # percentage points, None when undefined
    gain_per_doubling: Optional[float]
    min_n: Optional[int]  # None renders as "unreached"
    threshold: float
    notes: tuple = ()


@dataclass(frozen=True)
class DiversityReport:
    distinct_1: float
    distinct_2: float
    self_bleu: float
    answer_entropy: float
    pairwise_jaccard_distance: float


def improvement(curve: AccuracyCurve, baseline_n: Optional[int] = None) -> float:
    """Accuracy at the largest N minus accuracy at the baseline N, in pp.

    The baseline defaults to the curve's smallest budget (the reference
    protocol reports against N=2).
    """
    points = dict(curve.points)
    if baseline_n is None:
        baseline_n = min(points)
    if baseline_n not in points:
        raise ValidationError(f"curve has no baseline point at N={baseline_n}")
    top_n = max(points)
    return (points[top_n] - points[baseline_n]) * 100.0


def gain_per_doubling(curve: AccuracyCurve) -> float:
    """Mean accuracy gain in pp per doubling of the sample budget.

    Consecutive curve points must sit a power of two apart; a gap of 2^k
    counts as k doublings, so endpoint-only curves average over the implied
    doublings between them.
    """
    points = curve.sorted_points()
    if len(points) < 2:
        raise ValidationError("gain_per_doubling needs at least two points")
    doublings = 0
    for (a, _), (b, _) in zip(points, points[1:]):
        if b % a != 0 or (b // a) & (b // a - 1) != 0:
            raise ValidationError(f"schedule not doubling: {a} -> {b}")
        doublings += (b // a).bit_length() - 1
    return (points[-1][1] - points[0][1]) * 100.0 / doublings


def min_n_to_threshold(curve: AccuracyCurve, threshold: float) -> Optional[int]:
    """Smallest N with accuracy >= threshold; None when never reached."""
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold must be in [0, 1], got {threshold}")
    for n, acc in curve.sorted_points():
        if acc >= threshold:
            return n
    return None


def scaling_report(curve: AccuracyCurve, threshold: float,
                   baseline_n: Optional[int] = None) -> ScalingReport:
    """All three scaling metrics, degrading gracefully on degenerate curves."""
    notes = []
    if len(curve.points) < 2:
        imp = None
        notes.append("improvement omitted: single-point curve")
    else:
        try:
            imp = improvement(curve, baseline_n)
        except ValidationError as exc:
            imp = None
            notes.append(f"improvement omitted: {exc}")
    try:
        gain = gain_per_doubling(curve)
    except ValidationError as exc:
        gain = None
        notes.append(f"gain_per_doubling omitted: {exc}")
    return ScalingReport(
        improvement=imp, gain_per_doubling=gain,
        min_n=min_n_to_threshold(curve, threshold), threshold=threshold,
        notes=tuple(notes),
    )


def _ngrams(tokens: Sequence[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def distinct_n(texts: Sequence[str], n: int) -> float:
    """Unique n-grams across the pool divided by total n-grams."""
    if not texts:
        raise ValidationError("distinct_n requires a non-empty pool")
    if n < 1:
        raise ValidationError("n must be >= 1")
    all_ngrams: list[tuple[str, ...]] = []
    for text in texts:
        all_ngrams.extend(_ngrams(text.split(), n))
    if not all_ngrams:
        raise ValidationError(f"no {n}-grams in pool (all texts shorter than {n} tokens)")
    return len(set(all_ngrams)) / len(all_ngrams)


def _bleu_against(hyp: list[str], refs: list[list[str]], max_ngram: int) -> float:
    if not hyp:
        return 0.0
    precisions = []
    for order in range(1, min(max_ngram, len(hyp)) + 1):
        hyp_counts = Counter(_ngrams(hyp, order))
        clip: Counter = Counter()
        for ref in refs:
            ref_counts = Counter(_ngrams(ref, order))
            for gram, count in ref_counts.items():
                clip[gram] = max(clip[gram], count)
        matched = sum(min(count, clip[gram]) for gram, count in hyp_counts.items())
        total = sum(hyp_counts.values())
        if matched == 0:
            return 0.0  # add-zero clipping: any empty order zeroes the score
        precisions.append(matched / total)
    geo = math.exp(sum(math.log(p) for p in precisions) / len(precisions))
    ref_len = min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
    bp = 1.0 if len(hyp) >= ref_len else math.exp(1.0 - ref_len / len(hyp))
    return bp * geo


def self_bleu(texts: Sequence[str], max_ngram: int = 4) -> float:
    """Mean BLEU of each candidate against the rest of the pool as references.

    Clipped n-gram precisions for orders 1..max_ngram (capped at the
    hypothesis length), geometric mean, add-zero clipping, closest-length
    brevity penalty. 1.0 means a maximally redundant pool.
    """
    if len(texts) < 2:
        raise ValidationError("self_bleu requires at least two texts")
    token_lists = [t.split() for t in texts]
    scores = [
        _bleu_against(token_lists[i], token_lists[:i] + token_lists[i + 1:], max_ngram)
        for i in range(len(token_lists))
    ]
    return sum(scores) / len(scores)


def answer_entropy(pool: Sequence[Candidate]) -> float:
    """Shannon entropy (nats) of the extracted-answer distribution."""
    counts: Counter = Counter()
    for c in pool:
        if c.extracted_answer is None:
            continue
        answer = canonicalize(c.extracted_answer)
        if answer is not None:
            counts[answer.key] += 1
    if not counts:
        raise ValidationError("answer_entropy: every candidate abstained")
    total = sum(counts.values())
    return -sum((v / total) * math.log(v / total) for v in counts.values())


def pairwise_jaccard_distance(texts: Sequence[str]) -> float:
    """Mean over pairs of 1 - |tokensA ∩ tokensB| / |tokensA ∪ tokensB|."""
    if len(texts) < 2:
        raise ValidationError("pairwise distance requires at least two texts")
    sets = [set(t.split()) for t in texts]
    distances = []
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            union = sets[i] | sets[j]
            if not union:
                distances.append(0.0)
            else:
                distances.append(1.0 - len(sets[i] & sets[j]) / len(union))
    return sum(distances) / len(distances)


def diversity_report(pool: Sequence[Candidate]) -> DiversityReport:
    """All diversity metrics for one candidate pool."""
    texts = [c.text for c in pool]
    entropy = answer_entropy(pool)
    distinct_answers = len({
        canonicalize(c.extracted_answer).key
        for c in pool
        if c.extracted_answer is not None and canonicalize(c.extracted_answer)
    })
    bound = math.log(distinct_answers) + 1e-9 if distinct_answers else 1e-9
    if entropy > bound:
        raise ValidationError(f"entropy {entropy} exceeds ln(k) bound {bound}")
    return DiversityReport(
        distinct_1=distinct_n(texts, 1),
        distinct_2=distinct_n(texts, 2),
        self_bleu=self_bleu(texts),
        answer_entropy=entropy,
        pairwise_jaccard_distance=pairwise_jaccard_distance(texts),
    )


def _mean_diversity(reports: Sequence[DiversityReport]) -> dict:
    fields = ("distinct_1", "distinct_2", "self_bleu", "answer_entropy",
              "pairwise_jaccard_distance")
    return {
        f: sum(getattr(r, f) for r in reports) / len(reports) for f in fields
    }


def build_report(curves: Sequence[AccuracyCurve],
                 pools: Optional[dict] = None,
                 threshold: float = 0.80,
                 baseline_n: Optional[int] = None,
                 costs: Optional[dict] = None) -> dict:
    """Assemble the per-model report document.

    `pools` maps model label -> problem id -> candidate pool; `costs` maps
    model label -> {n: total generated tokens}. Both are optional for
    curve-only ingestion. Cross-model efficiency ratios compare min-N budgets
    pairwise wherever both models reach the threshold.
    """
    if not curves:
        raise ValidationError("build_report requires at least one curve")
    labels = [c.model_label for c in curves]
    if len(set(labels)) != len(labels):
        raise ValidationError(f"duplicate model labels: {sorted(labels)}")
    models: dict = {}
    for curve in sorted(curves, key=lambda c: c.model_label):
        label = curve.model_label
        scaling = scaling_report(curve, threshold, baseline_n)
        entry: dict = {
            "curve": {str(n): acc for n, acc in curve.sorted_points()},
            "scaling": {
                "improvement_pp": scaling.improvement,
                "gain_per_doubling_pp": scaling.gain_per_doubling,
                "min_n": scaling.min_n if scaling.min_n is not None else UNREACHED,
                "threshold": scaling.threshold,
                "notes": list(scaling.notes),
            },
        }
        if costs and label in costs:
            entry["costs"] = {str(n): costs[label][n] for n in sorted(costs[label])}
        if pools and label in pools:
            per_problem = [
                diversity_report(pool)
                for _, pool in sorted(pools[label].items())
                if pool
            ]
            entry["diversity"] = _mean_diversity(per_problem) if per_problem else None
            entry["total_tokens"] = sum(
                c.token_count for pool in pools[label].values() for c in pool
            )
        models[label] = entry
    reached = {
        label: entry["scaling"]["min_n"]
        for label, entry in models.items()
        if entry["scaling"]["min_n"] != UNREACHED
    }
    ratios = []
    for a in sorted(reached):
        for b in sorted(reached):
            if a != b and reached[a] < reached[b]:
                ratios.append({
                    "model": a, "relative_to": b,
                    "ratio": reached[b] / reached[a],
                })
    plot = [
        {"model": label, "n": n, "log2_n": math.log2(n), "acc": acc}
        for label in sorted(models)
        for n, acc in sorted((int(k), v) for k, v in models[label]["curve"].items())
    ]
    return {
        "threshold": threshold,
        "models": models,
        "efficiency_ratios": ratios,
        "plot": plot,
    }

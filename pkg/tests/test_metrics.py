import math
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttscale.core import Candidate, ValidationError
from ttscale.metrics import (
    UNREACHED,
    AccuracyCurve,
    answer_entropy,
    build_report,
    distinct_n,
    diversity_report,
    gain_per_doubling,
    improvement,
    min_n_to_threshold,
    pairwise_jaccard_distance,
    scaling_report,
    self_bleu,
)

# published best-of-N majority-vote reference results used as curve fixtures
PRETRAINED = {2: 0.392, 16: 0.600, 256: 0.658}
DISTILLED = {2: 0.652, 16: 0.776, 256: 0.808}
TUNED = {2: 0.652, 16: 0.782, 256: 0.810}


def curve(points, label="m"):
    return AccuracyCurve(points=points, model_label=label)


class TestImprovement:
    def test_pretrained_reference(self):
        assert improvement(curve(PRETRAINED)) == pytest.approx(26.6, abs=0.05)

    def test_distilled_reference(self):
        assert improvement(curve(DISTILLED)) == pytest.approx(15.6, abs=0.05)

    def test_flat_curve(self):
        assert improvement(curve({2: 0.5, 4: 0.5, 8: 0.5})) == 0.0

    def test_missing_baseline(self):
        with pytest.raises(ValidationError, match="baseline"):
            improvement(curve({4: 0.5, 8: 0.6}), baseline_n=2)

    def test_antisymmetric(self):
        up = curve({2: 0.3, 4: 0.7})
        down = curve({2: 0.7, 4: 0.3})
        assert improvement(up) == -improvement(down)


class TestGainPerDoubling:
    def test_endpoints_only(self):
        # seven implied doublings between N=2 and N=256
        got = gain_per_doubling(curve({2: 0.652, 256: 0.810}))
        assert got == pytest.approx((0.810 - 0.652) * 100 / 7, abs=1e-9)
        assert got == pytest.approx(2.257, abs=0.001)

    def test_single_doubling(self):
        assert gain_per_doubling(curve({2: 0.60, 4: 0.65})) == pytest.approx(5.0)

    def test_non_doubling_schedule_rejected(self):
        with pytest.raises(ValidationError, match="doubling"):
            gain_per_doubling(curve({2: 0.60, 6: 0.70}))

    def test_single_point_rejected(self):
        with pytest.raises(ValidationError, match="two points"):
            gain_per_doubling(curve({2: 0.6}))

    def test_matches_mean_of_consecutive_gains(self):
        points = {2: 0.3, 4: 0.4, 8: 0.44, 16: 0.5}
        diffs = [0.1, 0.04, 0.06]
        assert gain_per_doubling(curve(points)) == pytest.approx(sum(diffs) / 3 * 100)


class TestMinN:
    def test_pretrained_unreached(self):
        assert min_n_to_threshold(curve(PRETRAINED), 0.80) is None

    def test_published_points_reach_at_256(self):
        assert min_n_to_threshold(curve(TUNED), 0.80) == 256

    def test_zero_threshold_gives_smallest_n(self):
        assert min_n_to_threshold(curve(TUNED), 0.0) == 2

    def test_threshold_bounds(self):
        with pytest.raises(ValidationError):
            min_n_to_threshold(curve(TUNED), 1.2)

    @given(st.floats(min_value=0, max_value=1), st.floats(min_value=0, max_value=1))
    @settings(max_examples=50)
    def test_monotone_in_threshold(self, t1, t2):
        lo, hi = min(t1, t2), max(t1, t2)
        c = curve({2: 0.3, 4: 0.55, 8: 0.7, 16: 0.9})
        a, b = min_n_to_threshold(c, lo), min_n_to_threshold(c, hi)
        if a is None:
            assert b is None
        elif b is not None:
            assert a <= b


class TestDistinctN:
    def test_repeated_bigram(self):
        assert distinct_n(["a b", "a b"], 1) == 0.5

    def test_identical_texts_minimal(self):
        k = 5
        texts = ["x y z"] * k
        assert distinct_n(texts, 1) == 3 / (3 * k)

    def test_disjoint_texts_maximal(self):
        assert distinct_n(["a b", "c d", "e f"], 1) == 1.0

    def test_no_ngrams_errors(self):
        with pytest.raises(ValidationError, match="2-grams"):
            distinct_n(["a", "b"], 2)

    def test_permutation_invariant(self):
        texts = ["a b c", "c d", "a e f"]
        for n in (1, 2):
            assert distinct_n(texts, n) == distinct_n(list(reversed(texts)), n)


class TestSelfBleu:
    def test_identical_pool_is_one(self):
        assert self_bleu(["a b c d"] * 3) == pytest.approx(1.0)

    def test_short_identical_pool_is_one(self):
        # orders are capped at the hypothesis length, so 2-token texts still
        # score as perfect self-matches
        assert self_bleu(["a b", "a b"]) == pytest.approx(1.0)

    def test_disjoint_pool_is_zero(self):
        assert self_bleu(["a b c d", "w x y z"]) == 0.0

    def test_hand_computed_mixed_pool(self):
        # pool {t, t, u} with t,u token-disjoint 4-token texts: both copies of
        # t score BLEU 1 against a pool containing t; u scores 0 => mean 2/3
        value = self_bleu(["a b c d", "a b c d", "w x y z"])
        assert value == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_pool_of_one_rejected(self):
        with pytest.raises(ValidationError):
            self_bleu(["a b"])

    def test_matches_bruteforce_oracle(self):
        texts = ["the cat sat on the mat", "the cat sat on a mat",
                 "a dog ran over the hill", "the cat on the mat sat"]
        assert self_bleu(texts) == pytest.approx(_oracle_self_bleu(texts), abs=1e-12)

    def test_permutation_invariant(self):
        texts = ["a b c d", "a b x y", "p q r s"]
        assert self_bleu(texts) == pytest.approx(self_bleu(list(reversed(texts))))


def _oracle_self_bleu(texts, max_ngram=4):
    """Direct transcription of the BLEU definition, kept independent of the
    implementation under test."""
    def ngrams(tokens, n):
        return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]

    scores = []
    for i, hyp_text in enumerate(texts):
        hyp = hyp_text.split()
        refs = [texts[j].split() for j in range(len(texts)) if j != i]
        precisions = []
        failed = False
        for order in range(1, min(max_ngram, len(hyp)) + 1):
            hcounts = Counter(ngrams(hyp, order))
            clipped = 0
            for gram, count in hcounts.items():
                best = max(Counter(ngrams(r, order)).get(gram, 0) for r in refs)
                clipped += min(count, best)
            if clipped == 0:
                failed = True
                break
            precisions.append(clipped / sum(hcounts.values()))
        if failed:
            scores.append(0.0)
            continue
        geo = math.exp(sum(map(math.log, precisions)) / len(precisions))
        ref_len = min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        bp = 1.0 if len(hyp) >= ref_len else math.exp(1 - ref_len / len(hyp))
        scores.append(bp * geo)
    return sum(scores) / len(scores)


def cand(answer, index=0):
    return Candidate("q", index, 1, f"answer is {answer}" if answer else "dunno",
                     answer, 3, 0)


class TestAnswerEntropy:
    def test_point_mass_is_zero(self):
        pool = [cand("4", i) for i in range(5)]
        assert answer_entropy(pool) == 0.0

    def test_uniform_four_is_ln4(self):
        pool = [cand(a, i) for i, a in enumerate(["1", "2", "3", "5"])]
        assert answer_entropy(pool) == pytest.approx(math.log(4), abs=1e-9)

    def test_three_one_split(self):
        pool = [cand(a, i) for i, a in enumerate(["4", "4", "4", "7"])]
        expected = -(0.75 * math.log(0.75) + 0.25 * math.log(0.25))
        assert answer_entropy(pool) == pytest.approx(expected, abs=1e-12)
        assert answer_entropy(pool) == pytest.approx(0.562, abs=0.001)

    def test_abstentions_excluded(self):
        pool = [cand("4", 0), cand("4", 1), cand(None, 2)]
        assert answer_entropy(pool) == 0.0

    def test_all_abstain_errors(self):
        with pytest.raises(ValidationError, match="abstained"):
            answer_entropy([cand(None, i) for i in range(3)])

    def test_bounded_by_ln_k(self):
        pool = [cand(str(i % 3), i) for i in range(10)]
        assert answer_entropy(pool) <= math.log(3) + 1e-9


def test_pairwise_jaccard_distance_bounds():
    assert pairwise_jaccard_distance(["a b", "a b"]) == 0.0
    assert pairwise_jaccard_distance(["a b", "c d"]) == 1.0


class TestBuildReport:
    def reference_curves(self):
        return [
            curve(PRETRAINED, "pretrained-1.5b"),
            curve(DISTILLED, "distilled-1.5b"),
            curve(TUNED, "prefix-tuned-1.5b"),
        ]

    def test_reference_row_reproduction(self):
        report = build_report(self.reference_curves(), threshold=0.80)
        models = report["models"]
        assert models["pretrained-1.5b"]["scaling"]["improvement_pp"] == pytest.approx(26.6, abs=0.05)
        assert models["distilled-1.5b"]["scaling"]["improvement_pp"] == pytest.approx(15.6, abs=0.05)
        assert models["pretrained-1.5b"]["scaling"]["min_n"] == UNREACHED
        assert models["distilled-1.5b"]["scaling"]["min_n"] == 256

    def test_efficiency_ratio_eight_fold(self):
        report = build_report([
            curve({2: 0.65, 16: 0.78, 32: 0.81, 256: 0.82}, "fast"),
            curve({2: 0.65, 16: 0.77, 32: 0.79, 256: 0.81}, "slow"),
        ], threshold=0.80)
        ratios = {(r["model"], r["relative_to"]): r["ratio"]
                  for r in report["efficiency_ratios"]}
        assert ratios[("fast", "slow")] == pytest.approx(8.0)

    def test_single_point_curve_notes_reason(self):
        report = build_report([curve({2: 0.5}, "tiny")])
        scaling = report["models"]["tiny"]["scaling"]
        assert scaling["improvement_pp"] is None
        assert any("single-point" in note for note in scaling["notes"])

    def test_duplicate_labels_rejected(self):
        with pytest.raises(ValidationError, match="duplicate"):
            build_report([curve({2: 0.5}, "m"), curve({2: 0.6}, "m")])

    def test_plot_rows_log2(self):
        report = build_report([curve({2: 0.5, 8: 0.7}, "m")])
        assert report["plot"] == [
            {"model": "m", "n": 2, "log2_n": 1.0, "acc": 0.5},
            {"model": "m", "n": 8, "log2_n": 3.0, "acc": 0.7},
        ]

    def test_diversity_and_cost_sections(self):
        pools = {"m": {"q": [cand("4", 0), cand("4", 1), cand("7", 2)]}}
        report = build_report([curve({2: 0.5, 4: 0.6}, "m")], pools=pools)
        entry = report["models"]["m"]
        assert entry["total_tokens"] == 9
        assert 0.0 <= entry["diversity"]["self_bleu"] <= 1.0


def test_scaling_report_degrades_on_non_doubling():
    report = scaling_report(curve({2: 0.6, 6: 0.7}), threshold=0.8)
    assert report.gain_per_doubling is None
    assert report.improvement == pytest.approx(10.0)
    assert any("doubling" in n for n in report.notes)


def test_diversity_report_fields():
    pool = [cand("4", 0), cand("7", 1), cand("4", 2)]
    report = diversity_report(pool)
    assert 0.0 < report.distinct_1 <= 1.0
    assert 0.0 <= report.self_bleu <= 1.0
    assert report.answer_entropy > 0.0

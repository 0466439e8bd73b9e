import json
import math
import random

import pytest

from ttscale.core import ValidationError
from ttscale.simulate import (
    AnswerDistribution,
    _exact_by_convolution,
    _exact_by_enumeration,
    exact_maj_accuracy,
    load_distributions,
    mc_maj_accuracy,
    scaling_curve,
)


def two_label(p):
    return AnswerDistribution(("g", "w"), (p, 1.0 - p))


def uniform(k):
    return AnswerDistribution(tuple(f"l{i}" for i in range(k)), tuple(1.0 / k for _ in range(k)))


class TestDistribution:
    def test_probs_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            AnswerDistribution(("a", "b"), (0.6, 0.5))

    def test_labels_distinct_and_nonempty(self):
        with pytest.raises(ValidationError):
            AnswerDistribution(("a", "a"), (0.5, 0.5))
        with pytest.raises(ValidationError):
            AnswerDistribution(("a", ""), (0.5, 0.5))

    def test_sampling_matches_probs(self):
        rng = random.Random(3)
        d = two_label(0.7)
        draws = [d.sample(rng) for _ in range(20000)]
        assert abs(draws.count("g") / 20000 - 0.7) < 0.02


class TestExact:
    def test_degenerate_distribution(self):
        d = AnswerDistribution(("only",), (1.0,))
        for n in (1, 5, 100):
            assert exact_maj_accuracy(d, n) == 1.0

    def test_binomial_point_six_n_three(self):
        # P(X >= 2), X ~ Binomial(3, 0.6): 0.6^3 + 3 * 0.6^2 * 0.4 = 0.648
        assert exact_maj_accuracy(two_label(0.6), 3) == pytest.approx(0.648, abs=1e-12)

    def test_even_n_tie_split(self):
        # p = 0.5, n = 2: tie cases split evenly by the earliest-sample rule
        assert exact_maj_accuracy(two_label(0.5), 2) == pytest.approx(0.5, abs=1e-12)

    def test_probability_one_on_correct(self):
        d = AnswerDistribution(("g", "w"), (1.0, 0.0))
        assert exact_maj_accuracy(d, 7) == 1.0

    def test_monotone_over_odd_n_above_half(self):
        rng = random.Random(5)
        for _ in range(20):
            p = 0.5 + 0.5 * rng.random()
            vals = [exact_maj_accuracy(two_label(p), n) for n in range(1, 16, 2)]
            assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))

    @pytest.mark.parametrize("k", [2, 3, 4, 5, 6])
    def test_uniform_k_gives_one_over_k(self, k):
        for n in (1, 2, 3, 5, 8, 16, 64, 256):
            assert exact_maj_accuracy(uniform(k), n) == pytest.approx(1.0 / k, abs=1e-12)

    def test_convolution_agrees_with_enumeration(self):
        rng = random.Random(11)
        for _ in range(10):
            k = rng.randint(2, 6)
            raw = [rng.random() for _ in range(k)]
            probs = tuple(x / sum(raw) for x in raw)
            d = AnswerDistribution(tuple(f"l{i}" for i in range(k)), probs)
            for n in (2, 3, 9, 14):
                a = _exact_by_enumeration(d, n)
                b = _exact_by_convolution(d, n)
                assert a == pytest.approx(b, abs=1e-12)

    def test_large_space_uses_exact_convolution(self):
        d = AnswerDistribution(
            ("g", "a", "b", "c", "d", "e"), (0.35, 0.13, 0.13, 0.13, 0.13, 0.13)
        )
        assert math.comb(256 + 5, 5) > 1_000_000  # enumeration would refuse this
        value = exact_maj_accuracy(d, 256)
        assert 0.999 < value <= 1.0

    def test_outcome_space_too_large_errors(self):
        with pytest.raises(ValidationError, match="too large"):
            exact_maj_accuracy(two_label(0.6), 100_000)

    def test_n_must_be_positive(self):
        with pytest.raises(ValidationError):
            exact_maj_accuracy(two_label(0.6), 0)


class TestMonteCarlo:
    def test_degenerate(self):
        d = AnswerDistribution(("only",), (1.0,))
        out = mc_maj_accuracy(d, 5, 100, seed=1)
        assert out["mean"] == 1.0 and out["stderr"] == 0.0

    def test_seeded_determinism(self):
        d = two_label(0.6)
        a = mc_maj_accuracy(d, 3, 5000, seed=42)
        b = mc_maj_accuracy(d, 3, 5000, seed=42)
        assert a == b

    def test_converges_to_exact(self):
        d = two_label(0.6)
        out = mc_maj_accuracy(d, 3, 100_000, seed=9)
        assert abs(out["mean"] - 0.648) <= 3 * out["stderr"]

    def test_multilabel_against_exact(self):
        d = AnswerDistribution(("g", "a", "b"), (0.5, 0.3, 0.2))
        exact = exact_maj_accuracy(d, 5)
        out = mc_maj_accuracy(d, 5, 50_000, seed=17)
        assert abs(out["mean"] - exact) <= 4 * out["stderr"] + 1e-9


class TestScalingCurve:
    def test_single_label_flat(self):
        d = AnswerDistribution(("only",), (1.0,))
        assert scaling_curve(d, [2]) == {2: 1.0}

    def test_diverse_vs_peaked_shape(self):
        diverse = AnswerDistribution(
            ("g", "a", "b", "c", "d", "e"), (0.35, 0.13, 0.13, 0.13, 0.13, 0.13)
        )
        peaked = two_label(0.6)
        schedule = [2, 4, 8, 16, 32, 64, 128, 256]
        cd = scaling_curve(diverse, schedule)
        cp = scaling_curve(peaked, schedule)
        assert cp[2] > cd[2]  # peaked starts higher
        assert (cd[256] - cd[2]) > (cp[256] - cp[2])  # diverse improves more

    def test_bad_schedule(self):
        with pytest.raises(ValidationError):
            scaling_curve(two_label(0.6), [0, 2])


def test_load_distributions(tmp_path):
    path = tmp_path / "dist.json"
    path.write_text(json.dumps({
        "q1": {"labels": ["4", "7"], "probs": [0.6, 0.4]},
        "q2": {"labels": ["1"], "probs": [1.0]},
    }))
    dists = load_distributions(path)
    assert dists["q1"].labels == ("4", "7")
    single = tmp_path / "one.json"
    single.write_text(json.dumps({"labels": ["a"], "probs": [1.0]}))
    assert load_distributions(single)["*"].labels == ("a",)

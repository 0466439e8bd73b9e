"""Candidate pool generation: seeded mock backend, OpenAI-compatible HTTP
backend, multi-round refinement, and count-margin early stopping.

Every sample's seed is a stable hash of (run seed, problem id, sample index,
round), so the n-candidate pool is a prefix of every larger pool for the same
run seed, and output is identical no matter how requests interleave.
"""

from __future__ import annotations

import json
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import requests

from .answers import canonicalize, extract_answer
from .core import (
    BackendError,
    Candidate,
    ParseError,
    PathLike,
    Problem,
    RunConfig,
    ValidationError,
    stable_seed,
)
from .simulate import AnswerDistribution

PROMPT_PLACEHOLDER = "{prompt}"
PREVIOUS_PLACEHOLDER = "{previous}"

DEFAULT_REFINEMENT_TEMPLATE = (
    "{prompt}\n\nA previous attempt gave this solution:\n{previous}\n\n"
    "Reconsider the problem and give an improved final answer."
)

# each template embeds the sampled answer; {answer} is the only placeholder
MOCK_TEMPLATES = (
    "Let me work through this step by step. First I set up the quantities, "
    "then simplify the resulting expression. The final answer is \\boxed{{answer}}.",
    "We can try a direct approach here. Substituting and reducing carefully "
    "leads to a single value. The answer is {answer}.",
    "Consider the structure of the problem. After rearranging terms and "
    "checking the boundary cases, I conclude the answer is \\boxed{{answer}}.",
    "Start from the definition and expand. Collecting terms gives the result. "
    "Final answer: {answer}",
    "One way is to test small cases and generalize; the pattern stabilizes "
    "quickly, giving {answer}. So the answer is {answer}.",
)

ABSTAIN_LABEL = ""
_ABSTAIN_SENTINEL = "\x00abstain"
ABSTAIN_TEXT = "I am not able to determine a definite result for this one."


@dataclass(frozen=True)
class RoundPolicy:
    """How many refinement rounds to run and how to phrase them."""

    rounds: int = 1
    refinement_template: str = DEFAULT_REFINEMENT_TEMPLATE

    def validate(self) -> "RoundPolicy":
        if self.rounds < 1:
            raise ValidationError("rounds must be >= 1")
        if self.rounds > 1:
            missing = [
                ph for ph in (PROMPT_PLACEHOLDER, PREVIOUS_PLACEHOLDER)
                if ph not in self.refinement_template
            ]
            if missing:
                raise ValidationError(
                    f"refinement_template missing placeholder(s): {missing}"
                )
        return self


@dataclass(frozen=True)
class EarlyStopPolicy:
    """Stop drawing once the leading answer is `margin` votes ahead."""

    enabled: bool = False
    min_samples: int = 2
    margin: int = 1

    def validate(self, pool_cap: int) -> "EarlyStopPolicy":
        if self.min_samples < 2:
            raise ValidationError("min_samples must be >= 2")
        if self.margin < 1:
            raise ValidationError("margin must be >= 1")
        if self.min_samples > pool_cap:
            raise ValidationError(
                f"min_samples {self.min_samples} exceeds pool size {pool_cap}"
            )
        return self


def sample_seed(run_seed: int, problem_id: str, sample_index: int, rnd: int = 1) -> int:
    """Deterministic per-sample seed; the public contract for replaying draws."""
    return stable_seed(run_seed, problem_id, sample_index, rnd)


class Backend(Protocol):
    def complete(self, problem: Problem, prompt: str, rnd: int, seed: int,
                 cfg: RunConfig) -> tuple[str, int]:
        """Return (solution_text, generated_token_count) for one sample."""


class MockBackend:
    """Seeded synthetic backend driven by per-problem answer distributions.

    Draw order per sample is fixed and documented: one rng.random() picks the
    answer label from the cumulative distribution, then one rng.randrange()
    picks the text template. The empty-string label yields an abstaining text.
    """

    def __init__(self, distributions: dict[str, AnswerDistribution],
                 round_overrides: Optional[dict[str, dict[int, AnswerDistribution]]] = None,
                 templates: Sequence[str] = MOCK_TEMPLATES):
        if not templates:
            raise ValidationError("mock backend needs at least one text template")
        self.distributions = dict(distributions)
        self.round_overrides = {k: dict(v) for k, v in (round_overrides or {}).items()}
        self.templates = tuple(templates)

    def distribution_for(self, problem_id: str, rnd: int) -> AnswerDistribution:
        override = self.round_overrides.get(problem_id, {}).get(rnd)
        if override is not None:
            return override
        dist = self.distributions.get(problem_id) or self.distributions.get("*")
        if dist is None:
            raise ValidationError(f"no answer distribution configured for {problem_id!r}")
        return dist

    def complete(self, problem: Problem, prompt: str, rnd: int, seed: int,
                 cfg: RunConfig) -> tuple[str, int]:
        dist = self.distribution_for(problem.id, rnd)
        rng = random.Random(seed)
        label = dist.sample(rng)
        template = self.templates[rng.randrange(len(self.templates))]
        if label in (ABSTAIN_LABEL, _ABSTAIN_SENTINEL):
            text = ABSTAIN_TEXT
        else:
            text = template.replace("{answer}", label)
        return text, len(text.split())


def load_mock_distributions(path: PathLike) -> tuple[dict[str, AnswerDistribution],
                                                     dict[str, dict[int, AnswerDistribution]]]:
    """Read dist.json for the mock backend, with optional per-round overrides.

    Schema per problem id: {"labels": [...], "probs": [...]} plus an optional
    "rounds" map of round number to another {labels, probs} object. A single
    top-level {labels, probs} object applies to every problem.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: malformed JSON: {exc.msg}") from exc
    if isinstance(data, dict) and "labels" in data:
        data = {"*": data}
    if not isinstance(data, dict):
        raise ParseError(f"{path}: expected a JSON object")
    base: dict[str, AnswerDistribution] = {}
    overrides: dict[str, dict[int, AnswerDistribution]] = {}

    def make_dist(record: dict, origin: str) -> AnswerDistribution:
        if "labels" not in record or "probs" not in record:
            raise ParseError(f"{origin}: distribution needs 'labels' and 'probs'")
        labels = [
            # the reserved empty label marks abstention; swap in a sentinel so
            # it passes distribution validation but still renders abstain text
            _ABSTAIN_SENTINEL if l == ABSTAIN_LABEL else l
            for l in record["labels"]
        ]
        return AnswerDistribution(tuple(labels), tuple(record["probs"]))

    for pid, record in data.items():
        base[pid] = make_dist(record, f"{path}[{pid}]")
        for rnd_key, sub in (record.get("rounds") or {}).items():
            overrides.setdefault(pid, {})[int(rnd_key)] = make_dist(
                sub, f"{path}[{pid}].rounds[{rnd_key}]"
            )
    return base, overrides


class HttpBackend:
    """OpenAI-compatible chat-completions client, one request per sample."""

    def __init__(self, base_url: str, model: str, api_key: str = "",
                 timeout: float = 60.0, max_attempts: int = 3,
                 backoff_base: float = 0.5,
                 session: Optional[requests.Session] = None):
        if not base_url.startswith(("http://", "https://")):
            raise ValidationError(f"malformed base URL {base_url!r}")
        if max_attempts < 1:
            raise ValidationError("max_attempts must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.session = session or requests.Session()

    def complete(self, problem: Problem, prompt: str, rnd: int, seed: int,
                 cfg: RunConfig) -> tuple[str, int]:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
            "top_p": cfg.top_p,
            "max_tokens": cfg.max_new_tokens,
            "n": 1,
            "seed": seed,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error = "no attempt made"
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_base * (2 ** (attempt - 1)))
            try:
                resp = self.session.post(
                    f"{self.base_url}/chat/completions", json=payload,
                    headers=headers, timeout=self.timeout,
                )
            except requests.RequestException as exc:
                last_error = f"request failed: {exc}"
                continue
            if resp.status_code != 200:
                last_error = f"HTTP {resp.status_code}: {resp.text[:200]}"
                continue
            try:
                body = resp.json()
                text = body["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                last_error = f"unparseable response: {exc}"
                continue
            usage = body.get("usage") or {}
            tokens = usage.get("completion_tokens")
            if not isinstance(tokens, int) or tokens < 0:
                tokens = len(text.split())
            return text, min(tokens, cfg.max_new_tokens)
        raise BackendError(f"backend exhausted after {self.max_attempts} attempts; {last_error}")


def _make_candidate(problem: Problem, prompt: str, index: int, rnd: int,
                    cfg: RunConfig, backend: Backend) -> Candidate:
    seed = sample_seed(cfg.seed, problem.id, index, rnd)
    try:
        text, tokens = backend.complete(problem, prompt, rnd, seed, cfg)
    except BackendError:
        # partial results stay analyzable: a failed sample becomes an
        # empty-text candidate with no extracted answer
        text, tokens = "", 0
    answer = extract_answer(text)
    return Candidate(
        problem_id=problem.id, sample_index=index, round=rnd, text=text,
        extracted_answer=answer.surface if answer else None,
        token_count=min(tokens, cfg.max_new_tokens), gen_seed=seed,
    )


def generate_pool(problem: Problem, n: int, cfg: RunConfig, backend: Backend,
                  skip: Optional[set[int]] = None) -> list[Candidate]:
    """Generate a round-1 pool of exactly n candidates (minus skipped indices).

    Requests run concurrently up to cfg.parallelism; results are emitted in
    sample_index order regardless of completion interleaving.
    """
    if n < 1:
        raise ValidationError("pool size must be >= 1")
    indices = [i for i in range(n) if not skip or i not in skip]
    return _generate_round(problem, problem.prompt, indices, 1, cfg, backend)


def _generate_round(problem: Problem, prompt_or_prompts, indices: Sequence[int],
                    rnd: int, cfg: RunConfig, backend: Backend) -> list[Candidate]:
    prompts = (
        prompt_or_prompts if isinstance(prompt_or_prompts, dict)
        else {i: prompt_or_prompts for i in indices}
    )
    if cfg.parallelism == 1:
        return [_make_candidate(problem, prompts[i], i, rnd, cfg, backend) for i in indices]
    with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        futures = [
            pool.submit(_make_candidate, problem, prompts[i], i, rnd, cfg, backend)
            for i in indices
        ]
        return [f.result() for f in futures]


def generate_multi_round(problem: Problem, n: int, policy: RoundPolicy,
                         cfg: RunConfig, backend: Backend) -> list[Candidate]:
    """Refinement rounds: sample i of round r extends sample i of round r-1.

    All rounds are returned (and persisted) with their round field; only the
    final round is meant to feed aggregation.
    """
    policy.validate()
    candidates = generate_pool(problem, n, cfg, backend)
    previous = {c.sample_index: c for c in candidates}
    all_rounds = list(candidates)
    for rnd in range(2, policy.rounds + 1):
        prompts = {
            i: policy.refinement_template
            .replace(PROMPT_PLACEHOLDER, problem.prompt)
            .replace(PREVIOUS_PLACEHOLDER, previous[i].text)
            for i in range(n)
        }
        current = _generate_round(problem, prompts, list(range(n)), rnd, cfg, backend)
        previous = {c.sample_index: c for c in current}
        all_rounds.extend(current)
    return all_rounds


def final_round_pool(candidates: Sequence[Candidate]) -> list[Candidate]:
    """Keep only each problem's highest round, the pool that feeds voting."""
    last_round: dict[str, int] = {}
    for c in candidates:
        last_round[c.problem_id] = max(last_round.get(c.problem_id, 1), c.round)
    return [c for c in candidates if c.round == last_round[c.problem_id]]


def generate_with_early_stop(problem: Problem, cfg: RunConfig, backend: Backend,
                             stop: EarlyStopPolicy) -> list[Candidate]:
    """Draw samples one at a time until the top answer leads by the margin.

    Never returns fewer than min_samples candidates nor more than the pool
    cap max(n_schedule). Seeds match generate_pool, so the drawn pool is a
    prefix of the full pool for the same run seed.
    """
    if not stop.enabled:
        raise ValidationError("early-stop policy is disabled")
    cap = cfg.pool_size
    stop.validate(cap)
    drawn: list[Candidate] = []
    counts: dict[str, int] = {}
    for i in range(cap):
        candidate = _make_candidate(problem, problem.prompt, i, 1, cfg, backend)
        drawn.append(candidate)
        if candidate.extracted_answer is not None:
            answer = canonicalize(candidate.extracted_answer)
            if answer is not None:
                counts[answer.key] = counts.get(answer.key, 0) + 1
        if len(drawn) >= stop.min_samples and counts:
            ordered = sorted(counts.values(), reverse=True)
            lead = ordered[0] - (ordered[1] if len(ordered) > 1 else 0)
            if lead >= stop.margin:
                break
    return drawn


def pool_cost(candidates: Sequence[Candidate]) -> int:
    """Inference cost of a pool: total generated tokens."""
    return sum(c.token_count for c in candidates)

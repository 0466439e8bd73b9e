"""Diversity-aware fine-tuning dataset curation.

Mixes responses from a diverse source model with a smaller share from the
target model (exact counts, not per-record coin flips), rewrites the diverse
source's prompts with the initial-step template, truncates completions to a
token-prefix budget, and produces seeded train/eval/held-out splits. The
whole pipeline is a pure function of (inputs, config, seed).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional, Sequence

import requests

from .core import (
    ParseError,
    PathLike,
    ValidationError,
    dump_json_line,
    iter_jsonl,
    sha256_file,
    stable_seed,
)

DIVERSITY_PROMPT_SUFFIX = (
    " Please provide the initial step towards resolving the question. "
    "This step may serve as a foundation but might not encompass the entire solution.\n"
)

DEFAULT_MIXTURE_RATIO = 0.9
DEFAULT_PREFIX_TOKEN_LIMIT = 512
DEFAULT_TRAIN_FRACTION = 0.9


@dataclass(frozen=True)
class CurationConfig:
    mixture_ratio: float = DEFAULT_MIXTURE_RATIO  # fraction from the diverse source
    prefix_token_limit: int = DEFAULT_PREFIX_TOKEN_LIMIT
    train_fraction: float = DEFAULT_TRAIN_FRACTION
    test_split_even: bool = True
    seed: int = 0
    tokenizer: str = "whitespace"  # "whitespace" or "http:<truncation service URL>"
    truncate_joint: bool = False  # budget prompt+completion jointly instead

    def validate(self) -> "CurationConfig":
        if not 0.0 <= self.mixture_ratio <= 1.0:
            raise ValidationError(f"mixture_ratio must be in [0, 1], got {self.mixture_ratio}")
        if not 0.0 <= self.train_fraction <= 1.0:
            raise ValidationError(f"train_fraction must be in [0, 1], got {self.train_fraction}")
        if self.prefix_token_limit < 1:
            raise ValidationError("prefix_token_limit must be >= 1")
        if self.tokenizer != "whitespace" and not self.tokenizer.startswith("http:"):
            raise ValidationError(f"unknown tokenizer {self.tokenizer!r}")
        return self


@dataclass(frozen=True)
class SourceRecord:
    id: str
    question: str
    response: str


@dataclass(frozen=True)
class CuratedRecord:
    id: str
    source: str  # "diverse" | "target"
    prompt: str
    completion: str
    token_count: int
    truncated: bool


# A truncator maps (text, limit) -> (prefix_text, token_count, truncated).
Truncator = Callable[[str, int], tuple[str, int, bool]]


def whitespace_truncate(text: str, limit: int) -> tuple[str, int, bool]:
    tokens = text.split()
    if len(tokens) <= limit:
        return text, len(tokens), False
    return " ".join(tokens[:limit]), limit, True


class HttpTruncator:
    """Calls out to a tokenizer service for model-faithful truncation.

    Contract: POST <url> with {"text": ..., "limit": ...} returning
    {"prefix": str, "token_count": int, "truncated": bool}.
    """

    def __init__(self, url: str, timeout: float = 30.0,
                 session: Optional[requests.Session] = None):
        self.url = url
        self.timeout = timeout
        self.session = session or requests.Session()

    def __call__(self, text: str, limit: int) -> tuple[str, int, bool]:
        try:
            resp = self.session.post(
                self.url, json={"text": text, "limit": limit}, timeout=self.timeout
            )
            resp.raise_for_status()
            body = resp.json()
            return body["prefix"], int(body["token_count"]), bool(body["truncated"])
        except (requests.RequestException, KeyError, ValueError, TypeError) as exc:
            raise ValidationError(f"tokenizer service failed: {exc}") from exc


def get_truncator(cfg: CurationConfig) -> Truncator:
    if cfg.tokenizer == "whitespace":
        return whitespace_truncate
    return HttpTruncator(cfg.tokenizer[len("http:"):])


def load_sources(path: PathLike) -> list[SourceRecord]:
    """Read a source file of {id, question, response} records."""
    records = []
    for lineno, record in iter_jsonl(path):
        for field in ("id", "question", "response"):
            if field not in record or not isinstance(record[field], str):
                raise ParseError(f"{path}:{lineno}: missing or non-string field {field!r}")
        records.append(SourceRecord(record["id"], record["question"], record["response"]))
    return records


def apply_diversity_prompt(question: str) -> str:
    """Append the verbatim initial-step instruction to a question."""
    if not question:
        raise ValidationError("question must be non-empty")
    return question + DIVERSITY_PROMPT_SUFFIX


def plan_mixture(n_diverse: int, n_target: int, ratio: float) -> tuple[int, int]:
    """Largest total M honoring the mixture ratio and both availabilities.

    The target share is round((1 - ratio) * M) and the diverse share is the
    remainder; both computed in exact rational arithmetic with half-up
    rounding so the counts are reproducible.
    """
    share = 1 - Fraction(str(ratio))

    def split_for(m: int) -> tuple[int, int]:
        t = int(share * m + Fraction(1, 2))  # floor(x + 1/2), exact
        return m - t, t

    def feasible(m: int) -> bool:
        d, t = split_for(m)
        return d <= n_diverse and t <= n_target

    lo, hi = 0, n_diverse + n_target
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if feasible(mid):
            lo = mid
        else:
            hi = mid - 1
    return split_for(lo)


def _curated_from(source_record: SourceRecord, source: str,
                  truncate: Truncator) -> CuratedRecord:
    if source == "diverse":
        prompt = apply_diversity_prompt(source_record.question)
    else:
        prompt = source_record.question  # original template preserved verbatim
    _, token_count, _ = truncate(source_record.response, 10 ** 9)
    return CuratedRecord(
        id=f"{source}-{source_record.id}", source=source, prompt=prompt,
        completion=source_record.response, token_count=token_count, truncated=False,
    )


def mix(diverse: Sequence[SourceRecord], target: Sequence[SourceRecord],
        cfg: CurationConfig) -> list[CuratedRecord]:
    """Select and blend the two sources at the configured exact ratio.

    Selection within each source is a seeded uniform draw without
    replacement; the blended list is shuffled from the same seed stream.
    """
    cfg.validate()
    if cfg.mixture_ratio > 0.0 and not diverse:
        raise ValidationError("diverse source is empty but its share is > 0")
    if cfg.mixture_ratio < 1.0 and not target:
        raise ValidationError("target source is empty but its share is > 0")
    n_diverse, n_target = plan_mixture(len(diverse), len(target), cfg.mixture_ratio)
    rng = random.Random(stable_seed(cfg.seed, "mix"))
    truncate = get_truncator(cfg)
    chosen = [
        _curated_from(r, "diverse", truncate) for r in rng.sample(list(diverse), n_diverse)
    ] + [
        _curated_from(r, "target", truncate) for r in rng.sample(list(target), n_target)
    ]
    rng.shuffle(chosen)
    return chosen


def truncate_prefix(record: CuratedRecord, cfg: CurationConfig,
                    truncate: Optional[Truncator] = None) -> CuratedRecord:
    """Cut the completion down to its first prefix_token_limit tokens.

    With truncate_joint set, the prompt and completion share one budget and
    the prompt is consumed first.
    """
    truncate = truncate or get_truncator(cfg)
    limit = cfg.prefix_token_limit
    if cfg.truncate_joint:
        prompt_prefix, prompt_tokens, prompt_cut = truncate(record.prompt, limit)
        budget = limit - prompt_tokens
        if budget <= 0:
            return replace(record, prompt=prompt_prefix, completion="",
                           token_count=0, truncated=True)
        completion, count, cut = truncate(record.completion, budget)
        return replace(record, prompt=prompt_prefix, completion=completion,
                       token_count=count, truncated=cut or prompt_cut)
    completion, count, cut = truncate(record.completion, limit)
    return replace(record, completion=completion, token_count=count, truncated=cut)


def split(records: Sequence[CuratedRecord], cfg: CurationConfig) -> dict:
    """Seeded shuffle then partition into train / eval / held_out.

    The first floor(train_fraction * M) records train; the remainder is
    divided as evenly as possible, the larger half going to eval.
    """
    cfg.validate()
    shuffled = list(records)
    random.Random(stable_seed(cfg.seed, "split")).shuffle(shuffled)
    n_train = int(Fraction(str(cfg.train_fraction)) * len(shuffled))  # exact floor
    rest = shuffled[n_train:]
    if cfg.test_split_even:
        n_eval = (len(rest) + 1) // 2
    else:
        n_eval = len(rest)
    return {
        "train": shuffled[:n_train],
        "eval": rest[:n_eval],
        "held_out": rest[n_eval:],
    }


def write_curated(records: Sequence[CuratedRecord], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(dump_json_line(
                {"id": r.id, "source": r.source, "prompt": r.prompt,
                 "completion": r.completion, "token_count": r.token_count,
                 "truncated": r.truncated}
            ) + "\n")


def read_curated(path: PathLike) -> list[CuratedRecord]:
    records = []
    for lineno, record in iter_jsonl(path):
        try:
            records.append(CuratedRecord(
                id=record["id"], source=record["source"], prompt=record["prompt"],
                completion=record["completion"], token_count=record["token_count"],
                truncated=record["truncated"],
            ))
        except KeyError as exc:
            raise ParseError(f"{path}:{lineno}: missing field {exc}") from exc
    return records


def curate(diverse_path: PathLike, target_path: Optional[PathLike],
           cfg: CurationConfig, out_dir: PathLike) -> dict:
    """Run the full pipeline and write the dataset directory plus manifest."""
    cfg.validate()
    diverse = load_sources(diverse_path)
    target = load_sources(target_path) if target_path else []
    truncate = get_truncator(cfg)
    mixed = mix(diverse, target, cfg)
    trimmed = [truncate_prefix(r, cfg, truncate) for r in mixed]
    parts = split(trimmed, cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"train": "train.jsonl", "eval": "eval.jsonl", "held_out": "heldout.jsonl"}
    for part, filename in files.items():
        write_curated(parts[part], out / filename)
    manifest = {
        "config": {
            "mixture_ratio": cfg.mixture_ratio,
            "prefix_token_limit": cfg.prefix_token_limit,
            "train_fraction": cfg.train_fraction,
            "test_split_even": cfg.test_split_even,
            "tokenizer": cfg.tokenizer,
            "truncate_joint": cfg.truncate_joint,
        },
        "seed": cfg.seed,
        "counts": {
            "total": len(trimmed),
            "diverse": sum(1 for r in trimmed if r.source == "diverse"),
            "target": sum(1 for r in trimmed if r.source == "target"),
            "train": len(parts["train"]),
            "eval": len(parts["eval"]),
            "held_out": len(parts["held_out"]),
        },
        "digests": {filename: sha256_file(out / filename) for filename in files.values()},
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest

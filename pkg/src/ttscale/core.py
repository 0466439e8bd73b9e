"""Domain records, run configuration, and bit-stable JSONL persistence.

File bytes are a pure function of record content: writers emit one compact
JSON object per line with a fixed key order, floats in shortest round-trip
form, and candidates sorted by (problem_id, sample_index, round).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Union

from .answers import canonicalize

PathLike = Union[str, Path]

DEFAULT_N_SCHEDULE = (2, 4, 8, 16, 32, 64, 128, 256)
DEFAULT_TEMPERATURE = 0.8
DEFAULT_MAX_NEW_TOKENS = 2048
DEFAULT_TOP_P = 1.0
DEFAULT_THRESHOLD = 0.80
DEFAULT_SUBSAMPLE_ROUNDS = 100


class HarnessError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(HarnessError):
    """Bad input data, configuration, or contract violation (CLI exit 1)."""


class ParseError(ValidationError):
    """Malformed record in an input file; message names the line number."""


class BackendError(HarnessError):
    """Inference backend failure after retries are exhausted (CLI exit 2)."""


def stable_seed(*parts: object) -> int:
    """Platform-stable 63-bit seed derived from the given components."""
    payload = "\x1f".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def sha256_file(path: PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def dump_json_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def iter_jsonl(path: PathLike) -> Iterator[tuple[int, dict]]:
    """Yield (line_number, record) pairs; blank lines are skipped."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from exc
            if not isinstance(record, dict):
                raise ParseError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, record


@dataclass(frozen=True)
class Problem:
    """One benchmark item: prompt, canonical gold answer, free-form metadata."""

    id: str
    prompt: str
    gold_answer: str
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Candidate:
    """One sampled solution for a problem, with provenance.

    extracted_answer, when present, is stored in canonical surface form.
    """

    problem_id: str
    sample_index: int
    round: int
    text: str
    extracted_answer: Optional[str]
    token_count: int
    gen_seed: int
    score: Optional[float] = None


@dataclass(frozen=True)
class RunConfig:
    """Evaluation protocol settings; defaults mirror the reference protocol."""

    n_schedule: tuple[int, ...] = DEFAULT_N_SCHEDULE
    temperature: float = DEFAULT_TEMPERATURE
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    top_p: float = DEFAULT_TOP_P
    seed: int = 0
    parallelism: int = 1
    backend: str = "mock"
    threshold: float = DEFAULT_THRESHOLD
    subsample_rounds: int = DEFAULT_SUBSAMPLE_ROUNDS

    @property
    def pool_size(self) -> int:
        return max(self.n_schedule)


_RUNCONFIG_FIELDS = {
    "n_schedule", "temperature", "max_new_tokens", "top_p", "seed",
    "parallelism", "backend", "threshold", "subsample_rounds",
}


def validate_config(cfg: RunConfig) -> RunConfig:
    """Check every RunConfig invariant; returns the config unchanged."""
    schedule = tuple(cfg.n_schedule)
    if not schedule:
        raise ValidationError("n_schedule must be non-empty")
    if any(not isinstance(n, int) or n < 1 for n in schedule):
        raise ValidationError("n_schedule entries must be positive integers")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValidationError(f"schedule not strictly increasing: {list(schedule)}")
    if cfg.temperature < 0:
        raise ValidationError(f"temperature must be >= 0, got {cfg.temperature}")
    if cfg.max_new_tokens <= 0:
        raise ValidationError(f"max_new_tokens must be positive, got {cfg.max_new_tokens}")
    if not 0 < cfg.top_p <= 1:
        raise ValidationError(f"top_p must be in (0, 1], got {cfg.top_p}")
    if cfg.parallelism < 1:
        raise ValidationError(f"parallelism must be >= 1, got {cfg.parallelism}")
    if not 0 <= cfg.threshold <= 1:
        raise ValidationError(f"threshold must be in [0, 1], got {cfg.threshold}")
    if cfg.subsample_rounds < 1:
        raise ValidationError(f"subsample_rounds must be >= 1, got {cfg.subsample_rounds}")
    if cfg.backend not in ("mock", "http"):
        raise ValidationError(f"unknown backend {cfg.backend!r} (expected mock or http)")
    return cfg


def config_from_dict(data: dict) -> RunConfig:
    """Build a RunConfig from a partial mapping; unset fields take defaults."""
    unknown = set(data) - _RUNCONFIG_FIELDS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    if "n_schedule" in data:
        data = dict(data, n_schedule=tuple(data["n_schedule"]))
    return validate_config(RunConfig(**data))


def load_config(path: PathLike) -> RunConfig:
    """Read a JSON config file whose keys are RunConfig field names."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: malformed JSON: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: config file must hold a JSON object")
    return config_from_dict(data)


def _require(record: dict, key: str, kind: type, path: PathLike, lineno: int):
    if key not in record:
        raise ParseError(f"{path}:{lineno}: missing field {key!r}")
    value = record[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise ParseError(f"{path}:{lineno}: field {key!r} must be {kind.__name__}")
    return value


def load_problems(path: PathLike) -> list[Problem]:
    """Read problems.jsonl in file order, rejecting duplicate ids."""
    problems: list[Problem] = []
    seen: set[str] = set()
    for lineno, record in iter_jsonl(path):
        pid = _require(record, "id", str, path, lineno)
        prompt = _require(record, "prompt", str, path, lineno)
        gold = _require(record, "gold_answer", str, path, lineno)
        metadata = record.get("metadata", {})
        if not isinstance(metadata, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
        ):
            raise ParseError(f"{path}:{lineno}: metadata must map strings to strings")
        if not pid:
            raise ValidationError(f"{path}:{lineno}: empty problem id")
        if pid in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate problem id {pid!r}")
        gold_canonical = canonicalize(gold)
        if gold_canonical is None or gold_canonical.surface != gold:
            raise ValidationError(
                f"{path}:{lineno}: gold_answer {gold!r} for {pid!r} is not in canonical form"
            )
        seen.add(pid)
        problems.append(Problem(id=pid, prompt=prompt, gold_answer=gold, metadata=dict(metadata)))
    return problems


def write_problems(problems: Sequence[Problem], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in problems:
            fh.write(dump_json_line(
                {"id": p.id, "prompt": p.prompt, "gold_answer": p.gold_answer,
                 "metadata": p.metadata}
            ) + "\n")


def _validate_candidate(c: Candidate, origin: str) -> None:
    if not c.problem_id:
        raise ValidationError(f"{origin}: empty problem_id")
    if c.sample_index < 0:
        raise ValidationError(f"{origin}: sample_index must be >= 0")
    if c.round < 1:
        raise ValidationError(f"{origin}: round must be >= 1")
    if c.token_count < 0:
        raise ValidationError(f"{origin}: token_count must be >= 0")
    if c.extracted_answer is not None:
        canonical = canonicalize(c.extracted_answer)
        if canonical is None or canonical.surface != c.extracted_answer:
            raise ValidationError(
                f"{origin}: extracted_answer {c.extracted_answer!r} is not canonical"
            )


def write_candidates(pool: Iterable[Candidate], path: PathLike) -> None:
    """Write candidates sorted by (problem_id, sample_index, round).

    The sort makes output bytes independent of generation completion order.
    """
    ordered = sorted(pool, key=lambda c: (c.problem_id, c.sample_index, c.round))
    seen: set[tuple[str, int, int]] = set()
    for c in ordered:
        key = (c.problem_id, c.sample_index, c.round)
        if key in seen:
            raise ValidationError(f"duplicate candidate {key} in pool")
        seen.add(key)
        _validate_candidate(c, f"candidate {key}")
    with open(path, "w", encoding="utf-8") as fh:
        for c in ordered:
            fh.write(dump_json_line(
                {"problem_id": c.problem_id, "sample_index": c.sample_index,
                 "round": c.round, "text": c.text,
                 "extracted_answer": c.extracted_answer,
                 "token_count": c.token_count, "gen_seed": c.gen_seed,
                 "score": c.score}
            ) + "\n")


def read_candidates(path: PathLike) -> list[Candidate]:
    pool: list[Candidate] = []
    seen: set[tuple[str, int, int]] = set()
    for lineno, record in iter_jsonl(path):
        c = Candidate(
            problem_id=_require(record, "problem_id", str, path, lineno),
            sample_index=_require(record, "sample_index", int, path, lineno),
            round=_require(record, "round", int, path, lineno),
            text=_require(record, "text", str, path, lineno),
            extracted_answer=record.get("extracted_answer"),
            token_count=_require(record, "token_count", int, path, lineno),
            gen_seed=_require(record, "gen_seed", int, path, lineno),
            score=record.get("score"),
        )
        if c.extracted_answer is not None and not isinstance(c.extracted_answer, str):
            raise ParseError(f"{path}:{lineno}: extracted_answer must be string or null")
        if c.score is not None and not isinstance(c.score, (int, float)):
            raise ParseError(f"{path}:{lineno}: score must be a number or null")
        key = (c.problem_id, c.sample_index, c.round)
        if key in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate candidate {key}")
        seen.add(key)
        _validate_candidate(c, f"{path}:{lineno}")
        pool.append(c)
    return pool


def with_score(candidate: Candidate, score: float) -> Candidate:
    return replace(candidate, score=score)

"""Curated-dataset loading plus the toy corpus generator.

The dataset directory format is the curation pipeline's output: train.jsonl,
eval.jsonl, heldout.jsonl of {id, source, prompt, completion, token_count,
truncated} records, and a manifest.json whose "digests" map is verified
against the actual file bytes before training.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path

from .config import PathLike, TrainerError


@dataclass(frozen=True)
class Example:
    id: str
    prompt: str
    completion: str


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def read_examples(path: Path) -> list[Example]:
    examples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            try:
                examples.append(Example(record["id"], record["prompt"], record["completion"]))
            except KeyError as exc:
                raise TrainerError(f"{path}:{lineno}: missing field {exc}") from exc
    return examples


def load_dataset(data_dir: PathLike) -> dict[str, list[Example]]:
    """Load train/eval splits after checking the manifest digests."""
    base = Path(data_dir)
    manifest_path = base / "manifest.json"
    if not manifest_path.exists():
        raise TrainerError(f"{data_dir}: missing manifest.json")
    manifest = json.loads(manifest_path.read_text())
    digests = manifest.get("digests", {})
    for name, expected in digests.items():
        target = base / name
        if not target.exists():
            raise TrainerError(f"dataset/manifest mismatch: {name} missing")
        if _sha256(target) != expected:
            raise TrainerError(f"dataset/manifest mismatch: {name} digest differs")
    return {
        "train": read_examples(base / "train.jsonl"),
        "eval": read_examples(base / "eval.jsonl") if (base / "eval.jsonl").exists() else [],
    }


# --- toy corpus -------------------------------------------------------------
#
# Pretraining sequences open with a block of style tokens that selects which
# answer lexicon (band) the completion uses. The fine-tuning corpus drops the
# style block and keeps all completions in one held-back band, so the learned
# prefix has something real to signal.

N_BANDS = 12
BAND_WIDTH = 6
FINETUNE_BAND = 9
QUESTION_ITEMS = 40


def band_word(band: int, j: int) -> str:
    return f"b{band}t{j}"


def _question(rng: random.Random) -> str:
    item = rng.randrange(QUESTION_ITEMS)
    rule = rng.randrange(7)
    return f"under rule r{rule} find the value of item k{item} :"


def _completion(band: int, rng: random.Random, length: int = 32) -> str:
    return " ".join(band_word(band, rng.randrange(BAND_WIDTH)) for _ in range(length))


def make_pretrain_corpus(path: PathLike, sequences: int = 768, ctx_len: int = 32,
                         seed: int = 0) -> None:
    """Write pretraining texts: [style block] question completion."""
    rng = random.Random(seed)
    with open(path, "w", encoding="utf-8") as fh:
        for _ in range(sequences):
            band = rng.randrange(N_BANDS)
            ctx = " ".join([f"<style-{band}>"] * ctx_len)
            text = f"{ctx} {_question(rng)} {_completion(band, rng)}"
            fh.write(json.dumps({"text": text}) + "\n")
        # make sure every style token and band word is in-vocabulary
        for band in range(N_BANDS):
            ctx = " ".join([f"<style-{band}>"] * ctx_len)
            words = " ".join(band_word(band, j) for j in range(BAND_WIDTH))
            fh.write(json.dumps({"text": f"{ctx} {words}"}) + "\n")


def make_toy_dataset(out_dir: PathLike, train_examples: int = 64,
                     eval_examples: int = 8, heldout_examples: int = 8,
                     seed: int = 0, band: int = FINETUNE_BAND) -> dict:
    """Write a curated-format dataset directory for the fine-tuning band."""
    rng = random.Random(seed + 1)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sizes = {"train.jsonl": train_examples, "eval.jsonl": eval_examples,
             "heldout.jsonl": heldout_examples}
    counter = 0
    for name, count in sizes.items():
        with open(out / name, "w", encoding="utf-8") as fh:
            for _ in range(count):
                completion = _completion(band, rng)
                record = {
                    "id": f"toy-{counter}", "source": "diverse",
                    "prompt": _question(rng), "completion": completion,
                    "token_count": len(completion.split()), "truncated": False,
                }
                fh.write(json.dumps(record) + "\n")
                counter += 1
    manifest = {
        "config": {"toy": True, "band": band},
        "seed": seed,
        "counts": {"train": train_examples, "eval": eval_examples,
                   "held_out": heldout_examples},
        "digests": {name: _sha256(out / name) for name in sizes},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest

"""Training loops: toy base-model pretraining and prefix fine-tuning.

Fine-tuning honors the reference recipe: supervised loss on completion
tokens, sequences truncated to max_length, gradient accumulation to an
effective batch of per_device_batch * grad_accum_steps, gradient-norm
clipping, and bfloat16 autocast by default. In virtual-prefix mode only the
prefix parameters ever enter the optimizer; the base model stays frozen.
"""

from __future__ import annotations

import json
import random
from contextlib import nullcontext
from pathlib import Path

import torch
import torch.nn.functional as F

from .config import VIRTUAL_PREFIX, PathLike, TrainerConfig, TrainerError
from .data import Example, load_dataset
from .model import ModelConfig, PrefixNet, TinyLM, Vocab, load_base_model, save_base_model


def _autocast(precision: str):
    if precision == "bf16":
        return torch.autocast("cpu", dtype=torch.bfloat16)
    return nullcontext()


def encode_examples(examples: list[Example], vocab: Vocab,
                    max_length: int) -> list[tuple[list[int], int]]:
    """Token ids truncated to max_length, with the prompt token count."""
    rows = []
    for ex in examples:
        prompt = vocab.encode(ex.prompt)
        completion = vocab.encode(ex.completion)
        ids = (prompt + completion)[:max_length]
        rows.append((ids, min(len(prompt), len(ids))))
    return rows


def collate(rows: list[tuple[list[int], int]], pad_id: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad a batch; labels mask the prompt and padding with -100."""
    width = max(len(ids) for ids, _ in rows)
    batch = torch.full((len(rows), width), pad_id, dtype=torch.long)
    labels = torch.full((len(rows), width), -100, dtype=torch.long)
    for r, (ids, n_prompt) in enumerate(rows):
        batch[r, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        labels[r, n_prompt: len(ids)] = torch.tensor(ids[n_prompt:], dtype=torch.long)
    return batch, labels


def _completion_loss(model: TinyLM, prefix: torch.Tensor | None,
                     batch: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    vocab_size = model.cfg.vocab_size
    if prefix is not None:
        logits = model(batch, prefix=prefix)
        ctx = prefix.shape[0]
        pred = logits[:, ctx - 1: ctx - 1 + batch.shape[1]]
        return F.cross_entropy(pred.reshape(-1, vocab_size), labels.reshape(-1),
                               ignore_index=-100)
    logits = model(batch)
    pred = logits[:, :-1]
    return F.cross_entropy(pred.reshape(-1, vocab_size), labels[:, 1:].reshape(-1),
                           ignore_index=-100)


def _mean_eval_loss(model: TinyLM, prefix_net: PrefixNet | None,
                    rows, pad_id: int, batch_size: int, precision: str) -> float | None:
    if not rows:
        return None
    losses = []
    with torch.no_grad(), _autocast(precision):
        for start in range(0, len(rows), batch_size):
            batch, labels = collate(rows[start: start + batch_size], pad_id)
            prefix = prefix_net() if prefix_net is not None else None
            losses.append(float(_completion_loss(model, prefix, batch, labels)))
    return sum(losses) / len(losses)


def train(dataset_dir: PathLike, base_model_ref: PathLike, cfg: TrainerConfig,
          out_dir: PathLike) -> dict:
    """Fine-tune on the curated dataset; returns the training summary.

    Writes <out_dir>/checkpoint/{trainable.pt, config.json} and
    <out_dir>/training_log.jsonl with {epoch, step, loss, lr, grad_norm}
    rows plus one per-epoch summary row.
    """
    cfg.validate()
    torch.manual_seed(cfg.seed)
    torch.set_num_threads(1)  # bit-reproducible CPU runs
    splits = load_dataset(dataset_dir)
    model, vocab = load_base_model(base_model_ref)
    train_rows = encode_examples(splits["train"], vocab, cfg.max_length)
    eval_rows = encode_examples(splits["eval"], vocab, cfg.max_length)
    if not train_rows:
        raise TrainerError("training split is empty")

    virtual = cfg.prefix_mode == VIRTUAL_PREFIX
    prefix_net: PrefixNet | None = None
    if virtual:
        for p in model.parameters():
            p.requires_grad_(False)
        if cfg.prefix_length != model.cfg.ctx_len:
            raise TrainerError(
                f"prefix_length {cfg.prefix_length} must match the base model's "
                f"context block ({model.cfg.ctx_len})"
            )
        prefix_net = PrefixNet(cfg.prefix_length, model.cfg.dim)
        trainable = list(prefix_net.parameters())
    else:
        model.train()
        trainable = list(model.parameters())

    optimizer = torch.optim.AdamW(trainable, lr=cfg.learning_rate, weight_decay=0.0)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "training_log.jsonl"
    epoch_means: list[float] = []
    step = 0
    with open(log_path, "w", encoding="utf-8") as log:
        for epoch in range(1, cfg.epochs + 1):
            order = list(range(len(train_rows)))
            random.Random(f"{cfg.seed}:{epoch}").shuffle(order)
            batches = [
                [train_rows[i] for i in order[s: s + cfg.per_device_batch]]
                for s in range(0, len(order), cfg.per_device_batch)
            ]
            epoch_losses: list[float] = []
            for w in range(0, len(batches), cfg.grad_accum_steps):
                window = batches[w: w + cfg.grad_accum_steps]
                optimizer.zero_grad()
                window_losses = []
                for rows in window:
                    batch, labels = collate(rows, vocab.pad_id)
                    with _autocast(cfg.precision):
                        prefix = prefix_net() if prefix_net is not None else None
                        loss = _completion_loss(model, prefix, batch, labels)
                    window_losses.append(float(loss.detach()))
                    (loss / len(window)).backward()
                grad_norm = float(torch.nn.utils.clip_grad_norm_(trainable, cfg.max_grad_norm))
                optimizer.step()
                step += 1
                mean_window = sum(window_losses) / len(window_losses)
                epoch_losses.extend(window_losses)
                log.write(json.dumps({
                    "epoch": epoch, "step": step, "loss": mean_window,
                    "lr": cfg.learning_rate, "grad_norm": grad_norm,
                }) + "\n")
            mean_loss = sum(epoch_losses) / len(epoch_losses)
            epoch_means.append(mean_loss)
            eval_loss = _mean_eval_loss(model, prefix_net, eval_rows, vocab.pad_id,
                                        cfg.per_device_batch, cfg.precision)
            log.write(json.dumps({
                "epoch": epoch, "mean_loss": mean_loss, "eval_loss": eval_loss,
            }) + "\n")

    ckpt = out / "checkpoint"
    ckpt.mkdir(parents=True, exist_ok=True)
    if virtual:
        assert prefix_net is not None
        trainable_state = {f"prefix.{k}": v for k, v in prefix_net.state_dict().items()}
    else:
        trainable_state = dict(model.state_dict())
    torch.save(trainable_state, ckpt / "trainable.pt")
    (ckpt / "config.json").write_text(json.dumps({
        "trainer_config": cfg.to_dict(),
        "base_model_ref": str(base_model_ref),
        "optimizer_steps": step,
    }, indent=2) + "\n")
    return {
        "epoch_mean_loss": epoch_means,
        "optimizer_steps": step,
        "checkpoint": str(ckpt),
        "log": str(log_path),
    }


def pretrain_base(pretrain_path: PathLike, out_dir: PathLike, steps: int = 400,
                  lr: float = 2e-3, batch_size: int = 16, ctx_len: int = 32,
                  seed: int = 0, dim: int = 64, n_layers: int = 2,
                  n_heads: int = 4, max_length: int = 512) -> dict:
    """Create the toy base model: next-token training on the style corpus.

    Loss covers only positions after the leading context block, which is what
    teaches the model to read that block.
    """
    torch.manual_seed(seed)
    torch.set_num_threads(1)
    texts = []
    with open(pretrain_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                texts.append(json.loads(line)["text"])
    if not texts:
        raise TrainerError(f"{pretrain_path}: empty pretraining corpus")
    vocab = Vocab.from_texts(texts)
    cfg = ModelConfig(vocab_size=len(vocab), dim=dim, n_layers=n_layers,
                      n_heads=n_heads, ctx_len=ctx_len,
                      max_positions=ctx_len + max_length)
    model = TinyLM(cfg)
    encoded = [vocab.encode(t)[: cfg.max_positions] for t in texts]
    rng = random.Random(seed)
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr)
    last_loss = float("nan")
    for _ in range(steps):
        rows = [encoded[rng.randrange(len(encoded))] for _ in range(batch_size)]
        width = max(len(r) for r in rows)
        batch = torch.full((batch_size, width), vocab.pad_id, dtype=torch.long)
        for r, ids in enumerate(rows):
            batch[r, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        labels = batch.clone()
        labels[batch == vocab.pad_id] = -100
        logits = model(batch)
        loss = F.cross_entropy(
            logits[:, ctx_len - 1: -1].reshape(-1, cfg.vocab_size),
            labels[:, ctx_len:].reshape(-1),
            ignore_index=-100,
        )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        last_loss = float(loss.detach())
    model.eval()
    save_base_model(model, vocab, out_dir)
    return {"final_loss": last_loss, "vocab_size": len(vocab), "steps": steps}

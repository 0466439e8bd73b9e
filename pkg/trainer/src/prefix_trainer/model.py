"""A tiny decoder-only language model with a reserved context block.

The first `ctx_len` positions of every pretraining sequence hold style tokens
that select the content of the rest. Prefix tuning later drops learned
embeddings into exactly those positions, so the base model already knows to
read them. The virtual prefix is reparameterized through a wide two-layer
projection; with a few optimizer steps at a very small learning rate, the
width is what gives the materialized prefix enough travel to matter.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import PathLike, TrainerError

PAD, UNK = "<pad>", "<unk>"


class Vocab:
    """Whitespace word-level vocabulary."""

    def __init__(self, words: list[str]):
        self.words = [PAD, UNK] + [w for w in words if w not in (PAD, UNK)]
        self.index = {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    @property
    def pad_id(self) -> int:
        return 0

    def encode(self, text: str) -> list[int]:
        return [self.index.get(w, 1) for w in text.split()]

    @classmethod
    def from_texts(cls, texts) -> "Vocab":
        seen: dict[str, None] = {}
        for text in texts:
            for word in text.split():
                seen.setdefault(word)
        return cls(sorted(seen))


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ctx_len: int = 32
    max_positions: int = 576  # ctx block plus the padded training length


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.head_dim = cfg.dim // cfg.n_heads
        self.ln1 = nn.LayerNorm(cfg.dim)
        self.qkv = nn.Linear(cfg.dim, 3 * cfg.dim)
        self.proj = nn.Linear(cfg.dim, cfg.dim)
        self.ln2 = nn.LayerNorm(cfg.dim)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.dim, 4 * cfg.dim), nn.GELU(), nn.Linear(4 * cfg.dim, cfg.dim)
        )

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        q, k, v = self.qkv(self.ln1(x)).split(d, dim=2)
        shape = (b, t, self.n_heads, self.head_dim)
        q = q.view(shape).transpose(1, 2)
        k = k.view(shape).transpose(1, 2)
        v = v.view(shape).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        att = att.masked_fill(mask[:t, :t] == 0, float("-inf"))
        att = F.softmax(att, dim=-1)
        x = x + self.proj((att @ v).transpose(1, 2).reshape(b, t, d))
        return x + self.mlp(self.ln2(x))


class TinyLM(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.emb = nn.Embedding(cfg.vocab_size, cfg.dim)
        self.pos = nn.Embedding(cfg.max_positions, cfg.dim)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.dim)
        self.head = nn.Linear(cfg.dim, cfg.vocab_size, bias=False)
        self.register_buffer(
            "causal_mask",
            torch.tril(torch.ones(cfg.max_positions, cfg.max_positions, dtype=torch.bool)),
            persistent=False,
        )

    def forward(self, ids: torch.Tensor,
                prefix: torch.Tensor | None = None) -> torch.Tensor:
        """Logits over the full sequence; `prefix` embeddings, when given,
        are prepended ahead of the token embeddings."""
        x = self.emb(ids)
        if prefix is not None:
            x = torch.cat([prefix.unsqueeze(0).expand(x.shape[0], -1, -1), x], dim=1)
        t = x.shape[1]
        if t > self.cfg.max_positions:
            raise TrainerError(f"sequence length {t} exceeds {self.cfg.max_positions}")
        x = x + self.pos(torch.arange(t, device=ids.device))
        for block in self.blocks:
            x = block(x, self.causal_mask)
        return self.head(self.ln_f(x))


class PrefixNet(nn.Module):
    """Learned virtual-prefix parameters behind a wide reparameterization.

    Adam moves every parameter about one learning-rate per step; routing the
    prefix through a wide hidden layer multiplies the resulting movement of
    the materialized embeddings by the layer width, which is what lets the
    reference learning rate (5e-6) make progress inside a handful of steps.
    """

    def __init__(self, prefix_length: int, dim: int, hidden: int = 65536,
                 inner: int = 16):
        super().__init__()
        self.z = nn.Parameter(torch.randn(prefix_length, inner) * 0.5)
        self.proj = nn.Sequential(
            nn.Linear(inner, hidden), nn.Tanh(), nn.Linear(hidden, dim)
        )

    def forward(self) -> torch.Tensor:
        return self.proj(self.z)


def save_base_model(model: TinyLM, vocab: Vocab, out_dir: PathLike) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), out / "model.pt")
    (out / "model_config.json").write_text(json.dumps(asdict(model.cfg), indent=2) + "\n")
    (out / "vocab.json").write_text(json.dumps(vocab.words) + "\n")


def load_base_model(ref: PathLike) -> tuple[TinyLM, Vocab]:
    base = Path(ref)
    if not (base / "model.pt").exists():
        raise TrainerError(f"base model not loadable from {ref!r}")
    cfg = ModelConfig(**json.loads((base / "model_config.json").read_text()))
    words = json.loads((base / "vocab.json").read_text())
    vocab = Vocab.__new__(Vocab)
    vocab.words = words
    vocab.index = {w: i for i, w in enumerate(words)}
    model = TinyLM(cfg)
    model.load_state_dict(torch.load(base / "model.pt", weights_only=True))
    model.eval()
    return model, vocab

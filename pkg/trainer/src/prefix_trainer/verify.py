"""Frozen-base verification: bitwise comparison of non-prefix parameters."""

from __future__ import annotations

from pathlib import Path

import torch

from .config import PathLike, TrainerError
from .model import load_base_model

PREFIX_NAMESPACE = "prefix."


def verify_frozen(base_model_ref: PathLike, checkpoint_dir: PathLike) -> tuple[bool, list[str]]:
    """True iff every non-prefix tensor in the checkpoint is bit-identical to
    the base model's. Returns (frozen, names_of_differing_tensors).

    Prefix tensors (the "prefix." namespace) are the trainable surface and
    are excluded from the comparison. A checkpoint tensor that does not map
    onto the base model, or whose shape or dtype disagrees, is a structural
    error rather than a difference.
    """
    model, _ = load_base_model(base_model_ref)
    base_state = model.state_dict()
    trainable_path = Path(checkpoint_dir) / "trainable.pt"
    if not trainable_path.exists():
        raise TrainerError(f"{checkpoint_dir}: missing trainable.pt")
    trainable = torch.load(trainable_path, weights_only=True)
    differing: list[str] = []
    for name, tensor in sorted(trainable.items()):
        if name.startswith(PREFIX_NAMESPACE):
            continue
        if name not in base_state:
            raise TrainerError(f"checkpoint tensor {name!r} not present in base model")
        base_tensor = base_state[name]
        if tensor.shape != base_tensor.shape:
            raise TrainerError(
                f"shape mismatch for {name!r}: {tuple(tensor.shape)} vs "
                f"{tuple(base_tensor.shape)}"
            )
        if tensor.dtype != base_tensor.dtype or not torch.equal(tensor, base_tensor):
            differing.append(name)
    return not differing, differing

"""Toy-scale supervised prefix fine-tuning with a frozen base model."""

__version__ = "0.1.0"

from .config import LOSS_ON_PREFIX, VIRTUAL_PREFIX, TrainerConfig, TrainerError, load_trainer_config
from .data import load_dataset, make_pretrain_corpus, make_toy_dataset
from .model import ModelConfig, PrefixNet, TinyLM, Vocab, load_base_model, save_base_model
from .train import pretrain_base, train
from .verify import verify_frozen

__all__ = [name for name in dir() if not name.startswith("_")]

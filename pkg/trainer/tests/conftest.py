import pytest

from prefix_trainer.data import make_pretrain_corpus, make_toy_dataset
from prefix_trainer.train import pretrain_base

CTX_LEN = 32


@pytest.fixture(scope="session")
def toy_workspace(tmp_path_factory):
    """One toy corpus + pretrained base model shared by the whole suite."""
    root = tmp_path_factory.mktemp("toy")
    make_pretrain_corpus(root / "pretrain.jsonl", sequences=768, ctx_len=CTX_LEN, seed=0)
    make_toy_dataset(root / "dataset", train_examples=64, seed=0)
    pretrain_base(root / "pretrain.jsonl", root / "base", steps=400, ctx_len=CTX_LEN, seed=0)
    return root

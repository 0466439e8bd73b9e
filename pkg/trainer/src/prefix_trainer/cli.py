"""CLI: make-toy-data, init-model, train, verify."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from .config import TrainerConfig, TrainerError, load_trainer_config
from .data import make_pretrain_corpus, make_toy_dataset
from .train import pretrain_base, train
from .verify import verify_frozen


def cmd_make_toy_data(args) -> int:
    from pathlib import Path

    Path(args.out).mkdir(parents=True, exist_ok=True)
    make_pretrain_corpus(f"{args.out}/pretrain.jsonl", sequences=args.sequences,
                         ctx_len=args.ctx_len, seed=args.seed)
    manifest = make_toy_dataset(f"{args.out}/dataset", train_examples=args.examples,
                                seed=args.seed)
    print(json.dumps({"out": args.out, "counts": manifest["counts"]}, indent=2))
    return 0


def cmd_init_model(args) -> int:
    from pathlib import Path

    Path(args.out).mkdir(parents=True, exist_ok=True)
    summary = pretrain_base(args.pretrain, args.out, steps=args.steps, lr=args.lr,
                            ctx_len=args.ctx_len, seed=args.seed)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_train(args) -> int:
    cfg = load_trainer_config(args.config) if args.config else TrainerConfig()
    if args.prefix_mode:
        cfg = TrainerConfig(**{**cfg.to_dict(), "prefix_mode": args.prefix_mode})
    summary = train(args.data, args.model, cfg.validate(), args.out)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_verify(args) -> int:
    frozen, differing = verify_frozen(args.model, args.checkpoint)
    print(json.dumps({"frozen": frozen, "differing": differing}, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefix-trainer",
        description="Toy-scale prefix fine-tuning on curated datasets",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    toy = sub.add_parser("make-toy-data", help="write a toy pretrain corpus and dataset")
    toy.add_argument("--out", required=True)
    toy.add_argument("--examples", type=int, default=64)
    toy.add_argument("--sequences", type=int, default=768)
    toy.add_argument("--ctx-len", dest="ctx_len", type=int, default=32)
    toy.add_argument("--seed", type=int, default=0)
    toy.set_defaults(func=cmd_make_toy_data)

    init = sub.add_parser("init-model", help="pretrain the toy base model")
    init.add_argument("--pretrain", required=True)
    init.add_argument("--out", required=True)
    init.add_argument("--steps", type=int, default=400)
    init.add_argument("--lr", type=float, default=2e-3)
    init.add_argument("--ctx-len", dest="ctx_len", type=int, default=32)
    init.add_argument("--seed", type=int, default=0)
    init.set_defaults(func=cmd_init_model)

    tr = sub.add_parser("train", help="prefix fine-tune on a curated dataset")
    tr.add_argument("--data", required=True, help="curated dataset directory")
    tr.add_argument("--model", required=True, help="base model directory")
    tr.add_argument("--config", help="JSON TrainerConfig file")
    tr.add_argument("--prefix-mode", dest="prefix_mode",
                    choices=["virtual_prefix_params", "loss_on_prefix_tokens"])
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=cmd_train)

    ver = sub.add_parser("verify", help="check the base model stayed frozen")
    ver.add_argument("--model", required=True)
    ver.add_argument("--checkpoint", required=True)
    ver.set_defaults(func=cmd_verify)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrainerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

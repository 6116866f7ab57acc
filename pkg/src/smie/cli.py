"""Command-line entry point: ``smie <subcommand> ...``.

Exit codes: 0 success, 1 verification/training failure, 2 usage or config
error, 3 I/O or malformed input data.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .data import (ClassSplit, DataError, Dataset, SynthConfig, generate_synthetic, load_manifest, make_splits,
                   preprocess, read_split, write_split)
from .encoder import PretrainConfig, load_encoder, pretrain_encoder, save_encoder
from .evaluation import evaluate, export_reports
from .nn import NonFiniteError
from .temporal import attention_csv, motion_attention
from .train import TrainConfig, load_model, train

log = logging.getLogger("smie")


class UsageError(Exception):
    pass


def _resolve(config_cls, config_path, overrides: dict):
    """Defaults < config file < command-line flags."""
    values = dataclasses.asdict(config_cls())
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{config_path}: invalid JSON ({exc})") from None
        unknown = set(doc) - set(values)
        if unknown:
            raise UsageError(f"{config_path}: unknown config keys {sorted(unknown)}")
        values.update(doc)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return config_cls(**values)


def _config_hash(config) -> str:
    blob = json.dumps(dataclasses.asdict(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _echo(command: str, config) -> None:
    print(json.dumps({"command": command, "config": dataclasses.asdict(config)}, sort_keys=True),
          file=sys.stderr)


def _provenance(out_dir: Path, command: str, config, seed) -> None:
    line = f"smie {__version__} {command} config_sha256={_config_hash(config)} seed={seed}\n"
    with open(out_dir / "provenance.txt", "a") as fh:
        fh.write(line)


def _checkpoint_path(path: str, default_name: str) -> Path:
    p = Path(path)
    return p / default_name if p.is_dir() else p


@dataclasses.dataclass
class SplitsConfig:
    unseen: int = 5
    folds: int = 3
    seed: int = 0


@dataclasses.dataclass
class EvalConfig:
    frames: int = 50


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    config = _resolve(SynthConfig, args.config, {
        "n_classes": args.n_classes, "n_seen": args.n_seen, "samples_per_class_train": args.train_per_class,
        "samples_per_class_test": args.test_per_class, "K": args.frames, "J": args.joints, "C": args.channels,
        "D_s": args.semantic_dim, "noise_sigma": args.noise, "seed": args.seed})
    try:
        config.validate()
    except DataError as exc:
        raise UsageError(str(exc)) from None
    _echo("synth", config)
    out = Path(args.out)
    manifest, split = generate_synthetic(config, out)
    _provenance(out, "synth", config, config.seed)
    print(f"wrote {len(manifest.classes)} classes, {len(manifest.samples)} samples to {out} "
          f"(seen {len(split.seen)}, unseen {len(split.unseen)})")
    return 0


def cmd_splits(args) -> int:
    config = _resolve(SplitsConfig, args.config, {"unseen": args.unseen, "folds": args.folds, "seed": args.seed})
    _echo("splits", config)
    manifest = load_manifest(args.data)
    n = len(manifest.classes)
    if not 1 <= config.unseen < n:
        raise UsageError(f"--unseen must be in [1, {n - 1}] for {n} classes")
    if config.folds < 1:
        raise UsageError("--folds must be >= 1")
    out = Path(args.out) if args.out else manifest.root / "splits"
    out.mkdir(parents=True, exist_ok=True)
    for i, split in enumerate(make_splits(manifest, config.unseen, config.folds, config.seed)):
        write_split(out / f"split_{i}.json", split)
        print(f"{out / f'split_{i}.json'}: unseen {sorted(split.unseen)}")
    _provenance(out, "splits", config, config.seed)
    return 0


def _load_split(path, dataset: Dataset) -> ClassSplit:
    split = read_split(path)
    split.validate_against(dataset.manifest)
    return split


def cmd_pretrain(args) -> int:
    config = _resolve(PretrainConfig, args.config, {"lr": args.lr, "epochs": args.epochs,
                                                    "batch_size": args.batch, "seed": args.seed})
    _echo("pretrain", config)
    dataset = Dataset.load(args.data)
    split = _load_split(args.split, dataset)
    encoder, report = pretrain_encoder(dataset, split, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_encoder(out / "encoder.smck", encoder)
    _provenance(out, "pretrain", config, config.seed)
    print(f"encoder seen-class training accuracy {report.train_accuracy:.6f}")
    return 0


def cmd_train(args) -> int:
    config = _resolve(TrainConfig, args.config, {
        "beta": args.beta, "lam": args.lam, "P": args.p, "lr": args.lr, "epochs": args.epochs,
        "batch_size": args.batch, "seed": args.seed})
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _echo("train", config)
    dataset = Dataset.load(args.data)
    split = _load_split(args.split, dataset)
    encoder = load_encoder(_checkpoint_path(args.encoder, "encoder.smck"))
    out = Path(args.out)
    state = train(dataset, split, encoder, config, out_dir=out)
    (out / "config.json").write_text(json.dumps(config.to_json(), indent=1, sort_keys=True) + "\n")
    _provenance(out, "train", config, config.seed)
    last = state.history[-1]
    print(f"trained {state.epoch} epochs; final L {last[6]:.6f} m {last[2]:.6f} m_hat {last[3]:.6f}")
    return 0


def cmd_eval(args) -> int:
    config = EvalConfig()
    _echo("eval", config)
    dataset = Dataset.load(args.data)
    split = _load_split(args.split, dataset)
    encoder = load_encoder(_checkpoint_path(args.encoder, "encoder.smck"))
    model = load_model(_checkpoint_path(args.model, "model.smck"))
    report = evaluate(model, dataset, split, encoder, config.frames)
    out = Path(args.report)
    export_reports(report, out)
    _provenance(out, "eval", config, "-")
    print(f"top-1 accuracy {report.top1_accuracy:.6f} on {report.total} samples")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import full_loss_gradcheck

    worst = max(full_loss_gradcheck(seed=args.seed + i, beta=args.beta, lam=args.lam) for i in range(args.batches))
    print(f"max relative gradient error {worst:.3e} (tolerance {args.tol:.1e})")
    return 0 if worst < args.tol else 1


def cmd_attn(args) -> int:
    dataset = Dataset.load(args.data)
    if args.sample not in {s.id for s in dataset.manifest.samples}:
        raise UsageError(f"unknown sample id {args.sample}")
    seq = preprocess(dataset.sequence(args.sample), args.frames)
    text = attention_csv(motion_attention(seq))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smie", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"smie {__version__}")
    parser.add_argument("--threads", type=int, default=1, help="cap on BLAS worker threads (default 1)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--n-classes", type=int)
    p.add_argument("--n-seen", type=int)
    p.add_argument("--train-per-class", type=int)
    p.add_argument("--test-per-class", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--joints", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--semantic-dim", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("splits", help="draw random seen/unseen class splits")
    p.add_argument("--data", required=True)
    p.add_argument("--unseen", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="directory for split_<i>.json (default DATA/splits)")
    p.add_argument("--config")
    p.set_defaults(func=cmd_splits)

    p = sub.add_parser("pretrain", help="pretrain the frame encoder on seen classes")
    p.add_argument("--data", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train the connection network")
    p.add_argument("--data", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--beta", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--p", type=int, help="number of masked keyframes")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="zero-shot evaluation on unseen classes")
    p.add_argument("--data", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the training loss gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batches", type=int, default=10)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("attn", help="dump per-frame motion attention as CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--sample", type=int, required=True)
    p.add_argument("--frames", type=int, default=50)
    p.add_argument("--out")
    p.set_defaults(func=cmd_attn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        threadpool_limits = None
    try:
        if threadpool_limits is not None:
            with threadpool_limits(limits=max(1, args.threads)):
                return args.func(args)
        return args.func(args)
    except UsageError as exc:
        print(f"smie {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, DataError) as exc:
        print(f"smie {args.command}: I/O error: {exc}", file=sys.stderr)
        return 3
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"smie {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 1
    except (ValueError, TypeError) as exc:
        print(f"smie {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

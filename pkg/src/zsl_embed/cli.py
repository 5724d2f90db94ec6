"""Command-line entry point.

Subcommands: ``synth`` (write a generated dataset), ``train`` (dataset ->
checkpoint + history CSV), ``eval`` (checkpoint + dataset -> accuracy),
``ablate`` (modality/direction/metric grid -> report), ``distance``
(one metric value, for debugging) and ``gradcheck`` (finite-difference
verification of the analytic gradients).

Settings come from an optional flat ``key = value`` config file with
section prefixes (``net.head_out``, ``train.lr``, ``synth.n_classes``,
``metric.eta``, ``ablate.directions``); command-line flags override file
values. Unknown keys are rejected. The ``ZSL_EMBED_LOG`` environment
variable (error, info, debug) controls log verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .data import load_dataset, save_dataset
from .evaluation import (
    REPORT_HEADER,
    ablate,
    all_subsets,
    emit_report,
    evaluate,
)
from .metric import METRIC_KINDS, MetricKind, metric_distance
from .network import DIRECTIONS, NetConfig, gradient_check
from .synthetic import ModalitySpec, SynthConfig, generate
from .training import (
    OPTIMIZERS,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    save_history,
    train,
)

log = logging.getLogger("zsl_embed")

GRADCHECK_TOLERANCE = 1e-6

_NET_KEYS = {"head_hidden", "head_out", "embed_dim", "direction", "l2_lambda"}
_TRAIN_KEYS = {
    "optimizer",
    "lr",
    "momentum",
    "beta1",
    "beta2",
    "epsilon",
    "batch_size",
    "epochs",
    "lr_decay",
    "l2_lambda",
    "seed",
    "shuffle",
}
_SYNTH_KEYS = {
    "n_classes",
    "n_seen",
    "samples_per_class",
    "latent_dim",
    "embed_dim",
    "visual_noise_sigma",
    "seed",
    "modalities",
}
_METRIC_KEYS = {"kind", "eta"}
_ABLATE_KEYS = {"subsets", "directions", "metrics"}


def _setup_logging() -> None:
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    level = levels.get(os.environ.get("ZSL_EMBED_LOG", "error").lower(), logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(level)


# ---------------------------------------------------------------------------
# config file handling


def read_config_file(path: str) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise ValueError(f"config not found: {path}")
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        entries[key.strip()] = value.strip()
    _check_keys(path, entries)
    return entries


def _check_keys(path: str, entries: dict[str, str]) -> None:
    known = {
        "net": _NET_KEYS,
        "train": _TRAIN_KEYS,
        "synth": _SYNTH_KEYS,
        "metric": _METRIC_KEYS,
        "ablate": _ABLATE_KEYS,
    }
    for key in entries:
        section, _, field = key.partition(".")
        if section not in known or field not in known[section]:
            raise ValueError(f"{path}: unknown config key: {key}")


def _parse_value(key: str, value: str, kind):
    try:
        if kind is bool:
            lowered = value.lower()
            if lowered in ("true", "yes", "1"):
                return True
            if lowered in ("false", "no", "0"):
                return False
            raise ValueError(value)
        return kind(value)
    except ValueError:
        raise ValueError(f"config key {key}: invalid value {value!r}") from None


_TRAIN_FIELD_TYPES = {
    "optimizer": str,
    "lr": float,
    "momentum": float,
    "beta1": float,
    "beta2": float,
    "epsilon": float,
    "batch_size": int,
    "epochs": int,
    "lr_decay": float,
    "l2_lambda": float,
    "seed": int,
    "shuffle": bool,
}


def train_config_from(entries: dict[str, str], seed: int | None) -> TrainConfig:
    kw = {}
    for key, value in entries.items():
        section, _, field = key.partition(".")
        if section != "train":
            continue
        kw[field] = _parse_value(key, value, _TRAIN_FIELD_TYPES[field])
    if seed is not None:
        kw["seed"] = seed
    return TrainConfig(**kw)


def net_config_from(
    entries: dict[str, str],
    modality_dims: dict[str, int],
    visual_dim: int,
    direction: str | None,
) -> NetConfig:
    kw = {
        "modality_dims": modality_dims,
        "embed_dim": visual_dim,
        "head_hidden": 512,
        "head_out": 1024,
    }
    for key, value in entries.items():
        section, _, field = key.partition(".")
        if section != "net":
            continue
        if field == "embed_dim":
            declared = _parse_value(key, value, int)
            if declared != visual_dim:
                raise ValueError(
                    f"net.embed_dim {declared} does not match "
                    f"dataset visual dim {visual_dim}"
                )
        elif field == "direction":
            kw["direction"] = value
        elif field == "l2_lambda":
            kw["l2_lambda"] = _parse_value(key, value, float)
        else:
            kw[field] = _parse_value(key, value, int)
    if direction is not None:
        kw["direction"] = direction
    return NetConfig(**kw)


def _parse_modality_specs(value: str) -> tuple[ModalitySpec, ...]:
    """Parse ``TAG:dim[:fraction[:sigma]]`` items separated by commas."""
    specs = []
    for item in value.split(","):
        parts = item.strip().split(":")
        if len(parts) < 2 or len(parts) > 4:
            raise ValueError(
                f"bad modality spec {item!r}, expected TAG:dim[:fraction[:sigma]]"
            )
        tag = parts[0]
        dim = _parse_value("synth.modalities", parts[1], int)
        fraction = _parse_value("synth.modalities", parts[2], float) if len(parts) > 2 else 0.5
        sigma = _parse_value("synth.modalities", parts[3], float) if len(parts) > 3 else 0.05
        specs.append(ModalitySpec(tag, dim, fraction, sigma))
    return tuple(specs)


def synth_config_from(entries: dict[str, str], seed: int | None) -> SynthConfig:
    field_types = {
        "n_classes": int,
        "n_seen": int,
        "samples_per_class": int,
        "latent_dim": int,
        "embed_dim": int,
        "visual_noise_sigma": float,
        "seed": int,
    }
    kw = {}
    for key, value in entries.items():
        section, _, field = key.partition(".")
        if section != "synth":
            continue
        if field == "modalities":
            kw["modalities"] = _parse_modality_specs(value)
        else:
            kw[field] = _parse_value(key, value, field_types[field])
    if seed is not None:
        kw["seed"] = seed
    return SynthConfig(**kw)


def metric_from(entries: dict[str, str], kind: str | None, eta: float | None) -> MetricKind:
    if kind is None:
        kind = entries.get("metric.kind", "ec")
    if eta is None:
        eta = _parse_value("metric.eta", entries.get("metric.eta", "0.9"), float)
    if kind == "ec":
        return MetricKind.ec(eta)
    return MetricKind(kind)


def _parse_tags(value: str) -> tuple[str, ...]:
    tags = tuple(t.strip() for t in value.split(",") if t.strip())
    if not tags:
        raise ValueError(f"no modality tags in {value!r}")
    return tags


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(args) -> int:
    entries = read_config_file(args.config) if args.config else {}
    config = synth_config_from(entries, args.seed)
    dataset = generate(config)
    save_dataset(dataset, args.out)
    log.info("generated dataset with seed %d", config.seed)
    print(
        f"wrote dataset: {config.n_classes} classes ({config.n_seen} seen), "
        f"{dataset.visual.rows} train / {dataset.test_visual.rows} test samples -> {args.out}"
    )
    return 0


def _cmd_train(args) -> int:
    entries = read_config_file(args.config) if args.config else {}
    dataset = load_dataset(args.data)
    tags = _parse_tags(args.modalities) if args.modalities else dataset.modality_tags
    net_config = net_config_from(
        entries, dataset.modality_dims(tags), dataset.visual.dim, args.direction
    )
    train_config = train_config_from(entries, args.seed)
    log.info(
        "training %s on %d samples, %d epochs", "+".join(tags),
        dataset.visual.rows, train_config.epochs,
    )
    model, history = train(dataset, net_config, train_config, tags)
    out = Path(args.out)
    save_checkpoint(model, out)
    history_path = out.with_name(out.stem + "_history.csv")
    save_history(history, history_path)
    if history.losses:
        log.info("loss %.6g -> %.6g", history.losses[0], history.losses[-1])
    print(f"trained {len(history)} epochs -> {out} (history: {history_path})")
    return 0


def _cmd_eval(args) -> int:
    entries = read_config_file(args.config) if args.config else {}
    dataset = load_dataset(args.data)
    model = load_checkpoint(args.checkpoint)
    tags = _parse_tags(args.modalities) if args.modalities else model.config.tags
    metric = metric_from(entries, args.metric, args.eta)
    result = evaluate(model, dataset, metric, tags)
    print(
        f"top1 {result.top1:.4f} top5 {result.top5:.4f} "
        f"({dataset.test_visual.rows} samples, {len(result.class_ids)} classes, "
        f"metric {metric.label()}, direction {model.direction})"
    )
    if args.out:
        lines = [
            REPORT_HEADER,
            f"{'+'.join(sorted(tags))},{model.direction},{metric.label()},"
            f"{repr(float(result.top1))},{repr(float(result.top5))}",
        ]
        Path(args.out).write_text("\n".join(lines) + "\n")
    return 0


def _cmd_ablate(args) -> int:
    entries = read_config_file(args.config) if args.config else {}
    dataset = load_dataset(args.data)
    if "ablate.subsets" in entries:
        subsets = [_parse_tags(s.replace("+", ",")) for s in entries["ablate.subsets"].split(";")]
    else:
        subsets = all_subsets(dataset.modality_tags)
    if args.direction:
        directions = (args.direction,)
    elif "ablate.directions" in entries:
        directions = tuple(d.strip() for d in entries["ablate.directions"].split(","))
    else:
        directions = DIRECTIONS
    if args.metric:
        metrics = (metric_from(entries, args.metric, args.eta),)
    elif "ablate.metrics" in entries:
        metrics = tuple(MetricKind.from_label(m.strip()) for m in entries["ablate.metrics"].split(","))
    else:
        metrics = (MetricKind.ec(args.eta if args.eta is not None else 0.9), MetricKind.euclidean())
    net_config = net_config_from(entries, dataset.modality_dims(), dataset.visual.dim, None)
    train_config = train_config_from(entries, args.seed)
    log.info(
        "ablation grid: %d subsets x %d directions x %d metrics, %d jobs",
        len(subsets), len(directions), len(metrics), args.jobs,
    )
    cells = ablate(
        dataset, net_config, train_config, subsets,
        directions=directions, metrics=metrics, jobs=args.jobs,
    )
    emit_report(cells, args.format, args.out)
    print(f"wrote {len(cells)} cells -> {args.out}")
    return 0


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.asarray([float(t) for t in text.split(",")], dtype=np.float64)
    except ValueError:
        raise ValueError(f"bad vector {text!r}, expected comma-separated numbers") from None


def _cmd_distance(args) -> int:
    metric = metric_from({}, args.metric, args.eta)
    a, b = _parse_vector(args.a), _parse_vector(args.b)
    print(f"{metric_distance(a, b, metric):.6f}")
    return 0


def _cmd_gradcheck(args) -> int:
    error = gradient_check(seed=args.seed if args.seed is not None else 0)
    print(f"max relative error {error:.3e}")
    return 0 if error < GRADCHECK_TOLERANCE else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zsl-embed",
        description="Zero-shot embedding toolkit: synthesize data, train fusion "
        "embeddings, evaluate nearest-prototype classification, run ablations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train an embedding model on a dataset")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--direction", choices=DIRECTIONS, help="embedding direction")
    p.add_argument("--modalities", help="comma-separated modality tags (default: all)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p)
    p.add_argument("--checkpoint", required=True, help="trained model checkpoint")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--metric", choices=METRIC_KINDS, help="distance metric")
    p.add_argument("--eta", type=float, help="cosine weight for the ec metric")
    p.add_argument("--modalities", help="comma-separated modality tags")
    p.add_argument("--out", help="optional CSV result path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train and score a modality/direction/metric grid")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="report output path")
    p.add_argument("--format", choices=("csv", "markdown"), default="csv")
    p.add_argument("--jobs", type=int, default=1, help="parallel training processes")
    p.add_argument("--direction", choices=DIRECTIONS, help="restrict to one direction")
    p.add_argument("--metric", choices=METRIC_KINDS, help="restrict to one metric")
    p.add_argument("--eta", type=float, help="cosine weight for the ec metric")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("distance", help="compute one distance value")
    p.add_argument("--metric", choices=METRIC_KINDS, required=True)
    p.add_argument("--eta", type=float, help="cosine weight for the ec metric")
    p.add_argument("--a", required=True, help="first vector, comma-separated")
    p.add_argument("--b", required=True, help="second vector, comma-separated")
    p.set_defaults(func=_cmd_distance)

    p = sub.add_parser("gradcheck", help="verify analytic gradients by finite differences")
    p.add_argument("--seed", type=int, help="seed for the random instances")
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def dispatch(argv: list[str]) -> int:
    """Run one CLI invocation; returns the process exit code."""
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()

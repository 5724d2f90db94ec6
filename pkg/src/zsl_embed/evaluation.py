"""Nearest-prototype classification of unseen classes and the ablation grid.

Each test sample is assigned the class whose embedded prototype is
nearest under the chosen metric; ties break toward the lowest class id.
``ablate`` trains one model per (modality subset, direction) and scores
it under every metric; ``emit_report`` renders the grid as CSV or a
markdown table. ``hubness_skewness`` quantifies how unevenly classes
appear among the k nearest prototypes of the queries.
"""

from __future__ import annotations

import dataclasses
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import Dataset, SemanticTable
from .metric import MetricKind, pairwise_distances
from .network import DIRECTIONS, EmbeddingModel, NetConfig, S_TO_V
from .training import TrainConfig, train

REPORT_HEADER = "modalities,direction,metric,top1,top5"


@dataclasses.dataclass(frozen=True, eq=False)
class EvalResult:
    """Top-1/Top-5 accuracy with per-class breakdown and a confusion matrix.

    ``confusion[i, j]`` counts test samples of ``class_ids[i]`` predicted
    as ``class_ids[j]``; row sums are the per-class test counts.
    """

    top1: float
    top5: float
    per_class_top1: dict[int, float]
    confusion: np.ndarray
    class_ids: tuple[int, ...]


@dataclasses.dataclass(frozen=True, eq=False)
class AblationCell:
    modalities: tuple[str, ...]
    direction: str
    metric: MetricKind
    result: EvalResult


def embed_class_prototypes(
    model: EmbeddingModel,
    semantics: Sequence[SemanticTable],
    classes: Iterable[int],
    active: Iterable[str],
) -> np.ndarray:
    """One prototype row per class, in ascending class-id order."""
    tags = model.fusion.check_active(active)
    ids = sorted(int(c) for c in classes)
    if not ids:
        raise ValueError("no classes to embed")
    tables = {t.modality: t for t in semantics}
    missing = [t for t in tags if t not in tables]
    if missing:
        raise ValueError(f"no semantic table for modalities {missing}")
    inputs = {tag: tables[tag].matrix(ids) for tag in tags}
    return model.embed(inputs, tags)


def prediction_distances(
    model: EmbeddingModel,
    dataset: Dataset,
    metric: MetricKind,
    active: Iterable[str],
) -> tuple[np.ndarray, list[int]]:
    """Distance matrix (test samples x unseen classes) and its class order."""
    ids = sorted(dataset.unseen)
    prototypes = embed_class_prototypes(model, dataset.semantics, ids, active)
    if model.direction == S_TO_V:
        queries = dataset.test_visual.values
        if queries.shape[1] != model.config.embed_dim:
            raise ValueError(
                f"test feature dim {queries.shape[1]} does not match "
                f"model embed_dim {model.config.embed_dim}"
            )
    else:
        queries = model.map_visual(dataset.test_visual.values)
    return pairwise_distances(queries, prototypes, metric), ids


def evaluate(
    model: EmbeddingModel,
    dataset: Dataset,
    metric: MetricKind,
    active: Iterable[str],
    direction: str | None = None,
) -> EvalResult:
    """Score the model on the dataset's unseen classes."""
    if direction is not None and direction != model.direction:
        raise ValueError(
            f"requested direction {direction!r} but the model was built for "
            f"{model.direction!r}"
        )
    if dataset.test_visual.rows == 0:
        raise ValueError("no test samples")
    distances, ids = prediction_distances(model, dataset, metric, active)
    id_to_idx = {c: i for i, c in enumerate(ids)}
    true_idx = np.asarray([id_to_idx[int(c)] for c in dataset.test_visual.labels])

    ranked = np.argsort(distances, axis=1, kind="stable")
    k = min(5, len(ids))
    hit1 = ranked[:, 0] == true_idx
    hit5 = (ranked[:, :k] == true_idx[:, None]).any(axis=1)

    n_cls = len(ids)
    confusion = np.zeros((n_cls, n_cls), dtype=np.int64)
    np.add.at(confusion, (true_idx, ranked[:, 0]), 1)
    per_class = {}
    for i, cls in enumerate(ids):
        mask = true_idx == i
        if mask.any():
            per_class[cls] = float(hit1[mask].mean())
    return EvalResult(
        top1=float(hit1.mean()),
        top5=float(hit5.mean()),
        per_class_top1=per_class,
        confusion=confusion,
        class_ids=tuple(ids),
    )


def hubness_skewness(dist_matrix: np.ndarray, k: int) -> float:
    """Population skewness of the k-occurrence counts across classes.

    ``N_k(c)`` counts queries that rank class ``c`` among their k nearest;
    a long right tail (a few classes hoarding neighbors) gives a large
    positive value. Uniform counts give 0.0.
    """
    dist = np.asarray(dist_matrix, dtype=np.float64)
    if dist.ndim != 2:
        raise ValueError(f"distance matrix must be 2-D, got shape {dist.shape}")
    n_classes = dist.shape[1]
    if n_classes < 2:
        raise ValueError("skewness needs at least 2 classes")
    if not 1 <= k <= n_classes:
        raise ValueError(f"k must be in [1, {n_classes}], got {k}")
    ranked = np.argsort(dist, axis=1, kind="stable")[:, :k]
    counts = np.bincount(ranked.ravel(), minlength=n_classes).astype(np.float64)
    centered = counts - counts.mean()
    m2 = float(np.mean(centered**2))
    if m2 == 0.0:
        return 0.0
    m3 = float(np.mean(centered**3))
    return m3 / m2**1.5


def cell_seed(base_seed: int, modalities: Iterable[str], direction: str) -> int:
    """Deterministic per-cell training seed; distinct cells get distinct streams."""
    key = "+".join(sorted(modalities)) + "|" + direction
    return zlib.crc32(key.encode("utf-8"), base_seed & 0xFFFFFFFF)


def _run_cell(task) -> list[AblationCell]:
    dataset, net_config, train_config, subset, direction, metrics = task
    seed = cell_seed(train_config.seed, subset, direction)
    cfg = dataclasses.replace(train_config, seed=seed)
    net_cfg = dataclasses.replace(net_config, direction=direction)
    model, _ = train(dataset, net_cfg, cfg, subset)
    return [
        AblationCell(subset, direction, metric, evaluate(model, dataset, metric, subset))
        for metric in metrics
    ]


def ablate(
    dataset: Dataset,
    net_config: NetConfig,
    train_config: TrainConfig,
    subsets: Sequence[Iterable[str]],
    directions: Sequence[str] = (S_TO_V,),
    metrics: Sequence[MetricKind] = (MetricKind.ec(),),
    jobs: int = 1,
) -> list[AblationCell]:
    """Train and score the full (subset x direction) grid under each metric.

    Cells are independent; with ``jobs > 1`` they train in separate
    processes. The returned order and every cell value are identical
    regardless of ``jobs``.
    """
    if not subsets:
        raise ValueError("no modality subsets given")
    for d in directions:
        if d not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {d!r}")
    if not metrics:
        raise ValueError("no metrics given")
    if jobs < 1:
        raise ValueError("jobs must be at least 1")
    tasks = []
    for subset in subsets:
        canon = tuple(sorted(set(subset)))
        if not canon:
            raise ValueError("empty modality subset")
        for direction in directions:
            tasks.append((dataset, net_config, train_config, canon, direction, tuple(metrics)))
    if jobs == 1:
        grouped = [_run_cell(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            grouped = list(pool.map(_run_cell, tasks))
    return [cell for group in grouped for cell in group]


def all_subsets(tags: Iterable[str]) -> list[tuple[str, ...]]:
    """Every non-empty subset, ordered by size then tag order."""
    tags = tuple(sorted(set(tags)))
    out = [
        tuple(t for i, t in enumerate(tags) if mask >> i & 1)
        for mask in range(1, 2 ** len(tags))
    ]
    out.sort(key=lambda s: (len(s), s))
    return out


# ---------------------------------------------------------------------------
# reports


def _sorted_cells(cells: Sequence[AblationCell]) -> list[AblationCell]:
    return sorted(cells, key=lambda c: (c.modalities, c.direction, c.metric.label()))


def emit_report(cells: Sequence[AblationCell], format: str, path: str | Path) -> None:
    """Write the grid as ``csv`` (full precision) or ``markdown`` (percentages)."""
    if not cells:
        raise ValueError("no cells to report")
    path = Path(path)
    ordered = _sorted_cells(cells)
    if format == "csv":
        lines = [REPORT_HEADER]
        for c in ordered:
            lines.append(
                f"{'+'.join(c.modalities)},{c.direction},{c.metric.label()},"
                f"{repr(float(c.result.top1))},{repr(float(c.result.top5))}"
            )
        path.write_text("\n".join(lines) + "\n")
    elif format == "markdown":
        columns = sorted(
            {(c.direction, c.metric.label()) for c in ordered},
            key=lambda dc: (dc[0], dc[1]),
        )
        by_key = {
            (c.modalities, c.direction, c.metric.label()): c.result for c in ordered
        }
        subsets = sorted({c.modalities for c in ordered})
        lines = [
            "| modalities | " + " | ".join(f"{d} {m}" for d, m in columns) + " |",
            "| --- |" + " --- |" * len(columns),
        ]
        for subset in subsets:
            row = ["+".join(subset)]
            for d, m in columns:
                res = by_key.get((subset, d, m))
                row.append("-" if res is None else f"{100 * res.top1:.1f}/{100 * res.top5:.1f}")
            lines.append("| " + " | ".join(row) + " |")
        path.write_text("\n".join(lines) + "\n")
    else:
        raise ValueError(f"unknown report format {format!r}, expected 'csv' or 'markdown'")


def read_report_csv(path: str | Path) -> list[dict]:
    """Parse a CSV report back into row dicts (inverse of the csv format)."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != REPORT_HEADER:
        raise ValueError(f"{path}: malformed report header")
    rows = []
    for line in lines[1:]:
        if not line.strip():
            continue
        modalities, direction, metric, top1, top5 = line.split(",")
        rows.append(
            {
                "modalities": tuple(modalities.split("+")),
                "direction": direction,
                "metric": MetricKind.from_label(metric),
                "top1": float(top1),
                "top5": float(top5),
            }
        )
    return rows

import dataclasses

import numpy as np
import pytest

from zsl_embed.data import FeatureMatrix, SemanticTable, make_dataset
from zsl_embed.evaluation import (
    REPORT_HEADER,
    AblationCell,
    EvalResult,
    ablate,
    all_subsets,
    cell_seed,
    embed_class_prototypes,
    emit_report,
    evaluate,
    hubness_skewness,
    prediction_distances,
    read_report_csv,
)
from zsl_embed.metric import MetricKind
from zsl_embed.network import NetConfig, S_TO_V, V_TO_S, init_model
from zsl_embed.training import TrainConfig


def build_dataset(n_seen=3, n_unseen=6, per_class=4, dim=6, sem_dim=4, seed=0,
                  twin_unseen=False):
    """Random dataset; with twin_unseen the two lowest unseen classes share
    identical attribute vectors in every modality."""
    rng = np.random.default_rng(seed)
    seen = list(range(n_seen))
    unseen = list(range(n_seen, n_seen + n_unseen))
    train = FeatureMatrix(
        rng.uniform(0, 1, (n_seen * per_class, dim)),
        np.repeat(seen, per_class),
    )
    test = FeatureMatrix(
        rng.uniform(0, 1, (n_unseen * per_class, dim)),
        np.repeat(unseen, per_class),
    )
    tables = []
    for tag in ("A", "B"):
        vectors = {c: rng.normal(size=sem_dim) for c in seen + unseen}
        if twin_unseen:
            vectors[unseen[1]] = vectors[unseen[0]].copy()
        tables.append(SemanticTable(tag, vectors))
    return make_dataset(train, test, tables, set(seen), set(unseen))


def build_model(ds, direction=S_TO_V, seed=3):
    cfg = NetConfig(modality_dims=ds.modality_dims(), head_hidden=5, head_out=4,
                    embed_dim=ds.visual.dim, direction=direction)
    return init_model(cfg, seed=seed)


# ---------------------------------------------------------------------------
# prototypes


def test_prototypes_sorted_by_class_id():
    ds = build_dataset()
    model = build_model(ds)
    a = embed_class_prototypes(model, ds.semantics, [8, 3, 5], ("A", "B"))
    b = embed_class_prototypes(model, ds.semantics, [3, 5, 8], ("A", "B"))
    assert a.shape == (3, ds.visual.dim)
    assert a.tobytes() == b.tobytes()


def test_prototypes_validation():
    ds = build_dataset()
    model = build_model(ds)
    with pytest.raises(ValueError, match="no classes"):
        embed_class_prototypes(model, ds.semantics, [], ("A",))
    with pytest.raises(ValueError, match="no semantic table"):
        embed_class_prototypes(model, ds.semantics[:1], [3], ("A", "B"))


# ---------------------------------------------------------------------------
# evaluate


def brute_force(distances, ids, labels):
    """Pure-Python rescoring of a distance matrix."""
    n = len(ids)
    top1 = top5 = 0
    confusion = [[0] * n for _ in range(n)]
    per_class_hits = {}
    for row, label in zip(distances, labels):
        order = sorted(range(n), key=lambda j: (row[j], j))
        true = ids.index(int(label))
        pred = order[0]
        confusion[true][pred] += 1
        hits, total = per_class_hits.get(true, (0, 0))
        per_class_hits[true] = (hits + (pred == true), total + 1)
        top1 += pred == true
        top5 += true in order[: min(5, n)]
    per_class = {ids[i]: h / t for i, (h, t) in per_class_hits.items()}
    return top1 / len(labels), top5 / len(labels), per_class, confusion


def test_evaluate_matches_brute_force():
    ds = build_dataset(n_unseen=7, per_class=5)
    model = build_model(ds)
    metric = MetricKind.ec(0.9)
    result = evaluate(model, ds, metric, ("A", "B"))
    distances, ids = prediction_distances(model, ds, metric, ("A", "B"))
    top1, top5, per_class, confusion = brute_force(
        distances.tolist(), ids, ds.test_visual.labels.tolist()
    )
    assert result.top1 == top1
    assert result.top5 == top5
    assert result.per_class_top1 == per_class
    assert result.confusion.tolist() == confusion
    assert result.class_ids == tuple(ids)
    assert result.confusion.sum() == ds.test_visual.rows


def test_evaluate_prototype_queries_score_perfectly():
    ds = build_dataset()
    model = build_model(ds)
    ids = sorted(ds.unseen)
    proto = embed_class_prototypes(model, ds.semantics, ids, ("A", "B"))
    replayed = make_dataset(
        ds.visual,
        FeatureMatrix(proto, np.array(ids)),
        ds.semantics,
        ds.seen,
        ds.unseen,
    )
    result = evaluate(model, replayed, MetricKind.ec(0.9), ("A", "B"))
    assert result.top1 == 1.0 and result.top5 == 1.0
    assert all(v == 1.0 for v in result.per_class_top1.values())


def test_evaluate_single_unseen_class():
    ds = build_dataset(n_unseen=1)
    result = evaluate(build_model(ds), ds, MetricKind.euclidean(), ("A",))
    assert result.top1 == 1.0 and result.top5 == 1.0
    assert result.confusion.shape == (1, 1)


def test_identical_prototypes_break_ties_toward_lower_class():
    ds = build_dataset(twin_unseen=True)
    model = build_model(ds)
    result = evaluate(model, ds, MetricKind.euclidean(), ("A", "B"))
    lo, hi = sorted(ds.unseen)[:2]
    i_lo = result.class_ids.index(lo)
    i_hi = result.class_ids.index(hi)
    # the twin with the higher id can never win an exact tie
    assert result.confusion[:, i_hi].sum() == 0
    assert result.per_class_top1[hi] == 0.0
    assert i_lo < i_hi


def test_ec_eta_zero_equals_squared_euclidean():
    ds = build_dataset(seed=5)
    model = build_model(ds)
    a = evaluate(model, ds, MetricKind("ec", eta=0.0), ("A", "B"))
    b = evaluate(model, ds, MetricKind.euclidean(), ("A", "B"))
    assert a.top1 == b.top1 and a.top5 == b.top5
    assert a.confusion.tolist() == b.confusion.tolist()


def test_evaluate_row_order_invariance():
    ds = build_dataset(seed=6)
    model = build_model(ds)
    perm = np.random.default_rng(0).permutation(ds.test_visual.rows)
    shuffled = make_dataset(
        ds.visual,
        FeatureMatrix(ds.test_visual.values[perm], ds.test_visual.labels[perm]),
        ds.semantics,
        ds.seen,
        ds.unseen,
    )
    a = evaluate(model, ds, MetricKind.ec(0.9), ("A", "B"))
    b = evaluate(model, shuffled, MetricKind.ec(0.9), ("A", "B"))
    assert a.top1 == b.top1 and a.top5 == b.top5
    assert a.per_class_top1 == b.per_class_top1
    assert a.confusion.tolist() == b.confusion.tolist()


def test_evaluate_direction_guard():
    ds = build_dataset()
    model = build_model(ds)
    with pytest.raises(ValueError, match="direction"):
        evaluate(model, ds, MetricKind.ec(0.9), ("A",), direction=V_TO_S)
    result = evaluate(model, ds, MetricKind.ec(0.9), ("A",), direction=S_TO_V)
    assert 0.0 <= result.top1 <= result.top5 <= 1.0


def test_evaluate_visual_to_semantic_direction():
    ds = build_dataset()
    model = build_model(ds, direction=V_TO_S)
    result = evaluate(model, ds, MetricKind.ec(0.9), ("A", "B"))
    assert 0.0 <= result.top1 <= result.top5 <= 1.0


def test_evaluate_no_test_samples():
    ds = build_dataset()
    empty = make_dataset(
        ds.visual,
        FeatureMatrix(np.zeros((0, ds.test_visual.dim)), np.zeros(0, dtype=int)),
        ds.semantics,
        ds.seen,
        ds.unseen,
    )
    with pytest.raises(ValueError, match="no test samples"):
        evaluate(build_model(ds), empty, MetricKind.ec(0.9), ("A",))


def test_prediction_distances_dim_guard():
    ds = build_dataset()
    cfg = NetConfig(modality_dims=ds.modality_dims(), head_hidden=5, head_out=4,
                    embed_dim=ds.visual.dim + 1)
    model = init_model(cfg, seed=0)
    with pytest.raises(ValueError, match="embed_dim"):
        prediction_distances(model, ds, MetricKind.ec(0.9), ("A",))


# ---------------------------------------------------------------------------
# hubness


def test_hubness_single_hub():
    dist = np.ones((100, 10))
    dist[:, 0] = 0.0
    # counts are [100, 0 x 9]: m3/m2^1.5 = 72000/27000
    assert abs(hubness_skewness(dist, k=1) - 8.0 / 3.0) < 1e-12


def test_hubness_uniform_counts():
    dist = np.ones((10, 10))
    dist[np.arange(10), np.arange(10)] = 0.0
    assert hubness_skewness(dist, k=1) == 0.0


def test_hubness_matches_python_recount():
    rng = np.random.default_rng(12)
    dist = rng.normal(size=(20, 5))
    counts = [0] * 5
    for row in dist.tolist():
        for j in sorted(range(5), key=lambda j: (row[j], j))[:2]:
            counts[j] += 1
    mean = sum(counts) / 5
    m2 = sum((c - mean) ** 2 for c in counts) / 5
    m3 = sum((c - mean) ** 3 for c in counts) / 5
    assert hubness_skewness(dist, k=2) == pytest.approx(m3 / m2**1.5, rel=1e-12)


def test_hubness_column_permutation_invariant():
    rng = np.random.default_rng(13)
    dist = rng.normal(size=(30, 8))
    perm = rng.permutation(8)
    assert hubness_skewness(dist, k=3) == hubness_skewness(dist[:, perm], k=3)


def test_hubness_validation():
    with pytest.raises(ValueError, match="2-D"):
        hubness_skewness(np.zeros(5), k=1)
    with pytest.raises(ValueError, match="at least 2"):
        hubness_skewness(np.zeros((5, 1)), k=1)
    with pytest.raises(ValueError, match="k must be"):
        hubness_skewness(np.zeros((5, 3)), k=0)
    with pytest.raises(ValueError, match="k must be"):
        hubness_skewness(np.zeros((5, 3)), k=4)


# ---------------------------------------------------------------------------
# ablation grid


def quick_train_config(seed=0):
    return TrainConfig(lr=1e-3, batch_size=8, epochs=2, seed=seed)


def test_cell_seed_distinct_and_stable():
    seeds = {
        cell_seed(0, subset, d)
        for subset in all_subsets(("A", "B", "C"))
        for d in (S_TO_V, V_TO_S)
    }
    assert len(seeds) == 14
    assert cell_seed(0, ("B", "A"), S_TO_V) == cell_seed(0, ("A", "B"), S_TO_V)
    assert cell_seed(0, ("A",), S_TO_V) != cell_seed(1, ("A",), S_TO_V)


def test_all_subsets():
    assert all_subsets(("B", "A")) == [("A",), ("B",), ("A", "B")]
    assert len(all_subsets("WCIT")) == 15
    sizes = [len(s) for s in all_subsets("WCIT")]
    assert sizes == sorted(sizes)


def test_ablate_single_cell():
    ds = build_dataset()
    net = NetConfig(modality_dims=ds.modality_dims(), head_hidden=5, head_out=4,
                    embed_dim=ds.visual.dim)
    cells = ablate(ds, net, quick_train_config(), subsets=[("A",)])
    assert len(cells) == 1
    cell = cells[0]
    assert cell.modalities == ("A",)
    assert cell.direction == S_TO_V
    assert cell.metric == MetricKind.ec()
    assert 0.0 <= cell.result.top1 <= 1.0


def test_ablate_grid_order_and_determinism():
    ds = build_dataset()
    net = NetConfig(modality_dims=ds.modality_dims(), head_hidden=5, head_out=4,
                    embed_dim=ds.visual.dim)
    subsets = all_subsets(("A", "B"))
    metrics = (MetricKind.ec(0.9), MetricKind.euclidean())
    run = lambda: ablate(ds, net, quick_train_config(), subsets,
                         directions=(S_TO_V, V_TO_S), metrics=metrics)
    cells = run()
    assert len(cells) == 3 * 2 * 2
    assert [c.modalities for c in cells[:4]] == [("A",)] * 4
    assert [c.direction for c in cells[:4]] == [S_TO_V, S_TO_V, V_TO_S, V_TO_S]
    assert [c.metric for c in cells[:2]] == list(metrics)
    again = run()
    assert [c.result.top1 for c in cells] == [c.result.top1 for c in again]
    assert [c.result.top5 for c in cells] == [c.result.top5 for c in again]


def test_ablate_jobs_parity():
    ds = build_dataset()
    net = NetConfig(modality_dims=ds.modality_dims(), head_hidden=5, head_out=4,
                    embed_dim=ds.visual.dim)
    subsets = [("A",), ("B",), ("A", "B")]
    serial = ablate(ds, net, quick_train_config(), subsets, jobs=1)
    parallel = ablate(ds, net, quick_train_config(), subsets, jobs=2)
    for a, b in zip(serial, parallel):
        assert (a.modalities, a.direction, a.metric) == (b.modalities, b.direction, b.metric)
        assert a.result.top1 == b.result.top1
        assert a.result.confusion.tolist() == b.result.confusion.tolist()


def test_ablate_validation():
    ds = build_dataset()
    net = NetConfig(modality_dims=ds.modality_dims(), head_hidden=5, head_out=4,
                    embed_dim=ds.visual.dim)
    with pytest.raises(ValueError, match="no modality subsets"):
        ablate(ds, net, quick_train_config(), subsets=[])
    with pytest.raises(ValueError, match="direction"):
        ablate(ds, net, quick_train_config(), [("A",)], directions=("sideways",))
    with pytest.raises(ValueError, match="no metrics"):
        ablate(ds, net, quick_train_config(), [("A",)], metrics=())
    with pytest.raises(ValueError, match="jobs"):
        ablate(ds, net, quick_train_config(), [("A",)], jobs=0)


# ---------------------------------------------------------------------------
# reports


def fake_cell(modalities, direction, metric, top1, top5):
    result = EvalResult(
        top1=top1,
        top5=top5,
        per_class_top1={},
        confusion=np.zeros((1, 1), dtype=np.int64),
        class_ids=(0,),
    )
    return AblationCell(tuple(modalities), direction, metric, result)


def test_emit_report_csv(tmp_path):
    cells = [
        fake_cell(("W",), S_TO_V, MetricKind.euclidean(), 0.25, 0.5),
        fake_cell(("C", "W"), S_TO_V, MetricKind.ec(0.9), 0.521, 0.857),
    ]
    p = tmp_path / "r.csv"
    emit_report(cells, "csv", p)
    assert p.read_text() == (
        REPORT_HEADER + "\n"
        "C+W,s2v,ec:0.9,0.521,0.857\n"
        "W,s2v,euclidean,0.25,0.5\n"
    )
    rows = read_report_csv(p)
    assert rows[0]["modalities"] == ("C", "W")
    assert rows[0]["metric"] == MetricKind.ec(0.9)
    assert rows[0]["top1"] == 0.521
    assert rows[1]["direction"] == S_TO_V


def test_emit_report_markdown(tmp_path):
    cells = [
        fake_cell(("C", "W"), S_TO_V, MetricKind.ec(0.9), 0.521, 0.857),
        fake_cell(("C", "W"), V_TO_S, MetricKind.ec(0.9), 0.1, 0.3),
    ]
    p = tmp_path / "r.md"
    emit_report(cells, "markdown", p)
    text = p.read_text()
    assert "| C+W | 52.1/85.7 | 10.0/30.0 |" in text
    assert text.splitlines()[0] == "| modalities | s2v ec:0.9 | v2s ec:0.9 |"


def test_emit_report_markdown_missing_cell_dash(tmp_path):
    cells = [
        fake_cell(("W",), S_TO_V, MetricKind.ec(0.9), 0.5, 0.5),
        fake_cell(("C",), V_TO_S, MetricKind.ec(0.9), 0.5, 0.5),
    ]
    p = tmp_path / "r.md"
    emit_report(cells, "markdown", p)
    lines = p.read_text().splitlines()
    assert "| C | - | 50.0/50.0 |" in lines
    assert "| W | 50.0/50.0 | - |" in lines


def test_emit_report_errors(tmp_path):
    with pytest.raises(ValueError, match="no cells"):
        emit_report([], "csv", tmp_path / "r.csv")
    cell = fake_cell(("W",), S_TO_V, MetricKind.ec(0.9), 0.5, 0.5)
    with pytest.raises(ValueError, match="unknown report format"):
        emit_report([cell], "yaml", tmp_path / "r.yaml")


def test_read_report_rejects_bad_header(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("something,else\n")
    with pytest.raises(ValueError, match="malformed report header"):
        read_report_csv(p)


def test_report_deterministic_bytes(tmp_path):
    ds = build_dataset()
    net = NetConfig(modality_dims=ds.modality_dims(), head_hidden=5, head_out=4,
                    embed_dim=ds.visual.dim)
    cells = ablate(ds, net, quick_train_config(), [("A",), ("A", "B")])
    emit_report(cells, "csv", tmp_path / "a.csv")
    emit_report(list(reversed(cells)), "csv", tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

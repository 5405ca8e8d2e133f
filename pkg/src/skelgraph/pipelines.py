"""The two experiments end to end: grid patch and volume classification, part-pair contact segmentation."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import features, synth
from .convert import mesh_to_graph
from .nn.model import ModelConfig
from .nn.training import aggregate_volume, evaluate, predict, summarize, train
from .representations import AttributedGraph, VoxelGrid, binarize
from .skeleton import sn_graph
from .tabular import fit_forest, predict_forest

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# grid images -> skeleton graphs -> healthy / unhealthy


@dataclass(frozen=True)
class SkeletonConfig:
    threshold: float = 0.5
    max_nodes: int = 300
    r_min: float = 1.0
    tau: float = 0.7
    radius_scale: float = 3.5
    theta_tol: float = 15.0
    connect_components: bool = False


@dataclass(frozen=True)
class GridTaskConfig:
    skeleton: SkeletonConfig = field(default_factory=SkeletonConfig)
    n_train: int = 200
    n_test: int = 100
    n_volumes: int = 10
    volume_depth: int = 5
    data_seed: int = 11
    model_seed: int = 0
    epochs: int = 30
    lr: float = 1e-3
    hidden_dim: int = 32
    num_trees: int = 50
    max_depth: int = 6


def grid_graph(image: VoxelGrid, cfg: SkeletonConfig, label: Optional[int] = None) -> AttributedGraph:
    sk = sn_graph(binarize(image, cfg.threshold), image, max_nodes=cfg.max_nodes, r_min=cfg.r_min,
                  tau=cfg.tau, radius_scale=cfg.radius_scale, connect_components=cfg.connect_components)
    g = features.edge_features(sk, cfg.theta_tol)
    if label is not None:
        g = g.replace(graph_label=float(label))
    return g


def volume_graphs(volume: VoxelGrid, cfg: SkeletonConfig) -> list[AttributedGraph]:
    vals = volume.values
    return [grid_graph(VoxelGrid(vals[:, :, z : z + 1]), cfg) for z in range(vals.shape[2])]


def grid_model_config(hidden_dim: int = 32) -> ModelConfig:
    return ModelConfig(
        task="graph_classification",
        vertex_feature_dim=len(features.VERTEX_COLUMNS),
        edge_feature_dim=len(features.EDGE_COLUMNS),
        num_attention_layers=4,
        hidden_dim=hidden_dim,
    )


def make_grid_volumes(n: int, depth: int, seed: int) -> list[tuple[VoxelGrid, int, synth.GridParams]]:
    """``n`` volumes, classes alternating, each slice rendered from the volume's own parameters."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        p = synth.draw_grid_params(rng, int(rng.integers(0, 2**20)))
        label = int(synth.health_score(p.jitter, p.rupture) > 5)
        if label != len(out) % 2:
            continue
        out.append((synth.gen_grid_volume(p, depth), label, p))
    return out


def run_grid_task(cfg: GridTaskConfig = GridTaskConfig()) -> dict:
    """GAT and forest on skeleton graphs of synthetic grid patches, plus volume aggregation."""
    t0 = time.perf_counter()
    sk = cfg.skeleton
    train_data = synth.gen_grid_dataset(cfg.n_train, cfg.data_seed)
    test_data = synth.gen_grid_dataset(cfg.n_test, cfg.data_seed + 1000)
    g_train = [grid_graph(s.image, sk, s.label) for s in train_data]
    g_test = [grid_graph(s.image, sk, s.label) for s in test_data]
    volumes = make_grid_volumes(cfg.n_volumes, cfg.volume_depth, cfg.data_seed + 2000)
    g_vol = [volume_graphs(v, sk) for v, _, _ in volumes]
    t_graphs = time.perf_counter()

    counts = np.array([[g.num_vertices, g.num_edges] for g in g_train + g_test], dtype=np.float64)

    # forest on raw descriptors
    t_forest = time.perf_counter()
    d_train = np.array([features.global_descriptor(g, sk.theta_tol).as_vector() for g in g_train])
    d_test = np.array([features.global_descriptor(g, sk.theta_tol).as_vector() for g in g_test])
    y_train = np.array([s.label for s in train_data])
    y_test = np.array([s.label for s in test_data])
    forest = fit_forest(d_train, y_train, cfg.num_trees, cfg.max_depth, cfg.model_seed)
    forest_metrics = summarize(predict_forest(forest, d_test), y_test)
    t_forest = time.perf_counter() - t_forest

    # GAT on standardized graphs
    s_train, s_rest, stats = features.standardize_features(g_train, g_test + [g for vol in g_vol for g in vol])
    s_test = s_rest[: len(g_test)]
    s_vol, k = [], len(g_test)
    for vol in g_vol:
        s_vol.append(s_rest[k : k + len(vol)])
        k += len(vol)
    mc = grid_model_config(cfg.hidden_dim)
    res = train(mc, s_train, s_test, epochs=cfg.epochs, seed=cfg.model_seed, lr=cfg.lr)
    gat_metrics = evaluate(res.params, mc, s_test)
    vol_rows = []
    for (vol, label, p), graphs in zip(volumes, s_vol):
        probs = [float(x[0]) for x in predict(res.params, mc, graphs)]
        mean, hat = aggregate_volume(probs)
        vol_rows.append({"label": label, "mean_prob": mean, "pred": hat, "slice_probs": probs,
                         "jitter": p.jitter, "rupture": p.rupture,
                         "score": synth.health_score(p.jitter, p.rupture)})
    vol_acc = float(np.mean([r["pred"] == r["label"] for r in vol_rows]))
    return {
        "config": asdict(cfg),
        "graph_stats": {
            "max_vertices": int(counts[:, 0].max()),
            "mean_vertices": float(counts[:, 0].mean()),
            "mean_edges": float(counts[:, 1].mean()),
            "edge_vertex_ratio": float(counts[:, 1].mean() / counts[:, 0].mean()),
        },
        "forest": forest_metrics,
        "gat": gat_metrics,
        "volume_accuracy": vol_acc,
        "volumes": vol_rows,
        "train_log": res.log,
        "initial_loss": res.initial,
        "feature_stats": stats.to_dict(),
        "seconds": {"graphs": t_graphs - t0, "forest": t_forest, "total": time.perf_counter() - t0},
        "_params": res.params,
    }


# ---------------------------------------------------------------------------
# part pairs -> merged graph -> contact vertices

INTRINSIC_VERTEX = ("degree", "kind")
INTRINSIC_EDGE = ("length", "cross")


@dataclass(frozen=True)
class ContactTaskConfig:
    n_train: int = 100
    n_val: int = 20
    n_test: int = 20
    data_seed: int = 7
    model_seed: int = 0
    max_gap: float = 0.1
    density: int = 4
    proximity: float = 0.25
    tip_scale: float = 0.1
    epochs: int = 20
    lr: float = 1e-3
    hidden_dim: int = 32


def pair_graph(sample: synth.PartSample, proximity: float, tip_scale: float) -> AttributedGraph:
    """Both parts' 1-skeletons, cross edges under ``proximity`` and one normal tip per vertex."""
    ga = mesh_to_graph(sample.mesh_a).replace(vertex_labels=sample.labels_a.astype(np.float64))
    gb = mesh_to_graph(sample.mesh_b).replace(vertex_labels=sample.labels_b.astype(np.float64))
    merged = features.add_proximity_edges(ga, gb, proximity)
    both = synth.TriangleMesh(
        np.concatenate([sample.mesh_a.positions, sample.mesh_b.positions]),
        np.concatenate([sample.mesh_a.triangles, sample.mesh_b.triangles + sample.mesh_a.num_vertices]),
    )
    g = features.add_normal_tips(merged, both, tip_scale)
    return features.vertex_features(g)


def intrinsic_columns():
    return (
        [features.VERTEX_COLUMNS.index(c) for c in INTRINSIC_VERTEX],
        [features.EDGE_COLUMNS.index(c) for c in INTRINSIC_EDGE],
    )


def contact_model_config(hidden_dim: int = 32) -> ModelConfig:
    return ModelConfig(
        task="vertex_segmentation",
        vertex_feature_dim=len(INTRINSIC_VERTEX),
        edge_feature_dim=len(INTRINSIC_EDGE),
        num_attention_layers=3,
        hidden_dim=hidden_dim,
    )


def run_contact_task(cfg: ContactTaskConfig = ContactTaskConfig()) -> dict:
    """Vertex segmentation of contact areas with a GAT on intrinsic features."""
    t0 = time.perf_counter()
    data = synth.gen_part_dataset(cfg.n_train + cfg.n_val + cfg.n_test, cfg.data_seed, cfg.max_gap, cfg.density)
    graphs = [pair_graph(s, cfg.proximity, cfg.tip_scale) for s in data]
    t_graphs = time.perf_counter()
    tr = graphs[: cfg.n_train]
    va = graphs[cfg.n_train : cfg.n_train + cfg.n_val]
    te = graphs[cfg.n_train + cfg.n_val :]
    s_tr, s_rest, stats = features.standardize_features(tr, va + te)
    s_va, s_te = s_rest[: len(va)], s_rest[len(va) :]
    vcols, ecols = intrinsic_columns()
    mc = contact_model_config(cfg.hidden_dim)
    res = train(mc, s_tr, s_va, epochs=cfg.epochs, seed=cfg.model_seed, lr=cfg.lr,
                vertex_columns=vcols, edge_columns=ecols)
    metrics = evaluate(res.params, mc, s_te, vertex_columns=vcols, edge_columns=ecols)
    separated = sum(
        1 for row in metrics["per_graph"]
        if row["mean_pred_pos"] is not None and row["mean_pred_neg"] is not None
        and row["mean_pred_pos"] > row["mean_pred_neg"]
    )
    first = res.initial
    last = res.log[-1] if res.log else first
    fractions = [float(np.mean(np.r_[s.labels_a, s.labels_b])) for s in data]
    return {
        "config": asdict(cfg),
        "metrics": metrics,
        "pairs_separated": separated,
        "n_test": len(te),
        "train_loss_drop": 1.0 - last["train_loss"] / first["train_loss"],
        "val_loss_drop": 1.0 - last["val_loss"] / first["val_loss"],
        "initial_loss": first,
        "train_log": res.log,
        "pos_weight": res.pos_weight,
        "contact_fraction": {"min": min(fractions), "max": max(fractions), "mean": float(np.mean(fractions))},
        "mean_vertices": float(np.mean([g.num_vertices for g in graphs])),
        "feature_stats": stats.to_dict(),
        "seconds": {"graphs": t_graphs - t0, "total": time.perf_counter() - t0},
        "_params": res.params,
    }

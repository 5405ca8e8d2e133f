"""Training loop, evaluation, volume aggregation and checkpoints."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..features import FeatureStats
from ..representations import AttributedGraph, FormatError
from .model import GraphInput, ModelConfig, _forward, bce_loss, check_params, graph_input, init_params, loss_and_grads
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass
class Example:
    inp: GraphInput
    target: np.ndarray
    mask: Optional[np.ndarray]  # vertex task: which vertices carry a label


def make_example(g: AttributedGraph, config: ModelConfig, vertex_columns=None, edge_columns=None) -> Example:
    inp = graph_input(g, config, vertex_columns, edge_columns)
    if config.task == "graph_classification":
        if g.graph_label is None:
            raise ValueError("graph has no graph_label")
        return Example(inp, np.array([float(g.graph_label)]), None)
    if g.vertex_labels is None:
        raise ValueError("graph has no vertex_labels")
    mask = np.array([k == "regular" for k in g.vertex_kind], dtype=bool)
    return Example(inp, np.asarray(g.vertex_labels, dtype=np.float64), mask)


def _examples(data, config, vertex_columns, edge_columns) -> list[Example]:
    return [d if isinstance(d, Example) else make_example(d, config, vertex_columns, edge_columns) for d in data]


def default_pos_weight(examples: Sequence[Example], config: ModelConfig) -> float:
    if config.task == "graph_classification":
        return 1.0
    y = np.concatenate([ex.target[ex.mask] for ex in examples])
    pos = int((y > 0.5).sum())
    neg = len(y) - pos
    if pos == 0 or neg == 0:
        return 1.0
    return neg / pos


def mean_loss(params, config, examples: Sequence[Example], pos_weight: float) -> float:
    if not examples:
        return float("nan")
    losses = [bce_loss(_forward(params, config, ex.inp)[0], ex.target, pos_weight, ex.mask) for ex in examples]
    return float(np.mean(losses))


@dataclass
class TrainResult:
    params: dict
    log: list = field(default_factory=list)  # one {"epoch", "train_loss", "val_loss"} per epoch
    initial: dict = field(default_factory=dict)  # losses of the untrained model
    pos_weight: float = 1.0


def train(
    config: ModelConfig,
    train_set,
    val_set=(),
    epochs: int = 30,
    seed: int = 0,
    lr: float = 1e-3,
    pos_weight: Optional[float] = None,
    vertex_columns=None,
    edge_columns=None,
    initial_params: Optional[dict] = None,
) -> TrainResult:
    """Per-graph Adam updates over a seeded shuffle each epoch.

    Losses in the log are re-evaluated on the whole set after each epoch, so
    ``initial`` and every log row are measured the same way.
    """
    tr = _examples(train_set, config, vertex_columns, edge_columns)
    if not tr:
        raise ValueError("empty training set")
    va = _examples(val_set, config, vertex_columns, edge_columns)
    rng = np.random.default_rng(seed)
    params = init_params(config, rng) if initial_params is None else dict(initial_params)
    if epochs <= 0:
        return TrainResult(params, [], {}, 1.0)
    w = default_pos_weight(tr, config) if pos_weight is None else float(pos_weight)
    initial = {"train_loss": mean_loss(params, config, tr, w), "val_loss": mean_loss(params, config, va, w)}
    state = AdamState(lr=lr)
    rows = []
    for epoch in range(1, epochs + 1):
        for k in rng.permutation(len(tr)):
            ex = tr[k]
            _, grads = loss_and_grads(params, config, ex.inp, ex.target, w, ex.mask)
            params, state = adam_step(params, grads, state)
        row = {"epoch": epoch, "train_loss": mean_loss(params, config, tr, w), "val_loss": mean_loss(params, config, va, w)}
        log.info("epoch %d train %.5f val %.5f", epoch, row["train_loss"], row["val_loss"])
        rows.append(row)
    return TrainResult(params, rows, initial, w)


def predict(params, config: ModelConfig, data, vertex_columns=None, edge_columns=None) -> list[np.ndarray]:
    """Probabilities per graph; labels are not needed."""
    out = []
    for d in data:
        inp = d.inp if isinstance(d, Example) else graph_input(d, config, vertex_columns, edge_columns)
        out.append(_forward(params, config, inp)[0])
    return out


def evaluate(params, config: ModelConfig, dataset, threshold: float = 0.5, vertex_columns=None, edge_columns=None) -> dict:
    """Accuracy, 2x2 confusion counts ``[[tn, fp], [fn, tp]]`` and class-conditional mean predictions.

    For vertex segmentation every labelled (regular) vertex of every graph
    counts as one sample; ``per_graph`` then holds each graph's class means.
    """
    examples = _examples(dataset, config, vertex_columns, edge_columns)
    preds, targets, per_graph = [], [], []
    for ex in examples:
        p = _forward(params, config, ex.inp)[0]
        y = ex.target
        if ex.mask is not None:
            p, y = p[ex.mask], y[ex.mask]
        preds.append(p)
        targets.append(y)
        if config.task == "vertex_segmentation":
            pos, neg = p[y > 0.5], p[y <= 0.5]
            per_graph.append({
                "mean_pred_pos": float(pos.mean()) if len(pos) else None,
                "mean_pred_neg": float(neg.mean()) if len(neg) else None,
            })
    p = np.concatenate(preds) if preds else np.zeros(0)
    y = np.concatenate(targets) if targets else np.zeros(0)
    return summarize(p, y, threshold) | ({"per_graph": per_graph} if per_graph else {})


def summarize(pred, target, threshold: float = 0.5) -> dict:
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target) > 0.5
    hat = pred > threshold
    cm = [[int((~y & ~hat).sum()), int((~y & hat).sum())], [int((y & ~hat).sum()), int((y & hat).sum())]]
    n = len(pred)
    return {
        "accuracy": float((hat == y).mean()) if n else float("nan"),
        "confusion_matrix": cm,
        "mean_pred_pos": float(pred[y].mean()) if y.any() else None,
        "mean_pred_neg": float(pred[~y].mean()) if (~y).any() else None,
        "n": n,
    }


def aggregate_volume(patch_preds, rule: str = "mean") -> tuple[float, int]:
    """Mean patch probability and its label (strictly above 0.5 is positive)."""
    if rule != "mean":
        raise ValueError(f"unknown aggregation rule {rule!r}")
    p = np.asarray(patch_preds, dtype=np.float64).ravel()
    if p.size == 0:
        raise ValueError("no patch predictions")
    m = float(p.mean())
    return m, int(m > 0.5)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: dict, config: ModelConfig, stats: Optional[FeatureStats], path) -> None:
    check_params(params, config)
    doc = {
        "config": config.to_dict(),
        "feature_stats": stats.to_dict() if stats is not None else None,
        # float repr is the shortest string that round-trips exactly (<= 17 digits)
        "tensors": {k: {"shape": list(v.shape), "data": [float(x) for x in np.ravel(v)]} for k, v in params.items()},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[dict, ModelConfig, Optional[FeatureStats]]:
    try:
        doc = json.loads(Path(path).read_text())
        config = ModelConfig.from_dict(doc["config"])
        tensors = doc["tensors"]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad checkpoint: {exc}") from exc
    params = {}
    for name, t in tensors.items():
        data = np.asarray(t["data"], dtype=np.float64)
        shape = tuple(t["shape"])
        if data.size != int(np.prod(shape)):
            raise FormatError(f"{name}: {data.size} values for shape {shape}")
        params[name] = data.reshape(shape)
    try:
        check_params(params, config)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    fs = doc.get("feature_stats")
    return params, config, FeatureStats.from_dict(fs) if fs else None

"""Graph attention network with hand-written reverse-mode gradients.

Parameters live in a flat ``{name: ndarray}`` map. Per attention layer ``l``:

* ``gat{l}.W``      (heads, head_dim, d_in)
* ``gat{l}.a_src``  (heads, head_dim)   score term for the receiving vertex
* ``gat{l}.a_dst``  (heads, head_dim)   score term for the sending neighbour
* ``gat{l}.U``      (heads, head_dim, d_edge)   only with edge features
* ``gat{l}.a_edge`` (heads, head_dim)           only with edge features

followed by ``fc1.weight/bias`` (hidden -> hidden, ReLU) and ``fc2.weight/bias``
(hidden -> 1, sigmoid). Self-loops are added at forward time with zero edge
features.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.special import expit

from ..representations import AttributedGraph

TASKS = ("graph_classification", "vertex_segmentation")
CLAMP = 1e-7


@dataclass(frozen=True)
class ModelConfig:
    task: str = "graph_classification"
    vertex_feature_dim: int = 4
    edge_feature_dim: int = 0
    num_attention_layers: Optional[int] = None  # 4 for graphs, 3 for vertices
    hidden_dim: int = 32
    num_heads: int = 1
    fc_layers: int = 2
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.num_attention_layers is None:
            layers = 4 if self.task == "graph_classification" else 3
            object.__setattr__(self, "num_attention_layers", layers)
        if self.fc_layers != 2:
            raise ValueError("fc_layers is fixed at 2")
        for name in ("vertex_feature_dim", "num_attention_layers", "hidden_dim", "num_heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.edge_feature_dim < 0:
            raise ValueError("edge_feature_dim must be >= 0")
        if self.hidden_dim % self.num_heads:
            raise ValueError("hidden_dim must be divisible by num_heads")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    H, dh = config.num_heads, config.head_dim
    shapes: dict[str, tuple[int, ...]] = {}
    d_in = config.vertex_feature_dim
    for layer in range(config.num_attention_layers):
        p = f"gat{layer}."
        shapes[p + "W"] = (H, dh, d_in)
        shapes[p + "a_src"] = (H, dh)
        shapes[p + "a_dst"] = (H, dh)
        if config.edge_feature_dim:
            shapes[p + "U"] = (H, dh, config.edge_feature_dim)
            shapes[p + "a_edge"] = (H, dh)
        d_in = config.hidden_dim
    shapes["fc1.weight"] = (config.hidden_dim, config.hidden_dim)
    shapes["fc1.bias"] = (config.hidden_dim,)
    shapes["fc2.weight"] = (1, config.hidden_dim)
    shapes["fc2.bias"] = (1,)
    return shapes


def _fans(name: str, shape) -> tuple[int, int]:
    if name.endswith((".W", ".U")):
        return shape[2], shape[1]
    if name.endswith(("a_src", "a_dst", "a_edge")):
        return shape[1], 1
    return shape[1], shape[0]


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, in a fixed name order."""
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith("bias"):
            params[name] = np.zeros(shape)
        else:
            fan_in, fan_out = _fans(name, shape)
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-limit, limit, size=shape)
    return params


def check_params(params: dict, config: ModelConfig) -> None:
    shapes = param_shapes(config)
    missing = sorted(set(shapes) - set(params))
    if missing:
        raise ValueError(f"missing tensors: {missing}")
    extra = sorted(set(params) - set(shapes))
    if extra:
        raise ValueError(f"unexpected tensors: {extra}")
    for name, shape in shapes.items():
        if tuple(np.shape(params[name])) != shape:
            raise ValueError(f"{name}: shape {np.shape(params[name])} != {shape}")


# ---------------------------------------------------------------------------
# graph preprocessing


class GraphInput:
    """Directed neighbourhood structure of one graph, sorted by receiving vertex."""

    def __init__(self, x: np.ndarray, edges: np.ndarray, edge_feats: Optional[np.ndarray]):
        n = len(x)
        self.n = n
        self.x = np.asarray(x, dtype=np.float64)
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        loops = np.arange(n)
        recv = np.concatenate([e[:, 0], e[:, 1], loops])
        send = np.concatenate([e[:, 1], e[:, 0], loops])
        if edge_feats is not None:
            ef = np.asarray(edge_feats, dtype=np.float64)
            f = np.concatenate([ef, ef, np.zeros((n, ef.shape[1]))])
        else:
            f = None
        order = np.lexsort((send, recv))
        self.recv, self.send = recv[order], send[order]
        self.f = None if f is None else f[order]
        self.starts = np.searchsorted(self.recv, np.arange(n))
        nnz = len(self.recv)
        # sparse scatter from directed pairs to their sending vertex
        self.send_mat = csr_matrix((np.ones(nnz), (self.send, np.arange(nnz))), shape=(n, nnz))


def graph_input(g: AttributedGraph, config: ModelConfig,
                vertex_columns=None, edge_columns=None) -> GraphInput:
    vf = g.vertex_features
    if vf is None:
        raise ValueError("graph has no vertex features")
    x = vf if vertex_columns is None else vf[:, list(vertex_columns)]
    if x.shape[1] != config.vertex_feature_dim:
        raise ValueError(f"vertex features have width {x.shape[1]}, config expects {config.vertex_feature_dim}")
    f = None
    if config.edge_feature_dim:
        ef = g.edge_features
        if ef is None:
            raise ValueError("config expects edge features")
        f = ef if edge_columns is None else ef[:, list(edge_columns)]
        if f.shape[1] != config.edge_feature_dim:
            raise ValueError(f"edge features have width {f.shape[1]}, config expects {config.edge_feature_dim}")
    return GraphInput(x, g.edges, f)


def _seg_sum(a: np.ndarray, starts: np.ndarray) -> np.ndarray:
    return np.add.reduceat(a, starts, axis=0)


# ---------------------------------------------------------------------------
# forward / backward


def _gat_forward(params, prefix, h, inp: GraphInput, slope):
    W, a_s, a_d = params[prefix + "W"], params[prefix + "a_src"], params[prefix + "a_dst"]
    z = np.einsum("hod,nd->nho", W, h)
    s = np.einsum("nho,ho->nh", z, a_s)[inp.recv] + np.einsum("nho,ho->nh", z, a_d)[inp.send]
    q = None
    if prefix + "U" in params:
        q = np.einsum("hod,ho->hd", params[prefix + "U"], params[prefix + "a_edge"])
        s = s + inp.f @ q.T
    e = np.where(s > 0, s, slope * s)
    m = np.maximum.reduceat(e, inp.starts, axis=0)
    ex = np.exp(e - m[inp.recv])
    alpha = ex / _seg_sum(ex, inp.starts)[inp.recv]
    agg = _seg_sum(alpha[:, :, None] * z[inp.send], inp.starts)
    out = np.where(agg > 0, agg, np.expm1(np.minimum(agg, 0)))
    cache = (h, z, s, alpha, agg, q)
    return out.reshape(inp.n, -1), cache


def _gat_backward(params, prefix, dout, cache, inp: GraphInput, slope, grads):
    h, z, s, alpha, agg, q = cache
    n, H, dh = z.shape
    W, a_s, a_d = params[prefix + "W"], params[prefix + "a_src"], params[prefix + "a_dst"]
    dagg = dout.reshape(n, H, dh) * np.where(agg > 0, 1.0, np.exp(np.minimum(agg, 0)))
    dagg_r = dagg[inp.recv]
    dalpha = np.einsum("eho,eho->eh", dagg_r, z[inp.send])
    dz = (inp.send_mat @ (alpha[:, :, None] * dagg_r).reshape(len(alpha), -1)).reshape(n, H, dh)
    # softmax within each receiver's neighbourhood
    de = alpha * (dalpha - _seg_sum(alpha * dalpha, inp.starts)[inp.recv])
    ds = de * np.where(s > 0, 1.0, slope)
    ds_src = _seg_sum(ds, inp.starts)
    ds_dst = inp.send_mat @ ds
    grads[prefix + "a_src"] = np.einsum("nh,nho->ho", ds_src, z)
    grads[prefix + "a_dst"] = np.einsum("nh,nho->ho", ds_dst, z)
    dz += ds_src[:, :, None] * a_s[None] + ds_dst[:, :, None] * a_d[None]
    if q is not None:
        dq = ds.T @ inp.f  # (H, d_edge)
        grads[prefix + "U"] = np.einsum("hd,ho->hod", dq, params[prefix + "a_edge"])
        grads[prefix + "a_edge"] = np.einsum("hod,hd->ho", params[prefix + "U"], dq)
    grads[prefix + "W"] = np.einsum("nho,nd->hod", dz, h)
    return np.einsum("nho,hod->nd", dz, W)


def _forward(params, config: ModelConfig, inp: GraphInput):
    h = inp.x
    caches = []
    for layer in range(config.num_attention_layers):
        h, c = _gat_forward(params, f"gat{layer}.", h, inp, config.leaky_slope)
        caches.append(c)
    pooled = config.task == "graph_classification"
    r = h.mean(axis=0, keepdims=True) if pooled else h
    a1 = r @ params["fc1.weight"].T + params["fc1.bias"]
    r1 = np.maximum(a1, 0.0)
    logit = (r1 @ params["fc2.weight"].T + params["fc2.bias"])[:, 0]
    return expit(logit), (caches, h, r, a1, r1, logit)


def forward(params, config: ModelConfig, graph) -> np.ndarray:
    """Probabilities: shape (1,) for graph classification, (n,) for vertex segmentation."""
    inp = graph if isinstance(graph, GraphInput) else graph_input(graph, config)
    if inp.n == 0:
        raise ValueError("cannot run the model on an empty graph")
    return _forward(params, config, inp)[0]


def bce_loss(pred, target, pos_weight: float = 1.0, mask=None) -> float:
    """Mean weighted binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    p = np.clip(np.asarray(pred, dtype=np.float64), CLAMP, 1.0 - CLAMP)
    y = np.asarray(target, dtype=np.float64)
    terms = -(pos_weight * y * np.log(p) + (1.0 - y) * np.log1p(-p))
    if mask is not None:
        terms = terms[np.asarray(mask, dtype=bool)]
    return float(terms.mean()) if terms.size else 0.0


def _dloss_dlogit(pred, target, pos_weight, mask):
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    w = np.ones_like(p) if mask is None else np.asarray(mask, dtype=np.float64)
    count = w.sum()
    if count == 0:
        return np.zeros_like(p)
    # dL/dp * dp/dlogit with dp/dlogit = p(1-p); zero where the clamp is active
    g = (-pos_weight * y * (1.0 - p) + (1.0 - y) * p) * w / count
    inside = (p > CLAMP) & (p < 1.0 - CLAMP)
    return np.where(inside, g, 0.0)


def loss_and_grads(params, config: ModelConfig, inp: GraphInput, target, pos_weight=1.0, mask=None):
    pred, (caches, h, r, a1, r1, logit) = _forward(params, config, inp)
    loss = bce_loss(pred, target, pos_weight, mask)
    dlogit = _dloss_dlogit(pred, target, pos_weight, mask)
    grads: dict[str, np.ndarray] = {}
    grads["fc2.weight"] = dlogit[None, :] @ r1
    grads["fc2.bias"] = np.array([dlogit.sum()])
    dr1 = dlogit[:, None] * params["fc2.weight"]
    da1 = dr1 * (a1 > 0)
    grads["fc1.weight"] = da1.T @ r
    grads["fc1.bias"] = da1.sum(axis=0)
    dr = da1 @ params["fc1.weight"]
    if config.task == "graph_classification":
        dh = np.repeat(dr / inp.n, inp.n, axis=0)
    else:
        dh = dr
    for layer in reversed(range(config.num_attention_layers)):
        dh = _gat_backward(params, f"gat{layer}.", dh, caches[layer], inp, config.leaky_slope, grads)
    return loss, {k: grads[k] for k in params}


def backward(params, config: ModelConfig, graph, target, pos_weight: float = 1.0, mask=None):
    """Exact gradients of ``bce_loss(forward(...))`` for every parameter tensor."""
    inp = graph if isinstance(graph, GraphInput) else graph_input(graph, config)
    return loss_and_grads(params, config, inp, target, pos_weight, mask)[1]


def _random_instance(config: ModelConfig, rng: np.random.Generator, n: int = 6):
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    pick = rng.random(len(pairs)) < 0.45
    edges = np.array([p for p, k in zip(pairs, pick) if k], dtype=np.int64).reshape(-1, 2)
    x = rng.normal(size=(n, config.vertex_feature_dim))
    f = rng.normal(size=(len(edges), config.edge_feature_dim)) if config.edge_feature_dim else None
    inp = GraphInput(x, edges, f)
    m = 1 if config.task == "graph_classification" else n
    target = (rng.random(m) < 0.5).astype(np.float64)
    return inp, target


def grad_check(config: ModelConfig, seed: int = 0, pos_weight: float = 1.5) -> float:
    """Max relative error between analytic and central-difference gradients on a random instance."""
    rng = np.random.default_rng(seed)
    params = init_params(config, rng)
    for k in params:
        # non-zero biases exercise every path
        params[k] = params[k] + 0.1 * rng.normal(size=params[k].shape)
    inp, target = _random_instance(config, rng)
    _, analytic = loss_and_grads(params, config, inp, target, pos_weight)
    worst = 0.0
    for name, arr in params.items():
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            step = 1e-5 * max(1.0, abs(orig))
            arr[idx] = orig + step
            up = bce_loss(_forward(params, config, inp)[0], target, pos_weight)
            arr[idx] = orig - step
            down = bce_loss(_forward(params, config, inp)[0], target, pos_weight)
            arr[idx] = orig
            numeric = (up - down) / (2 * step)
            a = analytic[name][idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst

"""Semi-supervised GCN and GraphSAGE with hand-written backward passes.

Both variants stack ``layers`` hidden propagation layers (ReLU) and one
final propagation layer producing class logits (identity).  Training is
full batch: softmax cross-entropy over train-tagged nodes plus an L2
penalty on all parameters.  Node embeddings are the activations entering
the logit layer, computed with dropout disabled (and, for GraphSAGE, full
neighbourhood means) so extraction is deterministic.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graphstore import MediaGraph, node_ordering, normalized_adjacency
from .util import derive_seed

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class GnnConfig:
    variant: str = "gcn"  # "gcn" | "sage"
    layers: int = 4
    hidden_dim: int = 128
    epochs: int = 1000
    learning_rate: float = 0.01
    weight_decay: float = 0.0005
    dropout: float = 0.5
    sage_sample_sizes: tuple[int, ...] | None = None  # default: 10 per layer
    weighted_adjacency: bool = True
    optimizer: str = "adam"  # "sgd" gives plain multiplicative decay semantics
    seed: int = 0

    def validate(self) -> None:
        if self.variant not in ("gcn", "sage"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.sage_sample_sizes is not None and len(self.sage_sample_sizes) not in (
            self.layers,
            self.layers + 1,
        ):
            raise ValueError("sage_sample_sizes needs one entry per layer")

    def sample_sizes(self) -> tuple[int, ...]:
        """One sample size per propagation layer (hidden layers + the logit
        layer); a per-hidden-layer list reuses its last entry for the logit
        layer."""
        if self.sage_sample_sizes is None:
            return tuple([10] * (self.layers + 1))
        sizes = list(self.sage_sample_sizes)
        if len(sizes) == self.layers:
            sizes.append(sizes[-1])
        return tuple(sizes)


@dataclass
class LabelMask:
    """Per-node class indices (-1 for unlabeled) and train/test tagging.

    Only train-tagged nodes contribute to the loss; test tags exist for
    held-out evaluation and everything else is unlabeled context.
    """

    y: np.ndarray
    is_train: np.ndarray
    is_test: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.int64)
        self.is_train = np.asarray(self.is_train, dtype=bool)
        self.is_test = np.asarray(self.is_test, dtype=bool)
        if not (len(self.y) == len(self.is_train) == len(self.is_test)):
            raise ValueError("mask arrays must share one length")
        if np.any(self.is_train & self.is_test):
            raise ValueError("a node cannot be tagged both train and test")
        if np.any(self.y[self.is_train] < 0) or np.any(self.y[self.is_test] < 0):
            raise ValueError("train/test-tagged nodes must carry a class index")


@dataclass
class GnnModel:
    variant: str
    params: dict[str, np.ndarray]
    layers: int
    n_classes: int
    loss_history: list[float] = field(default_factory=list)

    def param_names(self) -> list[str]:
        return sorted(self.params)

    def copy(self) -> "GnnModel":
        return GnnModel(
            self.variant,
            {k: v.copy() for k, v in self.params.items()},
            self.layers,
            self.n_classes,
            list(self.loss_history),
        )


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def gcn_layer_forward(a_hat, h: np.ndarray, w: np.ndarray, b: np.ndarray, activation: str = "relu") -> np.ndarray:
    """One graph-convolution layer: act(a_hat @ h @ w + b)."""
    h = np.asarray(h, dtype=float)
    if h.shape[1] != w.shape[0]:
        raise ValueError(f"feature dim {h.shape[1]} does not match weight rows {w.shape[0]}")
    if w.shape[1] != b.shape[0]:
        raise ValueError("bias length must match weight columns")
    return _act(activation, a_hat @ h @ w + b)


def _padded_neighbors(graph: MediaGraph) -> tuple[np.ndarray, np.ndarray]:
    """(n, max_deg) neighbour-index array padded with -1, plus degrees."""
    domains = graph.domains()
    index = {d: i for i, d in enumerate(domains)}
    adj = graph.adjacency()
    deg = np.array([len(adj[d]) for d in domains], dtype=np.int64)
    max_deg = int(deg.max()) if len(deg) else 0
    pad = np.full((len(domains), max(max_deg, 1)), -1, dtype=np.int64)
    for d in domains:
        i = index[d]
        nbrs = sorted(index[u] for u in adj[d])
        pad[i, : len(nbrs)] = nbrs
    return pad, deg


def _sample_aggregation_matrix(
    pad: np.ndarray, deg: np.ndarray, sample_size: int, rng: np.random.Generator | None
) -> sp.csr_matrix:
    """Row-stochastic matrix S with S[v, u] = 1/|S_v| over sampled neighbours.

    ``rng=None`` (or a sample size covering every degree) selects the full
    neighbourhood.  Sampling is without replacement; isolated nodes get an
    all-zero row, realizing the zero-neighbour-mean rule.
    """
    n, max_deg = pad.shape
    take = deg if rng is None else np.minimum(deg, sample_size)
    if rng is None:
        chosen = pad
        mask = np.arange(max_deg)[None, :] < deg[:, None]
    else:
        keys = rng.random((n, max_deg))
        keys[np.arange(max_deg)[None, :] >= deg[:, None]] = np.inf
        order = np.argsort(keys, axis=1, kind="stable")
        chosen = np.take_along_axis(pad, order, axis=1)
        mask = np.arange(max_deg)[None, :] < take[:, None]
    rows = np.repeat(np.arange(n), mask.sum(axis=1))
    cols = chosen[mask]
    counts = np.where(take > 0, take, 1).astype(float)
    vals = 1.0 / counts[rows]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def sage_layer_forward(
    graph: MediaGraph,
    h: np.ndarray,
    w_self: np.ndarray,
    w_neigh: np.ndarray,
    b: np.ndarray,
    sample_size: int,
    activation: str = "relu",
    seed: int = 0,
) -> np.ndarray:
    """One GraphSAGE layer: act(h @ w_self + mean_sampled_neighbours(h) @ w_neigh + b)."""
    if sample_size < 1:
        raise ValueError("sample_size must be >= 1")
    pad, deg = _padded_neighbors(graph)
    rng = None if sample_size >= pad.shape[1] else np.random.default_rng(seed)
    s_mat = _sample_aggregation_matrix(pad, deg, sample_size, rng)
    h = np.asarray(h, dtype=float)
    return _act(activation, h @ w_self + (s_mat @ h) @ w_neigh + b)


# --- parameter plumbing -----------------------------------------------------


def _layer_dims(n_features: int, hidden: int, layers: int, n_classes: int) -> list[tuple[int, int]]:
    dims = []
    d_in = n_features
    for _ in range(layers):
        dims.append((d_in, hidden))
        d_in = hidden
    dims.append((d_in, n_classes))
    return dims


def init_model(config: GnnConfig, n_features: int, n_classes: int) -> GnnModel:
    """Glorot-uniform weights, zero biases."""
    config.validate()
    rng = np.random.default_rng(derive_seed(config.seed, "gnn.init"))
    params: dict[str, np.ndarray] = {}
    for l, (d_in, d_out) in enumerate(_layer_dims(n_features, config.hidden_dim, config.layers, n_classes)):
        names = ["W"] if config.variant == "gcn" else ["Wself", "Wneigh"]
        for name in names:
            limit = np.sqrt(6.0 / (d_in + d_out))
            params[f"{name}{l}"] = rng.uniform(-limit, limit, size=(d_in, d_out))
        params[f"b{l}"] = np.zeros(d_out)
    return GnnModel(config.variant, params, config.layers, n_classes)


def _forward(
    model: GnnModel,
    x: np.ndarray,
    props: list,
    dropout_masks: list[np.ndarray] | None,
    keep: float,
) -> tuple[np.ndarray, list[dict]]:
    """All propagation layers; returns logits and per-layer caches.

    Overflow is left to produce inf/nan (warnings silenced); the training
    loop detects a non-finite loss and aborts with a diagnostic.
    """
    caches = []
    h = x
    n_prop = model.layers + 1
    with np.errstate(over="ignore", invalid="ignore"):
        for l in range(n_prop):
            activation = "identity" if l == model.layers else "relu"
            if dropout_masks is not None:
                h_in = h * dropout_masks[l] / keep
            else:
                h_in = h
            cache: dict = {"h_in": h_in}
            if model.variant == "gcn":
                p = props[l] @ h_in
                z = p @ model.params[f"W{l}"] + model.params[f"b{l}"]
                cache["p"] = p
            else:
                m = props[l] @ h_in
                z = (
                    h_in @ model.params[f"Wself{l}"]
                    + m @ model.params[f"Wneigh{l}"]
                    + model.params[f"b{l}"]
                )
                cache["m"] = m
            cache["z"] = z
            h = _act(activation, z)
            caches.append(cache)
    return h, caches


def _loss_and_grads(
    model: GnnModel,
    x: np.ndarray,
    props: list,
    mask: LabelMask,
    weight_decay: float,
    dropout_masks: list[np.ndarray] | None,
    keep: float,
) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    logits, caches = _forward(model, x, props, dropout_masks, keep)
    train_idx = np.nonzero(mask.is_train)[0]
    with np.errstate(invalid="ignore", over="ignore"):
        z = logits[train_idx]
        z = z - z.max(axis=1, keepdims=True)
        expz = np.exp(z)
        softmax = expz / expz.sum(axis=1, keepdims=True)
    labels = mask.y[train_idx]
    n_train = len(train_idx)
    data_loss = -float(np.mean(np.log(softmax[np.arange(n_train), labels] + 1e-300)))
    reg_loss = 0.5 * weight_decay * sum(float((p * p).sum()) for p in model.params.values())

    d_logits = np.zeros_like(logits)
    grad_rows = softmax.copy()
    grad_rows[np.arange(n_train), labels] -= 1.0
    d_logits[train_idx] = grad_rows / n_train

    grads = {name: weight_decay * p for name, p in model.params.items()}
    dh = d_logits
    for l in range(model.layers, -1, -1):
        cache = caches[l]
        dz = dh if l == model.layers else dh * (cache["z"] > 0)
        grads[f"b{l}"] += dz.sum(axis=0)
        if model.variant == "gcn":
            grads[f"W{l}"] += cache["p"].T @ dz
            dp = dz @ model.params[f"W{l}"].T
            dh_in = props[l].T @ dp
        else:
            grads[f"Wself{l}"] += cache["h_in"].T @ dz
            grads[f"Wneigh{l}"] += cache["m"].T @ dz
            dh_in = dz @ model.params[f"Wself{l}"].T + props[l].T @ (dz @ model.params[f"Wneigh{l}"].T)
        if dropout_masks is not None:
            dh = dh_in * dropout_masks[l] / keep
        else:
            dh = dh_in
    return data_loss + reg_loss, grads, logits


def _build_props(
    model_variant: str,
    graph: MediaGraph,
    n_prop: int,
    weighted: bool,
    sample_sizes: tuple[int, ...] | None,
    rng: np.random.Generator | None,
) -> list:
    """Per-layer propagation operators: the shared normalized adjacency for
    GCN, or per-layer (sampled) mean-aggregation matrices for GraphSAGE."""
    if model_variant == "gcn":
        a_hat = normalized_adjacency(graph, node_ordering(graph), weighted=weighted)
        return [a_hat] * n_prop
    pad, deg = _padded_neighbors(graph)
    props = []
    for l in range(n_prop):
        if rng is None or sample_sizes is None:
            props.append(_sample_aggregation_matrix(pad, deg, int(deg.max()) if len(deg) else 1, None))
        else:
            props.append(_sample_aggregation_matrix(pad, deg, sample_sizes[l], rng))
    return props


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float):
        self.lr = lr
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, p in params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * (g * g)
            m_hat = self.m[k] / (1 - b1**self.t)
            v_hat = self.v[k] / (1 - b2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class _Sgd:
    def __init__(self, params: dict[str, np.ndarray], lr: float):
        self.lr = lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k, p in params.items():
            p -= self.lr * grads[k]


def train_semi_supervised(
    graph: MediaGraph,
    features: np.ndarray,
    label_mask: LabelMask,
    config: GnnConfig,
    n_classes: int | None = None,
) -> tuple[GnnModel, np.ndarray]:
    """Full-batch training; returns the model and n x hidden_dim embeddings.

    ``features`` rows follow the graph's canonical (sorted-domain) order.
    Training aborts with :class:`TrainingDivergedError` if the loss goes
    non-finite.
    """
    config.validate()
    features = np.asarray(features, dtype=float)
    n = len(graph.nodes)
    if features.shape[0] != n or len(label_mask.y) != n:
        raise ValueError("features and label mask must align with the graph's node set")
    train_labels = label_mask.y[label_mask.is_train]
    if len(train_labels) == 0:
        raise ValueError("no train-tagged nodes")
    if n_classes is None:
        n_classes = int(label_mask.y.max()) + 1
    present = np.unique(train_labels)
    if len(present) < 1 or np.any(present >= n_classes):
        raise ValueError("train labels exceed the declared class count")

    model = init_model(config, features.shape[1], n_classes)
    optimizer = (_Adam if config.optimizer == "adam" else _Sgd)(model.params, config.learning_rate)
    n_prop = config.layers + 1
    keep = 1.0 - config.dropout

    fixed_props = (
        _build_props("gcn", graph, n_prop, config.weighted_adjacency, None, None)
        if config.variant == "gcn"
        else None
    )
    for epoch in range(config.epochs):
        rng = np.random.default_rng(derive_seed(config.seed, f"gnn.epoch.{epoch}"))
        if config.variant == "gcn":
            props = fixed_props
        else:
            props = _build_props("sage", graph, n_prop, True, config.sample_sizes(), rng)
        if config.dropout > 0:
            shapes = [features.shape[1]] + [config.hidden_dim] * config.layers
            masks = [(rng.random((n, d)) >= config.dropout).astype(float) for d in shapes]
        else:
            masks = None
        loss, grads, _ = _loss_and_grads(
            model, features, props, label_mask, config.weight_decay, masks, keep
        )
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"{config.variant} loss became non-finite at epoch {epoch} "
                f"(lr={config.learning_rate}, weight_decay={config.weight_decay})"
            )
        model.loss_history.append(loss)
        optimizer.step(model.params, grads)

    embeddings = extract_embeddings(model, graph, features, config)
    return model, embeddings


def extract_embeddings(
    model: GnnModel, graph: MediaGraph, features: np.ndarray, config: GnnConfig
) -> np.ndarray:
    """Dropout-disabled forward; the activations entering the logit layer."""
    props = _build_props(
        model.variant, graph, model.layers + 1, config.weighted_adjacency, None, None
    )
    h = np.asarray(features, dtype=float)
    for l in range(model.layers):
        if model.variant == "gcn":
            h = _act("relu", (props[l] @ h) @ model.params[f"W{l}"] + model.params[f"b{l}"])
        else:
            m = props[l] @ h
            h = _act(
                "relu",
                h @ model.params[f"Wself{l}"] + m @ model.params[f"Wneigh{l}"] + model.params[f"b{l}"],
            )
    return h


def predict_logits(
    model: GnnModel, graph: MediaGraph, features: np.ndarray, config: GnnConfig
) -> np.ndarray:
    props = _build_props(
        model.variant, graph, model.layers + 1, config.weighted_adjacency, None, None
    )
    logits, _ = _forward(model, np.asarray(features, dtype=float), props, None, 1.0)
    return logits


def grad_check(
    model: GnnModel,
    graph: MediaGraph,
    features: np.ndarray,
    label_mask: LabelMask,
    epsilon: float = 1e-6,
    weight_decay: float = 0.0005,
    weighted: bool = True,
    sample_sizes: tuple[int, ...] | None = None,
    sample_seed: int = 0,
) -> float:
    """Max relative error of analytic vs central-difference gradients.

    Every parameter entry is perturbed by +-epsilon; the relative error of a
    parameter tensor is ||g_analytic - g_numeric|| / (||g_analytic|| +
    ||g_numeric||), and the max over tensors is returned.  The propagation
    structure (including any GraphSAGE neighbour sample) is drawn once from
    ``sample_seed`` and held fixed for both sides, dropout disabled, double
    precision throughout.
    """
    features = np.asarray(features, dtype=float)
    n_prop = model.layers + 1
    rng = np.random.default_rng(sample_seed) if (model.variant == "sage" and sample_sizes) else None
    props = _build_props(model.variant, graph, n_prop, weighted, sample_sizes, rng)

    def loss_only() -> float:
        loss, _, _ = _loss_and_grads(model, features, props, label_mask, weight_decay, None, 1.0)
        return loss

    _, analytic, _ = _loss_and_grads(model, features, props, label_mask, weight_decay, None, 1.0)
    worst = 0.0
    for name in model.param_names():
        p = model.params[name]
        flat = p.reshape(-1)
        numeric = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = loss_only()
            flat[i] = orig - epsilon
            lo = loss_only()
            flat[i] = orig
            numeric[i] = (hi - lo) / (2 * epsilon)
        ga = analytic[name].reshape(-1)
        denom = max(np.linalg.norm(ga) + np.linalg.norm(numeric), 1e-12)
        worst = max(worst, float(np.linalg.norm(ga - numeric) / denom))
    return worst


def save_model_json(model: GnnModel, path: str | Path) -> None:
    payload = {
        "variant": model.variant,
        "layers": model.layers,
        "n_classes": model.n_classes,
        "params": {
            name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
            for name, arr in sorted(model.params.items())
        },
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_model_json(path: str | Path) -> GnnModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    params = {
        name: np.array(spec["data"], dtype=float).reshape(spec["shape"])
        for name, spec in payload["params"].items()
    }
    return GnnModel(payload["variant"], params, payload["layers"], payload["n_classes"])

"""Label-only query interface over heterogeneous classifiers.

Three targets hide behind the same handle: an in-repo softmax MLP, an
in-repo random forest (deliberately non-differentiable), and an external
process speaking the line-delimited JSON protocol. Searches and evaluation
only ever see labels, so nothing downstream can depend on gradients.

FGSM lives here too as the white-box baseline; it requires the MLP target.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import checkpoint, nn
from .errors import (DimensionError, DivergenceError, EmptyClassError,
                     UnsupportedTargetError)


@dataclass
class ClassifierHandle:
    kind: str                  # mlp | forest | external
    input_dim: int
    num_classes: int
    _predict: Callable[[np.ndarray], np.ndarray]
    model: object | None = None
    queries: int = 0
    _close: Callable[[], None] | None = None
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def close(self) -> None:
        if self._close is not None:
            self._close()

    def __enter__(self) -> "ClassifierHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def query(handle: ClassifierHandle, batch: np.ndarray) -> np.ndarray:
    """Labels for a batch of instances; bumps the handle's query counter."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != handle.input_dim:
        raise DimensionError(
            f"batch shape {batch.shape} does not match classifier input dim "
            f"{handle.input_dim}"
        )
    labels = handle._predict(batch)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (batch.shape[0],):
        raise DimensionError(
            f"classifier returned {labels.shape} labels for "
            f"{batch.shape[0]} instances"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= handle.num_classes):
        raise DimensionError(
            f"classifier returned labels outside [0, {handle.num_classes})"
        )
    with handle._lock:
        handle.queries += batch.shape[0]
    return labels


# ---------------------------------------------------------------- MLP


@dataclass
class MlpClassifier:
    net: nn.DenseNet     # input_dim -> num_classes logits
    num_classes: int


@dataclass
class MlpTrainConfig:
    hidden: tuple[int, ...] = (64,)
    steps: int = 3000
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    holdout_fraction: float = 0.0
    seed: int = 0


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _check_labels(y: np.ndarray, num_classes: int) -> None:
    if y.min() < 0 or y.max() >= num_classes:
        raise DimensionError(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{y.min()}, {y.max()}]"
        )
    counts = np.bincount(y, minlength=num_classes)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise EmptyClassError(
            f"classes {missing.tolist()} have no training samples"
        )


def mlp_handle(model: MlpClassifier) -> ClassifierHandle:
    def predict(batch: np.ndarray) -> np.ndarray:
        return nn.forward(model.net, batch).output.argmax(axis=1)

    return ClassifierHandle("mlp", model.net.input_dim, model.num_classes,
                            predict, model=model)


def train_mlp_classifier(x: np.ndarray, y: np.ndarray, cfg: MlpTrainConfig,
                         num_classes: int | None = None
                         ) -> tuple[ClassifierHandle, float | None]:
    """Softmax cross-entropy training; returns (handle, held-out accuracy
    or None when holdout_fraction is 0)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise DimensionError(
            f"got x shape {x.shape} with y shape {y.shape}"
        )
    k = int(num_classes if num_classes is not None else y.max() + 1)
    _check_labels(y, k)
    rng = np.random.default_rng(cfg.seed)

    holdout_x = holdout_y = None
    if cfg.holdout_fraction > 0.0:
        perm = rng.permutation(x.shape[0])
        n_hold = max(1, int(round(cfg.holdout_fraction * x.shape[0])))
        hold, keep = perm[:n_hold], perm[n_hold:]
        holdout_x, holdout_y = x[hold], y[hold]
        x, y = x[keep], y[keep]
        _check_labels(y, k)

    net = nn.init_net([x.shape[1], *cfg.hidden, k],
                      hidden_activation="relu", output_activation="identity",
                      rng=rng)
    opt = nn.AdamState.for_net(net, lr=cfg.lr, beta1=cfg.beta1,
                               beta2=cfg.beta2)
    n = x.shape[0]
    b = min(cfg.batch_size, n)
    for step in range(cfg.steps):
        idx = rng.choice(n, size=b, replace=False)
        trace = nn.forward(net, x[idx])
        probs = _softmax(trace.output)
        loss = -float(np.log(np.maximum(
            probs[np.arange(b), y[idx]], 1e-300)).mean())
        if not np.isfinite(loss):
            raise DivergenceError(
                f"classifier loss became non-finite at step {step}"
            )
        d_logits = probs.copy()
        d_logits[np.arange(b), y[idx]] -= 1.0
        grads, _ = nn.backward(net, trace, d_logits / b)
        nn.adam_step(net, grads, opt)

    model = MlpClassifier(net, k)
    handle = mlp_handle(model)
    accuracy = None
    if holdout_x is not None:
        accuracy = float((query(handle, holdout_x) == holdout_y).mean())
        handle.queries = 0
    return handle, accuracy


def fgsm(handle: ClassifierHandle, x: np.ndarray, epsilon: float) -> np.ndarray:
    """One signed gradient step of size epsilon away from the model's own
    label, clipped to [-1, 1]; zero-gradient coordinates stay put."""
    if handle.kind != "mlp":
        raise UnsupportedTargetError(
            f"fgsm needs the gradient of the target; {handle.kind!r} "
            f"classifiers expose labels only"
        )
    if epsilon < 0:
        raise DimensionError(f"epsilon must be >= 0, got {epsilon}")
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    batch = x[None, :] if squeeze else x
    model: MlpClassifier = handle.model  # type: ignore[assignment]
    trace = nn.forward(model.net, batch)
    probs = _softmax(trace.output)
    labels = trace.output.argmax(axis=1)
    d_logits = probs.copy()
    d_logits[np.arange(batch.shape[0]), labels] -= 1.0
    # d(cross-entropy at the predicted label)/d(input); ascending it
    # maximizes the cost, per the baseline's definition.
    _, g = nn.backward(model.net, trace, d_logits)
    adv = np.clip(batch + epsilon * np.sign(g), -1.0, 1.0)
    return adv[0] if squeeze else adv


# ---------------------------------------------------------------- forest


@dataclass
class DecisionTree:
    """Axis-aligned tree in flat arrays: node i splits on feature[i] at
    threshold[i] (left: value <= threshold), or is a leaf when
    feature[i] == -1. hist[i] holds per-class training-sample counts."""

    feature: np.ndarray    # [nodes] int64, -1 for leaves
    threshold: np.ndarray  # [nodes] float64
    left: np.ndarray       # [nodes] int64
    right: np.ndarray      # [nodes] int64
    hist: np.ndarray       # [nodes, num_classes] float64 counts

    def predict(self, batch: np.ndarray) -> np.ndarray:
        node = np.zeros(batch.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            go_left = (batch[rows, self.feature[cur]]
                       <= self.threshold[cur])
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] >= 0
        return self.hist[node].argmax(axis=1)


@dataclass
class TreeEnsemble:
    trees: list[DecisionTree]
    num_classes: int
    input_dim: int

    @property
    def num_trees(self) -> int:
        return len(self.trees)

    def predict(self, batch: np.ndarray) -> np.ndarray:
        votes = np.zeros((batch.shape[0], self.num_classes), dtype=np.int64)
        for tree in self.trees:
            votes[np.arange(batch.shape[0]), tree.predict(batch)] += 1
        # argmax breaks vote ties toward the lowest class index
        return votes.argmax(axis=1)


def _gini_best_split(x: np.ndarray, y: np.ndarray, features: np.ndarray,
                     num_classes: int) -> tuple[int, float] | None:
    """Best (feature, threshold) by weighted Gini impurity, or None when no
    split separates the rows."""
    n = y.shape[0]
    best = None
    best_score = np.inf
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), y] = 1.0
    for f in features:
        order = np.argsort(x[:, f], kind="stable")
        vals = x[order, f]
        cum = np.cumsum(onehot[order], axis=0)
        total = cum[-1]
        # candidate boundaries sit between strictly increasing values
        cut = np.flatnonzero(vals[1:] > vals[:-1])
        if cut.size == 0:
            continue
        n_left = (cut + 1).astype(np.float64)
        n_right = n - n_left
        left_counts = cum[cut]
        right_counts = total - left_counts
        gini_left = 1.0 - (left_counts ** 2).sum(axis=1) / n_left ** 2
        gini_right = 1.0 - (right_counts ** 2).sum(axis=1) / n_right ** 2
        score = (n_left * gini_left + n_right * gini_right) / n
        j = int(score.argmin())
        if score[j] < best_score - 1e-12:
            best_score = score[j]
            thr = 0.5 * (vals[cut[j]] + vals[cut[j] + 1])
            best = (int(f), float(thr))
    return best


def _grow_tree(x: np.ndarray, y: np.ndarray, num_classes: int,
               max_depth: int, feature_subsample: int,
               rng: np.random.Generator) -> DecisionTree:
    feature, threshold, left, right, hist = [], [], [], [], []

    def build(rows: np.ndarray, depth: int) -> int:
        idx = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts = np.bincount(y[rows], minlength=num_classes).astype(np.float64)
        hist.append(counts)
        if depth >= max_depth or rows.shape[0] < 2 \
                or np.count_nonzero(counts) < 2:
            return idx
        feats = rng.choice(x.shape[1], size=feature_subsample, replace=False)
        split = _gini_best_split(x[rows], y[rows], feats, num_classes)
        if split is None:
            return idx
        f, thr = split
        mask = x[rows, f] <= thr
        feature[idx] = f
        threshold[idx] = thr
        left[idx] = build(rows[mask], depth + 1)
        right[idx] = build(rows[~mask], depth + 1)
        return idx

    build(np.arange(x.shape[0]), 0)
    return DecisionTree(np.array(feature, dtype=np.int64),
                        np.array(threshold, dtype=np.float64),
                        np.array(left, dtype=np.int64),
                        np.array(right, dtype=np.int64),
                        np.stack(hist))


def forest_handle(model: TreeEnsemble) -> ClassifierHandle:
    return ClassifierHandle("forest", model.input_dim, model.num_classes,
                            model.predict, model=model)


def train_forest(x: np.ndarray, y: np.ndarray, num_trees: int = 5,
                 max_depth: int = 8, feature_subsample: int | None = None,
                 seed: int = 0,
                 num_classes: int | None = None) -> ClassifierHandle:
    """Bootstrap-sampled trees with Gini splits; prediction is a majority
    vote with ties broken toward the lowest class index."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise DimensionError(f"got x shape {x.shape} with y shape {y.shape}")
    if x.shape[0] < 2:
        raise DimensionError(f"need at least 2 rows, got {x.shape[0]}")
    if num_trees < 1:
        raise DimensionError(f"num_trees must be >= 1, got {num_trees}")
    k = int(num_classes if num_classes is not None else y.max() + 1)
    if y.min() < 0 or y.max() >= k:
        raise DimensionError(
            f"labels must lie in [0, {k}), got range [{y.min()}, {y.max()}]"
        )
    m = x.shape[1]
    if feature_subsample is None:
        feature_subsample = max(1, int(round(np.sqrt(m))))
    feature_subsample = min(feature_subsample, m)
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(num_trees):
        rows = rng.integers(0, x.shape[0], size=x.shape[0])
        trees.append(_grow_tree(x[rows], y[rows], k, max_depth,
                                feature_subsample, rng))
    return forest_handle(TreeEnsemble(trees, k, m))


def accuracy(handle: ClassifierHandle, x: np.ndarray, y: np.ndarray) -> float:
    y = np.asarray(y, dtype=np.int64)
    return float((query(handle, x) == y).mean())


# ------------------------------------------------------------- external


def spawn_external(command: str, input_dim: int, num_classes: int,
                   timeout: float = 30.0) -> ClassifierHandle:
    """Launch an external classifier process and wrap its wire protocol in
    a handle; the handshake verifies it serves (input_dim, num_classes)."""
    from .external import ExternalClassifier

    proc = ExternalClassifier(command, input_dim, num_classes,
                              timeout=timeout)
    return ClassifierHandle("external", input_dim, num_classes,
                            proc.classify, model=None, _close=proc.close)


# ----------------------------------------------------------- checkpoints


def _encode_mlp(model: MlpClassifier):
    meta = {"kind": "mlp", "num_classes": model.num_classes,
            "acts": [l.activation for l in model.net.layers]}
    arrays = []
    for i, layer in enumerate(model.net.layers):
        arrays.append((f"net.w{i}", layer.weight))
        arrays.append((f"net.b{i}", layer.bias))
    return meta, arrays


def _decode_mlp(meta, arrays) -> MlpClassifier:
    layers = [nn.Layer(arrays[f"net.w{i}"], arrays[f"net.b{i}"], act)
              for i, act in enumerate(meta["acts"])]
    return MlpClassifier(nn.DenseNet(layers), meta["num_classes"])


def _encode_forest(model: TreeEnsemble):
    meta = {"kind": "forest", "num_classes": model.num_classes,
            "num_trees": model.num_trees, "input_dim": model.input_dim}
    arrays = []
    for t, tree in enumerate(model.trees):
        arrays.append((f"t{t}.feature", tree.feature.astype(np.float64)))
        arrays.append((f"t{t}.threshold", tree.threshold))
        arrays.append((f"t{t}.left", tree.left.astype(np.float64)))
        arrays.append((f"t{t}.right", tree.right.astype(np.float64)))
        arrays.append((f"t{t}.hist", tree.hist))
    return meta, arrays


def _decode_forest(meta, arrays) -> TreeEnsemble:
    trees = []
    for t in range(meta["num_trees"]):
        trees.append(DecisionTree(
            np.round(arrays[f"t{t}.feature"]).astype(np.int64),
            arrays[f"t{t}.threshold"],
            np.round(arrays[f"t{t}.left"]).astype(np.int64),
            np.round(arrays[f"t{t}.right"]).astype(np.int64),
            arrays[f"t{t}.hist"]))
    return TreeEnsemble(trees, meta["num_classes"], meta["input_dim"])


checkpoint.register("mlp", MlpClassifier, _encode_mlp, _decode_mlp)
checkpoint.register("forest", TreeEnsemble, _encode_forest, _decode_forest)


def handle_for(model) -> ClassifierHandle:
    """Wrap a loaded in-repo model in a query handle."""
    if isinstance(model, MlpClassifier):
        return mlp_handle(model)
    if isinstance(model, TreeEnsemble):
        return forest_handle(model)
    raise UnsupportedTargetError(
        f"cannot build a classifier handle around {type(model).__name__}"
    )

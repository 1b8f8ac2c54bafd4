"""Gradient-boosted regression trees with exact greedy splits.

Second-order boosting: each tree is grown depth-wise on the current gradient
and hessian, split gain is the regularized structure score

    gain = 1/2 [ G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda) ] - gamma

and every leaf carries the closed-form weight -G/(H+lambda).  Prediction is
``base_score + eta * sum(tree outputs)``.  Losses: squared error and softmax
multiclass (one tree per class per round).  Splits are enumerated exhaustively
over sorted feature values, so gains are exactly testable against brute force.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GbtParams",
    "GbtModel",
    "Split",
    "grad_hess",
    "best_split",
    "fit_gbt",
    "predict_gbt",
    "objective",
    "save_gbt",
    "load_gbt",
]

SQUARED = "squared-error"
SOFTMAX = "softmax-multiclass"


class GbtError(ValueError):
    pass


@dataclass(frozen=True)
class GbtParams:
    n_rounds: int = 50
    max_depth: int = 3
    learning_rate: float = 0.3
    lam: float = 1.0  # leaf weight L2
    gamma: float = 0.0  # per-leaf split penalty
    min_child_weight: float = 0.0

    def __post_init__(self):
        if self.n_rounds < 1:
            raise GbtError("n_rounds must be >= 1")
        if self.max_depth < 1:
            raise GbtError("max_depth must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise GbtError("learning_rate must be in (0, 1]")
        if self.lam < 0 or self.gamma < 0 or self.min_child_weight < 0:
            raise GbtError("lam, gamma, min_child_weight must be >= 0")


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    gain: float


def grad_hess(loss: str, y: np.ndarray, y_hat: np.ndarray):
    """First and second derivatives of the loss at the current predictions.

    Squared error: g = y_hat - y, h = 1.  Softmax: ``y`` holds integer labels,
    ``y_hat`` the (n, L) logits; g = p - onehot, h = p (1 - p).
    """
    if loss == SQUARED:
        y = np.asarray(y, dtype=np.float64)
        y_hat = np.asarray(y_hat, dtype=np.float64)
        if y.shape != y_hat.shape:
            raise GbtError("y and y_hat length mismatch")
        return y_hat - y, np.ones_like(y)
    if loss == SOFTMAX:
        labels = np.asarray(y, dtype=np.int64)
        scores = np.asarray(y_hat, dtype=np.float64)
        if scores.ndim != 2 or labels.size != scores.shape[0]:
            raise GbtError("softmax expects labels (n,) and logits (n, L)")
        p = _softmax(scores)
        g = p.copy()
        g[np.arange(labels.size), labels] -= 1.0
        h = p * (1.0 - p)
        return g, h
    raise GbtError(f"unknown loss {loss!r}")


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def objective(model: "GbtModel", X, y) -> float:
    """The boosted objective: training loss plus the regularization of every
    tree built so far."""
    pred = predict_gbt(model, X)
    if model.loss == SQUARED:
        total = 0.5 * float(np.sum((np.asarray(y, float) - pred) ** 2))
    else:
        p = _softmax(np.atleast_2d(pred))
        labels = np.asarray(y, dtype=np.int64)
        total = -float(np.sum(np.log(np.maximum(p[np.arange(labels.size), labels], 1e-300))))
    for round_trees in model.trees:
        for tree in round_trees:
            n_leaves, sq = _tree_leaf_stats(tree)
            total += model.params.gamma * n_leaves + 0.5 * model.params.lam * sq
    return total


def _tree_leaf_stats(node):
    if "weight" in node:
        return 1, node["weight"] ** 2
    nl, sl = _tree_leaf_stats(node["left"])
    nr, sr = _tree_leaf_stats(node["right"])
    return nl + nr, sl + sr


def best_split(X, g, h, lam, gamma, min_child_weight=0.0):
    """Exhaustive scan over features and sorted midpoints for the gain-maximal
    split; None when no split has positive gain.  Ties break toward the
    smaller (feature, threshold)."""
    X = np.asarray(X, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    n, n_feat = X.shape
    if n < 2:
        return None
    G, H = g.sum(), h.sum()
    parent = G * G / (H + lam)
    best = None
    for f in range(n_feat):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        gl = np.cumsum(g[order])[:-1]
        hl = np.cumsum(h[order])[:-1]
        valid = xs[:-1] < xs[1:]  # split only between distinct values
        if min_child_weight > 0:
            valid &= (hl >= min_child_weight) & (H - hl >= min_child_weight)
        if not valid.any():
            continue
        gains = 0.5 * (gl**2 / (hl + lam) + (G - gl) ** 2 / (H - hl + lam) - parent) - gamma
        gains[~valid] = -np.inf
        k = int(np.argmax(gains))
        if gains[k] > 0 and (best is None or gains[k] > best.gain):
            best = Split(f, 0.5 * (xs[k] + xs[k + 1]), float(gains[k]))
    return best


def _grow_tree(X, g, h, params: GbtParams, depth: int):
    G, H = g.sum(), h.sum()
    if depth < params.max_depth and X.shape[0] >= 2:
        split = best_split(X, g, h, params.lam, params.gamma, params.min_child_weight)
        if split is not None:
            mask = X[:, split.feature] < split.threshold
            return {
                "feature": split.feature,
                "threshold": split.threshold,
                "left": _grow_tree(X[mask], g[mask], h[mask], params, depth + 1),
                "right": _grow_tree(X[~mask], g[~mask], h[~mask], params, depth + 1),
            }
    return {"weight": float(-G / (H + params.lam))}


def _eval_tree(node, X):
    out = np.empty(X.shape[0])
    stack = [(node, np.arange(X.shape[0]))]
    while stack:
        nd, idx = stack.pop()
        if "weight" in nd:
            out[idx] = nd["weight"]
            continue
        mask = X[idx, nd["feature"]] < nd["threshold"]
        stack.append((nd["left"], idx[mask]))
        stack.append((nd["right"], idx[~mask]))
    return out


@dataclass
class GbtModel:
    loss: str
    params: GbtParams
    n_features: int
    n_outputs: int  # 1 for regression, n_classes for softmax
    base_score: float = 0.0
    trees: list = field(default_factory=list)  # one list of trees per round


def fit_gbt(X, y, loss: str, params: GbtParams) -> GbtModel:
    """Greedy depth-wise boosting; raises on empty or non-finite inputs."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise GbtError("need at least 2 rows")
    if not np.isfinite(X).all():
        raise GbtError("features must be finite")
    if loss == SOFTMAX:
        labels = np.asarray(y, dtype=np.int64)
        n_out = int(labels.max()) + 1 if labels.size else 1
        scores = np.zeros((X.shape[0], n_out))
    elif loss == SQUARED:
        target = np.asarray(y, dtype=np.float64)
        if not np.isfinite(target).all():
            raise GbtError("targets must be finite")
        n_out = 1
        scores = np.zeros(X.shape[0])
    else:
        raise GbtError(f"unknown loss {loss!r}")

    def data_loss(cur):
        if loss == SQUARED:
            return 0.5 * float(np.sum((target - cur) ** 2))
        p = _softmax(cur)
        return -float(np.sum(np.log(np.maximum(p[np.arange(labels.size), labels], 1e-300))))

    model = GbtModel(loss, params, X.shape[1], n_out)
    for _ in range(params.n_rounds):
        before = data_loss(scores)
        if loss == SQUARED:
            g, h = grad_hess(loss, target, scores)
            round_trees = [_grow_tree(X, g, h, params, 0)]
            new_scores = scores + params.learning_rate * _eval_tree(round_trees[0], X)
        else:
            g, h = grad_hess(loss, labels, scores)
            round_trees = []
            new_scores = scores.copy()
            for cls in range(n_out):
                tree = _grow_tree(X, g[:, cls], h[:, cls], params, 0)
                new_scores[:, cls] += params.learning_rate * _eval_tree(tree, X)
                round_trees.append(tree)
        omega = 0.0
        for tree in round_trees:
            n_leaves, sq = _tree_leaf_stats(tree)
            omega += params.gamma * n_leaves + 0.5 * params.lam * sq
        # stop once a round can no longer pay for its own regularization,
        # keeping the boosted objective non-increasing
        if data_loss(new_scores) + omega > before + 1e-12 * max(1.0, abs(before)):
            break
        scores = new_scores
        model.trees.append(round_trees)
    return model


def predict_gbt(model: GbtModel, X) -> np.ndarray:
    """``base_score + eta * sum of tree outputs``; (n, L) scores for softmax."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != model.n_features:
        raise GbtError(f"expected {model.n_features} features, got {X.shape[1]}")
    if model.n_outputs == 1:
        out = np.full(X.shape[0], model.base_score)
        for round_trees in model.trees:
            out += model.params.learning_rate * _eval_tree(round_trees[0], X)
        return out[0] if single else out
    out = np.full((X.shape[0], model.n_outputs), model.base_score)
    for round_trees in model.trees:
        for cls, tree in enumerate(round_trees):
            out[:, cls] += model.params.learning_rate * _eval_tree(tree, X)
    return out[0] if single else out


def predict_proba(model: GbtModel, X) -> np.ndarray:
    if model.loss != SOFTMAX:
        raise GbtError("probabilities only defined for the softmax loss")
    scores = predict_gbt(model, X)
    return _softmax(np.atleast_2d(scores)) if scores.ndim >= 1 else scores


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def model_to_dict(model: GbtModel) -> dict:
    return {
        "loss": model.loss,
        "params": {
            "n_rounds": model.params.n_rounds,
            "max_depth": model.params.max_depth,
            "learning_rate": model.params.learning_rate,
            "lam": model.params.lam,
            "gamma": model.params.gamma,
            "min_child_weight": model.params.min_child_weight,
        },
        "n_features": model.n_features,
        "n_outputs": model.n_outputs,
        "base_score": model.base_score,
        "trees": model.trees,
    }


def model_from_dict(doc: dict) -> GbtModel:
    return GbtModel(
        loss=doc["loss"],
        params=GbtParams(**doc["params"]),
        n_features=int(doc["n_features"]),
        n_outputs=int(doc["n_outputs"]),
        base_score=float(doc["base_score"]),
        trees=doc["trees"],
    )


def save_gbt(model: GbtModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def load_gbt(path) -> GbtModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))

"""Multiclass models over proxy-perplexity feature vectors.

Two self-contained kinds: multinomial softmax regression trained by
full-batch gradient descent (the default), and one-vs-rest gradient-boosted
depth-1 trees. Features are z-scored with training statistics in both.
Models serialize to JSON with floats as decimal strings that round-trip
exactly to 64-bit values.
"""

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np


class LabeledFeature(NamedTuple):
    features: Sequence[float]
    label: int


@dataclass
class TrainConfig:
    kind: str = "softmax_regression"
    epochs: int = 2000
    learning_rate: float = 0.1
    l2: float = 1e-4
    seed: int = 0


@dataclass
class ClassifierModel:
    kind: str
    source_names: list
    mean: np.ndarray
    std: np.ndarray
    parameters: dict
    train_loss: list = field(default_factory=list, repr=False)

    def _standardize(self, features: Sequence[float]) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.shape[-1] != self.mean.shape[0]:
            raise ValueError(
                f"feature length {x.shape[-1]} does not match training dimension {self.mean.shape[0]}"
            )
        return (x - self.mean) / self.std

    def predict_proba(self, features: Sequence[float]) -> list:
        """Probability per source, summing to 1."""
        x = self._standardize(features)
        if self.kind == "softmax_regression":
            z = x @ self.parameters["weights"] + self.parameters["bias"]
            z -= z.max()
            w = np.exp(z)
            probs = w / w.sum()
        elif self.kind == "boosted_stumps":
            scores = _stump_scores(self.parameters, x)
            sig = 1.0 / (1.0 + np.exp(-scores))
            probs = sig / sig.sum()
        else:
            raise ValueError(f"unknown classifier kind {self.kind!r}")
        return [float(p) for p in probs]


def _validate_training_data(data: Sequence, n_classes: int):
    x = np.asarray([list(row[0]) for row in data], dtype=np.float64)
    y = np.asarray([int(row[1]) for row in data], dtype=np.int64)
    if np.isnan(x).any() or np.isinf(x).any():
        raise ValueError("features contain NaN or infinity")
    if len(np.unique(y)) < 2:
        raise ValueError("degenerate labels")
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError("label outside [0, number of sources)")
    return x, y


def train(data: Sequence, config: TrainConfig, source_names: Sequence[str]) -> ClassifierModel:
    """Fit a model on (features, label) pairs. Deterministic given the config."""
    source_names = list(source_names)
    x, y = _validate_training_data(data, len(source_names))
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0.0] = 1.0
    xs = (x - mean) / std

    if config.kind == "softmax_regression":
        parameters, losses = _fit_softmax_regression(xs, y, len(source_names), config)
    elif config.kind == "boosted_stumps":
        parameters, losses = _fit_boosted_stumps(xs, y, len(source_names), config)
    else:
        raise ValueError(f"unknown classifier kind {config.kind!r}")
    return ClassifierModel(
        kind=config.kind,
        source_names=source_names,
        mean=mean,
        std=std,
        parameters=parameters,
        train_loss=losses,
    )


def _fit_softmax_regression(xs, y, n_classes, config):
    n, dim = xs.shape
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    # zero init keeps training exactly symmetric under class/feature permutation
    weights = np.zeros((dim, n_classes))
    bias = np.zeros(n_classes)
    losses = []
    for _ in range(config.epochs):
        z = xs @ weights + bias
        z -= z.max(axis=1, keepdims=True)
        expz = np.exp(z)
        probs = expz / expz.sum(axis=1, keepdims=True)
        losses.append(
            float(-np.log(probs[np.arange(n), y]).mean() + 0.5 * config.l2 * (weights ** 2).sum())
        )
        grad = (probs - onehot) / n
        weights -= config.learning_rate * (xs.T @ grad + config.l2 * weights)
        bias -= config.learning_rate * grad.sum(axis=0)
    return {"weights": weights, "bias": bias}, losses


def _best_stump(column, residual, hessian, l2):
    """Best threshold of one feature by Newton gain; returns (gain, threshold, left, right)."""
    order = np.argsort(column, kind="stable")
    col = column[order]
    r = np.cumsum(residual[order])
    h = np.cumsum(hessian[order])
    total_r, total_h = r[-1], h[-1]
    # split after position i is valid where the value actually changes
    valid = np.nonzero(col[:-1] < col[1:])[0]
    if valid.size == 0:
        return None
    left_r, left_h = r[valid], h[valid]
    right_r, right_h = total_r - left_r, total_h - left_h
    gains = left_r ** 2 / (left_h + l2 + 1e-12) + right_r ** 2 / (right_h + l2 + 1e-12)
    best = int(np.argmax(gains))
    i = valid[best]
    threshold = (col[i] + col[i + 1]) / 2.0
    left = float(np.clip(left_r[best] / (left_h[best] + l2 + 1e-12), -4.0, 4.0))
    right = float(np.clip(right_r[best] / (right_h[best] + l2 + 1e-12), -4.0, 4.0))
    return float(gains[best]), float(threshold), left, right


def _fit_boosted_stumps(xs, y, n_classes, config):
    n, dim = xs.shape
    base = []
    rounds = []
    losses = []
    scores = np.zeros((n, n_classes))
    for c in range(n_classes):
        target = (y == c).astype(np.float64)
        rate = np.clip(target.mean(), 1e-6, 1 - 1e-6)
        base.append(float(np.log(rate / (1 - rate))))
        scores[:, c] = base[c]
        rounds.append([])
    for _ in range(config.epochs):
        for c in range(n_classes):
            target = (y == c).astype(np.float64)
            p = 1.0 / (1.0 + np.exp(-scores[:, c]))
            residual = target - p
            hessian = p * (1.0 - p)
            best = None
            for j in range(dim):
                stump = _best_stump(xs[:, j], residual, hessian, config.l2)
                if stump is None:
                    continue
                gain, threshold, left, right = stump
                key = (-gain, j, threshold)
                if best is None or key < best[0]:
                    best = (key, j, threshold, left, right)
            if best is None:
                continue
            _, j, threshold, left, right = best
            step_left = config.learning_rate * left
            step_right = config.learning_rate * right
            rounds[c].append((j, threshold, step_left, step_right))
            scores[:, c] += np.where(xs[:, j] <= threshold, step_left, step_right)
        sig = 1.0 / (1.0 + np.exp(-scores))
        probs = sig / sig.sum(axis=1, keepdims=True)
        losses.append(float(-np.log(np.clip(probs[np.arange(n), y], 1e-12, None)).mean()))
    return {"base": np.asarray(base), "rounds": rounds}, losses


def _stump_scores(parameters, x):
    base = parameters["base"]
    scores = base.astype(np.float64).copy()
    for c, stumps in enumerate(parameters["rounds"]):
        for j, threshold, step_left, step_right in stumps:
            scores[c] += step_left if x[j] <= threshold else step_right
    return scores


def predict_proba(model: ClassifierModel, features: Sequence[float]) -> list:
    return model.predict_proba(features)


# --- serialization: floats as decimal strings, exact 64-bit round-trip ---


def _enc(value) -> str:
    return repr(float(value))


def _enc_array(arr) -> list:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        return [_enc(v) for v in arr]
    return [_enc_array(row) for row in arr]


def _dec_array(obj) -> np.ndarray:
    return np.asarray(
        [[float(v) for v in row] for row in obj]
        if obj and isinstance(obj[0], list)
        else [float(v) for v in obj],
        dtype=np.float64,
    )


def model_to_json(model: ClassifierModel) -> str:
    if model.kind == "softmax_regression":
        params = {
            "weights": _enc_array(model.parameters["weights"]),
            "bias": _enc_array(model.parameters["bias"]),
        }
    else:
        params = {
            "base": _enc_array(model.parameters["base"]),
            "rounds": [
                [
                    {"feature": j, "threshold": _enc(t), "left": _enc(a), "right": _enc(b)}
                    for j, t, a, b in stumps
                ]
                for stumps in model.parameters["rounds"]
            ],
        }
    doc = {
        "kind": model.kind,
        "source_names": model.source_names,
        "standardizer": {"mean": _enc_array(model.mean), "std": _enc_array(model.std)},
        "parameters": params,
    }
    return json.dumps(doc, indent=2)


def model_from_json(text: str) -> ClassifierModel:
    doc = json.loads(text)
    kind = doc["kind"]
    if kind == "softmax_regression":
        parameters = {
            "weights": _dec_array(doc["parameters"]["weights"]),
            "bias": _dec_array(doc["parameters"]["bias"]),
        }
    elif kind == "boosted_stumps":
        parameters = {
            "base": _dec_array(doc["parameters"]["base"]),
            "rounds": [
                [
                    (s["feature"], float(s["threshold"]), float(s["left"]), float(s["right"]))
                    for s in stumps
                ]
                for stumps in doc["parameters"]["rounds"]
            ],
        }
    else:
        raise ValueError(f"unknown classifier kind {kind!r}")
    return ClassifierModel(
        kind=kind,
        source_names=list(doc["source_names"]),
        mean=_dec_array(doc["standardizer"]["mean"]),
        std=_dec_array(doc["standardizer"]["std"]),
        parameters=parameters,
    )


def save_model(model: ClassifierModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(model_to_json(model) + "\n")


def load_model(path) -> ClassifierModel:
    with open(path, "r", encoding="utf-8") as f:
        return model_from_json(f.read())

"""Learned transition scorer and intervention policy.

A (2d+2) -> 256 -> 256 -> 1 ReLU MLP with sigmoid output, trained full-batch
with Adam on binary cross-entropy. Inputs are edge features built from the
map: source centroid, target centroid, normalized transition count and
transition success rate.
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .cogmap import CognitiveMap, TransitionEdge
from .dynamics import DEFAULT_PERTURB_TEMPERATURE

MODEL_FORMAT_VERSION = 1
HIDDEN = 256
HINT_TEMPLATE = "A previously successful approach at this point: {exemplar}"


class NavigatorError(Exception):
    pass


class TrainingSetError(NavigatorError, ValueError):
    pass


class ModelFormatError(NavigatorError, ValueError):
    pass


def build_features(cmap: CognitiveMap, edge: TransitionEdge, max_count: int | None = None) -> np.ndarray:
    """Feature vector ``[mu_src; mu_dst; norm_count; rate]`` of length 2d+2.

    ``norm_count`` divides by the largest edge total in the map unless an
    explicit ``max_count`` is supplied (then it is clipped to 1).
    """
    if not cmap.edges:
        raise NavigatorError("map has no edges; normalized count is undefined")
    if edge.key not in cmap.edges:
        raise NavigatorError(f"edge {edge.key} not in map")
    if max_count is None:
        max_count = max(e.total_count for e in cmap.edges.values())
    norm = min(edge.total_count / max_count, 1.0)
    return np.concatenate([
        cmap.states[edge.source].centroid,
        cmap.states[edge.target].centroid,
        [norm, edge.rate],
    ])


@dataclass
class TrainingSet:
    features: np.ndarray
    labels: np.ndarray
    edges: list[tuple[int, int]]
    max_count: int

    def __len__(self) -> int:
        return len(self.labels)


def edge_label(success: int, total: int, min_total: int = 5, pos: float = 0.7, neg: float = 0.3) -> int | None:
    if total < min_total:
        return None
    rate = success / total
    if rate >= pos:
        return 1
    if rate <= neg:
        return 0
    return None


def extract_training_set(cmap: CognitiveMap, min_total: int = 5, pos: float = 0.7, neg: float = 0.3) -> TrainingSet:
    d2 = 2 * cmap.dimension + 2
    if not cmap.edges:
        return TrainingSet(np.zeros((0, d2)), np.zeros(0), [], 0)
    max_count = max(e.total_count for e in cmap.edges.values())
    rows, labels, keys = [], [], []
    for edge in cmap.edges.values():
        y = edge_label(edge.success_count, edge.total_count, min_total, pos, neg)
        if y is None:
            continue
        rows.append(build_features(cmap, edge, max_count))
        labels.append(y)
        keys.append(edge.key)
    features = np.array(rows) if rows else np.zeros((0, d2))
    return TrainingSet(features, np.array(labels, dtype=np.float64), keys, max_count)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class NavigatorModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int
    max_edge_count: int = 1
    hint_threshold: float = 0.6
    perturb_threshold: float = 0.5
    adam: dict = field(default_factory=lambda: {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8})
    epochs: int = 0
    train_accuracy: float | None = None

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    def forward(self, x: np.ndarray) -> list[np.ndarray]:
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = _sigmoid(z) if i == last else np.maximum(z, 0.0)
            acts.append(h)
        return acts

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.input_dim:
            raise NavigatorError(f"expected {self.input_dim} features, got {x.shape[1]}")
        p = self.forward(x)[-1][:, 0]
        # keep the open interval (0, 1) even when the logit saturates
        return np.clip(p, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))

    def to_dict(self) -> dict:
        return {
            "version": MODEL_FORMAT_VERSION,
            "layers": [list(W.shape) for W in self.weights],
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "seed": self.seed,
            "max_edge_count": self.max_edge_count,
            "hint_threshold": self.hint_threshold,
            "perturb_threshold": self.perturb_threshold,
            "adam": self.adam,
            "epochs": self.epochs,
            "train_accuracy": self.train_accuracy,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NavigatorModel":
        if data.get("version") != MODEL_FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model version {data.get('version')!r}")
        weights = [np.asarray(W, dtype=np.float64) for W in data["weights"]]
        biases = [np.asarray(b, dtype=np.float64) for b in data["biases"]]
        for W, shape in zip(weights, data["layers"]):
            if list(W.shape) != list(shape):
                raise ModelFormatError("layer shape mismatch")
        return cls(
            weights, biases, data["seed"], data["max_edge_count"],
            data["hint_threshold"], data["perturb_threshold"], data["adam"],
            data.get("epochs", 0), data.get("train_accuracy"),
        )


def init_model(input_dim: int, seed: int, hidden: int = HIDDEN) -> NavigatorModel:
    rng = np.random.default_rng(seed)
    sizes = [input_dim, hidden, hidden, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return NavigatorModel(weights, biases, seed)


def accuracy(model: NavigatorModel, features: np.ndarray, labels: np.ndarray) -> float:
    pred = model.predict(features) > 0.5
    return float(np.mean(pred == (labels > 0.5)))


def train(
    data: TrainingSet,
    epochs: int = 100,
    learning_rate: float = 1e-3,
    seed: int = 42,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    hidden: int = HIDDEN,
) -> NavigatorModel:
    X = np.asarray(data.features, dtype=np.float64)
    y = np.asarray(data.labels, dtype=np.float64)
    if len(y) == 0:
        raise TrainingSetError("training set is empty")
    if np.all(y == y[0]):
        raise TrainingSetError("training set contains a single class")

    model = init_model(X.shape[1], seed, hidden)
    params = [p for pair in zip(model.weights, model.biases) for p in pair]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    n = len(y)
    y_col = y[:, None]

    for t in range(1, epochs + 1):
        acts = model.forward(X)
        # d(mean BCE)/d(logit) for a sigmoid output
        delta = (acts[-1] - y_col) / n
        grads: list[np.ndarray] = []
        for i in range(len(model.weights) - 1, -1, -1):
            grads.append(delta.sum(axis=0))
            grads.append(acts[i].T @ delta)
            if i > 0:
                delta = (delta @ model.weights[i].T) * (acts[i] > 0)
        grads.reverse()  # -> [W0, b0, W1, b1, W2, b2]
        for j, (p, g) in enumerate(zip(params, grads)):
            m[j] = beta1 * m[j] + (1 - beta1) * g
            v[j] = beta2 * v[j] + (1 - beta2) * g * g
            m_hat = m[j] / (1 - beta1 ** t)
            v_hat = v[j] / (1 - beta2 ** t)
            p -= learning_rate * m_hat / (np.sqrt(v_hat) + eps)

    model.max_edge_count = int(data.max_count) if data.max_count else 1
    model.adam = {"lr": learning_rate, "beta1": beta1, "beta2": beta2, "eps": eps}
    model.epochs = epochs
    model.train_accuracy = accuracy(model, X, y)
    return model


def bce_loss(model: NavigatorModel, features: np.ndarray, labels: np.ndarray) -> float:
    p = model.predict(features)
    return float(-np.mean(labels * np.log(p) + (1 - labels) * np.log(1 - p)))


def score(model: NavigatorModel, features: np.ndarray) -> float:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1:
        raise NavigatorError("score expects a single feature vector")
    return float(model.predict(features)[0])


def save_model(model: NavigatorModel, path: str | os.PathLike) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(model.to_dict()), encoding="utf-8")
    os.replace(tmp, path)


def load_model(path: str | os.PathLike) -> NavigatorModel:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"corrupted model file: {exc}") from exc
    return NavigatorModel.from_dict(data)


# -- intervention policy ----------------------------------------------------

class ActionKind(str, Enum):
    HINT = "hint"
    PERTURB = "perturb"
    NONE = "none"


@dataclass(frozen=True)
class InterventionAction:
    kind: ActionKind
    hint_text: str | None = None
    temperature: float | None = None
    target_state: int | None = None
    score: float | None = None

    def __post_init__(self):
        if self.kind is ActionKind.HINT and not self.hint_text:
            raise ValueError("Hint action needs hint_text")
        if self.kind is ActionKind.PERTURB and self.temperature is None:
            raise ValueError("Perturb action needs a temperature")

    @classmethod
    def none(cls, score: float | None = None) -> "InterventionAction":
        return cls(ActionKind.NONE, score=score)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "hint_text": self.hint_text, "temperature": self.temperature,
                "target_state": self.target_state, "score": self.score}


def hint_for(cmap: CognitiveMap, sid: int) -> str:
    return HINT_TEMPLATE.format(exemplar=cmap.states[sid].exemplar)


def best_transition(cmap: CognitiveMap, model: NavigatorModel, sid: int) -> tuple[int, float] | None:
    """Highest-scoring outgoing transition (target, score); ties to lowest target id."""
    out = cmap.out_edges(sid)
    if not out:
        return None
    max_count = max(e.total_count for e in cmap.edges.values())
    X = np.stack([build_features(cmap, e, max_count) for e in out])
    scores = model.predict(X)
    order = sorted(range(len(out)), key=lambda i: (-scores[i], out[i].target))
    i = order[0]
    return out[i].target, float(scores[i])


def decide(
    cmap: CognitiveMap,
    model: NavigatorModel,
    current_state: int,
    intervention_prob: float,
    rng: random.Random,
    perturb_temperature: float = DEFAULT_PERTURB_TEMPERATURE,
) -> InterventionAction:
    best = best_transition(cmap, model, current_state)
    if best is not None and best[1] > model.hint_threshold:
        target, s = best
        return InterventionAction(ActionKind.HINT, hint_for(cmap, target), target_state=target, score=s)
    s = best[1] if best is not None else None
    if best is None or best[1] < model.perturb_threshold:
        if rng.random() < intervention_prob:
            return InterventionAction(ActionKind.PERTURB, temperature=perturb_temperature, score=s)
    return InterventionAction.none(score=s)

"""Tree ensemble model: structure, prediction and JSON serialization."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._kernels import predict_leaf_values
from .losses import sigmoid

FORMAT = "icuwarn-gbdt"
FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat binary tree; node 0 is the root, feature -1 marks a leaf.

    Rows go left when x < threshold, or when x is missing and default_left.
    """

    feature: np.ndarray        # int32
    threshold: np.ndarray      # float64 (nan at leaves)
    default_left: np.ndarray   # bool
    left: np.ndarray           # int32 (-1 at leaves)
    right: np.ndarray          # int32
    value: np.ndarray          # leaf weight (0 at internal nodes)
    gain: np.ndarray           # split gain (0 at leaves)
    cover: np.ndarray          # training rows reaching the node

    def __len__(self) -> int:
        return len(self.feature)

    def __eq__(self, other) -> bool:
        return isinstance(other, Tree) and self.to_dict() == other.to_dict()

    __hash__ = None

    @classmethod
    def leaf(cls, weight: float, cover: float = 0.0) -> "Tree":
        return cls(np.array([-1], np.int32), np.array([np.nan]), np.array([False]),
                   np.array([-1], np.int32), np.array([-1], np.int32), np.array([float(weight)]),
                   np.array([0.0]), np.array([float(cover)]))

    @property
    def depth(self) -> int:
        def d(n):
            return 0 if self.feature[n] < 0 else 1 + max(d(self.left[n]), d(self.right[n]))
        return d(0)

    def leaf_index(self, x: np.ndarray) -> int:
        n = 0
        while self.feature[n] >= 0:
            v = x[self.feature[n]]
            go = bool(self.default_left[n]) if np.isnan(v) else v < self.threshold[n]
            n = int(self.left[n] if go else self.right[n])
        return n

    def predict_row(self, x: np.ndarray) -> float:
        return float(self.value[self.leaf_index(x)])

    def to_dict(self, n: int = 0) -> dict:
        if self.feature[n] < 0:
            return {"leaf": float(self.value[n]), "cover": float(self.cover[n])}
        return {"feature": int(self.feature[n]), "threshold": float(self.threshold[n]),
                "default_left": bool(self.default_left[n]), "gain": float(self.gain[n]),
                "cover": float(self.cover[n]),
                "left": self.to_dict(int(self.left[n])), "right": self.to_dict(int(self.right[n]))}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        cols = {k: [] for k in ("feature", "threshold", "default_left", "left", "right", "value",
                                "gain", "cover")}

        def add(node) -> int:
            i = len(cols["feature"])
            for k in cols:
                cols[k].append(None)
            if "leaf" in node:
                vals = dict(feature=-1, threshold=np.nan, default_left=False, left=-1, right=-1,
                            value=node["leaf"], gain=0.0, cover=node.get("cover", 0.0))
            else:
                vals = dict(feature=node["feature"], threshold=node["threshold"],
                            default_left=node["default_left"], value=0.0,
                            gain=node.get("gain", 0.0), cover=node.get("cover", 0.0))
                vals["left"] = add(node["left"])
                vals["right"] = add(node["right"])
            for k, v in vals.items():
                cols[k][i] = v
            return i

        add(d)
        return cls(np.array(cols["feature"], np.int32), np.array(cols["threshold"], float),
                   np.array(cols["default_left"], bool), np.array(cols["left"], np.int32),
                   np.array(cols["right"], np.int32), np.array(cols["value"], float),
                   np.array(cols["gain"], float), np.array(cols["cover"], float))

    def canonical_key(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True, eq=False)
class GbdtModel:
    base_score: float
    learning_rate: float
    trees: tuple[Tree, ...]
    feature_names: tuple[str, ...]
    feature_config: dict | None = None
    dictionaries: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __eq__(self, other) -> bool:
        return isinstance(other, GbdtModel) and self.to_json() == other.to_json()

    __hash__ = None

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _flat(self):
        cached = self.__dict__.get("_flat_cache")
        if cached is None:
            offsets = np.zeros(len(self.trees) + 1, dtype=np.int64)
            for i, t in enumerate(self.trees):
                offsets[i + 1] = offsets[i] + len(t)

            def cat(attr, dtype):
                parts = [getattr(t, attr) for t in self.trees]
                return np.concatenate(parts).astype(dtype) if parts else np.empty(0, dtype)

            cached = (cat("feature", np.int32), cat("threshold", float),
                      cat("default_left", np.bool_), cat("left", np.int32),
                      cat("right", np.int32), cat("value", float), offsets)
            object.__setattr__(self, "_flat_cache", cached)
        return cached

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return np.ascontiguousarray(X)

    def predict_raw(self, X) -> np.ndarray:
        X = self._check(X)
        feat, thr, dleft, left, right, value, offsets = self._flat()
        out = np.empty(X.shape[0])
        predict_leaf_values(X, feat, thr, dleft, left, right, value, offsets,
                            float(self.learning_rate), float(self.base_score), out)
        return out

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.predict_raw(X))

    def with_trees(self, trees: Sequence[Tree]) -> "GbdtModel":
        return GbdtModel(self.base_score, self.learning_rate, tuple(trees), self.feature_names,
                         self.feature_config, self.dictionaries, self.metadata)

    def truncated(self, rounds: int) -> "GbdtModel":
        meta = dict(self.metadata, rounds=rounds)
        return GbdtModel(self.base_score, self.learning_rate, self.trees[:rounds],
                         self.feature_names, self.feature_config, self.dictionaries, meta)

    def with_metadata(self, **updates) -> "GbdtModel":
        return GbdtModel(self.base_score, self.learning_rate, self.trees, self.feature_names,
                         self.feature_config, self.dictionaries, {**self.metadata, **updates})

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return {"format": FORMAT, "format_version": FORMAT_VERSION,
                "base_score": float(self.base_score), "learning_rate": float(self.learning_rate),
                "feature_names": list(self.feature_names),
                "feature_config": self.feature_config, "dictionaries": self.dictionaries,
                "metadata": self.metadata, "trees": [t.to_dict() for t in self.trees]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    @property
    def version(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:12]

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtModel":
        if d.get("format") != FORMAT:
            raise ValueError("not an icuwarn model file")
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {d.get('format_version')}")
        return cls(d["base_score"], d["learning_rate"],
                   tuple(Tree.from_dict(t) for t in d["trees"]), tuple(d["feature_names"]),
                   d.get("feature_config"), d.get("dictionaries", {}), d.get("metadata", {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "GbdtModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def predict(model: GbdtModel, row) -> float:
    """Probability for one feature row (missing values allowed)."""
    return float(model.predict_proba(np.asarray(row, dtype=float).reshape(1, -1))[0])


def predict_series(model: GbdtModel, ts: Sequence[int], rows) -> list[tuple[int, float]]:
    """(ts, score) pairs for one admission's rows, sorted by ts."""
    ts = np.asarray(ts, dtype=np.int64)
    scores = model.predict_proba(rows)
    order = np.argsort(ts, kind="stable")
    return [(int(ts[i]), float(scores[i])) for i in order]

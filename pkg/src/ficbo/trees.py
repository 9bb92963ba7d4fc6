"""Gradient-boosted regression trees with squared-error loss.

A deliberately small implementation for the tree-based expert: exact greedy
variance-reduction splits, shallow depth, shrinkage. fit/predict surface.
"""

from __future__ import annotations

import numpy as np

from .validation import check_matrix, check_vector, check_consistent_length


class _Node:
    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, value: float):
        self.feature = -1
        self.threshold = 0.0
        self.left = None
        self.right = None
        self.value = value

    @property
    def is_leaf(self) -> bool:
        return self.left is None


class RegressionTree:
    """CART-style regression tree, exact greedy splits on squared error."""

    def __init__(self, max_depth: int = 3, min_samples_split: int = 2):
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.root_: _Node | None = None

    def get_params(self) -> dict:
        return {"max_depth": self.max_depth, "min_samples_split": self.min_samples_split}

    def fit(self, X, y) -> "RegressionTree":
        X = check_matrix(X, "X")
        y = check_vector(y, "y")
        check_consistent_length(X, y)
        self.root_ = self._grow(X, y, depth=0)
        return self

    def _grow(self, X: np.ndarray, y: np.ndarray, depth: int) -> _Node:
        node = _Node(float(y.mean()))
        if depth >= self.max_depth or len(y) < self.min_samples_split:
            return node
        feature, threshold = self._best_split(X, y)
        if feature < 0:
            return node
        left = X[:, feature] <= threshold
        node.feature = feature
        node.threshold = threshold
        node.left = self._grow(X[left], y[left], depth + 1)
        node.right = self._grow(X[~left], y[~left], depth + 1)
        return node

    @staticmethod
    def _best_split(X: np.ndarray, y: np.ndarray) -> tuple[int, float]:
        n, d = X.shape
        best_gain = 1e-12  # require a strictly positive SSE reduction
        best = (-1, 0.0)
        total_sum = y.sum()
        for j in range(d):
            order = np.argsort(X[:, j], kind="stable")
            xs = X[order, j]
            ys = y[order]
            csum = np.cumsum(ys)[:-1]
            cnt = np.arange(1, n)
            valid = xs[:-1] < xs[1:]  # cannot split between equal values
            if not valid.any():
                continue
            gain = csum**2 / cnt + (total_sum - csum) ** 2 / (n - cnt) - total_sum**2 / n
            gain = np.where(valid, gain, -np.inf)
            k = int(np.argmax(gain))
            if gain[k] > best_gain:
                best_gain = gain[k]
                best = (j, float(0.5 * (xs[k] + xs[k + 1])))
        return best

    def predict(self, X) -> np.ndarray:
        if self.root_ is None:
            raise RuntimeError("RegressionTree is not fitted")
        X = check_matrix(X, "X")
        out = np.empty(len(X))
        for i, row in enumerate(X):
            node = self.root_
            while not node.is_leaf:
                node = node.left if row[node.feature] <= node.threshold else node.right
            out[i] = node.value
        return out


class GradientBoostedTrees:
    """Shrunken sum of shallow trees fit to squared-error residuals."""

    def __init__(
        self,
        n_estimators: int = 10,
        max_depth: int = 3,
        learning_rate: float = 0.15,
    ):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.base_: float = 0.0
        self.trees_: list[RegressionTree] = []

    def get_params(self) -> dict:
        return {
            "n_estimators": self.n_estimators,
            "max_depth": self.max_depth,
            "learning_rate": self.learning_rate,
        }

    def fit(self, X, y) -> "GradientBoostedTrees":
        X = check_matrix(X, "X")
        y = check_vector(y, "y")
        check_consistent_length(X, y)
        if len(y) < 2:
            raise ValueError("need at least two training points")
        self.base_ = float(y.mean())
        self.trees_ = []
        residual = y - self.base_
        for _ in range(self.n_estimators):
            tree = RegressionTree(max_depth=self.max_depth).fit(X, residual)
            residual = residual - self.learning_rate * tree.predict(X)
            self.trees_.append(tree)
        return self

    def predict(self, X) -> np.ndarray:
        if not self.trees_:
            raise RuntimeError("GradientBoostedTrees is not fitted")
        X = check_matrix(X, "X")
        out = np.full(len(X), self.base_)
        for tree in self.trees_:
            out += self.learning_rate * tree.predict(X)
        return out

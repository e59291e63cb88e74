"""Downstream-utility proxy: multinomial logistic regression on log band powers."""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from .spectral import bandpower_features


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class LogisticRegression:
    """Full-batch gradient descent on the L2-regularized cross-entropy."""

    def __init__(self, num_classes: int, l2: float = 1e-3, lr: float = 0.5, max_iter: int = 3000,
                 tol: float = 1e-7):
        self.k = num_classes
        self.l2 = l2
        self.lr = lr
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, x: np.ndarray, y: np.ndarray) -> "LogisticRegression":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        self.mu = x.mean(0)
        self.sd = np.where(x.std(0) > 0, x.std(0), 1.0)
        z = (x - self.mu) / self.sd
        n, d = z.shape
        onehot = np.eye(self.k)[y]
        w = np.zeros((d, self.k))
        b = np.zeros(self.k)
        for _ in range(self.max_iter):
            p = _softmax(z @ w + b)
            err = (p - onehot) / n
            gw = z.T @ err + self.l2 * w
            gb = err.sum(0)
            w -= self.lr * gw
            b -= self.lr * gb
            if np.sqrt((gw * gw).sum() + (gb * gb).sum()) < self.tol:
                break
        self.w, self.b = w, b
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x, dtype=np.float64) - self.mu) / self.sd
        return np.argmax(z @ self.w + self.b, axis=1)


def proxy_features(data, fs: float) -> np.ndarray:
    return np.log10(np.maximum(bandpower_features(data, fs), 1e-20))


def proxy_accuracy(train: Tuple[np.ndarray, np.ndarray], test: Tuple[np.ndarray, np.ndarray],
                   fs: float, num_classes: int) -> float:
    x, y = train
    present = np.unique(y)
    if present.size < num_classes:
        missing = sorted(set(range(num_classes)) - set(present.tolist()))
        raise ValueError(f"class(es) {missing} missing from the training set")
    model = LogisticRegression(num_classes).fit(proxy_features(x, fs), y)
    xt, yt = test
    return float(np.mean(model.predict(proxy_features(xt, fs)) == yt))


def proxy_delta_acc(train_real: Tuple[np.ndarray, np.ndarray], gen: Optional[Tuple[np.ndarray, np.ndarray]],
                    test_real: Tuple[np.ndarray, np.ndarray], fs: float, num_classes: int) -> float:
    """``acc(real + gen) - acc(real)`` on the held-out real test set; empty ``gen`` gives exactly 0."""
    if gen is None or len(gen[1]) == 0:
        return 0.0
    base = proxy_accuracy(train_real, test_real, fs, num_classes)
    x = np.concatenate([np.asarray(train_real[0]), np.asarray(gen[0])])
    y = np.concatenate([np.asarray(train_real[1]), np.asarray(gen[1])])
    return proxy_accuracy((x, y), test_real, fs, num_classes) - base

"""Logistic-regression probes trained by mini-batch gradient descent."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .config import PROBE_LOSS_SLACK, PROBE_MAX_HALVINGS
from .errors import DegenerateTargetError, DimensionMismatchError, InvalidInputError
from .models import LinearProbe, ProbeConfig
from .utils_io import read_json, write_json


def probe_seed(base_seed: int, index: int) -> int:
    """Per-probe seed derived from (base_seed, index)."""
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1)[0])


def _indicator_targets(targets: np.ndarray, classes: Tuple[int, ...]) -> np.ndarray:
    if len(classes) == 2:
        return (targets == classes[1]).astype(float).reshape(-1, 1)
    return (targets.reshape(-1, 1) == np.asarray(classes).reshape(1, -1)).astype(float)


def logistic_loss_and_grad(
    W: np.ndarray, b: np.ndarray, X: np.ndarray, Y: np.ndarray, l2: float
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Mean one-vs-rest logistic loss plus (l2/2)||W||^2, with gradients.

    W is C x d, b has length C, Y is an n x C indicator matrix.
    """
    n = X.shape[0]
    z = X @ W.T + b
    loss = float(np.sum(np.logaddexp(0.0, z) - Y * z) / n + 0.5 * l2 * np.sum(W * W))
    residual = expit(z) - Y
    grad_w = residual.T @ X / n + l2 * W
    grad_b = residual.sum(axis=0) / n
    return loss, grad_w, grad_b


def _run_epoch(
    W: np.ndarray,
    b: np.ndarray,
    X: np.ndarray,
    Y: np.ndarray,
    order: np.ndarray,
    batch: int,
    lr: float,
    l2: float,
) -> Tuple[np.ndarray, np.ndarray]:
    W = W.copy()
    b = b.copy()
    for start in range(0, X.shape[0], batch):
        idx = order[start : start + batch]
        _, grad_w, grad_b = logistic_loss_and_grad(W, b, X[idx], Y[idx], l2)
        W -= lr * grad_w
        b -= lr * grad_b
    return W, b


def train_probe(
    features: np.ndarray,
    targets: np.ndarray,
    config: ProbeConfig,
    target: str = "target",
) -> LinearProbe:
    """Fit a (one-vs-rest) logistic regression; deterministic given config.seed.

    The full-data loss recorded per epoch never rises by more than PROBE_LOSS_SLACK.
    """
    X = np.asarray(features, dtype=float)
    t = np.asarray(targets).astype(np.int64).ravel()
    if X.ndim != 2 or X.shape[0] != t.shape[0]:
        raise InvalidInputError(f"features {X.shape} and targets {t.shape} do not align")
    classes = tuple(int(c) for c in np.unique(t))
    if len(classes) < 2:
        raise DegenerateTargetError(target, classes[0] if classes else None)

    n, d = X.shape
    Y = _indicator_targets(t, classes)
    rows = Y.shape[1]
    W = np.zeros((rows, d))
    b = np.zeros(rows)
    rng = np.random.default_rng(config.seed)
    batch = n if config.batch_size is None else min(config.batch_size, n)

    lr = config.learning_rate
    previous, _, _ = logistic_loss_and_grad(W, b, X, Y, config.l2)
    history: List[float] = []
    for epoch in range(config.epochs):
        order = np.arange(n) if batch >= n else rng.permutation(n)
        # A rising full-data loss halves the step and replays the epoch.
        for _ in range(PROBE_MAX_HALVINGS + 1):
            W_next, b_next = _run_epoch(W, b, X, Y, order, batch, lr, config.l2)
            loss, _, _ = logistic_loss_and_grad(W_next, b_next, X, Y, config.l2)
            if loss <= previous + PROBE_LOSS_SLACK:
                W, b, previous = W_next, b_next, loss
                break
            lr /= 2.0
        else:
            logging.debug("Probe %s: epoch %d kept its previous weights", target, epoch + 1)
        history.append(previous)

    if not np.all(np.isfinite(W)):
        raise InvalidInputError(f"Probe '{target}' produced non-finite weights")
    logging.debug("Trained probe %s: classes=%s final_loss=%.6f", target, classes, history[-1])
    return LinearProbe(
        weights=W, intercepts=b, target=target, classes=classes, loss_history=tuple(history)
    )


def train_probes(
    features: np.ndarray,
    targets_list: Sequence[np.ndarray],
    config: ProbeConfig,
    jobs: int = 1,
    names: Optional[Sequence[str]] = None,
) -> List[LinearProbe]:
    """Train independent probes with seeds derived from (config.seed, index).

    Results are returned in input order regardless of `jobs`.
    """
    names = list(names) if names is not None else [f"target-{i}" for i in range(len(targets_list))]

    def _fit(index: int) -> LinearProbe:
        cfg = config.with_seed(probe_seed(config.seed, index))
        return train_probe(features, targets_list[index], cfg, names[index])

    if jobs <= 1 or len(targets_list) <= 1:
        return [_fit(i) for i in range(len(targets_list))]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_fit, range(len(targets_list))))


def decision_scores(probe: LinearProbe, features: np.ndarray) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != probe.d:
        raise DimensionMismatchError(probe.d, X.shape[1])
    return X @ probe.weights.T + probe.intercepts


def predict(probe: LinearProbe, features: np.ndarray) -> np.ndarray:
    """Class predictions; ties go to the lower class."""
    scores = decision_scores(probe, features)
    classes = np.asarray(probe.classes)
    if probe.is_binary:
        return np.where(scores[:, 0] > 0, classes[1], classes[0])
    return classes[np.argmax(scores, axis=1)]


def probe_accuracy(probe: LinearProbe, features: np.ndarray, targets: np.ndarray) -> float:
    t = np.asarray(targets).ravel()
    return float(np.mean(predict(probe, features) == t))


def majority_rate(targets: np.ndarray) -> float:
    _, counts = np.unique(np.asarray(targets).ravel(), return_counts=True)
    return float(counts.max() / counts.sum())


def save_probe(probe: LinearProbe, path: Path) -> None:
    write_json(path, probe.to_dict())


def load_probe(path: Path) -> LinearProbe:
    return LinearProbe.from_dict(read_json(path))

"""Configuration selection from predicted scores, and selector quality metrics."""

from __future__ import annotations

from typing import Optional

import numpy as np

from polyroute.config_space import Configuration, ConfigurationSpace


def _masked_flat(y_hat, applicable):
    flat = np.asarray(y_hat, dtype=float).ravel()
    if applicable is None:
        return flat, np.ones(flat.shape, dtype=bool)
    mask = np.asarray(applicable, dtype=bool).ravel()
    if not mask.any():
        raise ValueError("no applicable configuration to select from")
    return flat, mask


def argmax_index(y_hat, applicable=None) -> int:
    """Linear index of the highest applicable score; ties go to the lowest index."""
    flat, mask = _masked_flat(y_hat, applicable)
    return int(np.argmax(np.where(mask, flat, -np.inf)))


def topk_indices(y_hat, k: int, applicable=None) -> np.ndarray:
    flat, mask = _masked_flat(y_hat, applicable)
    order = np.argsort(-np.where(mask, flat, -np.inf), kind="stable")
    return order[: min(k, int(mask.sum()))]


def softmax_probs(y_hat, temperature: float = 1.0, applicable=None) -> np.ndarray:
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    flat, mask = _masked_flat(y_hat, applicable)
    z = np.where(mask, flat / temperature, -np.inf)
    z = z - z[mask].max()
    p = np.where(mask, np.exp(z), 0.0)
    return p / p.sum()


def sample_index(y_hat, temperature: float, rng: np.random.Generator, applicable=None) -> int:
    p = softmax_probs(y_hat, temperature, applicable)
    return int(rng.choice(p.size, p=p))


def select_offline(y_hat, space: ConfigurationSpace, applicable=None) -> Configuration:
    return space.multi_index(argmax_index(y_hat, applicable))


def select_online(y_hat, temperature: float, rng: np.random.Generator, space: ConfigurationSpace,
                  applicable=None) -> Configuration:
    return space.multi_index(sample_index(y_hat, temperature, rng, applicable))


def selector_metrics(pred: np.ndarray, truth: np.ndarray, applicable: Optional[np.ndarray] = None,
                     k: int = 5) -> dict[str, float]:
    """Selector quality over a test set of full score tensors.

    ``pred`` and ``truth`` have shape ``(N, *grid)``.  A prediction counts as
    accurate when the true best score is reached; with ties in ``truth`` any
    of the tied configurations is correct.  Inapplicable cells are never
    selected; for the best-single baseline they contribute a score of 0.
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    n = pred.shape[0]
    p2 = pred.reshape(n, -1)
    t2 = truth.reshape(n, -1)
    a2 = np.ones(t2.shape, dtype=bool) if applicable is None else np.broadcast_to(
        np.asarray(applicable, dtype=bool), truth.shape).reshape(n, -1)
    acc1 = acck = f1_1 = f1_k = max_f1 = rnd = 0.0
    for i in range(n):
        t = np.where(a2[i], t2[i], -np.inf)
        best = t.max()
        top = topk_indices(p2[i], k, a2[i])
        acc1 += float(t[top[0]] == best)
        acck += float(np.any(t[top] == best))
        f1_1 += t[top[0]]
        f1_k += t[top].max()
        max_f1 += best
        rnd += t2[i][a2[i]].mean()
    best_single = float(np.where(a2, t2, 0.0).mean(axis=0).max())
    return {
        "acc@top1": float(acc1 / n),
        f"acc@top{k}": float(acck / n),
        "f1@top1": float(f1_1 / n),
        f"f1@top{k}": float(f1_k / n),
        "max_f1": float(max_f1 / n),
        "random_f1": float(rnd / n),
        "best_single_f1": best_single,
    }

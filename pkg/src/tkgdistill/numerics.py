"""Shared deterministic numerics: seeded RNG, temperature softmax, cross-entropy."""
from __future__ import annotations

import numpy as np

PROB_FLOOR = 1e-12


def seeded_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; identical seed gives an identical draw sequence everywhere."""
    return np.random.Generator(np.random.PCG64(seed))


def _as_finite_vector(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def softmax_t(logits, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax with max-subtraction for overflow safety.

    Output entries lie in (0, 1) and sum to 1; a higher temperature flattens
    the distribution.
    """
    z = _as_finite_vector(logits, "logits")
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    z = z / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def cross_entropy(target, predicted) -> float:
    """-sum(target * log(predicted)), with predicted clamped at PROB_FLOOR."""
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: target {t.shape} vs predicted {p.shape}")
    p = np.maximum(p, PROB_FLOOR)
    return float(-np.sum(t * np.log(p)))


def entropy(dist) -> float:
    """Shannon entropy in nats."""
    return cross_entropy(dist, dist)


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats, with q clamped at PROB_FLOOR."""
    return cross_entropy(p, q) - entropy(p)


def init_embeddings(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    """Uniform table in [-6/sqrt(dim), +6/sqrt(dim)], shape (count, dim)."""
    if count < 1 or dim < 1:
        raise ValueError(f"count and dim must be >= 1, got {count}, {dim}")
    r = 6.0 / np.sqrt(dim)
    return rng.uniform(-r, r, size=(count, dim))

"""Shared test helpers: finite-difference oracle, toy vocab/batch builders."""
from __future__ import annotations

import numpy as np
import pytest

from tkgdistill.datasets import Quadruple, TrainingBatch, Vocab
from tkgdistill.numerics import seeded_rng


def finite_difference(loss_fn, arrays: dict[str, np.ndarray], h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central-difference gradients of loss_fn w.r.t. every entry of arrays.

    The arrays are perturbed in place and restored, so loss_fn must read them
    live (not via copies).
    """
    out = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        flat, gflat = arr.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn()
            flat[i] = orig - h
            lm = loss_fn()
            flat[i] = orig
            gflat[i] = (lp - lm) / (2 * h)
        out[name] = g
    return out


def assert_grads_close(analytic: dict, fd: dict, rtol: float = 1e-4, atol: float = 1e-7) -> None:
    """|analytic - fd| <= rtol * max(|analytic|, |fd|) + atol, elementwise."""
    for name in fd:
        a, f = analytic[name], fd[name]
        gap = np.abs(a - f) - (rtol * np.maximum(np.abs(a), np.abs(f)) + atol)
        if np.any(gap > 0):
            worst = np.unravel_index(np.argmax(gap), gap.shape)
            raise AssertionError(
                f"gradient mismatch in {name} at {worst}: analytic={a[worst]!r} fd={f[worst]!r}"
            )


def toy_vocab(n_entities: int, n_relations: int, n_time_bins: int) -> Vocab:
    v = Vocab()
    for i in range(n_entities):
        v.intern_entity(f"e{i}")
    for j in range(n_relations):
        v.intern_relation(f"r{j}")
    v.assign_time_bins(set(range(n_time_bins)))
    return v


def random_batch(rng: np.random.Generator, vocab: Vocab, size: int, negatives: int) -> TrainingBatch:
    n_e = vocab.n_entities
    pos = [
        Quadruple(
            int(rng.integers(n_e)),
            int(rng.integers(vocab.n_relations)),
            int(rng.integers(n_e)),
            int(rng.integers(vocab.n_time_bins)),
        )
        for _ in range(size)
    ]
    sides = rng.integers(0, 2, size=size)
    rows = []
    for f, side in zip(pos, sides):
        true = f.s if side == 0 else f.o
        negs = rng.choice(n_e - 1, size=min(negatives, n_e - 1), replace=False)
        rows.append(np.concatenate([[true], np.where(negs < true, negs, negs + 1)]))
    cand = np.stack(rows)
    labels = np.zeros(cand.shape)
    labels[:, 0] = 1.0
    return TrainingBatch(pos, labels, np.asarray(sides), cand)


@pytest.fixture
def rng42() -> np.random.Generator:
    return seeded_rng(42)

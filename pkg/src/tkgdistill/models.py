"""Embedding models and their hand-coded gradients.

Two scorers are supported, both oriented so that higher = more plausible:

* translational: -||s + p - o + t||_2
* bilinear: sum(s * o * p_seq) with p_seq the final hidden state of a
  single-layer LSTM run over the two-token sequence [relation, time].

Backpropagation is written out explicitly (no autodiff); every gradient is
checked against central finite differences in the test suite.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .datasets import Quadruple, TrainingBatch
from .numerics import init_embeddings, softmax_t

TTRANSE = "ttranse"
TADISTMULT = "tadistmult"
MODEL_KINDS = (TTRANSE, TADISTMULT)

GATES = ("i", "f", "o", "g")
LSTM_KEYS = tuple(f"{w}_{g}" for g in GATES for w in ("w", "u", "b"))

CHECKPOINT_VERSION = 1

GradDict = dict[str, np.ndarray]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class ModelParams:
    """All trainable tables for one model instance."""

    kind: str
    dim: int
    entity_emb: np.ndarray
    relation_emb: np.ndarray
    time_emb: np.ndarray
    lstm: dict[str, np.ndarray] | None = None

    @property
    def n_entities(self) -> int:
        return self.entity_emb.shape[0]

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Live views of every parameter array, keyed for optimizers and tests."""
        out = {
            "entity_emb": self.entity_emb,
            "relation_emb": self.relation_emb,
            "time_emb": self.time_emb,
        }
        if self.lstm is not None:
            for key in LSTM_KEYS:
                out[f"lstm.{key}"] = self.lstm[key]
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            kind=self.kind,
            dim=self.dim,
            entity_emb=self.entity_emb.copy(),
            relation_emb=self.relation_emb.copy(),
            time_emb=self.time_emb.copy(),
            lstm=None if self.lstm is None else {k: v.copy() for k, v in self.lstm.items()},
        )


def init_params(
    kind: str,
    n_entities: int,
    n_relations: int,
    n_time_bins: int,
    dim: int,
    rng: np.random.Generator,
) -> ModelParams:
    """Freshly initialized model; LSTM weights only exist for the bilinear kind."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    params = ModelParams(
        kind=kind,
        dim=dim,
        entity_emb=init_embeddings(rng, n_entities, dim),
        relation_emb=init_embeddings(rng, n_relations, dim),
        time_emb=init_embeddings(rng, n_time_bins, dim),
    )
    if kind == TADISTMULT:
        r = 6.0 / np.sqrt(dim)
        lstm = {}
        for gate in GATES:
            lstm[f"w_{gate}"] = rng.uniform(-r, r, size=(dim, dim))
            lstm[f"u_{gate}"] = rng.uniform(-r, r, size=(dim, dim))
            lstm[f"b_{gate}"] = np.zeros(dim)
        params.lstm = lstm
    return params


def zero_grads(params: ModelParams) -> GradDict:
    return {name: np.zeros_like(arr) for name, arr in params.named_arrays().items()}


def add_grads(acc: GradDict, extra: GradDict) -> None:
    for name, g in extra.items():
        acc[name] += g


def scale_grads(grads: GradDict, factor: float) -> None:
    for g in grads.values():
        g *= factor


# ---------------------------------------------------------------------------
# LSTM over the two-token sequence [relation, time]


def _lstm_step(lstm, x, h_prev, c_prev):
    z = {g: x @ lstm[f"w_{g}"].T + h_prev @ lstm[f"u_{g}"].T + lstm[f"b_{g}"] for g in GATES}
    i, f, o = _sigmoid(z["i"]), _sigmoid(z["f"]), _sigmoid(z["o"])
    g = np.tanh(z["g"])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return {"i": i, "f": f, "o": o, "g": g, "c": c, "tanh_c": tanh_c, "h": h}


def lstm_forward(lstm, x1: np.ndarray, x2: np.ndarray):
    """Batched two-step forward pass; rows of x1/x2 are token embeddings.

    Returns the final hidden state (B, d) and the cache consumed by
    lstm_backward.
    """
    h0 = np.zeros_like(x1)
    c0 = np.zeros_like(x1)
    s1 = _lstm_step(lstm, x1, h0, c0)
    s2 = _lstm_step(lstm, x2, s1["h"], s1["c"])
    return s2["h"], (x1, x2, s1, s2)


def _gate_backward(lstm, grads, dz, x, h_prev, step_has_hidden):
    dx = np.zeros_like(x)
    dh_prev = np.zeros_like(x)
    for gate in GATES:
        grads[f"lstm.w_{gate}"] += dz[gate].T @ x
        grads[f"lstm.b_{gate}"] += dz[gate].sum(axis=0)
        dx += dz[gate] @ lstm[f"w_{gate}"]
        if step_has_hidden:
            grads[f"lstm.u_{gate}"] += dz[gate].T @ h_prev
            dh_prev += dz[gate] @ lstm[f"u_{gate}"]
    return dx, dh_prev


def lstm_backward(lstm, cache, dh2: np.ndarray, grads: GradDict):
    """Backprop dL/dh2 through both steps; accumulates into grads['lstm.*'].

    Returns (dx1, dx2), the gradients w.r.t. the two input token embeddings.
    """
    x1, x2, s1, s2 = cache

    do2 = dh2 * s2["tanh_c"]
    dc2 = dh2 * s2["o"] * (1.0 - s2["tanh_c"] ** 2)
    dz2 = {
        "i": dc2 * s2["g"] * s2["i"] * (1.0 - s2["i"]),
        "f": dc2 * s1["c"] * s2["f"] * (1.0 - s2["f"]),
        "o": do2 * s2["o"] * (1.0 - s2["o"]),
        "g": dc2 * s2["i"] * (1.0 - s2["g"] ** 2),
    }
    dx2, dh1 = _gate_backward(lstm, grads, dz2, x2, s1["h"], step_has_hidden=True)
    dc1 = dc2 * s2["f"]

    do1 = dh1 * s1["tanh_c"]
    dc1 = dc1 + dh1 * s1["o"] * (1.0 - s1["tanh_c"] ** 2)
    # c0 = 0, so the step-1 forget gate receives no gradient.
    dz1 = {
        "i": dc1 * s1["g"] * s1["i"] * (1.0 - s1["i"]),
        "f": np.zeros_like(dc1),
        "o": do1 * s1["o"] * (1.0 - s1["o"]),
        "g": dc1 * s1["i"] * (1.0 - s1["g"] ** 2),
    }
    dx1, _ = _gate_backward(lstm, grads, dz1, x1, None, step_has_hidden=False)
    return dx1, dx2


def lstm_encode(params: ModelParams, p: int, t: int) -> np.ndarray:
    """Relation-time sequence embedding: final hidden state over [p, t]."""
    if params.lstm is None:
        raise ValueError("model has no LSTM encoder")
    x1 = params.relation_emb[p][None, :]
    x2 = params.time_emb[t][None, :]
    h2, _ = lstm_forward(params.lstm, x1, x2)
    return h2[0]


# ---------------------------------------------------------------------------
# Scoring


def ttranse_score(params: ModelParams, fact: Quadruple) -> float:
    """-||s + p - o + t||_2; 0 is a perfect translation."""
    s, p, o, t = fact
    v = params.entity_emb[s] + params.relation_emb[p] - params.entity_emb[o] + params.time_emb[t]
    return float(-np.linalg.norm(v))


def tadistmult_score(params: ModelParams, fact: Quadruple) -> float:
    """sum_i s_i * o_i * p_seq_i with p_seq from the LSTM encoder."""
    s, p, o, t = fact
    p_seq = lstm_encode(params, p, t)
    return float(np.sum(params.entity_emb[s] * params.entity_emb[o] * p_seq))


def score_fact(params: ModelParams, fact: Quadruple) -> float:
    if params.kind == TTRANSE:
        return ttranse_score(params, fact)
    return tadistmult_score(params, fact)


def score_all_subjects(params: ModelParams, p: int, o: int, t: int) -> np.ndarray:
    """Scores of (e, p, o, t) for every entity e, as one vector."""
    ents = params.entity_emb
    if params.kind == TTRANSE:
        base = params.relation_emb[p] - ents[o] + params.time_emb[t]
        return -np.linalg.norm(ents + base, axis=1)
    p_seq = lstm_encode(params, p, t)
    return ents @ (ents[o] * p_seq)


def score_all_objects(params: ModelParams, s: int, p: int, t: int) -> np.ndarray:
    """Scores of (s, p, e, t) for every entity e, as one vector."""
    ents = params.entity_emb
    if params.kind == TTRANSE:
        base = ents[s] + params.relation_emb[p] + params.time_emb[t]
        return -np.linalg.norm(base - ents, axis=1)
    p_seq = lstm_encode(params, p, t)
    return ents @ (ents[s] * p_seq)


# ---------------------------------------------------------------------------
# Batched candidate scoring and backprop


def batch_candidate_scores(params: ModelParams, batch: TrainingBatch):
    """Scores (B, K) for every candidate of every positive, plus a backprop cache."""
    pos = batch.positives
    s_ids = np.fromiter((f.s for f in pos), dtype=np.int64, count=len(pos))
    p_ids = np.fromiter((f.p for f in pos), dtype=np.int64, count=len(pos))
    o_ids = np.fromiter((f.o for f in pos), dtype=np.int64, count=len(pos))
    t_ids = np.fromiter((f.t for f in pos), dtype=np.int64, count=len(pos))
    cand = batch.cand_entities
    C = params.entity_emb[cand]  # (B, K, d)
    subj_side = batch.sides == 0

    if params.kind == TTRANSE:
        base = np.where(
            subj_side[:, None],
            params.relation_emb[p_ids] - params.entity_emb[o_ids] + params.time_emb[t_ids],
            params.entity_emb[s_ids] + params.relation_emb[p_ids] + params.time_emb[t_ids],
        )
        sign = np.where(subj_side, 1.0, -1.0)
        V = sign[:, None, None] * C + base[:, None, :]
        norms = np.linalg.norm(V, axis=2)
        scores = -norms
        cache = ("ttranse", s_ids, p_ids, o_ids, t_ids, cand, subj_side, sign, V, norms)
        return scores, cache

    P = params.relation_emb[p_ids]
    T = params.time_emb[t_ids]
    p_seq, lstm_cache = lstm_forward(params.lstm, P, T)
    other = np.where(subj_side[:, None], params.entity_emb[o_ids], params.entity_emb[s_ids])
    weight = other * p_seq
    scores = np.einsum("bkd,bd->bk", C, weight)
    cache = ("tadistmult", s_ids, p_ids, o_ids, t_ids, cand, subj_side, C, other, p_seq, lstm_cache)
    return scores, cache


def backprop_candidate_scores(params: ModelParams, cache, dscores: np.ndarray, grads: GradDict) -> None:
    """Accumulate dL/dparams given dL/dscores from batch_candidate_scores."""
    if cache[0] == TTRANSE:
        _, s_ids, p_ids, o_ids, t_ids, cand, subj_side, sign, V, norms = cache
        safe = np.where(norms > 0.0, norms, 1.0)
        dV = (-dscores / safe)[:, :, None] * V
        dV[norms == 0.0] = 0.0
        np.add.at(grads["entity_emb"], cand, sign[:, None, None] * dV)
        dbase = dV.sum(axis=1)
        np.add.at(grads["relation_emb"], p_ids, dbase)
        np.add.at(grads["time_emb"], t_ids, dbase)
        np.add.at(grads["entity_emb"], o_ids[subj_side], -dbase[subj_side])
        np.add.at(grads["entity_emb"], s_ids[~subj_side], dbase[~subj_side])
        return

    _, s_ids, p_ids, o_ids, t_ids, cand, subj_side, C, other, p_seq, lstm_cache = cache
    weight = other * p_seq
    dC = dscores[:, :, None] * weight[:, None, :]
    np.add.at(grads["entity_emb"], cand, dC)
    dweight = np.einsum("bk,bkd->bd", dscores, C)
    dother = dweight * p_seq
    np.add.at(grads["entity_emb"], o_ids[subj_side], dother[subj_side])
    np.add.at(grads["entity_emb"], s_ids[~subj_side], dother[~subj_side])
    dp_seq = dweight * other
    dx1, dx2 = lstm_backward(params.lstm, lstm_cache, dp_seq, grads)
    np.add.at(grads["relation_emb"], p_ids, dx1)
    np.add.at(grads["time_emb"], t_ids, dx2)


BatchLoss = Callable[[np.ndarray, TrainingBatch], tuple[float, np.ndarray]]


def model_gradients(params: ModelParams, batch: TrainingBatch, loss_fn: BatchLoss) -> tuple[float, GradDict]:
    """Exact analytic gradients of a score-mediated loss over one batch.

    `loss_fn` maps candidate scores (B, K) to (loss value, dL/dscores);
    untouched parameters come back as zeros.
    """
    if len(batch) == 0:
        raise ValueError("batch is empty")
    scores, cache = batch_candidate_scores(params, batch)
    loss, dscores = loss_fn(scores, batch)
    grads = zero_grads(params)
    if np.any(dscores):
        backprop_candidate_scores(params, cache, dscores, grads)
    return loss, grads


def base_loss_fn(scores: np.ndarray, batch: TrainingBatch) -> tuple[float, np.ndarray]:
    """Hard-label cross-entropy against softmax scores, averaged over the batch."""
    n = scores.shape[0]
    total = 0.0
    dscores = np.zeros_like(scores)
    for i in range(n):
        probs = softmax_t(scores[i], 1.0)
        label = batch.labels[i]
        total += float(-np.sum(label * np.log(np.maximum(probs, 1e-12))))
        dscores[i] = (probs - label) / n
    return total / n, dscores


def base_training_loss(params: ModelParams, batch: TrainingBatch) -> float:
    """Value of the pretraining objective on one batch."""
    scores, _ = batch_candidate_scores(params, batch)
    loss, _ = base_loss_fn(scores, batch)
    return loss


# ---------------------------------------------------------------------------
# Adagrad


@dataclass
class AdagradState:
    """Per-parameter squared-gradient accumulators; monotonically non-decreasing."""

    learning_rate: float
    epsilon: float = 1e-10
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)


def adagrad_step(state: AdagradState, params: ModelParams | dict[str, np.ndarray], grads: GradDict):
    """theta -= lr * g / (sqrt(G) + eps) with G += g*g, applied in place."""
    arrays = params.named_arrays() if isinstance(params, ModelParams) else params
    for name, g in grads.items():
        arr = arrays[name]
        if arr.shape != g.shape:
            raise ValueError(f"shape mismatch for {name}: param {arr.shape} vs grad {g.shape}")
        acc = state.accumulators.get(name)
        if acc is None:
            acc = state.accumulators[name] = np.zeros_like(arr)
        acc += g * g
        arr -= state.learning_rate * g / (np.sqrt(acc) + state.epsilon)
    return params, state


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path, params: ModelParams, meta: dict | None = None) -> None:
    """Versioned npz container; write -> read round-trips bit-exactly."""
    payload = {
        "version": np.int64(CHECKPOINT_VERSION),
        "kind": np.str_(params.kind),
        "dim": np.int64(params.dim),
        "entity_emb": params.entity_emb,
        "relation_emb": params.relation_emb,
        "time_emb": params.time_emb,
        "meta": np.str_(json.dumps(meta or {}, sort_keys=True)),
    }
    if params.lstm is not None:
        for key in LSTM_KEYS:
            payload[f"lstm.{key}"] = params.lstm[key]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        kind = str(data["kind"])
        lstm = None
        if f"lstm.{LSTM_KEYS[0]}" in data:
            lstm = {key: data[f"lstm.{key}"] for key in LSTM_KEYS}
        params = ModelParams(
            kind=kind,
            dim=int(data["dim"]),
            entity_emb=data["entity_emb"],
            relation_emb=data["relation_emb"],
            time_emb=data["time_emb"],
            lstm=lstm,
        )
        meta = json.loads(str(data["meta"]))
    return params, meta

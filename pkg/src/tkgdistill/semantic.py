"""Semantic-embedding providers and the trainable projection head.

The "language model" side of distillation is abstracted as a provider of
fixed text embeddings per entity/relation label (from a file, a deterministic
stub, or a remote HTTP service). A small trainable head projects those
embeddings into the student's dimension and produces the relation-probability
vectors used by the semantic scoring pathway.
"""
from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests

from .datasets import Quadruple, TrainingBatch, Vocab
from .numerics import seeded_rng

STUB_DIM_DEFAULT = 384
ENTITY = "entity"
RELATION = "relation"


class ProviderError(RuntimeError):
    """Provider could not supply an embedding (after retries, for remote)."""


def stub_vector(kind: str, label: str, dim: int) -> np.ndarray:
    """Deterministic unit vector seeded by a stable hash of kind:label."""
    digest = hashlib.sha256(f"{kind}:{label}".encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    v = seeded_rng(seed).standard_normal(dim)
    return v / np.linalg.norm(v)


class StubProvider:
    """Offline provider: hash-seeded pseudo-random unit vectors."""

    kind = "stub"

    def __init__(self, dim_llm: int = STUB_DIM_DEFAULT):
        self.dim_llm = dim_llm
        self._cache: dict[tuple[str, str], np.ndarray] = {}

    def get(self, kind: str, label: str) -> np.ndarray:
        key = (kind, label)
        if key not in self._cache:
            self._cache[key] = stub_vector(kind, label, self.dim_llm)
        return self._cache[key]


class FileProvider:
    """Embeddings loaded from the exporter file format.

    Line 1 is the header ``dim<TAB><width>``; every following line is
    ``entity|relation<TAB>label<TAB>comma-separated floats``. When a vocab is
    given, the file must cover every label or loading fails.
    """

    kind = "file"

    def __init__(self, path, vocab: Vocab | None = None):
        path = Path(path)
        self._table: dict[tuple[str, str], np.ndarray] = {}
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split("\t")
            if len(header) != 2 or header[0] != "dim":
                raise ValueError(f"{path}: malformed header {header!r}")
            self.dim_llm = int(header[1])
            for lineno, line in enumerate(fh, start=2):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3 or parts[0] not in (ENTITY, RELATION):
                    raise ValueError(f"{path}:{lineno}: malformed record")
                vec = np.array([float(x) for x in parts[2].split(",")], dtype=np.float64)
                if vec.shape[0] != self.dim_llm:
                    raise ValueError(
                        f"{path}:{lineno}: vector has {vec.shape[0]} entries, header declares {self.dim_llm}"
                    )
                self._table[(parts[0], parts[1])] = vec
        if vocab is not None:
            missing = [n for n in vocab.entity_names if (ENTITY, n) not in self._table]
            missing += [n for n in vocab.relation_names if (RELATION, n) not in self._table]
            if missing:
                raise LookupError(
                    f"{path}: {len(missing)} vocab labels missing from embedding file "
                    f"(first few: {missing[:3]})"
                )

    def get(self, kind: str, label: str) -> np.ndarray:
        try:
            return self._table[(kind, label)]
        except KeyError:
            raise LookupError(f"no {kind} embedding for label {label!r}") from None


class RemoteProvider:
    """HTTP provider: POST {"texts": [...]} -> {"embeddings": [[...]]}.

    Each distinct label is fetched at most once per run; failures are retried
    with exponential backoff before raising ProviderError.
    """

    kind = "remote"

    def __init__(self, endpoint: str, token: str | None = None, max_retries: int = 3,
                 backoff: float = 0.5, post=None):
        self.endpoint = endpoint
        self.token = token
        self.max_retries = max_retries
        self.backoff = backoff
        self._post = post or self._requests_post
        self._cache: dict[str, np.ndarray] = {}
        self.fetch_count = 0
        self.dim_llm: int | None = None

    def _requests_post(self, texts: list[str]) -> list[list[float]]:
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        resp = requests.post(self.endpoint, json={"texts": texts}, headers=headers, timeout=30)
        resp.raise_for_status()
        return resp.json()["embeddings"]

    def _fetch(self, texts: list[str]) -> list[np.ndarray]:
        last_err: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                rows = self._post(texts)
                return [np.asarray(r, dtype=np.float64) for r in rows]
            except Exception as err:  # noqa: BLE001 - any transport failure is retryable
                last_err = err
                if attempt + 1 < self.max_retries:
                    time.sleep(self.backoff * 2**attempt)
        raise ProviderError(
            f"remote provider failed after {self.max_retries} attempts: {last_err}"
        ) from last_err

    def warm_up(self, labels: list[str], batch_size: int = 64) -> None:
        todo = [lb for lb in labels if lb not in self._cache]
        for start in range(0, len(todo), batch_size):
            chunk = todo[start : start + batch_size]
            for label, vec in zip(chunk, self._fetch(chunk)):
                self._cache[label] = vec
                self.fetch_count += 1
                if self.dim_llm is None:
                    self.dim_llm = vec.shape[0]

    def get(self, kind: str, label: str) -> np.ndarray:
        if label not in self._cache:
            self.warm_up([label])
        return self._cache[label]


def provider_get_embedding(provider, kind: str, label: str) -> np.ndarray:
    if kind not in (ENTITY, RELATION):
        raise ValueError(f"kind must be 'entity' or 'relation', got {kind!r}")
    return provider.get(kind, label)


# ---------------------------------------------------------------------------
# Projection head


@dataclass
class LlmProjectionHead:
    """Two softmax layers mapping provider vectors into the student dimension.

    E(label) = softmax(w_p @ llm_vec + b_p); for relations additionally
    P = softmax(w @ E + b). Trained jointly with the student.
    """

    w_p: np.ndarray
    b_p: np.ndarray
    w: np.ndarray
    b: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.w_p.shape[0]

    @property
    def dim_llm(self) -> int:
        return self.w_p.shape[1]

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {"w_p": self.w_p, "b_p": self.b_p, "w": self.w, "b": self.b}

    def clear_cache(self) -> None:
        self.cache.clear()


def init_head(dim: int, dim_llm: int, rng: np.random.Generator) -> LlmProjectionHead:
    r1 = 6.0 / np.sqrt(dim_llm)
    r2 = 6.0 / np.sqrt(dim)
    return LlmProjectionHead(
        w_p=rng.uniform(-r1, r1, size=(dim, dim_llm)),
        b_p=np.zeros(dim),
        w=rng.uniform(-r2, r2, size=(dim, dim)),
        b=np.zeros(dim),
    )


def zero_head_grads(head: LlmProjectionHead) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in head.named_arrays().items()}


def _row_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_vjp(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Backprop through row softmax: dz = y * (dy - <dy, y>)."""
    dot = np.sum(dy * y, axis=-1, keepdims=True)
    return y * (dy - dot)


def project_entities(head: LlmProjectionHead, llm_vecs: np.ndarray) -> np.ndarray:
    """E rows for a matrix of provider vectors: softmax(w_p @ v + b_p)."""
    return _row_softmax(llm_vecs @ head.w_p.T + head.b_p)


def project_relations(head: LlmProjectionHead, llm_vecs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(E, P) rows for relation provider vectors; P = softmax(w @ E + b)."""
    E = project_entities(head, llm_vecs)
    P = _row_softmax(E @ head.w.T + head.b)
    return E, P


def llm_project_relation(head: LlmProjectionHead, provider, vocab: Vocab, p: int):
    """Single-relation projection by id: returns (E(p), P(p))."""
    label = vocab.relation_names[p]
    E, P = project_relations(head, provider.get(RELATION, label)[None, :])
    return E[0], P[0]


def llm_teacher_score(
    head: LlmProjectionHead,
    provider,
    vocab: Vocab,
    fact: Quadruple,
    model_kind: str,
    time_vec: np.ndarray,
) -> float:
    """Semantic-pathway score of one fact under the student's scoring family.

    `time_vec` is the student's embedding of the fact's time bin (the time
    table is shared with the student).
    """
    E_s = project_entities(head, provider.get(ENTITY, vocab.entity_names[fact.s])[None, :])[0]
    E_o = project_entities(head, provider.get(ENTITY, vocab.entity_names[fact.o])[None, :])[0]
    _, P_p = llm_project_relation(head, provider, vocab, fact.p)
    if model_kind == "ttranse":
        return float(-np.linalg.norm(E_s + P_p - E_o + time_vec))
    return float(np.sum(E_s * E_o * P_p * time_vec))


# ---------------------------------------------------------------------------
# Batched pathway used during training


@dataclass
class SemanticPathway:
    """Provider vectors materialized for a whole vocab, plus the head."""

    head: LlmProjectionHead
    ent_vectors: np.ndarray  # (n_entities, dim_llm)
    rel_vectors: np.ndarray  # (n_relations, dim_llm)


def build_pathway(head: LlmProjectionHead, provider, vocab: Vocab) -> SemanticPathway:
    if hasattr(provider, "warm_up"):
        provider.warm_up(vocab.entity_names + vocab.relation_names)
    ents = np.stack([provider.get(ENTITY, n) for n in vocab.entity_names])
    rels = np.stack([provider.get(RELATION, n) for n in vocab.relation_names])
    return SemanticPathway(head=head, ent_vectors=ents, rel_vectors=rels)


def batch_llm_scores(pathway: SemanticPathway, batch: TrainingBatch, time_table: np.ndarray, model_kind: str):
    """Semantic scores (B, K) for every candidate, plus a backprop cache."""
    head = pathway.head
    pos = batch.positives
    s_ids = np.fromiter((f.s for f in pos), dtype=np.int64, count=len(pos))
    p_ids = np.fromiter((f.p for f in pos), dtype=np.int64, count=len(pos))
    o_ids = np.fromiter((f.o for f in pos), dtype=np.int64, count=len(pos))
    t_ids = np.fromiter((f.t for f in pos), dtype=np.int64, count=len(pos))
    subj_side = batch.sides == 0
    other_ids = np.where(subj_side, o_ids, s_ids)

    uniq_ents, inv = np.unique(np.concatenate([batch.cand_entities.ravel(), other_ids]), return_inverse=True)
    inv_cand = inv[: batch.cand_entities.size].reshape(batch.cand_entities.shape)
    inv_other = inv[batch.cand_entities.size :]
    uniq_rels, inv_p = np.unique(p_ids, return_inverse=True)

    Lv_e = pathway.ent_vectors[uniq_ents]
    E_u = project_entities(head, Lv_e)
    Lv_r = pathway.rel_vectors[uniq_rels]
    Ep_u, P_u = project_relations(head, Lv_r)

    E_cand = E_u[inv_cand]  # (B, K, d)
    E_other = E_u[inv_other]  # (B, d)
    P = P_u[inv_p]  # (B, d)
    T_v = time_table[t_ids]  # (B, d)

    if model_kind == "ttranse":
        sign = np.where(subj_side, 1.0, -1.0)
        base = np.where(subj_side[:, None], P - E_other + T_v, E_other + P + T_v)
        V = sign[:, None, None] * E_cand + base[:, None, :]
        norms = np.linalg.norm(V, axis=2)
        scores = -norms
        cache = ("ttranse", t_ids, subj_side, sign, V, norms,
                 uniq_ents, inv_cand, inv_other, uniq_rels, inv_p, Lv_e, E_u, Lv_r, Ep_u, P_u)
        return scores, cache

    weight = E_other * P * T_v
    scores = np.einsum("bkd,bd->bk", E_cand, weight)
    cache = ("tadistmult", t_ids, subj_side, E_cand, E_other, P, T_v,
             uniq_ents, inv_cand, inv_other, uniq_rels, inv_p, Lv_e, E_u, Lv_r, Ep_u, P_u)
    return scores, cache


def _head_backward(head, dE_u, dP_u, Lv_e, E_u, Lv_r, Ep_u, P_u, head_grads):
    dz_e = _softmax_vjp(E_u, dE_u)
    head_grads["w_p"] += dz_e.T @ Lv_e
    head_grads["b_p"] += dz_e.sum(axis=0)
    dz_p2 = _softmax_vjp(P_u, dP_u)
    head_grads["w"] += dz_p2.T @ Ep_u
    head_grads["b"] += dz_p2.sum(axis=0)
    dEp = dz_p2 @ head.w
    dz_p1 = _softmax_vjp(Ep_u, dEp)
    head_grads["w_p"] += dz_p1.T @ Lv_r
    head_grads["b_p"] += dz_p1.sum(axis=0)


def backprop_llm_scores(pathway: SemanticPathway, cache, dscores: np.ndarray,
                        head_grads: dict[str, np.ndarray], time_grads: np.ndarray) -> None:
    """Accumulate dL/dhead and dL/d(student time table) given dL/dscores."""
    head = pathway.head
    if cache[0] == "ttranse":
        (_, t_ids, subj_side, sign, V, norms,
         uniq_ents, inv_cand, inv_other, uniq_rels, inv_p, Lv_e, E_u, Lv_r, Ep_u, P_u) = cache
        safe = np.where(norms > 0.0, norms, 1.0)
        dV = (-dscores / safe)[:, :, None] * V
        dV[norms == 0.0] = 0.0
        dE_cand = sign[:, None, None] * dV
        dbase = dV.sum(axis=1)
        dE_other = np.where(subj_side[:, None], -dbase, dbase)
        dP = dbase
        dT_v = dbase
    else:
        (_, t_ids, subj_side, E_cand, E_other, P, T_v,
         uniq_ents, inv_cand, inv_other, uniq_rels, inv_p, Lv_e, E_u, Lv_r, Ep_u, P_u) = cache
        weight = E_other * P * T_v
        dE_cand = dscores[:, :, None] * weight[:, None, :]
        dweight = np.einsum("bk,bkd->bd", dscores, E_cand)
        dE_other = dweight * P * T_v
        dP = dweight * E_other * T_v
        dT_v = dweight * E_other * P

    np.add.at(time_grads, t_ids, dT_v)
    dE_u = np.zeros_like(E_u)
    np.add.at(dE_u, inv_cand, dE_cand)
    np.add.at(dE_u, inv_other, dE_other)
    dP_u = np.zeros_like(P_u)
    np.add.at(dP_u, inv_p, dP)
    _head_backward(head, dE_u, dP_u, Lv_e, E_u, Lv_r, Ep_u, P_u, head_grads)


def relation_alignment_loss(
    pathway: SemanticPathway,
    p_id: int,
    p_emb: np.ndarray,
    head_grads: dict[str, np.ndarray] | None = None,
    p_emb_grad: np.ndarray | None = None,
) -> float:
    """Squared L2 between softmax(student relation embedding) and P(p).

    Off by default in training (config flag); gradients are accumulated into
    head_grads / p_emb_grad when given.
    """
    head = pathway.head
    Lv_r = pathway.rel_vectors[p_id][None, :]
    Ep, P = project_relations(head, Lv_r)
    q = _row_softmax(p_emb[None, :])
    diff = q - P
    loss = float(np.sum(diff**2))
    if p_emb_grad is not None:
        p_emb_grad += _softmax_vjp(q, 2.0 * diff)[0]
    if head_grads is not None:
        dP = -2.0 * diff
        dz_p2 = _softmax_vjp(P, dP)
        head_grads["w"] += dz_p2.T @ Ep
        head_grads["b"] += dz_p2.sum(axis=0)
        dEp = dz_p2 @ head.w
        dz_p1 = _softmax_vjp(Ep, dEp)
        head_grads["w_p"] += dz_p1.T @ Lv_r
        head_grads["b_p"] += dz_p1.sum(axis=0)
    return loss


def save_head(path, head: LlmProjectionHead) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, w_p=head.w_p, b_p=head.b_p, w=head.w, b=head.b)


def load_head(path) -> LlmProjectionHead:
    with np.load(path) as data:
        return LlmProjectionHead(w_p=data["w_p"], b_p=data["b_p"], w=data["w"], b=data["b"])

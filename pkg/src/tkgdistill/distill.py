"""Distillation losses and the two-stage teacher/student trainer.

Loss stack (all score-level, higher score = more plausible):

* l1 - softened distillation against the embedding teacher: a
  temperature-scaled KL term mixed with hard-label cross-entropy.
* l2 - Huber loss between the semantic-pathway scores and student scores.
* l3 - mean squared error between the same two score vectors.
* baselines: plain softened KL (bkd), bkd plus a hint regressor on entity
  embeddings (fitnet), and relational distance/angle matching (rkd).

The trainer runs two stages: stage 1 aligns the student with the embedding
teacher only; stage 2 additionally activates the semantic-pathway terms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import evaluation
from .datasets import FactStore, TrainingBatch, Vocab, make_batches
from .models import (
    AdagradState,
    GradDict,
    ModelParams,
    adagrad_step,
    batch_candidate_scores,
    backprop_candidate_scores,
    save_checkpoint,
    zero_grads,
)
from .numerics import PROB_FLOOR, cross_entropy, kl_divergence, softmax_t
from .semantic import (
    LlmProjectionHead,
    ProviderError,
    SemanticPathway,
    backprop_llm_scores,
    batch_llm_scores,
    build_pathway,
    init_head,
    relation_alignment_loss,
    zero_head_grads,
)

METHODS = ("ours", "bkd", "fitnet", "rkd", "none")


@dataclass
class DistillConfig:
    """All loss weights, temperature, Huber threshold and the stage schedule."""

    alpha: float = 0.5
    beta: float = 0.1
    delta: float = 1.0
    temperature: float = 7.0
    stage1_epochs: int = 100
    stage2_epochs: int = 100
    method: str = "ours"
    l2_uses_alpha: bool = True  # False: total = l1 + l2 + beta*l3
    use_relation_path_loss: bool = False
    fitnet_weight: float = 1.0
    rkd_weight: float = 1.0
    rkd_max_points: int = 32

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.beta < 0.0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")
        if not self.delta > 0.0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not self.temperature > 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ValueError("stage epoch counts must be non-negative")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")

    @property
    def l2_weight(self) -> float:
        return self.alpha if self.l2_uses_alpha else 1.0


@dataclass
class LossBreakdown:
    l1: float = 0.0
    l2: float = 0.0
    l3_llm: float = 0.0
    total: float = 0.0


@dataclass
class ScoreRow:
    """Per-query candidate scores from the student and its teachers."""

    candidate_ids: np.ndarray
    student_scores: np.ndarray
    teacher_scores: np.ndarray | None = None
    llm_scores: np.ndarray | None = None

    def __post_init__(self):
        self.candidate_ids = np.asarray(self.candidate_ids)
        self.student_scores = np.asarray(self.student_scores, dtype=np.float64)
        n = self.candidate_ids.shape[0]
        for name in ("student_scores", "teacher_scores", "llm_scores"):
            v = getattr(self, name)
            if v is None:
                continue
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (n,):
                raise ValueError(f"{name} has shape {v.shape}, expected ({n},)")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} contains non-finite entries")
            setattr(self, name, v)


# ---------------------------------------------------------------------------
# Loss values


def huber(d: np.ndarray, delta: float) -> np.ndarray:
    """0.5*d^2 inside |d| <= delta, linear outside; continuous with its slope."""
    a = np.abs(d)
    return np.where(a <= delta, 0.5 * d * d, delta * a - 0.5 * delta * delta)


def huber_grad(d: np.ndarray, delta: float) -> np.ndarray:
    return np.clip(d, -delta, delta)


def loss_l1(row: ScoreRow, label: np.ndarray, alpha: float, temperature: float) -> float:
    """Softened distillation: alpha*t^2*KL(teacher||student) + (1-alpha)*hard CE."""
    if row.teacher_scores is None:
        raise RuntimeError("l1 requires teacher scores")
    kd = temperature**2 * kl_divergence(
        softmax_t(row.teacher_scores, temperature), softmax_t(row.student_scores, temperature)
    )
    ce = cross_entropy(label, softmax_t(row.student_scores, 1.0))
    return alpha * kd + (1.0 - alpha) * ce


def bkd_loss(row: ScoreRow, label: np.ndarray, temperature: float, mix: float) -> float:
    """Classic softened-KL distillation with a hard-label mixing weight."""
    return loss_l1(row, label, mix, temperature)


def loss_l2_huber(row: ScoreRow, delta: float) -> float:
    """Mean Huber loss between semantic-pathway and student scores."""
    if row.llm_scores is None:
        raise RuntimeError("l2 requires llm scores")
    return float(np.mean(huber(row.llm_scores - row.student_scores, delta)))


def loss_l3_llm(row: ScoreRow) -> float:
    """Mean squared error between semantic-pathway and student scores."""
    if row.llm_scores is None:
        raise RuntimeError("l3 requires llm scores")
    return float(np.mean((row.llm_scores - row.student_scores) ** 2))


def total_loss(l1: float, l2: float, l3_llm: float, config: DistillConfig) -> LossBreakdown:
    """Weighted combination of the three loss terms; inactive terms pass 0."""
    total = l1 + config.l2_weight * l2 + config.beta * l3_llm
    return LossBreakdown(l1=l1, l2=l2, l3_llm=l3_llm, total=total)


def fitnet_loss(student_hidden: np.ndarray, teacher_hidden: np.ndarray, regressor: np.ndarray) -> float:
    """0.5 * ||regressor @ student_hidden - teacher_hidden||^2."""
    student_hidden = np.asarray(student_hidden, dtype=np.float64)
    teacher_hidden = np.asarray(teacher_hidden, dtype=np.float64)
    if regressor.shape != (teacher_hidden.shape[0], student_hidden.shape[0]):
        raise ValueError(
            f"regressor shape {regressor.shape} does not map "
            f"{student_hidden.shape[0]} -> {teacher_hidden.shape[0]}"
        )
    r = regressor @ student_hidden - teacher_hidden
    return float(0.5 * np.sum(r * r))


# ---------------------------------------------------------------------------
# RKD: relational distance + angle matching


def _pairwise_stats(X: np.ndarray):
    D = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=2)
    iu = np.triu_indices(X.shape[0], k=1)
    d = D[iu]
    mu = float(d.mean())
    safe_mu = mu if mu > 0 else 1.0
    return D, iu, d, safe_mu


def _vertex_cosines(X: np.ndarray, j: int):
    diffs = X - X[j]
    r = np.linalg.norm(diffs, axis=1)
    r_safe = np.where(r > 0, r, 1.0)
    U = diffs / r_safe[:, None]
    C = U @ U.T
    return U, r_safe, C


def rkd_loss_and_grads(student: np.ndarray, teacher: np.ndarray, delta: float,
                       with_grads: bool = True):
    """Distance+angle relational loss and its gradient w.r.t. student embeddings.

    Distances on each side are normalized by that side's mean pairwise
    distance; the angle term compares cosines at every vertex over all ordered
    triplets of distinct points.
    """
    student = np.asarray(student, dtype=np.float64)
    teacher = np.asarray(teacher, dtype=np.float64)
    n = student.shape[0]
    if n < 3 or teacher.shape[0] != n:
        raise ValueError("rkd needs matching batches of at least 3 embeddings")

    Ds, iu, ds, mu_s = _pairwise_stats(student)
    _, _, dt, mu_t = _pairwise_stats(teacher)
    psi_s = ds / mu_s
    psi_t = dt / mu_t
    e = psi_s - psi_t
    n_pairs = len(ds)
    loss = float(np.mean(huber(e, delta)))
    dX = np.zeros_like(student)
    if with_grads:
        hp = huber_grad(e, delta)
        shared = float(np.sum(hp * ds)) / (n_pairs**2 * mu_s**2)
        dd = hp / (n_pairs * mu_s) - shared
        M = np.zeros((n, n))
        M[iu] = dd
        M = M + M.T
        D_safe = np.where(Ds > 0, Ds, 1.0)
        R = M / D_safe
        np.fill_diagonal(R, 0.0)
        dX += R.sum(axis=1)[:, None] * student - R @ student

    count = n * (n - 1) * (n - 2)
    mask = ~np.eye(n, dtype=bool)
    angle_loss = 0.0
    for j in range(n):
        Us, rs, Cs = _vertex_cosines(student, j)
        _, _, Ct = _vertex_cosines(teacher, j)
        valid = mask.copy()
        valid[j, :] = False
        valid[:, j] = False
        ea = np.where(valid, Cs - Ct, 0.0)
        angle_loss += float(np.sum(huber(ea, delta)[valid]))
        if with_grads:
            W = np.where(valid, huber_grad(ea, delta), 0.0) / count
            cw = (W * Cs).sum(axis=1)
            A = 2.0 * (W @ Us - cw[:, None] * Us) / rs[:, None]
            dX += A
            dX[j] -= A.sum(axis=0)
    loss += angle_loss / count
    return loss, dX


def rkd_loss(student_batch_embs, teacher_batch_embs, delta: float) -> float:
    loss, _ = rkd_loss_and_grads(
        np.asarray(student_batch_embs, dtype=np.float64),
        np.asarray(teacher_batch_embs, dtype=np.float64),
        delta,
        with_grads=False,
    )
    return loss


# ---------------------------------------------------------------------------
# Batched loss gradients (dL/dscores), averaged over the batch


def _row_softmax(scores: np.ndarray, temperature: float) -> np.ndarray:
    z = scores / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softened_kd_batch(teacher_scores: np.ndarray, student_scores: np.ndarray,
                      labels: np.ndarray, kd_weight: float, ce_weight: float,
                      temperature: float):
    """Mean softened-KL + hard-CE loss over a batch and dL/d(student scores)."""
    b = student_scores.shape[0]
    Pt = _row_softmax(teacher_scores, temperature)
    Ps = _row_softmax(student_scores, temperature)
    P1 = _row_softmax(student_scores, 1.0)
    pt = np.maximum(Pt, PROB_FLOOR)
    ps = np.maximum(Ps, PROB_FLOOR)
    kl = np.sum(pt * (np.log(pt) - np.log(ps)), axis=1)
    ce = -np.sum(labels * np.log(np.maximum(P1, PROB_FLOOR)), axis=1)
    loss = float(np.mean(kd_weight * temperature**2 * kl + ce_weight * ce))
    dscores = (kd_weight * temperature * (Ps - Pt) + ce_weight * (P1 - labels)) / b
    return loss, dscores


def hard_ce_batch(student_scores: np.ndarray, labels: np.ndarray):
    """Plain hard-label cross-entropy over a batch and dL/dscores."""
    b = student_scores.shape[0]
    P1 = _row_softmax(student_scores, 1.0)
    ce = -np.sum(labels * np.log(np.maximum(P1, PROB_FLOOR)), axis=1)
    return float(np.mean(ce)), (P1 - labels) / b


def huber_batch(llm_scores: np.ndarray, student_scores: np.ndarray, delta: float):
    """Mean Huber loss plus gradients w.r.t. both score matrices."""
    d = llm_scores - student_scores
    loss = float(np.mean(huber(d, delta)))
    g = huber_grad(d, delta) / d.size
    return loss, -g, g


def mse_batch(llm_scores: np.ndarray, student_scores: np.ndarray):
    d = llm_scores - student_scores
    loss = float(np.mean(d * d))
    g = 2.0 * d / d.size
    return loss, -g, g


def fitnet_batch(regressor: np.ndarray, student_hidden: np.ndarray, teacher_hidden: np.ndarray):
    """Mean hint loss over rows plus gradients w.r.t. regressor and student rows."""
    n = student_hidden.shape[0]
    r = student_hidden @ regressor.T - teacher_hidden
    loss = float(0.5 * np.sum(r * r) / n)
    d_reg = r.T @ student_hidden / n
    d_hidden = r @ regressor / n
    return loss, d_reg, d_hidden


# ---------------------------------------------------------------------------
# Trainer


@dataclass
class DistillResult:
    student: ModelParams
    log: list[dict]
    head: LlmProjectionHead | None = None
    regressor: np.ndarray | None = None


@dataclass
class _TrainState:
    opt_student: AdagradState
    head: LlmProjectionHead | None = None
    pathway: SemanticPathway | None = None
    opt_head: AdagradState | None = None
    regressor: np.ndarray | None = None
    opt_regressor: AdagradState | None = None


def _positive_ids(batch: TrainingBatch):
    b = len(batch)
    s = np.fromiter((f.s for f in batch.positives), dtype=np.int64, count=b)
    o = np.fromiter((f.o for f in batch.positives), dtype=np.int64, count=b)
    return s, o


def _batch_step(student, teacher, state: _TrainState, batch, config: DistillConfig, stage: int):
    scores_s, cache_s = batch_candidate_scores(student, batch)
    grads = zero_grads(student)
    head_grads = None
    reg_grad = None
    l2_val = 0.0
    l3_val = 0.0

    if config.method == "none":
        l1_val, dscores = hard_ce_batch(scores_s, batch.labels)
        total = l1_val
    elif config.method == "rkd":
        l1_val, dscores = hard_ce_batch(scores_s, batch.labels)
        s_ids, _ = _positive_ids(batch)
        ids = np.unique(s_ids)[: config.rkd_max_points]
        if len(ids) >= 3:
            l2_val, dX = rkd_loss_and_grads(
                student.entity_emb[ids], teacher.entity_emb[ids], config.delta
            )
            np.add.at(grads["entity_emb"], ids, config.rkd_weight * dX)
        total = l1_val + config.rkd_weight * l2_val
    else:
        scores_t, _ = batch_candidate_scores(teacher, batch)
        mix = config.alpha
        l1_val, dscores = softened_kd_batch(
            scores_t, scores_s, batch.labels, mix, 1.0 - mix, config.temperature
        )
        total = l1_val
        if config.method == "fitnet":
            s_ids, o_ids = _positive_ids(batch)
            ids = np.concatenate([s_ids, o_ids])
            l2_val, d_reg, d_hidden = fitnet_batch(
                state.regressor, student.entity_emb[ids], teacher.entity_emb[ids]
            )
            reg_grad = config.fitnet_weight * d_reg
            np.add.at(grads["entity_emb"], ids, config.fitnet_weight * d_hidden)
            total = l1_val + config.fitnet_weight * l2_val
        elif config.method == "ours" and stage == 2:
            head_grads = zero_head_grads(state.head)
            scores_l, cache_l = batch_llm_scores(
                state.pathway, batch, student.time_emb, student.kind
            )
            l2_val, dS2, dL2 = huber_batch(scores_l, scores_s, config.delta)
            l3_val, dS3, dL3 = mse_batch(scores_l, scores_s)
            w2 = config.l2_weight
            dscores = dscores + w2 * dS2 + config.beta * dS3
            backprop_llm_scores(
                state.pathway, cache_l, w2 * dL2 + config.beta * dL3,
                head_grads, grads["time_emb"],
            )
            if config.use_relation_path_loss:
                p_ids = np.fromiter((f.p for f in batch.positives), dtype=np.int64, count=len(batch))
                uniq, counts = np.unique(p_ids, return_counts=True)
                align = 0.0
                for p, c in zip(uniq, counts):
                    w = config.beta * c / len(batch)
                    g_p = np.zeros(student.dim)
                    h_scale = {k: np.zeros_like(v) for k, v in head_grads.items()}
                    align += relation_alignment_loss(
                        state.pathway, int(p), student.relation_emb[p], h_scale, g_p
                    ) * (c / len(batch))
                    grads["relation_emb"][p] += w * g_p
                    for k in head_grads:
                        head_grads[k] += w * h_scale[k]
                l3_val += align
            total = l1_val + w2 * l2_val + config.beta * l3_val

    backprop_candidate_scores(student, cache_s, dscores, grads)
    return LossBreakdown(l1=l1_val, l2=l2_val, l3_llm=l3_val, total=total), grads, head_grads, reg_grad


def two_stage_distill(
    teacher: ModelParams | None,
    student: ModelParams,
    provider,
    vocab: Vocab,
    store: FactStore,
    config: DistillConfig,
    rng: np.random.Generator,
    batch_size: int = 128,
    negatives: int = 10,
    learning_rate: float = 0.1,
    checkpoint_dir=None,
    valid_every: int = 10,
) -> DistillResult:
    """Train the student for stage1+stage2 epochs with frozen teachers.

    Stage 1 minimizes the teacher-alignment loss only; stage 2 adds the
    semantic-pathway terms (method "ours"). Baseline methods apply their own
    single objective in both stages. A provider failure mid-training saves a
    checkpoint of the last completed epoch under `checkpoint_dir` and
    re-raises.
    """
    if config.method != "none" and teacher is None:
        raise ValueError(f"method {config.method!r} requires a teacher")
    if config.method == "ours" and provider is None:
        raise ValueError("method 'ours' requires a semantic provider")

    state = _TrainState(opt_student=AdagradState(learning_rate))
    if config.method == "fitnet":
        r = 6.0 / math.sqrt(student.dim)
        state.regressor = rng.uniform(-r, r, size=(teacher.dim, student.dim))
        state.opt_regressor = AdagradState(learning_rate)

    log: list[dict] = []
    total_epochs = config.stage1_epochs + config.stage2_epochs
    last_completed = student.copy()
    try:
        for epoch in range(1, total_epochs + 1):
            stage = 1 if epoch <= config.stage1_epochs else 2
            if stage == 2 and config.method == "ours" and state.pathway is None:
                # deferred to the stage boundary: stage 1 never touches the provider
                if hasattr(provider, "warm_up"):
                    provider.warm_up(vocab.entity_names + vocab.relation_names)
                state.head = init_head(student.dim, provider.dim_llm, rng)
                state.opt_head = AdagradState(learning_rate)
                state.pathway = build_pathway(state.head, provider, vocab)
            batches = make_batches(store, vocab, batch_size, negatives, rng)
            sums = LossBreakdown()
            n_items = 0
            for batch in batches:
                parts, grads, head_grads, reg_grad = _batch_step(
                    student, teacher, state, batch, config, stage
                )
                adagrad_step(state.opt_student, student, grads)
                if head_grads is not None:
                    adagrad_step(state.opt_head, state.head.named_arrays(), head_grads)
                if reg_grad is not None:
                    adagrad_step(state.opt_regressor, {"regressor": state.regressor}, {"regressor": reg_grad})
                w = len(batch)
                n_items += w
                sums.l1 += parts.l1 * w
                sums.l2 += parts.l2 * w
                sums.l3_llm += parts.l3_llm * w
                sums.total += parts.total * w
            valid_mrr = None
            if store.valid and (epoch % valid_every == 0 or epoch == total_epochs):
                reports = evaluation.evaluate(
                    evaluation.EmbeddingScorer(student), store, "filtered", "valid"
                )
                valid_mrr = reports["filtered"].mrr
            log.append(
                {
                    "epoch": epoch,
                    "stage": stage,
                    "l1": sums.l1 / n_items,
                    "l2": sums.l2 / n_items,
                    "l3_llm": sums.l3_llm / n_items,
                    "total": sums.total / n_items,
                    "valid_mrr": valid_mrr,
                }
            )
            last_completed = student.copy()
    except ProviderError:
        if checkpoint_dir is not None:
            save_checkpoint(
                f"{checkpoint_dir}/student_last_epoch.npz",
                last_completed,
                {"aborted": True, "completed_epochs": len(log)},
            )
        raise
    return DistillResult(student=student, log=log, head=state.head, regressor=state.regressor)


def pretrain(
    params: ModelParams,
    vocab: Vocab,
    store: FactStore,
    epochs: int,
    rng: np.random.Generator,
    batch_size: int = 128,
    negatives: int = 10,
    learning_rate: float = 0.1,
    valid_every: int = 10,
) -> list[dict]:
    """Hard-label cross-entropy pretraining; returns the per-epoch log."""
    opt = AdagradState(learning_rate)
    log = []
    for epoch in range(1, epochs + 1):
        batches = make_batches(store, vocab, batch_size, negatives, rng)
        total = 0.0
        n_items = 0
        for batch in batches:
            scores, cache = batch_candidate_scores(params, batch)
            loss, dscores = hard_ce_batch(scores, batch.labels)
            grads = zero_grads(params)
            backprop_candidate_scores(params, cache, dscores, grads)
            adagrad_step(opt, params, grads)
            total += loss * len(batch)
            n_items += len(batch)
        valid_mrr = None
        if store.valid and (epoch % valid_every == 0 or epoch == epochs):
            reports = evaluation.evaluate(evaluation.EmbeddingScorer(params), store, "filtered", "valid")
            valid_mrr = reports["filtered"].mrr
        log.append(
            {
                "epoch": epoch,
                "stage": 0,
                "l1": total / n_items,
                "l2": 0.0,
                "l3_llm": 0.0,
                "total": total / n_items,
                "valid_mrr": valid_mrr,
            }
        )
    return log

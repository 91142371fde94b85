"""Ranking evaluation: MR, MRR, Hits@k in raw and time-aware-filtered settings."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import models
from .datasets import FactStore, Quadruple, Vocab
from .semantic import LlmProjectionHead, RELATION, project_entities, project_relations

SETTINGS = ("raw", "filtered")


@dataclass
class MetricsReport:
    mr: float
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    setting: str
    query_count: int


def rank_query(scores: np.ndarray, true_entity: int, filter_set: set[int] | None = None) -> float:
    """Fractional rank of the true entity; ties count half.

    Filtered candidates are removed before ranking. The true entity must never
    be part of the filter set.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if filter_set:
        if true_entity in filter_set:
            raise RuntimeError("true entity present in filter set (filtering invariant breached)")
        keep = np.ones(scores.shape[0], dtype=bool)
        keep[list(filter_set)] = False
        true_score = scores[true_entity]
        scores = scores[keep]
    else:
        true_score = scores[true_entity]
    better = int(np.sum(scores > true_score))
    ties = int(np.sum(scores == true_score)) - 1
    return 1.0 + better + ties / 2.0


class EmbeddingScorer:
    """Full-vocabulary score vectors for an embedding model."""

    def __init__(self, params: models.ModelParams):
        self.params = params

    def score_subjects(self, p: int, o: int, t: int) -> np.ndarray:
        return models.score_all_subjects(self.params, p, o, t)

    def score_objects(self, s: int, p: int, t: int) -> np.ndarray:
        return models.score_all_objects(self.params, s, p, t)


class SemanticScorer:
    """Standalone evaluation of the semantic pathway.

    Entity projections and per-relation P(p) are computed once and cached on
    the head, so repeated queries stay cheap.
    """

    def __init__(self, head: LlmProjectionHead, provider, vocab: Vocab,
                 time_table: np.ndarray, model_kind: str):
        self.model_kind = model_kind
        self.time_table = time_table
        key = "scorer_projections"
        if key not in head.cache:
            if hasattr(provider, "warm_up"):
                provider.warm_up(vocab.entity_names + vocab.relation_names)
            ent_vecs = np.stack([provider.get("entity", n) for n in vocab.entity_names])
            rel_vecs = np.stack([provider.get(RELATION, n) for n in vocab.relation_names])
            E = project_entities(head, ent_vecs)
            _, P = project_relations(head, rel_vecs)
            head.cache[key] = (E, P)
        self.E, self.P = head.cache[key]

    def _scores(self, fixed: np.ndarray, p: int, t: int) -> np.ndarray:
        tv = self.time_table[t]
        if self.model_kind == "ttranse":
            return -np.linalg.norm(self.E + (self.P[p] - fixed + tv), axis=1)
        return self.E @ (fixed * self.P[p] * tv)

    def score_subjects(self, p: int, o: int, t: int) -> np.ndarray:
        if self.model_kind == "ttranse":
            return -np.linalg.norm(self.E + (self.P[p] - self.E[o] + self.time_table[t]), axis=1)
        return self._scores(self.E[o], p, t)

    def score_objects(self, s: int, p: int, t: int) -> np.ndarray:
        if self.model_kind == "ttranse":
            return -np.linalg.norm((self.E[s] + self.P[p] + self.time_table[t]) - self.E, axis=1)
        return self._scores(self.E[s], p, t)


def _fact_ranks(scorer, store: FactStore, fact: Quadruple, filtered: bool) -> tuple[float, float]:
    s, p, o, t = fact
    subj_scores = scorer.score_subjects(p, o, t)
    obj_scores = scorer.score_objects(s, p, t)
    if filtered:
        subj_filter = store.known_subjects(p, o, t) - {s}
        obj_filter = store.known_objects(s, p, t) - {o}
    else:
        subj_filter = obj_filter = None
    return rank_query(subj_scores, s, subj_filter), rank_query(obj_scores, o, obj_filter)


def _ranks_to_report(ranks: list[float], setting: str) -> MetricsReport:
    r = np.asarray(ranks, dtype=np.float64)
    return MetricsReport(
        mr=float(r.mean()),
        mrr=float((1.0 / r).mean()),
        hits1=float((r <= 1).mean()),
        hits3=float((r <= 3).mean()),
        hits10=float((r <= 10).mean()),
        setting=setting,
        query_count=len(ranks),
    )


def evaluate(
    scorer,
    store: FactStore,
    setting: str = "both",
    split: str = "test",
    workers: int = 1,
) -> dict[str, MetricsReport]:
    """Rank every query of a split in one or both settings.

    Each fact contributes a subject query (?, p, o, t) and an object query
    (s, p, ?, t). Filtering removes entities that form other known-true facts
    at the same time bin. Results are keyed by setting name.
    """
    facts = store.splits()[split]
    if not facts:
        raise ValueError(f"split {split!r} is empty")
    wanted = list(SETTINGS) if setting == "both" else [setting]
    for name in wanted:
        if name not in SETTINGS:
            raise ValueError(f"unknown setting {name!r}")

    out = {}
    for name in wanted:
        filtered = name == "filtered"
        if workers > 1:
            def job(chunk):
                return [_fact_ranks(scorer, store, f, filtered) for f in chunk]

            # contiguous chunks, flattened in order: the rank list (and hence
            # every aggregate) is bitwise-identical to the sequential path
            step = -(-len(facts) // workers)
            chunks = [facts[i : i + step] for i in range(0, len(facts), step)]
            with ThreadPoolExecutor(max_workers=workers) as pool:
                per_chunk = list(pool.map(job, chunks))
            pairs = [pair for chunk in per_chunk for pair in chunk]
        else:
            pairs = [_fact_ranks(scorer, store, f, filtered) for f in facts]
        ranks = [r for pair in pairs for r in pair]
        out[name] = _ranks_to_report(ranks, name)
    return out


def report_payload(
    report: MetricsReport,
    model: str,
    method: str,
    dataset: str,
    seed: int,
    config_hash: str,
) -> dict:
    """Flat JSON record; MRR and Hits are expressed as percentages."""
    return {
        "model": model,
        "method": method,
        "dataset": dataset,
        "setting": report.setting,
        "mr": report.mr,
        "mrr": 100.0 * report.mrr,
        "hits1": 100.0 * report.hits1,
        "hits3": 100.0 * report.hits3,
        "hits10": 100.0 * report.hits10,
        "query_count": report.query_count,
        "seed": seed,
        "config_hash": config_hash,
    }


def write_metrics_json(path, payloads: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stamped = [dict(p, timestamp=datetime.now(timezone.utc).isoformat()) for p in payloads]
    path.write_text(json.dumps(stamped, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_metrics_csv(path, payloads: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = ["model", "method", "dataset", "setting", "mr", "mrr",
               "hits1", "hits3", "hits10", "query_count", "seed", "config_hash"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for p in payloads:
            writer.writerow(p)

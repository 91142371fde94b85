"""Embedding export: vocab TSVs in, provider-format embedding file out.

Output format (consumed by the training side's file provider):

    dim<TAB><width>
    entity|relation<TAB><label><TAB><comma-separated floats>

Stub mode generates the same hash-seeded unit vectors the training side uses
offline, so a stub export is a drop-in provider file. A real backend is an
HTTP endpoint speaking POST {"texts": [...]} -> {"embeddings": [[...]]}.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests


class ExportError(RuntimeError):
    """Export failed; no partial output file is left behind."""


def stub_vector(kind: str, label: str, dim: int) -> np.ndarray:
    """Deterministic unit vector seeded by a stable hash of kind:label.

    Must stay in lockstep with the training side's offline stub provider.
    """
    digest = hashlib.sha256(f"{kind}:{label}".encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    rng = np.random.Generator(np.random.PCG64(seed))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


@dataclass
class ExportJob:
    """Everything one export run needs; CLI flags mirror these fields."""

    entities_path: str
    relations_path: str
    output_path: str
    stub: bool = False
    dim: int = 384  # stub width; remote width comes from the backend
    endpoint: str = ""
    model: str = ""
    batch_size: int = 64
    template: str = "{label}"
    token: str = ""


def read_vocab_tsv(path) -> list[str]:
    """id<TAB>name rows; returns names ordered by id."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ExportError(f"{path}:{lineno}: expected id<TAB>name")
            try:
                rows.append((int(parts[0]), parts[1]))
            except ValueError:
                raise ExportError(f"{path}:{lineno}: non-integer id {parts[0]!r}") from None
    rows.sort()
    return [name for _, name in rows]


def _remote_batch(job: ExportJob, texts: list[str]) -> list[list[float]]:
    headers = {"Authorization": f"Bearer {job.token}"} if job.token else {}
    body = {"texts": texts}
    if job.model:
        body["model"] = job.model
    resp = requests.post(job.endpoint, json=body, headers=headers, timeout=60)
    resp.raise_for_status()
    return resp.json()["embeddings"]


def _fetch_vectors(job: ExportJob, labels: list[tuple[str, str]], post) -> tuple[list[np.ndarray], int]:
    if job.stub:
        return [stub_vector(kind, label, job.dim) for kind, label in labels], job.dim
    if not job.endpoint and post is None:
        raise ExportError("no backend: pass --stub or --endpoint")
    post = post or (lambda texts: _remote_batch(job, texts))
    vectors: list[np.ndarray] = []
    dim: int | None = None
    for start in range(0, len(labels), job.batch_size):
        chunk = labels[start : start + job.batch_size]
        texts = [job.template.format(kind=kind, label=label) for kind, label in chunk]
        try:
            rows = post(texts)
        except Exception as err:
            raise ExportError(f"backend failure on batch at offset {start}: {err}") from err
        for row in rows:
            v = np.asarray(row, dtype=np.float64)
            if dim is None:
                dim = v.shape[0]
            elif v.shape[0] != dim:
                raise ExportError(
                    f"dimension drift across batches: saw {v.shape[0]} after {dim}"
                )
            vectors.append(v)
    if len(vectors) != len(labels):
        raise ExportError(f"backend returned {len(vectors)} vectors for {len(labels)} labels")
    return vectors, int(dim)


def export_embeddings(job: ExportJob, post=None) -> dict:
    """Write the embedding file; returns {records, dim}.

    The file is assembled under a temporary name and moved into place, so a
    failing run never leaves a partial output. Stub-mode reruns with the same
    inputs are byte-identical.
    """
    entities = read_vocab_tsv(job.entities_path)
    relations = read_vocab_tsv(job.relations_path)
    labels = [("entity", name) for name in entities] + [("relation", name) for name in relations]

    out_path = Path(job.output_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    partial = out_path.with_name(out_path.name + ".partial")
    try:
        vectors, dim = _fetch_vectors(job, labels, post)
        with open(partial, "w", encoding="utf-8") as fh:
            fh.write(f"dim\t{dim}\n")
            for (kind, label), vec in zip(labels, vectors):
                if not np.all(np.isfinite(vec)):
                    raise ExportError(f"non-finite embedding for {kind} {label!r}")
                floats = ",".join(repr(float(x)) for x in vec)
                fh.write(f"{kind}\t{label}\t{floats}\n")
        os.replace(partial, out_path)
    except Exception:
        partial.unlink(missing_ok=True)
        raise
    return {"records": len(labels), "dim": dim}

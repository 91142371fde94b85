"""Quadruple datasets: parsing, vocabularies, time bins, corruptions, batching."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

SPLIT_FILES = ("train.txt", "valid.txt", "test.txt")

_YEAR_RE = re.compile(r"^(-?\d+)")


class ParseError(ValueError):
    """Malformed dataset row; carries file and line number."""

    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


class Quadruple(NamedTuple):
    """One temporal fact (s, p, o, t) over integer-id vocabularies."""

    s: int
    p: int
    o: int
    t: int


def time_key(raw: str, granularity: str = "year") -> int | None:
    """Chronological sort key for a raw timestamp; None for unparseable values.

    "year" extracts the leading (possibly negative) integer, so "1816-##-##",
    "1816-01-01" and "1816" all collapse to 1816. "exact" requires the whole
    field to be an integer.
    """
    raw = raw.strip()
    if granularity == "exact":
        try:
            return int(raw)
        except ValueError:
            return None
    m = _YEAR_RE.match(raw)
    return int(m.group(1)) if m else None


@dataclass
class Vocab:
    """Bijective name<->id maps for entities and relations plus the time-bin map.

    Entity and relation ids are assigned in order of first appearance across a
    single pass over all splits; time bins are assigned by sorting the distinct
    parsed timestamps, so bin ids respect chronological order. Rows whose
    timestamp cannot be parsed share one sentinel bin ordered after all known
    timestamps.
    """

    entity_names: list[str] = field(default_factory=list)
    entity_ids: dict[str, int] = field(default_factory=dict)
    relation_names: list[str] = field(default_factory=list)
    relation_ids: dict[str, int] = field(default_factory=dict)
    time_keys: list[int | None] = field(default_factory=list)
    time_bins: dict[int | None, int] = field(default_factory=dict)

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    @property
    def n_time_bins(self) -> int:
        return len(self.time_keys)

    def intern_entity(self, name: str) -> int:
        eid = self.entity_ids.get(name)
        if eid is None:
            eid = len(self.entity_names)
            self.entity_ids[name] = eid
            self.entity_names.append(name)
        return eid

    def intern_relation(self, name: str) -> int:
        rid = self.relation_ids.get(name)
        if rid is None:
            rid = len(self.relation_names)
            self.relation_ids[name] = rid
            self.relation_names.append(name)
        return rid

    def assign_time_bins(self, keys: set[int | None]) -> None:
        known = sorted(k for k in keys if k is not None)
        self.time_keys = list(known) + ([None] if None in keys else [])
        self.time_bins = {k: i for i, k in enumerate(self.time_keys)}

    def time_bin_label(self, bin_id: int) -> str:
        key = self.time_keys[bin_id]
        return "####" if key is None else str(key)


@dataclass
class FactStore:
    """Train/valid/test quadruples plus the known-fact set used for filtering."""

    train: list[Quadruple]
    valid: list[Quadruple]
    test: list[Quadruple]
    interval_ends: dict[str, list[str]] | None = None
    _known: set[Quadruple] | None = field(default=None, repr=False)
    _objects_by_spt: dict[tuple[int, int, int], set[int]] | None = field(default=None, repr=False)
    _subjects_by_pot: dict[tuple[int, int, int], set[int]] | None = field(default=None, repr=False)

    def splits(self) -> dict[str, list[Quadruple]]:
        return {"train": self.train, "valid": self.valid, "test": self.test}

    def all_facts(self) -> Iterator[Quadruple]:
        yield from self.train
        yield from self.valid
        yield from self.test

    @property
    def known_facts(self) -> set[Quadruple]:
        if self._known is None:
            self._known = set(self.all_facts())
        return self._known

    def _build_filter_index(self) -> None:
        objects: dict[tuple[int, int, int], set[int]] = {}
        subjects: dict[tuple[int, int, int], set[int]] = {}
        for s, p, o, t in self.all_facts():
            objects.setdefault((s, p, t), set()).add(o)
            subjects.setdefault((p, o, t), set()).add(s)
        self._objects_by_spt = objects
        self._subjects_by_pot = subjects

    def known_objects(self, s: int, p: int, t: int) -> set[int]:
        """Object entities o' with (s, p, o', t) known in any split."""
        if self._objects_by_spt is None:
            self._build_filter_index()
        return self._objects_by_spt.get((s, p, t), set())

    def known_subjects(self, p: int, o: int, t: int) -> set[int]:
        """Subject entities s' with (s', p, o, t) known in any split."""
        if self._subjects_by_pot is None:
            self._build_filter_index()
        return self._subjects_by_pot.get((p, o, t), set())

    def corruption_set(self, fact: Quadruple, vocab: "Vocab",
                       k: int | None = None, rng: np.random.Generator | None = None) -> list[Quadruple]:
        """Corruptions of one stored fact; see `corruptions`."""
        return corruptions(fact, vocab, k=k, rng=rng)


class TrainingBatch:
    """Positives with per-positive candidate sets and one-hot labels.

    Each positive's candidates corrupt exactly one side (`sides[i]` 0=subject,
    1=object); `cand_entities[i]` holds the entity occupying that slot for each
    candidate, true entity first, so labels are one-hot at index 0. The full
    candidate quadruples are materialized lazily.
    """

    def __init__(self, positives: list[Quadruple], labels: np.ndarray,
                 sides: np.ndarray, cand_entities: np.ndarray):
        self.positives = positives
        self.labels = labels
        self.sides = sides
        self.cand_entities = cand_entities
        self._candidates: list[list[Quadruple]] | None = None

    @property
    def candidates(self) -> list[list[Quadruple]]:
        if self._candidates is None:
            quads = []
            for fact, side, ents in zip(self.positives, self.sides, self.cand_entities):
                if side == 0:
                    quads.append([Quadruple(int(e), fact.p, fact.o, fact.t) for e in ents])
                else:
                    quads.append([Quadruple(fact.s, fact.p, int(e), fact.t) for e in ents])
            self._candidates = quads
        return self._candidates

    def __len__(self) -> int:
        return len(self.positives)


def _read_rows(path: Path, arity: int | None) -> tuple[list[list[str]], int]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            fields = line.split("\t")
            if arity is None:
                if len(fields) not in (4, 5):
                    raise ParseError(path, lineno, f"expected 4 or 5 tab-separated fields, got {len(fields)}")
                arity = len(fields)
            if len(fields) != arity:
                raise ParseError(path, lineno, f"expected {arity} tab-separated fields, got {len(fields)}")
            if any(not f.strip() for f in fields):
                raise ParseError(path, lineno, "empty field")
            rows.append(fields)
    return rows, arity if arity is not None else 4


def parse_dataset(
    path,
    format: str = "auto",
    granularity: str = "year",
    keep_interval_end: bool = False,
) -> tuple[Vocab, FactStore]:
    """Parse a dataset directory (train/valid/test.txt) or a single fact file.

    `format` is "four" (s, p, o, t), "five" (s, p, o, t_begin, t_end; collapsed
    to the begin timestamp) or "auto" (inferred from the first row and then
    enforced). A single file is treated as the train split.
    """
    path = Path(path)
    if format == "four":
        arity: int | None = 4
    elif format == "five":
        arity = 5
    elif format == "auto":
        arity = None
    else:
        raise ValueError(f"unknown format {format!r}")

    if path.is_dir():
        split_paths = {name.split(".")[0]: path / name for name in SPLIT_FILES}
        if not split_paths["train"].exists():
            raise FileNotFoundError(f"no train.txt under {path}")
    elif path.is_file():
        split_paths = {"train": path}
    else:
        raise FileNotFoundError(str(path))

    raw_splits: dict[str, list[list[str]]] = {}
    for split, fpath in split_paths.items():
        if not fpath.exists():
            continue
        raw_splits[split], arity = _read_rows(fpath, arity)

    vocab = Vocab()
    keys: set[int | None] = set()
    for split in ("train", "valid", "test"):
        for row in raw_splits.get(split, []):
            vocab.intern_entity(row[0])
            vocab.intern_relation(row[1])
            vocab.intern_entity(row[2])
            keys.add(time_key(row[3], granularity))
    vocab.assign_time_bins(keys)

    splits: dict[str, list[Quadruple]] = {"train": [], "valid": [], "test": []}
    ends: dict[str, list[str]] = {}
    for split in ("train", "valid", "test"):
        for row in raw_splits.get(split, []):
            splits[split].append(
                Quadruple(
                    vocab.entity_ids[row[0]],
                    vocab.relation_ids[row[1]],
                    vocab.entity_ids[row[2]],
                    vocab.time_bins[time_key(row[3], granularity)],
                )
            )
            if keep_interval_end and arity == 5:
                ends.setdefault(split, []).append(row[4])

    store = FactStore(splits["train"], splits["valid"], splits["test"], interval_ends=ends or None)
    return vocab, store


def write_vocab(vocab: Vocab, outdir) -> None:
    """Write entities.tsv / relations.tsv with id<TAB>name rows."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for fname, names in (("entities.tsv", vocab.entity_names), ("relations.tsv", vocab.relation_names)):
        with open(outdir / fname, "w", encoding="utf-8") as fh:
            for i, name in enumerate(names):
                fh.write(f"{i}\t{name}\n")


def write_facts(vocab: Vocab, store: FactStore, outdir) -> None:
    """Re-serialize facts as tab-separated name rows, one split file each."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for split, facts in store.splits().items():
        with open(outdir / f"{split}.txt", "w", encoding="utf-8") as fh:
            for s, p, o, t in facts:
                fh.write(
                    f"{vocab.entity_names[s]}\t{vocab.relation_names[p]}\t"
                    f"{vocab.entity_names[o]}\t{vocab.time_bin_label(t)}\n"
                )


def _nth_entity_excluding(idx: int, excluded: int) -> int:
    return idx if idx < excluded else idx + 1


def corruptions(
    fact: Quadruple,
    vocab: Vocab,
    k: int | None = None,
    rng: np.random.Generator | None = None,
) -> list[Quadruple]:
    """Corruption set of a fact: subject or object replaced by another entity.

    Full mode (k=None) enumerates all 2(|E|-1) corruptions; sampled mode draws
    k of them uniformly without replacement (k is capped at the set size).
    """
    n = vocab.n_entities
    s, p, o, t = fact
    total = 2 * (n - 1)
    if k is None:
        if total == 0:
            raise ValueError("cannot build a full corruption set with a single entity")
        out = [Quadruple(s2, p, o, t) for s2 in range(n) if s2 != s]
        out += [Quadruple(s, p, o2, t) for o2 in range(n) if o2 != o]
        return out
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if rng is None:
        raise ValueError("sampled mode requires an rng")
    picks = rng.choice(total, size=min(k, total), replace=False)
    out = []
    for idx in picks:
        idx = int(idx)
        if idx < n - 1:
            out.append(Quadruple(_nth_entity_excluding(idx, s), p, o, t))
        else:
            out.append(Quadruple(s, p, _nth_entity_excluding(idx - (n - 1), o), t))
    return out


def make_batches(
    store: FactStore,
    vocab: Vocab,
    batch_size: int,
    negatives_per_positive: int,
    rng: np.random.Generator,
) -> list[TrainingBatch]:
    """Shuffle training facts and chunk them into candidate-set batches.

    One side per positive (subject or object, uniform) is corrupted with
    `negatives_per_positive` entities sampled without replacement; the true
    entity sits at candidate index 0 so every label row is one-hot at 0.
    """
    if not store.train:
        raise ValueError("fact store has no training facts")
    if batch_size < 1 or negatives_per_positive < 1:
        raise ValueError("batch_size and negatives_per_positive must be >= 1")
    n_ents = vocab.n_entities
    k = min(negatives_per_positive, n_ents - 1)
    if k < 1:
        raise ValueError("need at least two entities to sample negatives")
    order = rng.permutation(len(store.train))
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = [store.train[i] for i in order[start : start + batch_size]]
        b = len(chunk)
        sides = rng.integers(0, 2, size=b)
        true_ents = np.fromiter(
            (f.s if side == 0 else f.o for f, side in zip(chunk, sides)), dtype=np.int64, count=b
        )
        # k smallest of i.i.d. uniforms = a uniform k-subset of the n-1 non-true slots
        noise = rng.random((b, n_ents - 1))
        picks = np.argpartition(noise, k - 1, axis=1)[:, :k] if k < n_ents - 1 else np.tile(
            np.arange(n_ents - 1), (b, 1)
        )
        negs = picks + (picks >= true_ents[:, None])
        cand_entities = np.concatenate([true_ents[:, None], negs], axis=1)
        labels = np.zeros(cand_entities.shape, dtype=np.float64)
        labels[:, 0] = 1.0
        batches.append(TrainingBatch(chunk, labels, np.asarray(sides), cand_entities))
    return batches

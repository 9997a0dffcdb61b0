"""Knowledge-graph container, triple-file ingestion and the filter index."""

from __future__ import annotations

import hashlib
import os
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple, Sequence

import numpy as np

SPLITS = ("train", "valid", "test")

Triple = tuple[int, int, int]


class Query(NamedTuple):
    """A tail-prediction query ``(head, relation, ?)`` with its gold answer."""

    head: int
    relation: int
    target: int


@dataclass(frozen=True)
class KnowledgeGraph:
    entities: tuple[str, ...]
    relations: tuple[str, ...]
    train: tuple[Triple, ...] = ()
    valid: tuple[Triple, ...] = ()
    test: tuple[Triple, ...] = ()
    reverse_augmented: bool = False

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def split(self, name: str) -> tuple[Triple, ...]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}, expected one of {SPLITS}")
        return getattr(self, name)

    def all_triples(self) -> Iterable[Triple]:
        for name in SPLITS:
            yield from self.split(name)

    def validate(self) -> None:
        """Raise ``ValueError`` if any structural invariant is broken."""
        n_e, n_r = self.n_entities, self.n_relations
        for name in SPLITS:
            for h, r, t in self.split(name):
                if not (0 <= h < n_e and 0 <= t < n_e and 0 <= r < n_r):
                    raise ValueError(f"out-of-range triple {(h, r, t)} in {name}")
        sets = [set(self.split(name)) for name in SPLITS]
        for i in range(3):
            for j in range(i + 1, 3):
                common = sets[i] & sets[j]
                if common:
                    raise ValueError(
                        f"splits {SPLITS[i]} and {SPLITS[j]} share {len(common)} triples"
                    )
        if self.reverse_augmented and n_r % 2:
            raise ValueError("reverse-augmented graph must have an even relation count")


class FilterIndex:
    """Map ``(head, relation) -> frozenset of known tails`` over all splits."""

    def __init__(self, mapping: dict[tuple[int, int], frozenset[int]]):
        self._map = mapping

    def __getitem__(self, key: tuple[int, int]) -> frozenset[int]:
        return self._map.get(key, frozenset())

    def __contains__(self, key) -> bool:
        return key in self._map

    def __len__(self) -> int:
        return len(self._map)

    def items(self):
        return self._map.items()

    @classmethod
    def from_triples(cls, triples: Iterable[Triple]) -> "FilterIndex":
        acc: dict[tuple[int, int], set[int]] = defaultdict(set)
        for h, r, t in triples:
            acc[(h, r)].add(t)
        return cls({k: frozenset(v) for k, v in acc.items()})


class TripleFormatError(ValueError):
    pass


def _read_lines(path, separator):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split(separator)
            if len(fields) != 3 or any(not f for f in fields):
                raise TripleFormatError(
                    f"{path}:{lineno}: expected 3 fields separated by {separator!r}, "
                    f"got {len(fields)}"
                )
            rows.append(tuple(fields))
    return rows


def load_triples(
    path: str | os.PathLike,
    separator: str = "\t",
    valid_path: str | os.PathLike | None = None,
    test_path: str | os.PathLike | None = None,
) -> KnowledgeGraph:
    """Load triple files into a :class:`KnowledgeGraph`.

    ``path`` is the train file; valid and test files are optional. Entity and
    relation indices are assigned in order of first appearance, scanning
    train, then valid, then test, so identifiers seen only in valid/test are
    still admitted.
    """
    ent_ix: dict[str, int] = {}
    rel_ix: dict[str, int] = {}
    splits: dict[str, list[Triple]] = {}
    for name, p in zip(SPLITS, (path, valid_path, test_path)):
        triples: list[Triple] = []
        if p is not None:
            if not os.path.exists(p):
                raise FileNotFoundError(f"triple file not found: {p}")
            for h, r, t in _read_lines(p, separator):
                hi = ent_ix.setdefault(h, len(ent_ix))
                ri = rel_ix.setdefault(r, len(rel_ix))
                ti = ent_ix.setdefault(t, len(ent_ix))
                triples.append((hi, ri, ti))
        splits[name] = triples
    kg = KnowledgeGraph(
        entities=tuple(ent_ix),
        relations=tuple(rel_ix),
        train=tuple(splits["train"]),
        valid=tuple(splits["valid"]),
        test=tuple(splits["test"]),
    )
    return kg


def write_triples(kg: KnowledgeGraph, split: str, path, separator: str = "\t") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in kg.split(split):
            fh.write(f"{kg.entities[h]}{separator}{kg.relations[r]}{separator}{kg.entities[t]}\n")


def add_reverse_relations(kg: KnowledgeGraph) -> KnowledgeGraph:
    """Append an inverse relation ``r + |R|`` for every relation ``r``.

    Every triple ``(h, r, t)`` gets a companion ``(t, r + |R|, h)`` in the same
    split, so head prediction becomes tail prediction on the inverse.
    """
    if kg.reverse_augmented:
        raise ValueError("graph already has reverse relations")
    n_r = kg.n_relations
    relations = kg.relations + tuple(f"{r}_reverse" for r in kg.relations)
    new = {
        name: kg.split(name) + tuple((t, r + n_r, h) for h, r, t in kg.split(name))
        for name in SPLITS
    }
    return replace(kg, relations=relations, reverse_augmented=True, **new)


def build_filter_index(kg: KnowledgeGraph) -> FilterIndex:
    if not kg.reverse_augmented:
        raise ValueError("filter index requires a reverse-augmented graph")
    return FilterIndex.from_triples(kg.all_triples())


def queries_from_split(kg: KnowledgeGraph, split: str) -> list[Query]:
    if not kg.reverse_augmented:
        raise ValueError("queries require a reverse-augmented graph")
    return [Query(h, r, t) for h, r, t in kg.split(split)]


def fingerprint(paths: Sequence[str | os.PathLike]) -> str:
    """SHA-256 over the concatenated bytes of the given files."""
    digest = hashlib.sha256()
    for p in paths:
        with open(p, "rb") as fh:
            digest.update(hashlib.sha256(fh.read()).digest())
    return digest.hexdigest()


# --- synthetic graphs used by tests, demos and the acceptance suite ---


def chain_kg(n_entities: int = 20, n_relation_types: int = 2) -> KnowledgeGraph:
    """Path graph ``e0 -> e1 -> ... -> e{n-1}``; edge i uses relation ``i mod k``.

    All edges land in ``train``; the graph is not reverse-augmented.
    """
    entities = tuple(f"e{i}" for i in range(n_entities))
    relations = tuple(f"next{k}" for k in range(n_relation_types))
    triples = tuple((i, i % n_relation_types, i + 1) for i in range(n_entities - 1))
    return KnowledgeGraph(entities, relations, train=triples)


def synthetic_kg(
    n_entities: int = 100,
    n_relations: int = 10,
    n_triples: int = 1000,
    seed: int = 0,
    cluster_size: int = 5,
    valid_frac: float = 0.1,
    test_frac: float = 0.1,
    noise_frac: float = 0.05,
) -> KnowledgeGraph:
    """Random graph with learnable latent-cluster structure.

    Entities are split into clusters of ``cluster_size``; every relation maps
    each cluster to a random target cluster, and the tail of a triple is a
    uniform member of the target cluster of its head. A fraction
    ``noise_frac`` of tails is uniform over all entities instead.
    """
    rng = np.random.default_rng(seed)
    cluster = rng.permutation(n_entities) % max(1, n_entities // cluster_size)
    n_clusters = int(cluster.max()) + 1
    members = [np.flatnonzero(cluster == c) for c in range(n_clusters)]
    target = rng.integers(n_clusters, size=(n_relations, n_clusters))
    seen: set[Triple] = set()
    triples: list[Triple] = []
    attempts = 0
    while len(triples) < n_triples and attempts < 50 * n_triples:
        attempts += 1
        r = int(rng.integers(n_relations))
        h = int(rng.integers(n_entities))
        if rng.random() < noise_frac:
            t = int(rng.integers(n_entities))
        else:
            pool = members[target[r, cluster[h]]]
            t = int(pool[rng.integers(len(pool))])
        if t == h or (h, r, t) in seen:
            continue
        seen.add((h, r, t))
        triples.append((h, r, t))
    n_valid = int(round(valid_frac * len(triples)))
    n_test = int(round(test_frac * len(triples)))
    test = tuple(triples[:n_test])
    valid = tuple(triples[n_test : n_test + n_valid])
    train = tuple(triples[n_test + n_valid :])
    return KnowledgeGraph(
        entities=tuple(f"e{i}" for i in range(n_entities)),
        relations=tuple(f"r{i}" for i in range(n_relations)),
        train=train,
        valid=valid,
        test=test,
    )


def grid_kg(
    side: int = 11,
    n_relations: int = 12,
    max_shift: int = 2,
    seed: int = 0,
    valid_frac: float = 0.1,
    test_frac: float = 0.1,
    noise_frac: float = 0.05,
) -> KnowledgeGraph:
    """Entities on a ``side x side`` grid; each relation is a fixed shift.

    Relation ``r`` sends cell ``(x, y)`` to ``(x + dx_r, y + dy_r)`` with
    distinct non-zero shifts bounded by ``max_shift``; a triple exists for
    every head whose shifted cell stays on the grid. A fraction
    ``noise_frac`` of tails is replaced by a uniform random entity. Triples
    are shuffled before the split.
    """
    rng = np.random.default_rng(seed)
    n = side * side
    offsets = [
        (dx, dy)
        for dx in range(-max_shift, max_shift + 1)
        for dy in range(-max_shift, max_shift + 1)
        if (dx, dy) != (0, 0)
    ]
    if n_relations > len(offsets):
        raise ValueError(f"at most {len(offsets)} relations with max_shift={max_shift}")
    shifts = [offsets[i] for i in rng.choice(len(offsets), size=n_relations, replace=False)]
    triples: list[Triple] = []
    seen: set[Triple] = set()
    for r, (dx, dy) in enumerate(shifts):
        for h in range(n):
            x, y = divmod(h, side)
            if not (0 <= x + dx < side and 0 <= y + dy < side):
                continue
            t = (x + dx) * side + (y + dy)
            if rng.random() < noise_frac:
                t = int(rng.integers(n))
            if t != h and (h, r, t) not in seen:
                seen.add((h, r, t))
                triples.append((h, r, t))
    triples = [triples[i] for i in rng.permutation(len(triples))]
    n_valid = int(round(valid_frac * len(triples)))
    n_test = int(round(test_frac * len(triples)))
    return KnowledgeGraph(
        entities=tuple(f"e{i}" for i in range(n)),
        relations=tuple(f"shift{r}" for r in range(n_relations)),
        train=tuple(triples[n_test + n_valid :]),
        valid=tuple(triples[n_test : n_test + n_valid]),
        test=tuple(triples[:n_test]),
    )

"""Filtered link-prediction metrics, perturbed evaluation and multi-hop
projection queries."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .kg import FilterIndex, KnowledgeGraph, Query
from .models import EmbeddingModel, score_all_tails, score_heads_all_tails
from .train import sigma_quantile


@dataclass(frozen=True)
class RankingMetrics:
    mrr: float
    mr: float
    hits1: float
    hits3: float
    hits10: float
    n: int
    condition: str = "clean"
    alpha: float = 0.0
    seed: int | None = None

    def as_dict(self) -> dict:
        return {
            "condition": self.condition,
            "alpha": self.alpha,
            "seed": self.seed,
            "n": self.n,
            "mrr": self.mrr,
            "mr": self.mr,
            "hits1": self.hits1,
            "hits3": self.hits3,
            "hits10": self.hits10,
        }


@dataclass(frozen=True)
class PathQuery:
    anchor: int
    relations: tuple[int, ...]
    answers: frozenset[int]
    target: int

    @property
    def hops(self) -> int:
        return len(self.relations)


def rank_from_scores(scores: np.ndarray, target: int, masked: Iterable[int] = ()) -> float:
    """Mean-tie rank of ``target`` after masking ``masked`` (never the target).

    With ``b`` strictly better candidates and ``e`` candidates tied with the
    target (target included), the rank is ``b + (e + 1) / 2``.
    """
    s = np.array(scores, dtype=np.float64, copy=True)
    for m in masked:
        if m != target:
            s[m] = -np.inf
    gold = s[target]
    better = int(np.count_nonzero(s > gold))
    ties = int(np.count_nonzero(s == gold))
    return better + (ties + 1) / 2.0


def filtered_rank(
    model: EmbeddingModel,
    query: Query,
    filter_index: FilterIndex,
    head_override: np.ndarray | None = None,
) -> float:
    h_vec = model.entity[query.head] if head_override is None else head_override
    scores = score_all_tails(model, h_vec, query.relation)
    return rank_from_scores(scores, query.target, filter_index[(query.head, query.relation)])


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def metrics_from_ranks(ranks: Sequence[float], **meta) -> RankingMetrics:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("no ranks to aggregate")
    int_ranks = np.array([_round_half_up(x) for x in ranks], dtype=np.float64)
    return RankingMetrics(
        mrr=float(np.mean(1.0 / ranks)),
        mr=float(np.mean(int_ranks)),
        hits1=float(np.mean(ranks <= 1)),
        hits3=float(np.mean(ranks <= 3)),
        hits10=float(np.mean(ranks <= 10)),
        n=int(ranks.size),
        **meta,
    )


def perturb_entities(model: EmbeddingModel, alpha: float, seed: int) -> EmbeddingModel:
    """Copy of ``model`` with every entity row shifted by ``alpha * eps``,
    ``eps ~ N(0, sigma^2)`` and ``sigma`` the quantile rule on ``model``."""
    sigma = sigma_quantile(model.entity)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=model.entity.shape)
    return model.with_entity_table(model.entity + alpha * noise)


def query_ranks(
    model: EmbeddingModel, queries: Sequence[Query], filter_index: FilterIndex, chunk: int = 256
) -> np.ndarray:
    ranks = np.empty(len(queries))
    for lo in range(0, len(queries), chunk):
        part = queries[lo : lo + chunk]
        heads = np.array([q.head for q in part], dtype=np.int64)
        rels = np.array([q.relation for q in part], dtype=np.int64)
        scores = score_heads_all_tails(model, model.entity[heads], rels)
        for i, q in enumerate(part):
            ranks[lo + i] = rank_from_scores(scores[i], q.target, filter_index[(q.head, q.relation)])
    return ranks


def link_prediction(
    model: EmbeddingModel,
    queries: Sequence[Query],
    filter_index: FilterIndex,
    alpha: float | None = None,
    seed: int = 0,
) -> RankingMetrics:
    """Filtered MRR / MR / Hits@k.

    ``alpha=None`` evaluates the clean model. Otherwise every entity
    embedding (heads and candidate tails alike) is perturbed once for the
    whole run before ranking.
    """
    if len(queries) == 0:
        raise ValueError("empty query set")
    if alpha is None:
        return metrics_from_ranks(query_ranks(model, queries, filter_index))
    noisy = perturb_entities(model, alpha, seed)
    ranks = query_ranks(noisy, queries, filter_index)
    return metrics_from_ranks(ranks, condition="perturbed", alpha=float(alpha), seed=seed)


# --- multi-hop projection queries ---------------------------------------


def _adjacency(triples: Iterable[tuple[int, int, int]]):
    out: dict[tuple[int, int], set[int]] = {}
    incoming: dict[int, list[tuple[int, int]]] = {}
    for h, r, t in triples:
        out.setdefault((h, r), set()).add(t)
        incoming.setdefault(t, []).append((h, r))
    for v in incoming.values():
        v.sort()
    return out, incoming


def _reachable(out, anchor: int, relations: Sequence[int]) -> frozenset[int]:
    frontier = {anchor}
    for r in relations:
        nxt: set[int] = set()
        for e in frontier:
            nxt |= out.get((e, r), set())
        frontier = nxt
    return frozenset(frontier)


def enumerate_path_queries(
    kg: KnowledgeGraph, split: str, hops: int, cap: int = 1000, seed: int = 0
) -> list[PathQuery]:
    """Sample up to ``cap`` distinct projection queries of length ``hops``.

    The last edge of every path comes from ``split``; earlier edges are
    walked backwards at random through all splits. Answers are everything
    reachable from the anchor by the relation sequence over all splits.
    ``hops=1`` yields one query per triple of the split, in split order.
    """
    if hops not in (1, 2, 3):
        raise ValueError("hops must be 1, 2 or 3")
    if cap <= 0:
        return []
    out, incoming = _adjacency(kg.all_triples())
    last_edges = kg.split(split)
    if hops == 1:
        return [
            PathQuery(h, (r,), frozenset(out[(h, r)]), t) for h, r, t in last_edges[:cap]
        ]
    rng = np.random.default_rng(seed)
    seen: set[tuple[int, tuple[int, ...], int]] = set()
    queries: list[PathQuery] = []
    for i in rng.permutation(len(last_edges)):
        m, r_last, target = last_edges[i]
        rels = [r_last]
        node = m
        for _ in range(hops - 1):
            preds = incoming.get(node)
            if not preds:
                break
            prev, r = preds[int(rng.integers(len(preds)))]
            rels.insert(0, r)
            node = prev
        if len(rels) < hops:
            continue
        key = (node, tuple(rels), target)
        if key in seen:
            continue
        seen.add(key)
        queries.append(PathQuery(node, tuple(rels), _reachable(out, node, rels), target))
        if len(queries) >= cap:
            break
    return queries


def path_scores(model: EmbeddingModel, pq: PathQuery, beam: int = 32) -> np.ndarray:
    """Max-of-sums beam search; unreached entities score ``-inf``.

    Hop 1 scores every entity from the anchor. Each later hop expands the
    ``beam`` best entities of the previous hop, adding per-hop scores, and an
    entity keeps the best total over all beam paths reaching it.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    n = model.n_entities
    acc = score_all_tails(model, model.entity[pq.anchor], pq.relations[0])
    for r in pq.relations[1:]:
        order = np.argsort(-acc, kind="stable")[: min(beam, n)]
        order = order[np.isfinite(acc[order])]
        step = score_heads_all_tails(model, model.entity[order], np.full(len(order), r))
        totals = acc[order][:, None] + step
        acc = totals.max(axis=0) if len(order) else np.full(n, -np.inf)
    return acc


def answer_path_query(model: EmbeddingModel, pq: PathQuery, beam: int = 32) -> np.ndarray:
    """Entities ranked best first (ties: lower index first)."""
    return np.argsort(-path_scores(model, pq, beam), kind="stable")


def multihop_metrics(
    model: EmbeddingModel,
    queries: Sequence[PathQuery],
    filter_index: FilterIndex | None = None,
    beam: int = 32,
) -> dict[int, RankingMetrics]:
    """Per-hop filtered metrics keyed by hop count.

    Each query is ranked for its target with every other known answer masked;
    for one-hop queries the filter index (if given) is masked as well.
    """
    groups: dict[int, list[float]] = {}
    for pq in queries:
        masked = set(pq.answers)
        if filter_index is not None and pq.hops == 1:
            masked |= filter_index[(pq.anchor, pq.relations[0])]
        rank = rank_from_scores(path_scores(model, pq, beam), pq.target, masked)
        groups.setdefault(pq.hops, []).append(rank)
    if not groups:
        raise ValueError("no path queries to evaluate")
    return {h: metrics_from_ranks(groups[h], condition=f"{h}p") for h in sorted(groups)}

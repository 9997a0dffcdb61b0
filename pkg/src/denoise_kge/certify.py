"""Randomized-smoothing certification of link-prediction queries.

For a query ``(h, r, ?)`` with gold tail ``t`` the base classifier is the
filtered top-1 prediction from the head embedding. Gaussian noise
``N(0, sigma^2)`` is added to the head embedding ``n0`` times; the number of
correct predictions gives a Clopper-Pearson lower bound ``p_lower`` at
confidence ``C`` and, when ``p_lower > 1/2``, the certified L2 radius
``sigma * Phi^-1(p_lower)``. Abstentions are recorded with radius 0.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kg import FilterIndex, Query
from .models import EmbeddingModel, score_all_tails
from .stats import clopper_pearson_lcb, phi_inverse


@dataclass(frozen=True)
class CertConfig:
    n0: int = 1000
    confidence: float = 0.999
    sigma: float = 0.0
    seed: int = 0
    chunk: int = 250

    def validate(self) -> None:
        if self.n0 < 1:
            raise ValueError("n0 must be >= 1")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must be in (0, 1)")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


@dataclass(frozen=True)
class CertificationRecord:
    query: Query
    count: int
    n0: int
    p_lower: float
    cr: float
    sigma: float

    @property
    def certified(self) -> bool:
        return self.cr > 0.0


@dataclass(frozen=True)
class RobustnessReport:
    acr: float
    acr_over_sigma: float
    ca_curve: tuple[tuple[float, float], ...]
    ca0: float
    n: int
    sigma: float


def _other_true_tails(query: Query, filter_index: FilterIndex | None) -> np.ndarray:
    if filter_index is None:
        return np.empty(0, dtype=np.int64)
    others = sorted(filter_index[(query.head, query.relation)] - {query.target})
    return np.array(others, dtype=np.int64)


def _top1_hits(model: EmbeddingModel, query: Query, heads: np.ndarray, masked: np.ndarray) -> np.ndarray:
    rels = np.full(len(heads), query.relation, dtype=np.int64)
    scores = model.kernel.scores(heads, model.relation[rels], model.entity)
    if masked.size:
        scores[:, masked] = -np.inf
    return np.argmax(scores, axis=1) == query.target


def smoothed_trial(
    model: EmbeddingModel,
    query: Query,
    sigma: float,
    rng: np.random.Generator,
    filter_index: FilterIndex | None = None,
) -> bool:
    """One noisy top-1 prediction; ties go to the lowest entity index."""
    h_vec = model.entity[query.head] + rng.normal(0.0, sigma, size=model.entity.shape[1])
    scores = score_all_tails(model, h_vec, query.relation)
    masked = _other_true_tails(query, filter_index)
    if masked.size:
        scores[masked] = -np.inf
    return bool(np.argmax(scores) == query.target)


def count_successes(
    model: EmbeddingModel,
    query: Query,
    sigma: float,
    n0: int,
    rng: np.random.Generator,
    filter_index: FilterIndex | None = None,
    chunk: int = 250,
) -> int:
    """Number of correct noisy predictions out of ``n0``.

    The noise block is drawn up front, so the count does not depend on
    ``chunk``.
    """
    noise = rng.normal(0.0, sigma, size=(n0, model.entity.shape[1]))
    heads = model.entity[query.head] + noise
    masked = _other_true_tails(query, filter_index)
    count = 0
    for lo in range(0, n0, chunk):
        count += int(np.count_nonzero(_top1_hits(model, query, heads[lo : lo + chunk], masked)))
    return count


def certified_radius(count: int, n0: int, confidence: float, sigma: float) -> tuple[float, float]:
    """``(p_lower, cr)`` for ``count`` successes out of ``n0``."""
    p_lower = clopper_pearson_lcb(n0, count, confidence)
    if p_lower > 0.5 and sigma > 0:
        return p_lower, sigma * phi_inverse(p_lower)
    return p_lower, 0.0


def query_rng(seed: int, query_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, query_id]))


def certify_query(
    model: EmbeddingModel,
    query: Query,
    config: CertConfig,
    rng: np.random.Generator,
    filter_index: FilterIndex | None = None,
) -> CertificationRecord:
    config.validate()
    count = count_successes(model, query, config.sigma, config.n0, rng, filter_index, config.chunk)
    p_lower, cr = certified_radius(count, config.n0, config.confidence, config.sigma)
    return CertificationRecord(query, count, config.n0, p_lower, cr, config.sigma)


def certify_queries(
    model: EmbeddingModel,
    queries: Sequence[Query],
    config: CertConfig,
    filter_index: FilterIndex | None = None,
    workers: int = 1,
) -> list[CertificationRecord]:
    """Certify every query; query ``i`` draws from substream ``(seed, i)``.

    Output is identical for any ``workers``.
    """
    config.validate()

    def run(i):
        return certify_query(model, queries[i], config, query_rng(config.seed, i), filter_index)

    if workers <= 1:
        return [run(i) for i in range(len(queries))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, range(len(queries))))


def summarize(
    records: Sequence[CertificationRecord], radii: Sequence[float] = (0.0,)
) -> RobustnessReport:
    """ACR, ACR/sigma and certified accuracy ``CA(R) = mean[cr > R]``."""
    if len(records) == 0:
        raise ValueError("no certification records")
    cr = np.array([rec.cr for rec in records])
    sig = np.array([rec.sigma for rec in records])
    ratio = np.divide(cr, sig, out=np.zeros_like(cr), where=sig > 0)
    radii = sorted({0.0, *map(float, radii)})
    curve = tuple((R, float(np.mean(cr > R))) for R in radii)
    return RobustnessReport(
        acr=float(np.mean(cr)),
        acr_over_sigma=float(np.mean(ratio)),
        ca_curve=curve,
        ca0=float(np.mean(cr > 0.0)),
        n=len(records),
        sigma=float(sig[0]),
    )


def robustness_report(
    model: EmbeddingModel,
    queries: Sequence[Query],
    config: CertConfig,
    radii: Sequence[float] = (0.0,),
    filter_index: FilterIndex | None = None,
    workers: int = 1,
) -> tuple[RobustnessReport, list[CertificationRecord]]:
    if len(queries) == 0:
        raise ValueError("empty query list")
    records = certify_queries(model, queries, config, filter_index, workers)
    return summarize(records, radii), records

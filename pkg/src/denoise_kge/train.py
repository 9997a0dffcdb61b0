"""Denoising training loop.

Each batch of triples contributes two losses:

* the original loss -- 1-vs-all cross-entropy over every candidate tail,
  with label smoothing;
* the denoising loss -- the head of every triple is perturbed as
  ``h~ = h + alpha * n`` with ``n ~ N(0, sigma^2)`` per component, and the
  energy gradient at ``h~`` is regressed onto the raw noise:
  ``L_d = || n - n_hat ||^2`` with ``n_hat = sign * grad_h E(h~, r, t)``.

``sign = +1`` (default) is the denoising-score-matching orientation: the
model score ``-grad E`` points back towards the clean embedding, i.e. against
the noise. ``sign = -1`` regresses ``-grad E`` onto the noise instead; for
the distance families that objective is largest when a true triple fits
exactly and it degrades training.

The joint objective is ``L = L_o + lambda * L_d``. Because ``L_d`` already
contains a first derivative of the energy, its backward pass needs mixed
second derivatives; these come from ``head_grad_vjp`` in :mod:`models`.
Noise and ``sigma`` are constants with respect to the parameters.

``sigma`` is the nearest-rank 99.73% quantile of the absolute values of all
entity-table components, refreshed once per epoch by default.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .kg import KnowledgeGraph
from .models import EmbeddingModel, grad_energy_head, init_model

logger = logging.getLogger(__name__)

SIGMA_QUANTILE = 0.9973


@dataclass
class TrainConfig:
    family: str = "RotatE"
    dim: int = 64
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 0.01
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    alpha: float = 0.5
    lam: float = 0.2
    sigma_refresh: str = "per-epoch"
    perturb_prob: float = 1.0
    seed: int = 0
    init_scale: float = 0.1
    label_smoothing: float = 0.1
    denoise_sign: int = 1
    valid_every: int = 0

    def validate(self) -> None:
        errors = []
        if self.dim < 1:
            errors.append("dim must be >= 1")
        if self.epochs < 0:
            errors.append("epochs must be >= 0")
        if self.batch_size < 1:
            errors.append("batch_size must be >= 1")
        if not self.learning_rate > 0:
            errors.append("learning_rate must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            errors.append("optimizer must be 'adam' or 'sgd'")
        if self.alpha < 0:
            errors.append("alpha must be >= 0")
        if self.lam < 0:
            errors.append("lam must be >= 0")
        if self.sigma_refresh not in ("per-epoch", "once"):
            errors.append("sigma_refresh must be 'per-epoch' or 'once'")
        if not 0.0 <= self.perturb_prob <= 1.0:
            errors.append("perturb_prob must be in [0, 1]")
        if self.denoise_sign not in (1, -1):
            errors.append("denoise_sign must be +1 or -1")
        if not 0.0 <= self.label_smoothing < 1.0:
            errors.append("label_smoothing must be in [0, 1)")
        if errors:
            raise ValueError("; ".join(errors))


@dataclass
class NoiseDraw:
    entity: int
    noise: np.ndarray
    perturbed: np.ndarray
    sigma_used: float


@dataclass
class LossReport:
    original: float
    denoising: float
    joint: float
    epoch: int = 0
    batch: int = 0


class TrainingError(RuntimeError):
    pass


def sigma_quantile(entity_table: np.ndarray, q: float = SIGMA_QUANTILE) -> float:
    """Nearest-rank ``q`` quantile of ``|entity_table|`` pooled over all components."""
    values = np.abs(np.asarray(entity_table, dtype=np.float64)).ravel()
    if values.size == 0:
        raise ValueError("entity table is empty")
    if not np.all(np.isfinite(values)):
        raise ValueError("entity table has non-finite entries")
    rank = max(1, math.ceil(q * values.size))
    return float(np.partition(values, rank - 1)[rank - 1])


def perturb_entity(
    model: EmbeddingModel, entity: int, alpha: float, sigma: float, rng: np.random.Generator
) -> NoiseDraw:
    model._check_entity(entity)
    noise = rng.normal(0.0, sigma, size=model.entity.shape[1])
    return NoiseDraw(entity, noise, model.entity[entity] + alpha * noise, sigma)


def denoising_loss(
    model: EmbeddingModel, draw: NoiseDraw, r: int, t: int, sign: int = 1
) -> float:
    """``||n - n_hat||^2`` with ``n_hat = sign * grad_h E`` at the perturbed head."""
    n_hat = sign * grad_energy_head(model, draw.perturbed, r, t)
    if not np.all(np.isfinite(n_hat)):
        raise TrainingError("non-finite energy gradient in denoising loss")
    diff = draw.noise - n_hat
    return float(np.sum(diff * diff))


def _cross_entropy(scores: np.ndarray, targets: np.ndarray, smoothing: float):
    """Mean smoothed cross-entropy and its gradient w.r.t. ``scores``."""
    B, M = scores.shape
    shifted = scores - scores.max(axis=1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    logp = shifted - logz
    y = np.full((B, M), smoothing / M)
    y[np.arange(B), targets] += 1.0 - smoothing
    loss = -np.sum(y * logp) / B
    grad = (np.exp(logp) - y) / B
    return max(loss, 0.0), grad


def original_loss(model: EmbeddingModel, batch, label_smoothing: float = 0.1) -> float:
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    if len(batch) == 0:
        raise ValueError("empty batch")
    h, r, t = batch.T
    scores = model.kernel.scores(model.entity[h], model.relation[r], model.entity)
    return _cross_entropy(scores, t, label_smoothing)[0]


def joint_loss_and_grad(
    model: EmbeddingModel,
    batch,
    noise: np.ndarray,
    alpha: float,
    lam: float,
    label_smoothing: float = 0.1,
    mask: np.ndarray | None = None,
    sign: int = 1,
):
    """Original loss, denoising loss and gradients of the joint loss.

    ``noise`` holds one raw noise row per triple of ``batch``; ``mask``
    optionally switches the denoising term off for individual triples. The
    denoising loss is averaged over the batch (masked rows count as zero).
    Returns ``(L_o, L_d, grad_entity, grad_relation)``.
    """
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    h, r, t = batch.T
    B = len(batch)
    k = model.kernel
    E, Rt = model.entity, model.relation
    H, R = E[h], Rt[r]

    grad_e = np.zeros_like(E)
    grad_r = np.zeros_like(Rt)

    scores = k.scores(H, R, E)
    loss_o, G = _cross_entropy(scores, t, label_smoothing)
    dH, dR, dT = k.scores_vjp(H, R, E, G)
    np.add.at(grad_e, h, dH)
    np.add.at(grad_r, r, dR)
    grad_e += dT

    weights = np.ones(B) if mask is None else np.asarray(mask, dtype=np.float64)
    H_tilde = H + alpha * noise
    Tt = E[t]
    diff = noise - sign * k.head_grad(H_tilde, R, Tt)
    per_row = np.sum(diff * diff, axis=1) * weights
    loss_d = float(np.sum(per_row) / B)

    if lam != 0.0:
        V = (-2.0 * sign * lam / B) * diff * weights[:, None]
        dH, dR, dT = k.head_grad_vjp(H_tilde, R, Tt, V)
        np.add.at(grad_e, h, dH)
        np.add.at(grad_r, r, dR)
        np.add.at(grad_e, t, dT)
    return float(loss_o), loss_d, grad_e, grad_r


class SGD:
    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        for p, g in zip(params, grads):
            p -= self.learning_rate * g


class Adam:
    def __init__(self, learning_rate: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return SGD(config.learning_rate)
    return Adam(config.learning_rate, config.beta1, config.beta2, config.eps)


def joint_step(
    model: EmbeddingModel,
    batch,
    config: TrainConfig,
    rng: np.random.Generator,
    optimizer=None,
    sigma: float | None = None,
    epoch: int = 0,
    batch_index: int = 0,
) -> LossReport:
    """One optimizer update on ``L_o + lam * L_d``; mutates ``model`` in place.

    Noise and the perturbation mask are always drawn, so the RNG stream does
    not depend on ``alpha`` or ``lam``.
    """
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    if sigma is None:
        sigma = sigma_quantile(model.entity)
    if optimizer is None:
        optimizer = make_optimizer(config)
    B = len(batch)
    noise = rng.normal(0.0, sigma, size=(B, model.entity.shape[1]))
    mask = rng.random(B) < config.perturb_prob
    loss_o, loss_d, grad_e, grad_r = joint_loss_and_grad(
        model, batch, noise, config.alpha, config.lam, config.label_smoothing, mask,
        config.denoise_sign,
    )
    joint = loss_o + config.lam * loss_d
    if not (math.isfinite(joint) and np.all(np.isfinite(grad_e)) and np.all(np.isfinite(grad_r))):
        raise TrainingError(
            f"non-finite loss at epoch {epoch} batch {batch_index}: "
            f"L_o={loss_o} L_d={loss_d} triples={batch.tolist()}"
        )
    optimizer.step([model.entity, model.relation], [grad_e, grad_r])
    return LossReport(loss_o, loss_d, joint, epoch, batch_index)


def train(
    kg: KnowledgeGraph,
    config: TrainConfig,
    on_epoch: Callable[[dict], None] | None = None,
) -> tuple[EmbeddingModel, list[dict]]:
    """Train a model on ``kg.train``; returns the model and per-epoch records.

    Each record has ``epoch``, ``original``, ``denoising``, ``joint`` (batch
    means, with ``joint = original + lam * denoising``), ``sigma`` and
    ``wall_time``; ``valid_mrr`` is added every ``valid_every`` epochs.
    """
    config.validate()
    if not kg.reverse_augmented:
        raise ValueError("training expects a reverse-augmented graph")
    model = init_model(
        config.family, config.dim, kg.n_entities, kg.n_relations, config.seed, config.init_scale
    )
    rng = np.random.default_rng([config.seed, 1])
    optimizer = make_optimizer(config)
    triples = np.asarray(kg.train, dtype=np.int64).reshape(-1, 3)
    log: list[dict] = []
    if config.epochs == 0 or len(triples) == 0:
        return model, log

    valid_queries = filt = None
    if config.valid_every and kg.valid:
        from .evaluation import link_prediction
        from .kg import build_filter_index, queries_from_split

        valid_queries = queries_from_split(kg, "valid")
        filt = build_filter_index(kg)

    sigma = sigma_quantile(model.entity)
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        if config.sigma_refresh == "per-epoch":
            sigma = sigma_quantile(model.entity)
        order = rng.permutation(len(triples))
        sums = np.zeros(2)
        n_batches = 0
        for b, lo in enumerate(range(0, len(triples), config.batch_size)):
            batch = triples[order[lo : lo + config.batch_size]]
            report = joint_step(model, batch, config, rng, optimizer, sigma, epoch, b)
            sums += (report.original, report.denoising)
            n_batches += 1
        original, denoising = sums / n_batches
        record = {
            "epoch": epoch,
            "original": float(original),
            "denoising": float(denoising),
            "joint": float(original + config.lam * denoising),
            "sigma": sigma,
            "wall_time": time.perf_counter() - start,
        }
        if valid_queries is not None and epoch % config.valid_every == 0:
            record["valid_mrr"] = link_prediction(model, valid_queries, filt).mrr
        log.append(record)
        logger.debug("epoch %d: %s", epoch, record)
        if on_epoch is not None:
            on_epoch(record)
    return model, log


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)

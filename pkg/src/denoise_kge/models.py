"""Energy-based scoring functions for TransE, DistMult, ComplEx and RotatE.

Scores follow the convention higher = more plausible; the energy is the
negated score. Every kernel works on batches: heads ``H`` of shape (B, D),
relation rows ``R`` of shape (B, Dr) and candidate tails ``T`` of shape
(M, D). Complex families store a vector as ``[real | imag]`` halves.

Besides the forward scores each family provides three hand-derived
derivatives:

* ``head_grad`` -- the gradient of the energy with respect to the head,
* ``head_grad_vjp`` -- the vector-Jacobian product of that gradient with
  respect to (head, relation, tail), i.e. the second-order term needed by
  the denoising loss,
* ``scores_vjp`` -- the backward pass of the all-tails score matrix.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numba
import numpy as np

FAMILIES = ("TransE", "DistMult", "ComplEx", "RotatE")
CHECKPOINT_FORMAT = 1


def _safe_norm(u):
    n = np.sqrt(np.sum(u * u, axis=-1, keepdims=True))
    inv = np.divide(1.0, n, out=np.zeros_like(n), where=n > 0)
    return n, inv


def _halves(x):
    d = x.shape[-1] // 2
    return x[..., :d], x[..., d:]


def _rotate(H, theta):
    hr, hi = _halves(H)
    c, s = np.cos(theta), np.sin(theta)
    return np.concatenate([hr * c - hi * s, hr * s + hi * c], axis=-1), c, s


# --- distance families (TransE, RotatE): score = -||Q - t|| -------------


@numba.njit(cache=True)
def _pairwise_sqdist(Q, T):
    B, D = Q.shape
    M = T.shape[0]
    out = np.empty((B, M))
    for b in range(B):
        for m in range(M):
            acc = 0.0
            for d in range(D):
                diff = Q[b, d] - T[m, d]
                acc += diff * diff
            out[b, m] = acc
    return out


def _distance_scores(Q, T):
    return -np.sqrt(_pairwise_sqdist(np.ascontiguousarray(Q), np.ascontiguousarray(T)))


def _distance_vjp(Q, T, G):
    dist = -_distance_scores(Q, T)
    W = np.divide(G, dist, out=np.zeros_like(G), where=dist > 0)
    dQ = W @ T - W.sum(axis=1)[:, None] * Q
    dT = W.T @ Q - W.sum(axis=0)[:, None] * T
    return dQ, dT


def _bilinear_scores(A, T):
    return np.einsum("bd,md->bm", A, T)


class _TransE:
    @staticmethod
    def entity_width(dim):
        return dim

    @staticmethod
    def relation_width(dim):
        return dim

    @staticmethod
    def scores(H, R, T):
        return _distance_scores(H + R, T)

    @staticmethod
    def head_grad(H, R, T):
        u = H + R - T
        _, inv = _safe_norm(u)
        return u * inv

    @staticmethod
    def head_grad_vjp(H, R, T, V):
        u = H + R - T
        _, inv = _safe_norm(u)
        q = u * inv
        w = (V - q * np.sum(q * V, axis=-1, keepdims=True)) * inv
        return w, w.copy(), -w

    @staticmethod
    def scores_vjp(H, R, T, G):
        dQ, dT = _distance_vjp(H + R, T, G)
        return dQ, dQ.copy(), dT


class _DistMult:
    @staticmethod
    def entity_width(dim):
        return dim

    @staticmethod
    def relation_width(dim):
        return dim

    @staticmethod
    def scores(H, R, T):
        return _bilinear_scores(H * R, T)

    @staticmethod
    def head_grad(H, R, T):
        return -(R * T) + np.zeros_like(H)

    @staticmethod
    def head_grad_vjp(H, R, T, V):
        return np.zeros_like(H), -V * T, -V * R

    @staticmethod
    def scores_vjp(H, R, T, G):
        A = H * R
        dA = G @ T
        return dA * R, dA * H, G.T @ A


class _ComplEx:
    @staticmethod
    def entity_width(dim):
        return 2 * dim

    @staticmethod
    def relation_width(dim):
        return 2 * dim

    @staticmethod
    def _product(H, R):
        hr, hi = _halves(H)
        rr, ri = _halves(R)
        return np.concatenate([hr * rr - hi * ri, hr * ri + hi * rr], axis=-1)

    @classmethod
    def scores(cls, H, R, T):
        return _bilinear_scores(cls._product(H, R), T)

    @staticmethod
    def head_grad(H, R, T):
        rr, ri = _halves(R)
        tr, ti = _halves(T)
        g = -np.concatenate([rr * tr + ri * ti, rr * ti - ri * tr], axis=-1)
        return g + np.zeros_like(H)

    @staticmethod
    def head_grad_vjp(H, R, T, V):
        rr, ri = _halves(R)
        tr, ti = _halves(T)
        vr, vi = _halves(V)
        dR = -np.concatenate([vr * tr + vi * ti, vr * ti - vi * tr], axis=-1)
        dT = -np.concatenate([vr * rr - vi * ri, vr * ri + vi * rr], axis=-1)
        return np.zeros_like(H), dR, dT

    @classmethod
    def scores_vjp(cls, H, R, T, G):
        A = cls._product(H, R)
        dA = G @ T
        dar, dai = _halves(dA)
        hr, hi = _halves(H)
        rr, ri = _halves(R)
        dH = np.concatenate([dar * rr + dai * ri, -dar * ri + dai * rr], axis=-1)
        dR = np.concatenate([dar * hr + dai * hi, -dar * hi + dai * hr], axis=-1)
        return dH, dR, G.T @ A


class _RotatE:
    @staticmethod
    def entity_width(dim):
        return 2 * dim

    @staticmethod
    def relation_width(dim):
        return dim

    @staticmethod
    def scores(H, R, T):
        Q, _, _ = _rotate(H, R)
        return _distance_scores(Q, T)

    @staticmethod
    def head_grad(H, R, T):
        Q, c, s = _rotate(H, R)
        u = Q - T
        _, inv = _safe_norm(u)
        qr, qi = _halves(u * inv)
        return np.concatenate([c * qr + s * qi, -s * qr + c * qi], axis=-1)

    @staticmethod
    def head_grad_vjp(H, R, T, V):
        Q, c, s = _rotate(H, R)
        u = Q - T
        _, inv = _safe_norm(u)
        q = u * inv
        vr, vi = _halves(V)
        P = np.concatenate([c * vr - s * vi, s * vr + c * vi], axis=-1)
        w = (P - q * np.sum(q * P, axis=-1, keepdims=True)) * inv
        wr, wi = _halves(w)
        qr, qi = _halves(q)
        Qr, Qi = _halves(Q)
        dH = np.concatenate([c * wr + s * wi, -s * wr + c * wi], axis=-1)
        explicit = qr * (-s * vr - c * vi) + qi * (c * vr - s * vi)
        through_u = -wr * Qi + wi * Qr
        return dH, explicit + through_u, -w

    @staticmethod
    def scores_vjp(H, R, T, G):
        Q, c, s = _rotate(H, R)
        dQ, dT = _distance_vjp(Q, T, G)
        dqr, dqi = _halves(dQ)
        Qr, Qi = _halves(Q)
        dH = np.concatenate([c * dqr + s * dqi, -s * dqr + c * dqi], axis=-1)
        return dH, -dqr * Qi + dqi * Qr, dT


KERNELS = {
    "TransE": _TransE,
    "DistMult": _DistMult,
    "ComplEx": _ComplEx,
    "RotatE": _RotatE,
}


@dataclass
class EmbeddingModel:
    """Parameter tables of one embedding family.

    ``dim`` is the (complex, for ComplEx/RotatE) embedding dimension. RotatE
    relations are stored as ``dim`` phase angles.
    """

    family: str
    dim: int
    entity: np.ndarray
    relation: np.ndarray

    def __post_init__(self):
        if self.family not in KERNELS:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        self.entity = np.ascontiguousarray(self.entity, dtype=np.float64)
        self.relation = np.ascontiguousarray(self.relation, dtype=np.float64)
        k = self.kernel
        if self.entity.ndim != 2 or self.entity.shape[1] != k.entity_width(self.dim):
            raise ValueError(f"entity table shape {self.entity.shape} does not match dim={self.dim}")
        if self.relation.ndim != 2 or self.relation.shape[1] != k.relation_width(self.dim):
            raise ValueError(
                f"relation table shape {self.relation.shape} does not match dim={self.dim}"
            )

    @property
    def kernel(self):
        return KERNELS[self.family]

    @property
    def n_entities(self) -> int:
        return self.entity.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation.shape[0]

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.family, self.dim, self.entity.copy(), self.relation.copy())

    def with_entity_table(self, table: np.ndarray) -> "EmbeddingModel":
        return EmbeddingModel(self.family, self.dim, table, self.relation)

    def _check_entity(self, i):
        if not 0 <= i < self.n_entities:
            raise IndexError(f"entity index {i} out of range [0, {self.n_entities})")

    def _check_relation(self, r):
        if not 0 <= r < self.n_relations:
            raise IndexError(f"relation index {r} out of range [0, {self.n_relations})")


def init_model(
    family: str,
    dim: int,
    n_entities: int,
    n_relations: int,
    seed: int = 0,
    init_scale: float = 0.1,
) -> EmbeddingModel:
    """Uniform initialisation in ``[-init_scale, init_scale]``.

    RotatE phases are uniform in ``[-pi, pi]``; ``init_scale == 0`` gives
    identity rotations.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if n_entities < 1 or n_relations < 1:
        raise ValueError("need at least one entity and one relation")
    if family not in KERNELS:
        raise ValueError(f"unknown family {family!r}")
    k = KERNELS[family]
    rng = np.random.default_rng(seed)
    entity = rng.uniform(-init_scale, init_scale, size=(n_entities, k.entity_width(dim)))
    if family == "RotatE":
        relation = rng.uniform(-np.pi, np.pi, size=(n_relations, dim))
        if init_scale == 0:
            relation[:] = 0.0
    else:
        relation = rng.uniform(-init_scale, init_scale, size=(n_relations, k.relation_width(dim)))
    return EmbeddingModel(family, dim, entity, relation)


def score(model: EmbeddingModel, h: int, r: int, t: int) -> float:
    model._check_entity(h)
    model._check_entity(t)
    model._check_relation(r)
    H = model.entity[h : h + 1]
    R = model.relation[r : r + 1]
    return float(model.kernel.scores(H, R, model.entity[t : t + 1])[0, 0])


def energy(model: EmbeddingModel, h: int, r: int, t: int) -> float:
    return -score(model, h, r, t)


def score_all_tails(model: EmbeddingModel, h_vec: np.ndarray, r: int) -> np.ndarray:
    """Scores of ``(h_vec, r, e)`` for every entity ``e``.

    ``h_vec`` is a raw head vector, so perturbed heads that are not rows of
    the entity table can be scored.
    """
    model._check_relation(r)
    H = np.asarray(h_vec, dtype=np.float64).reshape(1, -1)
    return model.kernel.scores(H, model.relation[r : r + 1], model.entity)[0]


def score_heads_all_tails(model: EmbeddingModel, H: np.ndarray, rels) -> np.ndarray:
    """Batched :func:`score_all_tails`: row ``i`` scores ``(H[i], rels[i], *)``."""
    return model.kernel.scores(np.asarray(H, dtype=np.float64), model.relation[rels], model.entity)


def grad_energy_head(model: EmbeddingModel, h_vec: np.ndarray, r: int, t: int) -> np.ndarray:
    """Gradient of the energy with respect to a (possibly perturbed) head vector.

    At the non-differentiable point of the distance families (zero residual)
    the zero vector is returned.
    """
    model._check_relation(r)
    model._check_entity(t)
    H = np.asarray(h_vec, dtype=np.float64).reshape(1, -1)
    return model.kernel.head_grad(H, model.relation[r : r + 1], model.entity[t : t + 1])[0]


# --- checkpoints ---------------------------------------------------------


def save_checkpoint(model: EmbeddingModel, path: str | os.PathLike) -> None:
    """Write an uncompressed ``.npz`` archive.

    Keys: ``format`` (int), ``family`` (unicode scalar), ``dim``,
    ``n_entities``, ``n_relations`` (int64 scalars), ``entity`` and
    ``relation`` (float64, C order).
    """
    with open(path, "wb") as fh:
        np.savez(
            fh,
            format=np.int64(CHECKPOINT_FORMAT),
            family=np.array(model.family),
            dim=np.int64(model.dim),
            n_entities=np.int64(model.n_entities),
            n_relations=np.int64(model.n_relations),
            entity=model.entity,
            relation=model.relation,
        )


def load_checkpoint(path: str | os.PathLike) -> EmbeddingModel:
    with np.load(path, allow_pickle=False) as z:
        if int(z["format"]) != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {int(z['format'])}")
        model = EmbeddingModel(str(z["family"]), int(z["dim"]), z["entity"], z["relation"])
        if model.n_entities != int(z["n_entities"]) or model.n_relations != int(z["n_relations"]):
            raise ValueError("checkpoint table sizes disagree with header")
    return model

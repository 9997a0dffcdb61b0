"""Shared oracles for the test suite."""

import numpy as np

from denoise_kge.models import FAMILIES, EmbeddingModel, init_model
from denoise_kge.train import joint_loss_and_grad


def central_diff(f, x, step=1e-5):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + step
        up = f(x)
        x[idx] = old - step
        down = f(x)
        x[idx] = old
        g[idx] = (up - down) / (2 * step)
    return g


def rel_error(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))


def random_model(family, dim, n_entities, n_relations, rng):
    return init_model(family, dim, n_entities, n_relations, seed=int(rng.integers(2**31)), init_scale=1.0)


def head_grad_errors(family, dim, n_instances=100, seed=0):
    """Relative errors of the analytic head gradient against central differences."""
    rng = np.random.default_rng([seed, dim, FAMILIES.index(family)])
    errors = []
    for _ in range(n_instances):
        model = random_model(family, dim, 2, 1, rng)
        kernel = model.kernel
        h = rng.normal(size=model.entity.shape[1])
        R = model.relation[:1]
        T = model.entity[1:2]

        def E(x):
            return -kernel.scores(x.reshape(1, -1), R, T)[0, 0]

        analytic = kernel.head_grad(h.reshape(1, -1), R, T)[0]
        errors.append(rel_error(analytic, central_diff(E, h)))
    return errors


def joint_loss_errors(family, n_instances=5, seed=0, alpha=0.7, lam=0.4, sign=1):
    """Relative errors of the joint-loss parameter gradients (d=2, |E|=3)."""
    rng = np.random.default_rng([seed, 7, FAMILIES.index(family)])
    errors = []
    for _ in range(n_instances):
        model = random_model(family, 2, 3, 2, rng)
        batch = np.array([[0, 0, 1], [1, 1, 2], [2, 0, 0], [0, 1, 2]])
        noise = rng.normal(scale=0.5, size=(len(batch), model.entity.shape[1]))
        mask = np.array([1.0, 1.0, 0.0, 1.0])

        def total(ent, rel):
            m = EmbeddingModel(family, 2, ent, rel)
            lo, ld, _, _ = joint_loss_and_grad(m, batch, noise, alpha, lam, 0.1, mask, sign)
            return lo + lam * ld

        _, _, ge, gr = joint_loss_and_grad(model, batch, noise, alpha, lam, 0.1, mask, sign)
        fe = central_diff(lambda x: total(x, model.relation), model.entity)
        fr = central_diff(lambda x: total(model.entity, x), model.relation)
        errors.append(max(rel_error(ge, fe), rel_error(gr, fr)))
    return errors


def bisect_phi_inverse(p, dps=30):
    """Bisection on a high-precision normal CDF."""
    import mpmath

    with mpmath.workdps(dps):
        target = mpmath.mpf(p)
        lo, hi = mpmath.mpf(-40), mpmath.mpf(40)
        for _ in range(90):
            mid = (lo + hi) / 2
            if mpmath.ncdf(mid) < target:
                lo = mid
            else:
                hi = mid
        return float((lo + hi) / 2)


def binomial_tail_lcb(n, k, confidence, tol=1e-13):
    """Lower bound by bisection on ``P[Bin(n, p) >= k] = 1 - confidence``.

    The tail is summed term by term in log space; no beta functions.
    """
    from math import lgamma

    if k == 0:
        return 0.0
    j = np.arange(k, n + 1)
    log_choose = np.array([lgamma(n + 1) - lgamma(i + 1) - lgamma(n - i + 1) for i in j])
    alpha = 1.0 - confidence

    def tail(p):
        logs = log_choose + j * np.log(p) + (n - j) * np.log1p(-p)
        top = logs.max()
        return float(np.exp(top) * np.sum(np.exp(logs - top)))

    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if tail(mid) < alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def lcb_cases(n_cases=200, seed=0):
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(n_cases):
        n = int(rng.integers(1, 2001))
        k = int(rng.integers(0, n + 1))
        c = float(rng.choice([0.95, 0.999]))
        cases.append((n, k, c))
    return cases


def lcb_coverage(n0, p, confidence, n_sims=10_000, seed=0):
    from denoise_kge.stats import clopper_pearson_lcb

    counts = np.random.default_rng(seed).binomial(n0, p, size=n_sims)
    bounds = {k: clopper_pearson_lcb(n0, int(k), confidence) for k in np.unique(counts)}
    return float(np.mean([bounds[k] <= p for k in counts]))

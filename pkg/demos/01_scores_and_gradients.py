"""Scoring families, energy gradients and the denoising target.

Run: python demos/01_scores_and_gradients.py
"""

import numpy as np

from denoise_kge.models import FAMILIES, EmbeddingModel, grad_energy_head, init_model, score
from denoise_kge.train import NoiseDraw, denoising_loss, sigma_quantile

# A triple that TransE fits exactly sits at the top of the score range.
m = EmbeddingModel("TransE", 2, np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[1.0, 0.0]]))
print(f"TransE  (0, r, 1): {score(m, 0, 0, 1) + 0.0:.4f}   (0, r, 2): {score(m, 0, 0, 2):.4f}")

# Each family exposes grad_h E for raw head vectors, so a perturbed head
# can be scored and differentiated without touching the entity table.
rng = np.random.default_rng(0)
for family in FAMILIES:
    model = init_model(family, 4, 5, 2, seed=1, init_scale=1.0)
    h = model.entity[0] + 0.1 * rng.normal(size=model.entity.shape[1])
    g = grad_energy_head(model, h, 1, 3)
    # central difference along one random direction
    v = rng.normal(size=h.shape)
    step = 1e-5
    E = lambda x: -model.kernel.scores(x[None], model.relation[1:2], model.entity[3:4])[0, 0]
    fd = (E(h + step * v) - E(h - step * v)) / (2 * step)
    print(f"{family:8s} directional derivative  analytic {g @ v:+.8f}  numeric {fd:+.8f}")

# sigma is the 99.73% point of the pooled |components|: three standard
# deviations for Gaussian tables.
table = rng.normal(scale=0.2, size=(200, 50))
print("sigma of a N(0, 0.2^2) table:", round(sigma_quantile(table), 3))

# Denoising target. With noise n added to the head (scale alpha), the loss
# compares n with sign * grad_h E at the noisy head.
dm = EmbeddingModel("DistMult", 1, np.array([[1.0]]), np.array([[1.0]]))
draw = NoiseDraw(0, np.array([0.5]), np.array([1.5]), 1.0)
print("DistMult toy loss, default sign:", denoising_loss(dm, draw, 0, 0))
print("DistMult toy loss, sign = -1:   ", denoising_loss(dm, draw, 0, 0, sign=-1))

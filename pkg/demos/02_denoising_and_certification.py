"""Train RotatE on the 11x11 grid graph with and without the denoising term,
then compare perturbed link prediction and certified radii.

Takes about a minute on one core.

Run: python demos/02_denoising_and_certification.py
"""

from denoise_kge.certify import CertConfig, robustness_report
from denoise_kge.evaluation import link_prediction
from denoise_kge.kg import add_reverse_relations, build_filter_index, grid_kg, queries_from_split
from denoise_kge.train import TrainConfig, sigma_quantile, train

kg = add_reverse_relations(grid_kg())
filt = build_filter_index(kg)
test = queries_from_split(kg, "test")
print(f"{kg.n_entities} entities, {kg.n_relations} relations (with inverses), "
      f"{len(kg.train)} train triples, {len(test)} test queries")

rows = []
for lam in (0.0, 0.1):
    cfg = TrainConfig(family="RotatE", dim=64, epochs=100, alpha=0.5, lam=lam, seed=1)
    model, log = train(kg, cfg)
    clean = link_prediction(model, test, filt)
    noisy = link_prediction(model, test, filt, alpha=2.0, seed=1)
    sigma = sigma_quantile(model.entity)
    report, _ = robustness_report(
        model, test, CertConfig(n0=1000, confidence=0.999, sigma=sigma, seed=1), filter_index=filt
    )
    rows.append((lam, clean.mrr, noisy.mrr, sigma, report.acr_over_sigma, report.ca0))
    print(f"lam={lam}: last epoch L_o={log[-1]['original']:.3f} L_d={log[-1]['denoising']:.3f}")

print()
print("lam   clean MRR  MRR(alpha=2)  sigma   ACR/sigma  CA")
for lam, c, n, s, a, ca in rows:
    print(f"{lam:<5} {c:9.3f} {n:13.3f} {s:6.2f} {a:10.3f} {ca:6.3f}")

# Clean ranking is near perfect either way. Embedding noise at alpha = 2
# wrecks both models, but the denoising-trained one keeps its top-1 answer
# under much larger head perturbations, which shows up in ACR/sigma.

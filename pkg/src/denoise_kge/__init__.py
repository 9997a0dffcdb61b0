"""Knowledge-graph embeddings trained with a denoising objective, plus
randomized-smoothing certification of link predictions."""

__version__ = "0.1.0"

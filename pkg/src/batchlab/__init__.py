"""batchlab: train small models across batch sizes, measure gradient noise,
curvature, and complexity, and estimate interventional batch-size effects
over a causal hypergraph."""

__version__ = "0.1.0"

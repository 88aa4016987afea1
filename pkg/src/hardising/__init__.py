"""hardising: signature verification embedded into near-critical Ising models,
with exact small-instance oracles, phase-conditional samplers,
partition-function estimators, and a memorize-or-hallucinate evaluation
harness."""

__version__ = "0.1.0"

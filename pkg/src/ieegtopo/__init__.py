"""Topological machine learning pipelines for seizure-state classification of iEEG.

Subpackages cover the full path from raw EDF recordings to ranked ablation
tables: ingestion, band filtering, sublevel persistence, diagram
vectorization, dimensionality reduction, classification, and the experiment
harness with its overfit gate.
"""

__version__ = "0.1.0"

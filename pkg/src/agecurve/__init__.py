"""Functional data analysis of athlete aging curves.

Library layers, bottom up: B-spline bases (`basis`), penalized per-subject
smoothing with GCV (`smooth`), dense-grid functional PCA (`fpca`), sparse
functional PCA via conditional expectation (`pace`), curve summaries
(`curveops`), permutation and classical tests (`inference`), k-means with a
permutation-null cluster count rule (`cluster`), CSV ingestion and cohort
filters (`ingest`), synthetic data generators (`simulate`), and the batch
CLI (`cli`).
"""

__version__ = "0.1.0"

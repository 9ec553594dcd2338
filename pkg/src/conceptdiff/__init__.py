"""Concept discovery and composition for small denoising-diffusion models.

The package trains a conditional noise predictor on synthetic corpora,
discovers a library of concept embeddings from an unlabeled dataset by
jointly optimizing the embeddings and per-item simplex weights, and
composes concepts at sampling time by arithmetic on predicted noise.
"""

__version__ = "0.1.0"

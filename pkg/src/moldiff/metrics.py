"""Conformer-set metrics and ranking helpers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .geom import kabsch_rmsd

__all__ = ["CovMatReport", "bond_auc", "cov_mat"]


@dataclass(frozen=True)
class CovMatReport:
    """Coverage and matching of a generated conformer set against references.

    ``per_reference`` holds, for each reference conformation, the minimum
    aligned RMSD over the generated set; ``coverage`` is the fraction of
    references whose minimum is within the threshold, ``matching`` is the
    mean of the minima.
    """

    coverage: float
    matching: float
    threshold: float
    per_reference: np.ndarray


def cov_mat(
    references: list[np.ndarray],
    generated: list[np.ndarray],
    threshold: float = 0.5,
) -> CovMatReport:
    """Coverage/matching of generated conformations w.r.t. references.

    Both sets are conformations of the same molecule (equal atom counts).
    Empty sets are an error: coverage of nothing is meaningless, and an
    empty generated set would make every minimum infinite.
    """
    if not references:
        raise ValueError("cov_mat: empty reference set")
    if not generated:
        raise ValueError("cov_mat: empty generated set")
    if threshold <= 0.0:
        raise ValueError(f"cov_mat: threshold must be positive, got {threshold}")
    minima = np.empty(len(references))
    for i, ref in enumerate(references):
        best = np.inf
        for gen in generated:
            best = min(best, kabsch_rmsd(ref, gen))
        minima[i] = best
    return CovMatReport(
        coverage=float((minima <= threshold).mean()),
        matching=float(minima.mean()),
        threshold=threshold,
        per_reference=minima,
    )


def bond_auc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties averaged).

    ``labels`` are 0/1 ground-truth bond indicators, ``scores`` the model's
    continuous bond evidence; both flat arrays of equal length with at least
    one positive and one negative.
    """
    labels = np.asarray(labels).ravel().astype(bool)
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if labels.shape != scores.shape:
        raise ValueError(f"shapes differ: {labels.shape} vs {scores.shape}")
    pos = int(labels.sum())
    neg = labels.size - pos
    if pos == 0 or neg == 0:
        raise ValueError("bond_auc: need both positive and negative labels")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - pos * (pos + 1) / 2.0) / (pos * neg))

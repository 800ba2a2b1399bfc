"""Training loss formulas on abstract tensors (no networks involved)."""

from __future__ import annotations

import logging

import numpy as np

from .errors import ShapeMismatch

log = logging.getLogger(__name__)

SCORE_CLAMP = 1e-7


def reconstruction_loss(pred_heatmaps, label_heatmaps,
                        pred_distances, label_distances) -> float:
    """MSE over heatmap grids plus MSE over distance vectors."""
    ph = np.asarray(pred_heatmaps, dtype=float)
    lh = np.asarray(label_heatmaps, dtype=float)
    pd = np.asarray(pred_distances, dtype=float)
    ld = np.asarray(label_distances, dtype=float)
    if ph.shape != lh.shape:
        raise ShapeMismatch(f"heatmap shapes differ: {ph.shape} vs {lh.shape}")
    if pd.shape != ld.shape:
        raise ShapeMismatch(f"distance shapes differ: {pd.shape} vs {ld.shape}")
    return float(((ph - lh) ** 2).mean() + ((pd - ld) ** 2).mean())


def adversarial_loss(scores_positive, scores_negative) -> float:
    """Discriminator cross-entropy: -mean(log s+) - mean(log(1 - s-)).

    Scores are probabilities; values are clamped to [1e-7, 1 - 1e-7] to
    avoid infinities, and clamping is logged.
    """
    sp = np.asarray(scores_positive, dtype=float)
    sn = np.asarray(scores_negative, dtype=float)
    n_clamped = int(np.count_nonzero((sp < SCORE_CLAMP) | (sp > 1 - SCORE_CLAMP))
                    + np.count_nonzero((sn < SCORE_CLAMP) | (sn > 1 - SCORE_CLAMP)))
    if n_clamped:
        log.warning("adversarial_loss clamped %d scores to (%g, %g)",
                    n_clamped, SCORE_CLAMP, 1 - SCORE_CLAMP)
    sp = np.clip(sp, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    sn = np.clip(sn, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    return float(-np.log(sp).mean() - np.log(1.0 - sn).mean())

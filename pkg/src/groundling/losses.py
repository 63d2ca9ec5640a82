"""Batch similarity matrix and the margin-based contrastive objective.

The loss sums, over every matched pair on the diagonal, hinge penalties for
all same-row and same-column mismatched pairs:

    loss = sum_i [ sum_{j!=i} max(0, S[j,i] - S[i,i] + margin)
                 + sum_{j!=i} max(0, S[i,j] - S[i,i] + margin) ]

It is zero exactly when every diagonal entry beats all mismatches in its
row and column by at least the margin.
"""

from __future__ import annotations

import numpy as np


def similarity_matrix(audio_embs: np.ndarray, video_embs: np.ndarray) -> np.ndarray:
    """Cosine similarities S[i, j] between unit-norm embedding rows."""
    audio_embs = np.asarray(audio_embs)
    video_embs = np.asarray(video_embs)
    if audio_embs.shape[0] != video_embs.shape[0]:
        raise ValueError(f"count mismatch: {audio_embs.shape[0]} audio vs "
                         f"{video_embs.shape[0]} video embeddings")
    if audio_embs.shape[0] < 1:
        raise ValueError("need at least one embedding pair")
    return audio_embs @ video_embs.T


def contrastive_loss(sims: np.ndarray, margin: float = 0.2) -> float:
    """Scalar hinge loss over a square similarity matrix."""
    loss, _ = contrastive_loss_with_grad(sims, margin)
    return loss


def contrastive_loss_with_grad(sims: np.ndarray, margin: float = 0.2):
    """Returns (loss, d loss / d sims)."""
    sims = np.asarray(sims)
    if sims.ndim != 2 or sims.shape[0] != sims.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {sims.shape}")
    if margin <= 0:
        raise ValueError("margin must be positive")
    b = sims.shape[0]
    if b < 2:
        raise ValueError("need a batch of at least 2 for in-batch negatives")
    diag = np.diagonal(sims)
    off = ~np.eye(b, dtype=bool)

    col_hinge = sims - diag[None, :] + margin     # S[j,i] - S[i,i] + margin
    row_hinge = sims - diag[:, None] + margin     # S[i,j] - S[i,i] + margin
    col_active = (col_hinge > 0) & off
    row_active = (row_hinge > 0) & off
    loss = float(col_hinge[col_active].sum() + row_hinge[row_active].sum())

    grad = col_active.astype(sims.dtype) + row_active.astype(sims.dtype)
    anchor_counts = col_active.sum(axis=0) + row_active.sum(axis=1)
    grad[np.diag_indices(b)] -= anchor_counts.astype(sims.dtype)
    return loss, grad

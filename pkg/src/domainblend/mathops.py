"""Small numeric primitives used everywhere else.

All functions are pure, operate on float64 numpy arrays and never mutate
their inputs. Finite-difference checks elsewhere rely on the precision, so
nothing here may silently downcast.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

DEFAULT_EPS = 1e-12


def l2_normalize(v: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Scale ``v`` to unit euclidean norm.

    Vectors with norm <= eps are returned unchanged (a copy), so degenerate
    near-zero inputs pass through instead of blowing up.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm <= eps:
        return v.copy()
    return v / norm


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax (max subtraction applied unconditionally)."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax for a 2-D array."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cosine_similarity(a: np.ndarray, b: np.ndarray, eps: float = DEFAULT_EPS) -> float:
    """Cosine of the angle between two equal-length vectors, clamped to [-1, 1].

    The denominator is guarded by ``eps`` so zero vectors yield 0 rather
    than dividing by zero.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"cosine_similarity: length mismatch {a.shape} vs {b.shape}")
    denom = max(float(np.linalg.norm(a)) * float(np.linalg.norm(b)), eps)
    return float(np.clip(float(a @ b) / denom, -1.0, 1.0))


def head_diversity_penalty(a: np.ndarray) -> float:
    """Squared Frobenius norm of (A A^T - I) for a heads-by-backbones matrix.

    Zero exactly when the rows of A are orthonormal; always nonnegative.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"head_diversity_penalty: expected 2-D matrix, got ndim={a.ndim}")
    gram = a @ a.T
    gram[np.diag_indices_from(gram)] -= 1.0
    return float((gram * gram).sum())

"""Dense float64 matrix kernel that every other module builds on.

All operations are pure functions: inputs are never mutated and results
are freshly allocated.  Everything runs in 64-bit (gradient verification
at tight tolerances is unreliable in 32-bit).
"""

from __future__ import annotations

import numpy as np

NORM_EPS = 1e-12


class ContractViolation(ValueError):
    """An argument broke a documented precondition."""


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array, raising ContractViolation otherwise."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ContractViolation(f"{name} contains non-finite entries")
    return m


def row_normalize(m, eps: float = NORM_EPS) -> np.ndarray:
    """Scale each row to unit 2-norm.

    Rows with norm below eps are divided by eps instead, so a zero row
    maps to a zero row rather than NaN.
    """
    if eps <= 0:
        raise ContractViolation(f"eps must be positive, got {eps}")
    m = as_matrix(m)
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    return m / np.maximum(norms, eps)[:, np.newaxis]


def pairwise_euclidean(a, b) -> np.ndarray:
    """Nonsquared Euclidean distances between all row pairs of a (n x d) and b (c x d).

    Computed from explicit per-pair differences. The expanded identity
    |a|^2 + |b|^2 - 2ab is deliberately avoided: it loses precision for
    nearby rows and can go negative under rounding.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ContractViolation(
            f"column mismatch: a has {a.shape[1]} columns, b has {b.shape[1]}"
        )
    diff = a[:, np.newaxis, :] - b[np.newaxis, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def stable_softmax_rows(m, scale: float = 1.0) -> np.ndarray:
    """Row-wise softmax of scale * m with per-row max subtraction.

    Safe for arbitrarily large logits; every row sums to 1 and all
    entries lie in (0, 1].
    """
    z = as_matrix(m) * scale
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_probability_rows(p: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    p = as_matrix(p, "probabilities")
    if np.any(p < 0):
        raise ContractViolation("probability entries must be nonnegative")
    sums = p.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > tol):
        worst = float(np.abs(sums - 1.0).max())
        raise ContractViolation(f"rows must sum to 1 within {tol}, worst deviation {worst}")
    return p


def shannon_entropy_row(p) -> float:
    """Shannon entropy of one probability row, in nats, with 0 ln 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ContractViolation(f"expected a 1-D probability row, got shape {p.shape}")
    return float(shannon_entropy_rows(p[np.newaxis, :])[0])


def shannon_entropy_rows(p) -> np.ndarray:
    """Per-row Shannon entropy of a matrix of probability rows (nats)."""
    p = _check_probability_rows(p)
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return -terms.sum(axis=1)

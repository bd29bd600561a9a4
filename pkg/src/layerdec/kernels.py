"""Numerically stable probability kernels shared by every decoding strategy.

All functions take 1-D array-likes and validate their inputs: logit vectors
must be finite, probability vectors must be non-negative and sum to 1 within
PROB_SUM_TOL.  Natural log throughout; entropies are reported in nats.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInput

# |sum(p) - 1| tolerance for accepting a probability vector.
PROB_SUM_TOL = 1e-6

# Floor applied to zero denominators in kl_divergence so diagnostic reports
# never contain infinities.
KL_SMOOTH_EPS = 1e-12


def as_logit_vector(values) -> np.ndarray:
    """Validate and return a 1-D float64 logit vector (finite, non-empty)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInput("logit vector must be 1-D and non-empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("logit vector must be finite (no NaN or inf)")
    return arr


def as_prob_vector(values) -> np.ndarray:
    """Validate and return a 1-D float64 probability vector."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInput("probability vector must be 1-D and non-empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("probability vector must be finite")
    if np.any(arr < 0):
        raise InvalidInput("probability vector must be non-negative")
    total = float(arr.sum())
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise InvalidInput(f"probability vector sums to {total}, not 1")
    return arr


def softmax(logits) -> np.ndarray:
    """Softmax with max-subtraction so large logits never overflow."""
    arr = as_logit_vector(logits)
    shifted = arr - arr.max()
    exps = np.exp(shifted)
    return exps / exps.sum()


def log_softmax(logits) -> np.ndarray:
    """Log of softmax, computed without forming the exponentials' ratio."""
    arr = as_logit_vector(logits)
    shifted = arr - arr.max()
    return shifted - np.log(np.exp(shifted).sum())


def entropy(p) -> float:
    """Shannon entropy in nats: -sum(p * log p), with 0*log(0) := 0.

    The result is clamped into [0, log(len(p))], the mathematically valid
    range; accumulated rounding can otherwise leave it epsilon outside.
    """
    arr = as_prob_vector(p)
    nz = arr > 0
    h = float(-(arr[nz] * np.log(arr[nz])).sum())
    upper = float(np.log(arr.size)) if arr.size > 1 else 0.0
    return min(max(h, 0.0), upper) + 0.0


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats.

    Zero entries of q facing positive p are clamped to KL_SMOOTH_EPS: this
    kernel feeds diagnostic reports, which must never contain infinities.
    """
    p_arr = as_prob_vector(p)
    q_arr = as_prob_vector(q)
    if p_arr.size != q_arr.size:
        raise InvalidInput(f"length mismatch: {p_arr.size} vs {q_arr.size}")
    nz = p_arr > 0
    q_safe = np.maximum(q_arr[nz], KL_SMOOTH_EPS)
    kl = float((p_arr[nz] * (np.log(p_arr[nz]) - np.log(q_safe))).sum())
    return max(kl, 0.0)


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence in nats: bounded by log 2, symmetric."""
    p_arr = as_prob_vector(p)
    q_arr = as_prob_vector(q)
    if p_arr.size != q_arr.size:
        raise InvalidInput(f"length mismatch: {p_arr.size} vs {q_arr.size}")
    m = 0.5 * (p_arr + q_arr)
    return 0.5 * _kl_unchecked(p_arr, m) + 0.5 * _kl_unchecked(q_arr, m)


def _kl_unchecked(p_arr: np.ndarray, q_arr: np.ndarray) -> float:
    nz = p_arr > 0
    q_safe = np.maximum(q_arr[nz], KL_SMOOTH_EPS)
    return max(float((p_arr[nz] * (np.log(p_arr[nz]) - np.log(q_safe))).sum()), 0.0)

"""Dense numeric kernels with matching reverse-mode adjoints.

Every kernel here is paired with the vector-Jacobian product the attack and
training losses need; the adjoints are hand-derived and validated against
central finite differences (see finite_difference_check and the test suite).
All gradient-bearing paths run in float64.
"""

from __future__ import annotations

import numpy as np


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def relu_vjp(grad_out: np.ndarray, z: np.ndarray) -> np.ndarray:
    return grad_out * (z > 0)


def row_softmax(z: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, shift-stabilized."""
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def row_log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def masked_cross_entropy(logits: np.ndarray, labels: np.ndarray,
                         mask: np.ndarray) -> float:
    """Mean negative log-likelihood of `labels` over the masked rows."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("cross-entropy mask selects no nodes")
    if np.any(labels[mask] < 0):
        raise ValueError("masked nodes must have known labels")
    logp = row_log_softmax(logits[mask])
    return float(-logp[np.arange(logp.shape[0]), labels[mask]].mean())


def masked_cross_entropy_grad(logits: np.ndarray, labels: np.ndarray,
                              mask: np.ndarray) -> np.ndarray:
    """Gradient of masked_cross_entropy w.r.t. the logits (zero off-mask)."""
    mask = np.asarray(mask, dtype=bool)
    m = int(mask.sum())
    if m == 0:
        raise ValueError("cross-entropy mask selects no nodes")
    grad = np.zeros_like(logits, dtype=np.float64)
    p = row_softmax(logits[mask])
    p[np.arange(m), labels[mask]] -= 1.0
    grad[mask] = p / m
    return grad


def mean_row_kl(h_a: np.ndarray, h_b: np.ndarray) -> float:
    """Mean over rows of KL(softmax(h_a_i) || softmax(h_b_i)).

    Nonnegative; zero exactly when every pair of rows softmaxes to the same
    distribution.
    """
    if h_a.shape != h_b.shape:
        raise ValueError(f"shape mismatch: {h_a.shape} vs {h_b.shape}")
    if not (np.isfinite(h_a).all() and np.isfinite(h_b).all()):
        raise ValueError("non-finite input to KL")
    p = row_softmax(h_a)
    ell = row_log_softmax(h_a) - row_log_softmax(h_b)
    return float((p * ell).sum(axis=-1).mean())


def mean_row_kl_vjp(h_a: np.ndarray, h_b: np.ndarray):
    """Gradients of mean_row_kl w.r.t. both arguments.

    With p = softmax(a), q = softmax(b), l = log p - log q:
      d/da = p * (l - <p, l>) / n_rows
      d/db = (q - p) / n_rows
    """
    n_rows = h_a.shape[0]
    p = row_softmax(h_a)
    q = row_softmax(h_b)
    ell = row_log_softmax(h_a) - row_log_softmax(h_b)
    inner = (p * ell).sum(axis=-1, keepdims=True)
    grad_a = p * (ell - inner) / n_rows
    grad_b = (q - p) / n_rows
    return grad_a, grad_b


def normalized_adjacency_vjp(grad_out: np.ndarray, A: np.ndarray,
                             include_degree_terms: bool = True) -> np.ndarray:
    """Adjoint of normalized_adjacency, entries of A treated as independent.

    Differentiates through the degree terms: with At = A + I,
    d = rowsum(At)^{-1/2}, and M = d_i * At_ij * d_j, accumulates both the
    direct At dependence and the one through the degrees (the latter can be
    dropped for a cheaper frozen-normalization approximation). Callers
    working on symmetric pair variables must fold grad[i, j] + grad[j, i]
    themselves.
    """
    A = np.asarray(A, dtype=np.float64)
    At = A + np.eye(A.shape[0])
    d = 1.0 / np.sqrt(At.sum(axis=1))
    grad_At = grad_out * d[:, None] * d[None, :]
    if not include_degree_terms:
        return grad_At
    P = grad_out * At
    grad_d = P @ d + P.T @ d
    grad_deg = -0.5 * d**3 * grad_d
    return grad_At + grad_deg[:, None]


def finite_difference_check(loss_fn, point: np.ndarray, step: float = 1e-6,
                            num_coords: int = 64, seed: int = 0) -> dict:
    """Compare analytic gradients against central differences.

    `loss_fn(x)` must return `(value, grad)` with `grad` shaped like `x`.
    A random coordinate subset is probed; returns a report with the worst
    relative and absolute errors.
    """
    x = np.array(point, dtype=np.float64)
    value, grad = loss_fn(x)
    if not np.isfinite(value) or not np.all(np.isfinite(np.asarray(grad))):
        raise ValueError("non-finite loss or gradient at the check point")
    grad = np.asarray(grad, dtype=np.float64)
    flat = x.reshape(-1)
    rng = np.random.default_rng(seed)
    k = min(num_coords, flat.size)
    coords = rng.choice(flat.size, size=k, replace=False)
    max_rel = 0.0
    max_abs = 0.0
    for i in coords:
        saved = flat[i]
        flat[i] = saved + step
        f_plus, _ = loss_fn(flat.reshape(x.shape))
        flat[i] = saved - step
        f_minus, _ = loss_fn(flat.reshape(x.shape))
        flat[i] = saved
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError(f"non-finite evaluation while probing coordinate {i}")
        fd = (f_plus - f_minus) / (2.0 * step)
        an = grad.reshape(-1)[i]
        abs_err = abs(an - fd)
        rel_err = abs_err / max(abs(an), abs(fd), 1e-12)
        max_abs = max(max_abs, abs_err)
        max_rel = max(max_rel, rel_err)
    return {"max_rel_err": max_rel, "max_abs_err": max_abs, "num_checked": int(k)}

"""Poisson weights and uniformised evolution shared by the analysis engines."""

from __future__ import annotations

import math

import numpy as np
from scipy import special


def poisson_window(mean: float, eps: float) -> tuple[int, np.ndarray]:
    """Poisson(mean) probabilities on a window ``[left, left + len(w))``.

    Weights are computed in log space and renormalised; the window is the
    smallest one (found by bisection on cumulative mass) whose neglected mass
    on each side is below ``eps / 2``.
    """
    if mean < 0:
        raise ValueError("Poisson mean must be nonnegative")
    if mean == 0:
        return 0, np.ones(1)
    spread = 12.0 * math.sqrt(mean) + 40.0 + 2.0 * math.log1p(1.0 / eps)
    lo = max(0, int(math.floor(mean - spread)))
    hi = int(math.ceil(mean + spread))
    k = np.arange(lo, hi + 1)
    logp = k * math.log(mean) - mean - special.gammaln(k + 1)
    logp -= logp.max()
    w = np.exp(logp)
    w /= w.sum()
    cum = np.cumsum(w)
    left = int(np.searchsorted(cum, eps / 2.0, side="right"))
    right = int(np.searchsorted(cum, 1.0 - eps / 2.0, side="left"))
    right = min(right, len(w) - 1)
    window = w[left:right + 1]
    return lo + left, window


def uniformisation_rate(generator_diag: np.ndarray) -> float:
    rate = float(np.max(-np.asarray(generator_diag))) if len(generator_diag) else 0.0
    return rate


def evolve(v: np.ndarray, Q, t: float, eps: float = 1e-12) -> np.ndarray:
    """Row vector ``v`` evolved for time ``t`` under generator ``Q``."""
    v = np.asarray(v, dtype=float)
    if t == 0:
        return v.copy()
    diag = Q.diagonal() if hasattr(Q, "diagonal") else np.diag(Q)
    lam = uniformisation_rate(diag)
    if lam == 0:
        return v.copy()
    P = _kernel(Q, lam)
    left, w = poisson_window(lam * t, eps)
    out = np.zeros_like(v)
    cur = v.copy()
    for _ in range(left):
        cur = cur @ P
    for wk in w:
        out += wk * cur
        cur = cur @ P
    return out


def _kernel(Q, lam):
    import scipy.sparse as sp

    if sp.issparse(Q):
        n = Q.shape[0]
        return (sp.identity(n, format="csr") + Q / lam).tocsr()
    return np.eye(Q.shape[0]) + Q / lam


def series(v: np.ndarray, P, vec: np.ndarray, K: int) -> np.ndarray:
    """``c_k = v P^k vec`` for ``k = 0..K``."""
    out = np.empty(K + 1)
    cur = np.asarray(v, dtype=float).copy()
    for k in range(K + 1):
        out[k] = cur @ vec
        cur = cur @ P
    return out


def poisson_mix(coeffs: np.ndarray, means: np.ndarray) -> np.ndarray:
    """``sum_k Poisson(k; m) coeffs[k]`` for every ``m`` in ``means``."""
    means = np.asarray(means, dtype=float)
    out = np.zeros(means.shape)
    flat = means.ravel()
    res = out.ravel()
    K = len(coeffs) - 1
    k = np.arange(K + 1)
    lgk = special.gammaln(k + 1)
    chunk = max(64, 4_000_000 // (K + 1))
    for s in range(0, len(flat), chunk):
        m = flat[s:s + chunk]
        pos = m > 0
        block = np.zeros(len(m))
        if np.any(~pos):
            block[~pos] = coeffs[0]
        if np.any(pos):
            mp = m[pos][:, None]
            logw = k[None, :] * np.log(mp) - mp - lgk[None, :]
            block[pos] = np.exp(logw) @ coeffs
        res[s:s + chunk] = block
    return out


def terms_needed(max_mean: float, eps: float = 1e-13) -> int:
    """Series length so that the Poisson right tail at ``max_mean`` is below ``eps``."""
    if max_mean <= 0:
        return 1
    left, w = poisson_window(max_mean, eps)
    return left + len(w)

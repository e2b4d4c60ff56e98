"""Restarted, right-preconditioned GMRES over a real inner-product space.

Vectors are numpy arrays of any shape (here: Hermitian matrix fields viewed
as a real vector space). All reductions go through np.sum so that results do
not depend on BLAS threading.
"""
from dataclasses import dataclass
from typing import Callable, List

import numpy as np


def real_inner(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.sum(np.real(np.conj(u) * v)))


def real_norm(u: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.abs(u) ** 2)))


@dataclass
class GmresInfo:
    converged: bool
    iterations: int
    residual: float
    history: List[float]


def gmres(apply_A: Callable, b: np.ndarray, apply_Minv: Callable = None, rtol: float = 1e-6,
          atol: float = 0.0, restart: int = 40, maxiter: int = 400):
    """Solve A x = b; x = Minv(y) with A Minv y = b minimized over Krylov spaces."""
    if apply_Minv is None:
        apply_Minv = lambda v: v
    x = np.zeros_like(b)
    bnorm = real_norm(b)
    history = [bnorm]
    if bnorm == 0:
        return x, GmresInfo(True, 0, 0.0, history)
    target = max(rtol * bnorm, atol)
    r = b.copy()
    beta = bnorm
    total = 0
    while total < maxiter:
        if beta <= target:
            break
        V = [r / beta]
        Z = []
        m = min(restart, maxiter - total)
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        k_used = 0
        for k in range(m):
            z = apply_Minv(V[k])
            w = apply_A(z)
            Z.append(z)
            for i in range(k + 1):
                H[i, k] = real_inner(V[i], w)
                w = w - H[i, k] * V[i]
            hk1 = real_norm(w)
            H[k + 1, k] = hk1
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = t
            denom = np.hypot(H[k, k], H[k + 1, k])
            if denom == 0:
                cs[k], sn[k] = 1.0, 0.0
            else:
                cs[k], sn[k] = H[k, k] / denom, H[k + 1, k] / denom
            H[k, k] = cs[k] * H[k, k] + sn[k] * H[k + 1, k]
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            total += 1
            k_used = k + 1
            history.append(abs(g[k + 1]))
            if abs(g[k + 1]) <= target or hk1 == 0:
                break
            V.append(w / hk1)
        y = np.zeros(k_used)
        for i in range(k_used - 1, -1, -1):
            acc = g[i] - np.sum(H[i, i + 1:k_used] * y[i + 1:k_used])
            y[i] = acc / H[i, i] if H[i, i] != 0 else 0.0
        for i in range(k_used):
            x = x + y[i] * Z[i]
        r = b - apply_A(x)
        beta = real_norm(r)
        history.append(beta)
        if k_used == 0:
            break
    return x, GmresInfo(beta <= target, total, beta, history)

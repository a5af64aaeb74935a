"""Independent reference computations used to cross-check the package.

Everything here is deliberately written in a different style from the
library (loops instead of LAPACK, rational arithmetic where possible) so
that agreement between the two routes is meaningful.
"""

from __future__ import annotations

import math

import numpy as np


def jacobi_eigenvalues(a: np.ndarray, sweeps: int = 100, tol: float = 1e-14) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.

    Pure-Python reference, independent of numpy.linalg.  Converges
    quadratically; `sweeps` is a hard cap and the loop exits early once
    the off-diagonal mass drops below tol * ||A||_F.
    """
    m = np.array(a, dtype=np.float64, copy=True)
    n = m.shape[0]
    if n == 1:
        return m[0, 0:1].copy()
    scale = math.sqrt(sum(m[i, j] ** 2 for i in range(n) for j in range(n)))
    threshold = tol * max(scale, 1e-300)
    for _ in range(sweeps):
        off = math.sqrt(2.0 * sum(m[i, j] ** 2 for i in range(n) for j in range(i + 1, n)))
        if off <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = m[p, q]
                if abs(apq) <= 1e-300 * scale:
                    continue
                theta = (m[q, q] - m[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                m = rot.T @ m @ rot
                m = 0.5 * (m + m.T)
    return np.sort(np.diag(m))[::-1].copy()


def jacobi_spectral_norm(a: np.ndarray) -> float:
    w = jacobi_eigenvalues(a)
    return max(abs(w[0]), abs(w[-1]))


def jacobi_schatten(a: np.ndarray, p: float) -> float:
    w = jacobi_eigenvalues(a)
    return float(np.sum(np.abs(w) ** p) ** (1.0 / p))


def power_iteration_norm(a: np.ndarray, iters: int = 2000, seed: int = 7) -> float:
    """Spectral norm of a symmetric matrix by power iteration on A^2."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(a.shape[0])
    v /= math.sqrt(float(v @ v))
    norm = 0.0
    for _ in range(iters):
        w = a @ (a @ v)
        norm = math.sqrt(float(w @ w))
        if norm == 0.0:
            return 0.0
        v = w / norm
    # after convergence ||A^2 v|| = lambda_max(A^2) = ||A||^2
    return math.sqrt(norm)


def standard_normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def reflection_sup_tail(u: float, sigma: float = 1.0, t: float = 1.0) -> float:
    """P(sup_{s<=t} B_s >= u) for scalar Brownian motion, by reflection."""
    return 2.0 * (1.0 - standard_normal_cdf(u / (sigma * math.sqrt(t))))

"""Cyclic Jacobi eigenvalue solver for small dense symmetric matrices."""
from __future__ import annotations

import numpy as np


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Circle-method schedule: ``n - 1`` rounds of ``n / 2`` disjoint pairs (n even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        p = np.array([min(players[i], players[n - 1 - i]) for i in range(n // 2)])
        q = np.array([max(players[i], players[n - 1 - i]) for i in range(n // 2)])
        rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigvalsh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 60) -> np.ndarray:
    """Eigenvalues (ascending) of a symmetric matrix by cyclic Jacobi rotations.

    Each round applies ``n/2`` disjoint rotations at once.  Iteration stops when
    the off-diagonal Frobenius norm drops below ``tol`` times the matrix norm.
    Non-finite input yields an all-NaN result.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n == 0:
        return np.zeros(0)
    if not np.all(np.isfinite(a)):
        return np.full(n, np.nan)
    a = 0.5 * (a + a.T)
    if n == 1:
        return a.diagonal().copy()
    m = n + (n % 2)
    if m != n:
        # an isolated zero row/column never mixes with the rest
        a = np.pad(a, ((0, 1), (0, 1)))
    peak = np.abs(a).max()
    if peak == 0.0:
        return np.zeros(n)
    a = a / peak  # keeps squares finite for entries near the float limit
    scale = np.linalg.norm(a)
    rounds = _round_robin(m)
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))
        if off <= tol * scale:
            break
        for p, q in rounds:
            apq = a[p, q]
            active = apq != 0.0
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            with np.errstate(over="ignore", under="ignore"):
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rp, rq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            cp, cq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = cp * c - cq * s
            a[:, q] = cp * s + cq * c
            a[p, q] = 0.0
            a[q, p] = 0.0
    vals = np.diag(a)[:n] if m == n else np.delete(np.diag(a), n)
    return np.sort(vals) * peak

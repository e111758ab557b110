# src/mpca_retrieval/ml/eigen.py
# Symmetric eigendecomposition for scatter matrices.
# Cyclic Jacobi: each sweep visits every (p, q) pair once, grouped into n-1 round-robin
# rounds of disjoint pairs. The working matrix is kept permuted so that round pair i sits at
# positions (2i, 2i+1); a round is then a handful of in-place ops on strided views, followed
# by one fixed gather that moves the next round's pairs into place.
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from mpca_retrieval.errors import ArgumentError, NumericError, ShapeError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-8
OFF_DIAG_TOL = 1e-12
MAX_SWEEPS = 100
SOLVERS = ("jacobi", "lapack")


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigenvalues in descending order."""
    eigenvalues: np.ndarray

    def __len__(self) -> int:
        return int(self.eigenvalues.shape[0])


def circle_schedule(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Circle-method layout of the first round and the position permutation between rounds.

    n is padded to even m; index n (odd n only) is the bye. layout[2i], layout[2i+1] form
    pair i. Stepping the circle once maps every layout L to L[sigma].
    """
    m = n + (n % 2)
    h = m // 2
    layout = np.empty(m, dtype=np.intp)
    layout[0::2] = np.arange(h)
    layout[1::2] = m - 1 - np.arange(h)
    # player 0 stays, the last player moves to seat 1, the rest shift right
    step = np.concatenate(([0, m - 1], np.arange(1, m - 1))).astype(np.intp)
    where = np.empty(m, dtype=np.intp)
    where[layout] = np.arange(m)
    return layout, where[step[layout]]


def round_robin_pairs(n: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """The schedule as (p, q) arrays per round, p < q, byes dropped."""
    layout, sigma = circle_schedule(n)
    rounds: List[Tuple[np.ndarray, np.ndarray]] = []
    for _ in range(layout.shape[0] - 1):
        a, b = layout[0::2], layout[1::2]
        p, q = np.minimum(a, b), np.maximum(a, b)
        keep = q < n
        order = np.argsort(p[keep], kind="stable")
        rounds.append((p[keep][order], q[keep][order]))
        layout = layout[sigma]
    return rounds


def _off_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def _rotate_pairs(x: np.ndarray, y: np.ndarray, c: np.ndarray, s: np.ndarray, buf: np.ndarray) -> None:
    # in place: x <- c x - s y, y <- s x + c y
    sx, sy = buf[0], buf[1]
    np.multiply(x, s, out=sx)
    np.multiply(y, s, out=sy)
    x *= c
    x -= sy
    y *= c
    y += sx


def _rotate_round(a: np.ndarray, v: np.ndarray, pq: np.ndarray, qp: np.ndarray,
                  row_buf: np.ndarray, col_buf: np.ndarray) -> None:
    flat = a.reshape(-1)
    d = np.diagonal(a)
    app, aqq = d[0::2], d[1::2]
    apq = flat[pq]
    active = apq != 0.0
    safe = np.where(active, apq, 1.0)
    theta = (aqq - app) / (2.0 * safe)
    t = np.where(theta >= 0.0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
    t = np.where(active, t, 0.0)
    c = 1.0 / np.sqrt(t * t + 1.0)
    s = t * c

    _rotate_pairs(a[0::2], a[1::2], c[:, None], s[:, None], row_buf)
    _rotate_pairs(a[:, 0::2], a[:, 1::2], c, s, col_buf)
    flat[pq] = 0.0
    flat[qp] = 0.0
    _rotate_pairs(v[:, 0::2], v[:, 1::2], c, s, col_buf)


def _canonical(w: np.ndarray, vecs: np.ndarray) -> Tuple[Spectrum, np.ndarray]:
    order = np.argsort(-w, kind="stable")
    w = w[order]
    vecs = vecs[:, order]
    # sign: largest-magnitude entry positive (argmax takes the lowest index on ties)
    lead = np.argmax(np.abs(vecs), axis=0)
    signs = np.where(vecs[lead, np.arange(vecs.shape[1])] < 0.0, -1.0, 1.0)
    vecs = vecs * signs
    w.setflags(write=False); vecs.setflags(write=False)
    return Spectrum(w), vecs


def jacobi_eig(s: np.ndarray, name: str = "matrix") -> Tuple[np.ndarray, np.ndarray]:
    """Raw Jacobi: (diagonal, accumulated rotations), unsorted, in input index order."""
    a0 = np.array(s, dtype=np.float64, copy=True)
    n = a0.shape[0]
    tol = OFF_DIAG_TOL * float(np.linalg.norm(a0))
    if n == 1 or _off_norm(a0) <= tol:
        return np.diag(a0).copy(), np.eye(n)

    layout, sigma = circle_schedule(n)
    m = layout.shape[0]
    # the bye row/column of odd n stays zero: its pair always rotates by the identity
    padded = np.zeros((m, m))
    padded[:n, :n] = a0
    a = padded[np.ix_(layout, layout)]
    v = np.eye(m)[:, layout]
    gather_a = (sigma[:, None] * m + sigma[None, :]).reshape(-1)
    gather_v = (np.arange(m)[:, None] * m + sigma[None, :]).reshape(-1)
    h = m // 2
    pq = np.arange(h) * (2 * m + 2) + 1  # flat offsets of (2i, 2i+1)
    qp = pq + m - 1                      # and of (2i+1, 2i)
    row_buf = np.empty((2, h, m))
    col_buf = np.empty((2, m, h))

    for sweep in range(1, MAX_SWEEPS + 1):
        for _ in range(m - 1):
            _rotate_round(a, v, pq, qp, row_buf, col_buf)
            a = a.reshape(-1).take(gather_a).reshape(m, m)
            v = v.reshape(-1).take(gather_v).reshape(m, m)
            layout = layout[sigma]
        off = _off_norm(a)
        if off <= tol:
            logger.debug("[jacobi] %s n=%d sweeps=%d off=%.3e", name, n, sweep, off)
            where = np.empty(m, dtype=np.intp)
            where[layout] = np.arange(m)
            keep = where[:n]
            return np.diag(a)[keep].copy(), np.ascontiguousarray(v[:n][:, keep])
    raise NumericError(
        f"Jacobi eigensolver did not converge for {name} ({n}x{n}) after {MAX_SWEEPS} sweeps"
    )


def sym_eig(s: np.ndarray, method: str = "jacobi", name: str = "matrix") -> Tuple[Spectrum, np.ndarray]:
    """Eigenvalues (descending) and unit eigenvectors as columns, with canonical signs."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] == 0:
        raise ShapeError(f"{name} must be a non-empty square matrix, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise NumericError(f"{name} has non-finite entries")
    norm = float(np.linalg.norm(s))
    if float(np.linalg.norm(s - s.T)) > SYMMETRY_TOL * norm:
        raise ArgumentError(f"{name} is not symmetric within {SYMMETRY_TOL:g} relative")
    s = 0.5 * (s + s.T)
    if method == "jacobi":
        w, vecs = jacobi_eig(s, name=name)
    elif method == "lapack":
        w, vecs = np.linalg.eigh(s)
        w, vecs = w[::-1].copy(), vecs[:, ::-1].copy()
    else:
        raise ArgumentError(f"unknown eigen solver {method!r}; choose from {SOLVERS}")
    return _canonical(w, vecs)

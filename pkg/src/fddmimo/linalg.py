"""Dense complex linear algebra helpers and seeded random streams.

Everything downstream runs in complex128/float64. Random streams are numpy
``Generator`` objects on PCG64; a single master seed fans out to independent
child streams keyed by a text label.
"""
import zlib
from typing import Optional

import numpy as np
import scipy.linalg

__all__ = ["lstsq", "rank", "make_rng", "child_seed", "child_rng", "randn"]


def lstsq(A, b, rcond: Optional[float] = None) -> np.ndarray:
    """Least-squares solution of ``A x = b``.

    Uses QR with column pivoting. When the pivoted R factor reveals rank
    deficiency the minimum-norm solution is taken from an SVD-based solver
    instead, since pivoted QR only yields a basic solution.

    Parameters
    ----------
    A : array_like, shape (p, q)
    b : array_like, shape (p,)
    rcond : float, optional
        Relative threshold on the diagonal of R below which a column counts
        as dependent. Defaults to ``max(p, q) * eps``.

    Returns
    -------
    np.ndarray, shape (q,)
    """
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    b = np.asarray(b, dtype=complex)
    if b.ndim != 1 or A.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, b is {b.shape}")
    p, q = A.shape
    if p == 0 or q == 0:
        raise ValueError("A must have at least one row and one column")
    if rcond is None:
        rcond = max(p, q) * np.finfo(float).eps

    Q, R, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        return np.zeros(q, dtype=complex)
    r = int(np.sum(diag > rcond * diag[0]))
    if r < q:
        x, *_ = scipy.linalg.lstsq(A, b, cond=rcond, lapack_driver="gelsd")
        return x
    x_piv = scipy.linalg.solve_triangular(R[:q, :q], Q.conj().T @ b)
    x = np.empty(q, dtype=complex)
    x[piv] = x_piv
    return x


def rank(A, tol: float = 1e-9) -> int:
    """Number of singular values above ``tol`` times the largest one."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    s = np.linalg.svd(np.atleast_2d(A), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def child_seed(master: int, label: str) -> int:
    """Deterministic 64-bit seed for the stream named ``label``."""
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF,
                                 zlib.crc32(label.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def child_rng(master: int, label: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``label``, optionally split further by ints.

    ``child_rng(seed, "noise", trial)`` gives every trial its own stream so
    Monte-Carlo results do not depend on execution order.
    """
    seed = child_seed(master, label)
    if extra:
        seed = int(np.random.SeedSequence([seed, *extra]).generate_state(1, dtype=np.uint64)[0])
    return make_rng(seed)


def randn(rng: np.random.Generator, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return rng.standard_normal(n)

"""Dense-matrix primitives with the numerically sensitive parts done carefully.

Matrices are 2-D float64 ``numpy.ndarray`` in row-major order throughout the
package. This module owns the primitives whose naive forms overflow or lose
precision (row softmax, log-sum-exp), a thin SVD specialised to 3-column
optical-density matrices, the finite-difference gradient checker used by every
backward-pass test, splittable counter-based random streams, and the FMAT1
binary matrix format used for patch embeddings and checkpoints.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DomainError, ShapeError

FMAT_MAGIC = b"FMAT1\x00\x00\x00"


def as_matrix(a) -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting anything else."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit shape check.

    Raises ShapeError naming both operand shapes on an inner-dimension
    mismatch instead of numpy's generic broadcast error.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions differ for {a.shape[0]}x{a.shape[1]} "
            f"times {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def softmax_rows(a) -> np.ndarray:
    """Row-wise softmax, stabilised by subtracting each row's maximum.

    Every output row sums to 1 to within 1e-12; entries as large as the
    float64 exponent range do not overflow because the shifted exponents
    are all <= 0.
    """
    a = as_matrix(a)
    if a.size and not np.isfinite(a).all():
        raise DomainError("softmax_rows: input contains non-finite entries")
    # the shift can underflow to -inf at the float64 extremes; exp maps
    # that to exactly 0, which is the correct limit
    with np.errstate(over="ignore"):
        shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def logsumexp(v) -> float:
    """log(sum(exp(v))) computed via the max-shift identity.

    Agrees with the naive evaluation to 1e-10 whenever the naive form does
    not overflow, and never overflows itself.
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise DomainError("logsumexp: empty vector")
    if not np.isfinite(v).all():
        raise DomainError("logsumexp: input contains non-finite entries")
    m = v.max()
    return float(m + np.log(np.exp(v - m).sum()))


def svd_thin(a):
    """Thin SVD of an n x 3 matrix via the 3x3 Gram eigendecomposition.

    Returns (U, S, Vt) with S descending and non-negative, U of shape n x 3
    with orthonormal columns, Vt of shape 3 x 3. Singular values below
    1e-12 of the largest get their U column rebuilt by orthogonal
    completion, which keeps U orthonormal for rank-deficient input; the
    reconstruction a = U @ diag(S) @ Vt is unaffected because those
    columns are multiplied by (near-)zero.

    Only the 3-column case is supported: that is all the stain-separation
    path needs, and the Gram matrix route is exact and cheap there.
    """
    a = as_matrix(a)
    if a.shape[1] != 3:
        raise ShapeError(f"svd_thin: expected 3 columns, got {a.shape[1]}")
    if a.shape[0] < 3:
        raise ShapeError(f"svd_thin: need at least 3 rows, got {a.shape[0]}")

    gram = a.T @ a
    w, vecs = np.linalg.eigh(gram)  # ascending eigenvalues
    order = np.argsort(w)[::-1]
    w = w[order]
    v = vecs[:, order]
    s = np.sqrt(np.clip(w, 0.0, None))

    tiny = s[0] * 1e-12
    u = np.zeros((a.shape[0], 3))
    for k in range(3):
        if s[k] > tiny:
            u[:, k] = (a @ v[:, k]) / s[k]
        else:
            u[:, k] = _complete_column(u[:, :k])
    return u, s, v.T


def _complete_column(existing: np.ndarray) -> np.ndarray:
    """A unit vector orthogonal to the given orthonormal columns."""
    n = existing.shape[0]
    # try standard basis vectors least aligned with the current span
    best = None
    best_norm = -1.0
    for i in range(n):
        cand = np.zeros(n)
        cand[i] = 1.0
        if existing.shape[1]:
            cand -= existing @ (existing.T @ cand)
        nrm = np.linalg.norm(cand)
        if nrm > best_norm:
            best_norm = nrm
            best = cand
    return best / best_norm


def grad_check(f, x, analytic_grad, eps: float = 1e-5) -> float:
    """Max relative error between central differences of f and an analytic gradient.

    For each coordinate i the finite difference is
    (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) and the relative error is
    |fd - g_i| / max(1, |fd|, |g_i|). Raises DomainError if f evaluates
    non-finite at any probe point.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    g = np.asarray(analytic_grad, dtype=np.float64).ravel()
    if x.shape != g.shape:
        raise ShapeError(f"grad_check: x has {x.size} coords, gradient has {g.size}")
    if eps <= 0:
        raise DomainError("grad_check: eps must be positive")

    worst = 0.0
    for i in range(x.size):
        probe = x.copy()
        probe[i] = x[i] + eps
        f_plus = float(f(probe))
        probe[i] = x[i] - eps
        f_minus = float(f(probe))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise DomainError(f"grad_check: non-finite objective at coordinate {i}")
        fd = (f_plus - f_minus) / (2.0 * eps)
        err = abs(fd - g[i]) / max(1.0, abs(fd), abs(g[i]))
        worst = max(worst, err)
    return worst


def rng_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based random stream keyed by (seed, stream).

    Philox is a pure counter-mode generator: the same key always yields the
    same sequence on every platform, and distinct stream ids give
    statistically independent sub-streams. All randomness in the package is
    drawn through this function so that fold shuffles, batch orders and
    synthetic cohorts replay exactly.
    """
    if seed < 0 or stream < 0:
        raise DomainError("rng_stream: seed and stream must be non-negative")
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def write_fmat(path, a) -> None:
    """Write a matrix in the FMAT1 format.

    Layout: 8-byte magic ``FMAT1\\0\\0\\0``, rows as u64 LE, cols as u64 LE,
    then rows*cols float64 LE values in row-major order.
    """
    a = as_matrix(a)
    with open(path, "wb") as fh:
        fh.write(fmat_bytes(a))


def fmat_bytes(a) -> bytes:
    a = np.ascontiguousarray(as_matrix(a))
    header = FMAT_MAGIC + struct.pack("<QQ", a.shape[0], a.shape[1])
    return header + a.astype("<f8").tobytes()


def read_fmat(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    return fmat_from_bytes(data)


def fmat_from_bytes(data: bytes) -> np.ndarray:
    if len(data) < 24 or data[:8] != FMAT_MAGIC:
        raise DomainError("FMAT1: bad magic")
    rows, cols = struct.unpack("<QQ", data[8:24])
    expect = 24 + rows * cols * 8
    if len(data) != expect:
        raise DomainError(f"FMAT1: expected {expect} bytes for {rows}x{cols}, got {len(data)}")
    flat = np.frombuffer(data, dtype="<f8", offset=24, count=rows * cols)
    return flat.reshape(rows, cols).astype(np.float64)

"""Top eigenpairs of the scaled covariance ``Phi^{1/2} S Phi^{1/2}``.

Three routes compute the same quantity:

* ``DENSE``: a symmetric eigensolver on the explicit ``p x p`` matrix.
* ``GRAM``: for ``n < p`` the spectrum comes from the ``n x n`` Gram matrix
  of ``x Phi^{1/2} / sqrt(n)``; eigenvectors are mapped back with
  ``v = Phi^{1/2} x^T u / (sqrt(n) sigma)`` and polished by one Rayleigh-Ritz
  projection. No ``p x p`` array is created.
* ``ITERATIVE``: block subspace iteration with Rayleigh-Ritz extraction and
  locking of converged pairs, for large ``p`` and ``n``.

Eigenvalues are returned in descending order and clamped at zero; each
eigenvector is signed so its largest-magnitude entry is positive.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DomainError, NumericalError

DENSE_MAX_P = 2048
ITER_TOL = 1e-10
ITER_MAX_MATVECS = 5000


class Strategy(str, enum.Enum):
    DENSE = "dense"
    GRAM = "gram"
    ITERATIVE = "iterative"


@dataclass(frozen=True, eq=False)
class ScaledSpectrum:
    """Leading eigenpairs of the scaled covariance at one ``phi``.

    ``eigenvalues`` may be shorter than the requested count when the
    scaled covariance has fewer nonzero eigenvalues (``n < p``); missing
    entries are zeros, see :meth:`padded`.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    strategy: Strategy

    def padded(self, k):
        out = np.zeros(k)
        m = min(k, self.eigenvalues.size)
        out[:m] = self.eigenvalues[:m]
        return out


def _canonical_signs(v):
    if v.size == 0:
        return v
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs


def _order_desc(w, v):
    # stable on the negated ascending output keeps ties in solver order
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def dense_top(a, q):
    """Top ``q`` eigenpairs of the symmetric matrix ``a`` (lower triangle used)."""
    p = a.shape[0]
    if p <= 256 or 2 * q > p:
        w, v = np.linalg.eigh(a)
        w, v = w[p - q:], v[:, p - q:]
    else:
        w, v = scipy.linalg.eigh(a, lower=True, subset_by_index=[p - q, p - 1], check_finite=False)
    w, v = _order_desc(w, v)
    return np.maximum(w, 0.0), _canonical_signs(v)


def scaled_dense(s, half):
    """``diag(half) @ s @ diag(half)`` as elementwise products."""
    return (half[:, None] * s) * half[None, :]


def _gram_top(cov, half, q):
    y = cov.x * half[None, :] / np.sqrt(cov.n)
    g = y @ y.T
    w, v = np.linalg.eigh(g)
    w, v = _order_desc(w, v)
    wmax = max(w[0], 0.0)
    keep = int(np.sum(w[:q] > 1e-13 * wmax)) if wmax > 0 else 0
    if keep == 0:
        return np.zeros(0), np.zeros((cov.p, 0))
    sig = np.sqrt(w[:keep])
    u = (y.T @ v[:, :keep]) / sig
    # Rayleigh-Ritz on span(u) restores orthonormality lost for small sigma
    qmat, _ = np.linalg.qr(u)
    b = y @ qmat
    wr, vr = np.linalg.eigh(b.T @ b)
    wr, vr = _order_desc(wr, vr)
    return np.maximum(wr, 0.0), _canonical_signs(qmat @ vr)


def _block_power(apply, p, q, tol, max_matvecs, seed, start):
    b = min(p, max(2 * q, q + 8))
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal((p, b))
    if start is not None:
        k = min(start.shape[1], b)
        x0[:, :k] = start[:, :k]
    qmat, _ = np.linalg.qr(x0)
    locked_v = np.zeros((p, 0))
    locked_w = np.zeros(0)
    matvecs = 0
    scale = None
    while matvecs < max_matvecs:
        if locked_v.shape[1]:
            qmat = qmat - locked_v @ (locked_v.T @ qmat)
            qmat, _ = np.linalg.qr(qmat)
        y = apply(qmat)
        matvecs += 1
        t = qmat.T @ y
        w, z = np.linalg.eigh(0.5 * (t + t.T))
        w, z = _order_desc(w, z)
        ritz = qmat @ z
        ay = y @ z
        if scale is None:
            scale = max(1.0, abs(w[0]))
        res = np.linalg.norm(ay - ritz * w, axis=0)
        need = q - locked_v.shape[1]
        nconv = 0
        while nconv < need and res[nconv] <= tol * scale:
            nconv += 1
        if nconv:
            locked_v = np.hstack([locked_v, ritz[:, :nconv]])
            locked_w = np.concatenate([locked_w, w[:nconv]])
            if locked_v.shape[1] >= q:
                break
            qmat = ritz[:, nconv:]
            y = ay[:, nconv:]
        qmat, _ = np.linalg.qr(y)
    else:
        raise NumericalError(
            f"block power iteration did not converge in {max_matvecs} block products "
            f"({locked_v.shape[1]}/{q} pairs locked)"
        )
    w, v = _order_desc(locked_w, locked_v)
    return np.maximum(w, 0.0), _canonical_signs(v)


def choose_strategy(cov):
    if cov.has_x and cov.n < cov.p:
        return Strategy.GRAM
    if cov.has_s and cov.p <= DENSE_MAX_P:
        return Strategy.DENSE
    return Strategy.ITERATIVE


def eig_top(cov, phi, r, strategy=None, guard=True, start=None, tol=ITER_TOL,
            max_matvecs=ITER_MAX_MATVECS, seed=0):
    """Leading eigenpairs of ``Phi^{1/2} S Phi^{1/2}``.

    Parameters
    ----------
    cov : CovarianceInput
    phi : ndarray, shape (p,)
        Positive diagonal of ``Phi``.
    r : int
        Number of pairs requested, ``1 <= r < p``.
    strategy : Strategy or str, optional
        Force a route; chosen from the shape of ``cov`` when omitted.
    guard : bool
        Also compute pair ``r + 1`` so callers can detect ties at rank ``r``.
    start : ndarray, optional
        Starting block for the iterative route (e.g. the previous ``U``).

    Returns
    -------
    ScaledSpectrum
    """
    p = cov.p
    r = int(r)
    if not 1 <= r < p:
        raise DomainError(f"rank r={r} must satisfy 1 <= r < p={p}")
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (p,):
        raise DomainError(f"phi must have shape ({p},), got {phi.shape}")
    if not np.all(np.isfinite(phi)) or np.any(phi <= 0):
        raise DomainError("phi must be finite and strictly positive")
    q = min(r + 1, p) if guard else r
    strategy = choose_strategy(cov) if strategy is None else Strategy(strategy)
    half = np.sqrt(phi)

    if strategy is Strategy.DENSE:
        if not cov.has_s and p > DENSE_MAX_P:
            raise DomainError("dense strategy needs a materialized covariance")
        w, v = dense_top(scaled_dense(cov.covariance(), half), q)
    elif strategy is Strategy.GRAM:
        if not cov.has_x:
            raise DomainError("Gram strategy needs the data matrix")
        w, v = _gram_top(cov, half, q)
    else:
        def apply(block):
            return half[:, None] * cov.matmul(half[:, None] * block)

        w, v = _block_power(apply, p, q, tol, max_matvecs, seed, start)
    return ScaledSpectrum(w, v, strategy)


def residuals(cov, phi, spectrum):
    """Norms ``||S* u_i - lambda_i u_i||`` for each returned pair."""
    half = np.sqrt(np.asarray(phi, dtype=float))
    u = spectrum.eigenvectors
    au = half[:, None] * cov.matmul(half[:, None] * u)
    return np.linalg.norm(au - u * spectrum.eigenvalues, axis=0)

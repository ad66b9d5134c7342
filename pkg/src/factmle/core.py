"""Difference-of-convex objective in the uniqueness precisions ``phi = 1/psi``.

For a rank ``r`` the profiled negative log-likelihood is ``f = f1 - f2`` with

    f1(phi) = sum_i (-log phi_i + s_ii phi_i)
    f2(phi) = -sum_{i<=r} (log max(1, l_i) - max(1, l_i) + 1)

where ``l_1 >= l_2 >= ...`` are the eigenvalues of ``Phi^{1/2} S Phi^{1/2}``.
Both parts are convex; ``f2`` is a spectral function and is generally
nonsmooth, so only a subgradient is available.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .spectra import eig_top

ONE_BAND = 1e-12
TIE_RTOL = 1e-9


def check_feasible(phi, p, eps=None):
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (p,):
        raise DomainError(f"phi must have shape ({p},), got {phi.shape}")
    if not np.all(np.isfinite(phi)) or np.any(phi <= 0):
        raise DomainError("phi must be finite and strictly positive")
    if eps is not None and np.any(phi > (1.0 / eps) * (1 + 1e-12)):
        raise DomainError(f"phi exceeds the box bound 1/eps = {1.0 / eps:g}")
    return phi


def spectral_penalty(lam):
    """Per-eigenvalue terms ``log max(1,l) - max(1,l) + 1`` (all <= 0)."""
    m = np.maximum(1.0, lam)
    return np.log(m) - m + 1.0


@dataclass(frozen=True)
class ObjectiveValue:
    f: float
    f1: float
    f2: float
    lambda_star: np.ndarray


@dataclass(frozen=True)
class SubgradientWorkspace:
    grad: np.ndarray
    delta: np.ndarray
    tie_flag: bool


def f1_value(cov, phi):
    return float(np.sum(-np.log(phi) + cov.s_diag * phi))


def f2_value(lam, r):
    lam = np.asarray(lam, dtype=float)[:r]
    return float(-np.sum(spectral_penalty(lam)))


def objective(cov, phi, r, eps=None, spectrum=None, strategy=None):
    """Evaluate ``f``, ``f1`` and ``f2`` at ``phi``.

    Pass a precomputed ``spectrum`` (at the same ``phi``) to avoid a second
    eigendecomposition.
    """
    phi = check_feasible(phi, cov.p, eps)
    if spectrum is None:
        spectrum = eig_top(cov, phi, r, strategy=strategy)
    lam = spectrum.padded(r)
    f1 = f1_value(cov, phi)
    f2 = f2_value(lam, r)
    return ObjectiveValue(f1 - f2, f1, f2, lam)


def full_rank_objective(cov, phi, r):
    """Objective written through all eigenvalues of the scaled covariance.

    Equals ``f(phi) - log det S``; requires ``S`` positive definite.
    """
    phi = check_feasible(phi, cov.p)
    s = cov.covariance()
    ev = np.linalg.eigvalsh(s)
    if ev[0] <= 1e-10 * ev[-1]:
        raise DomainError("covariance is numerically singular")
    half = np.sqrt(phi)
    lam = np.sort(np.linalg.eigvalsh((half[:, None] * s) * half[None, :]))[::-1]
    return float(np.sum(-np.log(lam) + lam) + np.sum(spectral_penalty(lam[:r])))


def deltas(lam, r):
    """Diagonal of ``D1``: ``max(0, 1 - 1/l)`` on the top ``r`` eigenvalues."""
    lam = np.asarray(lam, dtype=float)[:r]
    d = np.zeros_like(lam)
    big = lam > 1.0 + ONE_BAND
    d[big] = 1.0 - 1.0 / lam[big]
    return d


def is_tie(lam, r):
    lam = np.asarray(lam, dtype=float)
    a = lam[r - 1] if lam.size >= r else 0.0
    b = lam[r] if lam.size > r else 0.0
    return bool(abs(a - b) <= TIE_RTOL * max(abs(a), abs(b)))


def rowwise_dot(a, bt):
    """``diag(a @ bt.T)`` for equally shaped ``a`` and ``bt``."""
    return np.einsum("ik,ik->i", np.ascontiguousarray(a), np.ascontiguousarray(bt))


def low_rank_factors(cov, half, u, delta):
    """Factors ``T1 = Phi^{-1/2} U D1`` and ``T2 = U^T Phi^{1/2} S``."""
    z = half[:, None] * u
    if cov.has_s and not (cov.has_x and cov.n < cov.p):
        t2 = z.T @ cov.s
    else:
        t2 = (cov.x @ z).T @ cov.x / cov.n
    t1 = ((1.0 / half)[:, None] * u) * delta[None, :]
    return t1, t2


def subgradient_f2(cov, phi, r, spectrum=None, strategy=None):
    """A subgradient of ``f2`` at ``phi``.

    Coordinate ``i`` is the ``i``-th diagonal entry of
    ``Phi^{-1/2} U D1 U^T Phi^{1/2} S``, computed as the row-wise product of
    the two thin factors, so the cost is ``O(p r)`` beyond forming them.
    At a tie between eigenvalues ``r`` and ``r + 1`` the first ``r`` pairs in
    solver order are used and ``tie_flag`` is set.
    """
    phi = check_feasible(phi, cov.p)
    if spectrum is None:
        spectrum = eig_top(cov, phi, r, strategy=strategy)
    lam = spectrum.padded(r)
    delta = deltas(lam, r)
    k = int(np.count_nonzero(delta))
    grad = np.zeros(cov.p)
    if k:
        # delta is nonzero on a leading run because lam is sorted
        u = spectrum.eigenvectors[:, :k]
        t1, t2 = low_rank_factors(cov, np.sqrt(phi), u, delta[:k])
        grad = rowwise_dot(t1, t2.T)
    tie = is_tie(spectrum.padded(r + 1), r)
    return SubgradientWorkspace(grad, delta, tie)

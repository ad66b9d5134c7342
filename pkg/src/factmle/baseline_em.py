"""Reference EM algorithm for ML factor analysis (Rubin-Thayer recursions).

Only ``S`` is needed (through ``cov.matmul``), so for ``n < p`` inputs the
products go through the data matrix and no ``p x p`` array is formed. Each
iteration costs ``O(p r^2)`` plus one product of ``S`` with a ``p x r``
matrix.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericalError
from .model import FactorModel, neg_loglik
from .solver import SolverTrace, Termination
from .spectra import eig_top

MONO_RTOL = 1e-8
EIGEN_INIT_FLOOR = 1e-2


@dataclass(frozen=True)
class EmConfig:
    """Settings for :func:`solve_em`.

    ``init="eigen"`` starts from ``psi = diag(S)/2`` and loadings along the
    top ``r`` eigenvectors of ``S`` scaled by
    ``sqrt(max(l - mean(psi), 0.01 mean(psi)))``;
    ``init="random"`` draws the loadings from ``N(0, 1/r)`` with ``seed``.
    """

    r: int
    max_iters: int = 2000
    tol: float = 1e-8
    seed: int | None = None
    psi_floor: float = 1e-10
    init: str = "eigen"

    def __post_init__(self):
        if self.r < 1:
            raise DomainError("r must be at least 1")
        if self.max_iters < 1 or not self.tol > 0 or not self.psi_floor > 0:
            raise DomainError("max_iters >= 1, tol > 0 and psi_floor > 0 are required")
        if self.init not in ("eigen", "random"):
            raise DomainError(f"unknown EM init {self.init!r}")


def em_start(cov, config):
    psi = np.maximum(0.5 * cov.s_diag, config.psi_floor)
    r = config.r
    if config.init == "random":
        rng = np.random.default_rng(config.seed)
        L = rng.standard_normal((cov.p, r)) * np.sqrt(cov.s_diag)[:, None] / np.sqrt(r)
        return psi, L
    spec = eig_top(cov, np.ones(cov.p), r, guard=False)
    lam = spec.padded(r)
    L = np.zeros((cov.p, r))
    m = spec.eigenvalues[:r].size
    # zero columns are fixed points of EM, so keep every column alive
    scale = np.maximum(lam[:m] - psi.mean(), EIGEN_INIT_FLOOR * psi.mean())
    L[:, :m] = spec.eigenvectors[:, :m] * np.sqrt(scale)
    return psi, L


def em_step(cov, psi, L, psi_floor):
    """One E-step/M-step pair; returns the updated ``(psi, L)``."""
    r = L.shape[1]
    b = L / psi[:, None]
    m = np.eye(r) + L.T @ b
    c = np.linalg.cholesky(m)
    # beta = M^{-1} B^T  (r x p); S beta^T = S B M^{-1}
    sb = cov.matmul(b)
    sbeta = np.linalg.solve(c.T, np.linalg.solve(c, sb.T)).T
    beta_l = np.linalg.solve(c.T, np.linalg.solve(c, b.T @ L))
    bsb = np.linalg.solve(c.T, np.linalg.solve(c, b.T @ sbeta))
    ezz = np.eye(r) - beta_l + bsb
    ezz = 0.5 * (ezz + ezz.T)
    L_new = np.linalg.solve(ezz, sbeta.T).T
    psi_new = cov.s_diag - np.einsum("ik,ik->i", L_new, sbeta)
    return np.maximum(psi_new, psi_floor), L_new


def solve_em(cov, config):
    """Run EM until the relative decrease of the likelihood drops below ``tol``.

    Returns
    -------
    model : FactorModel
    trace : SolverTrace
        ``objectives`` holds the negative log-likelihood at every iterate.

    Raises
    ------
    NumericalError
        If the likelihood increases by more than ``1e-8`` relative, which
        would contradict the EM ascent property.
    """
    if not config.r < cov.p:
        raise DomainError(f"rank r={config.r} must be smaller than p={cov.p}")
    t0 = time.perf_counter()
    psi, L = em_start(cov, config)
    trace = SolverTrace()
    f_cur = neg_loglik(cov, psi, L)
    trace.objectives.append(f_cur)
    trace.times.append(time.perf_counter() - t0)
    for _ in range(config.max_iters):
        psi_new, L_new = em_step(cov, psi, L, config.psi_floor)
        f_new = neg_loglik(cov, psi_new, L_new)
        if not np.isfinite(f_new):
            raise NumericalError("EM produced a non-finite likelihood")
        if f_new > f_cur + MONO_RTOL * max(1.0, abs(f_cur)):
            raise NumericalError(
                f"EM likelihood increased from {f_cur:.12g} to {f_new:.12g} at iteration {trace.iterations + 1}"
            )
        trace.iterations += 1
        trace.objectives.append(f_new)
        trace.step_norms.append(float(np.linalg.norm(psi_new - psi)))
        trace.times.append(time.perf_counter() - t0)
        done = f_cur - f_new < config.tol * max(1.0, abs(f_new))
        psi, L, f_cur = psi_new, L_new, f_new
        if done:
            trace.termination = Termination.CONVERGED
            break
    else:
        trace.termination = Termination.MAX_ITERS
    rank_used = int(np.sum(np.linalg.norm(L, axis=0) > 1e-8 * np.sqrt(cov.s_diag.max())))
    return FactorModel(psi, L, f_cur, rank_used), trace

"""Factor model recovery from a solved ``phi`` and likelihood evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import ONE_BAND, check_feasible
from .errors import DomainError
from .spectra import eig_top

DENSE_SIGMA_MAX_P = 2048


@dataclass(frozen=True, eq=False)
class FactorModel:
    """``Sigma = diag(psi) + L L^T`` kept in factored form.

    Loadings are returned in the canonical eigenvector basis; any
    orthogonal rotation ``L @ Q`` describes the same ``Sigma``.
    """

    psi: np.ndarray
    loadings: np.ndarray
    neg_loglik: float
    rank_used: int

    @property
    def p(self):
        return self.psi.size

    @property
    def r(self):
        return self.loadings.shape[1]

    def covariance(self):
        if self.p > DENSE_SIGMA_MAX_P:
            raise DomainError(f"refusing to materialize a dense {self.p}x{self.p} covariance")
        return np.diag(self.psi) + self.loadings @ self.loadings.T

    def to_dict(self):
        return {
            "psi": self.psi.tolist(),
            "loadings": self.loadings.tolist(),
            "neg_loglik": float(self.neg_loglik),
            "rank_used": int(self.rank_used),
            "r": int(self.r),
            "p": int(self.p),
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        psi = np.asarray(d["psi"], dtype=float)
        L = np.asarray(d["loadings"], dtype=float).reshape(psi.size, d["r"])
        return cls(psi, L, float(d["neg_loglik"]), int(d["rank_used"]))


def neg_loglik(cov, psi, loadings):
    """``log det Sigma + tr(Sigma^{-1} S)`` for ``Sigma = diag(psi) + L L^T``.

    Uses the Woodbury identity and the matrix determinant lemma, so the
    cost is ``O(p r^2)`` plus one product of ``S`` with a ``p x r`` matrix.
    """
    psi = np.asarray(psi, dtype=float)
    L = np.asarray(loadings, dtype=float).reshape(psi.size, -1)
    if np.any(psi <= 0) or not np.all(np.isfinite(psi)):
        raise DomainError("all uniquenesses must be positive and finite")
    val = float(np.sum(np.log(psi)) + np.sum(cov.s_diag / psi))
    if L.shape[1] == 0 or not np.any(L):
        return val
    b = L / psi[:, None]
    m = np.eye(L.shape[1]) + L.T @ b
    c = np.linalg.cholesky(m)
    logdet_m = 2.0 * np.sum(np.log(np.diag(c)))
    bsb = cov.quad(b)
    tr = np.trace(np.linalg.solve(m, bsb))
    return val + logdet_m - float(tr)


def recover_loadings(cov, phi, r, spectrum=None, strategy=None):
    """Optimal loadings for fixed ``psi = 1/phi``.

    Column ``i`` is ``Psi^{1/2}`` times the ``i``-th eigenvector of
    ``Phi^{1/2} S Phi^{1/2}`` scaled to norm ``sqrt(l_i - 1)``, and zero when
    ``l_i <= 1``.
    """
    phi = check_feasible(phi, cov.p)
    if spectrum is None:
        spectrum = eig_top(cov, phi, r, strategy=strategy)
    lam = spectrum.padded(r)
    L = np.zeros((cov.p, r))
    keep = np.flatnonzero(lam > 1.0 + ONE_BAND)
    psi = 1.0 / phi
    if keep.size:
        u = spectrum.eigenvectors[:, keep]
        L[:, keep] = np.sqrt(psi)[:, None] * u * np.sqrt(lam[keep] - 1.0)
    return FactorModel(psi, L, neg_loglik(cov, psi, L), int(keep.size))

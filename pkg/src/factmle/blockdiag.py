"""DC iteration with a block-diagonal precision ``Phi = blkdiag(Phi_1, ..., Phi_m)``.

The objective is ``H = F1 - F2`` with ``F1 = -log det Phi + tr(Phi S)`` and
``F2`` the convex spectral part evaluated on ``Phi^{1/2} S Phi^{1/2}``
(``Phi^{1/2}`` is the blockwise symmetric square root). A subgradient of
``F2`` is ``Phi^{-1/2} U diag(delta * lambda) U^T Phi^{-1/2}``, and the DC
step solves each block exactly: ``Phi_b <- (S_bb - grad_bb)^{-1}``.

Blocks of size one go through the same elementwise kernels as the diagonal
solver, so an all-singleton structure reproduces its iterates exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import deltas, f2_value, is_tie, rowwise_dot
from .errors import DomainError, NumericalError
from .solver import STALL_RTOL, SolverTrace, StopRule, Termination, _stop
from .spectra import dense_top

EIG_FLOOR = 1e-10
PD_SLACK = 1e-6
SPD_RTOL = 1e-12


@dataclass(frozen=True)
class BlockStructure:
    """Contiguous partition of ``range(p)`` into blocks of the given sizes."""

    sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(k) for k in self.sizes)
        if not sizes or any(k < 1 for k in sizes):
            raise DomainError("block sizes must be positive integers")
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def parse(cls, text):
        """Build from a comma-separated size list such as ``"3,3,2"``."""
        try:
            sizes = [int(tok) for tok in str(text).split(",") if tok.strip()]
        except ValueError as exc:
            raise DomainError(f"bad block list {text!r}") from exc
        return cls(tuple(sizes))

    @classmethod
    def singletons(cls, p):
        return cls((1,) * p)

    @property
    def p(self):
        return sum(self.sizes)

    @property
    def m(self):
        return len(self.sizes)

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)

    def ranges(self):
        o = self.offsets
        return [slice(o[b], o[b + 1]) for b in range(self.m)]

    def singleton_index(self):
        o = self.offsets[:-1]
        return o[np.asarray(self.sizes) == 1]

    def wide_ranges(self):
        return [sl for sl, k in zip(self.ranges(), self.sizes) if k > 1]


def _sym_power(a, power):
    w, v = np.linalg.eigh(a)
    return (v * w ** power) @ v.T


class BlockPrecision:
    """Symmetric positive definite blocks ``Phi_1..Phi_m`` on a :class:`BlockStructure`.

    Singleton blocks are stored as a vector so they can be handled with the
    same elementwise arithmetic as a diagonal ``phi``.
    """

    def __init__(self, structure, blocks):
        self.structure = structure
        blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
        if len(blocks) != structure.m:
            raise DomainError(f"expected {structure.m} blocks, got {len(blocks)}")
        for b, (blk, k) in enumerate(zip(blocks, structure.sizes)):
            if blk.shape != (k, k):
                raise DomainError(f"block {b} has shape {blk.shape}, expected ({k}, {k})")
            if not np.all(np.isfinite(blk)):
                raise DomainError(f"block {b} is not finite")
            if not np.allclose(blk, blk.T, rtol=0, atol=1e-12 * max(1.0, np.abs(blk).max())):
                raise DomainError(f"block {b} is not symmetric")
            w = np.linalg.eigvalsh(blk)
            if w[0] <= SPD_RTOL * w[-1] or w[-1] <= 0:
                raise DomainError(f"block {b} is not positive definite")
        self.blocks = [0.5 * (b + b.T) for b in blocks]
        single = structure.singleton_index()
        self._single = single
        self._single_phi = np.array([self.blocks[b][0, 0] for b, k in enumerate(structure.sizes) if k == 1])
        self._wide = [(sl, self.blocks[b]) for b, (sl, k) in enumerate(zip(structure.ranges(), structure.sizes)) if k > 1]
        self._wide_half = [(sl, _sym_power(blk, 0.5)) for sl, blk in self._wide]
        self._wide_ihalf = [(sl, _sym_power(blk, -0.5)) for sl, blk in self._wide]

    @classmethod
    def from_diagonal(cls, structure, phi):
        phi = np.asarray(phi, dtype=float)
        o = structure.offsets
        return cls(structure, [np.diag(phi[o[b]:o[b + 1]]) for b in range(structure.m)])

    @classmethod
    def from_dense(cls, structure, a):
        return cls(structure, [a[sl, sl] for sl in structure.ranges()])

    @property
    def p(self):
        return self.structure.p

    def dense(self):
        out = np.zeros((self.p, self.p))
        for sl, blk in zip(self.structure.ranges(), self.blocks):
            out[sl, sl] = blk
        return out

    def diagonal_vector(self):
        """The singleton entries as a length-``p`` vector (only valid when all blocks are singletons)."""
        if self._wide:
            raise DomainError("structure has blocks larger than one")
        return self._single_phi.copy()

    def _left(self, m, single, wide):
        out = np.empty_like(m)
        out[self._single] = single[:, None] * m[self._single]
        for sl, h in wide:
            out[sl] = h @ m[sl]
        return out

    def half_left(self, m):
        """``Phi^{1/2} @ m``."""
        return self._left(m, np.sqrt(self._single_phi), self._wide_half)

    def ihalf_left(self, m):
        """``Phi^{-1/2} @ m``."""
        return self._left(m, 1.0 / np.sqrt(self._single_phi), self._wide_ihalf)

    def scaled(self, s):
        """``Phi^{1/2} S Phi^{1/2}`` with the same operation order as the diagonal kernel."""
        half = np.sqrt(self._single_phi)
        a = np.empty_like(s)
        a[self._single] = half[:, None] * s[self._single]
        for sl, h in self._wide_half:
            a[sl] = h @ s[sl]
        out = np.empty_like(a)
        out[:, self._single] = a[:, self._single] * half[None, :]
        for sl, h in self._wide_half:
            out[:, sl] = a[:, sl] @ h
        return out

    def logdet(self):
        val = float(np.sum(np.log(self._single_phi)))
        for _, blk in self._wide:
            val += np.linalg.slogdet(blk)[1]
        return val

    def trace_with(self, s):
        """``tr(Phi S)`` touching only the diagonal blocks of ``S``."""
        idx = self._single
        val = float(np.sum(self._single_phi * s[idx, idx]))
        for sl, blk in self._wide:
            val += float(np.sum(blk * s[sl, sl]))
        return val

    def inverse_blocks(self):
        return [np.linalg.inv(b) for b in self.blocks]


@dataclass(frozen=True)
class BlockSubgradient:
    """Diagonal blocks of the subgradient; ``single`` holds the size-one blocks as a vector."""

    blocks: list
    single: np.ndarray
    lambda_star: np.ndarray
    delta: np.ndarray
    tie_flag: bool


def _require_s(cov):
    if not cov.has_s:
        raise DomainError("the block solver needs a materialized covariance")
    return cov.s


def block_spectrum(cov, phi, r):
    s = _require_s(cov)
    if not 1 <= r < cov.p:
        raise DomainError(f"rank r={r} must satisfy 1 <= r < p={cov.p}")
    return dense_top(phi.scaled(s), min(r + 1, cov.p))


def block_objective(cov, phi, r, spectrum=None):
    """``H(Phi) = -log det Phi + tr(Phi S) - F2``; equals the likelihood of the recovered model."""
    s = _require_s(cov)
    lam, _ = block_spectrum(cov, phi, r) if spectrum is None else spectrum
    return -phi.logdet() + phi.trace_with(s) - f2_value(lam, r)


def block_subgradient(cov, phi, r, spectrum=None):
    """Diagonal blocks of ``Phi^{-1/2} U D1 U^T Phi^{1/2} S``.

    Only the ``p x k`` factors are formed; each block is a small product of
    their row slices.
    """
    s = _require_s(cov)
    lam, vec = block_spectrum(cov, phi, r) if spectrum is None else spectrum
    lam_r = np.zeros(r)
    lam_r[:min(r, lam.size)] = lam[:r]
    delta = deltas(lam_r, r)
    k = int(np.count_nonzero(delta))
    st = phi.structure
    single = np.zeros(st.singleton_index().size)
    blocks = []
    if k:
        u = vec[:, :k]
        t2 = phi.half_left(u).T @ s
        t1 = phi.ihalf_left(u) * delta[None, :k]
        idx = st.singleton_index()
        single = rowwise_dot(t1[idx], t2.T[idx])
    j = 0
    for sl, size in zip(st.ranges(), st.sizes):
        if size == 1:
            blocks.append(np.array([[single[j]]]))
            j += 1
        elif k:
            g = t1[sl] @ t2[:, sl]
            blocks.append(0.5 * (g + g.T))
        else:
            blocks.append(np.zeros((size, size)))
    lam_q = np.zeros(r + 1)
    lam_q[:min(r + 1, lam.size)] = lam[:r + 1]
    return BlockSubgradient(blocks, single, lam_r, delta, is_tie(lam_q, r))


def block_dc_step(cov, phi, r, grad=None):
    """``Phi_b <- (S_bb - grad_bb)^{-1}`` for every block.

    Eigenvalues of ``S_bb - grad_bb`` are floored at ``1e-10``; a value below
    ``-1e-6`` (relative to the block scale) is reported as an error.
    """
    s = _require_s(cov)
    if grad is None:
        grad = block_subgradient(cov, phi, r)
    st = phi.structure
    idx = st.singleton_index()
    a = s[idx, idx] - grad.single
    if np.any(a < -PD_SLACK * np.maximum(1.0, s[idx, idx])):
        i = int(idx[np.argmin(a)])
        raise NumericalError(f"s_ii - grad_ii = {a.min():.3e} < 0 at i={i}")
    single = 1.0 / np.maximum(a, EIG_FLOOR)
    out = []
    j = 0
    for b, (sl, size) in enumerate(zip(st.ranges(), st.sizes)):
        if size == 1:
            out.append(np.array([[single[j]]]))
            j += 1
            continue
        m = s[sl, sl] - grad.blocks[b]
        w, v = np.linalg.eigh(0.5 * (m + m.T))
        if w[0] < -PD_SLACK * max(1.0, abs(w[-1])):
            raise NumericalError(f"block {b}: S_bb - grad_bb has eigenvalue {w[0]:.3e} < 0")
        w = np.maximum(w, EIG_FLOOR)
        out.append((v / w) @ v.T)
    return BlockPrecision(st, out)


@dataclass(frozen=True)
class BlockConfig:
    r: int
    tol: float = 1e-8
    max_iters: int = 2000
    stop_rule: StopRule = StopRule.OBJECTIVE

    def __post_init__(self):
        if self.r < 1:
            raise DomainError("r must be at least 1")
        if not self.tol > 0 or self.max_iters < 1:
            raise DomainError("tol must be positive and max_iters at least 1")
        object.__setattr__(self, "stop_rule", StopRule(self.stop_rule))


def initial_block(cov, structure):
    """Blockwise inverse of the diagonal blocks of ``S``: ``Phi_b = S_bb^{-1}``."""
    s = _require_s(cov)
    if structure.p != cov.p:
        raise DomainError(f"block sizes sum to {structure.p}, expected p={cov.p}")
    blocks = []
    for sl, size in zip(structure.ranges(), structure.sizes):
        blocks.append(np.array([[1.0 / s[sl, sl][0, 0]]]) if size == 1 else np.linalg.inv(s[sl, sl]))
    return BlockPrecision(structure, blocks)


def solve_block(cov, structure, config, phi0=None, callback=None):
    """Block DC iteration from ``phi0`` (default ``S_bb^{-1}``).

    ``callback(k, phi)`` is called after every accepted step.

    Returns
    -------
    phi : BlockPrecision
    trace : SolverTrace
        Objectives are values of ``H``; ``rho`` is left at zero.
    """
    if not config.r < cov.p:
        raise DomainError(f"rank r={config.r} must be smaller than p={cov.p}")
    phi = initial_block(cov, structure) if phi0 is None else phi0
    r = config.r
    t0 = time.perf_counter()
    trace = SolverTrace()
    spec = block_spectrum(cov, phi, r)
    f_cur = block_objective(cov, phi, r, spec)
    trace.objectives.append(f_cur)
    trace.times.append(time.perf_counter() - t0)
    for k in range(config.max_iters):
        g = block_subgradient(cov, phi, r, spec)
        trace.tie_flags.append(g.tie_flag)
        phi_new = block_dc_step(cov, phi, r, g)
        spec_new = block_spectrum(cov, phi_new, r)
        f_new = block_objective(cov, phi_new, r, spec_new)
        if f_new > f_cur + STALL_RTOL * max(1.0, abs(f_cur)):
            trace.termination = Termination.STALLED
            break
        old, new = phi.dense(), phi_new.dense()
        trace.iterations += 1
        trace.objectives.append(f_new)
        trace.step_norms.append(float(np.linalg.norm(new - old)))
        trace.times.append(time.perf_counter() - t0)
        done = _stop(config.stop_rule, config.tol, f_cur, f_new, old.ravel(), new.ravel())
        phi, spec, f_cur = phi_new, spec_new, f_new
        if callback is not None:
            callback(k + 1, phi)
        if done:
            trace.termination = Termination.CONVERGED
            break
    return phi, trace


@dataclass(frozen=True, eq=False)
class BlockFactorModel:
    """``Sigma = blkdiag(Psi_1..Psi_m) + L L^T`` with ``Psi_b = Phi_b^{-1}``."""

    psi_blocks: list
    loadings: np.ndarray
    neg_loglik: float
    rank_used: int

    def psi_dense(self):
        p = self.loadings.shape[0]
        out = np.zeros((p, p))
        o = 0
        for blk in self.psi_blocks:
            k = blk.shape[0]
            out[o:o + k, o:o + k] = blk
            o += k
        return out

    def covariance(self):
        return self.psi_dense() + self.loadings @ self.loadings.T

    def to_dict(self):
        return {
            "psi_blocks": [b.tolist() for b in self.psi_blocks],
            "loadings": self.loadings.tolist(),
            "neg_loglik": float(self.neg_loglik),
            "rank_used": int(self.rank_used),
            "r": int(self.loadings.shape[1]),
            "p": int(self.loadings.shape[0]),
        }


def dense_neg_loglik(s, sigma):
    """``log det Sigma + tr(Sigma^{-1} S)`` by Cholesky."""
    c = np.linalg.cholesky(sigma)
    logdet = 2.0 * np.sum(np.log(np.diag(c)))
    return float(logdet + np.trace(np.linalg.solve(sigma, s)))


def recover_block_model(cov, phi, r):
    """Loadings ``Phi^{-1/2} u_i sqrt(l_i - 1)`` for the eigenvalues above one."""
    s = _require_s(cov)
    lam, vec = block_spectrum(cov, phi, r)
    lam = lam[:r]
    keep = np.flatnonzero(lam > 1.0 + 1e-12)
    L = np.zeros((cov.p, r))
    if keep.size:
        L[:, keep] = phi.ihalf_left(vec[:, keep]) * np.sqrt(lam[keep] - 1.0)
    psi_blocks = phi.inverse_blocks()
    model = BlockFactorModel(psi_blocks, L, 0.0, int(keep.size))
    return BlockFactorModel(psi_blocks, L, dense_neg_loglik(s, model.covariance()), int(keep.size))

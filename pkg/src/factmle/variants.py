"""Ridge-penalized solver, eps-continuation with pinning, and warm-started rank paths."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError
from .model import recover_loadings
from .solver import Init, SolverConfig, initial_phi, run_dc, box_update


@dataclass(frozen=True)
class RidgeConfig:
    """Solver settings for the penalty ``gamma * sum(phi_i^2)``.

    There is no box bound; ``eps`` only fixes the constant ``rho`` recorded
    in the trace and caps the starting point.
    """

    r: int
    gamma: float
    tol: float = 1e-8
    max_iters: int = 2000
    init: Init = Init.DIAGONAL
    seed: int | None = None
    phi0: np.ndarray | None = None
    stop_rule: str = "objective"
    strategy: str | None = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise DomainError("gamma must be positive")

    def as_solver_config(self):
        # psi >= sqrt(2 gamma) on every ridge iterate; reuse that as the box
        return SolverConfig(
            r=self.r, eps=np.sqrt(2.0 * self.gamma), tol=self.tol, max_iters=self.max_iters,
            init=self.init, seed=self.seed, phi0=self.phi0, stop_rule=self.stop_rule,
            strategy=self.strategy,
        )


def ridge_update(s_diag, grad, gamma):
    """Minimizer of ``-log phi + (s - grad) phi + gamma phi^2`` over ``phi > 0``.

    Written as ``2 / (a + sqrt(a^2 + 8 gamma))`` with ``a = s - grad``, the
    cancellation-free form of the positive quadratic root.
    """
    a = np.maximum(s_diag - grad, 0.0)
    return 2.0 / (a + np.sqrt(a * a + 8.0 * gamma))


def ridge_step(cov, phi, r, workspace, gamma):
    return ridge_update(cov.s_diag, workspace.grad, gamma)


def solve_ridge(cov, config, callback=None):
    """DC iteration on ``f(phi) + gamma * sum(phi^2)``; the trace holds the penalized objective."""
    if not config.r < cov.p:
        raise DomainError(f"rank r={config.r} must be smaller than p={cov.p}")
    sc = config.as_solver_config()
    phi = initial_phi(cov, sc)
    gamma = config.gamma
    phi, trace = run_dc(
        cov, phi, sc,
        lambda grad, _phi: ridge_update(cov.s_diag, grad, gamma),
        penalty=lambda ph: gamma * float(np.sum(ph * ph)),
        callback=callback,
    )
    # f1 + gamma*phi^2 is 2*gamma strongly convex
    trace.rho = 2.0 * gamma
    return phi, trace


def solve_ridge_continuation(cov, config, gammas=(1e-2, 1e-4, 1e-6, 1e-8)):
    """Ridge solves along a decreasing ``gamma`` schedule with warm starts.

    The last entry plays the role of the vanishing penalty; returns the
    final ``phi`` and one trace per schedule step.
    """
    gammas = [float(g) for g in gammas]
    if not gammas or any(b >= a for a, b in zip(gammas, gammas[1:])):
        raise DomainError("gamma schedule must be non-empty and strictly decreasing")
    phi, traces = None, []
    for g in gammas:
        cfg = replace(config, gamma=g) if phi is None else replace(config, gamma=g, init=Init.WARM, phi0=phi)
        phi, trace = solve_ridge(cov, cfg)
        traces.append(trace)
    return phi, traces


@dataclass(frozen=True)
class ContinuationConfig:
    """Decreasing sequence of box bounds; the last entry is the target ``eps'``."""

    eps_schedule: tuple = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
    pin_threshold: float = 1.001

    def __post_init__(self):
        sched = tuple(float(e) for e in self.eps_schedule)
        if not sched or any(e <= 0 for e in sched):
            raise DomainError("eps schedule must be non-empty and positive")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise DomainError("eps schedule must be strictly decreasing")
        object.__setattr__(self, "eps_schedule", sched)

    @classmethod
    def geometric(cls, start=1e-2, stop=1e-6, factor=0.1, pin_threshold=1.001):
        sched = [start]
        while sched[-1] * factor > stop * (1 + 1e-9):
            sched.append(sched[-1] * factor)
        if sched[-1] > stop * (1 + 1e-9):
            sched.append(stop)
        return cls(tuple(sched), pin_threshold)

    @property
    def target(self):
        return self.eps_schedule[-1]


def solve_continuation(cov, config, cc):
    """Box solves along ``cc.eps_schedule`` with warm starts and pinning.

    After each schedule step every free coordinate with
    ``psi_i <= pin_threshold * eps_t`` joins the pinned set: its ``phi_i`` is
    set to ``1 / eps'`` and held there for the remaining steps. The final
    point is optimal only over the free coordinates, i.e. an upper bound for
    the unconstrained problem with Heywood coordinates at ``eps'``.

    Returns
    -------
    phi : ndarray
    pinned : list of int
        Sorted indices of the pinned coordinates.
    traces : list of SolverTrace
        One trace per schedule step.
    """
    if not config.r < cov.p:
        raise DomainError(f"rank r={config.r} must be smaller than p={cov.p}")
    target = cc.target
    phi = initial_phi(cov, replace(config, eps=cc.eps_schedule[0]))
    pinned = np.zeros(cov.p, dtype=bool)
    traces = []
    for eps in cc.eps_schedule:
        step_cfg = replace(config, eps=eps, init=Init.WARM, phi0=phi)
        free_phi = np.where(pinned, phi, np.minimum(phi, 1.0 / eps))
        phi, trace = run_dc(
            cov, free_phi, step_cfg,
            lambda grad, _phi, eps=eps: box_update(cov.s_diag, grad, eps),
            fixed=pinned if pinned.any() else None,
        )
        traces.append(trace)
        new = ~pinned & (1.0 / phi <= cc.pin_threshold * eps)
        if eps == target:
            pinned |= new
            break
        if new.any():
            pinned |= new
            phi = phi.copy()
            phi[new] = 1.0 / target
    return phi, np.flatnonzero(pinned).tolist(), traces


@dataclass(frozen=True)
class PathEntry:
    rank: int
    phi: np.ndarray
    model: object
    trace: object


def solve_path(cov, ranks, config, solve_fn=None):
    """Solve for each rank in increasing order, warm-starting from the previous ``phi``."""
    from .solver import solve

    ranks = [int(k) for k in ranks]
    if not ranks:
        raise DomainError("rank list is empty")
    if any(b <= a for a, b in zip(ranks, ranks[1:])):
        raise DomainError("ranks must be strictly increasing")
    if ranks[0] < 1 or ranks[-1] >= cov.p:
        raise DomainError(f"ranks must lie in [1, {cov.p - 1}]")
    solve_fn = solve if solve_fn is None else solve_fn
    out = []
    phi = None
    for k in ranks:
        cfg = replace(config, r=k) if phi is None else config.warm(phi, r=k)
        phi, trace = solve_fn(cov, cfg)
        out.append(PathEntry(k, phi, recover_loadings(cov, phi, k, strategy=config.strategy), trace))
    return out

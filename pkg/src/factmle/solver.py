"""Difference-of-convex iteration for rank-constrained ML factor analysis.

Each step linearizes the concave part of the objective at the current
``phi`` and minimizes the separable convex surrogate in closed form:
``phi_i <- min(1 / (s_ii - grad_i), 1 / eps)``.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np

from .core import check_feasible, f1_value, f2_value, subgradient_f2
from .errors import CertificationFailure, DomainError, NumericalError
from .spectra import Strategy, eig_top

STALL_RTOL = 1e-8
PSD_SLACK = 1e-6


class Termination(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    STALLED = "stalled"


class StopRule(str, enum.Enum):
    OBJECTIVE = "objective"
    ITERATE = "iterate"


class Init(str, enum.Enum):
    DIAGONAL = "diagonal"
    HALF_DIAGONAL = "half-diagonal"
    UNIFORM = "uniform"
    WARM = "warm"


@dataclass(frozen=True)
class SolverConfig:
    """Settings for :func:`solve`.

    ``init`` selects the starting point: ``"diagonal"`` (``psi = diag S``),
    ``"half-diagonal"`` (``psi = diag S / 2``), ``"uniform"`` (``phi`` drawn
    from ``U(0, 1]`` with ``seed``) or ``"warm"`` (``phi0``).
    """

    r: int
    eps: float = 1e-7
    tol: float = 1e-8
    max_iters: int = 2000
    init: Init = Init.DIAGONAL
    seed: int | None = None
    phi0: np.ndarray | None = None
    stop_rule: StopRule = StopRule.OBJECTIVE
    strategy: Strategy | None = None

    def __post_init__(self):
        if self.r < 1:
            raise DomainError("r must be at least 1")
        if not self.eps > 0:
            raise DomainError("eps must be positive")
        if not self.tol > 0:
            raise DomainError("tol must be positive")
        if self.max_iters < 1:
            raise DomainError("max_iters must be at least 1")
        object.__setattr__(self, "init", Init(self.init))
        object.__setattr__(self, "stop_rule", StopRule(self.stop_rule))
        if self.strategy is not None:
            object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.init is Init.WARM and self.phi0 is None:
            raise DomainError("warm start requires phi0")
        if self.phi0 is not None and self.init is not Init.WARM:
            object.__setattr__(self, "init", Init.WARM)

    def warm(self, phi0, **changes):
        from dataclasses import replace

        return replace(self, init=Init.WARM, phi0=np.asarray(phi0, dtype=float), **changes)


@dataclass
class SolverTrace:
    """Per-iteration record of a solve.

    ``objectives[k]`` is the objective at iterate ``k`` (``objectives[0]`` at
    the starting point); ``step_norms[k]`` is ``||phi^{k+1} - phi^k||_2``;
    ``times[k]`` is the wall time (seconds since the solve started) at which
    ``objectives[k]`` was available.
    """

    objectives: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)
    times: list = field(default_factory=list)
    termination: Termination = Termination.MAX_ITERS
    iterations: int = 0
    rho: float = 0.0
    tie_flags: list = field(default_factory=list)

    @property
    def final_objective(self):
        return self.objectives[-1]

    @property
    def wall_time(self):
        return self.times[-1] if self.times else 0.0

    def summary(self):
        return {
            "iterations": self.iterations,
            "termination": self.termination.value,
            "final_objective": self.final_objective,
            "wall_time": self.wall_time,
        }


def initial_phi(cov, config):
    s = cov.s_diag
    cap = 1.0 / config.eps
    if config.init is Init.DIAGONAL:
        phi = 1.0 / s
    elif config.init is Init.HALF_DIAGONAL:
        phi = 1.0 / (0.5 * s)
    elif config.init is Init.UNIFORM:
        rng = np.random.default_rng(config.seed)
        phi = 1.0 - rng.random(cov.p)
    else:
        phi = np.array(config.phi0, dtype=float)
        check_feasible(phi, cov.p)
    return np.minimum(phi, cap)


def box_update(s_diag, grad, eps):
    """Closed-form minimizer of ``-log phi + (s - grad) phi`` over ``(0, 1/eps]``."""
    a = s_diag - grad
    if np.any(a < -PSD_SLACK):
        i = int(np.argmin(a))
        raise NumericalError(
            f"s_ii - grad_i = {a[i]:.3e} < 0 at i={i}; the eigensolver output is inconsistent"
        )
    phi = np.full_like(a, 1.0 / eps)
    free = a > eps
    phi[free] = np.minimum(1.0 / a[free], 1.0 / eps)
    return phi


def dc_step(cov, phi, r, workspace, eps):
    """One DC update from ``phi`` given the subgradient ``workspace`` at ``phi``."""
    check_feasible(phi, cov.p, eps)
    return box_update(cov.s_diag, workspace.grad, eps)


def _stop(rule, tol, f_old, f_new, phi_old, phi_new):
    if rule is StopRule.OBJECTIVE:
        return f_old - f_new < tol * max(1.0, abs(f_new))
    return np.linalg.norm(phi_new - phi_old) < tol * np.linalg.norm(phi_old)


def run_dc(cov, phi, config, update, penalty=None, fixed=None, callback=None):
    """Shared iteration loop for the box, ridge and restricted variants.

    ``update(grad, phi)`` returns the next iterate; ``penalty(phi)`` is added
    to the traced objective; coordinates in boolean mask ``fixed`` are held
    at their starting values. ``callback(k, phi)`` sees every accepted iterate.
    """
    r = config.r
    t0 = time.perf_counter()
    trace = SolverTrace(rho=config.eps ** 2)
    spec = eig_top(cov, phi, r, strategy=config.strategy)

    def value(phi, spec):
        f = f1_value(cov, phi) - f2_value(spec.padded(r), r)
        return f + (penalty(phi) if penalty is not None else 0.0)

    f_cur = value(phi, spec)
    trace.objectives.append(f_cur)
    trace.times.append(time.perf_counter() - t0)
    trace.termination = Termination.MAX_ITERS
    for _ in range(config.max_iters):
        ws = subgradient_f2(cov, phi, r, spectrum=spec)
        trace.tie_flags.append(ws.tie_flag)
        phi_new = update(ws.grad, phi)
        if fixed is not None:
            phi_new[fixed] = phi[fixed]
        spec_new = eig_top(cov, phi_new, r, strategy=config.strategy, start=spec.eigenvectors)
        f_new = value(phi_new, spec_new)
        if f_new > f_cur + STALL_RTOL * max(1.0, abs(f_cur)):
            trace.termination = Termination.STALLED
            break
        trace.iterations += 1
        trace.objectives.append(f_new)
        trace.step_norms.append(float(np.linalg.norm(phi_new - phi)))
        trace.times.append(time.perf_counter() - t0)
        done = _stop(config.stop_rule, config.tol, f_cur, f_new, phi, phi_new)
        phi, spec, f_cur = phi_new, spec_new, f_new
        if callback is not None:
            callback(trace.iterations, phi)
        if done:
            trace.termination = Termination.CONVERGED
            break
    return phi, trace


def solve(cov, config, callback=None):
    """Run the DC iteration until the stop rule fires or ``max_iters`` steps.

    ``callback(k, phi)``, if given, is called with every accepted iterate.

    Returns
    -------
    phi : ndarray
        Final iterate (``psi = 1 / phi``).
    trace : SolverTrace
    """
    if not config.r < cov.p:
        raise DomainError(f"rank r={config.r} must be smaller than p={cov.p}")
    phi = initial_phi(cov, config)
    return run_dc(cov, phi, config, lambda grad, _phi: box_update(cov.s_diag, grad, config.eps),
                  callback=callback)


@dataclass(frozen=True)
class DescentReport:
    iterations: int
    min_decrease_margin: float
    rate_lhs: float
    rate_rhs: float


def certify_descent(trace, rho=None, slack=1e-9):
    """Check the sufficient-decrease inequality and the finite-time rate bound.

    For every step ``f_k - f_{k+1} >= rho/2 ||phi_{k+1} - phi_k||^2`` must
    hold up to ``slack * max(1, |f_k|)``, and
    ``min_k rho ||phi_{k+1} - phi_k||^2 <= 2 (f_1 - f_{K+1}) / K``.

    Raises
    ------
    CertificationFailure
        Naming the first violating step (1-based).
    """
    rho = trace.rho if rho is None else rho
    f = np.asarray(trace.objectives, dtype=float)
    d = np.asarray(trace.step_norms, dtype=float)
    k = d.size
    if f.size != k + 1:
        raise CertificationFailure("trace has inconsistent lengths", 0, "shape")
    margin = np.inf
    for i in range(k):
        lhs = f[i] - f[i + 1]
        rhs = 0.5 * rho * d[i] ** 2
        tol = slack * max(1.0, abs(f[i]))
        if lhs < rhs - tol:
            raise CertificationFailure(
                f"descent violated at step {i + 1}: decrease {lhs:.3e} < {rhs:.3e}", i + 1, "descent"
            )
        margin = min(margin, lhs - rhs)
    if k == 0:
        return DescentReport(0, float("inf"), 0.0, 0.0)
    rate_lhs = float(np.min(rho * d ** 2))
    rate_rhs = 2.0 * (f[0] - f[-1]) / k
    if rate_lhs > rate_rhs + slack * max(1.0, abs(f[0])):
        raise CertificationFailure(f"rate bound violated: {rate_lhs:.3e} > {rate_rhs:.3e}", k, "rate")
    return DescentReport(k, float(margin), rate_lhs, float(rate_rhs))

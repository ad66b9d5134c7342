"""Covariance inputs: CSV ingestion, centering and synthetic factor-model data.

Random numbers come from numpy's ``PCG64`` bit generator (``numpy.random.
default_rng(seed)``); normals are drawn with numpy's ziggurat sampler and
exponentials with its ziggurat exponential sampler. Outputs are bit-for-bit
reproducible for a given seed, numpy version and platform.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, ParseError

# S is formed explicitly only up to this many variables (or when given as S).
MATERIALIZE_MAX_P = 4096


class InputMode(str, enum.Enum):
    DATA = "data"
    COVARIANCE = "cov"


def _frozen(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CovarianceInput:
    """Sample covariance ``S`` of ``p`` variables, optionally backed by data.

    Build instances with :meth:`from_data` or :meth:`from_covariance`.
    When built from data the columns of ``x`` are centered and
    ``S = x.T @ x / n``; ``s`` is materialized only for
    ``p <= MATERIALIZE_MAX_P``, otherwise every product with ``S`` goes
    through ``x``.
    """

    mode: InputMode
    p: int
    n: int | None
    x: np.ndarray | None = field(repr=False)
    s: np.ndarray | None = field(repr=False)
    s_diag: np.ndarray = field(repr=False)

    @classmethod
    def from_data(cls, x, center=True, materialize=None):
        x = np.array(x, dtype=float, copy=True)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise DomainError(f"data matrix must be 2-D and non-empty, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DomainError("data matrix contains non-finite values")
        n, p = x.shape
        if center:
            x -= x.mean(axis=0)
        if materialize is None:
            materialize = p <= MATERIALIZE_MAX_P
        s = None
        if materialize:
            s = x.T @ x / n
            s = 0.5 * (s + s.T)
            s_diag = np.diag(s).copy()
        else:
            s_diag = np.einsum("ij,ij->j", x, x) / n
        if np.any(s_diag <= 0):
            bad = np.flatnonzero(s_diag <= 0).tolist()
            raise DomainError(f"variables {bad} have zero sample variance")
        return cls(InputMode.DATA, p, n, _frozen(x), None if s is None else _frozen(s), _frozen(s_diag))

    @classmethod
    def from_covariance(cls, s, n=None):
        s = np.array(s, dtype=float, copy=True)
        if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] < 1:
            raise DomainError(f"covariance must be a non-empty square matrix, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise DomainError("covariance contains non-finite values")
        s = 0.5 * (s + s.T)
        s_diag = np.diag(s).copy()
        if np.any(s_diag <= 0):
            bad = np.flatnonzero(s_diag <= 0).tolist()
            raise DomainError(f"covariance diagonal must be positive; offending indices {bad}")
        return cls(InputMode.COVARIANCE, s.shape[0], n, None, _frozen(s), _frozen(s_diag))

    @property
    def has_x(self):
        return self.x is not None

    @property
    def has_s(self):
        return self.s is not None

    def covariance(self):
        """Dense ``S`` (computed on the fly if it was not materialized)."""
        if self.s is not None:
            return self.s
        return self.x.T @ self.x / self.n

    def matmul(self, b):
        """``S @ b`` without forming ``S`` when only ``x`` is stored."""
        if self.s is not None:
            return self.s @ b
        return self.x.T @ (self.x @ b) / self.n

    def quad(self, b):
        """``b.T @ S @ b``."""
        if self.x is not None and (self.s is None or self.n < self.p):
            xb = self.x @ b
            return xb.T @ xb / self.n
        return b.T @ (self.s @ b)


def _parse_rows(path, has_header):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
            if len(rows[-1]) != len(rows[0]):
                raise ParseError(
                    f"{path}:{lineno}: ragged row with {len(rows[-1])} fields, expected {len(rows[0])}"
                )
    if not rows:
        raise ParseError(f"{path}: no numeric rows")
    return np.array(rows, dtype=float)


def load_csv(path, has_header=False, mode=InputMode.DATA):
    """Read a comma-separated numeric file into a :class:`CovarianceInput`.

    Parameters
    ----------
    path : str or Path
    has_header : bool
        Skip the first line.
    mode : InputMode or {"data", "cov"}
        ``"data"`` reads an ``n x p`` data matrix (columns are centered),
        ``"cov"`` reads a ``p x p`` covariance matrix.
    """
    mode = InputMode(mode)
    a = _parse_rows(path, has_header)
    if mode is InputMode.COVARIANCE:
        if a.shape[0] != a.shape[1]:
            raise DomainError(f"covariance CSV must be square, got {a.shape}")
        return CovarianceInput.from_covariance(a)
    return CovarianceInput.from_data(a)


def save_csv(path, a, header=None):
    """Write a matrix with shortest round-trip float formatting."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in a:
            w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class SyntheticSpec:
    p: int
    n: int
    r0: int
    loading_mean: float = 10.0
    loading_var: float = 1.0
    uniqueness_mean: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.p < 1 or self.n < 1 or self.r0 < 1:
            raise DomainError("p, n and r0 must be positive")
        if self.r0 >= self.p:
            raise DomainError(f"r0={self.r0} must be smaller than p={self.p}")
        if not self.loading_var > 0:
            raise DomainError("loading_var must be positive")
        if not self.uniqueness_mean > 0:
            raise DomainError("uniqueness_mean must be positive")


@dataclass(frozen=True)
class GroundTruth:
    psi0: np.ndarray
    L0: np.ndarray
    seed: int

    def covariance(self):
        return np.diag(self.psi0) + self.L0 @ self.L0.T

    def to_json(self):
        return json.dumps({"psi0": self.psi0.tolist(), "L0": self.L0.tolist(), "seed": self.seed})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(np.asarray(d["psi0"], float), np.asarray(d["L0"], float).reshape(len(d["psi0"]), -1), d["seed"])


def generate_synthetic(spec):
    """Draw a centered data set from the factor model ``Psi0 + L0 L0^T``.

    ``L0`` has iid ``N(loading_mean, loading_var)`` entries, ``psi0`` iid
    exponential entries with mean ``uniqueness_mean``. Rows are drawn as
    ``z @ L0.T + e * sqrt(psi0)`` with standard normal ``z`` and ``e``,
    which is exactly ``N(0, Sigma0)`` without factorizing a ``p x p`` matrix.

    Returns
    -------
    cov : CovarianceInput
    truth : GroundTruth
    """
    rng = np.random.default_rng(spec.seed)
    L0 = spec.loading_mean + np.sqrt(spec.loading_var) * rng.standard_normal((spec.p, spec.r0))
    psi0 = rng.exponential(spec.uniqueness_mean, size=spec.p)
    z = rng.standard_normal((spec.n, spec.r0))
    e = rng.standard_normal((spec.n, spec.p))
    x = z @ L0.T + e * np.sqrt(psi0)
    return CovarianceInput.from_data(x), GroundTruth(psi0, L0, spec.seed)


def write_truth(path, truth):
    Path(path).write_text(truth.to_json(), encoding="utf-8")

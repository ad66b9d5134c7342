import numpy as np
import pytest

from factmle import CovarianceInput, SyntheticSpec, generate_synthetic


def dense_neg_loglik(s, psi, loadings):
    """Independent path: slogdet and a dense solve on the full Sigma."""
    sigma = np.diag(psi) + loadings @ loadings.T
    sign, logdet = np.linalg.slogdet(sigma)
    assert sign > 0
    return logdet + np.trace(np.linalg.solve(sigma, s))


def random_spd(rng, p, cond=50.0):
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    w = np.exp(rng.uniform(0, np.log(cond), p))
    return (q * w) @ q.T


def synthetic(p, n, r0, seed, **kw):
    kw.setdefault("loading_mean", 0.0)
    kw.setdefault("uniqueness_mean", 1.0)
    return generate_synthetic(SyntheticSpec(p=p, n=n, r0=r0, seed=seed, **kw))[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_cov():
    return synthetic(8, 60, 2, seed=3)


@pytest.fixture
def identity4():
    return CovarianceInput.from_covariance(np.eye(4))


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def record(request):
    """Log one PASS/FAIL line for an acceptance criterion."""
    store = request.config.stash.setdefault(_ACCEPTANCE, [])

    def _record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        store.append((number, line))
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)

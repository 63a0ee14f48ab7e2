import numpy as np
import pytest

from spbl import inner


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# suite-wide certificate audit: every converged batch solve is re-checked
# against the optimality residual with an independent dual computation
_orig = inner.fista_batch
AUDIT = {"solves": 0, "worst": 0.0}


def _residuals(G, Z, U, tol_zero):
    W = G.T @ (Z - G @ U)
    on = np.abs(U) > tol_zero
    r = np.where(on, np.abs(W - np.sign(U)), np.maximum(np.abs(W) - 1.0, 0.0))
    return r.max(axis=0) if r.size else np.zeros(U.shape[1])


def _audited(G, Z, cfg=inner.SolverConfig(), L=None, monitor=False):
    res = _orig(G, Z, cfg, L=L, monitor=monitor)
    G = np.atleast_2d(np.asarray(G, float))
    Zm = np.asarray(Z, float)
    U = res.U
    if Zm.ndim == 1:
        Zm, U, conv = Zm[:, None], U[:, None], np.atleast_1d(res.converged)
    else:
        conv = res.converged
    if conv.any():
        r = _residuals(G, Zm[:, conv], U[:, conv], cfg.tol_zero)
        AUDIT["solves"] += int(r.size)
        AUDIT["worst"] = max(AUDIT["worst"], float(r.max()))
        assert r.max() <= cfg.cert_tol, f"converged solve with certificate residual {r.max():.3e}"
    return res


# installed before test modules import the solver, so direct imports are audited too
inner.fista_batch = _audited


def pytest_terminal_summary(terminalreporter):
    import sys

    acc = sys.modules.get("test_acceptance")
    if acc is not None and acc.RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(acc.RESULTS):
            terminalreporter.write_line(acc.RESULTS[key])
    terminalreporter.write_line(
        f"certificate audit: {AUDIT['solves']} converged solves, worst residual {AUDIT['worst']:.3e}"
    )

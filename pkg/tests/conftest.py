import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wqes.optimize import MultiStartConfig
from wqes.simulate import DgpSpec, simulate

settings.register_profile(
    "ci", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("ci")

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def record(capsys):
    """Print one PASS/FAIL line for an acceptance criterion and keep it for the summary."""

    def emit(criterion: str, ok: bool, detail: str) -> bool:
        line = f"[acceptance] criterion {criterion}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return emit


@pytest.fixture(scope="session")
def av_series():
    """One AV-GARCH-t replication of the default design (n=1900)."""
    return simulate(DgpSpec(), 0)


@pytest.fixture(scope="session")
def fast_cfg():
    return MultiStartConfig(n_candidates=500, rng_seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def fitted_grids(av_series):
    """Rearranged quantile matrices for M=3, alpha1=0.015 (SA grid and WQ-Beta grid)."""
    from wqes.caviar import CaviarSpec, fit_grid
    from wqes.wq import EsTag, build_grid

    cfg = MultiStartConfig(n_candidates=500, rng_seed=3)
    cache: dict = {}
    r = av_series.returns
    sa = fit_grid(r, build_grid(0.025, 0.015, 3, EsTag.SA_BC), CaviarSpec.SAV, cfg, cache)
    beta = fit_grid(r, build_grid(0.025, 0.015, 3, EsTag.WQ_BETA), CaviarSpec.SAV, cfg, cache)
    return {"sa": sa, "beta": beta}

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("lab", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lab")


@pytest.fixture(scope="session")
def warm():
    """Compile (or load) the numba kernels once so timed tests measure integration only."""
    from riccati_lab.lyapunov import analyze_orbit
    from riccati_lab.models import ConstantCurvatureSpace, FlatTorus, HyperbolicPlane, TangentVector

    analyze_orbit(HyperbolicPlane(), TangentVector(np.array([0.0, 1.0]), np.array([0.6, 0.8])), 2.0)
    analyze_orbit(FlatTorus(2), TangentVector(np.array([0.1, 0.2]), np.array([0.6, 0.8])), 2.0)
    analyze_orbit(ConstantCurvatureSpace(3, -1.0), TangentVector.phase(), 2.0)
    return True


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request, capsys):
    """Print and record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def _verdict(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  ({detail})"
        request.config.__dict__.setdefault("_acceptance_lines", []).append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return _verdict

import numpy as np
import pytest

from dribem.model import FACES, BilayerScenario, FaceBC, MaterialProps


def slab_scenario(k_upper=4.0, c_upper=10.0, k_lower=2.0, c_lower=3.0, h=0.5, top=None, bottom=None, **kw):
    """Unit-square slab, Dirichlet top and bottom, adiabatic sides."""
    bcs = {f: FaceBC("neumann") for f in FACES}
    bcs["top"] = top if top is not None else FaceBC("dirichlet", 1.0)
    bcs["bottom"] = bottom if bottom is not None else FaceBC("dirichlet", 0.0)
    return BilayerScenario(1.0, 1.0, h, h, MaterialProps(k_upper, c_upper), MaterialProps(k_lower, c_lower),
                           bcs, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one summary line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}
ACCEPTANCE_EXPECTED = set()


class Criterion:
    """Collects the measured checks of one acceptance criterion."""

    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.checks = []
        ACCEPTANCE_EXPECTED.add(number)

    def check(self, name, value, limit, ok=None):
        ok = value <= limit if ok is None else ok
        self.checks.append((name, float(value), limit, bool(ok)))
        return ok

    def finish(self):
        passed = bool(self.checks) and all(c[3] for c in self.checks)
        parts = []
        for name, value, limit, ok in self.checks:
            lim = f"{limit:.3g}" if isinstance(limit, (int, float)) else str(limit)
            parts.append(f"{name}={value:.4g} [{lim}]{'' if ok else ' !'}")
        line = f"criterion {self.number:2d} {'PASS' if passed else 'FAIL'}  {self.title}: " + "; ".join(parts)
        ACCEPTANCE[self.number] = line
        print(line)
        assert passed, line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_EXPECTED:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_EXPECTED):
        terminalreporter.write_line(ACCEPTANCE.get(n, f"criterion {n:2d} FAIL  did not complete"))

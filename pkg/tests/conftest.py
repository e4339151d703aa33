import numpy as np
import pytest

from solentrunc import solver as S
from solentrunc.grid import GridDomain


def _rms(a):
    return float(np.sqrt(np.mean(a**2)))


@pytest.fixture(scope="session")
def manufactured_study():
    """Errors of the p = 2 Stokes solver against a smooth exact solution."""
    model = S.StressModel.p_laplacian(2)
    out = {}
    for n in (16, 24, 32):
        dom = GridDomain.box(n)
        u, pres, f = S.manufactured_stokes(dom)
        sol = S.solve_stokes(model, f, dom)
        disc = sol.diagnostics["_disc"]
        # the discrete pressure is defined modulo the checkerboard kernel
        pref = disc.p_to_field(disc.normalize_pressure(disc.field_to_p(pres)))
        inside = dom.interior_mask
        out[n] = {
            "velocity": _rms(np.sqrt(np.sum((sol.u - u) ** 2, axis=0))[inside]),
            "pressure": _rms((sol.pi - pref)[inside]),
            "residual": sol.diagnostics["residual"],
            "div_max": sol.diagnostics["div_max"],
        }
    return out


def observed_orders(study, key):
    ns = sorted(study)
    return [np.log(study[a][key] / study[b][key]) / np.log(b / a) for a, b in zip(ns, ns[1:])]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

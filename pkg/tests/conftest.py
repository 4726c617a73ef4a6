import time

import numpy as np
import pytest

from procdisc.sdp import add_solve_listener, remove_solve_listener

GAP_TOL = 1e-7

# (test id, status, gap) for every SDP solved in this session
SOLVE_LOG: list[tuple[str, str, float]] = []
# tests whose failing solves are intentional
EXEMPT: set[str] = set()
# (fixture name, status, gap) for solves made while building session fixtures
FIXTURE_SOLVES: list[tuple[str, str, float]] = []

AUDIT_LAST = "test_solver_soundness"


def pytest_configure(config):
    config.addinivalue_line("markers", "nonoptimal_ok: test deliberately produces non-optimal solves")


def pytest_collection_modifyitems(session, config, items):
    # the suite-wide solver audit has to see every other solve first
    last = [it for it in items if it.name == AUDIT_LAST]
    items[:] = [it for it in items if it.name != AUDIT_LAST] + last


@pytest.fixture(autouse=True)
def sdp_audit(request):
    """Every SDP solved inside a test must end optimal with a small relative gap."""
    seen = []

    def record(sol):
        seen.append((sol.status, float(sol.gap)))
        SOLVE_LOG.append((request.node.nodeid, sol.status, float(sol.gap)))

    add_solve_listener(record)
    yield seen
    remove_solve_listener(record)
    if request.node.get_closest_marker("nonoptimal_ok"):
        EXEMPT.add(request.node.nodeid)
        return
    bad = [s for s in seen if s[0] != "optimal" or s[1] > GAP_TOL]
    assert not bad, f"non-optimal SDP solves: {bad[:5]}"


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def memory_results():
    """Bounds for the three-step memory-channel ensemble at the five reference points."""
    from procdisc.channels import memory_ensemble
    from procdisc.lower import bayes_lower_bound, choi_state_lower_bound, ultimate_success
    from procdisc.upper import upper_bound_1, upper_bound_2

    record = []

    def audit(sol):
        record.append((sol.status, float(sol.gap)))

    add_solve_listener(audit)
    out = {}
    t0 = time.perf_counter()
    try:
        for nu0 in (0.1, 0.2, 0.3, 0.4, 0.5):
            e = memory_ensemble(nu0, 0.04, 0.2, 1.0)
            cache: dict = {}
            out[nu0] = {
                "exact": ultimate_success(e),
                "bayes": bayes_lower_bound(e)[0],
                "choistate": choi_state_lower_bound(e),
                "ub1": float(upper_bound_1(e, cache=cache)),
                "ub2": float(upper_bound_2(e, cache=cache)),
            }
    finally:
        remove_solve_listener(audit)
        FIXTURE_SOLVES.extend(("memory_results",) + r for r in record)
    return {"values": out, "seconds": time.perf_counter() - t0, "solves": record}


@pytest.fixture(scope="session")
def cpf_results():
    """Bounds for three-position finding over two steps, plus one equal-damping control point."""
    from procdisc.channels import cpf_ensemble, cpf_factorization
    from procdisc.lower import bayes_lower_bound, pgm_choi_tensor
    from procdisc.upper import tensor_factor_bound, upper_bound_1

    record = []

    def audit(sol):
        record.append((sol.status, float(sol.gap)))

    points = [(q + 0.04, q) for q in (0.1, 0.3, 0.5, 0.7)] + [(0.3, 0.3)]
    add_solve_listener(audit)
    out = {}
    t0 = time.perf_counter()
    try:
        for q_B, q_T in points:
            e = cpf_ensemble(3, q_B, q_T, T=2)
            out[(q_B, q_T)] = {
                "ub1": float(upper_bound_1(e)),
                "ub1prime": float(tensor_factor_bound(e, cpf_factorization(3, q_B, q_T, 2))),
                "bayes": bayes_lower_bound(e)[0],
                "pgm": pgm_choi_tensor(e),
            }
    finally:
        remove_solve_listener(audit)
        FIXTURE_SOLVES.extend(("cpf_results",) + r for r in record)
    return {"values": out, "seconds": time.perf_counter() - t0}

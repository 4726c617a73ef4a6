import numpy as np
import pytest
import scipy.sparse as sp

from oracle import solve_sdpa
from procdisc.channels import random_process
from procdisc.combs import Ensemble
from procdisc.sdp import (HermitianSdp, SdpFailure, SdpSettings, SdpSizeError, add_solve_listener,
                          export_sdpa, identity_left_map, identity_map, read_sdpa,
                          remove_solve_listener, solve, trace_left_map, trace_map)
from procdisc.strategy import build_tester_sdp, solve_tester


def lambda_max_problem(d=(1.0, 2.0)):
    """minimize s subject to s I - diag(d) = Z >= 0."""
    n = len(d)
    p = HermitianSdp("min")
    p.add_block("s", 1)
    p.add_block("Z", n)
    p.set_objective("s", [[1.0]])
    embed = sp.csr_matrix(np.eye(n).reshape(-1, 1))
    p.add_equality("dom", {"s": embed, "Z": -identity_map(n)}, np.diag(d))
    return p


def helstrom_problem(overlap=0.6, phase=0.0, scale=1.0):
    psi = np.array([1.0, 0.0])
    phi = np.array([overlap, np.exp(1j * phase) * np.sqrt(1 - overlap ** 2)])
    p = HermitianSdp("max")
    for name, v in (("P1", psi), ("P2", phi)):
        p.add_block(name, 2)
        p.set_objective(name, scale * 0.5 * np.outer(v, v.conj()))
    p.add_equality("complete", {"P1": identity_map(2), "P2": identity_map(2)}, np.eye(2))
    return p


def comb_problem():
    e = Ensemble([random_process(s, T=2) for s in (31, 32)])
    return build_tester_sdp(e.chois(), e.priors, e.layout), e


class TestCanonical:
    def test_lambda_max(self):
        sol = solve(lambda_max_problem())
        assert sol.optimal and sol.objective == pytest.approx(2.0, abs=1e-8)

    def test_lambda_max_random(self, rng):
        d = rng.normal(size=5)
        sol = solve(lambda_max_problem(tuple(d)))
        assert sol.objective == pytest.approx(d.max(), abs=1e-7)

    @pytest.mark.parametrize("phase", [0.0, 0.9])
    def test_helstrom(self, phase):
        sol = solve(helstrom_problem(0.6, phase))
        assert sol.optimal
        assert sol.objective == pytest.approx(0.5 * (1 + np.sqrt(1 - 0.36)), abs=1e-8)
        assert sol.real_mode == (phase == 0.0)

    def test_unconstrained_trace(self):
        p = HermitianSdp("min")
        p.add_block("X", 3)
        p.set_objective("X", np.eye(3))
        sol = solve(p)
        assert sol.optimal and abs(sol.objective) < 1e-7

    def test_scalar_blocks(self):
        # minimize x + 2y  s.t.  x + y = 1, x, y >= 0
        p = HermitianSdp("min")
        p.add_block("x", 1)
        p.add_block("y", 1)
        p.set_objective("x", [[1.0]])
        p.set_objective("y", [[2.0]])
        p.add_constraint({"x": [[1.0]], "y": [[1.0]]}, 1.0)
        sol = solve(p)
        assert sol.objective == pytest.approx(1.0, abs=1e-8)
        assert sol.X["y"][0, 0].real == pytest.approx(0.0, abs=1e-7)


class TestSolutionProperties:
    @pytest.mark.parametrize("make", [lambda_max_problem, helstrom_problem,
                                      lambda: comb_problem()[0]])
    def test_duality_and_slackness(self, make):
        p = make()
        st = SdpSettings()
        sol = solve(p, st)
        assert sol.optimal
        for v in sol.residuals.values():
            assert v <= st.tol
        if p.sense == "min":
            assert sol.primal_objective >= sol.dual_objective - 1e-9 * (1 + abs(sol.objective))
        else:
            assert sol.primal_objective <= sol.dual_objective + 1e-9 * (1 + abs(sol.objective))
        for name in p.blocks:
            x, s = sol.X[name], sol.S[name]
            assert abs(np.trace(x @ s)) <= 10 * st.tol * (1 + abs(sol.objective))
            assert np.linalg.eigvalsh(x)[0] >= -1e-9
            assert np.linalg.eigvalsh(s)[0] >= -1e-9

    def test_primal_point_feasible(self):
        p = helstrom_problem(0.6, 0.4)
        sol = solve(p)
        val, ax = p.evaluate(sol.X)
        assert val == pytest.approx(sol.objective, abs=1e-8)
        np.testing.assert_allclose(ax, p.rhs, atol=1e-8)

    @pytest.mark.parametrize("alpha", [0.1, 3.0, 50.0])
    def test_objective_scaling(self, alpha):
        base = solve(helstrom_problem(0.6, 0.4))
        scaled = solve(helstrom_problem(0.6, 0.4, scale=alpha))
        assert scaled.objective == pytest.approx(alpha * base.objective, abs=1e-7 * alpha)
        for k in ("P1", "P2"):
            np.testing.assert_allclose(scaled.X[k], base.X[k], atol=1e-5)

    def test_deterministic(self):
        a = solve(comb_problem()[0])
        b = solve(comb_problem()[0])
        assert a.objective == b.objective and a.iterations == b.iterations

    def test_dependent_rows_dropped(self):
        p = helstrom_problem()
        p.add_constraint({"P1": np.eye(2), "P2": np.eye(2)}, 2.0)  # trace of the completeness row
        sol = solve(p)
        assert sol.optimal and len(sol.dropped_rows) >= 1
        assert sol.objective == pytest.approx(0.9, abs=1e-8)

    def test_multiplier_shape_and_dual_feasibility(self):
        p = helstrom_problem(0.6, 0.3)
        sol = solve(p)
        y = sol.multiplier("complete")
        assert y.shape == (2, 2)
        # A^T y - C >= 0 for a max problem
        for name in ("P1", "P2"):
            d = y - p.objective_matrices()[name]
            assert np.linalg.eigvalsh(0.5 * (d + d.conj().T))[0] >= -1e-8
        assert np.trace(y).real == pytest.approx(sol.objective, abs=1e-7)


class TestFailures:
    @pytest.mark.nonoptimal_ok
    def test_iteration_limit_reported(self):
        sol = solve(comb_problem()[0], SdpSettings(max_iter=2))
        assert sol.status == "max_iterations" and not sol.optimal
        assert set(sol.residuals) == {"primal", "dual", "gap"}

    @pytest.mark.nonoptimal_ok
    def test_infeasible_not_optimal(self):
        p = HermitianSdp("min")
        p.add_block("X", 2)
        p.set_objective("X", np.eye(2))
        p.add_constraint({"X": np.eye(2)}, -1.0)
        sol = solve(p, SdpSettings(max_iter=60))
        assert not sol.optimal

    @pytest.mark.nonoptimal_ok
    def test_required_optimality_raises(self):
        p, e = comb_problem()
        with pytest.raises(SdpFailure) as info:
            solve_tester(e.chois(), e.priors, e.layout, SdpSettings(max_iter=3))
        assert info.value.solution is not None

    def test_size_cap(self):
        with pytest.raises(SdpSizeError):
            solve(comb_problem()[0], SdpSettings(max_order=10))

    def test_constraint_cap(self):
        with pytest.raises(SdpSizeError):
            solve(comb_problem()[0], SdpSettings(max_constraints=20))

    def test_non_hermitian_coefficient(self):
        p = HermitianSdp("min")
        p.add_block("X", 2)
        with pytest.raises(ValueError):
            p.set_objective("X", [[0, 1], [0, 0]])


class TestListener:
    def test_called_once_per_solve(self):
        seen = []
        fn = seen.append
        add_solve_listener(fn)
        try:
            solve(lambda_max_problem())
            solve(helstrom_problem())
        finally:
            remove_solve_listener(fn)
        solve(lambda_max_problem())
        assert len(seen) == 2 and all(s.optimal for s in seen)


class TestMaps:
    def test_identity_left_and_trace_left_adjoint(self, rng):
        g = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        x = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
        lhs = (identity_left_map(2, 3) @ g.reshape(-1)).reshape(6, 6)
        np.testing.assert_allclose(lhs, np.kron(np.eye(2), g))
        tr = (trace_left_map(2, 3) @ x.reshape(-1)).reshape(3, 3)
        np.testing.assert_allclose(tr, x[:3, :3] + x[3:, 3:])
        assert (trace_map(3) @ g.reshape(-1))[0] == pytest.approx(np.trace(g))


class TestSdpaExport:
    def test_lambda_max_file(self):
        text = export_sdpa(lambda_max_problem())
        lines = text.split("\n")
        assert lines[1] == "2" and lines[2] == "2 4"
        assert text.endswith("\n") and "\r" not in text

    def test_bytes_stable(self):
        assert export_sdpa(comb_problem()[0]) == export_sdpa(comb_problem()[0])

    def test_seventeen_digit_floats(self):
        body = export_sdpa(helstrom_problem()).split("\n")[4]
        mantissa = body.split()[-1].split("e")[0].replace("-", "").replace(".", "")
        assert len(mantissa) == 17

    def test_reader_round_trip(self):
        p = helstrom_problem(0.6, 0.7)
        c, f = read_sdpa(export_sdpa(p))
        np.testing.assert_allclose(c, p.rhs)
        assert len(f) == p.num_constraints + 1
        x = np.array([[0.3, 0.1 - 0.2j], [0.1 + 0.2j, 0.6]])
        real_x = np.block([[x.real, -x.imag], [x.imag, x.real]])
        expect = np.real(np.trace(p.objective_matrices()["P1"] @ x))
        assert np.trace(f[0][0] @ real_x) == pytest.approx(expect)

    def test_reader_tolerates_decorations(self):
        text = '"comment\n1 = m\n{1}\n(2)\n{3.0}\n0 1 1 1 1.0\n1 1 1 1 1.0\n1 1 2 2 1.0\n'
        c, f = read_sdpa(text)
        assert c.tolist() == [3.0] and f[1][0].tolist() == [[1.0, 0.0], [0.0, 1.0]]

    def test_empty_constraint_file(self):
        p = HermitianSdp("min")
        p.add_block("X", 2)
        p.set_objective("X", np.eye(2))
        assert solve_sdpa(export_sdpa(p)) == pytest.approx(0.0, abs=1e-7)

    @pytest.mark.parametrize("make", [lambda_max_problem, lambda: helstrom_problem(0.6, 0.9),
                                      lambda: comb_problem()[0]], ids=["lmax", "helstrom", "comb"])
    def test_reference_solver_agrees(self, make):
        p = make()
        ours = solve(p).objective
        ref = solve_sdpa(export_sdpa(p))
        if p.sense == "min":
            ref = -ref
        assert ours == pytest.approx(ref, abs=1e-6)

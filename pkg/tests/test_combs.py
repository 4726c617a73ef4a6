import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from procdisc.channels import (amplitude_damping, memory_process, identity_channel,
                               random_channel, random_process, random_qubit_channel,
                               replacement_channel)
from procdisc.combs import (ChoiOperator, CombLayout, Ensemble, KrausChannel, ProcessComb,
                            choi_from_kraus, is_comb, is_cptp, is_tester, link_product,
                            process_choi, tester_success_probability)
from procdisc.linalg import LabeledOperator, SignatureError, permute_systems
from procdisc.lower import ultimate_tester

seeds = st.integers(min_value=0, max_value=2**31 - 1)


def ad_choi_reference(q):
    """The amplitude damping Choi matrix written out entry by entry."""
    c = np.zeros((4, 4))
    c[0, 0], c[1, 1], c[2, 2], c[3, 3] = 1, q, 0, 1 - q
    c[0, 3] = c[3, 0] = np.sqrt(1 - q)
    return c


def uniform_tester(layout, M, weights=None):
    d_in = np.prod([layout.dim_in(t) for t in range(1, layout.T + 1)])
    base = np.eye(layout.order) / d_in
    weights = [1.0 / M] * M if weights is None else weights
    return [w * base for w in weights]


class TestChoi:
    def test_identity_is_entangled_projector(self):
        c = choi_from_kraus(identity_channel(2)).matrix
        expect = np.zeros((4, 4))
        expect[np.ix_([0, 3], [0, 3])] = 1
        np.testing.assert_array_equal(c, expect)

    @pytest.mark.parametrize("q", [0.0, 0.3, 0.77, 1.0])
    def test_amplitude_damping_entries(self, q):
        np.testing.assert_allclose(choi_from_kraus(amplitude_damping(q)).matrix,
                                   ad_choi_reference(q), atol=1e-15)

    def test_replacement_channel(self):
        sigma = np.array([[0.7, 0.2j], [-0.2j, 0.3]])
        c = choi_from_kraus(replacement_channel(sigma)).matrix
        np.testing.assert_allclose(c, np.kron(sigma, np.eye(2)), atol=1e-14)

    def test_output_then_input_order(self):
        c = choi_from_kraus(amplitude_damping(0.3))
        assert c.labels == ("W", "V") and c.input_labels == ("V",) and c.output_labels == ("W",)

    @settings(max_examples=25, deadline=None)
    @given(seeds, st.integers(min_value=1, max_value=4))
    def test_trace_equals_input_dimension(self, seed, nk):
        ch = random_channel(seed, dim=3, n_kraus=nk)
        assert abs(np.trace(choi_from_kraus(ch).matrix) - 3) < 1e-12

    def test_kraus_shape_checked(self):
        with pytest.raises(SignatureError):
            KrausChannel([np.eye(3)], [("V", 2)], [("W", 2)])


class TestCptp:
    def test_amplitude_damping(self):
        assert is_cptp(amplitude_damping(0.3)).ok
        assert is_cptp(choi_from_kraus(amplitude_damping(0.3))).ok

    def test_doubled_identity_fails(self):
        ch = KrausChannel([np.eye(2), np.eye(2)], [("V", 2)], [("W", 2)])
        chk = is_cptp(ch)
        assert not chk.ok and chk.residual == pytest.approx(1.0)
        chk_c = is_cptp(choi_from_kraus(ch))
        assert not chk_c.ok and chk_c.details["trace_preservation"] == pytest.approx(1.0)

    def test_generalized_memory_channel(self):
        from procdisc.channels import GadParams, generalized_ad_memory
        ch = generalized_ad_memory(GadParams(0.2, 0.1, 1.0))
        assert is_cptp(ch, tol=1e-10).ok and is_cptp(choi_from_kraus(ch), tol=1e-10).ok

    def test_non_psd_choi_detected(self):
        c = ChoiOperator(LabeledOperator([("W", 2), ("V", 2)], np.diag([1.0, -0.1, 0.0, 1.1])),
                         ["V"], ["W"])
        chk = is_cptp(c)
        assert not chk.ok and chk.details["psd"] == pytest.approx(0.1)


class TestLinkProduct:
    def test_identity_link(self):
        lam = choi_from_kraus(random_qubit_channel(3, in_label="X", out_label="W"))
        ident = choi_from_kraus(identity_channel(2, "V", "X"))
        r = link_product(lam, ident)
        np.testing.assert_allclose(permute_systems(r.op, ["W", "V"]).matrix, lam.matrix, atol=1e-12)

    @pytest.mark.parametrize("q1,q2", [(0.3, 0.5), (0.1, 0.9), (0.0, 0.4)])
    def test_amplitude_damping_composition(self, q1, q2):
        first = choi_from_kraus(amplitude_damping(q1, "V", "X"))
        second = choi_from_kraus(amplitude_damping(q2, "X", "W"))
        r = link_product(second, first)
        q = 1 - (1 - q1) * (1 - q2)
        np.testing.assert_allclose(permute_systems(r.op, ["W", "V"]).matrix,
                                   ad_choi_reference(q), atol=1e-12)

    def test_matches_kraus_composition(self):
        a = random_qubit_channel(11, in_label="V", out_label="X")
        b = random_qubit_channel(12, in_label="X", out_label="W")
        composed = KrausChannel([kb @ ka for kb in b.kraus for ka in a.kraus],
                                [("V", 2)], [("W", 2)])
        r = link_product(choi_from_kraus(b), choi_from_kraus(a))
        np.testing.assert_allclose(permute_systems(r.op, ["W", "V"]).matrix,
                                   choi_from_kraus(composed).matrix, atol=1e-12)

    def test_acting_on_state(self, rng):
        g = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        rho = g @ g.conj().T
        rho /= np.trace(rho)
        ch = random_qubit_channel(5)
        r = link_product(choi_from_kraus(ch), ChoiOperator.state(LabeledOperator([("V", 2)], rho)))
        assert r.labels == ("W",) and r.input_labels == ()
        np.testing.assert_allclose(r.matrix, ch.apply(rho), atol=1e-12)

    @settings(max_examples=15, deadline=None)
    @given(seeds)
    def test_associative(self, seed):
        a = choi_from_kraus(random_qubit_channel(seed, in_label="A", out_label="B"))
        b = choi_from_kraus(random_qubit_channel(seed + 1, in_label="B", out_label="C"))
        c = choi_from_kraus(random_qubit_channel(seed + 2, in_label="C", out_label="D"))
        left = link_product(link_product(c, b), a)
        right = link_product(c, link_product(b, a))
        np.testing.assert_allclose(permute_systems(left.op, ["D", "A"]).matrix,
                                   permute_systems(right.op, ["D", "A"]).matrix, atol=1e-10)

    def test_miswired_rejected(self):
        a = choi_from_kraus(amplitude_damping(0.2, "V", "W"))
        b = choi_from_kraus(amplitude_damping(0.2, "V", "X"))
        with pytest.raises(SignatureError):
            link_product(a, b)

    def test_dimension_mismatch_rejected(self):
        a = choi_from_kraus(random_channel(1, dim=3, in_label="X", out_label="W"))
        b = choi_from_kraus(amplitude_damping(0.2, "V", "X"))
        with pytest.raises(SignatureError):
            link_product(a, b)


class TestProcess:
    def test_single_step(self):
        ch = random_qubit_channel(2)
        p = ProcessComb([ch])
        np.testing.assert_array_equal(p.choi.matrix, choi_from_kraus(ch).matrix)
        assert process_choi(p) is p.choi

    def test_parallel_identities(self):
        p = ProcessComb([identity_channel(2, "V1", "W1"), identity_channel(2, "V2", "W2")])
        psi = choi_from_kraus(identity_channel(2)).matrix
        assert p.choi.labels == ("W2", "V2", "W1", "V1")
        np.testing.assert_allclose(p.choi.matrix, np.kron(psi, psi), atol=1e-14)

    def test_equal_parameters_give_identical_chois(self):
        chois = [memory_process([0.3] * 3, 0.2, 1.0).choi.matrix for _ in range(3)]
        assert all(np.array_equal(chois[0], c) for c in chois[1:])

    def test_memory_wires_found(self):
        p = random_process(4, T=3)
        assert p.memory == (("Wp1",), ("Wp2",))
        assert p.step_dims() == [(2, 2, 2), (2, 2, 2), (2, 2, 1)]

    def test_memory_dimension_mismatch(self):
        a = KrausChannel([np.eye(6, 2)], [("V1", 2)], [("M", 3), ("W1", 2)])
        b = KrausChannel([np.eye(2, 4)], [("M", 2), ("V2", 2)], [("W2", 2)])
        with pytest.raises(SignatureError):
            ProcessComb([a, b])


class TestCombHierarchy:
    def test_channel_is_comb(self):
        c = choi_from_kraus(random_qubit_channel(9))
        layout = CombLayout([(("W",), ("V",))], [("W", 2), ("V", 2)])
        assert is_comb(c.op, layout).ok

    def test_trace_decreasing_is_not(self):
        c = choi_from_kraus(KrausChannel([np.sqrt(0.5) * np.eye(2)], [("V", 2)], [("W", 2)]))
        layout = CombLayout([(("W",), ("V",))], [("W", 2), ("V", 2)])
        chk = is_comb(c.op, layout)
        assert not chk.ok and chk.residual == pytest.approx(0.5)

    def test_memory_process_is_comb(self):
        p = memory_process([0.3, 0.34, 0.3], 0.2, 1.0)
        assert is_comb(p.choi.op, p.layout, tol=1e-8).ok

    @settings(max_examples=10, deadline=None)
    @given(seeds, st.integers(min_value=1, max_value=3))
    def test_random_processes_are_combs(self, seed, T):
        p = random_process(seed, T=T)
        assert is_comb(p.choi.op, p.layout, tol=1e-8).ok

    def test_signaling_backwards_detected(self):
        # W1 depends on V2: violates causal order
        swap = np.eye(4)[[0, 2, 1, 3]]
        ch = KrausChannel([swap], [("V2", 2), ("V1", 2)], [("W2", 2), ("W1", 2)])
        layout = CombLayout([(("W1",), ("V1",)), (("W2",), ("V2",))],
                            [("W1", 2), ("V1", 2), ("W2", 2), ("V2", 2)])
        assert not is_comb(choi_from_kraus(ch).op, layout).ok


class TestTester:
    def _ensemble(self, seeds=(1, 2, 3), priors=None):
        return Ensemble([random_process(s, T=2) for s in seeds], priors)

    def test_deterministic_guess(self):
        e = self._ensemble(priors=[0.2, 0.5, 0.3])
        full = uniform_tester(e.layout, 1)[0]
        zero = np.zeros_like(full)
        for m0 in range(3):
            th = [full if m == m0 else zero for m in range(3)]
            assert tester_success_probability(e, th) == pytest.approx(e.priors[m0], abs=1e-12)

    def test_uniform_guess(self):
        e = self._ensemble()
        assert tester_success_probability(e, uniform_tester(e.layout, 3)) == pytest.approx(1 / 3)

    def test_invalid_tester_rejected(self):
        e = self._ensemble()
        th = uniform_tester(e.layout, 3)
        th[0] = 2 * th[0]
        with pytest.raises(ValueError, match="invalid tester"):
            tester_success_probability(e, th)
        assert not is_tester(th, e.layout).ok

    def test_linear_in_tester_and_priors(self, rng):
        e1 = self._ensemble(priors=[0.2, 0.5, 0.3])
        e2 = self._ensemble(priors=[0.6, 0.1, 0.3])
        full = uniform_tester(e1.layout, 1)[0]
        a = [full * w for w in (0.5, 0.25, 0.25)]
        b = [full * w for w in (0.1, 0.1, 0.8)]
        lam = rng.uniform()
        mix = [lam * x + (1 - lam) * y for x, y in zip(a, b)]
        assert tester_success_probability(e1, mix) == pytest.approx(
            lam * tester_success_probability(e1, a) + (1 - lam) * tester_success_probability(e1, b),
            abs=1e-12)
        pri = [lam * x + (1 - lam) * y for x, y in zip(e1.priors, e2.priors)]
        e_mix = self._ensemble(priors=pri)
        assert tester_success_probability(e_mix, a) == pytest.approx(
            lam * tester_success_probability(e1, a) + (1 - lam) * tester_success_probability(e2, a),
            abs=1e-12)

    def test_optimal_tester_round_trip(self):
        e = Ensemble([ProcessComb([random_qubit_channel(s)]) for s in (21, 22, 23)])
        sol = ultimate_tester(e)
        assert tester_success_probability(e, sol.tester) == pytest.approx(sol.value, abs=1e-7)


class TestEnsemble:
    def test_priors_must_sum_to_one(self):
        with pytest.raises(ValueError):
            Ensemble([ProcessComb([identity_channel(2)])] * 2, [0.5, 0.6])

    def test_needs_two_processes(self):
        with pytest.raises(ValueError):
            Ensemble([ProcessComb([identity_channel(2)])])

    def test_incompatible_wiring(self):
        with pytest.raises(SignatureError):
            Ensemble([ProcessComb([identity_channel(2)]), ProcessComb([identity_channel(3)])])

    def test_default_equal_priors(self):
        e = Ensemble([ProcessComb([identity_channel(2)])] * 4)
        assert e.priors == (0.25,) * 4 and e.M == 4 and e.T == 1

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as hst

from qnoiselab import channels as ch
from qnoiselab import leaks as lk
from qnoiselab import states as st
from conftest import binary_entropy


def zeros(n):
    return st.PureState.basis([0] * n)


def sync_pair(t=0.1):
    return ch.simple_error_channel(ch.ErrorMaskDistribution.from_dict(2, {"00": 1 - t, "11": t}))


def random_product_channel(n, rng):
    factors = []
    for q in range(n):
        v = st.haar_unitary(4, rng)[:, :2]
        factors.append(((q,), ch.QuantumChannel(1, [v[:2], v[2:]])))
    return ch.ProductChannel(st.QubitRegister.of(n), factors)


class TestLeak:
    def test_identity_leaks_nothing(self, rng):
        tau = st.random_product_state(3, rng)
        for A in ([0], [1, 2], [0, 1, 2]):
            assert abs(lk.leak(ch.identity_channel(3), A, tau)) < 1e-9

    def test_full_collapse(self):
        assert lk.leak(ch.collapse_channel(2, 0), [0], zeros(2)) == pytest.approx(1)

    def test_depolarizing_value(self):
        # marginal diag(0.9, 0.1)
        val = lk.leak(ch.iid_depolarizing(3, 0.2), [0], zeros(3))
        assert val == pytest.approx(binary_entropy(0.1), abs=1e-12)
        assert val == pytest.approx(0.468996, abs=1e-6)

    def test_requires_product_tau(self):
        with pytest.raises(lk.LeakPreconditionError):
            lk.leak(ch.identity_channel(2), [0], st.bell_state())


class TestPairLeakCorrelation:
    @settings(max_examples=25, deadline=None)
    @given(seed=hst.integers(0, 2**31))
    def test_product_channel_null(self, seed):
        rng = np.random.default_rng(seed)
        e = random_product_channel(2, rng)
        assert abs(lk.pair_leak_correlation(e, 0, 1, st.random_product_state(2, rng))) < 1e-9

    def test_synchronized_pair_positive(self):
        assert lk.pair_leak_correlation(sync_pair(0.1), 0, 1, zeros(2)) > 0.05

    @pytest.mark.parametrize("t", [0.01, 0.3, 0.9])
    def test_independent_masks_null(self, t, rng):
        e = ch.simple_error_channel(ch.ErrorMaskDistribution.product([t, t]))
        assert abs(lk.pair_leak_correlation(e, 0, 1, st.random_product_state(2, rng))) < 1e-9

    def test_disjoint_required(self):
        with pytest.raises(ValueError):
            lk.pair_leak_correlation(sync_pair(), 0, 0, zeros(2))


class TestEnvironmentLeak:
    def test_identity(self):
        assert abs(lk.environment_leak(ch.identity_channel(2), [0])) < 1e-9

    def test_collapse_two_bits(self):
        assert lk.environment_leak(ch.collapse_channel(1, 0), [0]) == pytest.approx(2, abs=1e-9)

    def test_additive_over_tensor_products(self, rng):
        def single(label):
            v = st.haar_unitary(6, rng)[:, :2]
            return ch.QuantumChannel(st.QubitRegister((label,)), [v[:2], v[2:4], v[4:]])

        e1, e2 = single("a"), single("b")
        joint = ch.explicit(ch.tensor_channels(e1, e2))
        total = lk.environment_leak(joint, ["a", "b"])
        assert total == pytest.approx(lk.environment_leak(e1, ["a"]) + lk.environment_leak(e2, ["b"]), abs=1e-9)


class TestEnt:
    def test_values(self, rng):
        assert abs(lk.ent_pair(st.random_product_state(2, rng), 0, 1)) < 1e-9
        assert lk.ent_pair(st.bell_state(), 0, 1) == pytest.approx(2, abs=1e-12)
        assert lk.ent_pair(st.ghz_state(3), 0, 1) == pytest.approx(1, abs=1e-12)

    def test_label_groups(self):
        # qubits {0,1} against {2,3} of two Bell pairs across the cut
        psi = st.PureState.from_vector(np.kron(st.bell_state().amplitudes, st.bell_state().amplitudes))
        # Bell pairs are (0,1) and (2,3); cut (0,2)|(1,3) carries 4 bits
        assert lk.ent_pair(psi, [0, 2], [1, 3]) == pytest.approx(4, abs=1e-9)
        assert lk.ent_pair(psi, [0, 1], [2, 3]) == pytest.approx(0, abs=1e-9)

    @settings(max_examples=25, deadline=None)
    @given(seed=hst.integers(0, 2**31))
    def test_range_and_symmetry(self, seed):
        rho = st.random_density(2, np.random.default_rng(seed))
        v = lk.ent_pair(rho, 0, 1)
        assert -1e-10 <= v <= 2 + 1e-10
        assert v == pytest.approx(lk.ent_pair(rho, 1, 0), abs=1e-12)


class TestEmergentEntanglement:
    def test_bell(self):
        res = lk.emergent_entanglement(st.bell_state(), restarts=2)
        assert res.value == pytest.approx(2, abs=1e-9)

    def test_maximally_mixed(self):
        res = lk.emergent_entanglement(st.DensityOperator.maximally_mixed(2), seed=0)
        assert res.value >= 2 - 1e-3
        np.testing.assert_allclose(res.candidate.reconstruct(), np.eye(4) / 4, atol=1e-9)
        assert res.candidate.average_ent() == pytest.approx(res.value, abs=1e-9)

    def test_pure_equals_ent(self, rng):
        psi = st.random_pure_state(2, rng)
        res = lk.emergent_entanglement(psi, restarts=3)
        assert res.value == pytest.approx(lk.ent_pair(psi, 0, 1), abs=1e-6)

    def test_beats_random_decompositions(self):
        # rho_a (x) rho_b with maximally mixed marginals is I/4; sample random decompositions
        rng = np.random.default_rng(11)
        rho = np.eye(4) / 4
        b = np.eye(4) / 2  # purification columns sqrt(lambda) v
        best = 0.0
        for _ in range(3000):
            k = rng.integers(4, 9)
            u = st.haar_unitary(k, rng)[:, :4]
            cand = lk.DecompositionCandidate(*_weights_states(u, b), (2, 2))
            np.testing.assert_allclose(cand.reconstruct(), rho, atol=1e-12)
            best = max(best, cand.average_ent())
        res = lk.emergent_entanglement(st.DensityOperator.maximally_mixed(2), restarts=5)
        assert res.value >= best - 1e-9

    def test_lower_bounded_by_eigendecomposition(self, rng):
        rho = st.random_density(2, rng, rank=3)
        res = lk.emergent_entanglement(rho, restarts=3)
        assert res.value >= res.eigen_value - 1e-12
        np.testing.assert_allclose(res.candidate.reconstruct(), rho.matrix, atol=1e-9)

    def test_seeded_determinism(self, rng):
        rho = st.random_density(2, rng)
        a = lk.emergent_entanglement(rho, restarts=2, seed=4)
        b = lk.emergent_entanglement(rho, restarts=2, seed=4)
        assert a.value == b.value


def _weights_states(u, b):
    psi = u @ b.T
    p = np.sum(np.abs(psi) ** 2, axis=1)
    keep = p > 1e-14
    return p[keep], psi[keep] / np.sqrt(p[keep])[:, None]


class TestCompletion:
    def test_product_pure(self, rng):
        psi = st.random_product_state(3, rng)
        assert abs(lk.censorship(psi)) < 1e-6

    def test_bell(self):
        comp = lk.max_entropy_completion(st.bell_state())
        assert comp.value == pytest.approx(2, abs=1e-5)
        np.testing.assert_allclose(comp.rho_star.matrix, np.eye(4) / 4, atol=1e-5)

    def test_ghz_three(self):
        comp = lk.max_entropy_completion(st.ghz_state(3))
        assert comp.value == pytest.approx(1, abs=1e-4)
        assert comp.residual <= lk.COMPLETION_TOL

    def test_marginals_match(self, rng):
        rho = st.random_density(3, rng)
        comp = lk.max_entropy_completion(rho)
        for pair in itertools.combinations(range(3), 2):
            np.testing.assert_allclose(
                st.partial_trace(comp.rho_star, list(pair)).matrix,
                st.partial_trace(rho, list(pair)).matrix, atol=1e-5,
            )
        assert comp.entropy >= st.von_neumann_entropy(rho) - 1e-9

    def test_subset(self):
        # the pair (0,1) of GHZ3 is classical; its own completion gap is 1
        assert lk.censorship(st.ghz_state(3), [0, 1]) == pytest.approx(1, abs=1e-5)

    def test_tilde_ent(self, rng):
        assert abs(lk.tilde_ent(st.random_product_state(4, rng))) < 1e-6
        assert lk.tilde_ent(st.bell_state()) == pytest.approx(2, abs=1e-5)
        pair = lk.censorship(st.ghz_state(3), [0, 1])
        assert lk.tilde_ent(st.ghz_state(3)) == pytest.approx(1 + 3 * pair, abs=1e-4)


class TestMultiLeak:
    def test_product_table(self):
        ml = lk.multi_leak_correlation(ch.ErrorMaskDistribution.product([0.2, 0.3]), [0, 1])
        assert ml.value >= 0
        assert ml.value < 1e-9

    def test_synchronized_pair_positive(self):
        ml = lk.multi_leak_correlation(sync_pair(0.1), [0, 1])
        assert ml.value > 0

    def test_matches_pair_version(self):
        e = sync_pair(0.1)
        cell = lk.conjectureA_evaluate(e, st.bell_state(), zeros(2), 0, 1, ee_restarts=1)
        ml = lk.multi_leak_correlation(e, [0, 1])
        assert ml.value == pytest.approx(cell.EL, abs=1e-9)

    def test_best_table_matches_proper_marginals(self):
        dist = ch.ErrorMaskDistribution(
            0.9 * ch.ErrorMaskDistribution.product([0.05] * 3).table
            + 0.1 * ch.ErrorMaskDistribution.point([1, 1, 1]).table
        )
        ml = lk.multi_leak_correlation(dist, [0, 1, 2])
        assert ml.value > 0
        for sub in itertools.combinations(range(3), 2):
            np.testing.assert_allclose(ml.best_table.marginal(sub).table, dist.marginal(sub).table, atol=1e-12)

    def test_needs_simple_channel(self):
        with pytest.raises(lk.UnsupportedChannelError):
            lk.multi_leak_correlation(ch.unitary_channel(np.eye(4)), [0, 1])


class TestConjectureCells:
    def test_iid_on_bell(self):
        cell = lk.conjectureA_evaluate(ch.iid_depolarizing(2, 0.1), st.bell_state(), zeros(2), 0, 1, ee_restarts=1)
        assert abs(cell.EL) < 1e-9
        assert cell.ENT == pytest.approx(2)
        assert cell.ratio_plain == pytest.approx(0, abs=1e-9)
        assert cell.verdict == "violates positivity of K"

    def test_correlated_on_bell(self):
        cell = lk.conjectureA_evaluate(sync_pair(0.1), st.bell_state(), zeros(2), 0, 1, ee_restarts=1)
        assert cell.EL > 0
        assert cell.ratio_scaled is not None and cell.ratio_scaled > 0
        assert cell.verdict == "consistent"
        assert set(cell.to_dict()["thresholds"]) == {"vacuity", "leak"}

    def test_identity_is_vacuous(self):
        cell = lk.conjectureA_evaluate(ch.identity_channel(2), st.bell_state(), zeros(2), 0, 1, ee_restarts=1)
        assert cell.L_a == pytest.approx(0, abs=1e-12) and cell.L_b == pytest.approx(0, abs=1e-12)
        assert cell.verdict == "vacuous"


class TestRelationP1s:
    def test_product_everything(self, rng):
        e = ch.simple_error_channel(ch.ErrorMaskDistribution.product([0.1] * 3))
        rep = lk.relation_p1s_evaluate(e, st.random_product_state(3, rng), [0, 1, 2])
        assert abs(rep.EL) < 1e-9 and abs(rep.ENT) < 1e-5

    def test_ghz_with_synchronized_background(self):
        dist = ch.ErrorMaskDistribution(
            0.9 * ch.ErrorMaskDistribution.product([0.01] * 3).table
            + 0.1 * ch.ErrorMaskDistribution.point([1, 1, 1]).table
        )
        rep = lk.relation_p1s_evaluate(ch.simple_error_channel(dist), st.ghz_state(3), [0, 1, 2])
        assert rep.EL > 0
        assert rep.ENT == pytest.approx(1, abs=1e-4)

    def test_pure_all_or_nothing_is_a_vertex(self):
        # the two-point table cannot move along the parity direction
        e = ch.simple_error_channel(ch.ErrorMaskDistribution.all_or_nothing(3, 0.1))
        rep = lk.relation_p1s_evaluate(e, st.ghz_state(3), [0, 1, 2])
        assert abs(rep.EL) < 1e-12

    def test_pair_reduces_to_conjecture_a(self):
        e = sync_pair(0.2)
        rep = lk.relation_p1s_evaluate(e, st.bell_state(), [0, 1])
        cell = lk.conjectureA_evaluate(e, st.bell_state(), zeros(2), 0, 1, ee_restarts=1)
        assert rep.EL == pytest.approx(cell.EL, abs=1e-9)
        assert rep.ENT == pytest.approx(cell.ENT, abs=1e-5)

import itertools
import math

import numpy as np
import pytest

from qnoiselab import channels as ch
from qnoiselab import circuits as cl
from qnoiselab import leaks as lk
from qnoiselab import states as st


class TestCircuit:
    def test_depth_zero_is_identity(self):
        c = cl.random_circuit(3, 0, seed=1)
        np.testing.assert_allclose(c.unitary(), np.eye(8))

    def test_no_entangling_gates_keeps_product(self):
        c = cl.random_circuit(4, 6, entangling_fraction=0.0, seed=2)
        assert all(len(g.qubits) == 1 for layer in c.layers for g in layer)
        final = cl.simulate(c).ideal[-1]
        for k in range(4):
            assert st.von_neumann_entropy(st.partial_trace(final, [k])) < 1e-9

    def test_seed_reproducible(self):
        a, b = cl.random_circuit(3, 4, seed=9), cl.random_circuit(3, 4, seed=9)
        assert np.array_equal(a.unitary(), b.unitary())

    def test_layers_cover_every_qubit_once(self):
        c = cl.random_circuit(5, 3, entangling_fraction=0.7, seed=3)
        for layer in c.layers:
            qs = sorted(q for g in layer for q in g.qubits)
            assert qs == list(range(5))

    def test_validation(self):
        with pytest.raises(cl.CircuitError):
            cl.Gate((0,), np.ones((2, 2)))
        with pytest.raises(cl.CircuitError):
            cl.Circuit(2, [[cl.Gate((0,), np.eye(2)), cl.Gate((0, 1), np.eye(4))]])
        with pytest.raises(cl.CircuitError):
            cl.Circuit(2, [[cl.Gate((2,), np.eye(2))]])

    def test_json_round_trip(self):
        c = cl.random_circuit(3, 4, seed=5)
        back = cl.Circuit.from_json(c.to_json())
        assert back.n == c.n and back.depth == c.depth
        for la, lb in zip(c.layers, back.layers):
            for ga, gb in zip(la, lb):
                assert ga.qubits == gb.qubits
                assert np.max(np.abs(ga.unitary - gb.unitary)) <= 1e-15


class TestSimulate:
    def test_noiseless(self):
        traj = cl.simulate(cl.random_circuit(3, 5, seed=0))
        assert max(traj.distances) < 1e-12
        assert traj.depth == 5

    def test_full_collapse_after_first_layer(self):
        c = cl.random_circuit(3, 4, seed=1)
        noise = cl.NoiseModel.profile(ch.CollapseProfile.all_or_nothing(1.0))
        traj = cl.simulate(c, noise)
        for rho in traj.noisy[1:]:
            np.testing.assert_allclose(rho.matrix, np.eye(8) / 8, atol=1e-13)

    def test_monte_carlo_oracle(self):
        n, depth, t = 4, 10, 0.01
        c = cl.random_circuit(n, depth, seed=21)
        channel = ch.explicit(ch.iid_depolarizing(n, t))
        traj = cl.simulate(c, channel)
        psi = traj.ideal[-1].amplitudes
        sigma = traj.noisy[-1].matrix
        # Helstrom projector onto the positive part of psi psi^+ - sigma
        lam, vec = np.linalg.eigh(np.outer(psi, psi.conj()) - sigma)
        p = vec[:, lam > 0] @ vec[:, lam > 0].conj().T
        exact = traj.distances[-1]
        assert exact == pytest.approx(lam[lam > 0].sum(), abs=1e-12)
        shots = 3000
        phis = cl.monte_carlo_trajectories(c, channel, np.eye(2**n)[0], shots, np.random.default_rng(4))
        samples = np.einsum("si,ij,sj->s", phis.conj(), p, phis).real
        estimate = float(np.vdot(psi, p @ psi).real) - samples.mean()
        sd = samples.std(ddof=1) / math.sqrt(shots)
        assert abs(estimate - exact) <= 3 * sd + 1e-12

    def test_cap(self):
        with pytest.raises(cl.CircuitError):
            cl.simulate(cl.empty_circuit(3, 1), cap=2)


class TestAccumulatedError:
    def test_no_noise_is_identity(self):
        eff = cl.accumulated_error_channel(cl.random_circuit(2, 3, seed=0))
        np.testing.assert_allclose(ch.superoperator_matrix(eff), np.eye(16), atol=1e-12)

    def test_single_final_noise(self):
        # a single layer followed by noise: nothing to propagate through
        c = cl.random_circuit(2, 1, seed=3)
        noise = ch.iid_depolarizing(2, 0.1)
        eff = cl.accumulated_error_channel(c, noise)
        np.testing.assert_allclose(ch.superoperator_matrix(eff), ch.superoperator_matrix(noise), atol=1e-8)

    def test_product_circuit_keeps_product_error(self):
        c = cl.random_circuit(3, 6, entangling_fraction=0.0, seed=7)
        eff = cl.accumulated_error_channel(c, ch.iid_depolarizing(3, 0.05))
        tau = st.PureState.basis([0, 0, 0])
        for a, b in itertools.combinations(range(3), 2):
            assert abs(lk.pair_leak_correlation(eff, a, b, tau)) < 1e-8

    def test_spectrum_heavier_with_depth(self):
        noise = ch.iid_depolarizing(4, 0.005)
        heavy = []
        for depth in (1, 4, 8, 12):
            eff = cl.accumulated_error_channel(cl.random_circuit(4, depth, 1.0, seed=11), noise)
            heavy.append(ch.pauli_weight_spectrum(eff).tail(2))
        assert all(b > a for a, b in zip(heavy, heavy[1:]))


class TestIsing:
    def test_zero_coupling_is_product(self):
        dist, _ = cl.ising_mask_distribution(4, {(0, 1): 0.0, (2, 3): 0.0}, base_rate=0.1)
        assert np.allclose(dist.rates(), 0.1, atol=1e-9)
        for j, k in itertools.combinations(range(4), 2):
            assert abs(ch.mask_correlation(dist, j, k)) < 1e-9

    def test_strong_complete_graph(self):
        edges = {e: 3.0 for e in itertools.combinations(range(5), 2)}
        dist, _ = cl.ising_mask_distribution(5, edges, base_rate=0.05)
        assert np.mean(dist.rates()) == pytest.approx(0.05, abs=1e-6)
        assert min(ch.mask_correlation(dist, j, k) for j, k in edges) > 0.5

    def test_graph_from_circuit(self):
        c = cl.random_circuit(5, 4, entangling_fraction=1.0, seed=2)
        edges = c.interaction_edges()
        imperf = {e: 0.5 for e in edges}
        model = cl.ising_noise_from_circuit(c, imperf, 0.05)
        keys = {tuple(int(x) for x in k.split("-")) for k in model.params["couplings"]}
        assert keys == edges == cl.circuit_interaction_graph(c)
        assert model.channel(5).mask_distribution.n == 5

    def test_unreachable_rate(self):
        with pytest.raises(cl.CircuitError):
            cl.ising_mask_distribution(2, {(0, 1): 1.0}, base_rate=1.5)


class TestCommutators:
    def test_global_depolarizing_commutes(self, rng):
        e = ch.global_depolarizing(2, 0.3)
        for _ in range(5):
            assert cl.commutator_diagnostic(e, st.haar_unitary(4, rng)) < 1e-9

    def test_disjoint_supports(self, rng):
        e = ch.collapse_channel(2, 0)
        u = np.kron(np.eye(2), st.haar_unitary(2, rng))
        assert cl.commutator_diagnostic(e, u) < 1e-9

    def test_local_noise_does_not_commute_with_entanglers(self, rng):
        e = ch.iid_depolarizing(2, 0.3)
        assert cl.commutator_diagnostic(e, st.haar_unitary(4, rng)) > 1e-3

    def test_rank_one_near_sqrt2(self):
        vals = [cl.rank_one_commutator(64, np.random.default_rng(s)) for s in range(50)]
        assert abs(np.mean(vals) - math.sqrt(2)) < 0.05

    def test_stabilizing_unitary(self, rng):
        rho = st.ghz_state(2).density()
        for _ in range(5):
            u = cl.stabilizing_unitary(rho, rng)
            np.testing.assert_allclose(u @ u.conj().T, np.eye(4), atol=1e-12)
            np.testing.assert_allclose(u @ rho.matrix @ u.conj().T, rho.matrix, atol=1e-12)

    def test_sweep_maximally_mixed_single_qubit(self):
        rho = st.DensityOperator.maximally_mixed(1)
        rep = cl.stabilizer_commutation_sweep(rho, {"iid": ch.iid_depolarizing(1, 0.2)}, seed=0, samples=10)
        assert rep["channels"]["iid"]["max"] < 1e-9

    def test_sweep_records_families(self):
        rho = st.ghz_state(2).density()
        fam = {
            "iid": ch.iid_depolarizing(2, 0.1),
            "sync": ch.simple_error_channel(ch.ErrorMaskDistribution.all_or_nothing(2, 0.1)),
            "collapse": ch.collapse_channel(2, 0),
        }
        rep = cl.stabilizer_commutation_sweep(rho, fam, seed=1, samples=5)
        assert set(rep["channels"]) == set(fam)
        assert all(len(r["values"]) == 5 for r in rep["channels"].values())
        assert rep["bound"] == pytest.approx(0.9 * math.sqrt(2))

    def test_past_future_length(self):
        c = cl.random_circuit(2, 3, seed=0)
        vals = cl.past_future_commutators(c, ch.iid_depolarizing(2, 0.1))
        assert len(vals) == 3 and all(v >= 0 for v in vals)


class TestRateScaling:
    def test_identity_noise(self):
        rep = cl.rate_scaling_experiment([1, 2, 3], cl.NoiseModel("none"), 3, seed=0)
        assert all(r["mean_increment"] < 1e-12 for r in rep["rows"])

    def test_iid_no_gates_closed_form(self):
        t = 0.1
        ns = list(range(1, 9))
        rep = cl.rate_scaling_experiment(ns, cl.NoiseModel.iid(t), 1, seed=0, gates=False)
        firsts = [r["first_increment"] for r in rep["rows"]]
        np.testing.assert_allclose(firsts, [1 - (1 - t / 2) ** n for n in ns], atol=1e-12)
        assert all(b > a for a, b in zip(firsts, firsts[1:]))

    def test_synchronized_first_increment(self):
        t = 0.1
        ns = [1, 2, 4, 6]
        noise = cl.NoiseModel.profile(ch.CollapseProfile.all_or_nothing(t))
        rep = cl.rate_scaling_experiment(ns, noise, 3, seed=1)
        for r in rep["rows"]:
            # sigma is pure before the first noise layer, so d(sigma, I/d) = 1 - 1/d
            assert r["first_increment"] == pytest.approx(t * (1 - 2.0 ** -r["n"]), abs=1e-12)
        assert rep["fit"]["slope"] < 0.05

    def test_fit_present(self):
        rep = cl.rate_scaling_experiment([1, 2, 3], cl.NoiseModel.iid(0.05), 2, seed=0)
        assert set(rep["fit"]) == {"slope", "intercept", "r2"}


class TestLogDepth:
    def test_trivial_rates(self):
        assert cl.logdepth_repetition_experiment(5, 0.0, 3, 200)["frequency"] == 1
        assert cl.logdepth_repetition_experiment(5, 1.0, 3, 200)["frequency"] == 0

    def test_analytic(self):
        rep = cl.logdepth_repetition_experiment(10, 0.1, 50, 10_000, seed=0)
        assert rep["analytic"] == pytest.approx(1 - (1 - 0.9**10) ** 50)
        assert rep["within_3sd"]


class TestNoiseModel:
    def test_unknown_kind(self):
        with pytest.raises(cl.CircuitError):
            cl.NoiseModel("thermal")

    def test_describe(self):
        d = cl.NoiseModel.simple(ch.ErrorMaskDistribution.all_or_nothing(2, 0.1)).describe()
        assert d["kind"] == "simple" and d["distribution"]["11"] == pytest.approx(0.1)

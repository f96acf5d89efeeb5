import json

import numpy as np
import pytest

from divland import neuro
from divland.errors import DomainError
from divland.neuro import ARCHS, Genome, NetworkPolicy, NetworkState, mutate, random_genome

import oracles


def _single_input_ctrnn(tau_in=0.1) -> Genome:
    tau = np.full(neuro.N_NEURONS, 1.0)
    tau[0] = tau_in
    return Genome("CTRNN", np.zeros((2, 8)), np.zeros((8, 1)), np.zeros(9), tau=tau)


class TestGenome:
    @pytest.mark.parametrize("arch,genes", [("NN", 33), ("RNN", 42), ("CTRNN", 44)])
    def test_gene_counts(self, arch, genes):
        assert random_genome(arch, np.random.default_rng(0)).n_genes == genes

    def test_nn_has_no_dynamic_genes(self):
        g = random_genome("NN", np.random.default_rng(0))
        assert g.r is None and g.tau is None

    def test_wrong_genes_rejected(self):
        with pytest.raises(DomainError):
            Genome("NN", np.zeros((2, 8)), np.zeros((8, 1)), np.zeros(9), r=np.zeros(9))
        with pytest.raises(DomainError):
            Genome("RNN", np.zeros((2, 8)), np.zeros((8, 1)), np.zeros(9))
        with pytest.raises(DomainError):
            Genome("NN", np.zeros((8, 2)), np.zeros((8, 1)), np.zeros(9))

    def test_bounds(self):
        with pytest.raises(DomainError):
            Genome("NN", np.full((2, 8), 5.5), np.zeros((8, 1)), np.zeros(9))
        with pytest.raises(DomainError):
            Genome("RNN", np.zeros((2, 8)), np.zeros((8, 1)), np.zeros(9), r=np.full(9, 1.2))
        with pytest.raises(DomainError):
            Genome.zeros("CTRNN", tau=0.001)

    def test_random_draws_in_bounds(self):
        rng = np.random.default_rng(1)
        for arch in ARCHS:
            for _ in range(3000):
                random_genome(arch, rng)  # constructor enforces every bound

    def test_same_seed_same_genome(self):
        for arch in ARCHS:
            assert random_genome(arch, np.random.default_rng(4)) == random_genome(arch, np.random.default_rng(4))

    @pytest.mark.parametrize("arch", ARCHS)
    def test_json_roundtrip(self, arch, tmp_path):
        g = random_genome(arch, np.random.default_rng(2))
        g.save(tmp_path / "g.json")
        assert Genome.load(tmp_path / "g.json") == g

    def test_malformed_file(self, tmp_path):
        p = tmp_path / "g.json"
        p.write_text("{not json")
        with pytest.raises(DomainError):
            Genome.load(p)
        p.write_text(json.dumps({"arch": "NN", "w1": [[0] * 8] * 2}))
        with pytest.raises(DomainError):
            Genome.load(p)
        p.write_text(json.dumps({**Genome.zeros("NN").to_dict(), "extra": 1}))
        with pytest.raises(DomainError):
            Genome.load(p)

    def test_arrays_are_frozen(self):
        g = Genome.zeros("NN")
        with pytest.raises(ValueError):
            g.w1[0, 0] = 1.0


class TestMutation:
    @pytest.mark.parametrize("arch", ARCHS)
    def test_rate_zero_and_scale_zero_are_identity(self, arch):
        g = random_genome(arch, np.random.default_rng(0))
        assert mutate(g, np.random.default_rng(1), rate=0.0) == g
        assert mutate(g, np.random.default_rng(1), rate=1.0, scale=0.0) == g

    def test_changed_gene_fraction(self):
        rng = np.random.default_rng(7)
        g = random_genome("RNN", rng)
        changed = 0
        trials = 10_000
        for _ in range(trials):
            m = mutate(g, rng)
            changed += sum(int(np.sum(a != b)) for a, b in zip(g._arrays(), m._arrays()) if a is not None)
        assert changed / (trials * g.n_genes) == pytest.approx(0.1, rel=0.05)

    @pytest.mark.parametrize("arch", ARCHS)
    def test_closure_under_large_steps(self, arch):
        rng = np.random.default_rng(3)
        g = random_genome(arch, rng)
        for _ in range(300):
            g = mutate(g, rng, rate=1.0, scale=2.0)
        assert g.arch == arch

    def test_bad_rate(self):
        with pytest.raises(DomainError):
            mutate(Genome.zeros("NN"), np.random.default_rng(0), rate=1.5)


class TestStep:
    @pytest.mark.parametrize("arch", ARCHS)
    def test_zero_genome_zero_output(self, arch):
        out, _ = neuro.step(Genome.zeros(arch), NetworkState(), (0.0, 0.0), 0.025)
        assert out == 0.0

    def test_nn_is_memoryless(self):
        g = random_genome("NN", np.random.default_rng(5))
        s1 = NetworkState(np.ones(2), np.full(8, 3.0), -2.0)
        a, _ = neuro.step(g, s1, (0.4, -1.0), 0.02)
        b, _ = neuro.step(g, NetworkState(), (0.4, -1.0), 0.02)
        assert a == b

    @pytest.mark.parametrize("arch", ["RNN", "CTRNN"])
    def test_recurrent_output_depends_on_history(self, arch):
        rng = np.random.default_rng(6)
        g = random_genome(arch, rng)
        net_a, net_b = NetworkPolicy(g), NetworkPolicy(g)
        for x in (1.0, -1.0, 2.0):
            net_a(np.array([x]), np.array([0.0]), np.array([0.025]))
        a = net_a(np.array([0.3]), np.array([0.1]), np.array([0.025]))
        b = net_b(np.array([0.3]), np.array([0.1]), np.array([0.025]))
        assert a[0] != b[0]

    def test_ctrnn_single_neuron(self):
        _, s = neuro.step(_single_input_ctrnn(0.1), NetworkState(), (1.0, 0.0), 0.05)
        dt, tau = 0.05, 0.1
        assert s.inputs[0] == 0.0 + dt * (1.0 - 0.0) / (dt + tau)
        assert s.inputs[0] == pytest.approx(1 / 3, abs=1e-15)

    def test_ctrnn_single_neuron_fixed_point(self):
        res = neuro.steady_state_response(_single_input_ctrnn(0.1), 1.0, 0.0)
        assert res.converged
        assert res.state.inputs[0] == pytest.approx(1.0, abs=1e-5)

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            neuro.step(Genome.zeros("NN"), NetworkState(np.zeros(3)), (0.0, 0.0), 0.02)
        with pytest.raises(DomainError):
            neuro.step(Genome.zeros("NN"), NetworkState(), (0.0, 0.0, 1.0), 0.02)
        with pytest.raises(DomainError):
            neuro.step(Genome.zeros("NN"), NetworkState(), (0.0, 0.0), 0.0)

    @pytest.mark.parametrize("arch", ARCHS)
    def test_matches_scalar_oracle_over_sequences(self, arch):
        rng = np.random.default_rng(11)
        for _ in range(30):
            g = random_genome(arch, rng)
            gd = g.to_dict()
            state = NetworkState()
            ref = oracles.zero_state()
            for _ in range(20):
                d, dd, dt = rng.normal(), rng.normal(scale=3), rng.uniform(0.02, 0.034)
                out, state = neuro.step(g, state, (d, dd), dt)
                want, ref = oracles.network_step(gd, ref, d, dd, dt)
                assert abs(out - want) <= 1e-12
                np.testing.assert_allclose(state.hidden, ref["hidden"], rtol=0, atol=1e-12)


class TestDynamicsProperties:
    def test_ctrnn_potentials_bounded(self):
        rng = np.random.default_rng(0)
        g = random_genome("CTRNN", rng)
        net = NetworkPolicy([g] * 100)
        in_bound = 3.0
        hid_bound = max(np.abs(g.w1).sum(axis=0).max(), 0) + 1e-12
        out_bound = np.abs(g.w2).sum() + 1e-12
        for _ in range(1000):
            x = rng.uniform(-in_bound, in_bound, (2, 100))
            net(x[0], x[1], np.full(100, rng.uniform(0.02, 0.034)))
            assert np.all(np.abs(net.g_in) <= in_bound)
            assert np.all(np.abs(net.g_h) <= hid_bound)
            assert np.all(np.abs(net.g_o) <= out_bound)

    def test_ctrnn_euler_first_order(self):
        g = random_genome("CTRNN", np.random.default_rng(2))

        def traj(dt):
            net = NetworkPolicy(g)
            n = round(1.0 / dt)
            for _ in range(n):
                out = net(np.array([0.8]), np.array([-0.5]), np.array([dt]))
            return out[0]

        ref = traj(1e-5)
        e1, e2 = abs(traj(0.01) - ref), abs(traj(0.005) - ref)
        assert 1.5 <= e1 / e2 <= 2.5


class TestSteadyState:
    def test_nn_converges_immediately(self):
        res = neuro.steady_state_response(random_genome("NN", np.random.default_rng(0)), 0.3, 0.1)
        assert res.converged and res.steps == 1

    def test_nn_value_equals_single_step(self):
        g = random_genome("NN", np.random.default_rng(1))
        out, _ = neuro.step(g, NetworkState(), (0.3, -0.2), 0.025)
        assert neuro.steady_state_response(g, 0.3, -0.2).value == out

    def test_zero_ctrnn_settles_at_zero(self):
        res = neuro.steady_state_response(Genome.zeros("CTRNN"), 1.5, -2.0)
        assert res.converged and res.value == 0.0

    def test_non_convergence_is_reported(self):
        r = np.zeros(9)
        r[8] = -1.0  # output flips sign every step
        theta = np.zeros(9)
        theta[8] = 1.0
        g = Genome("RNN", np.zeros((2, 8)), np.zeros((8, 1)), theta, r=r)
        res = neuro.steady_state_response(g, 0.0, 0.0, max_steps=500)
        assert not res.converged and res.steps == 500

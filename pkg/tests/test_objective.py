import numpy as np
import pytest

import ucnprec as u
from ucnprec.objective import OpCounter, amplitude_matrix
from conftest import make_instance, random_state
from oracles import complex_blocks_dict, naive_signal_and_interference, naive_wsr_bits


def scalar_world():
    """One BS with one antenna, one UT, h = 1, p = 1, noise 1."""
    ch = u.ChannelSet(entries=np.ones((1, 1, 1), dtype=complex), noise_power=1.0)
    cm = u.ClusterMap.from_serving([[0]], 1)
    layout = u.BlockLayout(cm, 1)
    state = u.PrecoderState(layout, np.array([[1.0, 0.0]]))
    return ch, cm, state


class TestRateTerms:
    def test_single_user_noise_only(self):
        inst = make_instance(seed=0, K=1, B_sc=2)
        state = random_state(inst["layout"], inst["rho"], 0)
        terms = u.rate_terms(state, inst["ch"], inst["clusters"])
        assert terms.r[0] == pytest.approx(inst["ch"].noise_power, rel=1e-12)

    def test_scalar_example(self):
        ch, cm, state = scalar_world()
        terms = u.rate_terms(state, ch, cm)
        assert terms.a[0] == pytest.approx(1.0)
        assert terms.r[0] == pytest.approx(1.0)
        assert terms.b[0] == pytest.approx(0.5)
        assert terms.rate_bits[0] == pytest.approx(1.0)

    def test_matches_complex_oracle(self):
        for seed in range(5):
            inst = make_instance(seed=seed, gnb_count=3, M_t=3, K=4, B_sc=2)
            state = random_state(inst["layout"], inst["rho"], seed + 100)
            terms = u.rate_terms(state, inst["ch"], inst["clusters"])
            a, r = naive_signal_and_interference(inst["ch"], inst["clusters"], state)
            assert np.allclose(terms.a, a, rtol=1e-12)
            assert np.allclose(terms.r, r, rtol=1e-12)

    def test_two_user_interference(self):
        inst = make_instance(seed=3, K=2, B_sc=2)
        state = random_state(inst["layout"], inst["rho"], 42)
        terms = u.rate_terms(state, inst["ch"], inst["clusters"])
        a, r = naive_signal_and_interference(inst["ch"], inst["clusters"], state)
        assert np.allclose(terms.r, r, rtol=1e-12)
        assert np.all(terms.r > inst["ch"].noise_power)


class TestWsr:
    def test_single_positive_weight(self):
        inst = make_instance(seed=1, K=3)
        state = random_state(inst["layout"], inst["rho"], 1)
        terms = u.rate_terms(state, inst["ch"], inst["clusters"])
        w = u.Weights(np.array([0.0, 1.0, 0.0]))
        assert u.wsr(state, inst["ch"], inst["clusters"], w) == pytest.approx(
            terms.rate_bits[1], rel=1e-12
        )

    def test_zero_precoder_zero_wsr(self, small_instance):
        state = u.PrecoderState.zeros(small_instance["layout"])
        val = u.wsr(state, small_instance["ch"], small_instance["clusters"], small_instance["w"])
        assert val == 0.0

    def test_weight_scaling_linearity(self, small_instance):
        state = random_state(small_instance["layout"], small_instance["rho"], 2)
        base = u.wsr(state, small_instance["ch"], small_instance["clusters"], small_instance["w"])
        scaled = u.wsr(
            state,
            small_instance["ch"],
            small_instance["clusters"],
            u.Weights(3.5 * small_instance["w"].w),
        )
        assert scaled == pytest.approx(3.5 * base, rel=1e-12)

    def test_matches_oracle(self, small_instance):
        state = random_state(small_instance["layout"], small_instance["rho"], 3)
        got = u.wsr(state, small_instance["ch"], small_instance["clusters"], small_instance["w"])
        want = naive_wsr_bits(
            small_instance["ch"], small_instance["clusters"], state, small_instance["w"]
        )
        assert got == pytest.approx(want, rel=1e-12)

    def test_g_value_is_negated_nats(self, small_instance):
        state = random_state(small_instance["layout"], small_instance["rho"], 4)
        g = u.g_value(state, small_instance["ch"], small_instance["clusters"], small_instance["w"])
        bits = u.wsr(state, small_instance["ch"], small_instance["clusters"], small_instance["w"])
        assert g == pytest.approx(-bits * np.log(2.0), rel=1e-12)


class TestGradient:
    def test_scalar_case(self):
        ch, cm, state = scalar_world()
        grad = u.gradient(state, ch, cm, u.Weights(np.ones(1)))
        assert np.allclose(grad.blocks, [[-1.0, 0.0]], atol=1e-14)

    def test_zero_precoder_stationary(self, small_instance):
        state = u.PrecoderState.zeros(small_instance["layout"])
        grad = u.gradient(
            state, small_instance["ch"], small_instance["clusters"], small_instance["w"]
        )
        assert np.array_equal(grad.blocks, np.zeros_like(state.blocks))

    def test_matches_finite_differences(self, small_instance):
        state = random_state(small_instance["layout"], small_instance["rho"], 5)
        grad = u.gradient(
            state, small_instance["ch"], small_instance["clusters"], small_instance["w"]
        )
        fd = u.fd_gradient(
            state, small_instance["ch"], small_instance["clusters"], small_instance["w"], 1e-5
        )
        err = np.linalg.norm(grad.blocks - fd.blocks) / np.linalg.norm(fd.blocks)
        assert err < 1e-6

    def test_single_user_reduces_to_signal_term(self):
        inst = make_instance(seed=6, K=1, B_sc=3)
        state = random_state(inst["layout"], inst["rho"], 6)
        grad = u.gradient(state, inst["ch"], inst["clusters"], inst["w"])
        terms = u.rate_terms(state, inst["ch"], inst["clusters"])
        amps = amplitude_matrix(state, inst["ch"])
        coef = 2.0 * inst["w"].w[0] * terms.b[0] / terms.r[0]
        for l in inst["clusters"].serving_bs[0]:
            expected = u.embed_precoder(-coef * amps[0, 0] * inst["ch"].entries[l, 0])
            assert np.allclose(grad.block(l, 0), expected, rtol=1e-12)

    def test_rotation_invariance(self, small_instance):
        state = random_state(small_instance["layout"], small_instance["rho"], 7)
        terms = u.rate_terms(state, small_instance["ch"], small_instance["clusters"])
        cblocks = state.complex_blocks().copy()
        phase = np.exp(1.3j)
        for i, (_, k) in enumerate(state.layout.pairs):
            if k == 1:
                cblocks[i] *= phase
        rotated = u.PrecoderState.from_complex(state.layout, cblocks)
        terms_rot = u.rate_terms(rotated, small_instance["ch"], small_instance["clusters"])
        assert np.allclose(terms_rot.a, terms.a, rtol=1e-12)
        assert np.allclose(terms_rot.r, terms.r, rtol=1e-12)
        assert np.allclose(terms_rot.rate_bits, terms.rate_bits, rtol=1e-12)

    def test_ut_permutation_invariance(self, small_instance):
        ch, clusters, layout = (
            small_instance["ch"],
            small_instance["clusters"],
            small_instance["layout"],
        )
        state = random_state(layout, small_instance["rho"], 8)
        base = u.wsr(state, ch, clusters, small_instance["w"])

        n_ut = ch.n_ut
        perm = np.roll(np.arange(n_ut), 2)  # new index of old UT k is perm[k]
        entries = np.zeros_like(ch.entries)
        entries[:, perm, :] = ch.entries
        ch_p = u.ChannelSet(entries=entries, noise_power=ch.noise_power)
        serving = [None] * n_ut
        for k in range(n_ut):
            serving[perm[k]] = list(clusters.serving_bs[k])
        clusters_p = u.ClusterMap.from_serving(serving, ch.n_bs)
        layout_p = u.BlockLayout(clusters_p, layout.M_t)
        blocks = np.zeros_like(state.blocks)
        for i, (l, k) in enumerate(layout.pairs):
            blocks[layout_p.row(l, perm[k])] = state.blocks[i]
        state_p = u.PrecoderState(layout_p, blocks)
        w_p = u.Weights(small_instance["w"].w[np.argsort(perm)])
        assert u.wsr(state_p, ch_p, clusters_p, w_p) == pytest.approx(base, rel=1e-12)


class TestFiniteDifferences:
    def test_quadratic_is_exact(self):
        rng = np.random.default_rng(9)
        a = rng.standard_normal((6, 6))
        quad = a @ a.T + np.eye(6)
        b = rng.standard_normal(6)
        x0 = rng.standard_normal(6)

        def f(x):
            return 0.5 * x @ quad @ x + b @ x

        grad = u.central_difference(f, x0, 1e-4)
        assert np.allclose(grad, quad @ x0 + b, atol=1e-8)

    def test_error_drops_four_fold_with_half_eps(self):
        x0 = np.array([0.7, -0.3, 1.1])

        def f(x):
            return float(np.sum(x**4))

        exact = 4.0 * x0**3
        err1 = np.linalg.norm(u.central_difference(f, x0, 1e-2) - exact)
        err2 = np.linalg.norm(u.central_difference(f, x0, 5e-3) - exact)
        assert err1 / err2 == pytest.approx(4.0, rel=0.05)

    def test_rejects_nonpositive_eps(self):
        with pytest.raises(ValueError):
            u.central_difference(lambda x: 0.0, np.zeros(2), 0.0)


class TestWeightsAndCounter:
    def test_weights_validation(self):
        with pytest.raises(ValueError):
            u.Weights(np.array([0.0, 0.0]))
        with pytest.raises(ValueError):
            u.Weights(np.array([-1.0, 1.0]))

    def test_counter_counts_gradient_work(self, small_instance):
        counter = OpCounter()
        state = random_state(small_instance["layout"], small_instance["rho"], 10)
        u.gradient(
            state, small_instance["ch"], small_instance["clusters"], small_instance["w"], counter
        )
        n_active = small_instance["layout"].n_blocks
        n_ut = small_instance["ch"].n_ut
        m_t = small_instance["cfg"].M_t
        expected = 2 * n_ut * m_t * n_active + m_t * n_active + n_ut * n_ut
        assert counter.multiply_adds == expected
        counter.reset()
        assert counter.multiply_adds == 0

    def test_objective_bundle_consistency(self, small_instance):
        obj = u.WsrObjective(small_instance["ch"], small_instance["clusters"], small_instance["w"])
        state = random_state(small_instance["layout"], small_instance["rho"], 11)
        ev = obj.evaluate(state)
        assert ev.g_value == pytest.approx(
            u.g_value(state, small_instance["ch"], small_instance["clusters"], small_instance["w"]),
            rel=1e-12,
        )
        grad = u.gradient(
            state, small_instance["ch"], small_instance["clusters"], small_instance["w"]
        )
        assert np.array_equal(ev.grad.blocks, grad.blocks)
        assert obj.grad_evals == 1

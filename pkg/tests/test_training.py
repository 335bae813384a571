import numpy as np
import pytest

from oracles import fd_gradient, kink_distance
from unrollgen.networks import Arch, NetworkParams, forward, init_weights, weight_norms
from unrollgen.numerics import soft_threshold
from unrollgen.problem import Dataset, ProblemConfig, build_sensing_matrix, generate_dataset
from unrollgen.rng import child_stream
from unrollgen.training import (
    TrainConfig,
    TrainingDiverged,
    backward,
    evaluate,
    loss,
    train,
)

CFG = ProblemConfig(n_x=8, n_y=4)


@pytest.fixture(scope="module")
def A():
    return build_sensing_matrix(CFG).A


def draw(arch, A, L, rng, bias_mode="constant", clip_output=False, N=1):
    n_x, n_y = A.shape[1], A.shape[0]
    W1 = rng.uniform(-0.6, 0.6, size=(L, n_x, n_x))
    W2 = rng.uniform(-0.6, 0.6, size=(L, n_x, n_y)) if bias_mode == "learned" else None
    params = NetworkParams(arch, W1, float(rng.uniform(0.02, 0.3)), float(rng.uniform(0.3, 1.5)),
                           bias_mode, W2, clip_output)
    X = rng.uniform(-1, 1, size=(N, n_x))
    Y = rng.standard_normal((N, n_y))
    return params, X, Y


class TestLoss:
    def test_examples(self):
        t = np.array([0.5, -1.0, 2.0])
        assert loss(t, t) == 0.0
        assert loss(t + 1.0, t) == 1.0
        e = np.array([0.3, -0.2, 0.7])
        assert loss(t + 2.5 * e, t) == pytest.approx(2.5 * loss(t + e, t), rel=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            loss(np.zeros(3), np.zeros(4))


class TestBackward:
    def test_dead_zone_gives_zero_gradient(self, A):
        p = NetworkParams("ista", np.zeros((1, 8, 8)), 10.0)
        _, g = backward(p, A, (np.ones(8), np.ones(4)))
        assert not g.W1.any()

    def test_hand_derived_two_coordinates(self):
        # n_x = 2, zero weights, zero target: out = S(b) and
        # dL/dW[i, k] = 0.5 sign(b_i) [|b_i| > lam] S(b_k)
        A = np.array([[0.6, -0.3]])
        y = np.array([1.5])
        lam = 0.1
        b = A.T @ y
        p = NetworkParams("ista", np.zeros((1, 2, 2)), lam)
        value, g = backward(p, A, (np.zeros(2), y))
        s = soft_threshold(b, lam)
        expected = 0.5 * np.outer(np.sign(b) * (np.abs(b) > lam), s)
        np.testing.assert_allclose(g.W1[0], expected, rtol=0, atol=1e-12)
        assert value == pytest.approx(0.5 * np.abs(s).sum(), abs=1e-15)

    @pytest.mark.parametrize("arch", list(Arch))
    @pytest.mark.parametrize("L", [1, 2, 4])
    @pytest.mark.parametrize("bias_mode", ["constant", "learned"])
    def test_finite_differences(self, A, arch, L, bias_mode):
        rng = child_stream(11, f"fd-{arch.value}-{bias_mode}", L)
        checked = agreed = 0
        for _ in range(15):
            params, X, Y = draw(arch, A, L, rng, bias_mode, clip_output=bool(rng.integers(2)), N=2)
            if kink_distance(params, A, X, Y) < 1e-3:
                continue
            _, g = backward(params, A, (X, Y))
            for which, G in (("W1", g.W1), ("W2", g.W2)):
                if G is None:
                    continue
                for flat in rng.choice(G.size, size=8, replace=False):
                    idx = np.unravel_index(flat, G.shape)
                    fd = fd_gradient(params, A, X, Y, which, idx)
                    checked += 1
                    agreed += abs(G[idx] - fd) <= 1e-4 * max(abs(G[idx]), abs(fd)) + 1e-9
        assert checked > 0
        assert agreed == checked

    def test_accepts_single_sample_trace(self, A):
        params, X, Y = draw("admm", A, 3, np.random.default_rng(0))
        t = forward(params, A, Y[0])
        v1, g1 = backward(params, A, (X[0], Y[0]), t)
        v2, g2 = backward(params, A, (X[0], Y[0]))
        assert v1 == v2
        np.testing.assert_array_equal(g1.W1, g2.W1)

    def test_trace_mismatch(self, A):
        params, X, Y = draw("ista", A, 2, np.random.default_rng(1))
        other, _, _ = draw("ista", A, 3, np.random.default_rng(2))
        with pytest.raises(ValueError):
            backward(params, A, (X[0], Y[0]), forward(other, A, Y[0]))
        with pytest.raises(ValueError):
            backward(params, A, (X[0], Y[0]), forward(params, A, Y[0] + 1))

    def test_batch_gradient_is_mean(self, A):
        params, X, Y = draw("relu", A, 2, np.random.default_rng(3), N=4)
        _, g = backward(params, A, (X, Y))
        parts = [backward(params, A, (X[i], Y[i]))[1].W1 for i in range(4)]
        np.testing.assert_allclose(g.W1, np.mean(parts, axis=0), rtol=1e-13, atol=1e-16)


@pytest.fixture(scope="module")
def data(A):
    return generate_dataset(CFG, build_sensing_matrix(CFG), 40, "train")


class TestTrain:
    def test_zero_learning_rate(self, A, data):
        p = init_weights("ista", A, 2, 0.05)
        out, hist = train(p, A, data, TrainConfig(learning_rate=0.0, epochs=5, early_stop_window=0))
        np.testing.assert_array_equal(out.W1, p.W1)
        assert len(set(hist)) == 1 and len(hist) == 5

    def test_deterministic(self, A, data):
        p = init_weights("relu", A, 2, 0.0)
        cfg = TrainConfig(learning_rate=0.05, epochs=5, seed=3)
        a, ha = train(p, A, data, cfg)
        b, hb = train(p, A, data, cfg)
        np.testing.assert_array_equal(a.W1, b.W1)
        assert ha == hb
        c, _ = train(p, A, data, TrainConfig(learning_rate=0.05, epochs=5, seed=4))
        assert not np.array_equal(a.W1, c.W1)

    def test_single_sample_fit(self):
        cfg = ProblemConfig(n_x=8, n_y=4, noise_std=0.0)
        s = build_sensing_matrix(cfg)
        one = generate_dataset(cfg, s, 1, "train")
        p = init_weights("ista", s, 1, 0.01)
        _, hist = train(p, s, one, TrainConfig(learning_rate=0.05, epochs=2000, early_stop_window=0))
        assert hist[-1] < 0.01
        assert np.mean(hist[-100:]) < np.mean(hist[:100])

    def test_projection_holds(self, A, data):
        p = init_weights("ista", A, 3, 0.05, 0.5, child_stream(0, "init"))
        for steps in (1, 2, 7):
            out, _ = train(p, A, data, TrainConfig(learning_rate=0.5, projection=(0.9, 0.7), max_steps=steps,
                                                   epochs=10))
            n = weight_norms(out)
            assert max(n["linf"]) <= 0.9 + 1e-12
            assert np.linalg.norm(out.W1[0], 2) <= 0.7 + 1e-12

    def test_step_budget_and_history(self, A, data):
        p = init_weights("ista", A, 1, 0.05)
        _, hist = train(p, A, data, TrainConfig(learning_rate=0.01, epochs=100, batch_size=16,
                                                max_steps=7, early_stop_window=0))
        assert len(hist) == 3  # 3 steps per epoch over 40 samples

    def test_early_stop(self, A, data):
        p = init_weights("ista", A, 1, 0.05)
        _, hist = train(p, A, data, TrainConfig(learning_rate=0.0, epochs=100, early_stop_window=3))
        assert len(hist) == 4

    def test_divergence(self, A, data):
        p = NetworkParams("relu", np.full((4, 8, 8), 1e200), 0.0)
        with pytest.raises(TrainingDiverged):
            with np.errstate(all="ignore"):
                train(p, A, data, TrainConfig(learning_rate=0.0, epochs=2))

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=-1.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)


class TestEvaluate:
    def test_hand_sum(self, A):
        p = init_weights("ista", A, 2, 0.1)
        X = np.array([[0.5] * 8, [-0.25] * 8])
        Y = np.array([[1.0, 0, 0, 0], [0, 0.5, -0.5, 0]])
        ds = Dataset(X, Y, "", "test")
        by_hand = sum(np.abs(forward(p, A, Y[i]).prediction - X[i]).sum() / 8 for i in range(2)) / 2
        assert evaluate(p, A, ds) == pytest.approx(by_hand, rel=1e-14)

    def test_identity_recovery(self):
        A = np.eye(4)
        X = np.random.default_rng(0).uniform(-1, 1, (5, 4))
        p = NetworkParams("ista", np.zeros((1, 4, 4)), 0.0)
        assert evaluate(p, A, Dataset(X, X.copy(), "", "test")) == 0.0

    def test_clipping_applied(self, A):
        p = NetworkParams("relu", np.full((1, 8, 8), 5.0), 0.0, clip_output=True)
        Y = np.ones((1, 4))
        ds = Dataset(np.ones((1, 8)), Y, "", "test")
        assert evaluate(p, A, ds) == pytest.approx(np.abs(np.clip(forward(p, A, Y[0]).h[-1], -1, 1) - 1).mean())

    def test_empty(self, A):
        with pytest.raises(ValueError):
            evaluate(init_weights("ista", A, 1, 0.1), A, Dataset(np.zeros((0, 8)), np.zeros((0, 4)), "", "test"))

import numpy as np
import pytest

from plr.errors import FingerprintMismatchError, WeightsFormatError
from plr.nn.net import EncoderClassifier, UNet, UNetConfig, net_from_weights
from plr.nn.optim import (
    adadelta_step,
    make_optimizer,
    plateau_scheduler_step,
    sgd_step,
)
from plr.nn.weights import load_weights, save_weights

DESK = UNetConfig(levels=3, base_channels=4)


def rand_batch(rng, size=16, n=2):
    return rng.uniform(0.0, 1.0, (n, 1, size, size)).astype(np.float32)


class TestUNet:
    def test_output_shape_matches_input(self):
        rng = np.random.default_rng(0)
        net = UNet(DESK, seed=1)
        for size in (16, 32):
            x = rand_batch(rng, size)
            assert net.forward(x).shape == x.shape

    def test_output_in_unit_interval(self):
        rng = np.random.default_rng(1)
        y = UNet(DESK, seed=2).forward(rand_batch(rng))
        assert (y > 0).all() and (y < 1).all()

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        x = rand_batch(rng)
        a = UNet(DESK, seed=3).forward(x)
        b = UNet(DESK, seed=3).forward(x)
        assert np.array_equal(a, b)

    def test_indivisible_size_rejected(self):
        net = UNet(DESK, seed=1)
        with pytest.raises(ValueError):
            net.forward(np.zeros((1, 1, 18, 18), dtype=np.float32))

    def test_encoder_conv_count_matches_faithful_config(self):
        assert UNetConfig().levels * UNetConfig().convs_per_level == 10

    def test_single_sgd_step_decreases_mse(self):
        rng = np.random.default_rng(3)
        net = UNet(DESK, seed=4)
        x = rand_batch(rng, 16, 1)
        target = rand_batch(rng, 16, 1)
        opt = make_optimizer("sgd", 1e-3)
        loss0, _, grads = net.forward_backward(x, target)
        sgd_step(opt, net.params, grads)
        loss1, _, _ = net.forward_backward(x, target)
        assert loss1 < loss0

    def test_activation_capture_names(self):
        rng = np.random.default_rng(4)
        net = UNet(DESK, seed=5)
        capture = {}
        net.forward(rand_batch(rng), capture=capture)
        for name in net.activation_names():
            assert name in capture


class TestClassifier:
    def test_probabilities(self):
        rng = np.random.default_rng(5)
        net = EncoderClassifier(DESK, seed=6)
        probs = net.forward(rand_batch(rng, 16, 5))
        assert probs.shape == (5,)
        assert ((probs > 0) & (probs < 1)).all()

    def test_transplant_preserves_encoder_activations(self):
        rng = np.random.default_rng(6)
        unet = UNet(DESK, seed=7)
        clf = EncoderClassifier(DESK, seed=8)
        clf.load_encoder(unet.state())
        x = rand_batch(rng, 16, 3)
        unet_caps = {}
        unet.forward(x, capture=unet_caps)
        clf_caps = clf.encoder_activations(x)
        for i in range(DESK.levels * DESK.convs_per_level):
            name = f"conv_{i + 1}"
            assert np.array_equal(unet_caps[name], clf_caps[name])

    def test_transplant_arch_mismatch(self):
        unet = UNet(UNetConfig(levels=2, base_channels=4), seed=1)
        clf = EncoderClassifier(DESK, seed=1)
        with pytest.raises(FingerprintMismatchError):
            clf.load_encoder(unet.state())


class TestWeightsIO:
    def test_bit_exact_roundtrip(self, tmp_path):
        net = UNet(DESK, seed=9)
        path = tmp_path / "w.plrw"
        save_weights(net.state(), path)
        loaded = load_weights(path)
        assert loaded.arch == net.fingerprint()
        for name, tensor in net.params.items():
            assert tensor.dtype == loaded.tensors[name].dtype
            assert np.array_equal(tensor, loaded.tensors[name])

    def test_rebuild_from_weights(self, tmp_path):
        rng = np.random.default_rng(7)
        net = EncoderClassifier(DESK, seed=10)
        x = rand_batch(rng)
        path = tmp_path / "c.plrw"
        save_weights(net.state(), path)
        rebuilt = net_from_weights(load_weights(path))
        assert np.array_equal(rebuilt.forward(x), net.forward(x))

    def test_fingerprint_mismatch_on_load(self, tmp_path):
        net = UNet(DESK, seed=11)
        path = tmp_path / "w.plrw"
        save_weights(net.state(), path)
        other = UNet(UNetConfig(levels=2, base_channels=4), seed=11)
        with pytest.raises(FingerprintMismatchError):
            other.load_state(load_weights(path))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.plrw"
        path.write_bytes(b"WXYZ" + bytes(64))
        with pytest.raises(WeightsFormatError):
            load_weights(path)

    def test_truncated(self, tmp_path):
        net = UNet(DESK, seed=12)
        path = tmp_path / "w.plrw"
        save_weights(net.state(), path)
        path.write_bytes(path.read_bytes()[:-20])
        with pytest.raises(WeightsFormatError):
            load_weights(path)


class TestOptimizers:
    def test_zero_gradient_is_noop(self):
        params = {"p": np.array([1.0, -2.0])}
        grads = {"p": np.zeros(2)}
        for kind in ("sgd", "adadelta"):
            state = make_optimizer(kind, 0.5)
            before = params["p"].copy()
            (sgd_step if kind == "sgd" else adadelta_step)(state, params, grads)
            assert np.array_equal(params["p"], before)

    def test_sgd_unit_step(self):
        params = {"p": np.array([3.0])}
        sgd_step(make_optimizer("sgd", 1.0), params, {"p": np.array([1.0])})
        assert params["p"][0] == 2.0

    def test_adadelta_matches_scalar_reference(self):
        # plain-python reference implementation of the same recurrences
        rho, eps, lr = 0.95, 1e-6, 0.1
        g_seq = [1.0, -0.5, 2.0, 0.25, -1.0]
        p_ref, eg2, edx2 = 1.0, 0.0, 0.0
        for g in g_seq:
            eg2 = rho * eg2 + (1 - rho) * g * g
            delta = -((edx2 + eps) ** 0.5) / ((eg2 + eps) ** 0.5) * g
            p_ref += lr * delta
            edx2 = rho * edx2 + (1 - rho) * delta * delta

        params = {"p": np.array([1.0])}
        state = make_optimizer("adadelta", lr)
        for g in g_seq:
            adadelta_step(state, params, {"p": np.array([g])})
        assert params["p"][0] == pytest.approx(p_ref, abs=1e-15)

    def test_adadelta_first_step_magnitude(self):
        params = {"p": np.array([0.0])}
        state = make_optimizer("adadelta", 0.1)
        adadelta_step(state, params, {"p": np.array([1.0])})
        expected = -0.1 * (1e-6 ** 0.5) / ((0.05 + 1e-6) ** 0.5)
        assert params["p"][0] == pytest.approx(expected, rel=1e-12)

    def test_nan_gradient_aborts(self):
        params = {"p": np.zeros(2)}
        with pytest.raises(FloatingPointError):
            sgd_step(make_optimizer("sgd", 0.1), params, {"p": np.array([1.0, np.nan])})


class TestPlateauScheduler:
    def test_improving_never_reduces(self):
        state = make_optimizer("sgd", 1.0, mode="min", patience=2, factor=0.5)
        for metric in [1.0, 0.9, 0.8, 0.7]:
            plateau_scheduler_step(state, metric)
        assert state.lr == 1.0

    def test_flat_three_epochs_halves_once_at_third(self):
        state = make_optimizer("sgd", 1.0, mode="min", patience=2, factor=0.5)
        lrs = []
        for _ in range(3):
            plateau_scheduler_step(state, 0.5)
            lrs.append(state.lr)
        assert lrs == [1.0, 1.0, 0.5]

    def test_never_below_min_lr(self):
        state = make_optimizer("sgd", 1e-5, mode="min", patience=1, factor=0.1,
                               min_lr=1e-6)
        for _ in range(10):
            plateau_scheduler_step(state, 1.0)
        assert state.lr == 1e-6

    def test_max_mode(self):
        state = make_optimizer("adadelta", 1.0, mode="max", patience=1, factor=0.5)
        plateau_scheduler_step(state, 0.5)   # baseline
        plateau_scheduler_step(state, 0.6)   # improvement
        assert state.lr == 1.0
        plateau_scheduler_step(state, 0.6)   # flat -> reduce (patience 1)
        assert state.lr == 0.5

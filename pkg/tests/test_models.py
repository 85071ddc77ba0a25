import numpy as np
import pytest

from webnn.models import (
    CheckpointError,
    ConvLayer,
    ConvSpec,
    MnistModel,
    TitanicModel,
    build_mnist_model,
    build_titanic_model,
    conv_stack_output,
    init_conv,
    load_checkpoint,
    mnist_conv_specs,
    mnist_forward,
    mnist_web_config,
    predict_history,
    save_checkpoint,
    titanic_forward,
    titanic_web_config,
)
from webnn.tensor import (
    Tensor,
    cross_entropy_from_logits,
    finite_difference_gradcheck,
    softmax_last_axis,
)
from webnn.web import WebConfig, WebParams, init_params


class TestConvSpec:
    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            ConvSpec(0, 1, 3)
        with pytest.raises(ValueError):
            ConvSpec(1, 1, 3, stride=0)

    def test_output_hw(self):
        assert ConvSpec(1, 1, 3, 1).output_hw(28, 28) == (26, 26)
        assert ConvSpec(1, 1, 3, 2).output_hw(28, 28) == (13, 13)

    def test_collapsing_spatial_raises(self):
        with pytest.raises(ValueError):
            ConvSpec(1, 1, 5, 1).output_hw(4, 4)


class TestConvStack:
    def test_paper_preset_shapes(self):
        c, h, w = conv_stack_output(mnist_conv_specs("paper"), 28, 28)
        assert (c, h, w) == (1, 22, 22)
        assert c * h * w == 484

    def test_desk_preset_shapes(self):
        c, h, w = conv_stack_output(mnist_conv_specs("desk"), 28, 28)
        assert (c, h, w) == (1, 9, 9)
        assert c * h * w == 81

    def test_channel_chain_mismatch_raises(self):
        with pytest.raises(ValueError):
            conv_stack_output([ConvSpec(1, 4, 3), ConvSpec(8, 1, 3)], 28, 28)

    def test_init_conv_bound_and_zero_bias(self):
        spec = ConvSpec(3, 5, 3)
        layer = init_conv(spec, np.random.default_rng(0))
        bound = 1.0 / np.sqrt(3 * 9)
        assert np.abs(layer.kernel.data).max() <= bound
        assert np.array_equal(layer.bias.data, np.zeros(5, dtype=np.float32))


class TestTitanicModel:
    def test_shapes(self):
        model = build_titanic_model(seed=0)
        x = Tensor(np.random.default_rng(0).normal(size=(3, 8)).astype(np.float32))
        out = titanic_forward(model, x)
        assert out["probability"].shape == (3, 1)
        assert out["history"].shape == (3, 30, 1)

    def test_zero_parameters_give_half_probability(self):
        cfg = titanic_web_config()
        params = WebParams(
            Tensor(np.zeros((15, 15, 15), dtype=np.float32), requires_grad=True),
            Tensor(np.zeros((15, 15), dtype=np.float32), requires_grad=True),
        )
        model = TitanicModel(config=cfg, params=params)
        x = Tensor(np.random.default_rng(1).normal(size=(4, 8)).astype(np.float32))
        prob = titanic_forward(model, x)["probability"].data
        np.testing.assert_allclose(prob, 0.5)

    def test_probability_in_open_interval(self):
        model = build_titanic_model(seed=3)
        x = Tensor(np.random.default_rng(2).normal(size=(16, 8)).astype(np.float32) * 5)
        prob = titanic_forward(model, x)["probability"].data
        assert (prob > 0).all() and (prob < 1).all()

    def test_wrong_feature_width_raises(self):
        model = build_titanic_model(seed=0)
        with pytest.raises(ValueError):
            model.history(Tensor(np.zeros((2, 7), dtype=np.float32)))

    def test_requires_single_output_neuron(self):
        cfg = WebConfig(10, 4, 2, 3)
        with pytest.raises(ValueError):
            TitanicModel(config=cfg, params=init_params(cfg, 0))

    def test_threshold_matches_probability_half(self):
        # deciding at logit >= 0 is the same test as probability >= 0.5
        model = build_titanic_model(seed=5)
        x = Tensor(np.random.default_rng(3).normal(size=(32, 8)).astype(np.float32))
        out = titanic_forward(model, x)
        logits = out["history"].data[:, -1, 0]
        probs = out["probability"].data[:, 0]
        np.testing.assert_array_equal(logits >= 0.0, probs >= 0.5)
        trace = predict_history(out["history"])
        np.testing.assert_array_equal(trace[:, -1], (probs >= 0.5).astype(np.int64))


def small_digit_model(dtype=np.float32, seed=0, timesteps=2):
    """Desk-style stack shrunk to an 8x8 canvas: 8 -> 6 -> 4 -> 2 spatial."""
    specs = [ConvSpec(1, 2, 3, 1), ConvSpec(2, 2, 3, 1), ConvSpec(2, 1, 3, 1)]
    cfg = WebConfig(neurons=14, in_neurons=4, out_neurons=10, timesteps=timesteps)
    rng = np.random.default_rng(seed)
    convs = [init_conv(spec, rng, dtype=dtype) for spec in specs]
    params = init_params(cfg, seed=seed + 1, dtype=dtype)
    return MnistModel(convs=convs, config=cfg, params=params, image_hw=(8, 8))


class TestMnistModel:
    def test_desk_model_history_shape(self):
        model = build_mnist_model(seed=0, preset="desk")
        x = Tensor(np.random.default_rng(0).random((2, 1, 28, 28)).astype(np.float32))
        out = mnist_forward(model, x)
        assert out["logits_history"].shape == (2, 5, 10)

    def test_paper_preset_config_math(self):
        cfg = mnist_web_config("paper")
        assert (cfg.neurons, cfg.in_neurons, cfg.out_neurons, cfg.timesteps) == (500, 484, 10, 5)
        c, h, w = conv_stack_output(mnist_conv_specs("paper"), 28, 28)
        assert c * h * w == cfg.in_neurons

    def test_flatten_mismatch_rejected_at_construction(self):
        specs = [ConvSpec(1, 1, 3, 2)]
        rng = np.random.default_rng(0)
        convs = [init_conv(s, rng) for s in specs]
        cfg = WebConfig(neurons=200, in_neurons=100, out_neurons=10, timesteps=2)
        with pytest.raises(ValueError) as exc:
            MnistModel(convs=convs, config=cfg, params=init_params(cfg, 0), image_hw=(28, 28))
        assert "169" in str(exc.value)  # 13*13 from stride-2 conv

    def test_requires_ten_output_neurons(self):
        cfg = WebConfig(100, 81, 9, 5)
        with pytest.raises(ValueError):
            MnistModel(
                convs=[init_conv(s, np.random.default_rng(0)) for s in mnist_conv_specs("desk")],
                config=cfg,
                params=init_params(cfg, 0),
            )

    def test_wrong_image_shape_raises(self):
        model = small_digit_model()
        with pytest.raises(ValueError):
            model.history(Tensor(np.zeros((2, 1, 9, 9), dtype=np.float32)))
        with pytest.raises(ValueError):
            model.history(Tensor(np.zeros((2, 3, 8, 8), dtype=np.float32)))

    def test_unknown_preset_rejected(self):
        with pytest.raises(ValueError):
            mnist_conv_specs("huge")
        with pytest.raises(ValueError):
            mnist_web_config("huge")

    def test_argmax_of_softmax_equals_argmax_of_logits(self):
        model = small_digit_model(seed=2)
        x = Tensor(np.random.default_rng(1).random((4, 1, 8, 8)).astype(np.float32))
        hist = mnist_forward(model, x)["logits_history"]
        final = hist[:, model.config.timesteps - 1, :]
        soft = softmax_last_axis(final).data.argmax(axis=1)
        np.testing.assert_array_equal(soft, final.data.argmax(axis=1))

    def test_gradients_reach_conv_kernels(self):
        model = small_digit_model(seed=3)
        x = Tensor(np.random.default_rng(2).random((3, 1, 8, 8)).astype(np.float32))
        hist = model.history(x)
        final = hist[:, model.config.timesteps - 1, :]
        loss = cross_entropy_from_logits(final, np.array([1, 7, 3]))
        loss.backward()
        for layer in model.convs:
            assert layer.kernel.grad is not None
            assert np.abs(layer.kernel.grad).sum() > 0

    def test_end_to_end_gradcheck(self):
        # the check instance needs O(1) signals everywhere: zero biases
        # would park pre-activations exactly on the activation kink, and
        # a 0.01 leak squared along conv-to-web paths shrinks some true
        # gradients below what central differences can resolve in f64
        specs = [ConvSpec(1, 2, 3, 1), ConvSpec(2, 2, 3, 1), ConvSpec(2, 1, 3, 1)]
        cfg = WebConfig(neurons=14, in_neurons=4, out_neurons=10, timesteps=2, leak=0.3)
        rng = np.random.default_rng(8)
        convs = [init_conv(s, rng, dtype=np.float64) for s in specs]
        params = init_params(cfg, seed=9, dtype=np.float64)
        jitter = np.random.default_rng(108)
        params.bias.data = jitter.normal(size=params.bias.shape) * 0.5
        for layer in convs:
            layer.bias.data = jitter.normal(size=layer.bias.shape) * 0.5
            layer.kernel.data = jitter.normal(size=layer.kernel.shape) * 0.4
        model = MnistModel(convs=convs, config=cfg, params=params, image_hw=(8, 8))
        x = Tensor(np.random.default_rng(3).random((1, 1, 8, 8)) * 4.0)
        labels = np.array([6])

        def loss():
            hist = model.history(x)
            return cross_entropy_from_logits(hist[:, model.config.timesteps - 1, :], labels)

        assert finite_difference_gradcheck(loss, model.parameters()) < 1e-4


class TestPredictHistory:
    def test_dominant_class_gives_constant_trace(self):
        hist = np.zeros((2, 4, 10), dtype=np.float32)
        hist[:, :, 7] = 5.0
        np.testing.assert_array_equal(predict_history(hist), np.full((2, 4), 7))

    def test_trace_changes_are_representable(self):
        hist = np.zeros((1, 4, 10), dtype=np.float32)
        for t, cls in enumerate([0, 8, 4, 9]):
            hist[0, t, cls] = 1.0
        np.testing.assert_array_equal(predict_history(hist)[0], [0, 8, 4, 9])

    def test_final_entry_is_final_argmax(self):
        rng = np.random.default_rng(5)
        hist = rng.normal(size=(6, 5, 10)).astype(np.float32)
        trace = predict_history(hist)
        np.testing.assert_array_equal(trace[:, -1], hist[:, -1, :].argmax(axis=1))

    def test_single_output_thresholds_at_zero(self):
        hist = np.array([[[-0.5], [0.0], [2.0]]], dtype=np.float32)
        np.testing.assert_array_equal(predict_history(hist), [[0, 1, 1]])

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            predict_history(np.zeros((3, 4), dtype=np.float32))


class TestCheckpoint:
    def test_titanic_roundtrip(self, tmp_path):
        model = build_titanic_model(seed=11)
        stats = {"mean": [0.1] * 8, "std": [1.2] * 8, "age_median": 28.0, "fare_median": 14.5}
        path = tmp_path / "model.wnn"
        save_checkpoint(path, model, preprocess=stats)
        loaded, config = load_checkpoint(path)
        assert isinstance(loaded, TitanicModel)
        assert config["task"] == "titanic"
        assert config["preprocess"] == stats
        np.testing.assert_array_equal(loaded.params.weights.data, model.params.weights.data)
        np.testing.assert_array_equal(loaded.params.bias.data, model.params.bias.data)
        assert loaded.config == model.config

    def test_mnist_roundtrip_preserves_outputs(self, tmp_path):
        model = small_digit_model(seed=12)
        path = tmp_path / "model.wnn"
        save_checkpoint(path, model)
        loaded, config = load_checkpoint(path)
        assert isinstance(loaded, MnistModel)
        assert loaded.image_hw == (8, 8)
        x = Tensor(np.random.default_rng(4).random((2, 1, 8, 8)).astype(np.float32))
        a = model.history(x).data
        b = loaded.history(x).data
        np.testing.assert_array_equal(a, b)

    def test_save_is_byte_deterministic(self, tmp_path):
        model = build_titanic_model(seed=13)
        p1, p2 = tmp_path / "a.wnn", tmp_path / "b.wnn"
        save_checkpoint(p1, model)
        save_checkpoint(p2, model)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.wnn"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_unsupported_version_rejected(self, tmp_path):
        model = build_titanic_model(seed=0)
        path = tmp_path / "model.wnn"
        save_checkpoint(path, model)
        blob = bytearray(path.read_bytes())
        blob[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_payload_rejected(self, tmp_path):
        model = build_titanic_model(seed=0)
        path = tmp_path / "model.wnn"
        save_checkpoint(path, model)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 100])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.wnn")

    def test_loaded_parameters_are_trainable(self, tmp_path):
        model = build_titanic_model(seed=14)
        path = tmp_path / "model.wnn"
        save_checkpoint(path, model)
        loaded, _ = load_checkpoint(path)
        assert all(p.requires_grad for p in loaded.parameters())

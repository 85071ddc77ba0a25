"""Task models: the tabular survival classifier (web layer only) and the
digit classifier (conv stack feeding the web layer), plus the shared
binary checkpoint format."""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, conv2d, leaky_relu, reshape, sigmoid
from .web import WebConfig, WebParams, forward, init_params

CHECKPOINT_MAGIC = b"WNN1"
CHECKPOINT_VERSION = 1

TITANIC_FEATURES = 8


class CheckpointError(RuntimeError):
    """Checkpoint file is missing, malformed, or from an unknown layout."""


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel", "stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")

    def output_hw(self, h, w):
        oh = (h - self.kernel) // self.stride + 1
        ow = (w - self.kernel) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ValueError(
                f"conv {self.kernel}x{self.kernel}/stride {self.stride} collapses {h}x{w} input"
            )
        return oh, ow


@dataclass
class ConvLayer:
    spec: ConvSpec
    kernel: Tensor  # (C_out, C_in, K, K)
    bias: Tensor  # (C_out,)


def init_conv(spec, rng, dtype=np.float32):
    """Uniform kernel init in [-1/sqrt(C_in*K^2), +1/sqrt(C_in*K^2)], zero bias."""
    k = spec.kernel
    scale = 1.0 / np.sqrt(spec.in_channels * k * k)
    kernel = rng.uniform(-scale, scale, size=(spec.out_channels, spec.in_channels, k, k))
    return ConvLayer(
        spec=spec,
        kernel=Tensor(kernel.astype(dtype), requires_grad=True),
        bias=Tensor(np.zeros(spec.out_channels, dtype=dtype), requires_grad=True),
    )


def conv_stack_output(specs, h, w):
    """Channel count and spatial size after the whole stack; errors if any
    stage collapses below 1x1 or channel counts do not chain."""
    channels = specs[0].in_channels if specs else None
    for idx, spec in enumerate(specs):
        if spec.in_channels != channels:
            raise ValueError(
                f"conv {idx} expects {spec.in_channels} input channels, previous stage gives {channels}"
            )
        h, w = spec.output_hw(h, w)
        channels = spec.out_channels
    return channels, h, w


@dataclass
class TitanicModel:
    """Binary survival classifier: 8 standardized features injected into
    the web every timestep, final-step readout thresholded at 0.5."""

    config: WebConfig
    params: WebParams

    def __post_init__(self):
        if self.config.out_neurons != 1:
            raise ValueError(f"survival head needs 1 output neuron, got {self.config.out_neurons}")

    def parameters(self):
        return [self.params.weights, self.params.bias]

    def history(self, features, naive=False):
        n = features.shape[0]
        if features.ndim != 2 or features.shape[1] != self.config.in_neurons:
            raise ValueError(
                f"expected features of shape (N, {self.config.in_neurons}), got {features.shape}"
            )
        series = reshape(features, (n, 1, self.config.in_neurons))
        return forward(self.params, self.config, series, naive=naive)


def titanic_forward(model, features):
    """Full output history plus final-step survival probability."""
    history = model.history(features)
    t = model.config.timesteps
    probability = sigmoid(history[:, t - 1, :])
    return {"probability": probability, "history": history}


@dataclass
class MnistModel:
    """Digit classifier: three conv+leaky-ReLU stages, flattened into the
    web layer's input neurons, ten output neurons read per timestep."""

    convs: list
    config: WebConfig
    params: WebParams
    image_hw: tuple = (28, 28)

    def __post_init__(self):
        if self.config.out_neurons != 10:
            raise ValueError(f"digit head needs 10 output neurons, got {self.config.out_neurons}")
        c, h, w = conv_stack_output([layer.spec for layer in self.convs], *self.image_hw)
        flat = c * h * w
        if flat != self.config.in_neurons:
            raise ValueError(
                f"conv stack flattens {self.image_hw} to {flat} values "
                f"({c}x{h}x{w}) but the web expects {self.config.in_neurons} inputs"
            )

    def parameters(self):
        tensors = [layer.kernel for layer in self.convs]
        tensors += [layer.bias for layer in self.convs]
        return tensors + [self.params.weights, self.params.bias]

    def history(self, images, naive=False):
        expected_c = self.convs[0].spec.in_channels if self.convs else 1
        n = images.shape[0]
        want = (n, expected_c) + tuple(self.image_hw)
        if images.ndim != 4 or images.shape != want:
            raise ValueError(f"expected images of shape {want}, got {images.shape}")
        x = images
        for layer in self.convs:
            x = leaky_relu(conv2d(x, layer.kernel, layer.bias, layer.spec.stride), self.config.leak)
        flat = reshape(x, (n, self.config.in_neurons))
        series = reshape(flat, (n, 1, self.config.in_neurons))
        return forward(self.params, self.config, series, naive=naive)


def mnist_forward(model, images):
    return {"logits_history": model.history(images)}


def predict_history(history):
    """Per-timestep predictions (N, T): argmax for multi-class readouts,
    threshold at probability 0.5 (logit 0) for a single output neuron."""
    data = history.data if isinstance(history, Tensor) else np.asarray(history)
    if data.ndim != 3:
        raise ValueError(f"expected history of shape (N, T, O), got {data.shape}")
    if data.shape[2] == 1:
        return (data[:, :, 0] >= 0.0).astype(np.int64)
    return data.argmax(axis=2).astype(np.int64)


# --- presets ---------------------------------------------------------------

def titanic_web_config():
    return WebConfig(neurons=15, in_neurons=8, out_neurons=1, timesteps=30)


def mnist_conv_specs(preset):
    if preset == "paper":
        first_stride = 1
    elif preset == "desk":
        first_stride = 2
    else:
        raise ValueError(f"unknown preset {preset!r}, expected 'paper' or 'desk'")
    return [
        ConvSpec(1, 16, 3, first_stride),
        ConvSpec(16, 4, 3, 1),
        ConvSpec(4, 1, 3, 1),
    ]


def mnist_web_config(preset):
    if preset == "paper":
        return WebConfig(neurons=500, in_neurons=484, out_neurons=10, timesteps=5)
    if preset == "desk":
        return WebConfig(neurons=100, in_neurons=81, out_neurons=10, timesteps=5)
    raise ValueError(f"unknown preset {preset!r}, expected 'paper' or 'desk'")


def build_titanic_model(seed, config=None):
    config = config or titanic_web_config()
    return TitanicModel(config=config, params=init_params(config, seed))


def build_mnist_model(seed, preset="desk", conv_specs=None, web_config=None, image_hw=(28, 28)):
    """Assemble the digit model; conv kernels and web weights share one
    seeded generator so a seed pins every parameter."""
    specs = conv_specs if conv_specs is not None else mnist_conv_specs(preset)
    config = web_config if web_config is not None else mnist_web_config(preset)
    rng = np.random.default_rng(seed)
    convs = [init_conv(spec, rng) for spec in specs]
    params = init_params(config, seed=int(rng.integers(2**31)))
    return MnistModel(convs=convs, config=config, params=params, image_hw=tuple(image_hw))


# --- checkpoint format ------------------------------------------------------

def _web_config_dict(config):
    return {
        "neurons": config.neurons,
        "in_neurons": config.in_neurons,
        "out_neurons": config.out_neurons,
        "timesteps": config.timesteps,
        "leak": config.leak,
    }


def _named_tensors(model):
    """Payload order: conv kernels, conv biases, web weights, web bias."""
    named = []
    convs = model.convs if isinstance(model, MnistModel) else []
    for idx, layer in enumerate(convs):
        named.append((f"conv{idx}.kernel", layer.kernel))
    for idx, layer in enumerate(convs):
        named.append((f"conv{idx}.bias", layer.bias))
    named.append(("web.weights", model.params.weights))
    named.append(("web.bias", model.params.bias))
    return named


def save_checkpoint(path, model, preprocess=None):
    """Write magic, version, JSON header (config + tensor manifest), then
    raw little-endian float32 payloads in manifest order."""
    if isinstance(model, TitanicModel):
        task = "titanic"
        convs = []
        image_hw = None
    elif isinstance(model, MnistModel):
        task = "mnist"
        convs = [
            {
                "in_channels": l.spec.in_channels,
                "out_channels": l.spec.out_channels,
                "kernel": l.spec.kernel,
                "stride": l.spec.stride,
            }
            for l in model.convs
        ]
        image_hw = list(model.image_hw)
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")

    manifest = []
    payloads = []
    offset = 0
    for name, tensor in _named_tensors(model):
        raw = np.ascontiguousarray(tensor.data.astype("<f4"))
        manifest.append(
            {"name": name, "shape": list(raw.shape), "dtype": "f32", "offset": offset}
        )
        payloads.append(raw.tobytes())
        offset += raw.nbytes

    header = {
        "config": {
            "task": task,
            "web": _web_config_dict(model.config),
            "convs": convs,
            "image_hw": image_hw,
            "preprocess": preprocess,
        },
        "manifest": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for chunk in payloads:
            fh.write(chunk)


def load_checkpoint(path):
    """Read a checkpoint back into a model; returns (model, config dict).

    The config dict carries the task name and, for the tabular task, the
    preprocessing statistics saved alongside the parameters.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header_len = struct.unpack("<I", blob[8:12])[0]
    if len(blob) < 12 + header_len:
        raise CheckpointError(f"{path} truncated inside header")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
        config = header["config"]
        manifest = header["manifest"]
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"{path} has a malformed header: {exc}") from exc

    payload = blob[12 + header_len :]
    arrays = {}
    for entry in manifest:
        try:
            name, shape, dtype, offset = (
                entry["name"],
                tuple(entry["shape"]),
                entry["dtype"],
                entry["offset"],
            )
        except KeyError as exc:
            raise CheckpointError(f"manifest entry missing field: {exc}") from exc
        if dtype != "f32":
            raise CheckpointError(f"tensor {name} has unsupported dtype {dtype}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 4
        if offset < 0 or offset + nbytes > len(payload):
            raise CheckpointError(
                f"tensor {name} at offset {offset} overruns payload of {len(payload)} bytes"
            )
        data = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        arrays[name] = data.reshape(shape).astype(np.float32)

    try:
        web_cfg = WebConfig(**config["web"])
        task = config["task"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path} has an invalid config block: {exc}") from exc

    def take(name, expected_shape):
        if name not in arrays:
            raise CheckpointError(f"checkpoint is missing tensor {name}")
        if arrays[name].shape != expected_shape:
            raise CheckpointError(
                f"tensor {name} has shape {arrays[name].shape}, expected {expected_shape}"
            )
        return Tensor(arrays[name].copy(), requires_grad=True)

    q = web_cfg.neurons
    params = WebParams(take("web.weights", (q, q, q)), take("web.bias", (q, q)))

    if task == "titanic":
        model = TitanicModel(config=web_cfg, params=params)
    elif task == "mnist":
        convs = []
        for idx, spec_dict in enumerate(config.get("convs") or []):
            try:
                spec = ConvSpec(**spec_dict)
            except (TypeError, ValueError) as exc:
                raise CheckpointError(f"conv {idx} spec invalid: {exc}") from exc
            k = spec.kernel
            kernel = take(f"conv{idx}.kernel", (spec.out_channels, spec.in_channels, k, k))
            bias = take(f"conv{idx}.bias", (spec.out_channels,))
            convs.append(ConvLayer(spec=spec, kernel=kernel, bias=bias))
        image_hw = tuple(config.get("image_hw") or (28, 28))
        try:
            model = MnistModel(convs=convs, config=web_cfg, params=params, image_hw=image_hw)
        except ValueError as exc:
            raise CheckpointError(f"{path} config is inconsistent: {exc}") from exc
    else:
        raise CheckpointError(f"unknown task {task!r} in checkpoint")

    return model, config

"""The web layer: a complete-digraph recurrent layer over Q neurons.

The network state is a batch of Q x Q matrices where entry (i, j) holds
the value neuron i sent to neuron j at the last completed timestep, so
row i collects neuron i's outputs and column j collects neuron j's
inputs. Each timestep every neuron applies its own affine map to its
incoming column and writes the activated result to its row. External
features are added down the incoming columns of the designated input
neurons, and readout averages the incoming columns of the designated
output neurons.

Input neurons occupy indices [0, I) and output neurons [Q-O, Q); the
two ranges stay disjoint because configs require Q >= I + O.
"""

import time
from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tensor,
    batched_matmul,
    leaky_relu,
    mean_over_axis,
    no_grad,
    pad_last_axis,
    permute,
    reshape,
    stack,
    transpose_last_two,
)


class EquivalenceError(RuntimeError):
    """Naive and vectorized step implementations disagreed beyond tolerance."""


@dataclass(frozen=True)
class WebConfig:
    """Layer hyperparameters: neuron count, input/output neuron counts,
    number of update sweeps (the depth analogue), and leaky-ReLU slope."""

    neurons: int
    in_neurons: int
    out_neurons: int
    timesteps: int
    leak: float = 0.01

    def __post_init__(self):
        for name in ("neurons", "in_neurons", "out_neurons", "timesteps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.neurons < self.in_neurons + self.out_neurons:
            raise ValueError(
                f"need neurons >= in_neurons + out_neurons, got "
                f"{self.neurons} < {self.in_neurons} + {self.out_neurons}"
            )
        if self.leak < 0:
            raise ValueError(f"leak must be >= 0, got {self.leak}")


@dataclass
class WebParams:
    """Per-neuron affine maps: weights[i] takes neuron i's incoming
    Q-vector to its outgoing Q-vector, bias[i] is neuron i's offset."""

    weights: Tensor  # (Q, Q, Q)
    bias: Tensor  # (Q, Q)

    @property
    def neurons(self):
        return self.weights.shape[0]

    def count(self):
        return self.weights.size + self.bias.size


def init_params(config, seed, dtype=np.float32):
    """Seeded uniform init in [-1/sqrt(Q), 1/sqrt(Q)]; bias starts at zero."""
    q = config.neurons
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(q)
    weights = rng.uniform(-scale, scale, size=(q, q, q)).astype(dtype)
    bias = np.zeros((q, q), dtype=dtype)
    return WebParams(
        weights=Tensor(weights, requires_grad=True),
        bias=Tensor(bias, requires_grad=True),
    )


def inject_input(state, features, config):
    """Add each feature scalar down its input neuron's incoming column.

    state is (N, Q, Q), features is (N, I); feature k of sample n is added
    to every entry of column k. Columns of non-input neurons are untouched.
    """
    n, q, _ = state.shape
    if features.ndim != 2 or features.shape != (n, config.in_neurons):
        raise ValueError(
            f"expected features of shape ({n}, {config.in_neurons}), got {features.shape}"
        )
    padded = pad_last_axis(features, q)  # (N, Q), zeros past the input columns
    return state + reshape(padded, (n, 1, q))


def step_naive(state, params, leak=0.01):
    """One synchronous sweep, one neuron at a time.

    Reads every neuron's incoming column from the old state, applies that
    neuron's affine map plus activation, and writes its row of the new
    state. The per-node loop is the reference semantics the vectorized
    step must reproduce.
    """
    n, q, _ = _check_state(state, params)
    rows = []
    for i in range(q):
        incoming = state[:, :, i]  # (N, Q)
        z = batched_matmul(incoming, transpose_last_two(params.weights[i]))
        rows.append(z + params.bias[i])
    return leaky_relu(stack(rows, axis=1), leak)


def step_vectorized(state, params, leak=0.01):
    """One synchronous sweep as a single batched matrix product.

    Gathering each neuron's incoming column along the batch axis turns
    the Q per-neuron maps into one Q-stacked matmul; both operands carry
    the node axis, so gradients reduce inside the product instead of
    through a broadcast. The weight block multiplies from the left so it
    enters the product in its stored layout (no per-step transposed
    copy). Matches step_naive up to float summation order.
    """
    _check_state(state, params)
    # cols[i, k, n] = value neuron k sent to neuron i for sample n
    cols = permute(state, (2, 1, 0))  # (Q, Q, N)
    z = batched_matmul(params.weights, cols)  # (Q_node, Q_row, N)
    pre = permute(z, (2, 0, 1)) + params.bias  # rows laid out per node, bias per node
    return leaky_relu(pre, leak)


def _check_state(state, params):
    q = params.weights.shape[0]
    if state.ndim != 3 or state.shape[1] != q or state.shape[2] != q:
        raise ValueError(f"expected state of shape (N, {q}, {q}), got {state.shape}")
    return state.shape[0], q, q


def readout(state, config):
    """Mean of each output neuron's incoming column, shape (N, O)."""
    q, o = config.neurons, config.out_neurons
    return mean_over_axis(state[:, :, q - o :], axis=1)


def forward(params, config, inputs, naive=False):
    """Run the layer for `config.timesteps` sweeps and record every readout.

    inputs is (N, T_in, I) with T_in either equal to timesteps or 1 (a
    constant input replayed every sweep). The state starts at zero. The
    result is the (N, T, O) output history; gradients flow through every
    unrolled step.
    """
    if inputs.ndim != 3:
        raise ValueError(f"expected inputs of shape (N, T_in, I), got {inputs.shape}")
    n, t_in, _ = inputs.shape
    t = config.timesteps
    if t_in not in (1, t):
        raise ValueError(f"input timesteps must be 1 or {t}, got {t_in}")
    step = step_naive if naive else step_vectorized
    q = config.neurons
    state = Tensor(np.zeros((n, q, q), dtype=params.weights.dtype))
    outputs = []
    for ts in range(t):
        x_t = inputs[:, 0, :] if t_in == 1 else inputs[:, ts, :]
        state = inject_input(state, x_t, config)
        state = step(state, params, config.leak)
        outputs.append(readout(state, config))
    return stack(outputs, axis=1)  # (N, T, O)


def bench_step(config, batch, iterations, seed=0):
    """Time naive vs vectorized sweeps on identical seeded params/state.

    Checks numerical equivalence first, then reports median wall-clock
    milliseconds per sweep after two warmup rounds, plus their ratio
    (ratio > 1 means vectorized is faster).
    """
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    params = init_params(config, seed)
    rng = np.random.default_rng(seed + 1)
    state = Tensor(rng.uniform(-1.0, 1.0, size=(batch, config.neurons, config.neurons)).astype(np.float32))

    with no_grad():
        tol = 1e-5 if state.dtype == np.float32 else 1e-10
        diff = float(
            np.abs(
                step_naive(state, params, config.leak).data
                - step_vectorized(state, params, config.leak).data
            ).max()
        )
        if diff > tol:
            raise EquivalenceError(f"step implementations differ by {diff:.3e} (tolerance {tol:.0e})")

        def run_sweeps(step):
            s = state
            for _ in range(config.timesteps):
                s = step(s, params, config.leak)
            return s

        def time_ms(step):
            for _ in range(2):
                run_sweeps(step)
            samples = []
            for _ in range(iterations):
                start = time.perf_counter()
                run_sweeps(step)
                samples.append((time.perf_counter() - start) * 1e3 / config.timesteps)
            return float(np.median(samples))

        naive_ms = time_ms(step_naive)
        vectorized_ms = time_ms(step_vectorized)

    return {
        "naive_ms": naive_ms,
        "vectorized_ms": vectorized_ms,
        "ratio": naive_ms / vectorized_ms,
        "max_abs_diff": diff,
    }

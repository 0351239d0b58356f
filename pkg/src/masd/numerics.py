"""Dense networks with hand-written backprop, Adam, and log-likelihood helpers.

Everything runs in float64. Randomness comes from ``numpy.random.Generator``
backed by the PCG64 bit generator, which numpy guarantees to produce the same
stream for the same seed on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np

HIDDEN_ACTIVATIONS = ("tanh", "relu")
OUTPUT_ACTIVATIONS = ("identity", "tanh", "softmax-logits")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: Tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output layer")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be >= 1, got {sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]


@lru_cache(maxsize=None)
def _param_layout(spec: MlpSpec) -> Tuple[Tuple[Tuple[int, ...], int, int], ...]:
    """(shape, start, stop) of every weight and bias inside the flat buffer."""
    out, lo = [], 0
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        out.append(((fan_in, fan_out), lo, lo + fan_in * fan_out))
        lo += fan_in * fan_out
        out.append(((fan_out,), lo, lo + fan_out))
        lo += fan_out
    return tuple(out)


class MlpParams:
    """Weights and biases as views into one flat float64 buffer.

    Weights are stored (fan_in, fan_out) so a batch forward is ``x @ W + b``.
    """

    def __init__(self, spec: MlpSpec, flat: np.ndarray | None = None):
        layout = _param_layout(spec)
        size = layout[-1][2]
        if flat is None:
            flat = np.zeros(size)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (size,):
            raise ValueError(f"flat parameter vector has shape {flat.shape}, expected ({size},)")
        self.spec = spec
        self.flat = flat
        views = [flat[lo:hi].reshape(shape) for shape, lo, hi in layout]
        self.weights: List[np.ndarray] = views[0::2]
        self.biases: List[np.ndarray] = views[1::2]

    def arrays(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def named_arrays(self) -> List[Tuple[str, np.ndarray]]:
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"W{i}", w))
            out.append((f"b{i}", b))
        return out

    @classmethod
    def from_arrays(cls, spec: MlpSpec, arrays: Sequence[np.ndarray]) -> "MlpParams":
        layout = _param_layout(spec)
        if len(arrays) != len(layout):
            raise ValueError(f"expected {len(layout)} arrays, got {len(arrays)}")
        for a, (shape, _, _) in zip(arrays, layout):
            if np.shape(a) != shape:
                raise ValueError(f"array shape {np.shape(a)} != expected {shape}")
        return cls(spec, np.concatenate([np.asarray(a, dtype=np.float64).reshape(-1) for a in arrays]))

    def copy(self) -> "MlpParams":
        return MlpParams(self.spec, self.flat.copy())

    def zeros_like(self) -> "MlpParams":
        return MlpParams(self.spec)

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, MlpParams) and self.spec == other.spec
                and np.array_equal(self.flat, other.flat))

    def __repr__(self) -> str:
        return f"MlpParams({self.spec.layer_sizes}, {self.flat.size} values)"


@dataclass
class MlpCache:
    params: MlpParams
    inputs: List[np.ndarray]   # input to each layer
    pre: List[np.ndarray]      # pre-activation of each layer
    output: np.ndarray


def mlp_init(spec: MlpSpec, rng: np.random.Generator) -> MlpParams:
    params = MlpParams(spec)
    for w in params.weights:
        bound = np.sqrt(1.0 / w.shape[0])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return params


def _hidden(name: str, x: np.ndarray) -> np.ndarray:
    return np.tanh(x) if name == "tanh" else np.maximum(x, 0.0)


def mlp_forward(params: MlpParams, x: np.ndarray) -> Tuple[np.ndarray, MlpCache]:
    """Forward a batch ``x`` of shape (batch, n_in). A 1-D input is treated as one row.

    ``softmax-logits`` outputs raw logits; the softmax lives in the loss.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    spec = params.spec
    if x.shape[1] != spec.n_in:
        raise ValueError(f"input has {x.shape[1]} columns, network expects {spec.n_in}")
    inputs, pre = [], []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        a = h @ w + b
        pre.append(a)
        if i < last:
            h = _hidden(spec.hidden_activation, a)
        elif spec.output_activation == "tanh":
            h = np.tanh(a)
        else:
            h = a
    return h, MlpCache(params, inputs, pre, h)


def mlp_backward(cache: MlpCache, upstream: np.ndarray) -> Tuple[MlpParams, np.ndarray]:
    """Reverse-mode pass. Returns (parameter gradients, gradient w.r.t. the input)."""
    params = cache.params
    spec = params.spec
    g = np.asarray(upstream, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != cache.output.shape:
        raise ValueError(f"upstream gradient shape {g.shape} != output shape {cache.output.shape}")
    n = len(params.weights)
    grads = MlpParams(spec)
    if spec.output_activation == "tanh":
        g = g * (1.0 - cache.output ** 2)
    for i in range(n - 1, -1, -1):
        np.matmul(cache.inputs[i].T, g, out=grads.weights[i])
        np.sum(g, axis=0, out=grads.biases[i])
        g = g @ params.weights[i].T
        if i > 0:
            a = cache.pre[i - 1]
            if spec.hidden_activation == "tanh":
                g = g * (1.0 - cache.inputs[i] ** 2)
            else:
                g = g * (a > 0.0)
    return grads, g


@dataclass
class AdamState:
    """Adam moments, flat and aligned with :attr:`MlpParams.flat`."""

    m: np.ndarray
    v: np.ndarray
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params: MlpParams, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros_like(params.flat), np.zeros_like(params.flat), lr=lr, **kw)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.lr, self.beta1, self.beta2,
                         self.epsilon, self.step)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState) -> Tuple[MlpParams, AdamState]:
    if params.flat.shape != grads.flat.shape or params.flat.shape != state.m.shape:
        raise ValueError("parameter, gradient and optimizer shapes disagree")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    g = grads.flat
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    step = state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, state.lr, b1, b2, state.epsilon, t)
    return MlpParams(params.spec, params.flat - step), new_state


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    return MlpParams(target.spec, (1.0 - tau) * target.flat + tau * online.flat)


def log_softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise log-softmax; entries where ``mask`` is False get -inf."""
    logits = np.asarray(logits, dtype=np.float64)
    if mask is not None:
        logits = np.where(mask, logits, -np.inf)
    top = np.max(logits, axis=-1, keepdims=True)
    shifted = logits - top
    with np.errstate(divide="ignore"):
        return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def categorical_logprob(logits: np.ndarray, label: int, mask: np.ndarray | None = None) -> float:
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"label {label} outside [0, {logits.shape[0]})")
    return float(log_softmax(logits, mask)[label])


def continuous_logprob(prediction: np.ndarray, z: np.ndarray, loss_kind: str) -> float:
    """Unnormalised Laplace (L1) or Gaussian (L2) log-density.

    Normalising constants are dropped, so these equal the negated L1/L2 losses.
    """
    prediction = np.asarray(prediction, dtype=np.float64).reshape(-1)
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if prediction.shape != z.shape:
        raise ValueError(f"prediction dim {prediction.shape[0]} != skill dim {z.shape[0]}")
    diff = prediction - z
    if loss_kind == "L1":
        return float(-np.sum(np.abs(diff)))
    if loss_kind == "L2":
        return float(-np.sum(diff * diff))
    raise ValueError(f"unknown continuous loss {loss_kind!r}")


@dataclass
class Network:
    """An MLP bundled with its Adam state, for the common train-in-place case."""

    params: MlpParams
    opt: AdamState = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.opt is None:
            self.opt = AdamState.for_params(self.params)

    def apply(self, grads: MlpParams) -> None:
        self.params, self.opt = adam_step(self.params, grads, self.opt)

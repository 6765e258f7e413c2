"""Small MLP autodiff engine in float64 numpy.

Supports a plain forward pass, forward-mode directional derivatives (JVP),
reverse-mode gradients (VJP) and a functional Adam optimizer. All functions
accept either a single input vector of shape ``(in,)`` or a batch of shape
``(B, in)``; outputs follow the same convention.

Time and conditioning inputs are fed as raw extra coordinates. Anyone who
wants an embedding (Fourier features etc.) should apply it before calling
into this module.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import erf

ACTIVATIONS = ("gelu", "mish", "relu", "elu", "gelu_tanh")

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
_GELU_K = np.sqrt(2.0 / np.pi)
_GELU_C = 0.044715


class DimensionError(ValueError):
    """Raised when an array does not match the network's declared shape."""


class NonFiniteError(FloatingPointError):
    """Raised when a loss, gradient or intermediate value is NaN or inf."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


# ---------------------------------------------------------------------------
# activations: (value, derivative) pairs


def _gelu(z):
    return 0.5 * z * (1.0 + erf(z / _SQRT2))


def _gelu_grad(z):
    return 0.5 * (1.0 + erf(z / _SQRT2)) + z * _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def _mish(z):
    return z * np.tanh(np.logaddexp(0.0, z))


def _mish_grad(z):
    tsp = np.tanh(np.logaddexp(0.0, z))
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    return tsp + z * (1.0 - tsp * tsp) * sig


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z):
    return (z > 0.0).astype(z.dtype)


def _elu(z):
    return np.where(z > 0.0, z, np.expm1(np.minimum(z, 0.0)))


def _elu_grad(z):
    return np.where(z > 0.0, 1.0, np.exp(np.minimum(z, 0.0)))


# tanh approximation of gelu; roughly 10x cheaper than erf in numpy
def _gelu_tanh(z):
    return 0.5 * z * (1.0 + np.tanh(_GELU_K * (z + _GELU_C * z * z * z)))


def _gelu_tanh_grad(z):
    th = np.tanh(_GELU_K * (z + _GELU_C * z * z * z))
    return 0.5 * (1.0 + th) + 0.5 * z * (1.0 - th * th) * _GELU_K * (1.0 + 3.0 * _GELU_C * z * z)


_ACT: dict[str, tuple[Callable, Callable]] = {
    "gelu": (_gelu, _gelu_grad),
    "mish": (_mish, _mish_grad),
    "relu": (_relu, _relu_grad),
    "elu": (_elu, _elu_grad),
    "gelu_tanh": (_gelu_tanh, _gelu_tanh_grad),
}


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_widths: tuple[int, ...]
    output_dim: int
    activation: str = "gelu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if not self.hidden_widths:
            raise ValueError("hidden_widths must be non-empty")
        if min(self.input_dim, self.output_dim, *self.hidden_widths) < 1:
            raise ValueError(f"all layer sizes must be >= 1, got {self}")
        if self.activation not in _ACT:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_widths, self.output_dim]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "output_dim": self.output_dim,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(int(d["input_dim"]), tuple(d["hidden_widths"]), int(d["output_dim"]), d["activation"])


@dataclass(frozen=True)
class ParamSet:
    """Weights ``(out, in)`` and biases ``(out,)`` for every layer of an MLP.

    Treated as a value: nothing in this package mutates the arrays in place.
    """

    spec: MlpSpec
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        sizes = self.spec.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise DimensionError("layer count does not match spec")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise DimensionError(
                    f"layer {i}: got W{w.shape}, b{b.shape}, expected "
                    f"W{(sizes[i + 1], sizes[i])}, b{(sizes[i + 1],)}"
                )

    @property
    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ParamSet":
        return ParamSet(self.spec, tuple(fn(w) for w in self.weights), tuple(fn(b) for b in self.biases))

    def zip_map(self, other: "ParamSet", fn) -> "ParamSet":
        if other.spec.layer_sizes != self.spec.layer_sizes:
            raise DimensionError("parameter sets have different shapes")
        return ParamSet(
            self.spec,
            tuple(fn(a, b) for a, b in zip(self.weights, other.weights)),
            tuple(fn(a, b) for a, b in zip(self.biases, other.biases)),
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    @classmethod
    def from_flat(cls, spec: MlpSpec, flat: np.ndarray) -> "ParamSet":
        flat = np.asarray(flat, dtype=np.float64)
        sizes = spec.layer_sizes
        shapes = [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]
        shapes += [(sizes[i + 1],) for i in range(len(sizes) - 1)]
        total = sum(int(np.prod(s)) for s in shapes)
        if flat.shape != (total,):
            raise DimensionError(f"expected {total} parameters, got {flat.shape}")
        out, pos = [], 0
        for s in shapes:
            n = int(np.prod(s))
            out.append(flat[pos : pos + n].reshape(s).copy())
            pos += n
        n_layers = len(sizes) - 1
        return cls(spec, tuple(out[:n_layers]), tuple(out[n_layers:]))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays)

    @classmethod
    def zeros(cls, spec: MlpSpec) -> "ParamSet":
        return cls.from_flat(spec, np.zeros(_param_count(spec)))


# Gradients share the exact layout of parameters.
ParamGradient = ParamSet


@dataclass(frozen=True)
class DualVector:
    """A primal value paired with a tangent of the same shape."""

    value: np.ndarray
    tangent: np.ndarray

    def __post_init__(self):
        if np.shape(self.value) != np.shape(self.tangent):
            raise DimensionError(f"value {np.shape(self.value)} and tangent {np.shape(self.tangent)} differ")


def _param_count(spec: MlpSpec) -> int:
    s = spec.layer_sizes
    return sum(s[i + 1] * s[i] + s[i + 1] for i in range(len(s) - 1))


# ---------------------------------------------------------------------------
# core ops


def mlp_init(spec: MlpSpec, seed: int) -> ParamSet:
    """Fan-in uniform init, ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = spec.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ParamSet(spec, tuple(weights), tuple(biases))


def _check_input(params: ParamSet, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != params.spec.input_dim:
        raise DimensionError(f"input shape {x.shape} incompatible with input_dim={params.spec.input_dim}")
    return x2, single


def mlp_forward(params: ParamSet, x) -> np.ndarray:
    h, single = _check_input(params, x)
    act = _ACT[params.spec.activation][0]
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < n - 1:
            h = act(h)
    return h[0] if single else h


def mlp_jvp(params: ParamSet, x: DualVector) -> DualVector:
    """Push a tangent through the network: returns ``(f(x), J(x) @ tangent)``."""
    h, single = _check_input(params, x.value)
    th = np.asarray(x.tangent, dtype=np.float64).reshape(h.shape)
    act, dact = _ACT[params.spec.activation]
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        tz = th @ w.T
        if i < n - 1:
            h, th = act(z), dact(z) * tz
        else:
            h, th = z, tz
    if single:
        return DualVector(h[0], th[0])
    return DualVector(h, th)


@dataclass
class _Tape:
    inputs: list = field(default_factory=list)  # input to each layer
    pre: list = field(default_factory=list)  # pre-activations of hidden layers
    single: bool = False


def forward_with_tape(params: ParamSet, x) -> tuple[np.ndarray, _Tape]:
    h, single = _check_input(params, x)
    act = _ACT[params.spec.activation][0]
    tape = _Tape(single=single)
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        tape.inputs.append(h)
        z = h @ w.T + b
        if i < n - 1:
            tape.pre.append(z)
            h = act(z)
        else:
            h = z
    return (h[0] if single else h), tape


def backward_from_tape(params: ParamSet, tape: _Tape, cotangent) -> tuple[ParamGradient, np.ndarray]:
    dact = _ACT[params.spec.activation][1]
    g = np.asarray(cotangent, dtype=np.float64)
    g = g[None, :] if tape.single else g
    if g.shape != (tape.inputs[0].shape[0], params.spec.output_dim):
        raise DimensionError(f"cotangent shape {np.shape(cotangent)} does not match output")
    n = len(params.weights)
    gw: list = [None] * n
    gb: list = [None] * n
    for i in range(n - 1, -1, -1):
        gw[i] = g.T @ tape.inputs[i]
        gb[i] = g.sum(axis=0)
        g = g @ params.weights[i]
        if i > 0:
            g = g * dact(tape.pre[i - 1])
    grads = ParamSet(params.spec, tuple(gw), tuple(gb))
    return grads, (g[0] if tape.single else g)


def mlp_vjp(params: ParamSet, x, output_cotangent) -> tuple[ParamGradient, np.ndarray]:
    """Gradient of ``sum <f(x), cotangent>`` w.r.t. parameters, and ``J^T cotangent``.

    For batched inputs the parameter gradient is summed over the batch.
    """
    _, tape = forward_with_tape(params, x)
    return backward_from_tape(params, tape, output_cotangent)


# ---------------------------------------------------------------------------
# Adam


@dataclass(frozen=True)
class AdamState:
    m: ParamSet
    v: ParamSet
    step: int = 0
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(params: ParamSet, learning_rate: float = 3e-4, beta1=0.9, beta2=0.999, epsilon=1e-8) -> AdamState:
    zeros = params.map(np.zeros_like)
    return AdamState(zeros, zeros, 0, learning_rate, beta1, beta2, epsilon)


def adam_step(state: AdamState, params: ParamSet, grads: ParamGradient) -> tuple[AdamState, ParamSet]:
    if not grads.all_finite():
        raise NonFiniteError("non-finite gradient passed to adam_step")
    b1, b2 = state.beta1, state.beta2
    step = state.step + 1
    m = state.m.zip_map(grads, lambda m_, g: b1 * m_ + (1.0 - b1) * g)
    v = state.v.zip_map(grads, lambda v_, g: b2 * v_ + (1.0 - b2) * g * g)
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    lr, eps = state.learning_rate, state.epsilon
    upd = m.zip_map(v, lambda m_, v_: (m_ / c1) / (np.sqrt(v_ / c2) + eps))
    new_params = params.zip_map(upd, lambda p, u: p - lr * u)
    return AdamState(m, v, step, lr, b1, b2, eps), new_params


class Adam:
    """Thin mutable holder around :class:`AdamState` for training loops."""

    def __init__(self, params: ParamSet, lr: float = 3e-4, betas=(0.9, 0.999), eps=1e-8):
        self.state = adam_init(params, lr, betas[0], betas[1], eps)

    def step(self, params: ParamSet, grads: ParamGradient) -> ParamSet:
        self.state, new_params = adam_step(self.state, params, grads)
        return new_params


# ---------------------------------------------------------------------------
# serialization: <u64 header length><JSON header><little-endian float64 blob>


def params_to_bytes(params: ParamSet, meta: dict | None = None) -> bytes:
    header = {"spec": params.spec.to_dict(), "count": params.size, "meta": meta or {}}
    hbytes = json.dumps(header, sort_keys=True).encode()
    blob = params.flat().astype("<f8").tobytes()
    return struct.pack("<Q", len(hbytes)) + hbytes + blob


def params_from_bytes(data: bytes) -> tuple[ParamSet, dict]:
    (hlen,) = struct.unpack("<Q", data[:8])
    header = json.loads(data[8 : 8 + hlen].decode())
    spec = MlpSpec.from_dict(header["spec"])
    flat = np.frombuffer(data[8 + hlen :], dtype="<f8").astype(np.float64)
    if flat.size != header["count"]:
        raise DimensionError(f"blob holds {flat.size} values, header says {header['count']}")
    return ParamSet.from_flat(spec, flat), header.get("meta", {})


def save_params(path, params: ParamSet, meta: dict | None = None) -> None:
    with open(path, "wb") as f:
        f.write(params_to_bytes(params, meta))


def load_params(path) -> tuple[ParamSet, dict]:
    with open(path, "rb") as f:
        return params_from_bytes(f.read())


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


__all__ = [
    "ACTIVATIONS",
    "Adam",
    "AdamState",
    "DimensionError",
    "DualVector",
    "MlpSpec",
    "NonFiniteError",
    "ParamGradient",
    "ParamSet",
    "adam_init",
    "adam_step",
    "load_params",
    "mlp_forward",
    "mlp_init",
    "mlp_jvp",
    "mlp_vjp",
    "params_from_bytes",
    "params_to_bytes",
    "save_params",
]

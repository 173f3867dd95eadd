"""MLP embedding network with hand-written backprop, Adam, and checkpoints."""

from __future__ import annotations

import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NumericError, UsageError
from .linalg import Rng

CHECKPOINT_MAGIC = b"ATEMLP01"

# activation name -> (f, f') where f' takes the pre-activation
ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(np.float64)),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    "linear": (lambda z: z, lambda z: np.ones_like(z)),
}


@dataclass
class EmbedderParams:
    """Weights ``W[l]`` of shape (out, in) and biases ``b[l]`` of shape (out,).

    Hidden layers apply ``activation``; the output layer is linear.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise UsageError("need at least one layer and one bias per layer")
        if self.activation not in ACTIVATIONS:
            raise UsageError(f"unknown activation {self.activation!r}")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        prev = None
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise UsageError(f"bad layer shapes {w.shape}, {b.shape}")
            if prev is not None and w.shape[1] != prev:
                raise UsageError("consecutive layer shapes do not conform")
            prev = w.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.in_dim] + [w.shape[0] for w in self.weights]

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "EmbedderParams":
        return EmbedderParams([w.copy() for w in self.weights],
                              [b.copy() for b in self.biases], self.activation)

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays, interleaved W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def equal(self, other: "EmbedderParams") -> bool:
        return (self.activation == other.activation
                and len(self.weights) == len(other.weights)
                and all(np.array_equal(x, y) for x, y in zip(self.arrays(), other.arrays())))


def init_params(layer_sizes: list[int], rng: Rng, activation: str = "relu") -> EmbedderParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weights and biases."""
    if len(layer_sizes) < 2 or any(int(s) <= 0 for s in layer_sizes):
        raise UsageError(f"invalid layer sizes {layer_sizes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append((rng.uniform(fan_out * fan_in) * 2.0 - 1.0).reshape(fan_out, fan_in) * bound)
        biases.append((rng.uniform(fan_out) * 2.0 - 1.0) * bound)
    return EmbedderParams(weights, biases, activation)


@dataclass
class Tape:
    """Per-layer inputs and pre-activations recorded by ``forward``."""

    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    shapes: list[tuple]
    batched: bool


@dataclass
class GradientBuffer:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: EmbedderParams) -> "GradientBuffer":
        return cls([np.zeros_like(w) for w in params.weights],
                   [np.zeros_like(b) for b in params.biases])

    def zero(self) -> None:
        for a in self.arrays():
            a.fill(0.0)

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def forward(params: EmbedderParams, x) -> tuple[np.ndarray, Tape]:
    """Embed a single vector (shape (D,)) or a batch (shape (B, D))."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    h = x if batched else x[None, :]
    if h.ndim != 2 or h.shape[1] != params.in_dim:
        raise UsageError(f"input shape {x.shape} does not match input dim {params.in_dim}")
    act = ACTIVATIONS[params.activation][0]
    inputs, pre = [], []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w.T + b
        pre.append(z)
        h = z if i == last else act(z)
    tape = Tape(inputs, pre, [w.shape for w in params.weights], batched)
    return (h if batched else h[0]), tape


def embed(params: EmbedderParams, x) -> np.ndarray:
    return forward(params, x)[0]


def backward(params: EmbedderParams, tape: Tape, grad_out, buf: GradientBuffer) -> np.ndarray:
    """Accumulate dL/dtheta into ``buf`` and return dL/dx."""
    if tape.shapes != [w.shape for w in params.weights]:
        raise UsageError("tape was recorded with differently shaped parameters")
    g = np.asarray(grad_out, dtype=np.float64)
    g = g if tape.batched else g[None, :]
    if g.shape != tape.pre[-1].shape:
        raise UsageError(f"grad_out shape {g.shape} does not match output {tape.pre[-1].shape}")
    dact = ACTIVATIONS[params.activation][1]
    last = len(params.weights) - 1
    for i in range(last, -1, -1):
        if i != last:
            g = g * dact(tape.pre[i])
        buf.weights[i] += g.T @ tape.inputs[i]
        buf.biases[i] += g.sum(axis=0)
        g = g @ params.weights[i]
    return g if tape.batched else g[0]


@dataclass(frozen=True)
class OptimizerSchedule:
    alpha0: float = 3e-4
    t0: int = 35
    t1: int = 65
    beta1_hi: float = 0.9
    beta1_lo: float = 0.5
    beta2: float = 0.999
    eps_adam: float = 1e-8

    def __post_init__(self):
        if not 0 < self.t0 < self.t1:
            raise UsageError("schedule needs 0 < t0 < t1")
        if not 0 < self.beta1_lo <= self.beta1_hi < 1:
            raise UsageError("schedule needs 0 < beta1_lo <= beta1_hi < 1")
        if self.alpha0 <= 0:
            raise UsageError("alpha0 must be positive")


def learning_rate(s: OptimizerSchedule, t: float) -> float:
    """Constant alpha0 up to t0, exponential decay to alpha0 * 1e-3 at t1, then held."""
    if t < 0:
        raise UsageError("epoch must be >= 0")
    if t <= s.t0:
        return s.alpha0
    frac = min(t, s.t1) - s.t0
    return s.alpha0 * 0.001 ** (frac / (s.t1 - s.t0))


def beta1(s: OptimizerSchedule, t: float) -> float:
    # step change after t0
    return s.beta1_hi if t <= s.t0 else s.beta1_lo


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    # running product of beta1 values, for bias correction when beta1 changes
    beta1_prod: float = 1.0
    beta2_prod: float = 1.0

    @classmethod
    def zeros_like(cls, params: EmbedderParams) -> "AdamState":
        return cls([np.zeros_like(a) for a in params.arrays()],
                   [np.zeros_like(a) for a in params.arrays()])


def adam_step(params: EmbedderParams, buf: GradientBuffer, state: AdamState,
              s: OptimizerSchedule, t: float) -> EmbedderParams:
    """One Adam update in place; returns ``params`` for chaining.

    Raises NumericError (leaving params and state untouched) if any gradient
    is non-finite.
    """
    if not buf.is_finite():
        raise NumericError(f"non-finite gradient at step {state.step + 1}; update aborted")
    lr = learning_rate(s, t)
    b1, b2 = beta1(s, t), s.beta2
    state.step += 1
    state.beta1_prod *= b1
    state.beta2_prod *= b2
    for p, g, m, v in zip(params.arrays(), buf.arrays(), state.m, state.v):
        if p.shape != g.shape:
            raise UsageError("gradient buffer does not match parameters")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - state.beta1_prod)
        v_hat = v / (1.0 - state.beta2_prod)
        p -= lr * m_hat / (np.sqrt(v_hat) + s.eps_adam)
    return params


def save_checkpoint(params: EmbedderParams, path) -> None:
    """Write params in the little-endian binary checkpoint format.

    Layout: magic ``ATEMLP01``; u32 activation-name length + UTF-8 name;
    u32 layer count; per layer u32 rows, u32 cols, rows*cols f64 weights
    (row-major), rows f64 biases. Written to a temp file then renamed.
    """
    path = Path(path)
    name = params.activation.encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", len(name)), name,
              struct.pack("<I", len(params.weights))]
    for w, b in zip(params.weights, params.biases):
        chunks.append(struct.pack("<II", *w.shape))
        chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=".ckpt-")
    with os.fdopen(fd, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


def load_checkpoint(path) -> EmbedderParams:
    data = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise UsageError(f"truncated checkpoint {path}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise UsageError(f"{path} is not a checkpoint (bad magic)")
    (name_len,) = struct.unpack("<I", take(4))
    activation = take(name_len).decode("utf-8")
    (n_layers,) = struct.unpack("<I", take(4))
    weights, biases = [], []
    for _ in range(n_layers):
        rows, cols = struct.unpack("<II", take(8))
        weights.append(np.frombuffer(take(8 * rows * cols), dtype="<f8").reshape(rows, cols).astype(np.float64))
        biases.append(np.frombuffer(take(8 * rows), dtype="<f8").astype(np.float64))
    if pos != len(data):
        raise UsageError(f"trailing bytes in checkpoint {path}")
    return EmbedderParams(weights, biases, activation)

"""Small feed-forward network engine: linear/tanh layers, reverse-mode
gradients through an explicit tape, Adam and SGD updates, checkpointing.

Everything is float64 and deterministic per seed. Data flows column-wise:
a layer maps an in_dim x batch matrix to out_dim x batch, so batch columns
never mix and spectral losses can act on the raw output matrix.
"""

from dataclasses import dataclass, field

import numpy as np

from . import matcore
from .errors import ParseError, ShapeError, TapeError
from .records import fmt

ACTIVATIONS = ("identity", "tanh")

# encoder used throughout the experiments: widen 2 -> 32, three tanh blocks,
# linear head; the decoder mirrors it back down to the data dimension
ENCODER_SHAPE = (
    (2, 32, "identity"),
    (32, 32, "tanh"),
    (32, 32, "tanh"),
    (32, 32, "tanh"),
    (32, 32, "identity"),
)
DECODER_SHAPE = (
    (32, 32, "tanh"),
    (32, 32, "tanh"),
    (32, 32, "tanh"),
    (32, 2, "identity"),
)


@dataclass
class Layer:
    w: np.ndarray  # out x in
    b: np.ndarray  # out
    act: str

    def __post_init__(self):
        if self.act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.act!r}")
        if self.w.ndim != 2 or self.b.ndim != 1 or self.b.size != self.w.shape[0]:
            raise ShapeError(
                f"layer wants (out x in) weight and (out,) bias, got "
                f"{self.w.shape} and {self.b.shape}"
            )


@dataclass
class Mlp:
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.w.shape[1] != prev.w.shape[0]:
                raise ShapeError(
                    f"layer dimensions do not chain: {prev.w.shape} -> {nxt.w.shape}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].w.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].w.shape[0]


def param_list(net: Mlp):
    """Flat [w0, b0, w1, b1, ...] view of the parameter arrays (shared, not copied)."""
    return [arr for layer in net.layers for arr in (layer.w, layer.b)]


def grad_list(grads):
    """Flatten per-layer (dw, db) pairs to match param_list order."""
    return [arr for gw, gb in grads for arr in (gw, gb)]


@dataclass
class Tape:
    """Per-layer forward cache; feeds exactly one backward pass."""

    x: np.ndarray
    posts: list = field(default_factory=list)
    consumed: bool = False


def init_params(shape, rng: matcore.Rng, scheme: str = "uniform_fan_in") -> Mlp:
    """Fresh network for a ((in, out, act), ...) shape tuple.

    Weights are uniform on +-1/sqrt(fan_in), biases zero.
    """
    if scheme != "uniform_fan_in":
        raise ValueError(f"unknown init scheme {scheme!r}")
    layers = []
    for in_dim, out_dim, act in shape:
        bound = 1.0 / np.sqrt(in_dim)
        u = rng.uniform(out_dim * in_dim).reshape(out_dim, in_dim)
        w = (2.0 * u - 1.0) * bound
        layers.append(Layer(w=w, b=np.zeros(out_dim), act=act))
    return Mlp(layers=layers)


def forward(net: Mlp, x) -> tuple:
    """(output, tape); tape carries the caches backward() needs."""
    x = matcore.as_matrix(x)
    if x.shape[0] != net.in_dim:
        raise ShapeError(f"input has {x.shape[0]} rows, network wants {net.in_dim}")
    tape = Tape(x=x)
    a = x
    for layer in net.layers:
        z = layer.w @ a + layer.b[:, None]
        a = np.tanh(z) if layer.act == "tanh" else z
        tape.posts.append(a)
    return a, tape


def backward(net: Mlp, tape: Tape, dy) -> tuple:
    """Gradients for upstream dy: ([(dw, db) per layer], dx).

    The tape is single-use; a second backward on it raises TapeError.
    """
    if tape.consumed:
        raise TapeError("tape already consumed by a previous backward pass")
    if len(tape.posts) != len(net.layers):
        raise TapeError(
            f"tape has {len(tape.posts)} layer caches, network has {len(net.layers)}"
        )
    dy = np.ascontiguousarray(dy, dtype=np.float64)
    if dy.shape != tape.posts[-1].shape:
        raise TapeError(
            f"upstream gradient shape {dy.shape} != output shape {tape.posts[-1].shape}"
        )
    tape.consumed = True
    grads = [None] * len(net.layers)
    da = dy
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        post = tape.posts[k]
        dz = da * (1.0 - post * post) if layer.act == "tanh" else da
        below = tape.posts[k - 1] if k > 0 else tape.x
        grads[k] = (dz @ below.T, dz.sum(axis=1))
        da = layer.w.T @ dz
    return grads, da


@dataclass
class AdamState:
    lr: float
    beta1: float
    beta2: float
    eps: float
    step: int
    m: list
    v: list

    @classmethod
    def fresh(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            step=0,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(state: AdamState, params, grads):
    """Bias-corrected Adam update, in place on params and state."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ShapeError("params/grads do not match optimizer state")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return params, state


def sgd_step(params, grads, lr: float):
    """Plain gradient descent, in place on params."""
    if len(params) != len(grads):
        raise ShapeError("params/grads length mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        p -= lr * g
    return params


def save_mlp(net: Mlp, path) -> None:
    """Versioned text checkpoint; exact float64 round trip via 17 digits."""
    lines = ["mlp v1", f"nlayers {len(net.layers)}"]
    for i, layer in enumerate(net.layers):
        out_dim, in_dim = layer.w.shape
        lines.append(f"layer {i} {out_dim} {in_dim} {layer.act}")
        lines.append("w " + " ".join(fmt(v) for v in layer.w.ravel()))
        lines.append("b " + " ".join(fmt(v) for v in layer.b))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_floats(path, lineno, tag, line, count):
    parts = line.split()
    if not parts or parts[0] != tag:
        raise ParseError(f"{path}:{lineno}: expected '{tag} ...' line")
    if len(parts) - 1 != count:
        raise ParseError(
            f"{path}:{lineno}: expected {count} values for {tag!r}, got {len(parts) - 1}"
        )
    try:
        return np.array([float(v) for v in parts[1:]])
    except ValueError as exc:
        raise ParseError(f"{path}:{lineno}: bad number ({exc})") from exc


def load_mlp(path) -> Mlp:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "mlp v1":
        raise ParseError(f"{path}:1: not a v1 network checkpoint")
    try:
        nlayers = int(lines[1].split()[1])
    except (IndexError, ValueError) as exc:
        raise ParseError(f"{path}:2: malformed layer count") from exc
    layers = []
    pos = 2
    for i in range(nlayers):
        if pos + 2 >= len(lines):
            raise ParseError(f"{path}: truncated at layer {i}")
        head = lines[pos].split()
        if len(head) != 5 or head[0] != "layer":
            raise ParseError(f"{path}:{pos + 1}: malformed layer header")
        try:
            idx, out_dim, in_dim = int(head[1]), int(head[2]), int(head[3])
        except ValueError as exc:
            raise ParseError(f"{path}:{pos + 1}: bad layer dims") from exc
        act = head[4]
        if idx != i:
            raise ParseError(f"{path}:{pos + 1}: layer index {idx}, expected {i}")
        if act not in ACTIVATIONS:
            raise ParseError(f"{path}:{pos + 1}: unknown activation {act!r}")
        w = _parse_floats(path, pos + 2, "w", lines[pos + 1], out_dim * in_dim)
        b = _parse_floats(path, pos + 3, "b", lines[pos + 2], out_dim)
        layers.append(Layer(w=w.reshape(out_dim, in_dim), b=b, act=act))
        pos += 3
    return Mlp(layers=layers)

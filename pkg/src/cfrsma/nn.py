"""Minimal 3-layer MLP with hand-rolled backprop, Adam and Polyak averaging.

Shapes follow the convention x (n0,) or (B, n0); parameters are kept as the
flat list [W1, b1, W2, b2].  The hidden activation is tanh; the output head
is tanh (actors, bounded actions) or linear (critics).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

PARAM_FORMAT_VERSION = 1
_ACT_CODES = {"linear": 0, "tanh": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


@dataclass
class Mlp:
    W1: np.ndarray  # (n1, n0)
    b1: np.ndarray  # (n1,)
    W2: np.ndarray  # (n2, n1)
    b2: np.ndarray  # (n2,)
    out_activation: str = "tanh"

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.W1.shape[1], self.W1.shape[0], self.W2.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def copy(self) -> "Mlp":
        return Mlp(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy(),
                   self.out_activation)


def make_mlp(n0: int, n2: int, eta: float, out_activation: str,
             rng: np.random.Generator) -> Mlp:
    """Fresh net with hidden width round(eta*n0).

    Hidden layer init U(+-1/sqrt(fan_in)) keeps tanh pre-activations in the
    linear regime; the output layer starts at U(+-3e-3) so initial policy
    and value outputs are near zero instead of random tanh saturation.
    """
    if out_activation not in _ACT_CODES:
        raise ValueError(f"unknown output activation {out_activation!r}")
    n1 = max(1, int(round(eta * n0)))
    s1 = 1.0 / np.sqrt(n0)
    s2 = 3e-3
    return Mlp(W1=rng.uniform(-s1, s1, size=(n1, n0)),
               b1=rng.uniform(-s1, s1, size=n1),
               W2=rng.uniform(-s2, s2, size=(n2, n1)),
               b2=rng.uniform(-s2, s2, size=n2),
               out_activation=out_activation)


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    y, _ = forward_cached(net, x)
    return y


def forward_cached(net: Mlp, x: np.ndarray):
    """Forward pass keeping the activations needed by backward."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    a1 = np.tanh(X @ net.W1.T + net.b1)
    z2 = a1 @ net.W2.T + net.b2
    y = np.tanh(z2) if net.out_activation == "tanh" else z2
    cache = (X, a1, y)
    return (y[0] if single else y), cache


def backward(net: Mlp, cache, grad_out: np.ndarray):
    """Backprop an upstream dL/dy.

    Returns:
        (grads, grad_x): grads is [dW1, db1, dW2, db2] summed over the batch;
        grad_x matches the input batch shape.
    """
    X, a1, y = cache
    G = np.asarray(grad_out, dtype=float)
    single = G.ndim == 1
    if single:
        G = G[None, :]
    dz2 = G * (1.0 - y * y) if net.out_activation == "tanh" else G
    dW2 = dz2.T @ a1
    db2 = dz2.sum(axis=0)
    da1 = dz2 @ net.W2
    dz1 = da1 * (1.0 - a1 * a1)
    dW1 = dz1.T @ X
    db1 = dz1.sum(axis=0)
    dX = dz1 @ net.W1
    return [dW1, db1, dW2, db2], (dX[0] if single else dX)


@dataclass
class AdamState:
    m: list
    v: list
    t: int
    lr: float
    beta1: float
    beta2: float
    eps: float


def adam_init(net: Mlp, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(m=[np.zeros_like(p) for p in net.params()],
                     v=[np.zeros_like(p) for p in net.params()],
                     t=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(net: Mlp, grads: list, opt: AdamState) -> None:
    """One bias-corrected Adam step, in place."""
    opt.t += 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1 ** opt.t
    c2 = 1.0 - b2 ** opt.t
    for p, g, m, v in zip(net.params(), grads, opt.m, opt.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)


def polyak_update(target: Mlp, source: Mlp, tau: float) -> None:
    """theta' <- (1 - tau) theta' + tau theta, in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    for pt, ps in zip(target.params(), source.params()):
        pt *= (1.0 - tau)
        pt += tau * ps


@dataclass
class ParamVector:
    """Flat little-endian float64 image of one Mlp, with a layout version."""

    version: int
    dims: tuple[int, int, int]
    out_activation: str
    data: np.ndarray

    def to_bytes(self) -> bytes:
        head = struct.pack("<BB3I", self.version, _ACT_CODES[self.out_activation],
                           *self.dims)
        return head + self.data.astype("<f8").tobytes()

    @staticmethod
    def from_bytes(buf: bytes) -> "ParamVector":
        version, act, n0, n1, n2 = struct.unpack("<BB3I", buf[:14])
        if version != PARAM_FORMAT_VERSION:
            raise ValueError(f"unsupported parameter format version {version}")
        if act not in _ACT_NAMES:
            raise ValueError(f"unknown activation code {act}")
        data = np.frombuffer(buf[14:], dtype="<f8").copy()
        want = n1 * n0 + n1 + n2 * n1 + n2
        if data.size != want:
            raise ValueError(f"payload length {data.size} != expected {want}")
        return ParamVector(version, (n0, n1, n2), _ACT_NAMES[act], data)


def serialize(net: Mlp) -> ParamVector:
    """Canonical flat order: W1 row-major, b1, W2, b2."""
    data = np.concatenate([p.ravel() for p in net.params()])
    return ParamVector(PARAM_FORMAT_VERSION, net.dims, net.out_activation, data)


def deserialize(pv: ParamVector, dims: tuple[int, int, int]) -> Mlp:
    if pv.version != PARAM_FORMAT_VERSION:
        raise ValueError(f"unsupported parameter format version {pv.version}")
    if tuple(pv.dims) != tuple(dims):
        raise ValueError(f"dims mismatch: vector {pv.dims}, requested {dims}")
    n0, n1, n2 = dims
    want = n1 * n0 + n1 + n2 * n1 + n2
    if pv.data.size != want:
        raise ValueError(f"parameter count {pv.data.size} != expected {want}")
    idx = 0
    out = []
    for shape in ((n1, n0), (n1,), (n2, n1), (n2,)):
        size = int(np.prod(shape))
        out.append(pv.data[idx:idx + size].reshape(shape).copy())
        idx += size
    return Mlp(*out, out_activation=pv.out_activation)

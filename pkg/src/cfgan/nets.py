"""Small MLPs for the 1-D synthetic experiments, clipping and gradient penalty.

Parameter file layout (all little-endian)::

    8 bytes   magic  b"CFMLP\\x00\\x01\\x00"
    uint32    L      number of layer sizes (input, hidden..., output)
    uint32[L] sizes
    uint32    activation code (0 elu, 1 relu, 2 leaky_relu, 3 tanh)
    float64[] for each layer in order: weight (fan_in x fan_out, row-major),
              then bias (fan_out)
"""

from __future__ import annotations

import struct

import numpy as np

from . import diffcore as dc
from .diffcore import ContractError, Tensor

MAGIC = b"CFMLP\x00\x01\x00"
ACTIVATIONS = ("elu", "relu", "leaky_relu", "tanh")

GENERATOR_SIZES = (1, 7, 13, 7, 1)
CRITIC_SIZES = (1, 11, 29, 11, 1)


def _act(name, h):
    if name == "elu":
        return dc.elu(h)
    if name == "relu":
        return dc.relu(h)
    if name == "leaky_relu":
        return dc.leaky_relu(h, 0.2)
    return dc.tanh(h)


def _act_deriv(name, h):
    if name == "elu":
        return dc.elu_deriv(h)
    if name == "relu":
        return Tensor((h.data > 0).astype(np.float64))
    if name == "leaky_relu":
        return Tensor(np.where(h.data > 0, 1.0, 0.2))
    t = dc.tanh(h)
    return dc.sub(1.0, dc.square(t))


class Mlp:
    """Affine layers with one activation between consecutive layers."""

    def __init__(self, sizes, rng=None, activation="elu"):
        if len(sizes) < 2 or min(sizes) < 1:
            raise ContractError(f"invalid layer sizes {sizes}")
        if activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {activation!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.activation = activation
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform((fan_in, fan_out), -bound, bound) if rng is not None else np.zeros((fan_in, fan_out))
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros((1, fan_out)), requires_grad=True))

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def __call__(self, x):
        return forward(self, x)

    def flat(self):
        return np.concatenate([p.data.ravel() for p in self.parameters()])

    def load_flat(self, values):
        values = np.asarray(values, dtype=np.float64)
        i = 0
        for p in self.parameters():
            p.data = values[i:i + p.data.size].reshape(p.shape).copy()
            i += p.data.size
        if i != values.size:
            raise ContractError(f"expected {i} parameters, got {values.size}")

    def copy(self):
        other = Mlp(self.sizes, activation=self.activation)
        other.load_flat(self.flat())
        return other


def forward(mlp, x):
    x = dc.as_tensor(x)
    if x.shape[1] != mlp.sizes[0]:
        raise ContractError(f"input width {x.shape[1]} does not match layer width {mlp.sizes[0]} "
                            f"(input shape {x.shape})")
    h = x
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = dc.add(dc.matmul(h, w), b)
        if i < last:
            h = _act(mlp.activation, h)
    return h


def input_gradient(mlp, x):
    """Rows of d(sum of outputs)/dx at each input row, as an n x d_in tensor.

    Computed by pushing one tangent per input coordinate forward through
    the network; the result stays on the graph so it can be differentiated
    with respect to the parameters.
    """
    x = dc.as_tensor(x).detach()
    n, d_in = x.shape
    h = x
    tangents = [Tensor(np.broadcast_to(np.eye(d_in)[j], (n, d_in)).copy()) for j in range(d_in)]
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        pre = dc.add(dc.matmul(h, w), b)
        tangents = [dc.matmul(tj, w) for tj in tangents]
        if i < last:
            slope = _act_deriv(mlp.activation, pre)
            tangents = [dc.mul(tj, slope) for tj in tangents]
            h = _act(mlp.activation, pre)
    cols = [dc.sum(tj, axis=1) for tj in tangents]
    return cols[0] if d_in == 1 else dc.concat_cols(*cols)


def gradient_penalty(critic, X_real, X_fake, rng):
    """Mean of (|grad_x critic(x_hat)| - 1)^2 on random interpolates x_hat."""
    xr = X_real.data if isinstance(X_real, Tensor) else np.asarray(X_real, dtype=np.float64)
    xf = X_fake.data if isinstance(X_fake, Tensor) else np.asarray(X_fake, dtype=np.float64)
    if xr.shape != xf.shape:
        raise ContractError(f"real and fake batches differ: {xr.shape} vs {xf.shape}")
    u = rng.uniform((xr.shape[0], 1))
    return penalty_at(critic, u * xr + (1.0 - u) * xf)


def penalty_at(critic, x_hat):
    norms = dc.norm_l2(input_gradient(critic, x_hat), axis=1)
    return dc.mean(dc.square(dc.sub(norms, 1.0)))


def clip_weights(mlp, c):
    if not c > 0:
        raise ContractError(f"clip bound must be positive, got {c}")
    for p in mlp.parameters():
        np.clip(p.data, -c, c, out=p.data)


# ------------------------------------------------------------------ file I/O

def save(mlp, path):
    header = MAGIC + struct.pack("<I", len(mlp.sizes)) + struct.pack(f"<{len(mlp.sizes)}I", *mlp.sizes)
    header += struct.pack("<I", ACTIVATIONS.index(mlp.activation))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(mlp.flat().astype("<f8").tobytes())


def load(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise ContractError(f"{path}: not an MLP parameter file")
    (count,) = struct.unpack_from("<I", blob, 8)
    sizes = struct.unpack_from(f"<{count}I", blob, 12)
    off = 12 + 4 * count
    (act,) = struct.unpack_from("<I", blob, off)
    mlp = Mlp(sizes, activation=ACTIVATIONS[act])
    mlp.load_flat(np.frombuffer(blob, dtype="<f8", offset=off + 4))
    return mlp

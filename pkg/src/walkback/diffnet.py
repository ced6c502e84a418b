"""Small dense networks with hand-written reverse-mode gradients.

A :class:`ParamNet` is a stack of dense layers.  Hidden layers may carry a
per-step affine table: row ``k`` holds the (gain, shift) applied to the
pre-activation when the network is evaluated at step ``k``.  All arithmetic
is float64.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, TrainingError, UsageError

ACTIVATIONS = {
    "identity": kernels.IDENTITY,
    "relu": kernels.RELU,
    "leaky_relu": kernels.LEAKY_RELU,
    "tanh": kernels.TANH,
    "sigmoid": kernels.SIGMOID,
    "softplus": kernels.SOFTPLUS,
}


@dataclass
class Layer:
    weight: np.ndarray  # (n_out, n_in)
    bias: np.ndarray  # (n_out,)
    activation: str

    @property
    def n_in(self):
        return self.weight.shape[1]

    @property
    def n_out(self):
        return self.weight.shape[0]


@dataclass
class GradTape:
    """Activations recorded by one forward pass, consumed by one backward."""

    net_id: int
    version: int
    step: int | None
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    conditioned: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    consumed: bool = False
    input_grad: np.ndarray | None = None


class ParamNet:
    """Dense network ``sizes[0] -> ... -> sizes[-1]``.

    ``activations`` has one tag per layer.  With ``n_steps > 0`` every hidden
    layer gets a per-step (gain, shift) table initialised to (1, 0).
    """

    def __init__(self, sizes, activations, n_steps=0, rng=None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ConfigError(f"bad layer sizes {sizes}")
        if len(activations) != len(sizes) - 1:
            raise ConfigError("need one activation per layer")
        for act in activations:
            if act not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {act!r}")
        rng = np.random.default_rng() if rng is None else rng
        self.layers = []
        for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations):
            limit = np.sqrt(6.0 / (n_in + n_out))
            W = rng.uniform(-limit, limit, size=(n_out, n_in))
            self.layers.append(Layer(W, np.zeros(n_out), act))
        self.n_steps = int(n_steps)
        if self.n_steps > 0:
            self.per_step_affine = [
                (np.ones((self.n_steps, layer.n_out)), np.zeros((self.n_steps, layer.n_out)))
                for layer in self.layers[:-1]
            ]
        else:
            self.per_step_affine = None
        self._grads = [np.zeros_like(p) for p in self.params()]
        self.version = 0

    @property
    def sizes(self):
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    @property
    def activations(self):
        return [layer.activation for layer in self.layers]

    @property
    def input_dim(self):
        return self.layers[0].n_in

    @property
    def output_dim(self):
        return self.layers[-1].n_out

    @property
    def param_count(self):
        return int(sum(p.size for p in self.params()))

    def params(self):
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        if self.per_step_affine is not None:
            for gain, shift in self.per_step_affine:
                out += [gain, shift]
        return out

    def grads(self):
        return self._grads

    def zero_grad(self):
        for g in self._grads:
            g.fill(0.0)

    def mark_updated(self):
        self.version += 1

    def copy(self):
        """Independent deep copy; use it as a frozen snapshot for sampling."""
        return copy.deepcopy(self)

    def _affine_rows(self, i, step):
        if self.per_step_affine is None or i >= len(self.per_step_affine):
            return None, None
        gain, shift = self.per_step_affine[i]
        return gain[step], shift[step]

    def _check_step(self, step):
        if self.per_step_affine is None:
            return None
        step = 0 if step is None else int(step)
        if not 0 <= step < self.n_steps:
            raise ConfigError(f"step index {step} outside [0, {self.n_steps})")
        return step

    def forward(self, x, step=None):
        """Evaluate on a batch ``x`` of shape (B, n_in) (or a single vector).

        Returns ``(output, tape)``; a 1-D input gives a 1-D output.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ConfigError(f"input shape {x.shape} does not match input width {self.input_dim}")
        step = self._check_step(step)
        tape = GradTape(id(self), self.version, step)
        h = np.ascontiguousarray(x)
        for i, layer in enumerate(self.layers):
            gain, shift = self._affine_rows(i, step)
            z, u, a = kernels.dense_forward(
                layer.weight, layer.bias, h, gain, shift, ACTIVATIONS[layer.activation]
            )
            tape.inputs.append(h)
            tape.pre.append(z)
            tape.conditioned.append(u)
            tape.outputs.append(a)
            h = a
        return (h[0] if single else h), tape

    def backward(self, tape, output_grad):
        """Backpropagate ``output_grad`` through the pass recorded in ``tape``.

        Gradients are added to the accumulators and this call's contribution
        is returned, aligned with :meth:`params`.
        """
        if tape.net_id != id(self):
            raise UsageError("tape was recorded by a different network")
        if tape.consumed:
            raise UsageError("tape already consumed by a previous backward call")
        if tape.version != self.version:
            raise UsageError("stale tape: parameters changed since the forward pass")
        tape.consumed = True
        g = np.asarray(output_grad, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        if g.shape != tape.outputs[-1].shape:
            raise ConfigError(f"output gradient shape {g.shape} != {tape.outputs[-1].shape}")
        n_layers = len(self.layers)
        contrib = [np.zeros_like(p) for p in self.params()]
        for i in reversed(range(n_layers)):
            layer = self.layers[i]
            gain, _ = self._affine_rows(i, tape.step)
            dW, db = contrib[2 * i], contrib[2 * i + 1]
            if gain is not None:
                dgain_full = contrib[2 * n_layers + 2 * i]
                dshift_full = contrib[2 * n_layers + 2 * i + 1]
                dgain = np.zeros(layer.n_out)
                dshift = np.zeros(layer.n_out)
            else:
                dgain = dshift = None
            g = kernels.dense_backward(
                layer.weight, tape.inputs[i], tape.pre[i], tape.conditioned[i],
                tape.outputs[i], gain, np.ascontiguousarray(g),
                ACTIVATIONS[layer.activation], dW, db, dgain, dshift,
            )
            if gain is not None:
                dgain_full[tape.step] += dgain
                dshift_full[tape.step] += dshift
        tape.input_grad = g
        for acc, c in zip(self._grads, contrib):
            acc += c
        return contrib

    # -- serialization ----------------------------------------------------

    def to_arrays(self, prefix):
        arrays = {}
        for i, layer in enumerate(self.layers):
            arrays[f"{prefix}.layer{i}.weight"] = layer.weight
            arrays[f"{prefix}.layer{i}.bias"] = layer.bias
        if self.per_step_affine is not None:
            for i, (gain, shift) in enumerate(self.per_step_affine):
                arrays[f"{prefix}.affine{i}.gain"] = gain
                arrays[f"{prefix}.affine{i}.shift"] = shift
        meta = {"sizes": self.sizes, "activations": self.activations, "n_steps": self.n_steps}
        return arrays, meta

    @classmethod
    def from_arrays(cls, arrays, prefix, meta):
        net = cls(meta["sizes"], meta["activations"], n_steps=meta["n_steps"],
                  rng=np.random.default_rng(0))
        for i, layer in enumerate(net.layers):
            layer.weight[...] = arrays[f"{prefix}.layer{i}.weight"]
            layer.bias[...] = arrays[f"{prefix}.layer{i}.bias"]
        if net.per_step_affine is not None:
            for i, (gain, shift) in enumerate(net.per_step_affine):
                gain[...] = arrays[f"{prefix}.affine{i}.gain"]
                shift[...] = arrays[f"{prefix}.affine{i}.shift"]
        return net


def mlp(n_in, n_out, hidden=(64, 64), activation="tanh", out_activation="identity",
        n_steps=0, rng=None):
    sizes = [n_in, *hidden, n_out]
    acts = [activation] * len(hidden) + [out_activation]
    return ParamNet(sizes, acts, n_steps=n_steps, rng=rng)


def _check_finite(grads):
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient")


class SGD:
    def __init__(self, lr):
        if lr < 0:
            raise ConfigError("learning rate must be non-negative")
        self.lr = float(lr)

    def step(self, model):
        grads = model.grads()
        _check_finite(grads)
        for p, g in zip(model.params(), grads):
            p -= self.lr * g
        model.zero_grad()
        model.mark_updated()

    def state(self):
        return {}, {"kind": "sgd", "lr": self.lr}

    def load_state(self, arrays, meta):
        self.lr = meta["lr"]


class Adam:
    """Adam with bias-corrected moments; one moment pair per parameter array."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr < 0:
            raise ConfigError("learning rate must be non-negative")
        self.lr, self.beta1, self.beta2, self.eps = float(lr), beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, model):
        params, grads = model.params(), model.grads()
        _check_finite(grads)
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        model.zero_grad()
        model.mark_updated()

    def state(self):
        arrays = {}
        if self.m is not None:
            for i, (m, v) in enumerate(zip(self.m, self.v)):
                arrays[f"adam.m{i}"] = m
                arrays[f"adam.v{i}"] = v
        meta = {"kind": "adam", "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "t": self.t, "n": 0 if self.m is None else len(self.m)}
        return arrays, meta

    def load_state(self, arrays, meta):
        self.lr, self.beta1, self.beta2, self.eps = meta["lr"], meta["beta1"], meta["beta2"], meta["eps"]
        self.t = meta["t"]
        if meta["n"]:
            self.m = [np.array(arrays[f"adam.m{i}"]) for i in range(meta["n"])]
            self.v = [np.array(arrays[f"adam.v{i}"]) for i in range(meta["n"])]


def make_optimizer(kind, lr):
    if kind == "sgd":
        return SGD(lr)
    if kind == "adam":
        return Adam(lr)
    raise ConfigError(f"unknown optimizer {kind!r}")

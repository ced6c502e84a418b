"""Transition operators ``p_T(s'|s)`` and the priors ``p*`` they start from.

Every operator exposes the same batched interface:

``sample(states, T, rng, step)``
    draw next states;
``log_density(src, dst, T, step)``
    ``log p_T(dst | src)`` per row;
``log_density_grad(src, dst, T, step, weights)``
    same value, and adds ``sum_b weights[b] * grad log p_T(dst_b | src_b)``
    to the parameter gradient accumulators.

Continuous and binary states are float arrays of shape (B, d) (a single
vector of shape (d,) is accepted and returned unbatched); discrete states
are int arrays of shape (B,).  ``step`` selects the per-step affine row of
the underlying networks; steps past the end of the table reuse its last row.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .diffnet import ParamNet, mlp
from .errors import ConfigError, DomainError, OperatorError

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12
VARIANCE_FLOOR = 1e-8


def _as_batch(x, dim):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ConfigError(f"state shape {x.shape} does not match dimension {dim}")
    return x, single


def _check_temperature(T):
    T = float(T)
    if not T > 0 or not np.isfinite(T):
        raise ConfigError(f"temperature must be positive and finite, got {T}")
    return T


def inverse_softplus(y):
    return float(y + np.log(-np.expm1(-y)))


# -- priors -------------------------------------------------------------------


@dataclass(frozen=True)
class PriorMoments:
    """Diagonal Gaussian ``p*`` tracked by an exponential moving average."""

    mean: np.ndarray
    variance: np.ndarray
    update_rate: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64).copy())
        object.__setattr__(self, "variance", np.asarray(self.variance, dtype=np.float64).copy())
        if np.any(self.variance <= 0):
            raise ConfigError("prior variance must be strictly positive")
        if not 0.0 <= self.update_rate <= 1.0:
            raise ConfigError("update_rate must lie in [0, 1]")

    @classmethod
    def from_data(cls, points, update_rate=0.1):
        points = np.asarray(points, dtype=np.float64)
        return cls(points.mean(axis=0), np.maximum(points.var(axis=0), VARIANCE_FLOOR), update_rate)

    @property
    def dim(self):
        return self.mean.size

    def sample(self, n, rng):
        return self.mean + np.sqrt(self.variance) * rng.standard_normal((n, self.dim))

    def log_density(self, states):
        x, single = _as_batch(states, self.dim)
        mu = np.broadcast_to(self.mean, x.shape)
        std = np.broadcast_to(np.sqrt(self.variance), x.shape)
        out = kernels.gaussian_logpdf(x, np.ascontiguousarray(mu), np.ascontiguousarray(std))
        return out[0] if single else out

    def updated(self, batch):
        batch = np.asarray(batch, dtype=np.float64).reshape(-1, self.dim)
        if batch.shape[0] == 0:
            raise ConfigError("cannot update prior from an empty batch")
        r = self.update_rate
        mean = (1 - r) * self.mean + r * batch.mean(axis=0)
        var = (1 - r) * self.variance + r * batch.var(axis=0)
        return replace(self, mean=mean, variance=np.maximum(var, VARIANCE_FLOOR))

    def to_meta(self):
        return {"kind": "gaussian", "mean": self.mean.tolist(),
                "variance": self.variance.tolist(), "update_rate": self.update_rate}


@dataclass(frozen=True)
class BernoulliPrior:
    """Factorised Bernoulli ``p*`` for binary states."""

    probs: np.ndarray
    update_rate: float = 0.1

    def __post_init__(self):
        p = np.clip(np.asarray(self.probs, dtype=np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_data(cls, points, update_rate=0.1):
        return cls(np.asarray(points, dtype=np.float64).mean(axis=0), update_rate)

    @property
    def dim(self):
        return self.probs.size

    def sample(self, n, rng):
        return (rng.random((n, self.dim)) < self.probs).astype(np.float64)

    def log_density(self, states):
        x, single = _as_batch(states, self.dim)
        out = (x * np.log(self.probs) + (1 - x) * np.log1p(-self.probs)).sum(axis=1)
        return out[0] if single else out

    def updated(self, batch):
        batch = np.asarray(batch, dtype=np.float64).reshape(-1, self.dim)
        if batch.shape[0] == 0:
            raise ConfigError("cannot update prior from an empty batch")
        r = self.update_rate
        return replace(self, probs=(1 - r) * self.probs + r * batch.mean(axis=0))

    def to_meta(self):
        return {"kind": "bernoulli", "probs": self.probs.tolist(), "update_rate": self.update_rate}


@dataclass(frozen=True)
class CategoricalPrior:
    """Categorical ``p*`` over ``n`` discrete states."""

    probs: np.ndarray
    update_rate: float = 0.1

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ConfigError("categorical prior must be a probability vector")
        object.__setattr__(self, "probs", p / p.sum())

    @classmethod
    def from_data(cls, states, n_states, update_rate=0.1):
        counts = np.bincount(np.asarray(states, dtype=np.int64), minlength=n_states)
        return cls(counts / counts.sum(), update_rate)

    @property
    def n_states(self):
        return self.probs.size

    def sample(self, n, rng):
        return rng.choice(self.n_states, size=n, p=self.probs).astype(np.int64)

    def log_density(self, states):
        s = np.asarray(states, dtype=np.int64)
        return np.log(np.maximum(self.probs[s], PROB_CLAMP))

    def updated(self, batch):
        batch = np.asarray(batch, dtype=np.int64).reshape(-1)
        if batch.size == 0:
            raise ConfigError("cannot update prior from an empty batch")
        freq = np.bincount(batch, minlength=self.n_states) / batch.size
        r = self.update_rate
        return replace(self, probs=(1 - r) * self.probs + r * freq)

    def to_meta(self):
        return {"kind": "categorical", "probs": self.probs.tolist(), "update_rate": self.update_rate}


def prior_from_meta(meta):
    kind = meta["kind"]
    if kind == "gaussian":
        return PriorMoments(np.array(meta["mean"]), np.array(meta["variance"]), meta["update_rate"])
    if kind == "bernoulli":
        return BernoulliPrior(np.array(meta["probs"]), meta["update_rate"])
    if kind == "categorical":
        return CategoricalPrior(np.array(meta["probs"]), meta["update_rate"])
    raise ConfigError(f"unknown prior kind {kind!r}")


# -- shared parameter plumbing ------------------------------------------------


class _NetOperator:
    nets: tuple = ()

    def params(self):
        return [p for net in self.nets for p in net.params()]

    def grads(self):
        return [g for net in self.nets for g in net.grads()]

    def zero_grad(self):
        for net in self.nets:
            net.zero_grad()

    def mark_updated(self):
        for net in self.nets:
            net.mark_updated()

    @property
    def param_count(self):
        return sum(net.param_count for net in self.nets)

    def snapshot(self):
        """Deep copy safe to sample from while the original keeps training."""
        return copy.deepcopy(self)

    def _level(self, step):
        n_steps = max(net.n_steps for net in self.nets) if self.nets else 0
        if n_steps == 0:
            return None
        return min(max(int(step), 0), n_steps - 1)

    @property
    def n_levels(self):
        return max((net.n_steps for net in self.nets), default=0)


def _finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise OperatorError(f"non-finite {what}")
    return arr


# -- Gaussian -----------------------------------------------------------------


class GaussianOperator(_NetOperator):
    """Diagonal Gaussian step with mean ``(1-a) s + a F_mu(s)`` and
    standard deviation ``max(sqrt(T) * softplus(F_sigma(s)), sigma_floor)``.
    """

    kind = "gaussian"

    def __init__(self, mu_net: ParamNet, sigma_net: ParamNet, alpha=0.5, sigma_floor=1e-4,
                 base_variance=0.01, prior=None):
        if not 0.0 <= alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if sigma_floor <= 0:
            raise ConfigError("sigma_floor must be positive")
        if mu_net.input_dim != mu_net.output_dim or sigma_net.input_dim != mu_net.input_dim \
                or sigma_net.output_dim != mu_net.input_dim:
            raise ConfigError("mean and sigma networks must map R^d to R^d")
        self.mu_net = mu_net
        self.sigma_net = sigma_net
        self.alpha = float(alpha)
        self.sigma_floor = float(sigma_floor)
        self.base_variance = float(base_variance)
        self.dim = mu_net.input_dim
        self.prior = prior if prior is not None else PriorMoments(np.zeros(self.dim), np.ones(self.dim))

    @classmethod
    def create(cls, dim, hidden=(64, 64), activation="tanh", alpha=0.5, base_variance=0.01,
               sigma_floor=1e-4, n_steps=0, prior=None, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        mu_net = mlp(dim, dim, hidden, activation, n_steps=n_steps, rng=rng)
        sigma_net = mlp(dim, dim, hidden, activation, n_steps=n_steps, rng=rng)
        # start at the nominal T=1 noise level
        sigma_net.layers[-1].weight *= 0.1
        sigma_net.layers[-1].bias[:] = inverse_softplus(np.sqrt(base_variance))
        return cls(mu_net, sigma_net, alpha, sigma_floor, base_variance, prior)

    @property
    def nets(self):
        return (self.mu_net, self.sigma_net)

    def prepare(self, points):
        return np.asarray(points, dtype=np.float64)

    def _moments(self, x, T, step, record=False):
        level = self._level(step)
        if self.alpha > 0:
            f_mu, mu_tape = self.mu_net.forward(x, level)
            _finite(f_mu, "mean network output")
            mu = (1 - self.alpha) * x + self.alpha * f_mu
        else:
            mu, mu_tape = x.copy(), None
        f_sigma, sigma_tape = self.sigma_net.forward(x, level)
        _finite(f_sigma, "sigma network output")
        raw = np.sqrt(T) * kernels.softplus(f_sigma)
        std = np.maximum(raw, self.sigma_floor)
        if record:
            return mu, std, (mu_tape, sigma_tape, f_sigma, raw >= self.sigma_floor)
        return mu, std

    def mean_std(self, states, T, step=0):
        x, single = _as_batch(states, self.dim)
        mu, std = self._moments(x, _check_temperature(T), step)
        return (mu[0], std[0]) if single else (mu, std)

    def sample(self, states, T, rng, step=0):
        x, single = _as_batch(states, self.dim)
        mu, std = self._moments(x, _check_temperature(T), step)
        out = mu + std * rng.standard_normal(mu.shape)
        return out[0] if single else out

    def log_density(self, src, dst, T, step=0):
        x, single = _as_batch(src, self.dim)
        y, _ = _as_batch(dst, self.dim)
        mu, std = self._moments(x, _check_temperature(T), step)
        out = kernels.gaussian_logpdf(y, mu, std)
        return out[0] if single else out

    def log_density_grad(self, src, dst, T, step=0, weights=None):
        x, single = _as_batch(src, self.dim)
        y, _ = _as_batch(dst, self.dim)
        T = _check_temperature(T)
        mu, std, (mu_tape, sigma_tape, f_sigma, active) = self._moments(x, T, step, record=True)
        logp, dmu, dstd = kernels.gaussian_logpdf_grad(y, mu, std)
        w = np.ones(x.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
        w = w[:, None]
        if mu_tape is not None:
            self.mu_net.backward(mu_tape, w * self.alpha * dmu)
        dsig = w * dstd * np.sqrt(T) * kernels.sigmoid(f_sigma) * active
        self.sigma_net.backward(sigma_tape, dsig)
        return logp[0] if single else logp

    def to_arrays(self):
        a1, m1 = self.mu_net.to_arrays("mu")
        a2, m2 = self.sigma_net.to_arrays("sigma")
        meta = {"kind": self.kind, "alpha": self.alpha, "sigma_floor": self.sigma_floor,
                "base_variance": self.base_variance, "mu_net": m1, "sigma_net": m2,
                "prior": self.prior.to_meta()}
        return {**a1, **a2}, meta

    @classmethod
    def from_arrays(cls, arrays, meta):
        return cls(ParamNet.from_arrays(arrays, "mu", meta["mu_net"]),
                   ParamNet.from_arrays(arrays, "sigma", meta["sigma_net"]),
                   meta["alpha"], meta["sigma_floor"], meta["base_variance"],
                   prior_from_meta(meta["prior"]))


# -- Bernoulli ----------------------------------------------------------------


class BernoulliOperator(_NetOperator):
    """Factorised Bernoulli step with probabilities
    ``sigmoid(((1-a) s + a F_rho(s)) / T)``.
    """

    kind = "bernoulli"

    def __init__(self, rho_net: ParamNet, alpha=0.5, prior=None):
        if not 0.0 <= alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if rho_net.input_dim != rho_net.output_dim:
            raise ConfigError("rho network must map R^d to R^d")
        self.rho_net = rho_net
        self.alpha = float(alpha)
        self.dim = rho_net.input_dim
        self.prior = prior if prior is not None else BernoulliPrior(np.full(self.dim, 0.5))

    @classmethod
    def create(cls, dim, hidden=(64, 64), activation="tanh", alpha=0.5, n_steps=0, prior=None,
               rng=None):
        rng = np.random.default_rng() if rng is None else rng
        return cls(mlp(dim, dim, hidden, activation, n_steps=n_steps, rng=rng), alpha, prior)

    @property
    def nets(self):
        return (self.rho_net,)

    def prepare(self, points):
        points = np.asarray(points, dtype=np.float64)
        binary = (points > 0.5).astype(np.float64)
        if not np.array_equal(binary, points):
            log.warning("thresholding %d non-binary values at 0.5", int(np.sum(binary != points)))
        return binary

    def _logits(self, x, T, step):
        f, tape = self.rho_net.forward(x, self._level(step))
        _finite(f, "rho network output")
        return ((1 - self.alpha) * x + self.alpha * f) / T, tape

    def probabilities(self, states, T, step=0):
        x, single = _as_batch(states, self.dim)
        a, _ = self._logits(x, _check_temperature(T), step)
        rho = np.clip(kernels.sigmoid(a), PROB_CLAMP, 1 - PROB_CLAMP)
        return rho[0] if single else rho

    def sample(self, states, T, rng, step=0):
        x, single = _as_batch(states, self.dim)
        a, _ = self._logits(x, _check_temperature(T), step)
        out = (rng.random(a.shape) < kernels.sigmoid(a)).astype(np.float64)
        return out[0] if single else out

    def _check_binary(self, y):
        if not np.all((y == 0.0) | (y == 1.0)):
            raise DomainError("Bernoulli states must lie in {0, 1}^d")

    def log_density(self, src, dst, T, step=0):
        x, single = _as_batch(src, self.dim)
        y, _ = _as_batch(dst, self.dim)
        self._check_binary(y)
        a, _ = self._logits(x, _check_temperature(T), step)
        out = -(y * kernels.softplus(-a) + (1 - y) * kernels.softplus(a)).sum(axis=1)
        return out[0] if single else out

    def log_density_grad(self, src, dst, T, step=0, weights=None):
        x, single = _as_batch(src, self.dim)
        y, _ = _as_batch(dst, self.dim)
        self._check_binary(y)
        T = _check_temperature(T)
        a, tape = self._logits(x, T, step)
        logp = -(y * kernels.softplus(-a) + (1 - y) * kernels.softplus(a)).sum(axis=1)
        w = np.ones(x.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
        self.rho_net.backward(tape, w[:, None] * (y - kernels.sigmoid(a)) * self.alpha / T)
        return logp[0] if single else logp

    def to_arrays(self):
        arrays, m = self.rho_net.to_arrays("rho")
        return arrays, {"kind": self.kind, "alpha": self.alpha, "rho_net": m,
                        "prior": self.prior.to_meta()}

    @classmethod
    def from_arrays(cls, arrays, meta):
        return cls(ParamNet.from_arrays(arrays, "rho", meta["rho_net"]), meta["alpha"],
                   prior_from_meta(meta["prior"]))


# -- discrete adapters --------------------------------------------------------


class _DiscreteBase(_NetOperator):
    """Operators on ``{0, ..., n-1}`` defined by a row-stochastic matrix per
    (temperature, level)."""

    def prepare(self, points):
        s = np.asarray(points)
        if s.ndim == 2 and s.shape[1] == 1:
            s = s[:, 0]
        s = np.rint(s).astype(np.int64)
        if np.any((s < 0) | (s >= self.n_states)):
            raise DomainError("discrete state out of range")
        return s

    def _states(self, s):
        s = np.asarray(s)
        single = s.ndim == 0
        s = np.atleast_1d(s).astype(np.int64)
        if np.any((s < 0) | (s >= self.n_states)):
            raise DomainError("discrete state out of range")
        return s, single

    def sample(self, states, T, rng, step=0):
        s, single = self._states(states)
        cum = np.cumsum(self.matrix(T, step), axis=1)
        out = kernels.categorical_walk(cum, s, rng.random((s.size, 1)))[:, 1]
        return out[0] if single else out

    def walk(self, start, T, n_steps, rng, step=0):
        """Run ``n_steps`` transitions at fixed ``T``; returns (B, n_steps + 1)."""
        s, _ = self._states(start)
        cum = np.cumsum(self.matrix(T, step), axis=1)
        return kernels.categorical_walk(cum, s, rng.random((s.size, n_steps)))

    def log_density(self, src, dst, T, step=0):
        x, single = self._states(src)
        y, _ = self._states(dst)
        out = np.log(np.maximum(self.matrix(T, step)[x, y], PROB_CLAMP))
        return out[0] if single else out


class MatrixOperator(_DiscreteBase):
    """Fixed stochastic matrices ``transition(T)``; has no parameters."""

    kind = "matrix"
    nets = ()

    def __init__(self, transition, n_states, prior=None):
        self.transition = transition
        self.n_states = int(n_states)
        self.prior = prior if prior is not None else CategoricalPrior(np.full(n_states, 1.0 / n_states))

    def matrix(self, T, step=0):
        return np.asarray(self.transition(_check_temperature(T)), dtype=np.float64)

    def log_density_grad(self, src, dst, T, step=0, weights=None):
        return self.log_density(src, dst, T, step)


class TabularOperator(_DiscreteBase):
    """Trainable discrete operator ``P_T(j|i) = softmax_j(L_k[i, j] / T)``.

    ``L_k`` is the logit table of schedule level ``k`` (levels past the last
    table reuse it).  Each table is a one-layer :class:`ParamNet` fed one-hot
    states.
    """

    kind = "tabular"

    def __init__(self, logit_nets, prior=None):
        if isinstance(logit_nets, ParamNet):
            logit_nets = [logit_nets]
        logit_nets = list(logit_nets)
        if not logit_nets:
            raise ConfigError("need at least one logit table")
        n = logit_nets[0].input_dim
        for net in logit_nets:
            if net.input_dim != n or net.output_dim != n or len(net.layers) != 1:
                raise ConfigError("logit networks must be single square layers of equal size")
        self.logit_nets = logit_nets
        self.n_states = n
        self.prior = prior if prior is not None else CategoricalPrior(np.full(n, 1.0 / n))

    @classmethod
    def create(cls, n_states, n_levels=1, prior=None, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        first = ParamNet([n_states, n_states], ["identity"], rng=rng)
        nets = [first] + [first.copy() for _ in range(max(int(n_levels), 1) - 1)]
        return cls(nets, prior)

    @property
    def nets(self):
        return tuple(self.logit_nets)

    @property
    def n_levels(self):
        return len(self.logit_nets)

    def _net(self, step):
        return self.logit_nets[min(max(int(step), 0), len(self.logit_nets) - 1)]

    def _logits(self, s, step):
        net = self._net(step)
        logits, tape = net.forward(np.eye(self.n_states)[s])
        return _finite(logits, "logit table"), tape, net

    @staticmethod
    def _log_softmax(a):
        a = a - a.max(axis=1, keepdims=True)
        return a - np.log(np.exp(a).sum(axis=1, keepdims=True))

    def matrix(self, T, step=0):
        T = _check_temperature(T)
        logits, _, _ = self._logits(np.arange(self.n_states), step)
        return np.exp(self._log_softmax(logits / T))

    def log_density(self, src, dst, T, step=0):
        x, single = self._states(src)
        y, _ = self._states(dst)
        logits, _, _ = self._logits(x, step)
        out = self._log_softmax(logits / _check_temperature(T))[np.arange(x.size), y]
        return out[0] if single else out

    def log_density_grad(self, src, dst, T, step=0, weights=None):
        x, single = self._states(src)
        y, _ = self._states(dst)
        T = _check_temperature(T)
        logits, tape, net = self._logits(x, step)
        logsm = self._log_softmax(logits / T)
        out = logsm[np.arange(x.size), y]
        w = np.ones(x.size) if weights is None else np.asarray(weights, dtype=np.float64)
        g = -np.exp(logsm)
        g[np.arange(x.size), y] += 1.0
        net.backward(tape, w[:, None] * g / T)
        return out[0] if single else out

    def to_arrays(self):
        arrays, metas = {}, []
        for k, net in enumerate(self.logit_nets):
            a, m = net.to_arrays(f"logits{k}")
            arrays.update(a)
            metas.append(m)
        return arrays, {"kind": self.kind, "logit_nets": metas, "prior": self.prior.to_meta()}

    @classmethod
    def from_arrays(cls, arrays, meta):
        nets = [ParamNet.from_arrays(arrays, f"logits{k}", m)
                for k, m in enumerate(meta["logit_nets"])]
        return cls(nets, prior_from_meta(meta["prior"]))


OPERATOR_KINDS = {
    "gaussian": GaussianOperator,
    "bernoulli": BernoulliOperator,
    "tabular": TabularOperator,
}


def operator_from_arrays(arrays, meta):
    try:
        cls = OPERATOR_KINDS[meta["kind"]]
    except KeyError:
        raise ConfigError(f"cannot restore operator kind {meta.get('kind')!r}") from None
    return cls.from_arrays(arrays, meta)

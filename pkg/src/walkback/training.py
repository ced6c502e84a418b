"""Walkback training: heat data under the operator, train it to step back."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import checkpoint as ckpt
from .diffnet import make_optimizer
from .errors import ConfigError, OperatorError, TrainingError
from .operators import GaussianOperator, operator_from_arrays
from .schedule import make_heating, n_heated, tmax_from_variance, total_variance

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "train_bound", "val_bound", "reversibility_kl", "reversibility_ratio")


@dataclass
class Trajectory:
    """A batch of heated trajectories ``s_0 .. s_K``.

    ``fwd_logp[t-1]`` is ``log q_{T_t}(s_t | s_{t-1})`` and ``bwd_logp[t-1]``
    is ``log p_{T_t}(s_{t-1} | s_t)``, each of shape (B,).
    """

    states: list
    temps: tuple
    levels: tuple
    fwd_logp: np.ndarray
    bwd_logp: np.ndarray
    terminal_prior_logp: np.ndarray

    @property
    def K(self):
        return len(self.temps)

    @property
    def batch_size(self):
        return self.terminal_prior_logp.shape[0]

    def log_weights(self):
        """Per-trajectory ``sum_t log p - sum_t log q + log p*(s_K)``."""
        return self.bwd_logp.sum(axis=0) - self.fwd_logp.sum(axis=0) + self.terminal_prior_logp


def _batched(op, x0):
    x0 = op.prepare(x0)
    discrete = not hasattr(op, "dim")
    if discrete:
        return np.atleast_1d(x0)
    return np.atleast_2d(x0)


def heat_trajectory(op, schedule, x0, rng):
    """Run the destructive process from ``x0`` (one state or a batch)."""
    s = _batched(op, x0)
    states = [s]
    B = s.shape[0]
    fwd = np.empty((schedule.K, B))
    bwd = np.empty((schedule.K, B))
    for t, T, level in schedule.steps():
        nxt = op.sample(s, T, rng, level)
        if not np.all(np.isfinite(nxt)):
            raise OperatorError(f"non-finite state at heating step {t} (T={T})")
        fwd[t - 1] = op.log_density(s, nxt, T, level)
        bwd[t - 1] = op.log_density(nxt, s, T, level)
        states.append(nxt)
        s = nxt
    traj = Trajectory(states, tuple(schedule.temps), tuple(schedule.levels), fwd, bwd,
                      op.prior.log_density(s))
    if not (np.all(np.isfinite(fwd)) and np.all(np.isfinite(bwd))
            and np.all(np.isfinite(traj.terminal_prior_logp))):
        raise OperatorError("non-finite log-density along heated trajectory")
    return traj


def walkback_update(op, traj, optimizer, update_mode="online"):
    """Raise ``log p_{T_t}(s_{t-1} | s_t)`` for every recorded step.

    Each step's gradient only involves ``(s_{t-1}, s_t, T_t)``; nothing is
    backpropagated through the trajectory.  ``online`` applies the optimizer
    after every step, ``accumulated`` once after all K steps.  Returns the
    per-trajectory bound estimates recorded at heating time.
    """
    if update_mode not in ("online", "accumulated"):
        raise ConfigError(f"unknown update mode {update_mode!r}")
    weights = -np.ones(traj.batch_size)
    for t in range(1, traj.K + 1):
        op.log_density_grad(traj.states[t], traj.states[t - 1], traj.temps[t - 1],
                            traj.levels[t - 1], weights)
        if update_mode == "online":
            optimizer.step(op)
    if update_mode == "accumulated" and traj.K > 0:
        optimizer.step(op)
    return traj.log_weights()


@dataclass
class TrainConfig:
    N1: int = 5
    tmax: float | None = None
    rule: str = "doubling"
    factor: float | None = None
    lr: float = 1e-3
    optimizer: str = "adam"
    batch_size: int = 100
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    update_mode: str = "online"
    prior_rate: float = 0.1
    diag_chain_length: int = 0
    diag_burn_in: int = 50
    diag_chains: int = 16

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.N1 < 0:
            raise ConfigError("N1 must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigError("batch_size must be >= 1 and max_epochs >= 0")
        if self.update_mode not in ("online", "accumulated"):
            raise ConfigError(f"unknown update mode {self.update_mode!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown training options {sorted(unknown)}")
        return cls(**d)


def resolve_tmax(op, points, config):
    if config.tmax is not None:
        return max(float(config.tmax), 1.0)
    if isinstance(op, GaussianOperator):
        return tmax_from_variance(total_variance(points), op.base_variance)
    raise ConfigError("tmax must be given for operators without a base noise variance")


@dataclass
class TrainResult:
    op: object
    log: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_bound: float = -math.inf
    Tmax: float = 1.0
    stopped_early: bool = False


def validation_bound(op, points, Tmax, config, rng):
    """Mean per-trajectory bound over ``points`` with the longest schedule (n = N1)."""
    schedule = make_heating(Tmax, config.N1, config.rule, config.factor)
    total, count = 0.0, 0
    for start in range(0, len(points), config.batch_size):
        traj = heat_trajectory(op, schedule, points[start:start + config.batch_size], rng)
        w = traj.log_weights()
        total += float(w.sum())
        count += w.size
    return total / max(count, 1)


def _diagnostics(op, config, rng):
    if config.diag_chain_length <= config.diag_burn_in:
        return math.nan, math.nan
    from .estimators import reversibility_report

    try:
        rep = reversibility_report(op, 1.0, config.diag_chain_length, config.diag_burn_in, rng,
                                   n_chains=config.diag_chains)
    except (ConfigError, OperatorError):
        return math.nan, math.nan
    return rep.kl_per_step, rep.ratio


def save_training_checkpoint(path, op, optimizer, state, best=None):
    """Resumable state: current operator, optimizer moments, loop state and
    (optionally) the best operator so far under ``best.``-prefixed keys."""
    arrays, meta = op.to_arrays()
    opt_arrays, opt_meta = optimizer.state()
    write_meta = {"operator": meta, "optimizer": opt_meta, "training": state}
    extra = {}
    if best is not None:
        extra = {f"best.{k}": v for k, v in best[0].items()}
        write_meta["best_operator"] = best[1]
    ckpt.write_checkpoint(path, {**arrays, **opt_arrays, **extra}, write_meta)


def load_operator(path):
    """Operator stored at ``path``; training checkpoints yield their best state."""
    arrays, meta = ckpt.read_checkpoint(path)
    if "best_operator" in meta:
        best = {k[5:]: v for k, v in arrays.items() if k.startswith("best.")}
        return operator_from_arrays(best, meta["best_operator"]), meta
    op_meta = meta["operator"] if "operator" in meta else meta
    return operator_from_arrays(arrays, op_meta), meta


def write_log_csv(path, rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=LOG_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row[k] for k in LOG_FIELDS})
    ckpt.atomic_write_text(path, buf.getvalue())


def train(op, train_points, val_points, config=None, checkpoint_path=None, log_path=None,
          resume_from=None, on_epoch=None):
    """Train ``op`` in place by walkback updates with early stopping.

    Every minibatch draws ``n`` uniformly in {0..N1}, heats the batch for
    ``n`` flat steps plus the heated steps up to ``Tmax``, walks it back, and
    moves the prior toward the terminal states.  The operator is restored to
    its best-validation parameters before returning.
    """
    config = config or TrainConfig()
    train_points = op.prepare(train_points)
    val_points = op.prepare(val_points)
    if len(train_points) == 0 or len(val_points) == 0:
        raise ConfigError("training and validation sets must be non-empty")
    optimizer = make_optimizer(config.optimizer, config.lr)
    rng = np.random.default_rng(config.seed)
    Tmax = resolve_tmax(op, train_points, config)
    n_heat = n_heated(Tmax, config.rule, config.factor)
    if op.n_levels > 1 and op.n_levels < n_heat + 1:
        log.warning("per-level tables cover %d levels for %d levels; the hottest steps share the last row",
                    op.n_levels, n_heat + 1)
    if hasattr(op.prior, "from_data") and resume_from is None:
        if hasattr(op, "dim"):
            op.prior = type(op.prior).from_data(train_points, config.prior_rate)
        else:
            op.prior = type(op.prior).from_data(train_points, op.n_states, config.prior_rate)

    result = TrainResult(op=op, Tmax=Tmax)
    start_epoch, stale = 1, 0
    best_state = _frozen_state(op)
    if resume_from is not None:
        arrays, meta = ckpt.read_checkpoint(resume_from)
        restored = operator_from_arrays(arrays, meta["operator"])
        _copy_params(restored, op)
        op.prior = restored.prior
        optimizer.load_state(arrays, meta["optimizer"])
        st = meta["training"]
        best_state = ({k[5:]: v for k, v in arrays.items() if k.startswith("best.")},
                      meta["best_operator"])
        rng = ckpt.rng_from_state(st["rng"])
        start_epoch = st["epoch"] + 1
        stale = st["stale"]
        result.best_epoch = st["best_epoch"]
        result.best_val_bound = st["best_val_bound"]
        result.log = st["log"]

    eval_seed = int(np.random.SeedSequence(config.seed).generate_state(1)[0])
    for epoch in range(start_epoch, config.max_epochs + 1):
        order = rng.permutation(len(train_points))
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = train_points[order[start:start + config.batch_size]]
            n = int(rng.integers(0, config.N1 + 1))
            schedule = make_heating(Tmax, n, config.rule, config.factor)
            traj = heat_trajectory(op, schedule, batch, rng)
            bounds = walkback_update(op, traj, optimizer, config.update_mode)
            op.prior = op.prior.updated(traj.states[-1])
            total += float(bounds.sum())
            count += bounds.size
        val = validation_bound(op, val_points, Tmax, config, np.random.default_rng(eval_seed))
        if not np.isfinite(val):
            raise TrainingError(f"validation bound diverged at epoch {epoch}: {val}")
        kl, ratio = _diagnostics(op, config, np.random.default_rng(eval_seed + 1))
        row = {"epoch": epoch, "train_bound": total / count, "val_bound": val,
               "reversibility_kl": kl, "reversibility_ratio": ratio}
        result.log.append(row)
        log.info("epoch %d train %.4f val %.4f", epoch, row["train_bound"], val)
        if val > result.best_val_bound:
            result.best_val_bound, result.best_epoch, stale = val, epoch, 0
            best_state = _frozen_state(op)
        else:
            stale += 1
        if checkpoint_path is not None:
            save_training_checkpoint(checkpoint_path, op, optimizer, {
                "epoch": epoch, "stale": stale, "best_epoch": result.best_epoch,
                "best_val_bound": result.best_val_bound, "rng": ckpt.rng_state(rng),
                "log": result.log, "Tmax": Tmax, "config": config.to_dict()}, best_state)
        if log_path is not None:
            write_log_csv(log_path, result.log)
        if on_epoch is not None:
            on_epoch(epoch, op)
        if stale >= config.patience:
            result.stopped_early = True
            break
    restored = operator_from_arrays(*best_state)
    _copy_params(restored, op)
    op.prior = restored.prior
    return result


def _frozen_state(op):
    arrays, meta = op.to_arrays()
    return {k: np.array(v, copy=True) for k, v in arrays.items()}, meta


def _copy_params(src, dst):
    for p_dst, p_src in zip(dst.params(), src.params()):
        p_dst[...] = p_src
    dst.zero_grad()
    dst.mark_updated()


def cool(op, cooling, n, rng, start=None, every_k=0):
    """Generate ``n`` samples: draw ``s_K ~ p*`` and apply the cooling steps.

    With ``every_k > 0`` also returns every ``every_k``-th intermediate batch
    as a list of ``(step, states)`` (step 0 is the prior draw).
    """
    s = op.prior.sample(n, rng) if start is None else _batched(op, start)
    dump = [(0, s)] if every_k else None
    for t, T, level in cooling.steps():
        s = op.sample(s, T, rng, level)
        if not np.all(np.isfinite(s)):
            raise OperatorError(f"non-finite state at cooling step {t} (T={T})")
        if every_k and t % every_k == 0:
            dump.append((t, s))
    return (s, dump) if every_k else s

"""Monte-Carlo bound and likelihood estimators, reversibility diagnostics and
divergence utilities (JS, Jeffreys, hysteresis).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .errors import ConfigError, WalkbackError
from .training import Trajectory, _batched, heat_trajectory

LOG2 = math.log(2.0)


@dataclass(frozen=True)
class BoundEstimate:
    mean: float
    std_error: float
    n_trajectories: int

    def to_dict(self):
        return {"mean": self.mean, "std_error": self.std_error, "n_trajectories": self.n_trajectories}


@dataclass(frozen=True)
class ReversibilityReport:
    kl_per_step: float
    entropy_per_step: float
    ratio: float
    chain_length: int
    burn_in: int
    kl_std_error: float = math.nan
    n_chains: int = 1

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _replicate(op, x, n):
    x = _batched(op, x)
    if x.shape[0] != 1:
        raise ConfigError("expected a single data point")
    return np.repeat(x, n, axis=0)


def trajectory_weights(op, schedule, x, n_traj, rng):
    """Log importance weights of ``n_traj`` heated trajectories from ``x``."""
    if n_traj < 1:
        raise ConfigError("n_traj must be >= 1")
    return heat_trajectory(op, schedule, _replicate(op, x, n_traj), rng).log_weights()


def score_path(op, schedule, states):
    """Score given paths ``states[0..K]`` (each a batch) as heated trajectories."""
    if len(states) != schedule.K + 1:
        raise ConfigError("need K + 1 states")
    states = [_batched(op, s) for s in states]
    B = states[0].shape[0]
    fwd = np.empty((schedule.K, B))
    bwd = np.empty((schedule.K, B))
    for t, T, level in schedule.steps():
        fwd[t - 1] = op.log_density(states[t - 1], states[t], T, level)
        bwd[t - 1] = op.log_density(states[t], states[t - 1], T, level)
    return Trajectory(states, tuple(schedule.temps), tuple(schedule.levels), fwd, bwd,
                      np.atleast_1d(op.prior.log_density(states[-1])))


def bound_from_weights(w):
    w = np.asarray(w, dtype=np.float64)
    se = float(w.std(ddof=1) / math.sqrt(w.size)) if w.size > 1 else 0.0
    return BoundEstimate(float(w.mean()), se, int(w.size))


def log_mean_exp(w):
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0 or np.all(w == -np.inf):
        raise WalkbackError("all importance weights are zero")
    return float(logsumexp(w) - math.log(w.size))


def elbo_estimate(op, schedule, x, n_traj, rng):
    """Mean and standard error of the single-trajectory bound at ``x``."""
    return bound_from_weights(trajectory_weights(op, schedule, x, n_traj, rng))


def is_loglik(op, schedule, x, n_traj, rng):
    """Importance-sampling estimate of ``log p(x)`` with heated trajectories as proposal."""
    return log_mean_exp(trajectory_weights(op, schedule, x, n_traj, rng))


def evaluate_points(op, schedule, points, n_traj, seed, threads=1):
    """Per-point bound and IS estimates over a dataset.

    Point ``i`` always uses the ``i``-th child of ``SeedSequence(seed)``, so
    results do not depend on ``threads``.
    """
    points = op.prepare(points)
    children = np.random.SeedSequence(seed).spawn(len(points))

    def one(i):
        w = trajectory_weights(op, schedule, points[i:i + 1], n_traj, np.random.default_rng(children[i]))
        return float(w.mean()), log_mean_exp(w)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(one, range(len(points))))
    else:
        rows = [one(i) for i in range(len(points))]
    elbo = np.array([r[0] for r in rows])
    isll = np.array([r[1] for r in rows])
    n = max(len(rows), 1)
    return {
        "n_points": len(rows),
        "n_traj": n_traj,
        "elbo_mean": float(elbo.mean()),
        "elbo_se": float(elbo.std(ddof=1) / math.sqrt(n)) if len(rows) > 1 else 0.0,
        "is_loglik_mean": float(isll.mean()),
        "is_loglik_se": float(isll.std(ddof=1) / math.sqrt(n)) if len(rows) > 1 else 0.0,
    }


# -- reversibility ------------------------------------------------------------


def _chain_logps(op, T, chain_length, burn_in, rng, n_chains, start):
    s = op.prior.sample(n_chains, rng) if start is None else _batched(op, start)
    n_rec = chain_length - burn_in
    fwd = np.empty((n_rec, s.shape[0]))
    rev = np.empty((n_rec, s.shape[0]))
    if hasattr(op, "walk"):
        path = op.walk(s, T, chain_length, rng)[:, burn_in:]
        P = op.matrix(T)
        a, b = path[:, :-1], path[:, 1:]
        clamp = 1e-12
        return (np.log(np.maximum(P[a, b], clamp)).T, np.log(np.maximum(P[b, a], clamp)).T)
    for _ in range(burn_in):
        s = op.sample(s, T, rng, 0)
    for k in range(n_rec):
        nxt = op.sample(s, T, rng, 0)
        fwd[k] = op.log_density(s, nxt, T, 0)
        rev[k] = op.log_density(nxt, s, T, 0)
        s = nxt
    return fwd, rev


def reversibility_report(op, T, chain_length, burn_in=50, rng=None, n_chains=1, start=None,
                         n_batches=10):
    """Irreversibility of ``p_T`` from long chains at fixed temperature.

    Each chain runs ``chain_length`` steps; the first ``burn_in`` are
    discarded.  ``kl_per_step`` averages ``log p_T(s'|s) - log p_T(s|s')``
    over recorded transitions, ``entropy_per_step`` averages
    ``-log p_T(s'|s)``.  The standard error uses batch means.
    """
    if chain_length <= burn_in or burn_in < 0:
        raise ConfigError("chain_length must exceed burn_in")
    rng = np.random.default_rng() if rng is None else rng
    fwd, rev = _chain_logps(op, T, chain_length, burn_in, rng, n_chains, start)
    d = fwd - rev
    kl = float(d.mean())
    entropy = float(-fwd.mean())
    if entropy == 0.0:
        raise ConfigError("entropy estimate is zero; ratio undefined")
    n_rec = d.shape[0]
    nb = max(1, min(n_batches, n_rec))
    usable = (n_rec // nb) * nb
    means = d[:usable].reshape(nb, usable // nb, -1).mean(axis=1).ravel()
    se = float(means.std(ddof=1) / math.sqrt(means.size)) if means.size > 1 else math.nan
    return ReversibilityReport(kl, entropy, kl / entropy, int(chain_length), int(burn_in), se,
                               int(d.shape[1]))


# -- path ensembles -----------------------------------------------------------


def protocol_logratios(op, temps, start, end, n_paths, rng, reverse=False):
    """Log path-probability ratios between a protocol and its time reversal.

    The forward protocol draws ``x_0 ~ start`` and steps through ``temps``;
    the reverse protocol draws from ``end`` and steps through ``temps``
    backwards.  For paths drawn from the forward (``reverse=False``) ensemble
    this returns ``log P_F[x] - log P_R[reversed x]``; with ``reverse=True``
    paths come from the reverse ensemble and the ratio is flipped.  ``start``
    and ``end`` need ``sample(n, rng)`` and ``log_density(states)``.
    """
    temps = tuple(temps)
    first, last = (end, start) if reverse else (start, end)
    run = tuple(reversed(temps)) if reverse else temps
    s = first.sample(n_paths, rng)
    lp_run = np.array(first.log_density(s), dtype=np.float64)
    lp_back = np.zeros(n_paths)
    for T in run:
        nxt = op.sample(s, T, rng, 0)
        lp_run += op.log_density(s, nxt, T, 0)
        lp_back += op.log_density(nxt, s, T, 0)
        s = nxt
    lp_back += last.log_density(s)
    return lp_run - lp_back


def hysteresis_estimate(forward_logratios, reverse_logratios):
    """Half the summed mean dissipation of a protocol and its reversal.

    With equilibrium endpoints this estimates half the Jeffreys divergence
    between the forward and reverse path ensembles.
    """
    f = np.asarray(forward_logratios, dtype=np.float64)
    r = np.asarray(reverse_logratios, dtype=np.float64)
    if f.size == 0 or r.size == 0:
        raise ConfigError("need non-empty log-ratio samples")
    return 0.5 * (float(f.mean()) + float(r.mean()))


def hysteresis_std_error(forward_logratios, reverse_logratios):
    f = np.asarray(forward_logratios, dtype=np.float64)
    r = np.asarray(reverse_logratios, dtype=np.float64)
    return 0.5 * math.sqrt(f.var(ddof=1) / f.size + r.var(ddof=1) / r.size)


# -- divergences --------------------------------------------------------------


def _distribution(p, name):
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ConfigError(f"{name} is not a probability vector")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ConfigError(f"{name} sums to {p.sum()}, not 1")
    return p


def _pair(p, q):
    p, q = _distribution(p, "p"), _distribution(q, "q")
    if p.shape != q.shape:
        raise ConfigError(f"support mismatch: {p.size} vs {q.size} outcomes")
    return p, q


def kl_divergence(p, q):
    """``KL(p || q)`` in nats; infinite when q misses mass of p."""
    p, q = _pair(p, q)
    mask = p > 0
    if np.any(q[mask] == 0):
        return math.inf
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def js_divergence(p, q, pi=0.5):
    """Generalised Jensen-Shannon divergence with mixture weight ``pi`` on ``p``.

    Equals the mutual information between the label ``s`` (``P(s=1) = pi``
    selects ``p``) and a draw from the mixture; ``pi = 1/2`` gives the usual
    JS divergence.
    """
    p, q = _pair(p, q)
    if not 0.0 <= pi <= 1.0:
        raise ConfigError("pi must lie in [0, 1]")
    m = pi * p + (1 - pi) * q
    out = 0.0
    if pi > 0:
        out += pi * kl_divergence(p, m)
    if pi < 1:
        out += (1 - pi) * kl_divergence(q, m)
    return max(out, 0.0)


def mutual_information(joint):
    joint = np.asarray(joint, dtype=np.float64)
    rows = joint.sum(axis=1, keepdims=True)
    cols = joint.sum(axis=0, keepdims=True)
    mask = joint > 0
    i, j = np.nonzero(mask)
    # logs taken separately so tiny marginals do not underflow as a product
    log_ratio = np.log(joint[mask]) - np.log(rows[i, 0]) - np.log(cols[0, j])
    return float(np.sum(joint[mask] * log_ratio))


def mutual_info_identity_check(p, q, pi=0.5):
    """``(js, mi, js - mi)`` with MI taken from the explicit label/outcome table."""
    p, q = _pair(p, q)
    js = js_divergence(p, q, pi)
    mi = mutual_information(np.vstack([pi * p, (1 - pi) * q]))
    return js, mi, js - mi


def _kl_bound_term(kl):
    # log(2 / (1 + exp(-kl))), reaching log 2 as kl -> inf
    if math.isinf(kl):
        return LOG2
    return LOG2 - math.log1p(math.exp(-kl))


@dataclass(frozen=True)
class JeffreysCheck:
    js: float
    kl_pq: float
    kl_qp: float
    jeffreys: float
    bound1: float
    bound2: float
    infinite: bool

    def as_tuple(self):
        return (self.js, self.kl_pq, self.kl_qp, self.jeffreys, self.bound1, self.bound2)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def jeffreys_bound_check(p, q, slack=1e-12):
    """JS divergence with its KL-based upper bounds.

    ``bound1 = 1/2 g(KL(p||q)) + 1/2 g(KL(q||p))`` and
    ``bound2 = g(Jeffreys / 2)`` with ``g(k) = log(2 / (1 + e^-k))``;
    raises ``AssertionError`` if ``js <= bound1 <= bound2`` fails beyond ``slack``.
    """
    p, q = _pair(p, q)
    js = js_divergence(p, q)
    kl_pq, kl_qp = kl_divergence(p, q), kl_divergence(q, p)
    jeff = kl_pq + kl_qp
    b1 = 0.5 * _kl_bound_term(kl_pq) + 0.5 * _kl_bound_term(kl_qp)
    b2 = _kl_bound_term(0.5 * jeff)
    if not (js <= b1 + slack and b1 <= b2 + slack):
        raise AssertionError(f"bound chain violated: js={js} bound1={b1} bound2={b2}")
    return JeffreysCheck(js, kl_pq, kl_qp, jeff, b1, b2, math.isinf(jeff))


def energy_distance(x, y):
    """Energy distance ``2 E|X-Y| - E|X-X'| - E|Y-Y'|`` between two samples
    (V-statistic form, Euclidean norm)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    return float(2.0 * cdist(x, y).mean() - cdist(x, x).mean() - cdist(y, y).mean())

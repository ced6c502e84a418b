"""Exact computations on finite state spaces.

Ground truth for the Monte-Carlo estimators: marginals of the cooling
process, the bound/posterior-KL decomposition, time reversal, the split of
the posterior KL into an irreversibility and an annealing term, and exact
path-ensemble divergences.  Convention: ``P[i, j] = P_T(j | i)`` (rows sum
to one); heating applies ``P`` forward, cooling applies it backwards in time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import kernels
from .errors import ConfigError
from .operators import CategoricalPrior, MatrixOperator

MAX_STATES = 64
MAX_PATHS = 1 << 22
ROW_TOL = 1e-12
IDENTITY_TOL = 1e-10


def check_stochastic(P, tol=ROW_TOL):
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ConfigError(f"transition matrix must be square, got {P.shape}")
    if np.any(P < 0) or not np.all(np.isfinite(P)):
        raise ConfigError("transition matrix has negative or non-finite entries")
    err = np.abs(P.sum(axis=1) - 1.0).max()
    if err > tol:
        raise ConfigError(f"transition rows sum to 1 only within {err:.3g}")
    return P


def _check_distribution(p, n, name):
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (n,) or np.any(p < 0) or abs(p.sum() - 1.0) > ROW_TOL:
        raise ConfigError(f"{name} must be a normalized vector of length {n}")
    return p


class DiscreteChain:
    """Finite chain: ``transition(T)`` gives ``P_T``; ``data_dist`` is
    ``q(s_0)`` and ``prior`` is ``p*(s_K)``.
    """

    def __init__(self, n_states, transition, data_dist=None, prior=None):
        n_states = int(n_states)
        if not 1 <= n_states <= MAX_STATES:
            raise ConfigError(f"n_states must lie in [1, {MAX_STATES}], got {n_states}")
        self.n_states = n_states
        if isinstance(transition, dict):
            table = {float(T): check_stochastic(P) for T, P in transition.items()}
            self.temperatures = tuple(sorted(table))

            def transition(T, _table=table):
                for key, P in _table.items():
                    if abs(key - T) <= 1e-9 * max(1.0, abs(T)):
                        return P
                raise ConfigError(f"chain has no matrix for temperature {T}")
        else:
            self.temperatures = None
        self._transition = transition
        uniform = np.full(n_states, 1.0 / n_states)
        self.data_dist = _check_distribution(uniform if data_dist is None else data_dist, n_states, "data_dist")
        self.prior = _check_distribution(uniform if prior is None else prior, n_states, "prior")
        self._cache = {}

    def P(self, T):
        T = float(T)
        if T not in self._cache:
            P = check_stochastic(self._transition(T))
            if P.shape[0] != self.n_states:
                raise ConfigError(f"matrix at T={T} has {P.shape[0]} states, expected {self.n_states}")
            self._cache[T] = P
        return self._cache[T]

    def with_prior(self, prior):
        return DiscreteChain(self.n_states, self._transition, self.data_dist, prior)

    def as_operator(self):
        """Wrap as a :class:`MatrixOperator` so sampling code runs unchanged."""
        return MatrixOperator(self.P, self.n_states, CategoricalPrior(self.prior))


def chain_from_operator(op, data_dist=None):
    """Exact chain view of a discrete operator (tabular or matrix).

    The chain knows only temperatures, so the operator must use one table
    for every schedule level.
    """
    if op.n_levels > 1:
        raise ConfigError("operator has per-level tables; a chain view needs a single table")
    return DiscreteChain(op.n_states, op.matrix, data_dist, op.prior.probs)


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


# -- marginals ----------------------------------------------------------------


def exact_marginal(chain, schedule):
    """``p(s_0)``: start from ``p*`` and apply ``P_{T_K}, ..., P_{T_1}``."""
    p = chain.prior.copy()
    for T in reversed(schedule.temps):
        p = p @ chain.P(T)
    return p


def heating_marginals(chain, schedule, s0):
    """Marginals ``q(s_t | s_0)`` for t = 0..K."""
    m = np.zeros(chain.n_states)
    m[s0] = 1.0
    out = [m]
    for T in schedule.temps:
        m = m @ chain.P(T)
        out.append(m)
    return out


def enumerate_paths(n_states, K, s0):
    """All paths ``(s_0, ..., s_K)`` from ``s0`` in lexicographic order."""
    if K == 0:
        return np.array([[s0]], dtype=np.int64)
    grids = np.indices((n_states,) * K).reshape(K, -1).T
    return np.hstack([np.full((grids.shape[0], 1), s0, dtype=np.int64), grids.astype(np.int64)])


def _path_count(n, K):
    return n ** K


def _check_enumerable(chain, K):
    if _path_count(chain.n_states, K) > MAX_PATHS:
        raise ConfigError(f"{chain.n_states}^{K} paths exceed the enumeration cap {MAX_PATHS}")


def path_log_probs(chain, schedule, s0):
    """``(log q(s_1^K | s_0), log p(s_0, s_1^K))`` for every path from ``s0``."""
    K = schedule.K
    _check_enumerable(chain, K)
    n = chain.n_states
    logP = np.array([_log(chain.P(T)) for T in schedule.temps]).reshape(K, n, n)
    log_q = kernels.path_sums(logP, s0)
    log_p = kernels.path_sums(np.ascontiguousarray(logP.transpose(0, 2, 1)), s0)
    last = np.tile(np.arange(n), n ** (K - 1)) if K > 0 else np.array([s0])
    log_p = log_p + _log(chain.prior)[last]
    return log_q, log_p


@dataclass(frozen=True)
class Decomposition:
    log_marginal: float
    elbo: float
    kl_posterior: float
    residual: float
    method: str


def _expect_pairs(chain, schedule, s0, f):
    """``sum_t E_q[f(t, T_t, P_t)[s_{t-1}, s_t]]`` by forward recursion."""
    m = np.zeros(chain.n_states)
    m[s0] = 1.0
    total = 0.0
    for t, T, _ in schedule.steps():
        P = chain.P(T)
        with np.errstate(invalid="ignore"):
            vals = f(t, T, P)
        w = m[:, None] * P
        mask = w > 0
        total += float(np.sum(w[mask] * vals[mask]))
        m = m @ P
    return total, m


def _expect(dist, vals):
    mask = dist > 0
    return float(np.sum(dist[mask] * vals[mask]))


def exact_decomposition(chain, schedule, s0, method="auto"):
    """``log p(s_0) = elbo + KL(q(s_1^K | s_0) || p(s_1^K | s_0))``.

    ``method="enumerate"`` sums over every path (capped at ``MAX_PATHS``);
    ``"dp"`` takes the bound from pairwise marginals and the KL as the
    difference, so its identity holds by construction.  ``"auto"`` enumerates
    whenever the path count allows.
    """
    p0 = exact_marginal(chain, schedule)[s0]
    if p0 <= 0:
        raise ConfigError(f"state {s0} has zero marginal probability")
    log_marginal = math.log(p0)
    if method == "auto":
        method = "enumerate" if _path_count(chain.n_states, schedule.K) <= MAX_PATHS else "dp"
    if method == "enumerate":
        log_q, log_p = path_log_probs(chain, schedule, s0)
        q = np.exp(log_q)
        mask = q > 0
        elbo = float(np.sum(q[mask] * (log_p[mask] - log_q[mask])))
        log_post = log_p[mask] - log_marginal
        kl = float(np.sum(q[mask] * (log_q[mask] - log_post)))
    elif method == "dp":
        step_terms, m_K = _expect_pairs(chain, schedule, s0, lambda t, T, P: _log(P.T) - _log(P))
        elbo = step_terms + _expect(m_K, _log(chain.prior))
        kl = log_marginal - elbo
    else:
        raise ConfigError(f"unknown method {method!r}")
    residual = log_marginal - (elbo + kl)
    if not abs(residual) <= IDENTITY_TOL * max(1.0, abs(log_marginal)) and np.isfinite(elbo):
        raise AssertionError(f"decomposition residual {residual}")
    return Decomposition(log_marginal, elbo, kl, residual, method)


# -- stationarity and time reversal -------------------------------------------


def is_irreducible(P):
    n_comp, _ = connected_components(np.asarray(P) > 0, directed=True, connection="strong")
    return n_comp == 1


def stationary_distribution(P, tol=1e-13, max_iter=100_000):
    """Stationary vector of an irreducible ``P``.

    Seeded from the leading left eigenvector, then refined by power
    iteration on the lazy chain ``(I + P) / 2`` (same fixed point, aperiodic)
    until ``||pi P - pi||_1 < tol``.
    """
    P = check_stochastic(P)
    if not is_irreducible(P):
        raise ConfigError("transition matrix is reducible")
    vals, vecs = np.linalg.eig(P.T)
    v = np.abs(np.real(vecs[:, np.argmin(np.abs(vals - 1.0))]))
    pi = v / v.sum() if v.sum() > 0 else np.full(P.shape[0], 1.0 / P.shape[0])
    lazy = 0.5 * (np.eye(P.shape[0]) + P)
    for _ in range(max_iter):
        if np.abs(pi @ P - pi).sum() < tol:
            break
        pi = pi @ lazy
        pi /= pi.sum()
    return pi


def time_reversal(P):
    """``(pi, P_R)`` with ``P_R[i, j] = P[j, i] pi[j] / pi[i]``."""
    pi = stationary_distribution(P)
    P = np.asarray(P, dtype=np.float64)
    PR = P.T * pi[None, :] / pi[:, None]
    PR /= PR.sum(axis=1, keepdims=True)
    return pi, PR


def detailed_balance_residual(P, pi=None):
    P = np.asarray(P, dtype=np.float64)
    pi = stationary_distribution(P) if pi is None else np.asarray(pi)
    flow = pi[:, None] * P
    return float(np.abs(flow - flow.T).max())


def stationarity_check(P, dist):
    """Total-variation residual ``1/2 ||dist P - dist||_1``."""
    P = np.asarray(P, dtype=np.float64)
    dist = np.asarray(dist, dtype=np.float64)
    if P.shape != (dist.size, dist.size):
        raise ConfigError("matrix and distribution shapes disagree")
    return 0.5 * float(np.abs(dist @ P - dist).sum())


def total_variation(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def stationary_kl(P):
    """``KL(pi(s) P(s'|s) || pi(s') P(s|s'))``: the per-step irreversibility."""
    pi = stationary_distribution(P)
    P = np.asarray(P, dtype=np.float64)
    flow = pi[:, None] * P
    mask = flow > 0
    if np.any(flow.T[mask] == 0):
        return math.inf
    return float(np.sum(flow[mask] * (np.log(flow[mask]) - np.log(flow.T[mask]))))


# -- KL split -----------------------------------------------------------------


@dataclass(frozen=True)
class KLSplit:
    irreversibility_term: float
    annealing_term: float
    kl_posterior: float
    residual: float
    method: str


def kl_split(chain, schedule, s0, method="auto"):
    """Split the posterior KL into irreversibility and annealing terms.

    ``irreversibility = E_q[sum_t log P_t(s_t|s_{t-1}) / P^R_t(s_t|s_{t-1})]``
    and ``annealing = E_q[log p(s_0)/p*(s_K) + sum_t log pi_t(s_t)/pi_t(s_{t-1})]``.
    """
    dec = exact_decomposition(chain, schedule, s0, method)
    reversal = {T: time_reversal(chain.P(T)) for T in set(schedule.temps)}
    n = chain.n_states
    if dec.method == "enumerate":
        K = schedule.K
        logq, _ = path_log_probs(chain, schedule, s0)
        q = np.exp(logq)
        with np.errstate(invalid="ignore"):
            irr_A = np.array([_log(chain.P(T)) - _log(reversal[T][1])
                              for T in schedule.temps]).reshape(K, n, n)
        ann_A = np.array([_log(reversal[T][0])[None, :] - _log(reversal[T][0])[:, None]
                          for T in schedule.temps]).reshape(K, n, n)
        irr_path = kernels.path_sums(irr_A, s0)
        ann_path = kernels.path_sums(ann_A, s0)
        last = np.tile(np.arange(n), n ** (K - 1)) if K > 0 else np.array([s0])
        ann_path = ann_path + dec.log_marginal - _log(chain.prior)[last]
        mask = q > 0
        irr = float(np.sum(q[mask] * irr_path[mask]))
        ann = float(np.sum(q[mask] * ann_path[mask]))
    else:
        def irr_f(t, T, P):
            with np.errstate(invalid="ignore"):
                return _log(P) - _log(reversal[T][1])

        def ann_f(t, T, P):
            lp = np.log(reversal[T][0])
            return lp[None, :] - lp[:, None]

        irr, _ = _expect_pairs(chain, schedule, s0, irr_f)
        steps, m_K = _expect_pairs(chain, schedule, s0, ann_f)
        ann = dec.log_marginal - _expect(m_K, _log(chain.prior)) + steps
    residual = irr + ann - dec.kl_posterior
    if not abs(residual) <= IDENTITY_TOL * max(1.0, abs(dec.kl_posterior)):
        raise AssertionError(f"KL split residual {residual}")
    return KLSplit(irr, ann, dec.kl_posterior, residual, dec.method)


# -- path ensembles -----------------------------------------------------------


def protocol_path_divergences(chain, temps, start, end):
    """Exact ``(KL(P_F || P_R), KL(P_R || P_F))`` over all paths of ``len(temps)`` steps.

    ``P_F`` starts from ``start`` and applies ``temps`` in order; ``P_R``
    starts from ``end`` and applies them in reverse, compared on reversed paths.
    """
    temps = tuple(temps)
    L = len(temps)
    n = chain.n_states
    if n ** (L + 1) > MAX_PATHS:
        raise ConfigError("too many paths to enumerate")
    paths = np.indices((n,) * (L + 1)).reshape(L + 1, -1).T
    log_f = _log(np.asarray(start))[paths[:, 0]]
    log_r = _log(np.asarray(end))[paths[:, -1]]
    for t, T in enumerate(temps, start=1):
        P = chain.P(T)
        log_f = log_f + _log(P[paths[:, t - 1], paths[:, t]])
        log_r = log_r + _log(P[paths[:, t], paths[:, t - 1]])
    pf, pr = np.exp(log_f), np.exp(log_r)
    mf, mr = pf > 0, pr > 0
    kl_fr = float(np.sum(pf[mf] * (log_f[mf] - log_r[mf])))
    kl_rf = float(np.sum(pr[mr] * (log_r[mr] - log_f[mr])))
    return kl_fr, kl_rf


# -- families and file format -------------------------------------------------


def metropolis_family(energies):
    """``T -> P_T`` Metropolis chain with uniform proposals and target
    ``pi_T ∝ exp(-E / T)``; reversible at every temperature.
    """
    E = np.asarray(energies, dtype=np.float64)
    n = E.size

    def transition(T):
        accept = np.minimum(1.0, np.exp(-(E[None, :] - E[:, None]) / T))
        P = accept / (n - 1)
        np.fill_diagonal(P, 0.0)
        np.fill_diagonal(P, 1.0 - P.sum(axis=1))
        return P

    return transition


def heat_bath_family(energies):
    """``T -> P_T`` with every row equal to ``pi_T``: each step redraws the
    state from equilibrium, so the chain is reversible at every temperature.
    """
    E = np.asarray(energies, dtype=np.float64)

    def transition(T):
        return np.tile(boltzmann(E, T), (E.size, 1))

    return transition


def boltzmann(energies, T):
    w = np.exp(-(np.asarray(energies) - np.min(energies)) / T)
    return w / w.sum()


def random_stochastic(n, rng, concentration=1.0):
    return rng.dirichlet(np.full(n, concentration), size=n)


def random_reversible(n, rng):
    """Random irreducible matrix satisfying detailed balance."""
    S = rng.random((n, n)) + 0.05
    S = S + S.T
    return S / S.sum(axis=1, keepdims=True)


def random_tempered_family(n, rng):
    """Random logits ``L``; ``P_T = softmax(L / T)`` row-wise."""
    L = rng.normal(size=(n, n)) * 2.0

    def transition(T):
        a = L / T
        a = a - a.max(axis=1, keepdims=True)
        e = np.exp(a)
        return e / e.sum(axis=1, keepdims=True)

    return transition


def load_chain(path):
    """Read the plain-text chain format.

    Lines: ``states N``, optional ``data p_1 ... p_N`` and ``prior ...``, then
    one block per temperature: ``T <value>`` followed by N rows of N
    probabilities.  ``#`` starts a comment; blank lines are ignored.
    Returns ``(chain, block_temperatures_in_file_order)``.
    """
    n = None
    data = prior = None
    blocks = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            head, *rest = line.replace(",", " ").split()
            try:
                if head == "states":
                    n = int(rest[0])
                elif head == "data":
                    data = np.array([float(v) for v in rest])
                elif head == "prior":
                    prior = np.array([float(v) for v in rest])
                elif head == "T":
                    blocks.append((float(rest[0]), []))
                else:
                    if not blocks:
                        raise ConfigError("matrix row before any 'T' header")
                    blocks[-1][1].append([float(v) for v in [head, *rest]])
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"{path}:{lineno}: cannot parse {raw.strip()!r}") from exc
    if n is None:
        raise ConfigError(f"{path}: missing 'states' line")
    if not blocks:
        raise ConfigError(f"{path}: no transition blocks")
    table = {}
    for T, rows in blocks:
        P = np.array(rows, dtype=np.float64)
        if P.shape != (n, n):
            raise ConfigError(f"{path}: block T={T} has shape {P.shape}, expected ({n}, {n})")
        table[T] = P
    return DiscreteChain(n, table, data, prior), [T for T, _ in blocks]


def save_chain(path, chain, temps):
    lines = [f"states {chain.n_states}",
             "data " + " ".join(repr(float(v)) for v in chain.data_dist),
             "prior " + " ".join(repr(float(v)) for v in chain.prior)]
    for T in temps:
        lines.append(f"T {float(T)!r}")
        for row in chain.P(T):
            lines.append(" ".join(repr(float(v)) for v in row))
    from .checkpoint import atomic_write_text
    atomic_write_text(path, "\n".join(lines) + "\n")

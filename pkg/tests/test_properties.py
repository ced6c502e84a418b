"""Randomised invariants across modules."""
import math

import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from walkback import data, oracle
from walkback import estimators as est
from walkback.operators import BernoulliOperator, GaussianOperator
from walkback.schedule import make_heating
from walkback.training import heat_trajectory

seeds = st.integers(0, 2 ** 32 - 1)


def _dist(seed, n, sparse=False):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.full(n, 0.5))
    if sparse:
        p[rng.random(n) < 0.3] = 0
        if p.sum() == 0:
            p[0] = 1
        p /= p.sum()
    return p


@settings(max_examples=200, deadline=None)
@given(seeds, seeds, st.integers(2, 16), st.booleans())
def test_js_bound_chain(s1, s2, n, sparse):
    p, q = _dist(s1, n, sparse), _dist(s2, n, sparse)
    c = est.jeffreys_bound_check(p, q, slack=0.0)
    assert 0 <= c.js <= c.bound1 <= c.bound2 <= math.log(2) + 1e-15


@settings(max_examples=200, deadline=None)
@given(seeds, seeds, st.integers(2, 12), st.floats(0.0, 1.0))
def test_js_is_mutual_information(s1, s2, n, pi):
    p, q = _dist(s1, n, True), _dist(s2, n, True)
    js, mi, diff = est.mutual_info_identity_check(p, q, pi)
    assert abs(diff) < 1e-12
    assert -1e-15 <= js <= math.log(2) + 1e-12


@settings(max_examples=100, deadline=None)
@given(seeds, seeds, st.integers(2, 10))
def test_js_symmetric_at_half(s1, s2, n):
    p, q = _dist(s1, n), _dist(s2, n)
    assert est.js_divergence(p, q) == est.js_divergence(q, p) or \
        abs(est.js_divergence(p, q) - est.js_divergence(q, p)) < 1e-15


@settings(max_examples=150, deadline=None)
@given(seeds, st.integers(2, 4), st.integers(0, 4), st.integers(0, 3))
def test_decomposition_and_split(seed, n, K, s0):
    rng = np.random.default_rng(seed)
    chain = oracle.DiscreteChain(n, oracle.random_tempered_family(n, rng),
                                 rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n)))
    s0 = s0 % n
    sched = make_heating(2 ** K, int(rng.integers(0, 2)))
    dec = oracle.exact_decomposition(chain, sched, s0)
    assert abs(dec.log_marginal - (dec.elbo + dec.kl_posterior)) < 1e-10
    assert dec.kl_posterior >= -1e-12
    split = oracle.kl_split(chain, sched, s0)
    assert abs(split.irreversibility_term + split.annealing_term - split.kl_posterior) < 1e-10


@settings(max_examples=150, deadline=None)
@given(seeds, st.integers(2, 8))
def test_time_reversal_properties(seed, n):
    P = oracle.random_stochastic(n, np.random.default_rng(seed), concentration=0.7)
    assume(oracle.is_irreducible(P))
    pi, PR = oracle.time_reversal(P)
    assert np.all(PR >= 0)
    assert np.abs(PR.sum(axis=1) - 1).max() < 1e-12
    assert np.abs(pi @ PR - pi).max() < 1e-12
    assert oracle.stationary_kl(P) >= -1e-12


@settings(max_examples=60, deadline=None)
@given(seeds, st.floats(0.05, 50.0), arrays(np.float64, (3, 2), elements=st.floats(-5, 5)))
def test_gaussian_std_floor_and_temperature_scaling(seed, T, x):
    op = GaussianOperator.create(2, (5,), rng=np.random.default_rng(seed))
    _, s1 = op.mean_std(x, 1.0)
    _, sT = op.mean_std(x, T)
    assert np.all(sT >= op.sigma_floor)
    raw1 = s1 > op.sigma_floor
    rawT = sT > op.sigma_floor
    both = raw1 & rawT
    np.testing.assert_allclose(sT[both] ** 2, T * s1[both] ** 2, rtol=1e-12)


@settings(max_examples=60, deadline=None)
@given(seeds, st.floats(0.05, 100.0))
def test_bernoulli_probabilities_in_open_interval(seed, T):
    rng = np.random.default_rng(seed)
    op = BernoulliOperator.create(4, (6,), rng=rng)
    x = (rng.random((5, 4)) < 0.5).astype(float)
    rho = op.probabilities(x, T)
    assert np.all((rho > 0) & (rho < 1))


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(1.0, 300.0), st.integers(0, 4), st.integers(1, 6))
def test_trajectory_consistency(seed, tmax, n_flat, B):
    op = GaussianOperator.create(2, (4,), n_steps=4, rng=np.random.default_rng(seed))
    sched = make_heating(tmax, n_flat)
    traj = heat_trajectory(op, sched, np.zeros((B, 2)), np.random.default_rng(seed))
    assert len(traj.states) == sched.K + 1
    assert traj.fwd_logp.shape == (sched.K, B) == traj.bwd_logp.shape
    assert np.all(np.isfinite(traj.log_weights()))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 4)),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_csv_round_trip_any_floats(tmp_path_factory, pts):
    path = tmp_path_factory.mktemp("csv") / "p.csv"
    data.save_csv(pts, path)
    back = data.load_csv(path).points
    assert np.array_equal(back.reshape(pts.shape), pts)

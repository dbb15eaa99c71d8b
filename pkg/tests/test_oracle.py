import numpy as np
import pytest

from influence_model.model import (
    ModelParams,
    ModelSpec,
    Multinomial,
    MultinomialEmission,
    ObservationSet,
    random_params,
    sample,
    transition_distribution,
)
from influence_model.oracle import exact_filter, exact_loglik, exact_smooth, expand

from helpers import enumerate_joint, hmm_forward, hmm_smooth, random_stochastic


def test_expand_shape_and_stochasticity():
    spec = ModelSpec(2, 2, 2, 1.0, Multinomial(2))
    chain = expand(random_params(spec, 0), spec)
    assert chain.transition.shape == (8, 8)
    np.testing.assert_allclose(chain.transition.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(chain.initial.sum(), 1.0, atol=1e-12)


def test_expand_single_chain_reduces_to_self_transition():
    spec = ModelSpec(1, 3, 1, 0.0, Multinomial(2))
    params = random_params(spec, 1)
    chain = expand(params, spec)
    np.testing.assert_allclose(chain.transition, params.self_transition[0],
                               atol=1e-12)


def test_expand_cap():
    spec = ModelSpec(4, 4, 2, 1.0, Multinomial(2))
    with pytest.raises(ValueError, match="cap"):
        expand(random_params(spec, 0), spec, max_joint_states=100)


def test_codec_round_trip():
    spec = ModelSpec(3, 2, 2, 1.0, Multinomial(2))
    chain = expand(random_params(spec, 2), spec)
    for idx in range(chain.num_joint_states):
        states, pattern = chain.decode(idx)
        assert chain.encode(states, pattern) == idx
        assert all(1 <= s <= 2 for s in states)
        assert 1 <= pattern <= 2


def test_expand_marginalization_recovers_transition_distribution():
    rng = np.random.default_rng(0)
    for _ in range(20):
        c, s, j = int(rng.integers(1, 4)), int(rng.integers(2, 4)), int(rng.integers(1, 3))
        if s ** c * j > 200:
            continue
        spec = ModelSpec(c, s, j, 1.0, Multinomial(2))
        params = random_params(spec, int(rng.integers(1 << 30)))
        chain = expand(params, spec)
        block = s ** c
        prev = tuple(int(x) for x in rng.integers(1, s + 1, size=c))
        r_prev = int(rng.integers(1, j + 1))
        src = chain.encode(prev, r_prev)
        r_next = int(rng.integers(1, j + 1))
        v = params.pattern_transition[r_prev - 1, r_next - 1]
        if v <= 0:
            continue
        dest = chain.transition[src].reshape(j, *([s] * c))[r_next - 1] / v
        for target in range(1, c + 1):
            axes = tuple(a for a in range(c) if a != target - 1)
            marg = dest.sum(axis=axes) if axes else dest
            expected = transition_distribution(params, r_next, target, prev)
            np.testing.assert_allclose(marg, expected, atol=1e-12)


def test_exact_smooth_single_chain_matches_textbook():
    spec = ModelSpec(1, 3, 1, 0.0, Multinomial(3))
    params = random_params(spec, 4)
    rng = np.random.default_rng(5)
    obs = ObservationSet(rng.integers(1, 4, size=(1, 40)))
    chain = expand(params, spec)
    post = exact_smooth(chain, obs)
    lik = params.emission.table[0][:, obs.values[0] - 1].T
    expected = hmm_smooth(params.initial_state[0], params.self_transition[0], lik)
    np.testing.assert_allclose(post.state_marginals[:, 0, :], expected, atol=1e-9)


def test_exact_smooth_matches_enumeration():
    rng = np.random.default_rng(6)
    for trial in range(5):
        j = 1 + trial % 2
        spec = ModelSpec(2, 2, j, 1.0, Multinomial(2))
        params = random_params(spec, 60 + trial)
        obs = ObservationSet(rng.integers(1, 3, size=(2, 3)))
        chain = expand(params, spec)
        post = exact_smooth(chain, obs)
        ll, states, patterns, pairs = enumerate_joint(params, obs.values)
        np.testing.assert_allclose(post.state_marginals, states, atol=1e-9)
        np.testing.assert_allclose(post.pattern_marginals, patterns, atol=1e-9)
        np.testing.assert_allclose(post.pattern_pairs, pairs, atol=1e-9)
        np.testing.assert_allclose(exact_loglik(chain, obs), ll, atol=1e-9)


def test_exact_smooth_deterministic_emissions_pin_states():
    spec = ModelSpec(2, 2, 1, 0.0, Multinomial(2))
    params = random_params(spec, 8)
    table = np.tile(np.eye(2), (2, 1, 1))     # state s emits symbol s only
    params = ModelParams(params.influence, params.self_transition,
                         params.cross_transition, params.pattern_transition,
                         MultinomialEmission(table), params.initial_state,
                         params.initial_pattern)
    obs, traj = sample(params, spec, 30, seed=9)
    post = exact_smooth(expand(params, spec), obs)
    for c in range(2):
        onehot = np.eye(2)[obs.values[c] - 1]
        np.testing.assert_allclose(post.state_marginals[:, c, :], onehot, atol=1e-12)


def test_exact_loglik_single_step_closed_form():
    spec = ModelSpec(2, 2, 2, 1.0, Multinomial(2))
    params = random_params(spec, 10)
    obs = ObservationSet(np.array([[1], [2]]))
    chain = expand(params, spec)
    expected = 0.0
    for c, symbol in enumerate((1, 2)):
        expected += np.log(params.initial_state[c]
                           @ params.emission.table[c][:, symbol - 1])
    assert exact_loglik(chain, obs) == pytest.approx(expected, abs=1e-12)


def test_exact_loglik_pattern_permutation_invariant():
    spec = ModelSpec(2, 2, 3, 1.0, Multinomial(2))
    params = random_params(spec, 11)
    obs, _ = sample(params, spec, 25, seed=12)
    base = exact_loglik(expand(params, spec), obs)
    permuted = params.permute_patterns([2, 0, 1])
    assert exact_loglik(expand(permuted, spec), obs) == pytest.approx(base, abs=1e-9)


def test_exact_loglik_chain_rule_consistency():
    spec = ModelSpec(2, 2, 2, 1.0, Multinomial(2))
    params = random_params(spec, 13)
    obs, _ = sample(params, spec, 12, seed=14)
    chain = expand(params, spec)
    total = exact_loglik(chain, obs)
    acc = exact_loglik(chain, ObservationSet(obs.values[:, :1]))
    for t in range(2, obs.length + 1):
        here = exact_loglik(chain, ObservationSet(obs.values[:, :t]))
        assert here <= acc + 1e-9          # extra discrete evidence cannot help
        acc = here
    assert acc == pytest.approx(total, abs=1e-9)


def test_sampling_frequencies_match_joint_chain():
    # long trajectory transition counts vs the expanded transition matrix
    spec = ModelSpec(2, 2, 2, 1.0, Multinomial(2))
    params = random_params(spec, 15)
    chain = expand(params, spec)
    _, traj = sample(params, spec, 150_000, seed=16)
    idx = np.array([chain.encode(traj.states[:, t], traj.patterns[t])
                    for t in range(traj.patterns.shape[0])])
    n = chain.num_joint_states
    counts = np.zeros((n, n))
    np.add.at(counts, (idx[:-1], idx[1:]), 1.0)
    row_n = counts.sum(axis=1)
    for i in range(n):
        if row_n[i] < 500:
            continue
        freq = counts[i] / row_n[i]
        se = np.sqrt(np.maximum(chain.transition[i] * (1 - chain.transition[i]), 1e-12)
                     / row_n[i])
        assert np.all(np.abs(freq - chain.transition[i]) <= 3 * se + 1e-9)


def test_exact_filter_matches_flat_forward():
    spec = ModelSpec(2, 2, 2, 1.0, Multinomial(2))
    params = random_params(spec, 17)
    obs, _ = sample(params, spec, 20, seed=18)
    chain = expand(params, spec)
    states, patterns, ll = exact_filter(chain, obs)
    filtered, ll_ref = hmm_forward(chain.initial, chain.transition,
                                   chain.emission_likelihood(obs))
    assert ll == pytest.approx(ll_ref, abs=1e-9)
    cube = filtered.reshape(-1, 2, 2, 2)
    np.testing.assert_allclose(patterns, cube.sum(axis=(2, 3)), atol=1e-12)
    np.testing.assert_allclose(states[:, 0, :], cube.sum(axis=(1, 3)), atol=1e-12)

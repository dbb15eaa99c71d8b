import numpy as np
import pytest

from influence_model.model import (
    GaussianEmission,
    GaussianFixedMeans,
    ModelParams,
    ModelSpec,
    Multinomial,
    MultinomialEmission,
    ObservationSet,
    random_params,
    sample,
    transition_distribution,
    validate_params,
)

from helpers import random_stochastic


def make_spec(c=2, s=2, j=2, p_v=1.0, k=2):
    return ModelSpec(c, s, j, p_v, Multinomial(k))


def make_params(spec, seed=0):
    return random_params(spec, seed)


# ---------------------------------------------------------------------------
# Spec and container invariants
# ---------------------------------------------------------------------------

def test_spec_rejects_bad_dimensions():
    with pytest.raises(ValueError):
        ModelSpec(0, 2, 1, 1.0, Multinomial(2))
    with pytest.raises(ValueError):
        ModelSpec(1, 1, 1, 1.0, Multinomial(2))
    with pytest.raises(ValueError):
        ModelSpec(1, 2, 0, 1.0, Multinomial(2))
    with pytest.raises(ValueError):
        ModelSpec(1, 2, 1, -0.5, Multinomial(2))


def test_gaussian_means_must_increase():
    ModelSpec(1, 3, 1, 0.0, GaussianFixedMeans((0.0, 1.0, 2.0)))
    with pytest.raises(ValueError):
        ModelSpec(1, 3, 1, 0.0, GaussianFixedMeans((0.0, 2.0, 1.0)))
    with pytest.raises(ValueError):
        ModelSpec(1, 2, 1, 0.0, GaussianFixedMeans((0.0, 1.0, 2.0)))


def test_observation_set_validation():
    ObservationSet(np.array([[1, 2, 1], [2, 2, 1]]))
    with pytest.raises(ValueError):
        ObservationSet(np.array([[0, 1], [1, 1]]))       # symbols start at 1
    with pytest.raises(ValueError):
        ObservationSet(np.array([1, 2, 1]))              # needs 2-D layout
    with pytest.raises(ValueError):
        ObservationSet(np.array([[np.inf, 0.0]]))


def test_sticky_pseudocount_scale():
    assert make_spec(p_v=0.0).sticky_pseudocount == 0.0
    assert make_spec(p_v=1.0).sticky_pseudocount == pytest.approx(9.0)
    assert make_spec(p_v=2.0).sticky_pseudocount == pytest.approx(99.0)


# ---------------------------------------------------------------------------
# validate_params
# ---------------------------------------------------------------------------

def test_validate_accepts_wellformed_row():
    spec = make_spec()
    params = make_params(spec)
    influence = params.influence.copy()
    influence[0, 0] = [0.90, 0.10]
    report = validate_params(
        ModelParams(influence, params.self_transition, params.cross_transition,
                    params.pattern_transition, params.emission,
                    params.initial_state, params.initial_pattern), spec)
    assert report.ok


def test_validate_flags_row_sum():
    spec = make_spec()
    params = make_params(spec)
    influence = params.influence.copy()
    influence[0, 0] = [0.5, 0.6]
    report = validate_params(
        ModelParams(influence, params.self_transition, params.cross_transition,
                    params.pattern_transition, params.emission,
                    params.initial_state, params.initial_pattern), spec)
    assert not report.ok
    v = report.violations[0]
    assert v.kind == "stochasticity"
    assert v.matrix == "influence"
    assert "1.1" in v.detail


def test_validate_distinguishes_dimension_mismatch():
    spec = make_spec(j=2)
    params = random_params(ModelSpec(2, 2, 3, 1.0, Multinomial(2)), 0)
    report = validate_params(params, spec)
    kinds = {v.kind for v in report.violations}
    assert "shape" in kinds
    assert all(v.kind == "shape" for v in report.violations
               if v.matrix in ("influence", "pattern_transition"))


def test_validate_gaussian_variance_positive():
    spec = ModelSpec(1, 2, 1, 0.0, GaussianFixedMeans((0.0, 1.0)))
    params = random_params(spec, 0)
    bad = ModelParams(params.influence, params.self_transition,
                      params.cross_transition, params.pattern_transition,
                      GaussianEmission(params.emission.means, np.array([0.0])),
                      params.initial_state, params.initial_pattern)
    report = validate_params(bad, spec)
    assert any(v.kind == "value" for v in report.violations)


# ---------------------------------------------------------------------------
# transition_distribution
# ---------------------------------------------------------------------------

def test_transition_degenerate_weight_returns_self_row():
    spec = make_spec()
    params = make_params(spec)
    influence = params.influence.copy()
    influence[0, 0] = [1.0, 0.0]
    p = ModelParams(influence, params.self_transition, params.cross_transition,
                    params.pattern_transition, params.emission,
                    params.initial_state, params.initial_pattern)
    for prev in ([1, 1], [1, 2], [2, 1], [2, 2]):
        out = transition_distribution(p, 1, 1, prev)
        np.testing.assert_allclose(out, p.self_transition[0, prev[0] - 1])


def test_transition_convex_combination():
    spec = make_spec()
    params = make_params(spec)
    influence = params.influence.copy()
    influence[0, 0] = [0.5, 0.5]
    self_t = params.self_transition.copy()
    self_t[0, 0] = [1.0, 0.0]
    cross_t = params.cross_transition.copy()
    cross_t[1, 0] = [0.0, 1.0]
    p = ModelParams(influence, self_t, cross_t, params.pattern_transition,
                    params.emission, params.initial_state, params.initial_pattern)
    out = transition_distribution(p, 1, 1, [1, 1])
    np.testing.assert_allclose(out, [0.5, 0.5])


def test_transition_matches_term_by_term_oracle():
    rng = np.random.default_rng(7)
    for _ in range(50):
        c, s, j = rng.integers(1, 5), rng.integers(2, 5), rng.integers(1, 4)
        spec = ModelSpec(int(c), int(s), int(j), 1.0, Multinomial(2))
        params = random_params(spec, int(rng.integers(1 << 30)))
        prev = rng.integers(1, s + 1, size=c)
        pattern = int(rng.integers(1, j + 1))
        chain = int(rng.integers(1, c + 1))
        out = transition_distribution(params, pattern, chain, prev)
        # independent elementwise evaluation of the mixture sum
        expected = np.zeros(s)
        for target_state in range(s):
            acc = 0.0
            for src in range(c):
                w = params.influence[pattern - 1, chain - 1, src]
                if src == chain - 1:
                    acc += w * params.self_transition[src, prev[src] - 1, target_state]
                else:
                    acc += w * params.cross_transition[src, prev[src] - 1, target_state]
            expected[target_state] = acc
        np.testing.assert_allclose(out, expected, atol=1e-12)
        assert abs(out.sum() - 1.0) < 1e-9


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def test_sample_deterministic_under_seed():
    spec = make_spec()
    params = make_params(spec)
    a = sample(params, spec, 50, seed=123)
    b = sample(params, spec, 50, seed=123)
    np.testing.assert_array_equal(a[0].values, b[0].values)
    np.testing.assert_array_equal(a[1].states, b[1].states)
    np.testing.assert_array_equal(a[1].patterns, b[1].patterns)


def test_sample_respects_alphabets():
    spec = ModelSpec(3, 3, 2, 1.0, Multinomial(4))
    params = random_params(spec, 5)
    obs, traj = sample(params, spec, 400, seed=9)
    assert obs.values.min() >= 1 and obs.values.max() <= 4
    assert traj.states.min() >= 1 and traj.states.max() <= 3
    assert traj.patterns.min() >= 1 and traj.patterns.max() <= 2


def test_sample_schedule_validation():
    spec = make_spec()
    params = make_params(spec)
    with pytest.raises(ValueError):
        sample(params, spec, 10, 0, switch_schedule=np.full(9, 1))
    with pytest.raises(ValueError):
        sample(params, spec, 10, 0, switch_schedule=np.full(10, 3))


def test_sample_toy_format():
    # two binary chains, scheduled switch: output stays in {1, 2} at length 600
    from influence_model.synthetic import toy_observations
    obs, traj, params = toy_observations(0)
    assert obs.values.shape == (2, 600)
    assert set(np.unique(obs.values)) <= {1, 2}
    assert np.all(traj.patterns[:200] == 1) and np.all(traj.patterns[200:] == 2)


def test_single_chain_sampling_reduces_to_hmm():
    # with one chain the influence row is forced to 1 and dynamics follow the
    # self-transition matrix
    spec = ModelSpec(1, 2, 1, 0.0, Multinomial(2))
    rng = np.random.default_rng(3)
    e_row = np.array([[[0.8, 0.2], [0.3, 0.7]]])
    params = ModelParams(
        influence=np.ones((1, 1, 1)),
        self_transition=e_row,
        cross_transition=random_stochastic(rng, (1, 2, 2)),
        pattern_transition=np.ones((1, 1)),
        emission=MultinomialEmission(random_stochastic(rng, (1, 2, 2))),
        initial_state=np.array([[0.5, 0.5]]),
        initial_pattern=np.array([1.0]),
    )
    _, traj = sample(params, spec, 100_000, seed=11)
    states = traj.states[0]
    for prev_state in (1, 2):
        idx = np.where(states[:-1] == prev_state)[0]
        n = len(idx)
        freq = np.mean(states[idx + 1] == 1)
        p = e_row[0, prev_state - 1, 0]
        se = np.sqrt(p * (1 - p) / n)
        assert abs(freq - p) <= 3 * se


def test_static_model_sampling_matches_mixture_probabilities():
    # J=1: empirical next-state frequencies per joint previous state match
    # the mixture transition within 3 standard errors
    spec = ModelSpec(2, 2, 1, 0.0, Multinomial(2))
    params = random_params(spec, 21)
    _, traj = sample(params, spec, 120_000, seed=22)
    states = traj.states
    for s1 in (1, 2):
        for s2 in (1, 2):
            idx = np.where((states[0, :-1] == s1) & (states[1, :-1] == s2))[0]
            n = len(idx)
            assert n > 1000
            for chain in (1, 2):
                p = transition_distribution(params, 1, chain, [s1, s2])[0]
                freq = np.mean(states[chain - 1, idx + 1] == 1)
                se = np.sqrt(max(p * (1 - p), 1e-12) / n)
                assert abs(freq - p) <= 3 * se + 1e-9


def test_sample_rejects_invalid_params():
    spec = make_spec()
    params = make_params(spec)
    influence = params.influence.copy()
    influence[0, 0] = [0.7, 0.7]
    bad = ModelParams(influence, params.self_transition, params.cross_transition,
                      params.pattern_transition, params.emission,
                      params.initial_state, params.initial_pattern)
    with pytest.raises(ValueError, match="stochasticity"):
        sample(bad, spec, 10, 0)

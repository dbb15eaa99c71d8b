"""Independent reference implementations used as test oracles.

Everything here is deliberately written from scratch with plain loops,
independent of the library's code paths: a textbook normalized HMM
forward/backward, full latent-trajectory enumeration for tiny coupled
systems, and a reference Baum-Welch step for single-chain models.
"""

import itertools

import numpy as np

from influence_model.model import (
    GaussianEmission,
    ModelParams,
    MultinomialEmission,
)


def hmm_forward(init, trans, lik):
    """Normalized forward recursion.  Returns (filtered (T, S), loglik)."""
    t_n, s_n = lik.shape
    filtered = np.zeros((t_n, s_n))
    f = init * lik[0]
    z = f.sum()
    filtered[0] = f / z
    loglik = np.log(z)
    for t in range(1, t_n):
        f = (filtered[t - 1] @ trans) * lik[t]
        z = f.sum()
        filtered[t] = f / z
        loglik += np.log(z)
    return filtered, loglik


def hmm_backward(trans, lik):
    """Normalized strictly-future likelihood messages, shape (T, S)."""
    t_n, s_n = lik.shape
    future = np.zeros((t_n, s_n))
    future[-1] = 1.0 / s_n
    for t in range(t_n - 2, -1, -1):
        m = trans @ (lik[t + 1] * future[t + 1])
        future[t] = m / m.sum()
    return future


def hmm_smooth(init, trans, lik):
    """Exact smoothed state marginals (T, S) via two-filter combination."""
    filtered, _ = hmm_forward(init, trans, lik)
    future = hmm_backward(trans, lik)
    g = filtered * future
    return g / g.sum(axis=1, keepdims=True)


def baum_welch_step(init, trans, emis, obs_symbols):
    """One exact Baum-Welch update for a single discrete HMM.

    obs_symbols are 1-based.  Returns (init', trans', emis').
    """
    t_n = len(obs_symbols)
    s_n = trans.shape[0]
    k_n = emis.shape[1]
    lik = emis[:, np.asarray(obs_symbols) - 1].T          # (T, S)
    filtered, _ = hmm_forward(init, trans, lik)
    future = hmm_backward(trans, lik)
    gamma = filtered * future
    gamma /= gamma.sum(axis=1, keepdims=True)

    pair_counts = np.zeros((s_n, s_n))
    for t in range(t_n - 1):
        pair = filtered[t][:, None] * trans * (lik[t + 1] * future[t + 1])[None, :]
        pair_counts += pair / pair.sum()
    trans_new = pair_counts / pair_counts.sum(axis=1, keepdims=True)

    emis_counts = np.zeros((s_n, k_n))
    for t in range(t_n):
        emis_counts[:, obs_symbols[t] - 1] += gamma[t]
    emis_new = emis_counts / emis_counts.sum(axis=1, keepdims=True)
    return gamma[0], trans_new, emis_new


# ---------------------------------------------------------------------------
# Brute-force enumeration for tiny coupled systems
# ---------------------------------------------------------------------------

def _emission_prob(params, chain0, state0, value):
    em = params.emission
    if isinstance(em, MultinomialEmission):
        return em.table[chain0, state0, int(value) - 1]
    var = em.variances[chain0]
    mu = em.means[chain0, state0]
    return np.exp(-0.5 * (value - mu) ** 2 / var) / np.sqrt(2 * np.pi * var)


def _mixture_row(params, pattern0, chain0, prev0):
    w = params.influence[pattern0, chain0]
    row = w[chain0] * params.self_transition[chain0, prev0[chain0]]
    for src in range(params.num_chains):
        if src != chain0:
            row = row + w[src] * params.cross_transition[src, prev0[src]]
    return row


def enumerate_joint(params: ModelParams, obs_values):
    """Sum the complete-data probability over every latent assignment.

    Returns (loglik, state_marginals (T, C, S), pattern_marginals (T, J),
    pattern_pairs (T-1, J, J)).  Exponential; only for tiny instances.
    """
    obs = np.asarray(obs_values)
    c_n, t_n = obs.shape
    s_n = params.num_states
    j_n = params.num_patterns

    total = 0.0
    states_acc = np.zeros((t_n, c_n, s_n))
    patterns_acc = np.zeros((t_n, j_n))
    pairs_acc = np.zeros((max(t_n - 1, 0), j_n, j_n))

    state_paths = itertools.product(range(s_n), repeat=c_n * t_n)
    for flat_states in state_paths:
        h = np.array(flat_states).reshape(c_n, t_n)
        emit_p = 1.0
        for c in range(c_n):
            for t in range(t_n):
                emit_p *= _emission_prob(params, c, h[c, t], obs[c, t])
        if emit_p == 0.0:
            continue
        for patterns in itertools.product(range(j_n), repeat=t_n):
            p = params.initial_pattern[patterns[0]] * emit_p
            for c in range(c_n):
                p *= params.initial_state[c, h[c, 0]]
            for t in range(1, t_n):
                p *= params.pattern_transition[patterns[t - 1], patterns[t]]
                for c in range(c_n):
                    p *= _mixture_row(params, patterns[t], c, h[:, t - 1])[h[c, t]]
            if p == 0.0:
                continue
            total += p
            for t in range(t_n):
                patterns_acc[t, patterns[t]] += p
                for c in range(c_n):
                    states_acc[t, c, h[c, t]] += p
            for t in range(t_n - 1):
                pairs_acc[t, patterns[t], patterns[t + 1]] += p

    return (np.log(total), states_acc / total, patterns_acc / total,
            pairs_acc / total)


def random_stochastic(rng, shape):
    """Stack of random stochastic rows over the last axis."""
    x = rng.gamma(1.0, size=shape)
    return x / x.sum(axis=-1, keepdims=True)

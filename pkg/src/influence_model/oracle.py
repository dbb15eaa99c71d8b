"""Brute-force exact inference on the flattened joint chain.

For small systems the coupled model is equivalent to a single HMM whose
state enumerates every combination of (per-chain states, active pattern),
with S^C * J states.  That chain supports exact filtering and smoothing,
which serves as the test oracle for the variational engine and as an
exact solver for tiny instances.  It is never used inside fitting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .inference import Posteriors
from .model import (
    ModelParams,
    ModelSpec,
    ObservationSet,
    emission_likelihoods,
    require_valid,
)

__all__ = ["JointChain", "expand", "exact_filter", "exact_smooth", "exact_loglik"]

DEFAULT_MAX_JOINT_STATES = 4096


@dataclass(frozen=True)
class JointChain:
    """Flat HMM over joint (states, pattern) combinations.

    The joint index packs the pattern as the most significant digit and the
    chain states big-endian below it:
    ``index = (pattern-1) * S^C + sum_c (state_c - 1) * S^(C-1-c)``.
    """

    transition: np.ndarray          # (N, N), row-stochastic
    initial: np.ndarray             # (N,)
    params: ModelParams
    spec: ModelSpec

    @property
    def num_joint_states(self) -> int:
        return self.transition.shape[0]

    def encode(self, states, pattern: int) -> int:
        s_n, c_n = self.spec.num_states, self.spec.num_chains
        code = 0
        for s in states:
            code = code * s_n + (s - 1)
        return (pattern - 1) * s_n ** c_n + code

    def decode(self, index: int) -> tuple[tuple[int, ...], int]:
        s_n, c_n = self.spec.num_states, self.spec.num_chains
        block = s_n ** c_n
        pattern = index // block + 1
        code = index % block
        states = []
        for _ in range(c_n):
            states.append(code % s_n + 1)
            code //= s_n
        return tuple(reversed(states)), pattern

    def emission_likelihood(self, obs: ObservationSet) -> np.ndarray:
        """Joint-state observation likelihoods, shape (T, N)."""
        lik = emission_likelihoods(self.params, self.spec, obs)   # (T, C, S)
        t_n, c_n, _ = lik.shape
        acc = lik[:, 0, :]
        for c in range(1, c_n):
            acc = (acc[:, :, None] * lik[:, c, :][:, None, :]).reshape(t_n, -1)
        return np.tile(acc, (1, self.spec.num_patterns))


def _per_chain_rows(params: ModelParams, pattern0: int) -> np.ndarray:
    """Rows (S^C, C, S): next-state distribution of each chain for every
    joint previous state under one pattern."""
    c_n, s_n = params.num_chains, params.num_states
    grids = np.indices((s_n,) * c_n).reshape(c_n, -1).T
    rows = np.empty((grids.shape[0], c_n, s_n))
    for c in range(c_n):
        w = params.influence[pattern0, c]
        acc = w[c] * params.self_transition[c, grids[:, c]]
        for src in range(c_n):
            if src != c:
                acc = acc + w[src] * params.cross_transition[src, grids[:, src]]
        rows[:, c] = acc
    return rows


def expand(params: ModelParams, spec: ModelSpec,
           max_joint_states: int = DEFAULT_MAX_JOINT_STATES) -> JointChain:
    """Build the equivalent flat HMM.

    The joint transition factors as (pattern step) * (product of per-chain
    state rows given the destination pattern), mirroring the generative
    order.  Raises if S^C * J exceeds ``max_joint_states``.
    """
    require_valid(params, spec)
    c_n, s_n, j_n = spec.num_chains, spec.num_states, spec.num_patterns
    block = s_n ** c_n
    n = block * j_n
    if n > max_joint_states:
        raise ValueError(
            f"joint chain would have {n} states, above the cap "
            f"{max_joint_states}")

    state_trans = np.empty((j_n, block, block))
    for j in range(j_n):
        rows = _per_chain_rows(params, j)          # (block, C, S)
        acc = rows[:, 0, :]
        for c in range(1, c_n):
            acc = (acc[:, :, None] * rows[:, c, :][:, None, :]).reshape(block, -1)
        state_trans[j] = acc

    transition = np.empty((n, n))
    v = params.pattern_transition
    for r in range(j_n):
        for rp in range(j_n):
            transition[r * block:(r + 1) * block, rp * block:(rp + 1) * block] = \
                v[r, rp] * state_trans[rp]

    joint_init = params.initial_state[0]
    for c in range(1, c_n):
        joint_init = np.kron(joint_init, params.initial_state[c])
    initial = np.kron(params.initial_pattern, joint_init)

    return JointChain(transition, initial, params, spec)


def _marginalize(dist: np.ndarray, spec: ModelSpec):
    """Split a joint distribution into per-chain state and pattern marginals."""
    c_n, s_n, j_n = spec.num_chains, spec.num_states, spec.num_patterns
    cube = dist.reshape((j_n,) + (s_n,) * c_n)
    pattern = cube.reshape(j_n, -1).sum(axis=1)
    states = np.empty((c_n, s_n))
    for c in range(c_n):
        axes = tuple(a for a in range(1 + c_n) if a != 1 + c)
        states[c] = cube.sum(axis=axes)
    return states, pattern


def exact_filter(chain: JointChain, obs: ObservationSet):
    """Exact filtering.  Returns (state marginals (T, C, S), pattern
    marginals (T, J), log-likelihood)."""
    b = chain.emission_likelihood(obs)
    t_n = obs.length
    spec = chain.spec
    f = chain.initial * b[0]
    z = f.sum()
    if z <= 0.0:
        raise ValueError("zero likelihood at t=1")
    f /= z
    loglik = np.log(z)
    states = np.empty((t_n, spec.num_chains, spec.num_states))
    patterns = np.empty((t_n, spec.num_patterns))
    states[0], patterns[0] = _marginalize(f, spec)
    for t in range(1, t_n):
        f = (f @ chain.transition) * b[t]
        z = f.sum()
        if z <= 0.0:
            raise ValueError(f"zero likelihood at t={t + 1}")
        f /= z
        loglik += np.log(z)
        states[t], patterns[t] = _marginalize(f, spec)
    return states, patterns, float(loglik)


def exact_loglik(chain: JointChain, obs: ObservationSet) -> float:
    """Exact observed-data log-likelihood via forward normalizers."""
    b = chain.emission_likelihood(obs)
    f = chain.initial * b[0]
    z = f.sum()
    if z <= 0.0:
        raise ValueError("zero likelihood at t=1")
    f /= z
    loglik = np.log(z)
    for t in range(1, obs.length):
        f = (f @ chain.transition) * b[t]
        z = f.sum()
        if z <= 0.0:
            raise ValueError(f"zero likelihood at t={t + 1}")
        f /= z
        loglik += np.log(z)
    return float(loglik)


def exact_smooth(chain: JointChain, obs: ObservationSet) -> Posteriors:
    """Exact forward-backward smoothing on the joint chain.

    Returns the same container the variational engine produces, with
    per-chain state marginals, pattern marginals and pattern pairs obtained
    by marginalizing the joint posteriors (``parent_joint`` is not part of
    the oracle's contract and stays None).
    """
    b = chain.emission_likelihood(obs)
    t_n = obs.length
    spec = chain.spec
    n = chain.num_joint_states

    fwd = np.empty((t_n, n))
    f = chain.initial * b[0]
    z = f.sum()
    if z <= 0.0:
        raise ValueError("zero likelihood at t=1")
    fwd[0] = f / z
    for t in range(1, t_n):
        f = (fwd[t - 1] @ chain.transition) * b[t]
        z = f.sum()
        if z <= 0.0:
            raise ValueError(f"zero likelihood at t={t + 1}")
        fwd[t] = f / z

    # strictly-future likelihood messages, renormalized for conditioning
    bex = np.empty((t_n, n))
    bex[t_n - 1] = 1.0 / n
    for t in range(t_n - 2, -1, -1):
        m = chain.transition @ (b[t + 1] * bex[t + 1])
        s = m.sum()
        bex[t] = m / (s if s > 0.0 else 1.0)

    j_n = spec.num_patterns
    block = n // j_n
    states = np.empty((t_n, spec.num_chains, spec.num_states))
    patterns = np.empty((t_n, j_n))
    for t in range(t_n):
        g = fwd[t] * bex[t]
        g /= g.sum()
        states[t], patterns[t] = _marginalize(g, spec)

    pairs = np.empty((t_n - 1, j_n, j_n))
    for t in range(t_n - 1):
        pair = fwd[t][:, None] * chain.transition * (b[t + 1] * bex[t + 1])[None, :]
        pair /= pair.sum()
        pairs[t] = pair.reshape(j_n, block, j_n, block).sum(axis=(1, 3))

    return Posteriors(states, patterns, pairs, None)

"""Seeded synthetic benchmarks: the two-chain switching toy and planted
group discussions with known hand-off structure.

These generators fix the influence matrices and leave persistence,
cross-influence and emission noise randomized within informative ranges,
so recovery experiments are non-trivial but well-posed.
"""

from __future__ import annotations

import numpy as np

from .model import (
    ModelParams,
    ModelSpec,
    Multinomial,
    MultinomialEmission,
    ObservationSet,
    sample,
)

__all__ = [
    "TOY_INFLUENCE_1",
    "TOY_INFLUENCE_2",
    "toy_spec",
    "toy_params",
    "toy_observations",
    "single_regime_observations",
    "discussion_params",
    "discussion_observations",
]

# Ground-truth influence patterns of the two-chain toy: one self-driven,
# one dominated by the other chain.
TOY_INFLUENCE_1 = np.array([[0.90, 0.10], [0.10, 0.90]])
TOY_INFLUENCE_2 = np.array([[0.05, 0.95], [0.95, 0.05]])


def toy_spec(num_patterns: int = 2, prior_exponent: float = 1.0) -> ModelSpec:
    return ModelSpec(2, 2, num_patterns, prior_exponent, Multinomial(2))


def _sticky_matrix(rng, size, low, high):
    diag = rng.uniform(low, high, size=size)
    mats = np.empty((size, 2, 2))
    mats[:, 0, 0] = diag
    mats[:, 0, 1] = 1 - diag
    diag2 = rng.uniform(low, high, size=size)
    mats[:, 1, 1] = diag2
    mats[:, 1, 0] = 1 - diag2
    return mats


def toy_params(seed) -> ModelParams:
    """True parameters of the two-chain toy process.

    Both influence patterns are fixed.  Self-transitions are sticky while
    cross-influence rows flip the pushed chain, so the mixture weights stay
    sharply identifiable; binary emission tables are informative.  All
    randomized ranges are per-seed draws.
    """
    rng = np.random.default_rng(seed)
    return ModelParams(
        influence=np.stack([TOY_INFLUENCE_1, TOY_INFLUENCE_2]),
        self_transition=_sticky_matrix(rng, 2, 0.80, 0.95),
        cross_transition=_sticky_matrix(rng, 2, 0.03, 0.15),
        pattern_transition=np.array([[0.99, 0.01], [0.01, 0.99]]),
        emission=MultinomialEmission(_sticky_matrix(rng, 2, 0.93, 0.99)),
        initial_state=np.full((2, 2), 0.5),
        initial_pattern=np.full(2, 0.5),
    )


def toy_observations(seed, length: int = 600, switch_at: int = 200):
    """Two binary chains driven by pattern 1 up to ``switch_at`` and
    pattern 2 afterwards.  Returns (observations, trajectory, true params)."""
    params = toy_params(seed)
    schedule = np.where(np.arange(1, length + 1) <= switch_at, 1, 2)
    obs, traj = sample(params, toy_spec(), length, seed, switch_schedule=schedule)
    return obs, traj, params


def single_regime_observations(seed, length: int = 600, pattern: int = 1):
    """Same toy process but held in one influence pattern throughout."""
    params = toy_params(seed)
    schedule = np.full(length, pattern)
    obs, traj = sample(params, toy_spec(), length, seed, switch_schedule=schedule)
    return obs, traj, params


# ---------------------------------------------------------------------------
# Planted group discussions
# ---------------------------------------------------------------------------

def _ring_influence(num_chains: int, shift: int) -> np.ndarray:
    """Each chain listens exclusively to the chain ``shift`` places before
    it; the sole speaker then hands the floor around a ring."""
    r = np.zeros((num_chains, num_chains))
    for c in range(num_chains):
        r[c, (c - shift) % num_chains] = 1.0
    return r


def discussion_params(num_chains: int = 4, shifts=(1, -1),
                      copy_fidelity: float = 0.97,
                      emission_fidelity: float = 0.97) -> ModelParams:
    """Hand-off dynamics: under pattern j every chain copies the speaking
    state of its ring predecessor (ring direction per ``shifts``), so
    exactly one chain tends to speak and the floor rotates deterministically
    up to the copy noise."""
    j_n = len(shifts)
    copy = np.array([[copy_fidelity, 1 - copy_fidelity],
                     [1 - copy_fidelity, copy_fidelity]])
    influence = np.stack([_ring_influence(num_chains, s) for s in shifts])
    initial_state = np.full((num_chains, 2), 0.0)
    initial_state[:, 0] = 0.98
    initial_state[:, 1] = 0.02
    initial_state[0] = [0.02, 0.98]          # chain 1 opens the discussion
    v = np.full((j_n, j_n), 0.01 / max(j_n - 1, 1))
    np.fill_diagonal(v, 0.99 if j_n > 1 else 1.0)
    emission = np.array([[emission_fidelity, 1 - emission_fidelity],
                         [1 - emission_fidelity, emission_fidelity]])
    return ModelParams(
        influence=influence,
        self_transition=np.tile(copy, (num_chains, 1, 1)),
        cross_transition=np.tile(copy, (num_chains, 1, 1)),
        pattern_transition=v,
        emission=MultinomialEmission(np.tile(emission, (num_chains, 1, 1))),
        initial_state=initial_state,
        initial_pattern=np.full(j_n, 1.0 / j_n),
    )


def discussion_observations(seed, num_chains: int = 4, length: int = 240,
                            switch_at: int | None = None, shifts=(1, -1)):
    """A planted discussion sample; ``switch_at`` flips the hand-off ring
    mid-sequence (None keeps the first ring throughout).

    Returns (observations, trajectory, true params, spec).
    """
    params = discussion_params(num_chains, shifts)
    spec = ModelSpec(num_chains, 2, len(shifts), 1.0, Multinomial(2))
    if switch_at is None:
        schedule = np.full(length, 1)
    else:
        schedule = np.where(np.arange(1, length + 1) <= switch_at, 1, 2)
    obs, traj = sample(params, spec, length, seed, switch_schedule=schedule)
    return obs, traj, params, spec

"""Variational E-M for the switching influence model.

Exact filtering couples all chains (the joint state space is exponential
in the number of chains), so the E-step decouples them: per pattern, the
joint filtered state distribution is approximated by a product of
per-chain distributions.  Each chain's update transports last step's
per-chain marginals through the influence mixture and multiplies in that
chain's own observation evidence; the pattern posterior is updated by
Bayes' rule from the per-chain evidence normalizers.  A mirrored backward
sweep produces likelihood-form messages (normalized every step, i.e.
posteriors under a uniform boundary prior), and the two sweeps combine
into smoothed state marginals, pattern-pair posteriors, and the
parent-selector joint that the closed-form M-step marginalizes.

With a single chain the decoupling is vacuous and every quantity here
equals its exact HMM counterpart.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .model import (
    GaussianEmission,
    GaussianFixedMeans,
    ModelParams,
    ModelSpec,
    MultinomialEmission,
    ObservationSet,
    emission_likelihoods,
    random_params,
    require_valid,
)

__all__ = [
    "InferenceError",
    "DegenerateEvidenceError",
    "NumericalDivergenceError",
    "ForwardState",
    "BackwardState",
    "Posteriors",
    "FitConfig",
    "FitReport",
    "forward_pass",
    "backward_pass",
    "compute_posteriors",
    "m_step",
    "fit",
    "kl_to_reference",
    "one_step_state_predictive",
    "one_step_symbol_predictive",
]

_SMOOTHING_EPS = 1e-8   # additive count smoothing in every M-step ratio
_TINY = 1e-300


class InferenceError(Exception):
    """Base class for inference failures."""


class DegenerateEvidenceError(InferenceError):
    """Every state has zero emission probability at some (t, chain)."""

    def __init__(self, time: int, chain: int):
        self.time = time
        self.chain = chain
        super().__init__(
            f"zero emission likelihood for every state at t={time}, chain={chain}")


class NumericalDivergenceError(InferenceError):
    """The log-likelihood proxy became non-finite during fitting."""

    def __init__(self, iteration: int):
        self.iteration = iteration
        super().__init__(f"non-finite likelihood proxy at iteration {iteration}")


# ---------------------------------------------------------------------------
# State containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ForwardState:
    """Filtered quantities, one entry per time step.

    filtered_states   (T, J, C, S)  Prob(state of chain c at t | pattern, obs so far)
    filtered_patterns (T, J)        Prob(pattern at t | obs so far)
    log_normalizers   (T,)          log Prob(obs_t | obs before t); their sum is
                                    the log-likelihood proxy
    """

    filtered_states: np.ndarray
    filtered_patterns: np.ndarray
    log_normalizers: np.ndarray

    @property
    def loglik_proxy(self) -> float:
        return float(self.log_normalizers.sum())


@dataclass(frozen=True)
class BackwardState:
    """Backward messages, normalized per step (uniform boundary prior).

    backward_states   (T, J, C, S)  includes the evidence at t
    backward_patterns (T, J)        pattern weight from obs t..T
    future_states     (T, J, C, S)  excludes the evidence at t (message from
                                    strictly-future observations only)
    """

    backward_states: np.ndarray
    backward_patterns: np.ndarray
    future_states: np.ndarray


@dataclass(frozen=True)
class Posteriors:
    """Smoothed posteriors over the full observation window.

    state_marginals  (T, C, S)
    pattern_marginals(T, J)
    pattern_pairs    (T-1, J, J)   joint of consecutive patterns
    parent_joint     (T-1, C, J, C, S, S)  axes: transition step t -> t+1,
        child chain, pattern at t+1, parent chain, parent state at t, child
        state at t+1.  Sums to 1 over (pattern, parent, states) per (t, child).
    """

    state_marginals: np.ndarray
    pattern_marginals: np.ndarray
    pattern_pairs: np.ndarray
    parent_joint: np.ndarray | None = None


@dataclass(frozen=True)
class FitConfig:
    """E-M driver settings.

    ``initial_params=None`` draws a random start (flat-Dirichlet rows) from
    ``seed``; otherwise the given parameters are used as-is.  When
    ``track_reference`` is set, the report carries the permutation-minimized
    K-L divergence to those reference parameters after every iteration.
    """

    max_iterations: int = 200
    tolerance: float = 1e-6
    seed: int = 0
    initial_params: ModelParams | None = None
    track_reference: ModelParams | None = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.tolerance > 0):
            raise ValueError("tolerance must be > 0")


@dataclass
class FitReport:
    """Per-iteration diagnostics of one fit."""

    iterations_run: int = 0
    converged: bool = False
    loglik_proxy: list[float] = field(default_factory=list)
    max_param_delta: list[float] = field(default_factory=list)
    kl_to_reference: list[float] | None = None


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _emission_lik_checked(params, spec, obs) -> np.ndarray:
    if obs.num_chains != spec.num_chains:
        raise ValueError(
            f"observations have {obs.num_chains} chains, spec expects "
            f"{spec.num_chains}")
    lik = emission_likelihoods(params, spec, obs)
    dead = np.where(lik.max(axis=2) <= 0.0)
    if dead[0].size:
        raise DegenerateEvidenceError(int(dead[0][0]) + 1, int(dead[1][0]) + 1)
    return lik


def _pattern_mix_weights(prev_weights: np.ndarray, v: np.ndarray):
    """Joint (i, j) weights and the column-normalized mixing matrix.

    Returns (predicted, mix) where predicted[j] = sum_i prev[i] V[i, j] and
    mix[i, j] = Prob(neighbor pattern i | current pattern j).
    """
    w = prev_weights[:, None] * v
    predicted = w.sum(axis=0)
    safe = np.where(predicted > 0.0, predicted, 1.0)
    mix = w / safe
    # unreachable patterns get a uniform (weightless) mixing column
    mix[:, predicted <= 0.0] = 1.0 / len(prev_weights)
    return predicted, mix


def _predictive_states(hat_alpha, params):
    """One-step state predictive per pattern and chain, shape (J, C, S).

    hat_alpha (J, C, S) holds the previous step's per-chain marginals
    conditioned on the current pattern; the result transports them through
    the influence mixture (self row for the own chain, cross rows for the
    rest).
    """
    e_mats = params.self_transition          # (C, S, S)
    f_mats = params.cross_transition
    r = params.influence                     # (J, C, C)
    self_msg = np.matmul(hat_alpha[:, :, None, :], e_mats)[:, :, 0, :]
    cross_msg = np.matmul(hat_alpha[:, :, None, :], f_mats)[:, :, 0, :]
    mixed = np.matmul(r, cross_msg)          # sum_src R[j,c,src] cross[j,src,:]
    r_diag = np.einsum("jcc->jc", r)
    return mixed + r_diag[:, :, None] * (self_msg - cross_msg)


def _normalize_rows(arr, fallback=None):
    """Normalize the last axis; zero rows become ``fallback`` or uniform."""
    sums = arr.sum(axis=-1, keepdims=True)
    safe = np.where(sums > 0.0, sums, 1.0)
    out = arr / safe
    dead = (sums <= 0.0)[..., 0]
    if np.any(dead):
        if fallback is None:
            out[dead] = 1.0 / arr.shape[-1]
        else:
            out[dead] = fallback[dead]
    return out


def _stable_posterior(log_weights):
    """exp-normalize a 1-D log-weight vector; returns (posterior, log Z)."""
    m = log_weights.max()
    if not np.isfinite(m):
        return None, -np.inf
    w = np.exp(log_weights - m)
    z = w.sum()
    return w / z, m + np.log(z)


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

def forward_pass(params: ModelParams, spec: ModelSpec,
                 obs: ObservationSet) -> ForwardState:
    """Filter the observations left to right.

    Per step: mix the previous per-chain state marginals over the previous
    pattern (conditioned on each candidate current pattern), transport them
    through that pattern's influence mixture, multiply in the per-chain
    evidence, and update the pattern posterior by Bayes' rule from the
    per-chain evidence normalizers.  Runs in O(T J C^2 S^2).
    """
    lik = _emission_lik_checked(params, spec, obs)
    t_n, c_n, s_n = lik.shape
    j_n = spec.num_patterns
    v = params.pattern_transition

    alpha = np.empty((t_n, j_n, c_n, s_n))
    kappa = np.empty((t_n, j_n))
    log_norm = np.empty(t_n)

    first = params.initial_state * lik[0]               # (C, S)
    ev = first.sum(axis=1)
    if np.any(ev <= 0.0):
        raise DegenerateEvidenceError(1, int(np.argmax(ev <= 0.0)) + 1)
    alpha[0] = (first / ev[:, None])[None, :, :]
    kappa[0] = params.initial_pattern                   # evidence cancels at t=1
    log_norm[0] = np.log(ev).sum()

    with np.errstate(divide="ignore"):
        for t in range(1, t_n):
            predicted, mix = _pattern_mix_weights(kappa[t - 1], v)
            hat_alpha = np.tensordot(mix, alpha[t - 1], axes=([0], [0]))
            psi = _predictive_states(hat_alpha, params)
            unnorm = psi * lik[t][None, :, :]
            ev = unnorm.sum(axis=2)                     # (J, C)
            all_dead = np.all(ev <= 0.0, axis=0)
            if np.any(all_dead):
                raise DegenerateEvidenceError(t + 1, int(np.argmax(all_dead)) + 1)
            alpha[t] = _normalize_rows(unnorm)
            post, log_norm[t] = _stable_posterior(
                np.log(predicted) + np.log(ev).sum(axis=1))
            if post is None:
                raise DegenerateEvidenceError(t + 1, 1)
            kappa[t] = post

    return ForwardState(alpha, kappa, log_norm)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def backward_pass(params: ModelParams, spec: ModelSpec,
                  obs: ObservationSet) -> BackwardState:
    """Mirror of the forward pass in reversed time.

    Messages are likelihood-form, renormalized each step.  Backward
    evidence reaches a chain through every influence channel: for each
    pattern the message to a source chain is the product over target chains
    of that target's mixed incoming message, with the other source chains
    marginalized under a uniform reference.  The pattern weight is updated
    from the per-chain evidence normalizers, mirroring the forward Bayes
    step.
    """
    lik = _emission_lik_checked(params, spec, obs)
    t_n, c_n, s_n = lik.shape
    j_n = spec.num_patterns
    v = params.pattern_transition
    r = params.influence
    e_mats = params.self_transition
    f_mats = params.cross_transition
    diag = np.arange(c_n)

    beta = np.empty((t_n, j_n, c_n, s_n))
    nu = np.empty((t_n, j_n))
    future = np.empty((t_n, j_n, c_n, s_n))

    future[t_n - 1] = 1.0 / s_n
    beta[t_n - 1] = _normalize_rows(np.broadcast_to(lik[t_n - 1], (j_n, c_n, s_n)))
    nu[t_n - 1] = 1.0 / j_n

    with np.errstate(divide="ignore"):
        for t in range(t_n - 2, -1, -1):
            b_next = beta[t + 1]                                    # (J, C, S)
            # per-pattern pair messages: influence of chain src's state at t
            # on chain tgt's backward message at t+1
            msg = np.einsum("ahx,jtx->jath", f_mats, b_next)        # (J,src,tgt,S)
            msg[:, diag, diag, :] = np.einsum("chx,jcx->jch", e_mats, b_next)
            msg_mean = msg.mean(axis=3)                             # (J,src,tgt)
            background = np.einsum("jts,jst->jt", r, msg_mean)      # (J,tgt)
            r_by_src = np.swapaxes(r, 1, 2)                         # (J,src,tgt)
            deviation = msg - msg_mean[..., None]
            factors = background[:, None, :, None] + r_by_src[..., None] * deviation
            np.maximum(factors, 0.0, out=factors)
            phi = _normalize_rows(np.prod(factors, axis=2))         # (J, C, S)

            # weights over the pattern at t+1 conditioned on the pattern at t
            predicted, mix = _pattern_mix_weights(nu[t + 1], v.T)
            future[t] = np.tensordot(mix, phi, axes=([0], [0]))
            unnorm = future[t] * lik[t][None, :, :]
            ev = unnorm.sum(axis=2)
            beta[t] = _normalize_rows(unnorm)
            post, _ = _stable_posterior(np.log(predicted) + np.log(ev).sum(axis=1))
            if post is None:
                raise DegenerateEvidenceError(t + 1, 1)
            nu[t] = post

    return BackwardState(beta, nu, future)


# ---------------------------------------------------------------------------
# Posterior assembly
# ---------------------------------------------------------------------------

def compute_posteriors(params: ModelParams, spec: ModelSpec, obs: ObservationSet,
                       fwd: ForwardState, bwd: BackwardState) -> Posteriors:
    """Combine the two sweeps into smoothed posteriors.

    Pattern pairs join the filtered pattern weight, the pattern transition
    and the backward pattern weight; the pattern marginal is the pair
    row-marginal.  State marginals combine filtered and strictly-future
    messages per pattern, then mix across patterns.  The parent joint ties
    (parent state at t, child state at t+1, parent identity, pattern at
    t+1), normalized per (t, child, pattern) and weighted by the smoothed
    pattern marginal.
    """
    alpha = fwd.filtered_states
    kappa = fwd.filtered_patterns
    t_n, j_n, c_n, s_n = alpha.shape
    if t_n < 2:
        raise ValueError("posterior assembly needs at least two time steps")
    v = params.pattern_transition

    # --- pattern pair and marginal posteriors
    raw = kappa[:-1, :, None] * v[None, :, :] * bwd.backward_patterns[1:, None, :]
    z = raw.sum(axis=(1, 2), keepdims=True)
    xi = np.where(z > 0.0, raw / np.where(z > 0.0, z, 1.0), 1.0 / (j_n * j_n))
    lam = np.empty((t_n, j_n))
    lam[:-1] = xi.sum(axis=2)
    lam[-1] = xi[-1].sum(axis=0)

    # --- smoothed state marginals
    combined = _normalize_rows(alpha * bwd.future_states, fallback=alpha)
    gamma = np.einsum("tj,tjcs->tcs", lam, combined)

    # --- parent-selector joint per transition step
    w = kappa[:-1, :, None] * v[None, :, :]
    pred = w.sum(axis=1, keepdims=True)
    mix = w / np.where(pred > 0.0, pred, 1.0)                  # (T-1, i, j)
    hat_alpha = np.einsum("tij,tics->tjcs", mix, alpha[:-1])   # (T-1, J, C, S)

    trans = np.broadcast_to(
        params.cross_transition[:, None, :, :], (c_n, c_n, s_n, s_n)).copy()
    trans[np.arange(c_n), np.arange(c_n)] = params.self_transition

    joint = np.einsum("jcq,qcab,tjqa,tjcb->tcjqab",
                      params.influence, trans, hat_alpha,
                      bwd.backward_states[1:], optimize=True)
    z_j = joint.sum(axis=(3, 4, 5), keepdims=True)
    joint = np.where(z_j > 0.0, joint / np.where(z_j > 0.0, z_j, 1.0),
                     1.0 / (c_n * s_n * s_n))
    joint *= lam[1:, None, :, None, None, None]

    return Posteriors(gamma, lam, xi, joint)


# ---------------------------------------------------------------------------
# M-step
# ---------------------------------------------------------------------------

def _smoothed_ratio(counts: np.ndarray) -> np.ndarray:
    counts = counts + _SMOOTHING_EPS
    return counts / counts.sum(axis=-1, keepdims=True)


def m_step(posteriors: Posteriors, obs: ObservationSet, spec: ModelSpec,
           params: ModelParams) -> ModelParams:
    """Closed-form parameter updates from the assembled posteriors.

    Every ratio receives a small additive count so sparse posteriors never
    create absorbing zero rows.  Gaussian means stay fixed; only the
    variance is re-estimated.
    """
    gamma = posteriors.state_marginals
    lam = posteriors.pattern_marginals
    xi = posteriors.pattern_pairs
    joint = posteriors.parent_joint
    if joint is None:
        raise ValueError("posteriors lack the parent joint needed by the M-step")
    c_n, s_n, j_n = spec.num_chains, spec.num_states, spec.num_patterns
    diag = np.arange(c_n)

    v_counts = xi.sum(axis=0) + _SMOOTHING_EPS
    v_counts[np.arange(j_n), np.arange(j_n)] += spec.sticky_pseudocount
    new_v = v_counts / v_counts.sum(axis=1, keepdims=True)

    r_counts = joint.sum(axis=(0, 4, 5))            # (child, pattern, parent)
    new_r = _smoothed_ratio(np.swapaxes(r_counts, 0, 1))

    self_counts = joint[:, diag, :, diag].sum(axis=(1, 2))     # (C, S, S)
    new_e = _smoothed_ratio(self_counts)

    by_parent = joint.sum(axis=(0, 2))              # (child, parent, S, S)
    cross_counts = by_parent.sum(axis=0) - by_parent[diag, diag]
    new_f = _smoothed_ratio(cross_counts)

    em = params.emission
    if isinstance(em, MultinomialEmission):
        k = em.num_symbols
        onehot = np.eye(k)[obs.values - 1]          # (C, T, K)
        tables = np.einsum("tcs,ctk->csk", gamma, onehot)
        new_em = MultinomialEmission(_smoothed_ratio(tables))
    else:
        x = obs.values.astype(float)                             # (C, T)
        sq = (x[:, :, None] - em.means[:, None, :]) ** 2         # (C, T, S)
        per_chain = np.einsum("tcs,cts->c", gamma, sq) / obs.length
        fam = spec.emission_family
        if isinstance(fam, GaussianFixedMeans) and fam.shared_variance:
            per_chain = np.full(c_n, per_chain.mean())
        new_em = GaussianEmission(em.means, np.maximum(per_chain, 1e-12))

    return ModelParams(
        influence=new_r,
        self_transition=new_e,
        cross_transition=new_f,
        pattern_transition=new_v,
        emission=new_em,
        initial_state=_smoothed_ratio(gamma[0]),
        initial_pattern=_smoothed_ratio(lam[0]),
    )


# ---------------------------------------------------------------------------
# Fit driver
# ---------------------------------------------------------------------------

def _param_arrays(params: ModelParams):
    yield params.influence
    yield params.self_transition
    yield params.cross_transition
    yield params.pattern_transition
    yield params.initial_state
    yield params.initial_pattern
    em = params.emission
    if isinstance(em, MultinomialEmission):
        yield em.table
    else:
        yield em.variances


def _max_delta(a: ModelParams, b: ModelParams) -> float:
    return max(float(np.abs(x - y).max())
               for x, y in zip(_param_arrays(a), _param_arrays(b)))


def fit(spec: ModelSpec, obs: ObservationSet, config: FitConfig
        ) -> tuple[ModelParams, Posteriors, FitReport]:
    """Run variational E-M until the likelihood proxy or the parameters stop
    moving (relative proxy change or max absolute parameter delta below
    ``config.tolerance``), or ``max_iterations`` is reached.

    Returns the final parameters, the posteriors under those final
    parameters, and the per-iteration report.
    """
    if obs.length < 2:
        raise ValueError("fitting needs at least two time steps")
    spec = spec.resolved_against(obs)
    params = (config.initial_params if config.initial_params is not None
              else random_params(spec, config.seed, obs))
    require_valid(params, spec)

    report = FitReport(kl_to_reference=[] if config.track_reference is not None
                       else None)
    prev_proxy = None
    converged = False

    for iteration in range(config.max_iterations):
        fwd = forward_pass(params, spec, obs)
        proxy = fwd.loglik_proxy
        if not np.isfinite(proxy):
            raise NumericalDivergenceError(iteration + 1)
        bwd = backward_pass(params, spec, obs)
        post = compute_posteriors(params, spec, obs, fwd, bwd)
        new_params = m_step(post, obs, spec, params)

        delta = _max_delta(new_params, params)
        report.loglik_proxy.append(proxy)
        report.max_param_delta.append(delta)
        if config.track_reference is not None:
            report.kl_to_reference.append(
                kl_to_reference(new_params, config.track_reference))
        params = new_params
        report.iterations_run = iteration + 1

        if prev_proxy is not None:
            rel = abs(proxy - prev_proxy) / max(abs(prev_proxy), _TINY)
            if rel < config.tolerance or delta < config.tolerance:
                converged = True
                break
        prev_proxy = proxy

    report.converged = converged
    fwd = forward_pass(params, spec, obs)
    bwd = backward_pass(params, spec, obs)
    post = compute_posteriors(params, spec, obs, fwd, bwd)
    return params, post, report


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def _implied_transition_rows(params: ModelParams, pattern0: int) -> np.ndarray:
    """All per-chain next-state rows of one pattern over every previous joint
    state, shape (S^C * C, S)."""
    c_n, s_n = params.num_chains, params.num_states
    e_mats, f_mats, r = params.self_transition, params.cross_transition, params.influence
    grids = np.indices((s_n,) * c_n).reshape(c_n, -1).T      # (S^C, C), 0-based
    rows = np.empty((grids.shape[0], c_n, s_n))
    for c in range(c_n):
        w = r[pattern0, c]
        acc = w[c] * e_mats[c, grids[:, c]]
        for src in range(c_n):
            if src != c:
                acc = acc + w[src] * f_mats[src, grids[:, src]]
        rows[:, c] = acc
    return rows.reshape(-1, s_n)


def kl_to_reference(learned: ModelParams, reference: ModelParams,
                    max_joint_states: int = 4096) -> float:
    """Mean K-L divergence from the reference transition rows to the learned
    ones, minimized over pattern relabelings.

    Rows are the implied per-chain next-state distributions over every joint
    previous state.  When pattern counts differ, the smaller set is matched
    injectively into the larger.  Always >= 0; exactly 0 for identical rows.
    """
    if (learned.num_chains != reference.num_chains
            or learned.num_states != reference.num_states):
        raise ValueError("learned and reference parameters disagree on "
                         "chain count or state count")
    c_n, s_n = learned.num_chains, learned.num_states
    if s_n ** c_n > max_joint_states:
        raise ValueError("joint previous-state space too large for row-wise K-L")

    l_rows = [_implied_transition_rows(learned, j) for j in range(learned.num_patterns)]
    r_rows = [_implied_transition_rows(reference, j) for j in range(reference.num_patterns)]

    def mean_kl(p_rows, q_rows):
        q = np.maximum(q_rows, 1e-12)
        terms = np.where(p_rows > 0.0, p_rows * np.log(np.maximum(p_rows, _TINY) / q), 0.0)
        return terms.sum(axis=1).mean()

    j_l, j_r = learned.num_patterns, reference.num_patterns
    best = np.inf
    if j_l >= j_r:
        for assign in itertools.permutations(range(j_l), j_r):
            val = np.mean([mean_kl(r_rows[j], l_rows[assign[j]]) for j in range(j_r)])
            best = min(best, val)
    else:
        for assign in itertools.permutations(range(j_r), j_l):
            val = np.mean([mean_kl(r_rows[assign[j]], l_rows[j]) for j in range(j_l)])
            best = min(best, val)
    return max(float(best), 0.0)


def one_step_state_predictive(params: ModelParams, spec: ModelSpec,
                              fwd: ForwardState) -> np.ndarray:
    """Predictive state distribution per chain for the step after the last
    observed one, shape (C, S), marginalized over the predicted pattern."""
    predicted, mix = _pattern_mix_weights(fwd.filtered_patterns[-1],
                                          params.pattern_transition)
    hat_alpha = np.tensordot(mix, fwd.filtered_states[-1], axes=([0], [0]))
    psi = _predictive_states(hat_alpha, params)
    return np.tensordot(predicted, psi, axes=([0], [0]))


def one_step_symbol_predictive(params: ModelParams, spec: ModelSpec,
                               fwd: ForwardState) -> np.ndarray:
    """Predictive next-symbol distribution per chain, shape (C, K)."""
    em = params.emission
    if not isinstance(em, MultinomialEmission):
        raise ValueError("symbol predictive requires multinomial emissions")
    states = one_step_state_predictive(params, spec, fwd)
    return np.einsum("cs,csk->ck", states, em.table)

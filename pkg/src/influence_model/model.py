"""Core model types, validation, and the generative process.

A system of C interacting chains evolves in discrete time.  Each chain c
holds a latent state in {1..S} and emits an observation per step.  The next
state of chain c is drawn from a convex mixture of transition rows: with
weight ``influence[j][c, c']`` the row comes from chain c' -- its own
self-transition matrix when c' == c, or chain c's cross-influence matrix
when c' != c.  A latent pattern index in {1..J} selects which influence
matrix is active at each step and itself follows a Markov chain.

Conventions: chains, states, patterns and discrete symbols are 1-based
values in the public API (matching the on-disk data format); numpy array
axes are 0-based as usual, so ``influence[j - 1]`` is the matrix of
pattern j.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Multinomial",
    "GaussianFixedMeans",
    "MultinomialEmission",
    "GaussianEmission",
    "ModelSpec",
    "ModelParams",
    "ObservationSet",
    "LatentTrajectory",
    "Violation",
    "ValidationReport",
    "validate_params",
    "require_valid",
    "transition_distribution",
    "sample",
    "emission_likelihoods",
    "random_params",
    "uniform_initial_params",
    "ROW_SUM_TOL",
]

# Tolerance for "rows sum to one" checks throughout the package.
ROW_SUM_TOL = 1e-9


# ---------------------------------------------------------------------------
# Specification types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Multinomial:
    """Discrete emissions over symbols 1..num_symbols.

    ``num_symbols=None`` means the alphabet size is read from data when the
    spec is resolved against an observation set.
    """

    num_symbols: int | None = None


@dataclass(frozen=True)
class GaussianFixedMeans:
    """Continuous emissions: one Gaussian per state with hand-set means.

    Means must be strictly increasing (they encode ordered severity
    levels).  Only the variance is learned; ``shared_variance`` ties it
    across chains, otherwise each chain keeps its own.
    """

    means: tuple[float, ...]
    shared_variance: bool = True


@dataclass(frozen=True)
class ModelSpec:
    """Structural hyperparameters of the (switching) influence model."""

    num_chains: int
    num_states: int
    num_patterns: int
    prior_exponent: float
    emission_family: Multinomial | GaussianFixedMeans

    def __post_init__(self):
        if self.num_chains < 1:
            raise ValueError("num_chains must be >= 1")
        if self.num_states < 2:
            raise ValueError("num_states must be >= 2")
        if self.num_patterns < 1:
            raise ValueError("num_patterns must be >= 1")
        if not (self.prior_exponent >= 0):
            raise ValueError("prior_exponent must be >= 0")
        fam = self.emission_family
        if isinstance(fam, GaussianFixedMeans):
            if len(fam.means) != self.num_states:
                raise ValueError("GaussianFixedMeans needs exactly one mean per state")
            diffs = np.diff(np.asarray(fam.means, dtype=float))
            if not np.all(diffs > 0):
                raise ValueError("Gaussian means must be strictly increasing")
        elif isinstance(fam, Multinomial):
            if fam.num_symbols is not None and fam.num_symbols < 1:
                raise ValueError("num_symbols must be >= 1 when given")
        else:
            raise TypeError(f"unknown emission family: {fam!r}")

    @property
    def sticky_pseudocount(self) -> float:
        """Extra diagonal count for the pattern-transition update.

        The sticky Dirichlet prior puts concentration 10**prior_exponent on
        staying in the current pattern and 1 elsewhere, so the MAP update
        adds 10**prior_exponent - 1 to the diagonal; exponent 0 is a flat
        prior and adds nothing.
        """
        return 10.0 ** self.prior_exponent - 1.0

    def resolved_against(self, obs: "ObservationSet") -> "ModelSpec":
        """Fill in a data-dependent alphabet size, if any."""
        fam = self.emission_family
        if isinstance(fam, Multinomial) and fam.num_symbols is None:
            k = int(obs.values.max())
            return dataclasses.replace(self, emission_family=Multinomial(k))
        return self


# ---------------------------------------------------------------------------
# Parameter and data containers
# ---------------------------------------------------------------------------

def _frozen_array(x, dtype=float) -> np.ndarray:
    a = np.array(x, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MultinomialEmission:
    """Per-chain symbol tables, shape (C, S, K)."""

    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "table", _frozen_array(self.table))

    @property
    def num_symbols(self) -> int:
        return self.table.shape[2]


@dataclass(frozen=True)
class GaussianEmission:
    """Per-chain fixed means (C, S) and learned variances (C,)."""

    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "means", _frozen_array(self.means))
        object.__setattr__(self, "variances", _frozen_array(self.variances))


@dataclass(frozen=True)
class ModelParams:
    """All learned parameters.  Immutable after construction.

    influence         (J, C, C)  row c = mixture weights over source chains
    self_transition   (C, S, S)  chain c's own state persistence
    cross_transition  (C, S, S)  how chain c's state pushes other chains
    pattern_transition(J, J)     Markov transitions of the active pattern
    emission          per-chain emission parameters
    initial_state     (C, S)     state distribution at t=1
    initial_pattern   (J,)       pattern distribution at t=1
    """

    influence: np.ndarray
    self_transition: np.ndarray
    cross_transition: np.ndarray
    pattern_transition: np.ndarray
    emission: MultinomialEmission | GaussianEmission
    initial_state: np.ndarray
    initial_pattern: np.ndarray

    def __post_init__(self):
        for name in ("influence", "self_transition", "cross_transition",
                     "pattern_transition", "initial_state", "initial_pattern"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))

    @property
    def num_patterns(self) -> int:
        return self.influence.shape[0]

    @property
    def num_chains(self) -> int:
        return self.influence.shape[1]

    @property
    def num_states(self) -> int:
        return self.self_transition.shape[1]

    def permute_patterns(self, order) -> "ModelParams":
        """Relabel patterns: new pattern i is old pattern order[i] (0-based)."""
        order = np.asarray(order, dtype=int)
        v = self.pattern_transition[np.ix_(order, order)]
        return dataclasses.replace(
            self,
            influence=self.influence[order],
            pattern_transition=v,
            initial_pattern=self.initial_pattern[order],
        )


@dataclass(frozen=True)
class ObservationSet:
    """C aligned observation sequences of common length T, shape (C, T).

    Integer arrays hold discrete symbols in 1..K; float arrays hold real
    values for Gaussian emissions.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError("observations must be a (num_chains, length) array")
        if v.shape[1] < 1:
            raise ValueError("observations must contain at least one time step")
        if np.issubdtype(v.dtype, np.integer):
            if v.min() < 1:
                raise ValueError("discrete symbols must be >= 1")
        elif np.issubdtype(v.dtype, np.floating):
            if not np.all(np.isfinite(v)):
                raise ValueError("continuous observations must be finite")
        else:
            raise ValueError("observations must be integer symbols or real values")
        object.__setattr__(self, "values", _frozen_array(v, dtype=v.dtype))

    @property
    def num_chains(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    @property
    def is_discrete(self) -> bool:
        return np.issubdtype(self.values.dtype, np.integer)


@dataclass(frozen=True)
class LatentTrajectory:
    """Sampled hidden path: states (C, T) in 1..S and patterns (T,) in 1..J."""

    states: np.ndarray
    patterns: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "states", _frozen_array(self.states, dtype=int))
        object.__setattr__(self, "patterns", _frozen_array(self.patterns, dtype=int))
        if self.states.ndim != 2 or self.patterns.ndim != 1:
            raise ValueError("states must be (C, T), patterns (T,)")
        if self.states.shape[1] != self.patterns.shape[0]:
            raise ValueError("states and patterns disagree on length")


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    """One violated invariant.

    kind is "shape" (dimension mismatch against the spec), "stochasticity"
    (a row does not sum to 1 or has entries outside [0, 1]) or "value"
    (a scalar constraint such as variance > 0).
    """

    kind: str
    matrix: str
    row: int | None
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def _check_rows(violations, name, arr, expected_shape):
    if arr.shape != expected_shape:
        violations.append(Violation(
            "shape", name, None,
            f"expected shape {expected_shape}, got {arr.shape}"))
        return
    rows = arr.reshape(-1, arr.shape[-1])
    sums = rows.sum(axis=1)
    for i, (row, s) in enumerate(zip(rows, sums)):
        if row.min() < -ROW_SUM_TOL or row.max() > 1 + ROW_SUM_TOL:
            violations.append(Violation(
                "stochasticity", name, i, "entries outside [0, 1]"))
        elif abs(s - 1.0) > ROW_SUM_TOL:
            violations.append(Violation(
                "stochasticity", name, i, f"row sums to {s!r}"))


def validate_params(params: ModelParams, spec: ModelSpec) -> ValidationReport:
    """Check every structural invariant of ``params`` against ``spec``.

    Returns a report rather than raising, so callers can surface all
    violations at once.  Shape mismatches and stochasticity failures are
    reported as distinct kinds.
    """
    c, s, j = spec.num_chains, spec.num_states, spec.num_patterns
    violations: list[Violation] = []

    _check_rows(violations, "influence", params.influence, (j, c, c))
    _check_rows(violations, "self_transition", params.self_transition, (c, s, s))
    _check_rows(violations, "cross_transition", params.cross_transition, (c, s, s))
    _check_rows(violations, "pattern_transition", params.pattern_transition, (j, j))
    _check_rows(violations, "initial_state", params.initial_state, (c, s))
    _check_rows(violations, "initial_pattern",
                params.initial_pattern.reshape(1, -1), (1, j))

    fam = spec.emission_family
    em = params.emission
    if isinstance(fam, Multinomial):
        if not isinstance(em, MultinomialEmission):
            violations.append(Violation(
                "shape", "emission", None,
                f"spec expects multinomial emissions, got {type(em).__name__}"))
        else:
            k = fam.num_symbols or em.num_symbols
            _check_rows(violations, "emission.table", em.table, (c, s, k))
    else:
        if not isinstance(em, GaussianEmission):
            violations.append(Violation(
                "shape", "emission", None,
                f"spec expects Gaussian emissions, got {type(em).__name__}"))
        else:
            if em.means.shape != (c, s):
                violations.append(Violation(
                    "shape", "emission.means", None,
                    f"expected shape {(c, s)}, got {em.means.shape}"))
            if em.variances.shape != (c,):
                violations.append(Violation(
                    "shape", "emission.variances", None,
                    f"expected shape {(c,)}, got {em.variances.shape}"))
            elif not np.all(em.variances > 0):
                violations.append(Violation(
                    "value", "emission.variances", None, "variance must be > 0"))

    return ValidationReport(tuple(violations))


def require_valid(params: ModelParams, spec: ModelSpec) -> None:
    """Raise ValueError with the full violation list if params are invalid."""
    report = validate_params(params, spec)
    if not report.ok:
        lines = "; ".join(
            f"{v.kind} in {v.matrix}" + (f" row {v.row}" if v.row is not None else "")
            + f" ({v.detail})"
            for v in report.violations)
        raise ValueError(f"invalid parameters: {lines}")


# ---------------------------------------------------------------------------
# Transition structure
# ---------------------------------------------------------------------------

def transition_distribution(params: ModelParams, pattern: int, chain: int,
                            previous_states) -> np.ndarray:
    """Next-state distribution for one chain given everyone's previous state.

    ``pattern`` (1..J) selects the influence matrix, ``chain`` (1..C) the
    target, ``previous_states`` holds all C previous states (values 1..S).
    The result mixes the target's self-transition row with every other
    chain's cross-influence row, weighted by the influence matrix row.
    """
    prev = np.asarray(previous_states, dtype=int)
    c = chain - 1
    weights = params.influence[pattern - 1, c]
    out = weights[c] * params.self_transition[c, prev[c] - 1]
    for src in range(params.num_chains):
        if src != c:
            out = out + weights[src] * params.cross_transition[src, prev[src] - 1]
    return out


# ---------------------------------------------------------------------------
# Emission likelihoods
# ---------------------------------------------------------------------------

def emission_likelihoods(params: ModelParams, spec: ModelSpec,
                         obs: ObservationSet) -> np.ndarray:
    """Per-step state likelihoods Prob(obs[c, t] | state), shape (T, C, S)."""
    em = params.emission
    values = obs.values
    if isinstance(em, MultinomialEmission):
        if not obs.is_discrete:
            raise ValueError("multinomial emissions require integer observations")
        k = em.num_symbols
        if values.max() > k:
            raise ValueError(
                f"symbol {values.max()} outside emission alphabet 1..{k}")
        # table (C,S,K) indexed by symbol-1 -> (C,S,T) -> (T,C,S)
        lik = em.table[np.arange(obs.num_chains)[:, None], :, values - 1]
        return np.ascontiguousarray(np.swapaxes(lik, 0, 1))
    # Gaussian densities, evaluated per chain against its fixed means.
    x = values.astype(float)[:, :, None]                      # (C,T,1)
    mu = em.means[:, None, :]                                 # (C,1,S)
    var = em.variances[:, None, None]
    dens = np.exp(-0.5 * (x - mu) ** 2 / var) / np.sqrt(2.0 * np.pi * var)
    return np.ascontiguousarray(np.swapaxes(dens, 0, 1))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample(params: ModelParams, spec: ModelSpec, length: int, seed,
           switch_schedule=None) -> tuple[ObservationSet, LatentTrajectory]:
    """Draw one trajectory and its observations from the generative process.

    The pattern path follows ``pattern_transition`` from ``initial_pattern``
    unless ``switch_schedule`` (length-T values in 1..J) forces it.  Each
    chain's state update first picks a source chain from the active
    influence row, then draws from that source's transition row.
    Deterministic given ``seed``.
    """
    require_valid(params, spec)
    if length < 2:
        raise ValueError("length must be >= 2")
    c_n, j_n = spec.num_chains, spec.num_patterns

    if switch_schedule is not None:
        schedule = np.asarray(switch_schedule, dtype=int)
        if schedule.shape != (length,):
            raise ValueError("switch_schedule must have one pattern per step")
        if schedule.min() < 1 or schedule.max() > j_n:
            raise ValueError(f"switch_schedule values must lie in 1..{j_n}")
    else:
        schedule = None

    rng = np.random.default_rng(seed)
    states = np.zeros((c_n, length), dtype=int)
    patterns = np.zeros(length, dtype=int)

    # inverse-CDF draws against precomputed cumulative rows
    cum_v = np.cumsum(params.pattern_transition, axis=1)
    cum_infl = np.cumsum(params.influence, axis=2)
    cum_self = np.cumsum(params.self_transition, axis=2)
    cum_cross = np.cumsum(params.cross_transition, axis=2)

    def draw(cum_row):
        return int(np.searchsorted(cum_row, rng.random(), side="right")) + 1

    patterns[0] = (schedule[0] if schedule is not None
                   else draw(np.cumsum(params.initial_pattern)))
    for c in range(c_n):
        states[c, 0] = draw(np.cumsum(params.initial_state[c]))

    for t in range(1, length):
        if schedule is not None:
            patterns[t] = schedule[t]
        else:
            patterns[t] = draw(cum_v[patterns[t - 1] - 1])
        r = patterns[t] - 1
        for c in range(c_n):
            src = draw(cum_infl[r, c]) - 1
            if src == c:
                states[c, t] = draw(cum_self[c, states[c, t - 1] - 1])
            else:
                states[c, t] = draw(cum_cross[src, states[src, t - 1] - 1])

    em = params.emission
    if isinstance(em, MultinomialEmission):
        # per-chain vectorized inverse-CDF over the state-indexed tables
        cum_em = np.cumsum(em.table, axis=2)
        emit = np.empty((c_n, length), dtype=int)
        u = rng.random((c_n, length))
        for c in range(c_n):
            rows = cum_em[c, states[c] - 1]                    # (T, K)
            emit[c] = (rows < u[c][:, None]).sum(axis=1) + 1
    else:
        noise = rng.standard_normal((c_n, length))
        mu = np.take_along_axis(em.means, states - 1, axis=1)
        emit = mu + np.sqrt(em.variances)[:, None] * noise

    return ObservationSet(emit), LatentTrajectory(states, patterns)


# ---------------------------------------------------------------------------
# Parameter construction helpers
# ---------------------------------------------------------------------------

def _dirichlet_rows(rng, shape) -> np.ndarray:
    """Stack of flat-Dirichlet rows; shape[-1] is the row length."""
    lead, n = shape[:-1], shape[-1]
    return rng.dirichlet(np.ones(n), size=lead) if lead else rng.dirichlet(np.ones(n))

def _uniform_rows(shape) -> np.ndarray:
    return np.full(shape, 1.0 / shape[-1])


def _make_emission(spec: ModelSpec, rows_fn, obs: ObservationSet | None):
    fam = spec.emission_family
    c, s = spec.num_chains, spec.num_states
    if isinstance(fam, Multinomial):
        k = fam.num_symbols
        if k is None:
            if obs is None:
                raise ValueError("multinomial alphabet size unknown; pass "
                                 "observations or set num_symbols")
            k = int(obs.values.max())
        return MultinomialEmission(rows_fn((c, s, k)))
    means = np.tile(np.asarray(fam.means, dtype=float), (c, 1))
    if obs is not None:
        if fam.shared_variance:
            var = np.full(c, max(float(np.var(obs.values)), 1e-6))
        else:
            var = np.maximum(np.var(obs.values.astype(float), axis=1), 1e-6)
    else:
        var = np.ones(c)
    return GaussianEmission(means, var)


def random_params(spec: ModelSpec, seed, obs: ObservationSet | None = None) -> ModelParams:
    """Random initialization: stochastic rows from a flat Dirichlet.

    Initial state and pattern distributions start uniform; the Gaussian
    variance starts at the empirical data variance when data is supplied.
    """
    rng = np.random.default_rng(seed)
    c, s, j = spec.num_chains, spec.num_states, spec.num_patterns
    return ModelParams(
        influence=_dirichlet_rows(rng, (j, c, c)),
        self_transition=_dirichlet_rows(rng, (c, s, s)),
        cross_transition=_dirichlet_rows(rng, (c, s, s)),
        pattern_transition=_dirichlet_rows(rng, (j, j)),
        emission=_make_emission(spec, lambda shape: _dirichlet_rows(rng, shape), obs),
        initial_state=_uniform_rows((c, s)),
        initial_pattern=_uniform_rows((j,)),
    )


def uniform_initial_params(spec: ModelSpec, obs: ObservationSet | None = None) -> ModelParams:
    """All-uniform parameters; mostly useful as a neutral reference."""
    c, s, j = spec.num_chains, spec.num_states, spec.num_patterns
    return ModelParams(
        influence=_uniform_rows((j, c, c)),
        self_transition=_uniform_rows((c, s, s)),
        cross_transition=_uniform_rows((c, s, s)),
        pattern_transition=_uniform_rows((j, j)),
        emission=_make_emission(spec, _uniform_rows, obs),
        initial_state=_uniform_rows((c, s)),
        initial_pattern=_uniform_rows((j,)),
    )

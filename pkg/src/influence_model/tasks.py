"""Downstream procedures built on the fitted model.

Covers preprocessing real-valued sequences into binary speaking/silent
symbols, extracting turn-taking events, predicting the next speaker (model
and nearest-neighbor baselines), and scoring structural change from the
posterior-weighted expected influence matrix.
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, replace

import numpy as np

from .inference import FitConfig, fit, forward_pass, one_step_symbol_predictive
from .model import ModelParams, ModelSpec, Multinomial, ObservationSet

__all__ = [
    "SILENT_SYMBOL",
    "SPEAKING_SYMBOL",
    "TurnTakingEvent",
    "ChangeLabel",
    "ChangeDetectionResult",
    "binarize",
    "extract_turn_events",
    "predict_next_speaker",
    "nn_baseline_predict",
    "expected_influence_matrix",
    "detect_structural_change",
    "label_change_pair",
    "evaluate_turn_prediction",
]

SILENT_SYMBOL = 1
SPEAKING_SYMBOL = 2


def binarize(raw, threshold: float) -> ObservationSet:
    """Threshold real-valued sequences into binary symbols.

    Values strictly above ``threshold`` map to the speaking symbol 2, the
    rest (including the boundary) to 1.
    """
    if not math.isfinite(threshold):
        raise ValueError("threshold must be finite")
    values = raw.values if isinstance(raw, ObservationSet) else np.asarray(raw)
    return ObservationSet(np.where(values > threshold,
                                   SPEAKING_SYMBOL, SILENT_SYMBOL).astype(int))


@dataclass(frozen=True)
class TurnTakingEvent:
    """A hand-off: the sole speaker at time-1 stops and another single
    chain speaks at ``time`` (1-based, >= 2)."""

    time: int
    previous_speaker: int
    next_speaker: int

    def __post_init__(self):
        if self.time < 2:
            raise ValueError("turn events start at t=2")
        if self.previous_speaker == self.next_speaker:
            raise ValueError("a turn event needs two distinct speakers")


def extract_turn_events(obs: ObservationSet) -> list[TurnTakingEvent]:
    """Scan a binary observation set for unambiguous speaker hand-offs.

    An event requires exactly one active chain before and after the step
    and a change of identity; overlapping or silent frames yield nothing.
    """
    values = obs.values
    if not obs.is_discrete or values.max() > 2:
        raise ValueError("turn extraction expects binary symbols {1, 2}")
    active = values == SPEAKING_SYMBOL                  # (C, T)
    counts = active.sum(axis=0)
    events = []
    for t in range(1, obs.length):
        if counts[t - 1] == 1 and counts[t] == 1:
            prev = int(np.argmax(active[:, t - 1])) + 1
            nxt = int(np.argmax(active[:, t])) + 1
            if prev != nxt:
                events.append(TurnTakingEvent(t + 1, prev, nxt))
    return events


def _current_speaker(obs: ObservationSet) -> int:
    last = obs.values[:, -1] == SPEAKING_SYMBOL
    if last.sum() != 1:
        raise ValueError("the last frame must have exactly one active speaker")
    return int(np.argmax(last)) + 1


def predict_next_speaker(spec: ModelSpec, history: ObservationSet,
                         config: FitConfig, min_history: int = 20) -> int:
    """Predict who speaks next after the current speaker's turn.

    Fits the model on the history, then scores every other chain by its
    one-step predictive probability of emitting the speaking symbol; the
    argmax wins, ties going to the lowest chain index.  Never returns the
    current speaker.
    """
    if history.length < min_history:
        raise ValueError(f"history must span at least {min_history} steps")
    current = _current_speaker(history)
    spec = spec.resolved_against(history)
    params, _, _ = fit(spec, history, config)
    fwd = forward_pass(params, spec, history)
    symbol_probs = one_step_symbol_predictive(params, spec, fwd)
    speak = symbol_probs[:, SPEAKING_SYMBOL - 1].copy()
    speak[current - 1] = -np.inf
    return int(np.argmax(speak)) + 1


def nn_baseline_predict(events: list[TurnTakingEvent], current_speaker: int,
                        num_chains: int) -> int:
    """Most frequent follower of the current speaker among past events.

    Ties resolve to the lowest chain index; with no matching history the
    lowest-index other chain is returned.
    """
    counts = Counter(e.next_speaker for e in events
                     if e.previous_speaker == current_speaker)
    if not counts:
        return 1 if current_speaker != 1 else 2
    best = max(counts.values())
    return min(c for c, n in counts.items() if n == best)


# ---------------------------------------------------------------------------
# Structural-change detection
# ---------------------------------------------------------------------------

class ChangeLabel(enum.Enum):
    CHANGED = "changed"
    UNCHANGED = "unchanged"


@dataclass(frozen=True)
class ChangeDetectionResult:
    """Expected influence matrices at the two probe times and their
    Frobenius-distance score; ``label`` is set by pairwise comparison."""

    matrix_start: np.ndarray
    matrix_probe: np.ndarray
    probe_times: tuple[int, int]
    score: float
    label: ChangeLabel | None = None


def expected_influence_matrix(params: ModelParams, pattern_marginals: np.ndarray,
                              time: int) -> np.ndarray:
    """Posterior-weighted blend of the influence matrices at one time step
    (1-based)."""
    lam = pattern_marginals[time - 1]
    return np.tensordot(lam, params.influence, axes=([0], [0]))


def detect_structural_change(spec: ModelSpec, obs: ObservationSet,
                             config: FitConfig,
                             probe_fraction: float = 0.8) -> ChangeDetectionResult:
    """Fit the switching model and score how much the expected influence
    matrix moves between t=1 and t=ceil(probe_fraction * T)."""
    if not (0.0 < probe_fraction <= 1.0):
        raise ValueError("probe_fraction must lie in (0, 1]")
    params, posteriors, _ = fit(spec, obs, config)
    t_probe = min(max(math.ceil(probe_fraction * obs.length), 1), obs.length)
    m_start = expected_influence_matrix(params, posteriors.pattern_marginals, 1)
    m_probe = expected_influence_matrix(params, posteriors.pattern_marginals, t_probe)
    score = float(np.linalg.norm(m_probe - m_start))
    return ChangeDetectionResult(m_start, m_probe, (1, t_probe), score)


def label_change_pair(first: ChangeDetectionResult, second: ChangeDetectionResult
                      ) -> tuple[ChangeDetectionResult, ChangeDetectionResult]:
    """Label the higher-scoring sample Changed; a tie leaves the first
    sample Unchanged."""
    first_changed = first.score > second.score
    return (
        replace(first, label=ChangeLabel.CHANGED if first_changed
                else ChangeLabel.UNCHANGED),
        replace(second, label=ChangeLabel.UNCHANGED if first_changed
                else ChangeLabel.CHANGED),
    )


# ---------------------------------------------------------------------------
# Evaluation harness
# ---------------------------------------------------------------------------

def evaluate_turn_prediction(obs: ObservationSet, events: list[TurnTakingEvent],
                             pattern_counts: list[int], config: FitConfig,
                             min_history: int = 20,
                             prior_exponent: float = 1.0) -> dict[str, float]:
    """Accuracy of model-based and nearest-neighbor prediction on a set of
    turn events from one sample.

    For each event, every method sees only data strictly before the event
    time.  Events whose history is shorter than ``min_history`` are skipped
    for all methods alike.  Returns accuracies keyed "model J=j" and "NN".
    """
    usable = [e for e in events if e.time - 1 >= min_history]
    if not usable:
        raise ValueError("no events with enough history to evaluate")
    hits: dict[str, int] = {f"model J={j}": 0 for j in pattern_counts}
    hits["NN"] = 0
    for event in usable:
        history = ObservationSet(obs.values[:, :event.time - 1])
        for j in pattern_counts:
            spec = ModelSpec(obs.num_chains, 2, j, prior_exponent, Multinomial(2))
            guess = predict_next_speaker(spec, history, config, min_history)
            hits[f"model J={j}"] += guess == event.next_speaker
        earlier = [e for e in events if e.time < event.time]
        guess = nn_baseline_predict(earlier, event.previous_speaker, obs.num_chains)
        hits["NN"] += guess == event.next_speaker
    return {k: v / len(usable) for k, v in hits.items()}

"""State spaces, event histories and aggregated counting processes.

States are labelled ``1..n_states``. An event history records one subject's
right-continuous path through the state space as an ordered list of
``(time, from_state, to_state)`` records, optionally ending with independent
right censoring. Aggregation turns a cohort of histories into the at-risk
and transition-count processes that every estimator consumes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class InputError(ValueError):
    """Invalid user-supplied data or configuration."""


def derive_seed(seed, *extra) -> list[int]:
    """Extend a seed (int or sequence of ints) into a deterministic child stream key.

    Feeding the result to ``numpy.random.default_rng`` yields streams that
    depend only on the seed and the extension tags, never on scheduling.
    """
    base = [int(seed)] if isinstance(seed, (int, np.integer)) else [int(x) for x in seed]
    return base + [int(e) for e in extra]


def split_range(total: int, workers: int) -> list[range]:
    """Split ``range(total)`` into contiguous chunks, one per worker at most."""
    workers = max(1, min(int(workers), total))
    bounds = np.linspace(0, total, workers + 1).astype(int)
    return [range(bounds[i], bounds[i + 1]) for i in range(workers) if bounds[i + 1] > bounds[i]]


class InvalidHistoryError(InputError):
    """An event history violates the state-space constraints."""


class EmptyLandmarkError(RuntimeError):
    """No subject occupies the landmark states at the landmark time."""


@dataclass(frozen=True)
class StateSpace:
    """Finite state space with an explicit set of allowed transitions.

    Parameters
    ----------
    n_states : int
        Number of states, labelled ``1..n_states``.
    transitions : collection of (int, int)
        Ordered pairs ``(from_state, to_state)`` the process may traverse.
    labels : tuple of str, optional
        Display names, one per state. Defaults to ``"1".."K"``.
    """

    n_states: int
    transitions: frozenset[tuple[int, int]]
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.n_states < 1:
            raise InputError("state space needs at least one state")
        trans = frozenset((int(j), int(k)) for j, k in self.transitions)
        if not trans:
            raise InputError("transition set must be non-empty")
        for j, k in trans:
            if not (1 <= j <= self.n_states and 1 <= k <= self.n_states):
                raise InputError(f"transition ({j},{k}) outside states 1..{self.n_states}")
            if j == k:
                raise InputError(f"self-transition ({j},{k}) is not allowed")
        object.__setattr__(self, "transitions", trans)
        if self.labels is not None:
            labels = tuple(str(x) for x in self.labels)
            if len(labels) != self.n_states:
                raise InputError("need one label per state")
            object.__setattr__(self, "labels", labels)

    @cached_property
    def absorbing(self) -> frozenset[int]:
        """States with no outgoing transition."""
        outgoing = {j for j, _ in self.transitions}
        return frozenset(j for j in range(1, self.n_states + 1) if j not in outgoing)

    @cached_property
    def sorted_transitions(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted(self.transitions))

    def label(self, state: int) -> str:
        if self.labels is None:
            return str(state)
        return self.labels[state - 1]

    def state_for_label(self, label: str) -> int:
        """Map a display label (or a plain integer) back to a state index."""
        if self.labels is not None and label in self.labels:
            return self.labels.index(label) + 1
        try:
            state = int(label)
        except ValueError:
            raise InputError(f"unknown state label {label!r}") from None
        if not 1 <= state <= self.n_states:
            raise InputError(f"state {state} outside 1..{self.n_states}")
        return state


@dataclass(frozen=True)
class EventHistory:
    """One subject's observed path: transitions, censoring and horizon.

    ``transitions`` holds ``(time, from_state, to_state)`` with strictly
    increasing times. ``censor_time`` is the end of observation if the
    subject was censored (the subject leaves every risk set strictly after
    it); ``horizon`` is the administrative end of follow-up.
    """

    subject_id: str
    initial_state: int
    transitions: tuple[tuple[float, int, int], ...]
    horizon: float
    censor_time: float | None = None

    def __post_init__(self):
        trans = tuple((float(t), int(j), int(k)) for t, j, k in self.transitions)
        object.__setattr__(self, "transitions", trans)

    @property
    def observed_until(self) -> float:
        """Last time the subject is under observation."""
        if self.censor_time is None:
            return self.horizon
        return min(self.censor_time, self.horizon)

    @property
    def final_state(self) -> int:
        return self.transitions[-1][2] if self.transitions else self.initial_state


def validate_history(history: EventHistory, space: StateSpace) -> None:
    """Check a history against the state space, raising on the first violation.

    Raises
    ------
    InvalidHistoryError
        Naming the subject and the offending record.
    """
    sid = history.subject_id
    if not 1 <= history.initial_state <= space.n_states:
        raise InvalidHistoryError(f"subject {sid!r}: initial state {history.initial_state} "
                                  f"outside 1..{space.n_states}")
    if history.horizon <= 0:
        raise InvalidHistoryError(f"subject {sid!r}: horizon must be positive")
    if history.censor_time is not None and history.censor_time < 0:
        raise InvalidHistoryError(f"subject {sid!r}: negative censoring time")
    end = history.observed_until
    prev_time = 0.0
    state = history.initial_state
    for i, (time, frm, to) in enumerate(history.transitions):
        rec = f"subject {sid!r} record {i} ({time}, {frm}->{to})"
        if time <= 0:
            raise InvalidHistoryError(f"{rec}: transition times must be positive")
        if time <= prev_time and i > 0:
            raise InvalidHistoryError(f"{rec}: times not strictly increasing")
        if time > end:
            raise InvalidHistoryError(f"{rec}: transition after end of observation ({end})")
        if frm != state:
            raise InvalidHistoryError(f"{rec}: chain break, expected from-state {state}")
        if (frm, to) not in space.transitions:
            raise InvalidHistoryError(f"{rec}: transition not in the allowed set")
        if frm in space.absorbing:
            raise InvalidHistoryError(f"{rec}: transition out of absorbing state {frm}")
        prev_time = time
        state = to


def state_at(history: EventHistory, t: float) -> int:
    """Right-continuous state of the subject at time ``t``.

    Raises
    ------
    InputError
        If ``t`` lies outside the observation window ``[0, min(censor, horizon)]``.
    """
    if t < 0 or t > history.observed_until:
        raise InputError(f"subject {history.subject_id!r} not observed at t={t}")
    state = history.initial_state
    for time, _, to in history.transitions:
        if time <= t:
            state = to
        else:
            break
    return state


def landmark_subset(histories: list[EventHistory], s: float,
                    states: frozenset[int] | set[int]) -> list[EventHistory]:
    """Subjects under observation at ``s`` whose state at ``s`` lies in ``states``.

    Order is preserved; an empty result is legal.
    """
    if s < 0:
        raise InputError("landmark time must be nonnegative")
    selected = []
    for h in histories:
        if s > h.observed_until:
            continue
        if state_at(h, s) in states:
            selected.append(h)
    return selected


@dataclass(frozen=True)
class AggregatedProcesses:
    """Pooled at-risk and transition-count processes over a cohort.

    ``event_times`` are the sorted distinct times in ``(window_start, horizon]``
    at which any counted transition occurs; ties across subjects are merged
    into a single jump. ``at_risk[u, j-1]`` is the left-limit count of
    subjects in state ``j`` at ``event_times[u]``, and
    ``n_events[u, j-1, k-1]`` the number of ``j -> k`` moves at that time.
    """

    space: StateSpace
    window_start: float
    event_times: np.ndarray
    at_risk: np.ndarray
    n_events: np.ndarray
    n_effective: int

    def events_for(self, transition: tuple[int, int]) -> np.ndarray:
        j, k = transition
        return self.n_events[:, j - 1, k - 1]


def occupancy_intervals(histories: list[EventHistory],
                        n_states: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per state, interval bounds (start, stop] during which subjects are at risk.

    A subject occupying state ``j`` on ``[a, b)`` and observed until ``end``
    is at risk for leaving ``j`` at any ``u`` with ``a < u <= min(b, end)``,
    which is how the left-limit convention for the at-risk process reads on
    intervals.
    """
    starts: list[list[float]] = [[] for _ in range(n_states)]
    stops: list[list[float]] = [[] for _ in range(n_states)]
    for h in histories:
        end = h.observed_until
        state = h.initial_state
        prev = 0.0
        for time, _, to in h.transitions:
            b = min(time, end)
            if b > prev:
                starts[state - 1].append(prev)
                stops[state - 1].append(b)
            state = to
            prev = time
        if end > prev:
            starts[state - 1].append(prev)
            stops[state - 1].append(end)
    return [(np.sort(np.asarray(a, dtype=float)), np.sort(np.asarray(b, dtype=float)))
            for a, b in zip(starts, stops)]


def at_risk_matrix(intervals: list[tuple[np.ndarray, np.ndarray]],
                   times: np.ndarray) -> np.ndarray:
    """Left-limit at-risk counts per state, evaluated at each query time."""
    times = np.asarray(times, dtype=float)
    out = np.empty((times.size, len(intervals)), dtype=np.int64)
    for j, (starts, stops) in enumerate(intervals):
        out[:, j] = (np.searchsorted(starts, times, side="left")
                     - np.searchsorted(stops, times, side="left"))
    return out


def build_aggregated(histories: list[EventHistory], space: StateSpace,
                     window_start: float = 0.0) -> AggregatedProcesses:
    """Aggregate a cohort into pooled counting processes over ``(window_start, horizon]``.

    Every history is validated first; transitions at or before
    ``window_start`` are excluded (counts accrue on a half-open window),
    and censored subjects leave every risk set strictly after their
    censoring time.
    """
    if window_start < 0:
        raise InputError("window_start must be nonnegative")
    for h in histories:
        validate_history(h, space)

    times, froms, tos = [], [], []
    for h in histories:
        for time, frm, to in h.transitions:
            if time > window_start:
                times.append(time)
                froms.append(frm)
                tos.append(to)

    event_times = np.unique(np.asarray(times, dtype=float))
    m = event_times.size
    K = space.n_states
    n_events = np.zeros((m, K, K), dtype=np.int64)
    if m:
        idx = np.searchsorted(event_times, np.asarray(times, dtype=float))
        np.add.at(n_events, (idx, np.asarray(froms) - 1, np.asarray(tos) - 1), 1)

    intervals = occupancy_intervals(histories, K)
    at_risk = at_risk_matrix(intervals, event_times)

    return AggregatedProcesses(space=space, window_start=float(window_start),
                               event_times=event_times, at_risk=at_risk,
                               n_events=n_events, n_effective=len(histories))

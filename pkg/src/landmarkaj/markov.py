"""Transition-wise Markov tests based on two-sample log-rank comparisons.

For a transition ``j -> k`` the hazard inside the landmark population
(state set ``l1`` at landmark time ``s``) is compared against the hazard
among subjects occupying the disjoint state set ``l2`` at ``s``. Under the
Markov assumption both hazards agree on ``(s, horizon]``, so a significant
difference flags the transition as non-Markov. The point test uses the
chi-square calibration at a single landmark; the grid test maximises the
statistic over a landmark grid and calibrates by a wild bootstrap with
subject-level multipliers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import (EventHistory, InputError, StateSpace, derive_seed,
                   landmark_subset, state_at)
from .estimators import _as_state_set

MULTIPLIERS = ("poisson", "gaussian")


@dataclass(frozen=True)
class MarkovTestReport:
    """Outcome of a point or grid Markov test for one transition."""

    transition: tuple[int, int]
    method: str
    landmarks: tuple[float, ...]
    statistic: float
    p_value: float
    replicates: int
    group_sizes: tuple[tuple[int, int], ...]
    degenerate: bool


@dataclass(frozen=True)
class NonMarkovSelection:
    """Per-transition test table plus the selected non-Markov set."""

    selected: frozenset[tuple[int, int]]
    reports: tuple[MarkovTestReport, ...]
    alpha: float
    method: str


def _default_l2(histories: list[EventHistory], s: float,
                l1: frozenset[int]) -> frozenset[int]:
    """States occupied at the landmark by anyone outside ``l1``."""
    occupied = set()
    for h in histories:
        if s <= h.observed_until:
            occupied.add(state_at(h, s))
    return frozenset(occupied - l1)


def _group_indices(histories, s, states) -> list[int]:
    members = []
    for i, h in enumerate(histories):
        if s <= h.observed_until and state_at(h, s) in states:
            members.append(i)
    return members


def _logrank_terms(histories: list[EventHistory], idx1: list[int], idx2: list[int],
                   transition: tuple[int, int], s: float):
    """Pooled two-sample log-rank pieces for one transition over ``(s, horizon]``.

    Returns the pooled event times together with the group event counts and
    at-risk sizes needed for the score, the hypergeometric variance and the
    per-subject score decomposition.
    """
    j, k = transition
    group = {i: 1 for i in idx1}
    group.update({i: 0 for i in idx2})

    event_times, event_groups = [], []
    for i, flag in group.items():
        for t, frm, to in histories[i].transitions:
            if frm == j and to == k and t > s:
                event_times.append(t)
                event_groups.append(flag)
    times = np.unique(np.asarray(event_times, dtype=float))
    m = times.size

    d1 = np.zeros(m)
    d = np.zeros(m)
    if m:
        pos = np.searchsorted(times, np.asarray(event_times, dtype=float))
        np.add.at(d, pos, 1.0)
        np.add.at(d1, pos, np.asarray(event_groups, dtype=float))

    y1 = _state_at_risk([histories[i] for i in idx1], j, times)
    y2 = _state_at_risk([histories[i] for i in idx2], j, times)
    return times, d, d1, y1, y2


def _state_at_risk(histories: list[EventHistory], state: int, times: np.ndarray) -> np.ndarray:
    """Left-limit at-risk counts in one state at each query time."""
    starts, stops = [], []
    for h in histories:
        for a, b in _state_periods(h, state):
            starts.append(a)
            stops.append(b)
    starts = np.sort(np.asarray(starts, dtype=float))
    stops = np.sort(np.asarray(stops, dtype=float))
    return (np.searchsorted(starts, times, side="left")
            - np.searchsorted(stops, times, side="left")).astype(float)


def _state_periods(history: EventHistory, state: int):
    """Intervals (a, b] on which the subject is at risk in ``state``."""
    end = history.observed_until
    current = history.initial_state
    prev = 0.0
    for t, _, to in history.transitions:
        b = min(t, end)
        if current == state and b > prev:
            yield prev, b
        current = to
        prev = t
    if current == state and end > prev:
        yield prev, end


def _uv_from_terms(times, d, d1, y1, y2) -> tuple[float, float]:
    if times.size == 0:
        return 0.0, 0.0
    y = y1 + y2
    score = float(np.sum(d1 - y1 * d / y))
    valid = y > 1
    yv, y1v, y2v, dv = y[valid], y1[valid], y2[valid], d[valid]
    variance = float(np.sum(dv * (y1v * y2v / yv ** 2) * ((yv - dv) / (yv - 1))))
    return score, variance


def _subject_scores(histories, idx1, idx2, transition, s, times, d, y1, y2) -> np.ndarray:
    """Per-subject decomposition of the log-rank score.

    Each subject contributes its compensated counting-process increments
    weighted by its group indicator minus the at-risk share of group one;
    the contributions sum to the pooled score exactly.
    """
    j, k = transition
    n = len(histories)
    scores = np.zeros(n)
    if times.size == 0:
        return scores
    y = y1 + y2
    haz = d / y
    share = y1 / y
    cum_haz = np.concatenate([[0.0], np.cumsum(haz)])
    cum_share_haz = np.concatenate([[0.0], np.cumsum(share * haz)])

    for flag, members in ((1.0, idx1), (0.0, idx2)):
        for i in members:
            h = histories[i]
            w = 0.0
            for t, frm, to in h.transitions:
                if frm == j and to == k and t > s:
                    pos = np.searchsorted(times, t)
                    w += flag - share[pos]
            for a, b in _state_periods(h, j):
                lo = np.searchsorted(times, a, side="right")
                hi = np.searchsorted(times, b, side="right")
                w -= flag * (cum_haz[hi] - cum_haz[lo]) - (cum_share_haz[hi] - cum_share_haz[lo])
            scores[i] = w
    return scores


def _resolve_groups(histories, space, s, l1, l2):
    l1_set = _as_state_set(l1)
    for state in l1_set:
        if not 1 <= state <= space.n_states:
            raise InputError(f"landmark state {state} outside 1..{space.n_states}")
    l2_set = _default_l2(histories, s, l1_set) if l2 is None else _as_state_set(l2)
    if l1_set & l2_set:
        raise InputError("landmark groups must be disjoint state sets")
    return l1_set, l2_set


def logrank_point(histories: list[EventHistory], space: StateSpace,
                  transition: tuple[int, int], s: float, l1,
                  l2=None) -> MarkovTestReport:
    """Two-sample log-rank point test of transition-hazard equality after ``s``.

    ``l2`` defaults to every other state occupied at the landmark. A
    transition with no events after ``s`` or with one group empty yields a
    degenerate report with statistic 0 and p-value 1.
    """
    transition = (int(transition[0]), int(transition[1]))
    if transition not in space.transitions:
        raise InputError(f"transition {transition} not in the allowed set")
    l1_set, l2_set = _resolve_groups(histories, space, s, l1, l2)
    idx1 = _group_indices(histories, s, l1_set)
    idx2 = _group_indices(histories, s, l2_set)
    terms = _logrank_terms(histories, idx1, idx2, transition, s)
    score, variance = _uv_from_terms(*terms)
    degenerate = variance <= 0.0
    statistic = 0.0 if degenerate else score ** 2 / variance
    p_value = 1.0 if degenerate else float(stats.chi2.sf(statistic, df=1))
    return MarkovTestReport(transition=transition, method="point", landmarks=(float(s),),
                            statistic=float(statistic), p_value=p_value, replicates=0,
                            group_sizes=((len(idx1), len(idx2)),), degenerate=degenerate)


def grid_test(histories: list[EventHistory], space: StateSpace,
              transition: tuple[int, int], l1, grid, l2=None, B: int = 500,
              seed=0, multiplier: str = "poisson") -> MarkovTestReport:
    """Maximum of point statistics over a landmark grid, wild-bootstrap calibrated.

    Each bootstrap replicate draws one centred unit-mean Poisson (or
    standard normal) multiplier per subject, shared across the whole grid,
    perturbs the per-subject score contributions and standardises by the
    original variances; the p-value uses the add-one rule
    ``(1 + #{replicate max >= observed}) / (B + 1)``.
    """
    transition = (int(transition[0]), int(transition[1]))
    if transition not in space.transitions:
        raise InputError(f"transition {transition} not in the allowed set")
    grid = [float(x) for x in np.atleast_1d(grid)]
    if not grid or sorted(grid) != grid:
        raise InputError("landmark grid must be non-empty and sorted")
    if B < 1:
        raise InputError("grid test needs at least one bootstrap replicate")
    if multiplier not in MULTIPLIERS:
        raise InputError(f"multiplier must be one of {MULTIPLIERS}")

    n = len(histories)
    statistics, variances, score_columns, sizes = [], [], [], []
    for s in grid:
        l1_set, l2_set = _resolve_groups(histories, space, s, l1, l2)
        idx1 = _group_indices(histories, s, l1_set)
        idx2 = _group_indices(histories, s, l2_set)
        times, d, d1, y1, y2 = _logrank_terms(histories, idx1, idx2, transition, s)
        score, variance = _uv_from_terms(times, d, d1, y1, y2)
        sizes.append((len(idx1), len(idx2)))
        if variance > 0.0:
            statistics.append(score ** 2 / variance)
            variances.append(variance)
            score_columns.append(_subject_scores(histories, idx1, idx2, transition,
                                                 s, times, d, y1, y2))

    if not statistics:
        return MarkovTestReport(transition=transition, method="grid",
                                landmarks=tuple(grid), statistic=0.0, p_value=1.0,
                                replicates=B, group_sizes=tuple(sizes), degenerate=True)

    observed = max(statistics)
    scores = np.column_stack(score_columns)
    rng = np.random.default_rng(derive_seed(seed))
    if multiplier == "poisson":
        multipliers = rng.poisson(1.0, size=(B, n)) - 1.0
    else:
        multipliers = rng.standard_normal((B, n))
    perturbed = multipliers @ scores
    replicate_max = (perturbed ** 2 / np.asarray(variances)).max(axis=1)
    p_value = (1.0 + np.count_nonzero(replicate_max >= observed)) / (B + 1.0)
    return MarkovTestReport(transition=transition, method="grid", landmarks=tuple(grid),
                            statistic=float(observed), p_value=float(p_value),
                            replicates=B, group_sizes=tuple(sizes), degenerate=False)


def select_nonmarkov(histories: list[EventHistory], space: StateSpace, landmarks, l1,
                     alpha: float = 0.05, method: str = "grid", l2=None, B: int = 500,
                     seed=0, multiplier: str = "poisson",
                     bonferroni: bool = False) -> NonMarkovSelection:
    """Test every allowed transition and collect those rejected at level ``alpha``.

    ``landmarks`` is a single time for the point test or a sorted grid for
    the grid test. The returned selection is the non-Markov set feeding the
    hybrid estimator, together with the full report table.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InputError("alpha must lie in [0, 1]")
    if method not in ("point", "grid"):
        raise InputError("method must be 'point' or 'grid'")
    threshold = alpha / len(space.sorted_transitions) if bonferroni else alpha

    reports = []
    for index, transition in enumerate(space.sorted_transitions):
        if method == "point":
            s = float(np.atleast_1d(landmarks)[0])
            reports.append(logrank_point(histories, space, transition, s, l1, l2))
        else:
            reports.append(grid_test(histories, space, transition, l1, landmarks,
                                     l2=l2, B=B, seed=derive_seed(seed, index),
                                     multiplier=multiplier))
    selected = frozenset(r.transition for r in reports if r.p_value < threshold)
    return NonMarkovSelection(selected=selected, reports=tuple(reports),
                              alpha=alpha, method=method)

"""Nelson-Aalen hazards, the product-integral map and the transition-probability estimators.

Three estimators of the transition probabilities from a landmark state are
provided. ``aalen_johansen`` plugs full-sample hazards into the product
integral and is consistent only for Markov processes. ``lmaj`` restricts
estimation to the subjects occupying the landmark state at the landmark
time and stays consistent without the Markov assumption, at the price of a
smaller sample. ``haj`` mixes the two hazard sources transition by
transition: landmark-sample hazards on a designated non-Markov set, full
sample hazards elsewhere.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import (AggregatedProcesses, EmptyLandmarkError, EventHistory, InputError,
                   StateSpace, build_aggregated, landmark_subset, state_at)
from .stepfun import StepFunction

ESTIMATOR_KINDS = ("aj", "lmaj", "haj")


@dataclass(frozen=True)
class CumulativeHazardMatrix:
    """Matrix-valued cumulative-hazard step function.

    ``increments[u]`` is the K x K jump of the hazard matrix at
    ``jump_times[u]``: off-diagonal entries are nonnegative Nelson-Aalen
    increments, diagonals the negative row sums, so each ``I + increment``
    factor is row stochastic.
    """

    space: StateSpace
    window_start: float
    jump_times: np.ndarray
    increments: np.ndarray

    def cumulative(self, transition: tuple[int, int]) -> StepFunction:
        """Cumulative hazard for one transition as a scalar step function."""
        j, k = transition
        return StepFunction(self.jump_times,
                            np.cumsum(self.increments[:, j - 1, k - 1]),
                            0.0)


@dataclass(frozen=True)
class TransitionProbabilityResult:
    """Estimated transition-probability curve from a landmark.

    ``curve`` maps ``t`` to the estimated row vector of probabilities of
    occupying each state at ``t`` given the landmark condition at
    ``landmark_time``. ``nonmarkov`` is empty for the plain Aalen-Johansen
    estimator and the full transition set for the landmark estimator.
    """

    kind: str
    landmark_time: float
    landmark_states: frozenset[int]
    nonmarkov: frozenset[tuple[int, int]]
    curve: StepFunction
    n_total: int
    n_landmark: int

    def probabilities(self, t) -> np.ndarray:
        return self.curve(t)


def nelson_aalen(agg: AggregatedProcesses) -> CumulativeHazardMatrix:
    """Nelson-Aalen increments ``dN_jk(u) / Y_j(u)`` at each pooled event time.

    Times where a risk set is empty contribute a zero increment rather than
    a division error.
    """
    at_risk = agg.at_risk[:, :, None].astype(float)
    increments = np.zeros_like(agg.n_events, dtype=float)
    np.divide(agg.n_events, at_risk, out=increments, where=at_risk > 0)
    _rebuild_diagonal(increments)
    return CumulativeHazardMatrix(space=agg.space, window_start=agg.window_start,
                                  jump_times=agg.event_times, increments=increments)


def _rebuild_diagonal(increments: np.ndarray) -> None:
    """Set each diagonal to minus the off-diagonal row sum, in place."""
    K = increments.shape[1]
    rng = np.arange(K)
    increments[:, rng, rng] = 0.0
    increments[:, rng, rng] = -increments.sum(axis=2)


def product_integral(hazard: CumulativeHazardMatrix, s: float, t: float) -> np.ndarray:
    """Ordered product of ``I + dLambda(u)`` over event times ``u`` in ``(s, t]``.

    Returns the identity when the interval contains no jump; factors are
    multiplied left to right in increasing ``u``.
    """
    if s > t:
        raise InputError(f"product integral requires s <= t, got s={s} t={t}")
    if s < hazard.window_start:
        raise InputError(f"s={s} lies before the hazard window start {hazard.window_start}")
    K = hazard.space.n_states
    lo = np.searchsorted(hazard.jump_times, s, side="right")
    hi = np.searchsorted(hazard.jump_times, t, side="right")
    result = np.eye(K)
    eye = np.eye(K)
    for i in range(lo, hi):
        result = result @ (eye + hazard.increments[i])
    return result


def _propagate(start: np.ndarray, increments: np.ndarray) -> np.ndarray:
    """Row vector pushed through successive ``I + increment`` factors."""
    m, K = increments.shape[0], increments.shape[1]
    factors = np.broadcast_to(np.eye(K), (m, K, K)) + increments
    out = np.empty((m, K))
    v = start
    for i in range(m):
        v = v @ factors[i]
        out[i] = v
    return out


def _start_vector(histories: list[EventHistory], space: StateSpace, s: float,
                  landmark_states: frozenset[int]) -> np.ndarray:
    """Initial probability row at the landmark time.

    A singleton landmark gives the indicator vector of that state. For a
    landmark set the empirical distribution of the state at ``s`` across the
    occupying subjects is used, which keeps the estimators consistent with
    each other and with the occupation-fraction identity.
    """
    K = space.n_states
    for state in landmark_states:
        if not 1 <= state <= K:
            raise InputError(f"landmark state {state} outside 1..{K}")
    if len(landmark_states) == 1:
        v = np.zeros(K)
        v[next(iter(landmark_states)) - 1] = 1.0
        return v
    counts = np.zeros(K)
    for h in histories:
        if s <= h.observed_until:
            state = state_at(h, s)
            if state in landmark_states:
                counts[state - 1] += 1.0
    total = counts.sum()
    if total == 0:
        raise EmptyLandmarkError(f"no subject occupies states {sorted(landmark_states)} at s={s}")
    return counts / total


def _as_state_set(l) -> frozenset[int]:
    if isinstance(l, (int, np.integer)):
        return frozenset({int(l)})
    return frozenset(int(x) for x in l)


def _curve(hazard: CumulativeHazardMatrix, s: float, start: np.ndarray) -> StepFunction:
    values = _propagate(start, hazard.increments)
    return StepFunction(hazard.jump_times, values, start)


def aalen_johansen(histories: list[EventHistory], space: StateSpace, s: float,
                   l) -> TransitionProbabilityResult:
    """Plug-in product-integral estimator using full-sample hazards on ``(s, horizon]``.

    All subjects contribute to the risk sets whatever their state at the
    landmark; the landmark population may even be empty.
    """
    l_set = _as_state_set(l)
    start = _start_vector(histories, space, s, l_set)
    hazard = nelson_aalen(build_aggregated(histories, space, window_start=s))
    n_landmark = len(landmark_subset(histories, s, l_set))
    return TransitionProbabilityResult(kind="aj", landmark_time=float(s),
                                       landmark_states=l_set, nonmarkov=frozenset(),
                                       curve=_curve(hazard, s, start),
                                       n_total=len(histories), n_landmark=n_landmark)


def lmaj(histories: list[EventHistory], space: StateSpace, s: float,
         l) -> TransitionProbabilityResult:
    """Landmark estimator: the same pipeline run on the landmark subsample only."""
    l_set = _as_state_set(l)
    subset = landmark_subset(histories, s, l_set)
    if not subset:
        raise EmptyLandmarkError(f"empty landmark population at s={s}, states={sorted(l_set)}")
    start = _start_vector(histories, space, s, l_set)
    hazard = nelson_aalen(build_aggregated(subset, space, window_start=s))
    return TransitionProbabilityResult(kind="lmaj", landmark_time=float(s),
                                       landmark_states=l_set, nonmarkov=space.transitions,
                                       curve=_curve(hazard, s, start),
                                       n_total=len(histories), n_landmark=len(subset))


def hybrid_increments(full: CumulativeHazardMatrix, landmark: CumulativeHazardMatrix,
                      nonmarkov: frozenset[tuple[int, int]]) -> tuple[np.ndarray, np.ndarray]:
    """Merge full-sample and landmark-sample hazard increments.

    Increments live on the union of both jump-time sets, missing increments
    counting as zero; times where nothing moves are dropped again so the
    degenerate choices of ``nonmarkov`` reproduce the pure estimators
    exactly. Rows whose mixed off-diagonal increments exceed one (possible
    only at tied times) are rescaled proportionally to keep each factor a
    probability transition, with a warning.
    """
    K = full.space.n_states
    union = np.union1d(full.jump_times, landmark.jump_times)
    merged = np.zeros((union.size, K, K))

    full_idx = np.searchsorted(union, full.jump_times)
    lm_idx = np.searchsorted(union, landmark.jump_times)
    for j, k in full.space.sorted_transitions:
        source, idx = (landmark, lm_idx) if (j, k) in nonmarkov else (full, full_idx)
        merged[idx, j - 1, k - 1] = source.increments[:, j - 1, k - 1]

    row_sums = merged.sum(axis=2)
    over = row_sums > 1.0
    if np.any(over):
        warnings.warn("hybrid hazard rows exceeded total increment 1 at tied event "
                      "times; rescaling those rows", RuntimeWarning, stacklevel=2)
        u_idx, j_idx = np.nonzero(over)
        merged[u_idx, j_idx, :] /= row_sums[over][:, None]

    _rebuild_diagonal(merged)
    keep = np.any(merged != 0.0, axis=(1, 2))
    return union[keep], merged[keep]


def haj(histories: list[EventHistory], space: StateSpace, s: float, l,
        nonmarkov) -> TransitionProbabilityResult:
    """Hybrid estimator: landmark hazards on ``nonmarkov``, full-sample hazards elsewhere.

    ``nonmarkov`` empty reproduces :func:`aalen_johansen` exactly, the full
    transition set reproduces :func:`lmaj` exactly.
    """
    l_set = _as_state_set(l)
    A = frozenset((int(j), int(k)) for j, k in nonmarkov)
    if not A <= space.transitions:
        raise InputError(f"non-Markov set {sorted(A - space.transitions)} "
                         "contains transitions outside the allowed set")
    start = _start_vector(histories, space, s, l_set)
    full_hazard = nelson_aalen(build_aggregated(histories, space, window_start=s))

    subset = landmark_subset(histories, s, l_set)
    if A:
        if not subset:
            raise EmptyLandmarkError(f"empty landmark population at s={s}, states={sorted(l_set)}")
        lm_hazard = nelson_aalen(build_aggregated(subset, space, window_start=s))
    else:
        lm_hazard = CumulativeHazardMatrix(space=space, window_start=float(s),
                                           jump_times=np.empty(0),
                                           increments=np.empty((0, space.n_states, space.n_states)))
    times, increments = hybrid_increments(full_hazard, lm_hazard, A)
    hazard = CumulativeHazardMatrix(space=space, window_start=float(s),
                                    jump_times=times, increments=increments)
    return TransitionProbabilityResult(kind="haj", landmark_time=float(s),
                                       landmark_states=l_set, nonmarkov=A,
                                       curve=_curve(hazard, s, start),
                                       n_total=len(histories), n_landmark=len(subset))


def initial_distribution(histories: list[EventHistory], space: StateSpace) -> np.ndarray:
    """Empirical distribution over states just after time zero."""
    counts = np.zeros(space.n_states)
    for h in histories:
        if h.observed_until > 0:
            counts[h.initial_state - 1] += 1.0
    total = counts.sum()
    if total == 0:
        raise InputError("no subject under observation just after time zero")
    return counts / total


def state_occupation_curve(histories: list[EventHistory], space: StateSpace) -> StepFunction:
    """Estimated state-occupation probabilities as a function of time.

    The initial empirical distribution is pushed through the full-sample
    product integral from time zero. Consistent for occupation
    probabilities even without the Markov assumption.
    """
    start = initial_distribution(histories, space)
    hazard = nelson_aalen(build_aggregated(histories, space, window_start=0.0))
    return _curve(hazard, 0.0, start)


def state_occupation(histories: list[EventHistory], space: StateSpace, t: float) -> np.ndarray:
    """State-occupation probability vector at a single time."""
    if t < 0:
        raise InputError("time must be nonnegative")
    return state_occupation_curve(histories, space)(t)


def estimate(histories: list[EventHistory], space: StateSpace, kind: str, s: float, l,
             nonmarkov=frozenset()) -> TransitionProbabilityResult:
    """Dispatch to one of the three estimators by kind (``aj``, ``lmaj``, ``haj``)."""
    if kind == "aj":
        return aalen_johansen(histories, space, s, l)
    if kind == "lmaj":
        return lmaj(histories, space, s, l)
    if kind == "haj":
        return haj(histories, space, s, l, nonmarkov)
    raise InputError(f"unknown estimator kind {kind!r}, expected one of {ESTIMATOR_KINDS}")

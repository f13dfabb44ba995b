"""Uncertainty quantification: Greenwood-type plug-in errors and subject bootstrap.

The plug-in standard errors propagate multinomial increment covariances
through the product integral and are valid under the Markov assumption
only; for the landmark and hybrid estimators the nonparametric bootstrap
over whole subject paths is the recommended route.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import (EmptyLandmarkError, EventHistory, InputError, StateSpace,
                   build_aggregated, derive_seed, split_range)
from .estimators import _as_state_set, _start_vector, estimate, nelson_aalen
from .stepfun import StepFunction


@dataclass(frozen=True)
class ConfidenceBand:
    """Pointwise confidence band around a probability curve.

    ``curve``, ``lower`` and ``upper`` share one jump grid; bounds are
    clipped to ``[0, 1]`` and always contain the point estimate.
    ``replicates`` is 0 for the plug-in method.
    """

    curve: StepFunction
    lower: StepFunction
    upper: StepFunction
    level: float
    method: str
    replicates: int
    n_dropped: int = 0


def _plugin_variances(histories: list[EventHistory], space: StateSpace, s: float,
                      l) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Recursive plug-in covariance of the Aalen-Johansen probability row.

    At each event time the current covariance is pushed through the
    transition factor and the multinomial covariance of the factor's rows,
    scaled by the squared current probabilities, is added. Returns the jump
    times, the probability values and the per-state variances.
    """
    start = _start_vector(histories, space, s, _as_state_set(l))
    agg = build_aggregated(histories, space, window_start=s)
    hazard = nelson_aalen(agg)
    K = space.n_states
    eye = np.eye(K)

    m = hazard.jump_times.size
    p = start.copy()
    cov = np.zeros((K, K))
    values = np.empty((m, K))
    variances = np.empty((m, K))
    for i in range(m):
        factor = eye + hazard.increments[i]
        new_cov = factor.T @ cov @ factor
        for j in range(K):
            y_j = agg.at_risk[i, j]
            if y_j > 0 and p[j] != 0.0 and agg.n_events[i, j].any():
                q = factor[j]
                new_cov += (p[j] ** 2 / y_j) * (np.diag(q) - np.outer(q, q))
        cov = new_cov
        p = p @ factor
        values[i] = p
        variances[i] = np.clip(np.diag(cov), 0.0, None)
    return hazard.jump_times, values, variances


def greenwood_se(histories: list[EventHistory], space: StateSpace, s: float, l,
                 target_state: int) -> StepFunction:
    """Greenwood-type pointwise standard error of the AJ probability of one state.

    Reduces to the classical Greenwood formula for the Kaplan-Meier variance
    in a two-state pure-death model. Markov-valid only: non-Markov data
    carry extra variation this plug-in does not see.
    """
    times, _, variances = _plugin_variances(histories, space, s, l)
    return StepFunction(times, np.sqrt(variances[:, target_state - 1]), 0.0)


def greenwood_band(histories: list[EventHistory], space: StateSpace, s: float, l,
                   level: float = 0.95) -> ConfidenceBand:
    """Normal-approximation band from the Greenwood plug-in errors (AJ only)."""
    if not 0.0 < level < 1.0:
        raise InputError("level must lie in (0, 1)")
    times, values, variances = _plugin_variances(histories, space, s, l)
    start = _start_vector(histories, space, s, _as_state_set(l))
    z = stats.norm.isf((1.0 - level) / 2.0)
    half = z * np.sqrt(variances)
    curve = StepFunction(times, values, start)
    lower = StepFunction(times, np.clip(values - half, 0.0, 1.0), start)
    upper = StepFunction(times, np.clip(values + half, 0.0, 1.0), start)
    return ConfidenceBand(curve=curve, lower=lower, upper=upper, level=level,
                          method="greenwood-plugin", replicates=0)


def _band_grid(histories: list[EventHistory], s: float) -> np.ndarray:
    """All event times after the landmark: a superset of every replicate's jumps."""
    times = [t for h in histories for t, _, _ in h.transitions if t > s]
    return np.unique(np.asarray(times, dtype=float))


def _bootstrap_chunk(args) -> tuple[list[np.ndarray], int]:
    histories, space, kind, s, l, nonmarkov, seed, b_range, grid = args
    n = len(histories)
    values, dropped = [], 0
    for b in b_range:
        rng = np.random.default_rng(derive_seed(seed, b))
        idx = rng.integers(0, n, size=n)
        sample = [histories[i] for i in idx]
        try:
            result = estimate(sample, space, kind, s, l, nonmarkov)
        except EmptyLandmarkError:
            dropped += 1
            continue
        values.append(result.curve(grid))
    return values, dropped


def bootstrap_ci(histories: list[EventHistory], space: StateSpace, kind: str,
                 s: float, l, B: int, level: float = 0.95, seed=0,
                 nonmarkov=frozenset(), workers: int = 1) -> ConfidenceBand:
    """Percentile bootstrap band for any of the three estimators.

    Whole subject paths are resampled with replacement, preserving
    within-subject dependence; each replicate re-runs the full estimation.
    Replicates whose landmark population is empty are dropped and counted;
    more than 10 percent drops abort with a diagnostic. Replicate RNG
    streams depend only on ``(seed, replicate index)``, so results are
    independent of the worker count.
    """
    if B < 1:
        raise InputError("bootstrap needs at least one replicate")
    if not 0.0 < level < 1.0:
        raise InputError("level must lie in (0, 1)")
    point = estimate(histories, space, kind, s, l, nonmarkov)
    grid = _band_grid(histories, s)

    ranges = split_range(B, workers)
    payloads = [(histories, space, kind, s, l, nonmarkov, seed, r, grid) for r in ranges]
    if len(payloads) == 1:
        outputs = [_bootstrap_chunk(payloads[0])]
    else:
        with ProcessPoolExecutor(max_workers=len(payloads)) as pool:
            outputs = list(pool.map(_bootstrap_chunk, payloads))

    values = [v for chunk_values, _ in outputs for v in chunk_values]
    dropped = sum(d for _, d in outputs)
    if dropped > 0.10 * B:
        raise RuntimeError(f"{dropped} of {B} bootstrap replicates had an empty landmark "
                           f"population at s={s}; the resampling distribution is unreliable")

    stacked = np.stack(values)
    alpha = 1.0 - level
    lo = np.quantile(stacked, alpha / 2.0, axis=0)
    hi = np.quantile(stacked, 1.0 - alpha / 2.0, axis=0)
    point_values = point.curve(grid)
    lo = np.clip(np.minimum(lo, point_values), 0.0, 1.0)
    hi = np.clip(np.maximum(hi, point_values), 0.0, 1.0)

    start = point.curve.initial_value
    return ConfidenceBand(curve=StepFunction(grid, point_values, start),
                          lower=StepFunction(grid, lo, start),
                          upper=StepFunction(grid, hi, start),
                          level=level, method="bootstrap-percentile",
                          replicates=B, n_dropped=dropped)



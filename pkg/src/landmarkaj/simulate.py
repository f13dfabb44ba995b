"""Frailty-driven simulation of (partially) non-Markov multi-state cohorts.

Subjects move through the state space with constant subject-specific
intensities ``rate * frailty`` per transition. A gamma frailty on a single
transition induces non-Markov behaviour in that transition alone; a
correlated log-normal frailty vector across all transitions induces it
everywhere. Averaging the landmark estimator over many simulated cohorts
provides the reference ("true") transition-probability curves used by the
evaluation harness.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import EventHistory, InputError, StateSpace, derive_seed, EmptyLandmarkError
from .estimators import lmaj
from .stepfun import StepFunction

log = logging.getLogger(__name__)

ILLNESS_DEATH_RECOVERY = StateSpace(
    n_states=3,
    transitions=frozenset({(1, 2), (1, 3), (2, 1), (2, 3)}),
)

BASE_RATES = {(1, 2): 0.12, (1, 3): 0.03, (2, 1): 0.15, (2, 3): 0.10}

# Target frailty covariance of the correlated-frailty experiment, ordered by
# sorted transition pairs (1,2), (1,3), (2,1), (2,3).
CORRELATED_FRAILTY_COV = np.array([
    [0.80, 0.57, -0.35, 0.37],
    [0.57, 0.42, -0.12, 0.19],
    [-0.35, -0.12, 0.96, -0.63],
    [0.37, 0.19, -0.63, 0.45],
])


@dataclass(frozen=True)
class GammaFrailty:
    """Gamma frailty with mean 1 and the given variance on one transition."""

    variance: float
    transition: tuple[int, int] = (2, 1)

    def __post_init__(self):
        if self.variance < 0:
            raise InputError("frailty variance must be nonnegative")
        object.__setattr__(self, "transition", (int(self.transition[0]), int(self.transition[1])))


def nearest_covariance_fixed_diagonal(matrix: np.ndarray, n_iter: int = 500,
                                      tol: float = 1e-13) -> np.ndarray:
    """Nearest positive-semidefinite matrix with the diagonal held fixed.

    Alternating projections between the PSD cone and the fixed-diagonal
    affine set (Dykstra correction on the cone step). Used to repair
    log-normal frailty covariances whose log-scale transform is indefinite.
    """
    target_diag = np.diag(matrix).copy()
    y = matrix.copy()
    correction = np.zeros_like(matrix)
    for _ in range(n_iter):
        r = y - correction
        w, v = np.linalg.eigh((r + r.T) / 2.0)
        x = (v * np.clip(w, 0.0, None)) @ v.T
        correction = x - r
        y_new = x.copy()
        np.fill_diagonal(y_new, target_diag)
        if np.max(np.abs(y_new - y)) < tol:
            y = y_new
            break
        y = y_new
    y = (y + y.T) / 2.0
    # Clip residual negative eigenvalues so a sampling factorisation exists.
    w, v = np.linalg.eigh(y)
    return (v * np.clip(w, 0.0, None)) @ v.T


@dataclass(frozen=True)
class LogNormalFrailty:
    """Multivariate log-normal frailty across all transitions.

    ``covariance`` is the target covariance of the frailty vector itself
    (entries must exceed -1); sampling draws ``W`` normal with covariance
    ``log(1 + covariance)`` and returns ``exp(W)``. When that log-scale
    matrix is not positive semidefinite it is replaced by the nearest PSD
    matrix with the same diagonal, so the frailty variances are preserved
    exactly while infeasible cross-covariances move to the closest
    attainable values (see ``achieved_covariance``).

    ``mean_mode`` selects the normal mean: ``"unit"`` gives exact mean-one
    frailties; ``"halved-sigma"`` uses ``-covariance_jj / 2``, which
    undershoots mean one unless the variances are small.
    """

    covariance: np.ndarray
    mean_mode: str = "unit"

    def __post_init__(self):
        cov = np.array(self.covariance, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise InputError("frailty covariance must be a square matrix")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise InputError("frailty covariance must be symmetric")
        if np.any(cov <= -1.0):
            raise InputError("frailty covariance entries must exceed -1 "
                             "(log(1 + cov) undefined otherwise)")
        if self.mean_mode not in ("unit", "halved-sigma"):
            raise InputError("mean_mode must be 'unit' or 'halved-sigma'")
        eigmin = np.linalg.eigvalsh(cov).min()
        if eigmin < -1e-6 * max(1.0, np.abs(cov).max()):
            warnings.warn(f"target frailty covariance is indefinite (min eigenvalue "
                          f"{eigmin:.2e}); proceeding with the feasible projection",
                          RuntimeWarning, stacklevel=2)
        log_cov = np.log1p(cov)
        feasible = nearest_covariance_fixed_diagonal(log_cov)
        if np.max(np.abs(feasible - log_cov)) > 1e-8:
            warnings.warn("log-scale frailty covariance is not positive semidefinite; "
                          "projected to the nearest feasible matrix with the variances "
                          "kept exact (inspect achieved_covariance)",
                          RuntimeWarning, stacklevel=2)
        w, v = np.linalg.eigh(feasible)
        transform = v * np.sqrt(np.clip(w, 0.0, None))
        if self.mean_mode == "unit":
            mean = -np.diag(feasible) / 2.0
        else:
            mean = -np.diag(cov) / 2.0
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_log_cov", feasible)
        object.__setattr__(self, "_transform", transform)
        object.__setattr__(self, "_mean", mean)

    @property
    def achieved_covariance(self) -> np.ndarray:
        """Covariance of the frailty vector actually being sampled (unit mean)."""
        return np.expm1(self._log_cov)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(self.covariance.shape[0])
        return np.exp(self._mean + self._transform @ z)


@dataclass(frozen=True)
class FrailtyModelSpec:
    """Generative model: state space, base rates, frailty law and cohort size."""

    space: StateSpace = ILLNESS_DEATH_RECOVERY
    base_rates: dict[tuple[int, int], float] = field(default_factory=lambda: dict(BASE_RATES))
    frailty: GammaFrailty | LogNormalFrailty | None = None
    horizon: float = 1000.0
    initial_state: int = 1
    n_subjects: int = 1000

    def __post_init__(self):
        rates = {(int(j), int(k)): float(r) for (j, k), r in self.base_rates.items()}
        if set(rates) != self.space.transitions:
            raise InputError("base rates must cover exactly the allowed transitions")
        if any(r <= 0 for r in rates.values()):
            raise InputError("base rates must be positive")
        if self.horizon <= 0:
            raise InputError("horizon must be positive")
        if not 1 <= self.initial_state <= self.space.n_states:
            raise InputError("initial state outside the state space")
        if self.n_subjects < 1:
            raise InputError("cohort size must be positive")
        if isinstance(self.frailty, GammaFrailty) and self.frailty.transition not in self.space.transitions:
            raise InputError("gamma frailty transition not in the allowed set")
        if isinstance(self.frailty, LogNormalFrailty):
            if self.frailty.covariance.shape[0] != len(self.space.transitions):
                raise InputError("log-normal frailty needs one row per transition "
                                 "(sorted transition order)")
        object.__setattr__(self, "base_rates", rates)

    def with_size(self, n_subjects: int) -> "FrailtyModelSpec":
        return FrailtyModelSpec(space=self.space, base_rates=self.base_rates,
                                frailty=self.frailty, horizon=self.horizon,
                                initial_state=self.initial_state, n_subjects=n_subjects)


def experiment1_spec(sigma2: float, n_subjects: int = 1000) -> FrailtyModelSpec:
    """Illness-death cohort with a gamma frailty of the given variance on 2 -> 1."""
    frailty = GammaFrailty(variance=sigma2) if sigma2 > 0 else None
    return FrailtyModelSpec(frailty=frailty, n_subjects=n_subjects)


def experiment2_spec(n_subjects: int = 1000, mean_mode: str = "unit") -> FrailtyModelSpec:
    """Illness-death cohort with the correlated log-normal frailty vector."""
    frailty = LogNormalFrailty(covariance=CORRELATED_FRAILTY_COV, mean_mode=mean_mode)
    return FrailtyModelSpec(frailty=frailty, n_subjects=n_subjects)


def draw_frailties(spec: FrailtyModelSpec, rng: np.random.Generator) -> dict[tuple[int, int], float]:
    """One subject's frailty multiplier per transition (all ones when Markov)."""
    frailties = {t: 1.0 for t in spec.space.sorted_transitions}
    if isinstance(spec.frailty, GammaFrailty):
        if spec.frailty.variance > 0:
            shape = 1.0 / spec.frailty.variance
            frailties[spec.frailty.transition] = rng.gamma(shape, scale=spec.frailty.variance)
    elif isinstance(spec.frailty, LogNormalFrailty):
        values = spec.frailty.sample(rng)
        for t, v in zip(spec.space.sorted_transitions, values):
            frailties[t] = float(v)
    return frailties


def simulate_path(spec: FrailtyModelSpec, frailties: dict[tuple[int, int], float],
                  rng: np.random.Generator, subject_id: str = "s0") -> EventHistory:
    """One subject's path under constant intensities ``frailty * rate``.

    Holding times are exponential with the total exit rate, destinations
    multinomial with probabilities proportional to the per-transition
    rates; the path stops at an absorbing state or at the horizon. No
    censoring is applied.
    """
    outgoing = {}
    for (j, k), rate in spec.base_rates.items():
        outgoing.setdefault(j, []).append((k, frailties[(j, k)] * rate))

    state = spec.initial_state
    t = 0.0
    transitions = []
    while state not in spec.space.absorbing:
        rates = outgoing.get(state, [])
        total = sum(r for _, r in rates)
        if total <= 0:
            break
        t += rng.exponential(1.0 / total)
        if t > spec.horizon:
            break
        u = rng.random() * total
        acc = 0.0
        dest = rates[-1][0]
        for k, r in rates:
            acc += r
            if u < acc:
                dest = k
                break
        transitions.append((t, state, dest))
        state = dest
    return EventHistory(subject_id=subject_id, initial_state=spec.initial_state,
                        transitions=tuple(transitions), horizon=spec.horizon)


def simulate_cohort(spec: FrailtyModelSpec, seed) -> list[EventHistory]:
    """Independent (frailty, path) draws for each subject, deterministic in the seed."""
    rng = np.random.default_rng(derive_seed(seed))
    cohort = []
    for i in range(spec.n_subjects):
        frailties = draw_frailties(spec, rng)
        cohort.append(simulate_path(spec, frailties, rng, subject_id=f"s{i:06d}"))
    return cohort


def oracle_truth_grid(spec: FrailtyModelSpec, landmarks, l, replicates: int,
                      seed=0, grid_size: int = 512,
                      max_attempts: int = 1000) -> dict[float, StepFunction]:
    """Reference transition-probability curves for several landmark times at once.

    For each replicate a fresh cohort is simulated and the landmark
    estimator computed from every landmark time; the mean curve over
    replicates, interpolated piecewise-constantly onto a fixed uniform
    grid, serves as the simulation truth. Replicates with an empty
    landmark population are resimulated (for that landmark only) and
    counted in the log.
    """
    if replicates < 1:
        raise InputError("oracle needs at least one replicate")
    landmarks = [float(s) for s in np.atleast_1d(landmarks)]
    grids = {s: np.linspace(s, spec.horizon, grid_size) for s in landmarks}
    sums = {s: np.zeros((grid_size, spec.space.n_states)) for s in landmarks}
    resimulated = 0
    for r in range(replicates):
        base = simulate_cohort(spec, derive_seed(seed, r, 0))
        for s in landmarks:
            cohort = base
            attempt = 0
            while True:
                try:
                    result = lmaj(cohort, spec.space, s, l)
                    break
                except EmptyLandmarkError:
                    attempt += 1
                    resimulated += 1
                    if attempt > max_attempts:
                        raise
                    cohort = simulate_cohort(spec, derive_seed(seed, r, attempt))
            sums[s] += result.curve(grids[s])
    if resimulated:
        log.info("oracle resimulated %d replicate/landmark combinations with an "
                 "empty landmark population", resimulated)
    out = {}
    for s in landmarks:
        values = sums[s] / replicates
        out[s] = StepFunction(grids[s], values, values[0])
    return out


def oracle_truth(spec: FrailtyModelSpec, s: float, l, replicates: int, seed=0,
                 grid_size: int = 512) -> StepFunction:
    """Reference transition-probability curve from one landmark time."""
    return oracle_truth_grid(spec, [s], l, replicates, seed=seed, grid_size=grid_size)[float(s)]

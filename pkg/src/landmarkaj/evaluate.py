"""Performance measurement and the simulation experiment harness.

Compares the plain, landmark and hybrid estimators against simulated truth
curves by integrated squared error (over the window from the landmark to
the horizon) and by pointwise bias and variance across Monte-Carlo
datasets. Experiment 1 sweeps the variance of a single-transition gamma
frailty; experiment 2 uses the correlated log-normal frailty vector. The
hybrid estimator's non-Markov set is re-selected per dataset with the
wild-bootstrap grid test, mirroring how it would be used in practice.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import EmptyLandmarkError, InputError, derive_seed, split_range
from .estimators import aalen_johansen, haj, lmaj
from .markov import select_nonmarkov
from .simulate import (FrailtyModelSpec, experiment1_spec, experiment2_spec,
                       oracle_truth_grid, simulate_cohort)
from .stepfun import StepFunction

ESTIMATORS = ("aj", "lmaj", "haj")

EXPERIMENT1_LANDMARKS = (6.0, 9.0, 12.0, 14.0, 17.0, 20.0, 22.0, 25.0, 28.0, 30.0)
EXPERIMENT2_LANDMARKS = (1.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0,
                         20.0, 22.0, 24.0, 26.0, 28.0, 30.0)

SCALES = {
    # (datasets, cohort size, test bootstrap replicates, oracle replicates, oracle cohort size)
    "desk": (200, 500, 200, 200, 500),
    "paper": (1000, 1000, 500, 1000, 1000),
}


def mrse(estimate: StepFunction, truth: StepFunction, start: float, stop: float) -> float:
    """Integrated squared distance between two scalar step functions on ``[start, stop]``.

    Computed as the exact Riemann sum over the union of both jump sets with
    right-continuous evaluation, the final segment closing at ``stop``.
    """
    if stop <= start:
        raise InputError(f"need stop > start, got [{start}, {stop}]")
    if estimate.dim != 1 or truth.dim != 1:
        raise InputError("mrse compares scalar step functions; select a component first")
    cuts = np.unique(np.concatenate([
        np.asarray([start]),
        estimate.jumps_in(start, stop),
        truth.jumps_in(start, stop),
    ]))
    widths = np.diff(np.append(cuts, stop))
    diff = estimate(cuts) - truth(cuts)
    return float(np.sum(diff * diff * widths))


def bias_variance(estimates: list[StepFunction], truth: StepFunction) -> tuple[StepFunction, StepFunction]:
    """Pointwise mean-minus-truth and sample variance on the truth's grid."""
    if len(estimates) < 2:
        raise InputError("bias/variance needs at least two estimated curves")
    grid = truth.jump_times
    values = np.stack([e(grid) for e in estimates])
    bias = values.mean(axis=0) - truth.values
    variance = values.var(axis=0, ddof=1)
    return (StepFunction(grid, bias, bias[0]),
            StepFunction(grid, variance, variance[0]))


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of one simulation experiment, echoed into the report."""

    which: int
    n_datasets: int
    n_subjects: int
    test_replicates: int
    oracle_replicates: int
    oracle_n: int
    landmark_grid: tuple[float, ...]
    landmark_state: int = 2
    bias_landmark: float = 17.0
    sigma2_values: tuple[float, ...] = (0.0, 0.4, 1.2, 2.0)
    mean_mode: str = "unit"
    alpha: float = 0.05
    multiplier: str = "poisson"
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.which not in (1, 2):
            raise InputError("experiment must be 1 or 2")
        if self.bias_landmark not in self.landmark_grid:
            raise InputError("bias landmark must be one of the landmark grid times")


def default_config(which: int, scale: str = "desk", seed: int = 0,
                   workers: int = 1, **overrides) -> ExperimentConfig:
    """Desk- or paper-scale configuration for either experiment."""
    if scale not in SCALES:
        raise InputError(f"scale must be one of {sorted(SCALES)}")
    datasets, n, test_b, oracle_r, oracle_n = SCALES[scale]
    base = dict(which=which, n_datasets=datasets, n_subjects=n,
                test_replicates=test_b, oracle_replicates=oracle_r,
                oracle_n=oracle_n, seed=seed, workers=workers)
    if which == 1:
        base.update(landmark_grid=EXPERIMENT1_LANDMARKS, bias_landmark=17.0)
    else:
        base.update(landmark_grid=EXPERIMENT2_LANDMARKS, bias_landmark=16.0)
    base.update(overrides)
    return ExperimentConfig(**base)


@dataclass(frozen=True)
class MrseSummary:
    estimator: str
    landmark: float
    target_state: int
    mean: float
    mc_se: float
    n_datasets: int


@dataclass(frozen=True)
class LevelReport:
    """Results for one frailty level of an experiment."""

    label: str
    mrse: tuple[MrseSummary, ...]
    selection_frequency: dict[tuple[int, int], float]
    oracle_times: np.ndarray
    bias: dict[str, np.ndarray]
    variance: dict[str, np.ndarray]
    n_skipped: dict[str, int]

    def mean_mrse(self, estimator: str, target_state: int) -> float:
        """Mean MRSE across the landmark grid for one estimator and target."""
        values = [row.mean for row in self.mrse
                  if row.estimator == estimator and row.target_state == target_state]
        return float(np.mean(values))


@dataclass(frozen=True)
class ExperimentReport:
    config: ExperimentConfig
    levels: tuple[LevelReport, ...]

    def level(self, label: str) -> LevelReport:
        for lv in self.levels:
            if lv.label == label:
                return lv
        raise KeyError(label)


def _dataset_task(args):
    """Simulate one dataset, select the non-Markov set and score all estimators."""
    (spec, landmark_grid, landmark_state, alpha, test_b, multiplier,
     seed, level_index, oracles, bias_landmark, m_range) = args
    out = []
    for m in m_range:
        cohort = simulate_cohort(spec, derive_seed(seed, level_index, 1, m))
        selection = select_nonmarkov(cohort, spec.space, landmark_grid,
                                     {landmark_state}, alpha=alpha, method="grid",
                                     B=test_b, seed=derive_seed(seed, level_index, 2, m),
                                     multiplier=multiplier)
        mrse_values: dict[tuple[str, float, int], float] = {}
        bias_curves: dict[str, np.ndarray] = {}
        skipped: dict[str, int] = {}
        for s in landmark_grid:
            results = {}
            results["aj"] = aalen_johansen(cohort, spec.space, s, landmark_state)
            try:
                results["lmaj"] = lmaj(cohort, spec.space, s, landmark_state)
                results["haj"] = haj(cohort, spec.space, s, landmark_state, selection.selected)
            except EmptyLandmarkError:
                for kind in ("lmaj", "haj"):
                    if kind not in results:
                        skipped[kind] = skipped.get(kind, 0) + 1
            truth = oracles[s]
            for kind, result in results.items():
                for k in range(1, spec.space.n_states + 1):
                    mrse_values[(kind, s, k)] = mrse(result.curve.component(k - 1),
                                                     truth.component(k - 1),
                                                     s, spec.horizon)
                if s == bias_landmark:
                    bias_curves[kind] = result.curve(truth.jump_times)
        out.append((mrse_values, bias_curves, selection.selected, skipped))
    return out


def _run_level(label: str, spec: FrailtyModelSpec, config: ExperimentConfig,
               level_index: int) -> LevelReport:
    oracle_spec = spec.with_size(config.oracle_n)
    oracles = oracle_truth_grid(oracle_spec, config.landmark_grid, config.landmark_state,
                                config.oracle_replicates,
                                seed=derive_seed(config.seed, level_index, 0))

    base_args = (spec, config.landmark_grid, config.landmark_state, config.alpha,
                 config.test_replicates, config.multiplier, config.seed, level_index,
                 oracles, config.bias_landmark)
    chunks = split_range(config.n_datasets, config.workers)
    payloads = [base_args + (chunk,) for chunk in chunks]
    if len(payloads) == 1:
        chunk_outputs = [_dataset_task(payloads[0])]
    else:
        with ProcessPoolExecutor(max_workers=len(payloads)) as pool:
            chunk_outputs = list(pool.map(_dataset_task, payloads))
    datasets = [item for chunk in chunk_outputs for item in chunk]

    mrse_rows = []
    for kind in ESTIMATORS:
        for s in config.landmark_grid:
            for k in range(1, spec.space.n_states + 1):
                values = [d[0][(kind, s, k)] for d in datasets if (kind, s, k) in d[0]]
                if not values:
                    continue
                arr = np.asarray(values)
                mc_se = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
                mrse_rows.append(MrseSummary(estimator=kind, landmark=s, target_state=k,
                                             mean=float(arr.mean()), mc_se=mc_se,
                                             n_datasets=arr.size))

    n_sets = len(datasets)
    selection_frequency = {
        t: sum(1 for d in datasets if t in d[2]) / n_sets
        for t in spec.space.sorted_transitions
    }
    n_skipped: dict[str, int] = {}
    for d in datasets:
        for kind, count in d[3].items():
            n_skipped[kind] = n_skipped.get(kind, 0) + count

    truth = oracles[config.bias_landmark]
    bias, variance = {}, {}
    for kind in ESTIMATORS:
        stacks = [d[1][kind] for d in datasets if kind in d[1]]
        if len(stacks) < 2:
            continue
        values = np.stack(stacks)
        bias[kind] = values.mean(axis=0) - truth.values
        variance[kind] = values.var(axis=0, ddof=1)

    return LevelReport(label=label, mrse=tuple(mrse_rows),
                       selection_frequency=selection_frequency,
                       oracle_times=truth.jump_times, bias=bias, variance=variance,
                       n_skipped=n_skipped)


def run_experiment1(config: ExperimentConfig) -> ExperimentReport:
    """Gamma-frailty sweep: one level per frailty variance in the config."""
    if config.which != 1:
        raise InputError("config is not for experiment 1")
    levels = []
    for index, sigma2 in enumerate(config.sigma2_values):
        spec = experiment1_spec(sigma2, n_subjects=config.n_subjects)
        levels.append(_run_level(f"sigma2={sigma2:g}", spec, config, index))
    return ExperimentReport(config=config, levels=tuple(levels))


def run_experiment2(config: ExperimentConfig) -> ExperimentReport:
    """Correlated log-normal frailty experiment (single level)."""
    if config.which != 2:
        raise InputError("config is not for experiment 2")
    spec = experiment2_spec(n_subjects=config.n_subjects, mean_mode=config.mean_mode)
    level = _run_level("lognormal", spec, config, 0)
    return ExperimentReport(config=config, levels=(level,))


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    return run_experiment1(config) if config.which == 1 else run_experiment2(config)

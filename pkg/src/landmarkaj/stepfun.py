"""Right-continuous step functions shared by hazards, probability curves and bands."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StepFunction:
    """A cadlag step function, scalar or vector valued.

    Evaluation at ``t`` returns the value attached to the last jump time
    less than or equal to ``t``, and ``initial_value`` when ``t`` lies
    before every jump. For vector-valued functions ``values`` has shape
    ``(n_jumps, dim)`` and ``initial_value`` shape ``(dim,)``.
    """

    jump_times: np.ndarray
    values: np.ndarray
    initial_value: np.ndarray | float

    def __post_init__(self):
        times = np.asarray(self.jump_times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        init = np.asarray(self.initial_value, dtype=float)
        if times.ndim != 1:
            raise ValueError("jump_times must be one-dimensional")
        if values.shape[: 1] != times.shape:
            raise ValueError("need exactly one value per jump time")
        if values.shape[1:] != init.shape:
            raise ValueError("initial_value shape must match a single value")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("jump_times must be strictly increasing")
        object.__setattr__(self, "jump_times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "initial_value", init)

    @property
    def dim(self) -> int:
        """Number of components (1 for scalar functions)."""
        return 1 if self.values.ndim == 1 else self.values.shape[1]

    def __call__(self, t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.searchsorted(self.jump_times, t_arr, side="right")
        stacked = np.concatenate([self.initial_value[None, ...], self.values], axis=0)
        out = stacked[idx]
        return out[0] if np.ndim(t) == 0 else out

    def component(self, index: int) -> "StepFunction":
        """Scalar step function for one coordinate of a vector-valued function."""
        if self.values.ndim == 1:
            raise ValueError("component() requires a vector-valued step function")
        return StepFunction(self.jump_times, self.values[:, index], self.initial_value[index])

    def jumps_in(self, start: float, stop: float) -> np.ndarray:
        """Jump times lying in the half-open interval (start, stop]."""
        lo = np.searchsorted(self.jump_times, start, side="right")
        hi = np.searchsorted(self.jump_times, stop, side="right")
        return self.jump_times[lo:hi]

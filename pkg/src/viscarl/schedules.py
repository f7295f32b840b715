"""Piecewise-linear control schedules (pump amplitude, friction, diffusion)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PiecewiseLinear:
    """Value interpolated linearly between breakpoints, held flat outside them.

    A schedule with a single breakpoint is a constant.
    """

    times: tuple
    values: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size == 0:
            raise ValueError("times and values must be equal-length, non-empty 1-D sequences")
        if np.any(np.diff(t) < 0):
            raise ValueError("schedule times must be non-decreasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("schedule values must be finite")
        object.__setattr__(self, "times", tuple(float(x) for x in t))
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    @classmethod
    def constant(cls, value: float) -> "PiecewiseLinear":
        return cls((0.0,), (float(value),))

    @classmethod
    def step(cls, t_switch: float, before: float, after: float) -> "PiecewiseLinear":
        """Sharp switch at ``t_switch``; the value jumps between two coincident breakpoints."""
        return cls((0.0, t_switch, t_switch, t_switch + 1.0), (before, before, after, after))

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.times), np.asarray(self.values)

    def __call__(self, t):
        times, values = self.arrays()
        return np.interp(t, times, values, right=values[-1])

    def min(self) -> float:
        return min(self.values)

    def max(self) -> float:
        return max(self.values)


def triangular_ramp(peak: float, duration: float, floor: float = 0.0) -> PiecewiseLinear:
    """Symmetric up/down ramp from ``floor`` to ``peak`` and back."""
    return PiecewiseLinear((0.0, duration / 2, duration), (floor, peak, floor))

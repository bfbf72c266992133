"""Uniform time grids.

Nodes are always computed as t_start + i*dt (multiplication, never repeated
addition) so that node positions carry no accumulation drift and grid algebra
such as reversal and windowing is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be >= 1, got {self.n_steps}")
        if not self.t_end > self.t_start:
            raise ConfigurationError(f"need t_end > t_start, got [{self.t_start}, {self.t_end}]")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def horizon(self) -> float:
        return self.t_end - self.t_start

    def times(self) -> np.ndarray:
        return self.t_start + np.arange(self.n_steps + 1) * self.dt

    def node_of(self, t: float, tol: float = 1e-9) -> int:
        """Index of the node at time t; t must lie on the grid."""
        i = round((t - self.t_start) / self.dt)
        if i < 0 or i > self.n_steps or abs(self.t_start + i * self.dt - t) > tol:
            raise ConfigurationError(f"time {t} is not a node of {self}")
        return int(i)

    def reversed(self) -> "TimeGrid":
        return TimeGrid(self.t_start, self.t_end, self.n_steps)

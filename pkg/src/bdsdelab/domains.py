"""Spatial domains carrying the reference (Lebesgue) measure.

The product measure used by the energy audits is dt x m on (0,T] x domain;
its quadrature cells are built here.  Dead-path bookkeeping follows the
cemetery convention: any registered function evaluates to 0 once a path has
left the domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, UnsupportedConfigurationError


@dataclass(frozen=True)
class DomainSpec:
    """variant: 'torus' (length), 'interval' (a, b), 'box' (bounds), 'line'."""

    variant: str
    length: float = 2.0 * np.pi          # torus
    a: float = 0.0                       # interval
    b: float = np.pi
    bounds: tuple = field(default=())    # box: ((a1,b1), ..., (ad,bd))

    def __post_init__(self):
        if self.variant not in ("torus", "interval", "box", "line"):
            raise ConfigurationError(f"unknown domain variant {self.variant!r}")
        if self.variant == "torus" and not self.length > 0:
            raise ConfigurationError("torus length must be positive")
        if self.variant == "interval" and not self.b > self.a:
            raise ConfigurationError("interval needs b > a")
        if self.variant == "box" and not all(hi > lo for lo, hi in self.bounds):
            raise ConfigurationError("box needs positive side lengths")

    @property
    def dim(self) -> int:
        return len(self.bounds) if self.variant == "box" else 1

    @property
    def killed(self) -> bool:
        return self.variant in ("interval", "box")

    @property
    def volume(self) -> float:
        if self.variant == "torus":
            return self.length
        if self.variant == "interval":
            return self.b - self.a
        if self.variant == "box":
            return float(np.prod([hi - lo for lo, hi in self.bounds]))
        raise UnsupportedConfigurationError("the whole line has infinite volume")

    def wrap(self, x: np.ndarray) -> np.ndarray:
        if self.variant == "torus":
            return np.mod(x, self.length)
        return x

    def inside(self, x: np.ndarray) -> np.ndarray:
        """Boolean mask; torus and line are conservative."""
        if self.variant == "interval":
            return (x > self.a) & (x < self.b)
        if self.variant == "box":
            ok = np.ones(x.shape[:-1], dtype=bool)
            for j, (lo, hi) in enumerate(self.bounds):
                ok &= (x[..., j] > lo) & (x[..., j] < hi)
            return ok
        return np.ones(np.shape(x), dtype=bool)

    def mesh(self, n: int) -> np.ndarray:
        """n spatial nodes (1-d variants only)."""
        if self.variant == "torus":
            return np.arange(n) * (self.length / n)         # periodic, no duplicate endpoint
        if self.variant == "interval":
            return np.linspace(self.a, self.b, n + 2)[1:-1]  # interior nodes (u = 0 on boundary)
        if self.variant == "line":
            raise UnsupportedConfigurationError("no canonical mesh on the whole line")
        raise UnsupportedConfigurationError("mesh() is 1-d only")

    def cell_volume(self, n: int) -> float:
        if self.variant == "torus":
            return self.length / n
        if self.variant == "interval":
            return (self.b - self.a) / (n + 1)
        raise UnsupportedConfigurationError("cell volumes exist for bounded 1-d domains only")

    def quad_weights(self, x: np.ndarray) -> np.ndarray:
        """Quadrature weights matching mesh(); trapezoid is exact for the bases used."""
        n = len(x)
        if self.variant == "torus":
            return np.full(n, self.length / n)
        if self.variant == "interval":
            # interior equispaced nodes, integrand vanishing at both ends
            return np.full(n, (self.b - self.a) / (n + 1))
        raise UnsupportedConfigurationError("quadrature weights need a bounded 1-d domain")

"""Generator families for the forward Markov process.

Three variants: constant-coefficient diffusion, divergence-form diffusion with
state-dependent coefficient, and the symmetric alpha-stable (fractional) jump
process.  The divergence-form operator sum_ij d_j(a_ij d_i u) maps to the Ito
SDE with diffusion sigma = sqrt(2 a) and drift b_i = sum_j d_j a_ij; a = 1/2
then corresponds to standard Brownian motion and generator (1/2) Laplacian,
which is the correspondence every oracle in the test suite relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericalFailureError


@dataclass(frozen=True)
class CoefficientField:
    """Scalar diffusion coefficient a(t, x) with optional analytic x-derivative."""

    name: str
    fn: callable
    dfn: callable | None = None       # analytic d/dx a(t,x), used when registered
    lam_ell: float = 0.0              # declared ellipticity bounds
    Lam_ell: float = np.inf

    def __call__(self, t, x):
        return self.fn(t, x)


def make_coefficient_field(spec: str) -> CoefficientField:
    """Presets: 'const:a' and 'sin_field:amp' (a(x) = (1 + amp sin x)/2)."""
    kind, _, arg = spec.partition(":")
    if kind == "const":
        a0 = float(arg) if arg else 0.5
        if a0 <= 0:
            raise ConfigurationError("constant coefficient must be positive")
        return CoefficientField(spec, lambda t, x: np.full_like(np.asarray(x, float), a0),
                                dfn=lambda t, x: np.zeros_like(np.asarray(x, float)),
                                lam_ell=a0, Lam_ell=a0)
    if kind == "sin_field":
        amp = float(arg) if arg else 0.5
        if not 0 <= amp < 1:
            raise ConfigurationError("sin_field amplitude must lie in [0, 1)")
        return CoefficientField(
            spec,
            lambda t, x: 0.5 * (1.0 + amp * np.sin(np.asarray(x, float))),
            dfn=lambda t, x: 0.5 * amp * np.cos(np.asarray(x, float)),
            lam_ell=0.5 * (1 - amp), Lam_ell=0.5 * (1 + amp))
    raise ConfigurationError(f"unknown coefficient preset {spec!r}")


@dataclass(frozen=True)
class GeneratorSpec:
    """variant: 'const_diffusion' | 'div_form' | 'fractional'."""

    variant: str
    a: CoefficientField | None = None
    alpha_stable: float = 1.5
    fd_step: float = 1e-4             # drift stencil, scaled by domain size

    def __post_init__(self):
        if self.variant in ("const_diffusion", "div_form"):
            if self.a is None:
                raise ConfigurationError(f"{self.variant} needs a coefficient field")
        elif self.variant == "fractional":
            if not 0 < self.alpha_stable <= 2:
                raise ConfigurationError("alpha_stable must lie in (0, 2]")
        else:
            raise ConfigurationError(f"unknown generator variant {self.variant!r}")

    @property
    def conservative_drift_free(self) -> bool:
        return self.variant == "const_diffusion"

    def sigma(self, t, x):
        """SDE diffusion sqrt(2 a(t,x))."""
        a = np.asarray(self.a(t, x), dtype=float)
        self._check_ellipticity(a)
        return np.sqrt(2.0 * a)

    def _check_ellipticity(self, a):
        amin, amax = float(np.min(a)), float(np.max(a))
        if amin < self.a.lam_ell - 1e-12 or amax > self.a.Lam_ell + 1e-12:
            raise NumericalFailureError(
                f"ellipticity bounds [{self.a.lam_ell}, {self.a.Lam_ell}] violated: "
                f"a in [{amin}, {amax}]")


def make_generator(spec: str) -> GeneratorSpec:
    """Named presets: 'const:a', 'sin_field:amp', 'fractional:alpha'."""
    kind = spec.partition(":")[0]
    if kind == "const":
        return GeneratorSpec("const_diffusion", a=make_coefficient_field(spec))
    if kind == "sin_field":
        return GeneratorSpec("div_form", a=make_coefficient_field(spec))
    if kind == "fractional":
        return GeneratorSpec("fractional", alpha_stable=float(spec.partition(":")[2] or 1.5))
    raise ConfigurationError(f"unknown generator preset {spec!r}")


def drift_from_divergence_form(gen: GeneratorSpec, t, x, h: float | None = None):
    """Drift b = d/dx a(t, x) of the divergence-form SDE (1-d).

    Uses the registered analytic derivative when present, otherwise central
    differences with step h.  On bounded domains the caller clamps the stencil;
    the resulting O(h) boundary-layer bias is documented and accepted.
    """
    x = np.asarray(x, dtype=float)
    if gen.variant == "const_diffusion":
        return np.zeros_like(x)
    if gen.variant != "div_form":
        raise ConfigurationError("drift is defined for diffusion generators only")
    if gen.a.dfn is not None:
        return np.asarray(gen.a.dfn(t, x), dtype=float)
    step = gen.fd_step if h is None else h
    return (np.asarray(gen.a(t, x + step), float) - np.asarray(gen.a(t, x - step), float)) / (2 * step)


def sample_symmetric_stable(alpha: float, generator: np.random.Generator, shape) -> np.ndarray:
    """Chambers-Mallows-Stuck draws of the standard symmetric alpha-stable law.

    Characteristic function exp(-|xi|^alpha); at alpha = 2 this is N(0, 2),
    matching the fractional Laplacian normalisation Delta at alpha = 2.
    """
    u = (generator.random(shape) - 0.5) * np.pi       # Uniform(-pi/2, pi/2)
    e = generator.exponential(1.0, shape)
    if alpha == 1.0:
        return np.tan(u)
    su = np.sin(alpha * u) / np.cos(u) ** (1.0 / alpha)
    return su * (np.cos((1.0 - alpha) * u) / e) ** ((1.0 - alpha) / alpha)

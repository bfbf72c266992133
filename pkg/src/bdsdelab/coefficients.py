"""Terminal, driver and noise coefficient presets with declared constants.

Presets are named factories ("sin:1", "decay:0.5", "cubic_monotone", ...), so
configs can reference them and the registry can be listed by the CLI.  Every
declared structural constant (monotonicity, Lipschitz bounds, gradient weight)
is checked by randomized probing before a solver accepts the data.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .domains import DomainSpec
from .errors import ConfigurationError
from .noise import QSpec, g_components


@dataclass(frozen=True)
class Preset:
    name: str
    fn: callable                   # phi(x) | f(t,x,y) | f(t,x,y,z) | g(t,x,y)
    kind: str                      # 'terminal' | 'driver' | 'noise'
    lip_y: float | None = None     # Lipschitz constant in y, when finite
    lip_z: float = 0.0
    mono: float | None = None      # monotonicity constant L in (A3a)
    depends_on_y: bool = False
    depends_on_z: bool = False
    params: dict = field(default_factory=dict)

    def __call__(self, *args):
        return self.fn(*args)


def _p(arg, default):
    return float(arg) if arg else default


def make_terminal(spec: str) -> Preset:
    kind, _, arg = spec.partition(":")
    if kind == "zero":
        return Preset(spec, lambda x: np.zeros_like(np.asarray(x, float)), "terminal")
    if kind == "const":
        c = _p(arg, 1.0)
        return Preset(spec, lambda x: np.full_like(np.asarray(x, float), c), "terminal",
                      params={"value": c})
    if kind == "sin":
        parts = arg.split(",") if arg else ["1"]
        j = int(parts[0])
        amp = float(parts[1]) if len(parts) > 1 else 1.0
        return Preset(spec, lambda x: amp * np.sin(j * np.asarray(x, float)), "terminal",
                      params={"mode": j, "amplitude": amp})
    if kind == "identity":
        return Preset(spec, lambda x: np.asarray(x, float), "terminal")
    raise ConfigurationError(f"unknown terminal preset {spec!r}")


def make_driver(spec: str) -> Preset:
    """Drivers f(t, x, y) or f(t, x, y, z); sign convention of the backward
    equation Y_t = xi + int f + int g dB - int dM."""
    kind, _, arg = spec.partition(":")
    if kind == "zero":
        return Preset(spec, lambda t, x, y: np.zeros_like(np.asarray(y, float)),
                      "driver", lip_y=0.0, mono=0.0)
    if kind == "const":
        c = _p(arg, 1.0)
        return Preset(spec, lambda t, x, y: np.full_like(np.asarray(y, float), c),
                      "driver", lip_y=0.0, mono=0.0, params={"value": c})
    if kind == "decay":
        c = _p(arg, 1.0)       # f(y) = -c y, contracting for c > 0
        return Preset(spec, lambda t, x, y: -c * np.asarray(y, float), "driver",
                      lip_y=c, mono=max(-c, 0.0) if c >= 0 else -c,
                      depends_on_y=True, params={"rate": c})
    if kind == "affine":
        # 'affine:a,b,c' -> f(t,x,y) = a + b*h(x) - c*y with h = sin
        a, b, c = (list(map(float, arg.split(","))) + [0.0, 0.0, 0.0])[:3] if arg else (1.0, 0.0, 0.0)
        return Preset(spec,
                      lambda t, x, y: a + b * np.sin(np.asarray(x, float)) - c * np.asarray(y, float),
                      "driver", lip_y=c, mono=max(-c, 0.0),
                      depends_on_y=c != 0, params={"a": a, "b": b, "c": c})
    if kind == "cubic_monotone":
        return Preset(spec, lambda t, x, y: -np.asarray(y, float) ** 3, "driver",
                      lip_y=None, mono=0.0, depends_on_y=True)
    if kind == "cubic_clipped":
        floor = _p(arg, 8.0)
        return Preset(spec,
                      lambda t, x, y: np.maximum(-np.asarray(y, float) ** 3, -floor),
                      "driver", lip_y=None, mono=0.0, depends_on_y=True,
                      params={"floor": floor})
    if kind == "grad_linear":
        theta = _p(arg, 0.5)   # f = theta * z
        return Preset(spec,
                      lambda t, x, y, z: theta * np.asarray(z, float), "driver",
                      lip_y=0.0, lip_z=abs(theta), mono=0.0, depends_on_z=True,
                      params={"theta": theta})
    raise ConfigurationError(f"unknown driver preset {spec!r}")


def make_gtilde(spec: str) -> Preset:
    kind, _, arg = spec.partition(":")
    if kind == "zero":
        return Preset(spec, lambda t, x, y: np.zeros_like(np.asarray(x, float) + np.asarray(y, float)),
                      "noise", lip_y=0.0)
    if kind == "const":
        c = _p(arg, 1.0)
        return Preset(spec,
                      lambda t, x, y: np.full(np.broadcast(np.asarray(x, float), np.asarray(y, float)).shape, c),
                      "noise", lip_y=0.0, params={"value": c})
    if kind == "linear_y":
        c = _p(arg, 0.5)
        return Preset(spec, lambda t, x, y: c * np.asarray(y, float), "noise",
                      lip_y=abs(c), depends_on_y=True, params={"slope": c})
    raise ConfigurationError(f"unknown noise preset {spec!r}")


TERMINAL_PRESETS = ("zero", "const:c", "sin:j", "identity")
DRIVER_PRESETS = ("zero", "const:c", "decay:c", "affine:a,b,c", "cubic_monotone",
                  "cubic_clipped:floor", "grad_linear:theta")
GTILDE_PRESETS = ("zero", "const:c", "linear_y:c")


@dataclass(frozen=True)
class CoefficientSpec:
    """Full data set (phi, f, g) of one backward problem, with constants.

    g is derived from g_tilde and the covariance spec via the component map
    g_k = g_tilde * sqrt(lambda_k) e_k.  l_bound is the summed squared
    Lipschitz budget of the components; m_grad < 1 is required whenever the
    coefficients depend on the gradient argument.
    """

    phi: Preset
    f: Preset
    g_tilde: Preset
    q: QSpec | None = None
    L_mono: float = 0.0
    L_lip_y: float | None = None
    L_lip_z: float = 0.0
    l_bound: float = 0.0
    m_grad: float = 0.0
    depends_on_z: bool = False
    monotone_only: bool = False
    omega_dependent: bool = False

    @staticmethod
    def build(phi: str, f: str, g_tilde: str, q: QSpec | None = None,
              m_grad: float = 0.0) -> "CoefficientSpec":
        phi_p, f_p, g_p = make_terminal(phi), make_driver(f), make_gtilde(g_tilde)
        l_bound = 0.0
        if q is not None and g_p.lip_y is not None:
            l_bound = (g_p.lip_y ** 2) * q.sup_weighted_square()
        depends_on_z = f_p.depends_on_z or g_p.depends_on_z
        if depends_on_z and not m_grad < 1:
            raise ConfigurationError("gradient-coupled data needs m_grad < 1")
        return CoefficientSpec(
            phi_p, f_p, g_p, q,
            L_mono=f_p.mono if f_p.mono is not None else 0.0,
            L_lip_y=f_p.lip_y, L_lip_z=f_p.lip_z, l_bound=l_bound,
            m_grad=m_grad, depends_on_z=depends_on_z,
            monotone_only=f_p.lip_y is None)

    def has_noise(self) -> bool:
        return self.q is not None and self.g_tilde.name.partition(":")[0] != "zero"

    def g_component_fn(self):
        if self.q is None:
            return None
        fn, _ = g_components(self.g_tilde, self.q, self.g_tilde.lip_y)
        return fn

    def eval_f(self, t, x, y, z=None):
        if self.f.depends_on_z:
            return self.f(t, x, y, 0.0 * np.asarray(y, float) if z is None else z)
        return self.f(t, x, y)

    def with_driver(self, f: Preset) -> "CoefficientSpec":
        return replace(self, f=f,
                       L_mono=f.mono if f.mono is not None else self.L_mono,
                       L_lip_y=f.lip_y, monotone_only=f.lip_y is None)

    def probe_constants(self, dom: DomainSpec, seed: int = 0, n_probes: int = 10_000,
                        scale: float = 4.0) -> dict:
        """Randomized verification of the declared inequalities.

        Samples (t, x, y, y', z, z') and checks monotonicity in y, Lipschitz
        continuity in y (when declared) and z, and the component Lipschitz
        budget.  Raises ConfigurationError on any violated inequality.
        """
        g = rng.philox_generator(seed, 0, rng.DOMAIN_PROBE, 0)
        t = g.random(n_probes)
        if dom.variant == "torus":
            x = g.random(n_probes) * dom.length
        elif dom.variant == "interval":
            x = dom.a + g.random(n_probes) * (dom.b - dom.a)
        else:
            x = scale * g.standard_normal(n_probes)
        y1 = scale * g.standard_normal(n_probes)
        y2 = scale * g.standard_normal(n_probes)
        z1 = scale * g.standard_normal(n_probes)
        z2 = scale * g.standard_normal(n_probes)
        tol = 1e-9
        report = {}

        if self.depends_on_z:
            f1 = self.f(t, x, y1, z1)
            f2 = self.f(t, x, y2, z1)
            fz = self.f(t, x, y1, z2)
            dz = np.max(np.abs(f1 - fz) - self.L_lip_z * np.abs(z1 - z2))
            report["lip_z_violation"] = float(dz)
            if dz > tol:
                raise ConfigurationError(f"declared |f|_z Lipschitz {self.L_lip_z} violated")
        else:
            f1 = self.f(t, x, y1)
            f2 = self.f(t, x, y2)
        mono = np.max((f1 - f2) * (y1 - y2) - self.L_mono * (y1 - y2) ** 2)
        report["monotone_violation"] = float(mono)
        if mono > tol * scale ** 2:
            raise ConfigurationError(f"declared monotonicity constant {self.L_mono} violated")
        if self.L_lip_y is not None:
            lip = np.max(np.abs(f1 - f2) - self.L_lip_y * np.abs(y1 - y2))
            report["lip_y_violation"] = float(lip)
            if lip > tol:
                raise ConfigurationError(f"declared Lipschitz constant {self.L_lip_y} violated")
        if self.g_tilde.lip_y is not None:
            g1 = self.g_tilde(t, x, y1)
            g2 = self.g_tilde(t, x, y2)
            glip = np.max(np.abs(g1 - g2) - self.g_tilde.lip_y * np.abs(y1 - y2))
            report["gtilde_lip_violation"] = float(glip)
            if glip > tol:
                raise ConfigurationError("declared noise Lipschitz constant violated")
        if self.depends_on_z and not self.m_grad < 1:
            raise ConfigurationError("m_grad must be < 1 for gradient-coupled data")
        report["n_probes"] = n_probes
        report["pass"] = True
        return report

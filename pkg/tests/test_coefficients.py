import numpy as np
import pytest

from bdsdelab.coefficients import (CoefficientSpec, make_driver, make_gtilde,
                                   make_terminal)
from bdsdelab.domains import DomainSpec
from bdsdelab.errors import ConfigurationError
from bdsdelab.noise import QSpec

TORUS = DomainSpec("torus", length=2 * np.pi)


def test_preset_lookup_errors():
    for factory, bad in ((make_terminal, "gauss"), (make_driver, "quintic"),
                         (make_gtilde, "exp")):
        with pytest.raises(ConfigurationError):
            factory(bad)


def test_terminal_presets_evaluate():
    x = np.linspace(0, 2 * np.pi, 5)
    assert np.allclose(make_terminal("sin:2")(x), np.sin(2 * x))
    assert np.allclose(make_terminal("sin:1,3")(x), 3 * np.sin(x))
    assert np.allclose(make_terminal("const:1.5")(x), 1.5)
    assert np.allclose(make_terminal("identity")(x), x)


def test_driver_constants_declared():
    cubic = make_driver("cubic_monotone")
    assert cubic.mono == 0.0 and cubic.lip_y is None
    decay = make_driver("decay:2")
    assert decay.lip_y == 2.0 and decay.mono == 0.0
    grad = make_driver("grad_linear:0.7")
    assert grad.depends_on_z and grad.lip_z == pytest.approx(0.7)


def test_probe_validation_passes_for_shipped_presets():
    q = QSpec((0.5,), ("const",), TORUS)
    for phi, f, g in (("sin:1", "zero", "zero"),
                      ("const:2", "cubic_monotone", "zero"),
                      ("sin:1", "decay:0.5", "const:1"),
                      ("zero", "affine:1,0.5,0.25", "linear_y:0.3")):
        data = CoefficientSpec.build(phi, f, g, q=q)
        report = data.probe_constants(TORUS, seed=1, n_probes=10_000)
        assert report["pass"]


def test_probe_detects_lying_constants():
    from dataclasses import replace
    data = CoefficientSpec.build("zero", "decay:1", "zero")
    lying = replace(data, L_lip_y=0.5)      # true Lipschitz constant is 1
    with pytest.raises(ConfigurationError):
        lying.probe_constants(TORUS, seed=2)
    mono_lie = replace(CoefficientSpec.build("zero", "affine:0,0,-1", "zero"),
                       L_mono=0.0)          # f(y) = +y grows, not dissipative
    with pytest.raises(ConfigurationError):
        mono_lie.probe_constants(TORUS, seed=2)


def test_gradient_data_requires_m_below_one():
    with pytest.raises(ConfigurationError):
        CoefficientSpec.build("identity", "grad_linear:0.5", "zero", m_grad=1.2)


def test_l_bound_computed_from_covariance():
    q = QSpec((0.5,), ("const",), TORUS)
    data = CoefficientSpec.build("zero", "zero", "linear_y:0.4", q=q)
    assert data.l_bound == pytest.approx(0.16 * 0.5 / (2 * np.pi), rel=1e-9)

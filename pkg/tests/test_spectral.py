import numpy as np
import pytest

from bdsdelab.coefficients import CoefficientSpec
from bdsdelab.domains import DomainSpec
from bdsdelab.errors import ConfigurationError
from bdsdelab.grids import TimeGrid
from bdsdelab.noise import QSpec, sample_backward_noise
from bdsdelab.spectral import (SpectralBasis, mild_residual, semigroup_apply,
                               solve_mild, spectral_gradient,
                               time_reversal_check)

TORUS = DomainSpec("torus", length=2 * np.pi)
INTERVAL = DomainSpec("interval", a=0.0, b=np.pi)
GRID = TimeGrid(0.0, 1.0, 128)
BASIS = SpectralBasis(TORUS, 0.5, 8)
Q = QSpec((0.5,), ("const",), TORUS)


def test_semigroup_identity_and_diagonal_action():
    c = np.linspace(1, 2, BASIS.n_modes)
    assert np.array_equal(semigroup_apply(BASIS, 0.0, c), c)
    single = np.zeros(BASIS.n_modes)
    single[3] = 1.0
    out = semigroup_apply(BASIS, 0.7, single)
    assert out[3] == pytest.approx(np.exp(-BASIS.eigenvalues()[3] * 0.7), rel=1e-14)
    assert np.all(np.delete(out, 3) == 0.0)
    with pytest.raises(ConfigurationError):
        semigroup_apply(BASIS, -0.1, c)


def test_semigroup_composition_property():
    c = np.linspace(-1, 1, BASIS.n_modes)
    a = semigroup_apply(BASIS, 0.3, semigroup_apply(BASIS, 0.2, c))
    b = semigroup_apply(BASIS, 0.5, c)
    assert np.allclose(a, b, atol=1e-15)
    # contraction in the coefficient norm
    assert np.linalg.norm(semigroup_apply(BASIS, 0.4, c)) <= np.linalg.norm(c)


def test_interval_sine_basis_eigenvalues():
    basis = SpectralBasis(INTERVAL, 0.5, 4)
    assert np.allclose(basis.eigenvalues(), 0.5 * np.arange(1, 5) ** 2)


def test_mild_linear_mode_ode_oracle():
    c = 0.25
    data = CoefficientSpec.build("sin:1", f"decay:{c}", "zero")
    noise = sample_backward_noise(GRID, 1, seed=1)
    sol = solve_mild(data, None, BASIS, GRID, noise, "stepper")
    x = TORUS.mesh(64)
    t = GRID.times()
    exact = np.exp(-(0.5 + c) * (1 - t))[:, None] * np.sin(x)[None, :]
    u = sol.field(x)
    rel = np.sqrt(np.sum((u - exact) ** 2) / np.sum(exact ** 2))
    assert rel < 1e-3


def test_mild_additive_telescoping_exact():
    data = CoefficientSpec.build("zero", "zero", "const:1", q=Q)
    noise = sample_backward_noise(GRID, 1, seed=2)
    sol = solve_mild(data, Q, BASIS, GRID, noise, "stepper")
    lev = noise.levels()[0]
    x = TORUS.mesh(16)
    expect = np.sqrt(0.5) / np.sqrt(2 * np.pi) * (lev[-1] - lev)
    assert np.max(np.abs(sol.field(x) - expect[:, None])) < 1e-12


def test_mild_zero_data_zero_field():
    data = CoefficientSpec.build("zero", "zero", "zero")
    noise = sample_backward_noise(GRID, 1, seed=3)
    sol = solve_mild(data, None, BASIS, GRID, noise, "stepper")
    assert np.all(sol.coeffs == 0.0)
    assert mild_residual(sol, data, None, noise) == 0.0


def test_global_picard_agrees_with_stepper():
    data = CoefficientSpec.build("sin:1", "decay:0.25", "const:1", q=Q)
    noise = sample_backward_noise(GRID, 1, seed=4)
    stepper = solve_mild(data, Q, BASIS, GRID, noise, "stepper")
    picard = solve_mild(data, Q, BASIS, GRID, noise, "global_picard", tol=1e-13)
    assert np.max(np.abs(stepper.coeffs - picard.coeffs)) < 1e-10
    changes = [e["l2_change"] for e in picard.iteration_log]
    assert all(b < a for a, b in zip(changes[1:-1], changes[2:]))  # geometric decay


def test_mild_residual_detects_perturbation():
    data = CoefficientSpec.build("sin:1", "zero", "zero")
    noise = sample_backward_noise(GRID, 1, seed=5)
    sol = solve_mild(data, None, BASIS, GRID, noise, "stepper")
    assert mild_residual(sol, data, None, noise) <= 1e-14
    sol.coeffs[GRID.n_steps // 2, 2] += 0.1
    # the defect appears at the perturbed node and its left neighbour
    assert mild_residual(sol, data, None, noise) >= 0.1 * np.sqrt(GRID.dt)


def test_time_reversal_residuals_match_exactly():
    data = CoefficientSpec.build("sin:1", "decay:0.25", "const:1", q=Q)
    noise = sample_backward_noise(GRID, 1, seed=6)
    sol = solve_mild(data, Q, BASIS, GRID, noise, "stepper")
    rep = time_reversal_check(sol, data, Q, noise)
    assert rep["discrepancy"] == 0.0
    sol.coeffs[3, 1] += 0.05
    rep2 = time_reversal_check(sol, data, Q, noise)
    assert rep2["discrepancy"] <= 1e-12
    assert rep2["backward_residual"] > 0.0


def test_spectral_gradient_modes_and_fd_oracle():
    x = TORUS.mesh(128)
    coeffs = np.zeros(BASIS.n_modes)
    coeffs[2] = np.sqrt(np.pi)          # normalized sin mode -> sin(x)
    grad = spectral_gradient(BASIS, coeffs, x)
    assert np.allclose(grad, np.cos(x), atol=1e-12)
    assert np.all(spectral_gradient(BASIS, np.eye(BASIS.n_modes)[0], x) == 0.0)
    # central-difference oracle, O(h^2)
    field = np.sin(2 * x) - 0.3 * np.cos(x)
    coeffs = BASIS.project(field, *BASIS.quad_mesh()) if False else None
    xq, wq = BASIS.quad_mesh()
    coeffs = BASIS.project(np.sin(2 * xq) - 0.3 * np.cos(xq), xq, wq)
    grad = spectral_gradient(BASIS, coeffs, x)
    h = x[1] - x[0]
    fd = (np.roll(field, -1) - np.roll(field, 1)) / (2 * h)
    assert np.max(np.abs(grad - fd)) < 1e-2


def test_mild_rejects_gradient_coupled_data():
    data = CoefficientSpec.build("identity", "grad_linear:0.5", "zero")
    noise = sample_backward_noise(GRID, 1, seed=7)
    with pytest.raises(ConfigurationError):
        solve_mild(data, None, BASIS, GRID, noise)

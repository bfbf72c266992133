import numpy as np
import pytest
from scipy.integrate import quad

from bdsdelab.domains import DomainSpec
from bdsdelab.errors import (ConfigurationError, NumericalFailureError,
                             UnsupportedConfigurationError)
from bdsdelab.generators import (CoefficientField, GeneratorSpec,
                                 drift_from_divergence_form, make_generator,
                                 sample_symmetric_stable)
from bdsdelab.grids import TimeGrid
from bdsdelab.paths import (PathEnsemble, dual_resolvent_one, killing_density,
                            resolvent_mc, simulate_paths)
from bdsdelab import rng

LINE = DomainSpec("line")
TORUS = DomainSpec("torus", length=2 * np.pi)
INTERVAL = DomainSpec("interval", a=0.0, b=np.pi)


def test_displacement_variance_matches_generator():
    # a = 1/2 gives sigma = 1, so Var(X_t - X_0) = t
    grid = TimeGrid(0, 1, 32)
    ens = simulate_paths(make_generator("const:0.5"), LINE, [(0.0, 1.0)], grid,
                         10_000, seed=1)
    disp = ens.paths[0, :, -1] - ens.paths[0, :, 0]
    assert abs(disp.var() - 1.0) < 0.05
    assert abs(disp.mean()) < 0.05


def test_start_outside_domain_rejected():
    grid = TimeGrid(0, 1, 8)
    with pytest.raises(ConfigurationError):
        simulate_paths(make_generator("const:0.5"), INTERVAL, [(0.0, 4.0)],
                       grid, 10, seed=1)


def test_killing_at_interval_boundary():
    grid = TimeGrid(0, 1, 64)
    ens = simulate_paths(make_generator("const:0.5"), INTERVAL,
                         [(0.0, np.pi / 2)], grid, 2000, seed=2)
    exited = ens.exit_node[0] <= grid.n_steps
    # from the midpoint of (0, pi) a fair fraction of unit-diffusion paths exit
    assert 0.1 < exited.mean() < 0.95
    # killed paths froze outside, survivors never left
    dead = ens.exit_node[0] <= grid.n_steps
    for m in np.where(dead)[0][:20]:
        e = ens.exit_node[0, m]
        assert not INTERVAL.inside(ens.paths[0, m, e:e + 1])[0]
        assert np.all(ens.paths[0, m, e:] == ens.paths[0, m, e])
    alive = ~dead
    inside = INTERVAL.inside(ens.paths[0, alive, :])
    assert inside.all()


def test_dead_path_convention_masks():
    grid = TimeGrid(0, 1, 16)
    ens = simulate_paths(make_generator("const:0.5"), INTERVAL,
                         [(0.0, 0.1)], grid, 500, seed=3)
    alive = ens.alive_matrix()
    for m in range(500):
        e = ens.exit_node[0, m]
        if e <= grid.n_steps:
            assert not alive[0, m, e:].any()
            assert alive[0, m, :e].all()


def test_fractional_alpha2_is_gaussian():
    g = rng.philox_generator(0, 0, rng.DOMAIN_STABLE, 0)
    draws = sample_symmetric_stable(2.0, g, 100_000)
    kurt = np.mean(draws ** 4) / np.mean(draws ** 2) ** 2
    assert abs(kurt - 3.0) < 0.1
    assert abs(draws.var() - 2.0) < 0.05  # alpha = 2 stable = N(0, 2)


def test_fractional_paths_have_stable_scaling():
    grid = TimeGrid(0, 1, 16)
    gen = make_generator("fractional:1.5")
    ens = simulate_paths(gen, TORUS, [(0.0, 0.0)], grid, 4000, seed=4)
    assert ens.w_increments is None
    with pytest.raises(ConfigurationError):
        simulate_paths(gen, TORUS, [(0.0, 0.0)], grid, 8, seed=4, store_w=True)


def test_drift_presets():
    gen_const = make_generator("const:0.5")
    x = np.linspace(0, 2 * np.pi, 9)
    assert np.all(drift_from_divergence_form(gen_const, 0.0, x) == 0.0)
    # a(x) = (1 + sin(x)/2)/2 has analytic derivative cos(x)/4
    gen_sin = make_generator("sin_field:0.5")
    b = drift_from_divergence_form(gen_sin, 0.0, x)
    assert np.allclose(b, 0.25 * np.cos(x), atol=1e-12)


def test_drift_central_difference_second_order():
    field = CoefficientField("test", lambda t, x: 0.5 * (1 + 0.5 * np.sin(np.asarray(x, float))),
                             dfn=None, lam_ell=0.25, Lam_ell=0.75)
    gen = GeneratorSpec("div_form", a=field)
    x = np.linspace(0.0, 2 * np.pi, 33)
    exact = 0.25 * np.cos(x)
    err_h = np.max(np.abs(drift_from_divergence_form(gen, 0.0, x, h=0.1) - exact))
    err_h2 = np.max(np.abs(drift_from_divergence_form(gen, 0.0, x, h=0.05) - exact))
    assert err_h / err_h2 == pytest.approx(4.0, rel=0.15)


def test_ellipticity_violation_detected():
    lying = CoefficientField("bad", lambda t, x: 0.5 * (1 + 0.9 * np.sin(np.asarray(x, float))),
                             lam_ell=0.45, Lam_ell=0.55)
    gen = GeneratorSpec("div_form", a=lying)
    with pytest.raises(NumericalFailureError):
        simulate_paths(gen, TORUS, [(0.0, np.pi / 2)], TimeGrid(0, 1, 16), 64, seed=5)


def test_resolvent_closed_form_on_torus():
    grid = TimeGrid(0, 1, 64)
    gen = make_generator("const:0.5")
    one = lambda t, x: np.ones_like(np.asarray(x, float))
    for beta, s in ((2.0, 0.25), (4.0, 0.5)):
        est, se = resolvent_mc(gen, TORUS, one, beta, [(s, 1.0)], grid, 400, seed=6)
        exact = (1 - np.exp(-beta * (1 - s))) / beta
        assert abs(est[0] - exact) <= max(3 * se[0], 2e-3)
    est, _ = resolvent_mc(gen, TORUS, one, 0.0, [(0.25, 1.0)], grid, 100, seed=6)
    assert est[0] == pytest.approx(0.75, abs=1e-10)
    zero = lambda t, x: np.zeros_like(np.asarray(x, float))
    est, _ = resolvent_mc(gen, TORUS, zero, 1.0, [(0.25, 1.0)], grid, 100, seed=6)
    assert est[0] == 0.0


def test_resolvent_rejects_negative_parameter():
    with pytest.raises(ConfigurationError):
        resolvent_mc(make_generator("const:0.5"), TORUS,
                     lambda t, x: x, -1.0, [(0.0, 1.0)], TimeGrid(0, 1, 8), 8, seed=1)


def test_dual_resolvent_one():
    assert dual_resolvent_one(TORUS, 1.0, 1.0) == pytest.approx(1 - np.exp(-1), rel=1e-12)
    # small-beta branch reproduces the lifetime
    assert dual_resolvent_one(TORUS, 1e-12, 0.7) == pytest.approx(0.7, rel=1e-9)
    assert dual_resolvent_one(TORUS, 0.0, 0.7) == 0.7
    with pytest.raises(UnsupportedConfigurationError):
        dual_resolvent_one(INTERVAL, 1.0, 0.5)


def test_killing_mass_total():
    # int_0^T beta exp(-beta s) ds * m(E) = (1 - exp(-beta T)) m(E)
    beta, t_end = 3.0, 1.0
    val, _ = quad(lambda s: killing_density(beta, s), 0.0, t_end)
    assert val * TORUS.volume == pytest.approx((1 - np.exp(-beta * t_end)) * 2 * np.pi,
                                               rel=1e-9)


def test_markov_restart_consistency():
    grid = TimeGrid(0, 1, 16)
    gen = make_generator("const:0.5")
    ens = simulate_paths(gen, LINE, [(0.0, 0.0)], grid, 20_000, seed=7)
    k = 8
    x_star = float(ens.paths[0, 123, k])
    restart = simulate_paths(gen, LINE, [(grid.times()[k], x_star)], grid,
                             20_000, seed=901)
    inc = restart.paths[0, :, k + 1] - restart.paths[0, :, k]
    assert abs(inc.mean()) < 3 * inc.std() / np.sqrt(len(inc))
    assert abs(inc.var() - grid.dt) < 0.1 * grid.dt


def test_conservative_torus_paths_never_die():
    grid = TimeGrid(0, 1, 16)
    ens = simulate_paths(make_generator("const:0.5"), TORUS, [(0.0, 1.0)],
                         grid, 200, seed=8)
    assert np.all(ens.exit_node == grid.n_steps + 1)


def test_ensemble_serialization(tmp_path):
    grid = TimeGrid(0, 1, 8)
    ens = simulate_paths(make_generator("const:0.5"), TORUS, [(0.0, 1.0)],
                         grid, 16, seed=9)
    ens.save(str(tmp_path / "paths"))
    raw = np.fromfile(tmp_path / "paths.bin", dtype="<f8")
    assert np.array_equal(raw.reshape(ens.paths.shape), ens.paths)


def test_per_start_substreams_batch_independent():
    """Splitting starts across calls reproduces the same paths."""
    grid = TimeGrid(0, 1, 8)
    gen = make_generator("const:0.5")
    both = simulate_paths(gen, TORUS, [(0.0, 1.0), (0.0, 2.0)], grid, 32, seed=10)
    first = simulate_paths(gen, TORUS, [(0.0, 1.0)], grid, 32, seed=10)
    assert np.array_equal(both.paths[0], first.paths[0])

import numpy as np
import pytest

from bdsdelab.coefficients import CoefficientSpec
from bdsdelab.domains import DomainSpec
from bdsdelab.field import (feynman_kac_field, nemytskii_driver,
                            terminal_slice_error)
from bdsdelab.generators import make_generator
from bdsdelab.grids import TimeGrid
from bdsdelab.noise import QSpec, sample_backward_noise
from bdsdelab.paths import simulate_paths
from bdsdelab.regression import RegressionConfig
from bdsdelab.solver import solve_linear

TORUS = DomainSpec("torus", length=2 * np.pi)
GRID = TimeGrid(0.0, 1.0, 32)
GEN = make_generator("const:0.5")
FOURIER = RegressionConfig("fourier", 3, ridge=1e-10)
S_NODES = GRID.times()[4::4]            # (0, T], includes T
X_NODES = TORUS.mesh(8)


def test_conservation_field_is_one():
    data = CoefficientSpec.build("const:1", "zero", "zero")
    est = feynman_kac_field(data, GEN, TORUS, GRID, S_NODES, X_NODES,
                            inner_paths=500, outer_realizations=1, seed=1,
                            cfg=FOURIER)
    assert np.allclose(est.values, 1.0, atol=1e-12)
    assert est.coverage == 1.0


def test_heat_field_small_mesh():
    data = CoefficientSpec.build("sin:1", "zero", "zero")
    est = feynman_kac_field(data, GEN, TORUS, GRID, S_NODES, X_NODES,
                            inner_paths=4000, outer_realizations=1, seed=2,
                            cfg=FOURIER)
    ref = lambda s, x: np.exp(-0.5 * (1 - s)) * np.sin(x)
    assert est.rel_l2_error(ref, outer=0) < 0.05
    assert terminal_slice_error(est, data) <= 1e-12


def test_additive_field_closed_form_per_realization():
    q = QSpec((0.5,), ("const",), TORUS)
    data = CoefficientSpec.build("zero", "zero", "const:1", q=q)
    bank = [sample_backward_noise(GRID, 1, seed=3, stream_id=r) for r in range(2)]
    est = feynman_kac_field(data, GEN, TORUS, GRID, S_NODES, X_NODES,
                            inner_paths=64, outer_realizations=2, seed=3,
                            cfg=FOURIER, noise_bank=bank)
    for r in range(2):
        lev = bank[r].levels()[0]
        idx = [GRID.node_of(s) for s in S_NODES]
        expect = np.sqrt(0.5) / np.sqrt(2 * np.pi) * (lev[-1] - lev[idx])
        assert np.max(np.abs(est.values[r] - expect[:, None])) < 1e-10


def test_field_determinism_across_chunking_and_threads():
    data = CoefficientSpec.build("sin:1", "zero", "zero")
    kw = dict(inner_paths=200, outer_realizations=1, seed=4, cfg=FOURIER)
    a = feynman_kac_field(data, GEN, TORUS, GRID, S_NODES, X_NODES, x_chunk=2, **kw)
    b = feynman_kac_field(data, GEN, TORUS, GRID, S_NODES, X_NODES, x_chunk=8, **kw)
    c = feynman_kac_field(data, GEN, TORUS, GRID, S_NODES, X_NODES, x_chunk=2,
                          threads=3, **kw)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.values, c.values)


def test_fast_mode_flagged_and_close():
    data = CoefficientSpec.build("sin:1", "zero", "zero")
    slow = feynman_kac_field(data, GEN, TORUS, GRID, S_NODES, X_NODES,
                             inner_paths=2000, outer_realizations=1, seed=5,
                             cfg=FOURIER)
    fast = feynman_kac_field(data, GEN, TORUS, GRID, S_NODES, X_NODES,
                             inner_paths=2000, outer_realizations=1, seed=5,
                             cfg=FOURIER, fast_mode=True)
    assert fast.fast_mode and not slow.fast_mode
    assert np.max(np.abs(fast.values - slow.values)) < 0.1


def test_interp_periodic_wrap():
    data = CoefficientSpec.build("sin:1", "zero", "zero")
    est = feynman_kac_field(data, GEN, TORUS, GRID, S_NODES, X_NODES,
                            inner_paths=200, outer_realizations=1, seed=6,
                            cfg=FOURIER)
    u = est.interp(0)
    assert u(1.0, 0.5) == pytest.approx(u(1.0, 0.5 + 2 * np.pi), abs=1e-12)
    # terminal slice interpolates the terminal condition
    assert u(1.0, X_NODES[3]) == pytest.approx(np.sin(X_NODES[3]), abs=1e-12)


def test_feynman_kac_bdsde_equivalence():
    """Re-solving the linear equation with the frozen composed coefficients
    reproduces the field (the two representations are equivalent)."""
    q = QSpec((0.5,), ("const",), TORUS)
    data = CoefficientSpec.build("sin:1", "decay:0.25", "const:1", q=q)
    bank = [sample_backward_noise(GRID, 1, seed=7, stream_id=0)]
    est = feynman_kac_field(data, GEN, TORUS, GRID, S_NODES, X_NODES,
                            inner_paths=8000, outer_realizations=1, seed=7,
                            cfg=FOURIER, noise_bank=bank)
    frozen = nemytskii_driver(data, est.interp(0))
    s0, x0 = float(S_NODES[2]), float(X_NODES[2])
    ens = simulate_paths(GEN, TORUS, [(s0, x0)], GRID, 8000, seed=99)
    sol = solve_linear(frozen, ens, bank[0], FOURIER, TORUS)
    i = list(S_NODES).index(s0)
    j = list(X_NODES).index(x0)
    eps = 2.0 * (est.stderr[0, i, j] + sol.y0_stderr[0]) + 5e-3
    assert abs(sol.y0[0] - est.values[0, i, j]) < eps

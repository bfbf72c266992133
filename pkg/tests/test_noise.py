import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bdsdelab.domains import DomainSpec
from bdsdelab.errors import ConfigurationError
from bdsdelab.grids import TimeGrid
from bdsdelab.noise import (BackwardNoise, QSpec, backward_ito, forward_ito,
                            g_components, reverse_noise, sample_backward_noise,
                            validate_qspec)

TORUS = DomainSpec("torus", length=2 * np.pi)


def test_sampling_deterministic():
    grid = TimeGrid(0, 1, 4)
    a = sample_backward_noise(grid, 1, seed=7, stream_id=0)
    b = sample_backward_noise(grid, 1, seed=7, stream_id=0)
    assert np.array_equal(a.increments, b.increments)
    c = sample_backward_noise(grid, 1, seed=8, stream_id=0)
    assert not np.array_equal(a.increments, c.increments)


def test_rejects_degenerate_inputs():
    with pytest.raises(ConfigurationError):
        sample_backward_noise(TimeGrid(0, 1, 4), 0, seed=1)
    with pytest.raises(ConfigurationError):
        TimeGrid(0, 0, 4)
    with pytest.raises(ConfigurationError):
        TimeGrid(0, 1, 0)


def test_increment_variance_chi_square_bound():
    # chi-square oracle: at 1024 draws the central 95% band of the sample
    # variance is [0.9147, 1.0897] * dt, inside the documented [0.9, 1.1] * dt
    from scipy.stats import chi2
    n = 1024
    lo_95 = chi2.ppf(0.025, n - 1) / (n - 1)
    hi_95 = chi2.ppf(0.975, n - 1) / (n - 1)
    assert 0.9 < lo_95 and hi_95 < 1.1
    grid = TimeGrid(0, 1, n)
    noise = sample_backward_noise(grid, 1, seed=42)
    ratio = noise.increments.var(ddof=1) / grid.dt
    assert 0.9 < ratio < 1.1


def test_cross_mode_independence():
    grid = TimeGrid(0, 1, 4)
    xs, ys = [], []
    for seed in range(10_000):
        inc = sample_backward_noise(grid, 2, seed=seed).increments
        xs.append(inc[0])
        ys.append(inc[1])
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    rho = np.corrcoef(x, y)[0, 1]
    assert abs(rho) < 0.2


def test_backward_ito_constant_integrand():
    grid = TimeGrid(0, 1, 16)
    noise = sample_backward_noise(grid, 2, seed=3)
    c = 2.5
    val = backward_ito(np.full((2, 17), c), noise)
    assert val == pytest.approx(c * noise.levels()[:, -1].sum(), abs=1e-14)
    assert backward_ito(np.zeros((2, 17)), noise) == 0.0


def test_backward_ito_mode_mismatch():
    grid = TimeGrid(0, 1, 8)
    noise = sample_backward_noise(grid, 2, seed=3)
    with pytest.raises(ConfigurationError):
        backward_ito(np.zeros((3, 9)), noise)
    with pytest.raises(ConfigurationError):
        backward_ito(np.zeros((2, 8)), noise)


def test_backward_equals_forward_plus_quadratic_variation():
    # oracle: right-endpoint sum = left-endpoint sum + realized [beta], exactly
    grid = TimeGrid(0, 1, 256)
    noise = sample_backward_noise(grid, 1, seed=11)
    lev = noise.levels()
    back = backward_ito(lev, noise)
    fwd = forward_ito(lev, noise.increments)
    qv = float(np.sum(noise.increments ** 2))
    assert back == pytest.approx(fwd + qv, abs=1e-12)


def test_backward_ito_self_integral_rate():
    # estimates of int beta d'beta converge to (beta_T^2 + T)/2 at rate dt^(1/2)
    errs = []
    for k in (6, 8, 10):
        n = 2 ** k
        grid = TimeGrid(0, 1, n)
        sq = []
        for seed in range(64):
            noise = sample_backward_noise(grid, 1, seed=seed)
            lev = noise.levels()
            target = 0.5 * (lev[0, -1] ** 2 + 1.0)
            sq.append((backward_ito(lev, noise) - target) ** 2)
        errs.append(np.sqrt(np.mean(sq)))
    # halving dt by 4 should shrink the error by about 2
    assert errs[2] < errs[0]
    rate = np.polyfit(np.log([2.0 ** -6, 2.0 ** -8, 2.0 ** -10]), np.log(errs), 1)[0]
    assert 0.3 < rate < 0.7


def test_reverse_noise_involution_bit_exact():
    grid = TimeGrid(0, 1, 32)
    noise = sample_backward_noise(grid, 3, seed=5)
    twice = reverse_noise(reverse_noise(noise))
    assert np.array_equal(twice.increments, noise.increments)
    assert not twice.is_reversed


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 3), st.integers(1, 6))
def test_reversal_identity_property(seed, n_modes, log2_steps):
    """Backward integral equals the negated forward integral on reversed data,
    exactly at every grid node and for every integrand."""
    n = 2 ** log2_steps
    grid = TimeGrid(0.0, 1.0, n)
    noise = sample_backward_noise(grid, n_modes, seed=seed)
    rng = np.random.default_rng(seed)
    eta = rng.standard_normal((n_modes, n + 1))
    rev = reverse_noise(noise)
    for from_node in (0, n // 2):
        back = backward_ito(eta, noise, from_node)
        fwd = forward_ito(eta[:, ::-1], rev.increments, upto_node=n - from_node)
        assert back == pytest.approx(-fwd, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_backward_ito_linear_and_additive(seed):
    grid = TimeGrid(0, 1, 16)
    noise = sample_backward_noise(grid, 2, seed=seed)
    rng = np.random.default_rng(seed)
    eta1 = rng.standard_normal((2, 17))
    eta2 = rng.standard_normal((2, 17))
    lhs = backward_ito(2.0 * eta1 - 3.0 * eta2, noise)
    rhs = 2.0 * backward_ito(eta1, noise) - 3.0 * backward_ito(eta2, noise)
    assert lhs == pytest.approx(rhs, abs=1e-12)
    # additivity over disjoint index ranges
    split = 7
    total = backward_ito(eta1, noise, 0)
    head = backward_ito(eta1, noise, 0) - backward_ito(eta1, noise, split)
    tail = backward_ito(eta1, noise, split)
    assert total == pytest.approx(head + tail, abs=1e-12)


def test_backward_integral_zero_mean_for_deterministic_integrand():
    grid = TimeGrid(0, 1, 8)
    eta = np.sin(np.linspace(0, 3, 9))[None, :]
    vals = np.array([backward_ito(eta, sample_backward_noise(grid, 1, seed=s))
                     for s in range(10_000)])
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean()) < 3 * se + 1e-12


def test_validate_qspec_trig_family():
    lambdas = tuple(2.0 ** -k for k in range(1, 9))
    basis = ("const", "sin:1", "cos:1", "sin:2", "cos:2", "sin:3", "cos:3", "sin:4")
    q = QSpec(lambdas, basis, TORUS)
    report = validate_qspec(q, TORUS.mesh(512))
    assert report["pass"]
    assert report["orthonormality_residual"] < 1e-8
    # bounded-basis bound on the sup statistic
    bound = sum(lam * (2.0 / TORUS.length) for lam in lambdas)
    assert report["sup_weighted_square"] <= bound + 1e-12


def test_validate_qspec_constant_mode_value():
    q = QSpec((0.5,), ("const",), TORUS)
    report = validate_qspec(q, TORUS.mesh(256))
    assert report["sup_weighted_square"] == pytest.approx(0.5 / (2 * np.pi), rel=1e-12)


def test_validate_qspec_interval_sine_orthonormality():
    dom = DomainSpec("interval", a=0.0, b=np.pi)
    q = QSpec((0.5, 0.25, 0.125), ("sin:1", "sin:2", "sin:3"), dom)
    report = validate_qspec(q, dom.mesh(511))
    assert report["orthonormality_residual"] < 1e-8


def test_validate_qspec_unknown_basis():
    with pytest.raises(ConfigurationError):
        QSpec((1.0,), ("hermite:1",), TORUS).basis_fns()


def test_g_components_scaling_and_bound():
    q = QSpec((0.25,), ("const",), TORUS)
    gfn, _ = g_components(lambda t, x, y: np.ones_like(np.asarray(x, float)), q)
    x = TORUS.mesh(8)
    c = 1.0 / np.sqrt(2 * np.pi)
    assert gfn(0.0, x, 0.0)[0] == pytest.approx(0.5 * c, rel=1e-12)
    # Lipschitz budget: l = L'^2 sup_x sum lambda_k e_k^2
    _, l_bound = g_components(lambda t, x, y: 0.3 * y, q, lip_constant=0.3)
    assert l_bound == pytest.approx(0.09 * 0.25 / (2 * np.pi), rel=1e-9)
    gfn0, _ = g_components(lambda t, x, y: np.zeros_like(np.asarray(x, float)), q)
    assert np.all(gfn0(0.0, x, 1.0) == 0.0)


def test_noise_serialization_roundtrip(tmp_path):
    grid = TimeGrid(0, 1, 8)
    noise = sample_backward_noise(grid, 2, seed=9, stream_id=4)
    prefix = str(tmp_path / "noise")
    noise.save(prefix)
    loaded = BackwardNoise.load(prefix)
    assert np.array_equal(loaded.increments, noise.increments)
    assert loaded.seed == 9 and loaded.stream_id == 4
    # mode-major little-endian column layout
    raw = np.frombuffer(noise.to_bytes(), dtype="<f8").reshape(2, 8)
    assert np.array_equal(raw, noise.increments)

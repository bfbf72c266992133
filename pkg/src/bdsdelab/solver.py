"""Regression-based backward solvers.

The discrete backward equation on the path ensemble is

    Y_N = phi(X_N),
    Y_i = E[ Y_{i+1} + f(t_{i+1}, X_{i+1}, .) dt
             + sum_k g_k(t_{i+1}, X_{i+1}, .) d_beta^k_i | X_i ],
    dM_i = (argument) - Y_i,

with the conditional expectation realized by least-squares regression over
alive paths and the driving noise frozen (noise-measurable terms are constants
across the ensemble and pass through the projection).  Because dM closes each
step exactly, the per-path reconstruction of the backward equation holds to
machine precision for every solver entry point; `residual_check` verifies it.

Entry points mirror the existence construction: a linear solve, Picard
iteration for Lipschitz drivers (on time windows short enough that the
iteration contracts), a monotone-driver ladder built from truncation and
inf-convolution regularization, and an outer fixed point for gradient-coupled
coefficients with a weighted-norm contraction log.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientSpec, Preset
from .domains import DomainSpec
from .errors import (ConfigurationError, NonConvergenceError,
                     NumericalFailureError)
from .noise import BackwardNoise
from .paths import PathEnsemble
from .regression import (RegressionConfig, build_design, fit_values,
                         regress_conditional)


@dataclass
class BdsdeSolution:
    grid: object
    start_node: int
    y: np.ndarray                 # (Q, M, N+1); 0 on dead/unstarted nodes
    mart_increments: np.ndarray   # (Q, M, N)
    driver_term: np.ndarray       # (Q, M, N): f dt contributions actually used
    noise_term: np.ndarray        # (Q, M, N): sum_k g_k d_beta contributions
    terminal: np.ndarray          # (Q, M)
    ensemble: PathEnsemble
    z: np.ndarray | None = None   # (Q, M, N) gradient representation
    y0: np.ndarray = None         # (Q,) value estimate at the start node
    y0_stderr: np.ndarray = None
    iteration_log: list = field(default_factory=list)
    regression_stderr: float = 0.0   # pooled fitted-mean standard error

    def bracket(self) -> np.ndarray:
        """Realized quadratic variation [M]_T per path, (Q, M)."""
        return np.sum(self.mart_increments ** 2, axis=2)

    def bracket_path(self) -> np.ndarray:
        """Cumulative realized bracket at every node, (Q, M, N+1)."""
        out = np.zeros(self.y.shape)
        np.cumsum(self.mart_increments ** 2, axis=2, out=out[:, :, 1:])
        return out


def _check_inputs(data: CoefficientSpec, ens: PathEnsemble, noise: BackwardNoise):
    if ens.grid.n_steps != noise.grid.n_steps or abs(ens.grid.dt - noise.grid.dt) > 1e-12:
        raise ConfigurationError("noise grid must match the path grid")
    j0 = int(ens.start_node[0])
    if not np.all(ens.start_node == j0):
        raise ConfigurationError("backward solvers need a common start time per ensemble")
    if data.has_noise() and data.q.n_modes != noise.n_modes:
        raise ConfigurationError(
            f"coefficient spec has {data.q.n_modes} noise modes, noise carries {noise.n_modes}")
    return j0


def _terminal_values(data: CoefficientSpec, ens: PathEnsemble) -> np.ndarray:
    n = ens.grid.n_steps
    xi = np.asarray(data.phi(ens.paths[:, :, n]), dtype=float)
    return np.where(ens.alive_at(n), xi, 0.0)


def _sweep(data: CoefficientSpec, ens: PathEnsemble, noise: BackwardNoise,
           cfg: RegressionConfig, dom: DomainSpec, lo_node: int, hi_node: int,
           y: np.ndarray, frozen_y: np.ndarray | None,
           frozen_v: np.ndarray | None, designs: dict | None = None) -> tuple:
    """One backward regression sweep over nodes [lo_node, hi_node).

    Coefficients are evaluated at node i+1 states; the y (and gradient)
    arguments come from frozen_y / frozen_v (previous iterate), which realizes
    the linear solve with frozen coefficients.  Mutates y in place on
    [lo_node, hi_node) and returns the per-node terms.
    """
    times = ens.grid.times()
    dt = ens.grid.dt
    g_fn = data.g_component_fn() if data.has_noise() else None
    n_nodes = hi_node - lo_node
    q_count, m_count = y.shape[0], y.shape[1]
    dm = np.zeros((q_count, m_count, n_nodes))
    f_term = np.zeros_like(dm)
    g_term = np.zeros_like(dm)
    stderr_acc = 0.0

    for i in range(hi_node - 1, lo_node - 1, -1):
        alive_next = ens.alive_at(i + 1)
        x_next = ens.paths[:, :, i + 1]
        y_arg = frozen_y[:, :, i + 1] if frozen_y is not None else 0.0
        if data.f.depends_on_z or data.g_tilde.depends_on_z:
            v_arg = frozen_v[:, :, min(i + 1, frozen_v.shape[2] - 1)]
        else:
            v_arg = None

        target = y[:, :, i + 1].copy()
        if data.f.name != "zero":
            if data.f.depends_on_z:
                f_val = data.f(times[i + 1], x_next, y_arg, v_arg)
            else:
                f_val = data.f(times[i + 1], x_next, y_arg)
            f_i = np.where(alive_next, np.asarray(f_val, dtype=float), 0.0) * dt
            target += f_i
        else:
            f_i = 0.0
        if g_fn is not None:
            g_val = g_fn(times[i + 1], x_next, y_arg)             # (K, Q, M)
            g_val = np.where(alive_next[None], g_val, 0.0)
            g_i = np.einsum("kqm,k->qm", g_val, noise.increments[:, i])
            target += g_i
        else:
            g_i = 0.0
        if designs is None:
            design = build_design(ens.paths[:, :, i], ens.alive_at(i), cfg, dom)
        else:
            design = designs.get(i)
            if design is None:
                design = designs.setdefault(
                    i, build_design(ens.paths[:, :, i], ens.alive_at(i), cfg, dom))
        fit = fit_values(design, target)
        y[:, :, i] = fit.fitted
        k = i - lo_node
        dm[:, :, k] = np.where(ens.alive_at(i), target - fit.fitted, 0.0)
        if data.f.name != "zero":
            f_term[:, :, k] = f_i
        if g_fn is not None:
            g_term[:, :, k] = g_i
        stderr_acc = max(stderr_acc, float(np.max(fit.stderr)))
    return dm, f_term, g_term, stderr_acc


def solve_linear(data: CoefficientSpec, ens: PathEnsemble, noise: BackwardNoise,
                 cfg: RegressionConfig, dom: DomainSpec) -> BdsdeSolution:
    """Backward solve for coefficients independent of (y, z)."""
    if data.f.depends_on_y or data.g_tilde.depends_on_y or data.depends_on_z:
        raise ConfigurationError("solve_linear needs coefficients independent of y and z")
    j0 = _check_inputs(data, ens, noise)
    n = ens.grid.n_steps
    y = np.zeros_like(ens.paths)
    y[:, :, n] = _terminal_values(data, ens)
    dm, f_term, g_term, reg_se = _sweep(
        data, ens, noise, cfg, dom, j0, n, y, None, None)
    sol = _package(data, ens, noise, j0, y, dm, f_term, g_term, reg_se)
    return sol


def _package(data, ens, noise, j0, y, dm, f_term, g_term, reg_se,
             z=None, log=None) -> BdsdeSolution:
    n = ens.grid.n_steps
    full = np.zeros((y.shape[0], y.shape[1], n))
    full_f = np.zeros_like(full)
    full_g = np.zeros_like(full)
    full[:, :, j0:] = dm
    full_f[:, :, j0:] = f_term
    full_g[:, :, j0:] = g_term
    if not np.all(np.isfinite(y)):
        raise NumericalFailureError("solver produced non-finite values")
    y0 = y[:, :, j0].mean(axis=1)
    # inner-path dispersion of the final regression target at the start node
    if j0 < n:
        target0 = y[:, :, j0 + 1] + full_f[:, :, j0] + full_g[:, :, j0]
    else:
        target0 = y[:, :, n]
    y0_se = target0.std(axis=1, ddof=1) / np.sqrt(y.shape[1]) if y.shape[1] > 1 \
        else np.zeros(y.shape[0])
    return BdsdeSolution(ens.grid, j0, y, full, full_f, full_g,
                         _terminal_values(data, ens), ens, z=z, y0=y0,
                         y0_stderr=y0_se, iteration_log=list(log or []),
                         regression_stderr=reg_se)


def picard_window_steps(data: CoefficientSpec, dt: float) -> int:
    """Window length (in steps) keeping the Picard map contractive.

    The iteration contracts at rate ~ C * sqrt(window length); windows are
    sized so that (Lipschitz constant) * window <= 1/2.
    """
    lip = data.L_lip_y if data.L_lip_y is not None else 0.0
    lip = max(lip, abs(data.L_mono), np.sqrt(data.l_bound))
    if lip <= 0:
        return 10 ** 9
    return max(1, int(np.floor(0.5 / (lip * dt))))


def solve_lipschitz_picard(data: CoefficientSpec, ens: PathEnsemble,
                           noise: BackwardNoise, cfg: RegressionConfig,
                           dom: DomainSpec, tol: float = 1e-9,
                           max_iter: int = 50,
                           frozen_v: np.ndarray | None = None) -> BdsdeSolution:
    """Picard iteration with frozen coefficients, windowed in time.

    Each window [a, b] repeats the linear solve with f, g evaluated at the
    previous iterate until the sup-over-nodes mean-square change falls below
    tol; the log records the per-iteration differences and their ratios.
    """
    if data.L_lip_y is None:
        raise ConfigurationError("driver declares no Lipschitz constant; "
                                 "use solve_monotone")
    j0 = _check_inputs(data, ens, noise)
    n = ens.grid.n_steps
    y = np.zeros_like(ens.paths)
    y[:, :, n] = _terminal_values(data, ens)
    q_count, m_count = y.shape[0], y.shape[1]
    dm = np.zeros((q_count, m_count, n - j0))
    f_term = np.zeros_like(dm)
    g_term = np.zeros_like(dm)
    log = []
    reg_se = 0.0

    wsteps = picard_window_steps(data, ens.grid.dt)
    b = n
    while b > j0:
        a = max(j0, b - wsteps)
        # first iterate: extend the window's terminal value backwards
        y[:, :, a:b] = y[:, :, b][:, :, None]
        prev = y.copy()
        converged = False
        designs: dict = {}
        for it in range(1, max_iter + 1):
            dm_w, f_w, g_w, se = _sweep(data, ens, noise, cfg, dom, a, b, y,
                                        prev, frozen_v, designs)
            diff = float(np.max(np.mean((y[:, :, a:b] - prev[:, :, a:b]) ** 2,
                                        axis=(0, 1))))
            entry = {"window": (a, b), "iter": it, "mean_square_diff": diff}
            if len(log) and log[-1].get("window") == (a, b) and log[-1]["mean_square_diff"] > 0:
                entry["ratio"] = diff / log[-1]["mean_square_diff"]
            log.append(entry)
            prev = y.copy()
            reg_se = max(reg_se, se)
            if diff < tol:
                converged = True
                break
        if not converged:
            raise NonConvergenceError(
                f"Picard window {(a, b)} did not reach tol={tol} in {max_iter} iterations",
                log)
        dm[:, :, a - j0:b - j0] = dm_w
        f_term[:, :, a - j0:b - j0] = f_w
        g_term[:, :, a - j0:b - j0] = g_w
        b = a
    return _package(data, ens, noise, j0, y, dm, f_term, g_term, reg_se, log=log)


# ---------------------------------------------------------------------------
# Inf-convolution regularization of monotone drivers.


class InfConvolution:
    """Lipschitz regularization  f_n(y) = min_grid { n |y - x| + f(x) - L x } + L y.

    The minimum is taken over the uniform grid {-R, -R+h, ..., R}; two
    distance-transform passes make single evaluations O(1) after O(G) setup.
    The driver's y-profile must not depend on (t, x) (presets used with the
    monotone solver satisfy this).  f must be bounded below on the search
    interval; a minimum attained at a grid edge with outward descent steeper
    than n flags an unbounded-below profile and raises.
    """

    def __init__(self, f_of_y, n: int, L: float, radius: float, step: float):
        if n < 1:
            raise ConfigurationError("regularization index must be >= 1")
        if radius <= 0 or step <= 0 or step > 2 * radius:
            raise ConfigurationError("empty inf-convolution search grid")
        count = int(round(2 * radius / step)) + 1
        self.nodes = -radius + np.arange(count) * step
        self.n = float(n)
        self.L = float(L)
        fy = np.asarray(f_of_y(self.nodes), dtype=float)
        self.f_floor = float(np.min(fy))
        c = fy - self.L * self.nodes
        slope = self.n * step
        if c[-1] - c[-2] < -slope - 1e-12 or c[0] - c[1] < -slope - 1e-12:
            raise ConfigurationError(
                "driver descends steeper than the regularization slope at the "
                "search edge; enlarge the radius or truncate the driver first")
        # prefix-min distance transforms:
        #   left[i]  = min_{g<=i} c_g + slope (i-g) = ramp_i + min_{g<=i}(c_g - ramp_g)
        #   right[i] = min_{g>=i} c_g + slope (g-i) = min_{g>=i}(c_g + ramp_g) - ramp_i
        ramp = slope * np.arange(count)
        self._left = ramp + np.minimum.accumulate(c - ramp)
        self._right = np.minimum.accumulate((c + ramp)[::-1])[::-1] - ramp
        self._step = step
        self._radius = radius

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        pos = (y + self._radius) / self._step
        idx = np.clip(np.floor(pos).astype(int), 0, len(self.nodes) - 1)
        idx_up = np.clip(idx + 1, 0, len(self.nodes) - 1)
        cand_left = self._left[idx] + self.n * np.abs(y - self.nodes[idx])
        cand_right = self._right[idx_up] + self.n * np.abs(self.nodes[idx_up] - y)
        below = y < self.nodes[0]
        above = y > self.nodes[-1]
        out = np.minimum(cand_left, cand_right)
        out = np.where(below, self._right[0] + self.n * (self.nodes[0] - y), out)
        out = np.where(above, self._left[-1] + self.n * (y - self.nodes[-1]), out)
        return out + self.L * y


def inf_convolution(f: Preset, n: int, L_mono: float,
                    radius: float = 8.0, step: float = 1e-3) -> Preset:
    """Regularized driver preset with Lipschitz constant L_mono + n."""
    ic = InfConvolution(lambda y: f(0.0, 0.0, y), n, L_mono, radius, step)
    return Preset(f"{f.name}|infconv:{n}",
                  lambda t, x, y, _ic=ic: _ic(y) + 0.0 * np.asarray(x, float),
                  "driver", lip_y=L_mono + n, mono=L_mono, depends_on_y=True,
                  params={"n": n, "radius": radius, "step": step})


def infconv_certificate(f: Preset, L_mono: float, n_ladder, radius: float,
                        step: float, n_probes: int = 10_000, seed: int = 0) -> dict:
    """Check properties of the regularized family on random grid-node probes.

    (a) Lipschitz constant L + n, (b) floor <= f_n <= f, (c) f_n nondecreasing
    in n, (d) monotonicity with constant L.  All four hold exactly for probes
    on the search grid; the report carries the worst signed violations.
    """
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, 77], dtype=np.uint64)))
    ics = {n: InfConvolution(lambda y: f(0.0, 0.0, y), n, L_mono, radius, step)
           for n in n_ladder}
    nodes = ics[n_ladder[0]].nodes
    y = nodes[gen.integers(0, len(nodes), n_probes)]
    y2 = nodes[gen.integers(0, len(nodes), n_probes)]
    ns = np.asarray(n_ladder)[gen.integers(0, len(n_ladder), n_probes)]
    report = {"lipschitz": -np.inf, "bounds": -np.inf, "nondecreasing": -np.inf,
              "monotone": -np.inf}
    fy = np.asarray(f(0.0, 0.0, y), dtype=float)
    floor = min(ic.f_floor for ic in ics.values())
    for n in n_ladder:
        mask = ns == n
        if not mask.any():
            continue
        fn_y = ics[n](y[mask])
        fn_y2 = ics[n](y2[mask])
        gap = np.abs(y[mask] - y2[mask])
        report["lipschitz"] = max(report["lipschitz"], float(np.max(
            np.abs(fn_y - fn_y2) - (L_mono + n) * gap)))
        report["bounds"] = max(report["bounds"], float(np.max(
            np.maximum(fn_y - fy[mask], floor - fn_y))))
        report["monotone"] = max(report["monotone"], float(np.max(
            (fn_y - fn_y2) * (y[mask] - y2[mask]) - L_mono * gap ** 2)))
    for n_small, n_big in zip(n_ladder[:-1], n_ladder[1:]):
        report["nondecreasing"] = max(report["nondecreasing"], float(np.max(
            ics[n_small](y) - ics[n_big](y))))
    report["n_probes"] = n_probes
    report["pass"] = all(report[k] <= 1e-9 for k in
                         ("lipschitz", "bounds", "nondecreasing", "monotone"))
    return report


def solve_monotone(data: CoefficientSpec, ens: PathEnsemble, noise: BackwardNoise,
                   cfg: RegressionConfig, dom: DomainSpec, n_ladder=(4, 8, 16, 32),
                   tol: float = 1e-9, max_iter: int = 50,
                   ladder_tol: float = 1e-3, search_radius: float | None = None,
                   search_step: float = 1e-4, order_eps: float = 1e-7) -> BdsdeSolution:
    """Monotone-driver solve via truncation plus inf-convolution ladders.

    For each truncation level n the driver max(f, -n) is regularized through
    the inf-convolution ladder and each regularized problem is solved by
    Picard.  The inner (regularization) ladder must be nondecreasing and the
    outer (truncation) ladder nonincreasing, both certified pathwise up to
    order_eps; the last two outer levels must agree within ladder_tol.
    """
    if not data.monotone_only and data.L_lip_y is not None:
        pass  # Lipschitz drivers are legal input; the ladder then converges fast
    n_ladder = sorted(int(v) for v in n_ladder)
    if search_radius is None:
        # bound the solution scale by the data at y = 0, then pad
        y_probe = np.abs(_terminal_values(data, ens)).max()
        f0 = np.abs(np.asarray(data.f(0.0, 0.0, np.zeros(1)), dtype=float)).max()
        search_radius = 4.0 * (y_probe + f0 * ens.grid.horizon + 1.0)

    log = []
    outer_solutions = []
    for n_trunc in n_ladder:
        base = data.f

        def truncated(t, x, y, _b=base, _n=n_trunc):
            return np.maximum(np.asarray(_b(t, x, y), dtype=float), -float(_n))

        trunc_preset = Preset(f"{base.name}|floor:{n_trunc}", truncated, "driver",
                              lip_y=None, mono=data.L_mono, depends_on_y=True)
        inner_solutions = []
        for n_reg in n_ladder:
            reg = inf_convolution(trunc_preset, n_reg, data.L_mono,
                                  radius=search_radius, step=search_step)
            sol = solve_lipschitz_picard(data.with_driver(reg), ens, noise, cfg,
                                         dom, tol=tol, max_iter=max_iter)
            inner_solutions.append(sol)
            log.append({"stage": "infconv", "n_trunc": n_trunc, "n_reg": n_reg,
                        "y0": float(sol.y0.mean())})
        for lo, hi in zip(inner_solutions[:-1], inner_solutions[1:]):
            frac = float(np.mean(lo.y <= hi.y + order_eps))
            log.append({"stage": "infconv_order", "n_trunc": n_trunc,
                        "ordered_fraction": frac})
        outer_solutions.append(inner_solutions[-1])
    for hi, lo in zip(outer_solutions[:-1], outer_solutions[1:]):
        frac = float(np.mean(hi.y >= lo.y - order_eps))
        log.append({"stage": "truncation_order", "ordered_fraction": frac})

    last, prev = outer_solutions[-1], outer_solutions[-2] if len(outer_solutions) > 1 else outer_solutions[-1]
    gap = float(np.max(np.mean((last.y - prev.y) ** 2, axis=(0, 1))))
    log.append({"stage": "ladder_gap", "mean_square_gap": gap})
    if gap > ladder_tol:
        raise NonConvergenceError(
            f"truncation ladder not stabilized: last two levels differ by {gap}", log)
    last.iteration_log = log + last.iteration_log
    return last


def monotone_order_fractions(log) -> dict:
    """Summarize the ladder-ordering certificates from a solve_monotone log."""
    inner = [e["ordered_fraction"] for e in log if e.get("stage") == "infconv_order"]
    outer = [e["ordered_fraction"] for e in log if e.get("stage") == "truncation_order"]
    return {"infconv_min": min(inner) if inner else 1.0,
            "truncation_min": min(outer) if outer else 1.0}


# ---------------------------------------------------------------------------
# Gradient-coupled (Y, Z) fixed point.


def contraction_weights(data: CoefficientSpec, alpha: float | None = None,
                        beta: float | None = None) -> tuple:
    """(alpha, beta, c) with c = beta - 2L - (2L)^2/alpha - l > 0, alpha + m < 1."""
    big_l = max(data.L_lip_y or 0.0, data.L_lip_z, data.L_mono)
    if alpha is None:
        alpha = 0.5 * (1.0 - data.m_grad)
    if not alpha + data.m_grad < 1:
        raise ConfigurationError("need alpha + m_grad < 1")
    if beta is None:
        beta = 2 * big_l + (2 * big_l) ** 2 / alpha + data.l_bound + 1.0
    c = beta - 2 * big_l - (2 * big_l) ** 2 / alpha - data.l_bound
    if not c > 0:
        raise ConfigurationError(f"weights give c = {c} <= 0; increase beta")
    return alpha, beta, c


def solve_with_gradient(data: CoefficientSpec, ens: PathEnsemble,
                        noise: BackwardNoise, cfg: RegressionConfig,
                        dom: DomainSpec, tol: float = 1e-6, max_iter: int = 25,
                        alpha_weight: float | None = None,
                        beta_weight: float | None = None,
                        picard_tol: float = 1e-10) -> BdsdeSolution:
    """Outer fixed point on (Y, Z) for gradient-dependent coefficients.

    Each stage solves the y-only problem with the gradient argument frozen,
    then refreshes Z_i from the regression of (Y_{i+1} + sum_k g_k d_beta^k_i)
    dW_i / dt on X_i.  Stage distances are measured in the discrete weighted
    norm sum_i exp(beta t_i) (c mean|dY_i|^2 + mean|dZ_i|^2) dt; the ratio log
    must stay below 1.
    """
    if not data.depends_on_z:
        raise ConfigurationError("solve_with_gradient needs gradient-dependent data")
    if ens.w_increments is None:
        raise ConfigurationError("path ensemble must retain its Brownian increments")
    if not data.m_grad < 1:
        raise ConfigurationError("m_grad must be < 1")
    alpha, beta, c = contraction_weights(data, alpha_weight, beta_weight)
    j0 = _check_inputs(data, ens, noise)
    n = ens.grid.n_steps
    dt = ens.grid.dt
    tau = (np.arange(n) - j0) * dt
    weights = np.exp(beta * np.clip(tau, 0.0, None))[j0:]

    g_fn = data.g_component_fn() if data.has_noise() else None
    times = ens.grid.times()
    v = np.zeros((ens.n_groups, ens.n_paths, n))
    y_prev = np.zeros_like(ens.paths)
    log = []
    sol = None
    non_contract = 0
    prev_norm = None
    z_designs: dict = {}
    for stage in range(1, max_iter + 1):
        sol = solve_lipschitz_picard(data, ens, noise, cfg, dom, tol=picard_tol,
                                     frozen_v=v)
        v_new = np.zeros_like(v)
        for i in range(j0, n):
            alive_next = ens.alive_at(i + 1)
            target = sol.y[:, :, i + 1]
            if g_fn is not None:
                g_val = g_fn(times[i + 1], ens.paths[:, :, i + 1], sol.y[:, :, i + 1])
                g_val = np.where(alive_next[None], g_val, 0.0)
                target = target + np.einsum("kqm,k->qm", g_val, noise.increments[:, i])
            target = target * ens.w_increments[:, :, i] / dt
            design = z_designs.get(i)
            if design is None:
                design = z_designs.setdefault(
                    i, build_design(ens.paths[:, :, i], ens.alive_at(i), cfg, dom))
            fit = fit_values(design, target)
            v_new[:, :, i] = fit.fitted

        dy2 = np.mean((sol.y[:, :, j0:n] - y_prev[:, :, j0:n]) ** 2, axis=(0, 1))
        dz2 = np.mean((v_new[:, :, j0:] - v[:, :, j0:]) ** 2, axis=(0, 1))
        norm = float(np.sum(weights * (c * dy2 + dz2)) * dt)
        entry = {"stage": stage, "weighted_norm_sq": norm,
                 "alpha": alpha, "beta": beta, "c": c}
        if prev_norm is not None and prev_norm > 0:
            entry["ratio"] = norm / prev_norm
            if entry["ratio"] >= 1.0:
                non_contract += 1
                if non_contract >= 3:
                    raise NumericalFailureError(
                        f"no contraction for 3 stages (alpha={alpha}, beta={beta}, "
                        f"c={c}, m={data.m_grad}); last ratio {entry['ratio']:.3f}")
            else:
                non_contract = 0
        log.append(entry)
        y_prev = sol.y.copy()
        v, prev_norm = v_new, norm
        if norm < tol:
            sol.z = v
            sol.iteration_log = log + sol.iteration_log
            return sol
    raise NonConvergenceError(f"(Y,Z) fixed point did not reach tol={tol}", log)


# ---------------------------------------------------------------------------
# Diagnostics.


def comparison_report(sol: BdsdeSolution, sol_prime: BdsdeSolution,
                      eps_mc: float) -> dict:
    """Pathwise ordering statistics.

    Inputs must be ordered (primed data below unprimed: terminal and driver
    of sol_prime pointwise <= those of sol); reports the fraction of alive
    (path, node) pairs violating Y'_t <= Y_t + eps_mc.
    """
    if sol.grid != sol_prime.grid or sol.ensemble is not sol_prime.ensemble:
        if not np.array_equal(sol.ensemble.paths, sol_prime.ensemble.paths):
            raise ConfigurationError("comparison needs a common ensemble and grid")
    alive = sol.ensemble.alive_matrix()
    viol = (sol_prime.y > sol.y + eps_mc) & alive
    frac = float(viol.sum() / max(alive.sum(), 1))
    return {"violation_fraction": frac, "eps_mc": eps_mc,
            "n_pairs": int(alive.sum()),
            "max_excess": float(np.max(np.where(alive, sol_prime.y - sol.y, -np.inf))),
            "pass": frac <= 0.01}


def apriori_sides(sol: BdsdeSolution, data: CoefficientSpec) -> dict:
    """Monte Carlo estimates of both sides of the a priori bound.

    lhs: E[sup_t |Y|^2 + [M]_T + sup_t |int_0^t f(r, Y_r) dr|^2];
    rhs: E[|xi|^2 + int (|f(t, 0)|^2 + ||g(t, 0)||^2) dt].
    """
    ens = sol.ensemble
    j0 = sol.start_node
    n = ens.grid.n_steps
    dt = ens.grid.dt
    sup_y = np.max(sol.y[:, :, j0:] ** 2, axis=2)
    m_total = sol.bracket()
    f_cum = np.cumsum(sol.driver_term[:, :, j0:], axis=2)
    sup_f = np.max(np.concatenate([np.zeros(f_cum.shape[:2] + (1,)), f_cum], axis=2) ** 2, axis=2)
    lhs_p = sup_y + m_total + sup_f

    times = ens.grid.times()
    zero = np.zeros_like(ens.paths[:, :, 0])
    g_fn = data.g_component_fn() if data.has_noise() else None
    rhs_run = sol.terminal ** 2
    for i in range(j0, n):
        alive_next = ens.alive_at(i + 1)
        if data.f.depends_on_z:
            f0 = data.f(times[i + 1], ens.paths[:, :, i + 1], zero, zero)
        else:
            f0 = data.f(times[i + 1], ens.paths[:, :, i + 1], zero)
        f0 = np.where(alive_next, np.asarray(f0, dtype=float), 0.0)
        term = f0 ** 2
        if g_fn is not None:
            g0 = g_fn(times[i + 1], ens.paths[:, :, i + 1], zero)
            g0 = np.where(alive_next[None], g0, 0.0)
            term = term + np.einsum("kqm,kqm->qm", g0, g0)
        rhs_run = rhs_run + term * dt

    m_paths = lhs_p.size
    lhs = float(lhs_p.mean())
    rhs = float(rhs_run.mean())
    return {"lhs": lhs, "rhs": rhs,
            "lhs_stderr": float(lhs_p.std(ddof=1) / np.sqrt(m_paths)),
            "rhs_stderr": float(rhs_run.std(ddof=1) / np.sqrt(m_paths)),
            "ratio": lhs / rhs if rhs > 0 else np.nan,
            "components": {"sup_y": float(sup_y.mean()),
                           "bracket": float(m_total.mean()),
                           "sup_f": float(sup_f.mean())}}


def residual_check(sol: BdsdeSolution, max_paths: int | None = None) -> dict:
    """Per-path reconstruction defect of the discrete backward equation.

    Y_i must equal xi + suffix(f dt) + suffix(g d_beta) - suffix(dM) exactly;
    the recursion defines dM as the closing term, so the max defect is at
    machine precision unless the solution arrays were tampered with.
    """
    j0 = sol.start_node
    sl = slice(None) if max_paths is None else slice(0, max_paths)
    closing = sol.driver_term[:, sl] + sol.noise_term[:, sl] - sol.mart_increments[:, sl]
    suffix = np.flip(np.cumsum(np.flip(closing, axis=2), axis=2), axis=2)
    recon = sol.terminal[:, sl, None] + suffix
    resid = sol.y[:, sl, j0:-1] - recon[:, :, j0:]
    term_resid = sol.y[:, sl, -1] - sol.terminal[:, sl]
    max_res = max(float(np.max(np.abs(resid))) if resid.size else 0.0,
                  float(np.max(np.abs(term_resid))))
    return {"max_residual": max_res,
            "mean_residual": float(np.mean(np.abs(resid))) if resid.size else 0.0,
            "pass": max_res <= 1e-12}

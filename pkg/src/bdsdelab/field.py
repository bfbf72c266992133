"""Space-time field assembly through the nonlinear Feynman-Kac representation.

For every outer noise realization and every mesh point (s, x) the appropriate
backward solver runs on a fresh ensemble started at (s, x) and the start-node
value is recorded with its inner-path standard error.  Per-point failures are
recorded rather than fatal, subject to a coverage threshold.  A flagged fast
mode pools every start of a time slice into one regression (cheap, biased by
basis expressiveness) and is excluded from acceptance runs.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .coefficients import CoefficientSpec, Preset
from .domains import DomainSpec
from .errors import ConfigurationError, NumericalFailureError
from .generators import GeneratorSpec
from .grids import TimeGrid
from .noise import BackwardNoise, sample_backward_noise
from .paths import PathEnsemble, simulate_paths
from .regression import RegressionConfig
from .solver import (BdsdeSolution, residual_check, solve_linear,
                     solve_lipschitz_picard, solve_monotone, solve_with_gradient)


def pack_stream(outer: int, s_index: int, chunk: int) -> int:
    """Stable stream id for the (outer realization, time slice, chunk) block."""
    return ((outer & 0xFFFF) << 32) | ((s_index & 0xFFFF) << 16) | (chunk & 0xFFFF)


@dataclass
class FieldEstimate:
    s_nodes: np.ndarray           # (n_s,), grid-aligned, nondecreasing
    x_nodes: np.ndarray           # (n_x,)
    values: np.ndarray            # (n_outer, n_s, n_x)
    stderr: np.ndarray            # (n_outer, n_s, n_x)
    domain: DomainSpec
    grid: TimeGrid
    brackets: np.ndarray | None = None   # (n_outer, n_s, n_x, n_steps+1) mean cum. [M]
    max_residual: float = 0.0
    coverage: float = 1.0
    fast_mode: bool = False
    diagnostics: dict = dc_field(default_factory=dict)

    @property
    def n_outer(self) -> int:
        return self.values.shape[0]

    def mean_field(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def interp(self, outer: int = 0):
        """Bilinear interpolant u(t, x); periodic in x on the torus, clamped in
        s, and 0 outside the domain (cemetery convention)."""
        s = self.s_nodes
        x = self.x_nodes
        vals = self.values[outer]
        dom = self.domain
        period = dom.length if dom.variant == "torus" else None

        def u(t, xq):
            t = np.asarray(t, dtype=float)
            xq = np.asarray(xq, dtype=float)
            ts = np.clip(t, s[0], s[-1])
            i = np.clip(np.searchsorted(s, ts, side="right") - 1, 0, len(s) - 2)
            wt = np.clip((ts - s[i]) / (s[i + 1] - s[i]), 0.0, 1.0)
            if period is not None:
                xw = np.mod(xq, period)
                dx = period / len(x)
                j = np.floor(xw / dx).astype(int) % len(x)
                jn = (j + 1) % len(x)
                wx = (xw - j * dx) / dx
            else:
                xw = np.clip(xq, x[0], x[-1])
                j = np.clip(np.searchsorted(x, xw, side="right") - 1, 0, len(x) - 2)
                jn = j + 1
                wx = np.clip((xw - x[j]) / (x[jn] - x[j]), 0.0, 1.0)
            out = ((1 - wt) * (1 - wx) * vals[i, j] + (1 - wt) * wx * vals[i, jn]
                   + wt * (1 - wx) * vals[i + 1, j] + wt * wx * vals[i + 1, jn])
            if dom.killed:
                out = np.where(dom.inside(xq), out, 0.0)
            return np.broadcast_arrays(out, t + 0.0 * xq)[0]

        return u

    def rel_l2_error(self, reference, outer: int | None = None) -> float:
        """Mesh relative L2 distance to reference(s, x) (callable or array)."""
        ref = reference(self.s_nodes[:, None], self.x_nodes[None, :]) \
            if callable(reference) else np.asarray(reference)
        vals = self.mean_field() if outer is None else self.values[outer]
        denom = np.sqrt(np.sum(ref ** 2))
        return float(np.sqrt(np.sum((vals - ref) ** 2)) / max(denom, 1e-300))


def _dispatch_solver(data: CoefficientSpec, ens: PathEnsemble, noise: BackwardNoise,
                     cfg: RegressionConfig, dom: DomainSpec, solver_opts: dict) -> BdsdeSolution:
    if data.depends_on_z:
        return solve_with_gradient(data, ens, noise, cfg, dom,
                                   tol=solver_opts.get("tol", 1e-6))
    if data.monotone_only:
        return solve_monotone(data, ens, noise, cfg, dom,
                              n_ladder=solver_opts.get("n_ladder", (4, 8, 16, 32)),
                              tol=solver_opts.get("picard_tol", 1e-9))
    if data.f.depends_on_y or data.g_tilde.depends_on_y:
        return solve_lipschitz_picard(data, ens, noise, cfg, dom,
                                      tol=solver_opts.get("picard_tol", 1e-9))
    return solve_linear(data, ens, noise, cfg, dom)


def feynman_kac_field(data: CoefficientSpec, gen: GeneratorSpec, dom: DomainSpec,
                      grid: TimeGrid, s_nodes, x_nodes, inner_paths: int,
                      outer_realizations: int, seed: int,
                      cfg: RegressionConfig, retain_brackets: bool = False,
                      x_chunk: int = 16, coverage_threshold: float = 0.98,
                      fast_mode: bool = False, noise_bank: list | None = None,
                      solver_opts: dict | None = None, threads: int = 1) -> FieldEstimate:
    """Per-point backward solves over the (s, x) mesh, one pass per outer
    noise realization.  Identical (seed, configuration) reproduce the field
    bit-exactly regardless of chunking or thread count: the (realization,
    slice) tasks are pure, keyed by counter-based streams, and write into
    disjoint output slices."""
    solver_opts = solver_opts or {}
    s_nodes = np.asarray(s_nodes, dtype=float)
    x_nodes = np.asarray(x_nodes, dtype=float)
    n_modes = data.q.n_modes if data.q is not None else 1
    n = grid.n_steps
    shape = (outer_realizations, len(s_nodes), len(x_nodes))
    values = np.full(shape, np.nan)
    stderr = np.full(shape, np.nan)
    brackets = np.zeros(shape + (n + 1,)) if retain_brackets else None
    store_w = data.depends_on_z
    noises = [noise_bank[r] if noise_bank is not None else
              sample_backward_noise(grid, n_modes, seed, stream_id=r)
              for r in range(outer_realizations)]

    def run_slice(task):
        r, i = task
        noise = noises[r]
        s = s_nodes[i]
        j = grid.node_of(s)
        local_resid = 0.0
        local_failures = 0
        if j == n:
            values[r, i] = np.asarray(data.phi(x_nodes), dtype=float)
            stderr[r, i] = 0.0
            return local_resid, local_failures
        step = len(x_nodes) if fast_mode else x_chunk
        for c0 in range(0, len(x_nodes), step):
            chunk = x_nodes[c0:c0 + step]
            starts = [(s, x) for x in chunk]
            ens = simulate_paths(gen, dom, starts, grid, inner_paths, seed,
                                 stream_id=pack_stream(r, i, 0), store_w=store_w,
                                 substream_offset=c0)
            if fast_mode:
                ens = _pool_groups(ens)
            try:
                sol = _dispatch_solver(data, ens, noise, cfg, dom, solver_opts)
            except NumericalFailureError:
                local_failures += len(chunk)
                continue
            if fast_mode:
                fit_vals = sol.y[0, :, j]
                per_start = fit_vals.reshape(len(chunk), inner_paths)
                values[r, i, c0:c0 + step] = per_start.mean(axis=1)
                stderr[r, i, c0:c0 + step] = per_start.std(axis=1, ddof=1) / np.sqrt(inner_paths)
            else:
                values[r, i, c0:c0 + step] = sol.y0
                stderr[r, i, c0:c0 + step] = sol.y0_stderr
            if retain_brackets:
                cum = np.mean(sol.bracket_path(), axis=1)    # (Q, N+1)
                brackets[r, i, c0:c0 + step] = cum
            local_resid = max(local_resid,
                              residual_check(sol, max_paths=1024)["max_residual"])
        return local_resid, local_failures

    tasks = [(r, i) for r in range(outer_realizations) for i in range(len(s_nodes))]
    if threads <= 1:
        results = [run_slice(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_slice, tasks))
    max_resid = max((res for res, _ in results), default=0.0)
    failures = sum(fail for _, fail in results)

    coverage = 1.0 - failures / (outer_realizations * max(len(s_nodes) * len(x_nodes), 1))
    if coverage < coverage_threshold:
        raise NumericalFailureError(
            f"field coverage {coverage:.3f} below threshold {coverage_threshold}")
    est = FieldEstimate(s_nodes, x_nodes, values, stderr, dom, grid,
                        brackets=brackets, max_residual=max_resid,
                        coverage=coverage, fast_mode=fast_mode)
    return est


def _pool_groups(ens: PathEnsemble) -> PathEnsemble:
    """Merge all start groups into one regression group (fast mode)."""
    q, m, np1 = ens.paths.shape
    return PathEnsemble(ens.grid, ens.starts[:1], ens.start_node[:1],
                        ens.paths.reshape(1, q * m, np1),
                        ens.exit_node.reshape(1, q * m),
                        None if ens.w_increments is None
                        else ens.w_increments.reshape(1, q * m, -1),
                        ens.seed, ens.stream_id)


def nemytskii_driver(data: CoefficientSpec, u_fn) -> CoefficientSpec:
    """Freeze the solution into the coefficients: f_u(z) = f(z, u(z)),
    g_u(z) = g_tilde(z, u(z)); the result is linear data for re-solving."""
    f, g = data.f, data.g_tilde

    def f_u(t, x, y):
        return np.asarray(f(t, x, u_fn(t, x)), dtype=float)

    def g_u(t, x, y):
        return np.asarray(g(t, x, u_fn(t, x)), dtype=float)

    return CoefficientSpec(
        phi=data.phi,
        f=Preset(f.name + "|frozen", f_u, "driver", lip_y=0.0, mono=0.0),
        g_tilde=Preset(g.name + "|frozen", g_u, "noise", lip_y=0.0),
        q=data.q, l_bound=data.l_bound)


def terminal_slice_error(est: FieldEstimate, data: CoefficientSpec) -> float:
    """Max deviation of the s = T slice from the terminal condition."""
    if not np.isclose(est.s_nodes[-1], est.grid.t_end):
        raise ConfigurationError("field mesh does not include the terminal slice")
    phi_vals = np.asarray(data.phi(est.x_nodes), dtype=float)
    return float(np.max(np.abs(est.values[:, -1, :] - phi_vals[None, :])))

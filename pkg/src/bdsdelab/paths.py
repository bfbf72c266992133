"""Forward Markov paths with killing, plus Monte Carlo resolvents.

Paths are Euler-Maruyama (diffusions) or stable-increment (fractional) walks
on the master time grid.  A path started at (s, x) lives on nodes
node_of(s)..n_steps; on bounded domains it is killed at the first node outside
the closure (no bridge correction; the O(sqrt(dt)) boundary bias is accepted
and the audits on killed domains use loose tolerances).  Dead paths freeze and
every registered function evaluates to 0 on them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import rng
from .domains import DomainSpec
from .errors import ConfigurationError, UnsupportedConfigurationError
from .generators import GeneratorSpec, drift_from_divergence_form, sample_symmetric_stable
from .grids import TimeGrid


@dataclass
class PathEnsemble:
    grid: TimeGrid
    starts: np.ndarray            # (Q, 2): rows (s, x)
    start_node: np.ndarray        # (Q,)
    paths: np.ndarray             # (Q, M, n_steps+1)
    exit_node: np.ndarray         # (Q, M); first node outside, n_steps+1 if none
    w_increments: np.ndarray | None   # (Q, M, n_steps) driving Brownian increments
    seed: int
    stream_id: int

    @property
    def n_groups(self) -> int:
        return self.paths.shape[0]

    @property
    def n_paths(self) -> int:
        return self.paths.shape[1]

    def alive_at(self, node: int) -> np.ndarray:
        """(Q, M) mask: started and not yet killed at this node."""
        return (node >= self.start_node[:, None]) & (node < self.exit_node)

    def alive_matrix(self) -> np.ndarray:
        """(Q, M, n_steps+1) mask over all nodes."""
        nodes = np.arange(self.grid.n_steps + 1)
        return ((nodes[None, None, :] >= self.start_node[:, None, None])
                & (nodes[None, None, :] < self.exit_node[:, :, None]))

    def save(self, path_prefix: str) -> None:
        with open(path_prefix + ".bin", "wb") as fh:
            fh.write(np.ascontiguousarray(self.paths, dtype="<f8").tobytes())
        meta = {"t_start": self.grid.t_start, "t_end": self.grid.t_end,
                "n_steps": self.grid.n_steps, "starts": self.starts.tolist(),
                "seed": self.seed, "stream_id": self.stream_id,
                "n_paths": self.n_paths}
        with open(path_prefix + ".json", "w") as fh:
            json.dump(meta, fh, indent=1)


def simulate_paths(gen: GeneratorSpec, dom: DomainSpec, starts, grid: TimeGrid,
                   n_paths: int, seed: int, stream_id: int = 0,
                   store_w: bool = False, substream_offset: int = 0) -> PathEnsemble:
    """Simulate n_paths per start; starts is a sequence of (s, x) pairs.

    Each start owns a counter-based substream, so simulation is reproducible
    per start regardless of batching, and distinct starts can run in parallel.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    if starts.shape[1] != 2:
        raise ConfigurationError("starts must be (s, x) pairs")
    if dom.variant == "box":
        raise UnsupportedConfigurationError("box domains use const-coefficient "
                                            "d>1 simulation, not implemented here")
    for s, x in starts:
        if not dom.inside(np.asarray([x]))[0] and dom.variant != "torus":
            raise ConfigurationError(f"start x={x} outside the domain")
    if gen.variant == "fractional" and store_w:
        raise ConfigurationError("fractional paths carry no Brownian increments")

    q_count, n = len(starts), grid.n_steps
    dt = grid.dt
    times = grid.times()
    start_node = np.array([grid.node_of(s) for s, _ in starts])

    paths = np.empty((q_count, n_paths, n + 1))
    exit_node = np.full((q_count, n_paths), n + 1, dtype=np.int64)
    w_inc = np.zeros((q_count, n_paths, n)) if store_w else None

    for q, ((s, x0), j0) in enumerate(zip(starts, start_node)):
        paths[q, :, : j0 + 1] = dom.wrap(np.asarray(x0))
        if j0 == n:
            continue
        g = rng.philox_generator(seed, stream_id, rng.DOMAIN_PATHS,
                                 substream_offset + q)
        if gen.variant == "fractional":
            jumps = dt ** (1.0 / gen.alpha_stable) * sample_symmetric_stable(
                gen.alpha_stable, g, (n - j0, n_paths))
        else:
            # step-major layout keeps each step's draws contiguous
            dw = np.sqrt(dt) * g.standard_normal((n - j0, n_paths))
            if store_w:
                w_inc[q, :, j0:] = dw.T
        x = paths[q, :, j0].copy()
        dead = np.zeros(n_paths, dtype=bool)
        const_sig = None
        if gen.variant == "const_diffusion":
            const_sig = float(gen.sigma(times[j0], x[:1])[0])
        for i in range(j0, n):
            if gen.variant == "fractional":
                step = jumps[i - j0]
            elif const_sig is not None:
                step = const_sig * dw[i - j0]
            else:
                sig = gen.sigma(times[i], x)
                step = sig * dw[i - j0]
                if gen.variant == "div_form":
                    step = step + drift_from_divergence_form(gen, times[i], x) * dt
            if dom.killed:
                x_new = np.where(dead, x, x + step)
                newly = (~dead) & (~dom.inside(x_new))
                if newly.any():
                    exit_node[q, newly] = i + 1
                    dead |= newly
                x = x_new
            else:
                # torus coordinates are tracked unwrapped (all spatial bases
                # used on the torus are periodic; interpolation wraps on read)
                x = x + step
            paths[q, :, i + 1] = x
    return PathEnsemble(grid, starts, start_node, paths, exit_node, w_inc, seed, stream_id)


def path_time_integral(ens: PathEnsemble, values: np.ndarray, beta: float = 0.0) -> np.ndarray:
    """Per-path trapezoid of exp(-beta * tau) * values over the alive window.

    tau is path time (node time minus start time); integration stops at the
    last alive node (grid-detected killing) or the final node.
    values: (Q, M, n_steps+1), already 0 on dead nodes by convention.
    """
    n = ens.grid.n_steps
    dt = ens.grid.dt
    nodes = np.arange(n + 1)
    tau = (nodes[None, :] - ens.start_node[:, None]) * dt          # (Q, n+1)
    damp = np.exp(-beta * np.clip(tau, 0.0, None))[:, None, :]
    integ = values * damp
    alive = ens.alive_matrix()
    integ = np.where(alive, integ, 0.0)
    # trapezoid weights: dt on interior alive nodes, dt/2 at window ends
    w = alive.astype(float)
    w_trap = np.zeros_like(w)
    w_trap[:, :, :-1] += 0.5 * w[:, :, :-1] * w[:, :, 1:]
    w_trap[:, :, 1:] += 0.5 * w[:, :, :-1] * w[:, :, 1:]
    return dt * np.sum(integ * w_trap, axis=2)


def resolvent_mc(gen: GeneratorSpec, dom: DomainSpec, v, beta: float, starts,
                 grid: TimeGrid, n_paths: int, seed: int, stream_id: int = 0,
                 ens: PathEnsemble | None = None):
    """Monte Carlo time-space resolvent applied to v at the given starts.

    Estimates E_z int_0^{zeta ^ (T - s)} exp(-beta t) v(time, X_t) dt with
    trapezoidal quadrature on the path grid.  v is a callable v(t, x) acting
    elementwise.  Returns (estimates, standard_errors) aligned with starts.
    """
    if beta < 0:
        raise ConfigurationError("resolvent parameter must be nonnegative")
    if ens is None:
        ens = simulate_paths(gen, dom, starts, grid, n_paths, seed, stream_id)
    times = ens.grid.times()
    vals = v(times[None, None, :], ens.paths)
    vals = np.where(ens.alive_matrix(), vals, 0.0)
    per_path = path_time_integral(ens, vals, beta)                  # (Q, M)
    est = per_path.mean(axis=1)
    se = per_path.std(axis=1, ddof=1) / np.sqrt(ens.n_paths)
    return est, se


def dual_resolvent_one(dom: DomainSpec, beta: float, s: float) -> float:
    """Dual time-space resolvent applied to 1; conservative spatial part only.

    The co-process runs time backwards with lifetime s, so the value is
    (1 - exp(-beta s)) / beta, evaluated through expm1 (the small-beta branch
    is the series s (1 - beta s / 2 + ...), recovered by expm1 automatically).
    For killed-boundary domains no closed form is implemented.
    """
    if dom.killed:
        raise UnsupportedConfigurationError(
            "dual resolvent closed form requires a conservative spatial generator")
    if not 0 < s or s < 0:
        raise ConfigurationError("s must be positive")
    if beta == 0.0:
        return float(s)
    return float(-np.expm1(-beta * s) / beta)


def killing_density(beta: float, s) -> np.ndarray:
    """Density of the finite-beta killing measure wrt dt x m on the
    conservative time-space state space: beta * exp(-beta s)."""
    return beta * np.exp(-beta * np.asarray(s, dtype=float))

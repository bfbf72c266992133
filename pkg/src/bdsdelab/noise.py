"""Backward driving noise and trace-class covariance structure.

Samples the family of independent Wiener increments that drives the backward
stochastic integrals, evaluates those integrals with the right-endpoint rule,
and supports exact time reversal: the discrete backward integral equals the
negated forward (left-endpoint) integral against the reversed increments at
every grid node, with no quadrature error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .domains import DomainSpec
from .errors import ConfigurationError
from .grids import TimeGrid


@dataclass(frozen=True)
class BackwardNoise:
    """Increments d_beta[k, i] ~ N(0, dt) of mode k over [t_i, t_{i+1}].

    Fixed (seed, stream_id, grid, n_modes) reproduce the matrix bit-exactly;
    modes live in disjoint counter blocks and are independent.
    """

    grid: TimeGrid
    n_modes: int
    increments: np.ndarray          # shape (n_modes, n_steps)
    seed: int
    stream_id: int
    is_reversed: bool = False

    def levels(self) -> np.ndarray:
        """Node values beta[k, i] with beta[:, 0] = 0, shape (n_modes, n_steps+1)."""
        out = np.zeros((self.n_modes, self.grid.n_steps + 1))
        np.cumsum(self.increments, axis=1, out=out[:, 1:])
        return out

    def window(self, from_node: int) -> np.ndarray:
        """Increment view for intervals i >= from_node (the offset process)."""
        return self.increments[:, from_node:]

    def to_bytes(self) -> bytes:
        """Mode-major float64 little-endian column layout, for replay."""
        return np.ascontiguousarray(self.increments, dtype="<f8").tobytes()

    def meta(self) -> dict:
        return {
            "t_start": self.grid.t_start,
            "t_end": self.grid.t_end,
            "n_steps": self.grid.n_steps,
            "n_modes": self.n_modes,
            "seed": self.seed,
            "stream_id": self.stream_id,
            "is_reversed": self.is_reversed,
        }

    def save(self, path_prefix: str) -> None:
        with open(path_prefix + ".bin", "wb") as fh:
            fh.write(self.to_bytes())
        with open(path_prefix + ".json", "w") as fh:
            json.dump(self.meta(), fh, indent=1)

    @staticmethod
    def load(path_prefix: str) -> "BackwardNoise":
        with open(path_prefix + ".json") as fh:
            meta = json.load(fh)
        raw = np.fromfile(path_prefix + ".bin", dtype="<f8")
        grid = TimeGrid(meta["t_start"], meta["t_end"], meta["n_steps"])
        inc = raw.reshape(meta["n_modes"], meta["n_steps"])
        return BackwardNoise(grid, meta["n_modes"], inc, meta["seed"],
                             meta["stream_id"], meta["is_reversed"])


def sample_backward_noise(grid: TimeGrid, n_modes: int, seed: int, stream_id: int = 0) -> BackwardNoise:
    if n_modes < 1:
        raise ConfigurationError(f"need at least one mode, got {n_modes}")
    sqdt = np.sqrt(grid.dt)
    inc = np.empty((n_modes, grid.n_steps))
    for k in range(n_modes):
        inc[k] = sqdt * rng.normals(seed, stream_id, rng.DOMAIN_NOISE, k, grid.n_steps)
    inc.setflags(write=False)
    return BackwardNoise(grid, n_modes, inc, seed, stream_id)


def backward_ito(integrand: np.ndarray, noise: BackwardNoise, from_node: int = 0) -> float | np.ndarray:
    """Right-endpoint sum  sum_k sum_{i>=from_node} eta[k, i+1] * d_beta[k, i].

    integrand: node values, shape (n_modes, n_steps+1) or (n_steps+1,) for a
    single mode; extra leading axes broadcast (batched paths ride along).
    """
    eta = np.asarray(integrand, dtype=float)
    if eta.ndim == 1:
        eta = eta[None, :]
    if eta.shape[-2] != noise.n_modes:
        raise ConfigurationError(
            f"integrand has {eta.shape[-2]} modes, noise has {noise.n_modes}")
    if eta.shape[-1] != noise.grid.n_steps + 1:
        raise ConfigurationError("integrand must be given at every grid node")
    j = int(from_node)
    out = np.einsum("...ki,ki->...", eta[..., j + 1:], noise.increments[:, j:])
    return float(out) if out.ndim == 0 else out


def forward_ito(integrand: np.ndarray, increments: np.ndarray, upto_node: int | None = None) -> float | np.ndarray:
    """Left-endpoint sum  sum_k sum_{i<upto} eta[k, i] * d[k, i]  (Ito rule)."""
    eta = np.asarray(integrand, dtype=float)
    if eta.ndim == 1:
        eta = eta[None, :]
    n = increments.shape[1] if upto_node is None else int(upto_node)
    out = np.einsum("...ki,ki->...", eta[..., :n], increments[:, :n])
    return float(out) if out.ndim == 0 else out


def reverse_noise(noise: BackwardNoise) -> BackwardNoise:
    """Increments of beta_hat_t = beta_{T-t} - beta_T on the reversed grid.

    d_beta_hat[:, l] = -d_beta[:, n-1-l]; applying twice restores the original
    matrix bit-exactly.
    """
    rev = -noise.increments[:, ::-1]
    rev.setflags(write=False)
    return replace(noise, grid=noise.grid.reversed(), increments=rev,
                   is_reversed=not noise.is_reversed)


# ---------------------------------------------------------------------------
# Trace-class covariance: mode weights lambda_k and basis functions e_k.


def _make_basis_fn(basis_id: str, dom: DomainSpec):
    kind, _, arg = basis_id.partition(":")
    if kind == "const":
        c = 1.0 / np.sqrt(dom.volume)
        return lambda x: np.full_like(np.asarray(x, dtype=float), c)
    j = int(arg) if arg else 1
    if dom.variant == "torus":
        w = 2.0 * np.pi * j / dom.length
        amp = np.sqrt(2.0 / dom.length)
        if kind == "sin":
            return lambda x: amp * np.sin(w * x)
        if kind == "cos":
            return lambda x: amp * np.cos(w * x)
    elif dom.variant == "interval":
        ln = dom.b - dom.a
        amp = np.sqrt(2.0 / ln)
        if kind == "sin":
            return lambda x: amp * np.sin(np.pi * j * (x - dom.a) / ln)
    raise ConfigurationError(f"unknown basis_id {basis_id!r} for domain {dom.variant!r}")


@dataclass(frozen=True)
class QSpec:
    """Nonnegative weights lambda_k with orthonormal basis functions e_k.

    The component functions used by the solvers are f_k = sqrt(lambda_k) e_k.
    """

    lambdas: tuple
    basis_ids: tuple
    domain: DomainSpec

    def __post_init__(self):
        if len(self.lambdas) != len(self.basis_ids):
            raise ConfigurationError("lambdas and basis_ids must have equal length")
        if any(lam < 0 for lam in self.lambdas):
            raise ConfigurationError("covariance weights must be nonnegative")

    @property
    def n_modes(self) -> int:
        return len(self.lambdas)

    @property
    def trace(self) -> float:
        return float(sum(self.lambdas))

    def basis_fns(self):
        return [_make_basis_fn(b, self.domain) for b in self.basis_ids]

    def eval_basis(self, x: np.ndarray) -> np.ndarray:
        """e_k(x) stacked on a leading mode axis."""
        return np.stack([fn(np.asarray(x, dtype=float)) for fn in self.basis_fns()])

    def eval_components(self, x: np.ndarray) -> np.ndarray:
        """f_k(x) = sqrt(lambda_k) e_k(x)."""
        lam = np.sqrt(np.asarray(self.lambdas, dtype=float))
        return lam[(...,) + (None,) * np.ndim(x)] * self.eval_basis(x)

    def sup_weighted_square(self, n_mesh: int = 512) -> float:
        """sup over a mesh of sum_k lambda_k |e_k(x)|^2 (trace-type statistic)."""
        x = self.domain.mesh(n_mesh)
        ek = self.eval_basis(x)
        return float(np.max(np.tensordot(self.lambdas, ek * ek, axes=1)))


def validate_qspec(q: QSpec, mesh: np.ndarray, ortho_tol: float = 1e-8) -> dict:
    """Trace, sup-statistic and orthonormality residuals against thresholds."""
    mesh = np.asarray(mesh, dtype=float)
    if mesh.size == 0:
        raise ConfigurationError("validation mesh is empty")
    ek = q.eval_basis(mesh)                       # (K, n)
    w = q.domain.quad_weights(mesh)
    gram = np.einsum("kn,ln,n->kl", ek, ek, w)
    ortho_residual = float(np.max(np.abs(gram - np.eye(q.n_modes))))
    sup_stat = float(np.max(np.tensordot(q.lambdas, ek * ek, axes=1)))
    report = {
        "trace": q.trace,
        "sup_weighted_square": sup_stat,
        "orthonormality_residual": ortho_residual,
        "orthonormality_pass": ortho_residual < ortho_tol,
        "trace_finite": np.isfinite(q.trace),
    }
    report["pass"] = bool(report["orthonormality_pass"] and report["trace_finite"]
                          and np.isfinite(sup_stat))
    return report


def g_components(g_tilde, q: QSpec, lip_constant: float | None = None, n_mesh: int = 512):
    """Component family g_k(t, x, y) = g_tilde(t, x, y) * sqrt(lambda_k) e_k(x).

    Returns (component_fn, l_bound) where component_fn(t, x, y) stacks the
    modes on a leading axis and l_bound = lip^2 * sup_x sum_k lambda_k e_k(x)^2
    is the induced Lipschitz budget (None when no constant is declared).
    """
    sq = np.sqrt(np.asarray(q.lambdas, dtype=float))
    fns = q.basis_fns()

    def component_fn(t, x, y, z=None):
        x = np.asarray(x, dtype=float)
        base = g_tilde(t, x, y) if z is None else g_tilde(t, x, y, z)
        base = np.asarray(base, dtype=float)
        return np.stack([s * fn(x) * base for s, fn in zip(sq, fns)])

    l_bound = None
    if lip_constant is not None:
        l_bound = lip_constant ** 2 * q.sup_weighted_square(n_mesh)
    return component_fn, l_bound

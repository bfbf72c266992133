"""Least-squares conditional expectation operator.

Realizes E[ . | current state] by regressing path values on basis functions of
the state, batched over independent start groups.  With the driving noise
frozen, noise-measurable terms are constants across the state ensemble and
pass through the projection unchanged, which is exactly the conditioning the
backward solvers need.

Design choices that matter elsewhere:
  * an explicit constant column is always present and never penalized, and the
    remaining columns are centered against it, so the fit preserves ensemble
    means exactly (linear solves then telescope to plain Monte Carlo means);
  * degenerate columns (no cross-path variation, e.g. at a common start node)
    are dropped, so the fit falls back to the ensemble mean without blowing up;
  * dead paths are excluded from the design and receive fitted value 0;
  * the design factorization depends only on the states, so iterative solvers
    build it once per node and refit new target values cheaply.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domains import DomainSpec
from .errors import ConfigurationError


@dataclass(frozen=True)
class RegressionConfig:
    basis: str = "polynomial"      # piecewise_constant | piecewise_linear | polynomial | fourier
    order: int = 3                 # bins / degree / modes
    ridge: float = 1e-10
    min_alive_paths: int = 16

    def __post_init__(self):
        if self.order < 1:
            raise ConfigurationError("basis size must be positive")
        if self.ridge < 0:
            raise ConfigurationError("ridge must be nonnegative")
        if self.basis not in ("piecewise_constant", "piecewise_linear", "polynomial", "fourier"):
            raise ConfigurationError(f"unknown regression basis {self.basis!r}")


def _raw_features(x: np.ndarray, cfg: RegressionConfig, dom: DomainSpec,
                  lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Non-constant feature columns, shape x.shape + (p,)."""
    if cfg.basis == "polynomial":
        span = np.where(hi > lo, hi - lo, 1.0)
        u = (x - lo[..., None]) / span[..., None] * 2.0 - 1.0
        cols = np.empty((cfg.order,) + x.shape)
        cols[0] = u
        for d in range(1, cfg.order):
            np.multiply(cols[d - 1], u, out=cols[d])
        return np.moveaxis(cols, 0, -1)
    if cfg.basis == "fourier":
        if dom.variant != "torus":
            raise ConfigurationError("fourier regression basis needs a torus domain")
        w = 2.0 * np.pi / dom.length
        cols = np.empty((2 * cfg.order,) + x.shape)
        c1 = np.cos(w * x)
        s1 = np.sin(w * x)
        cols[0], cols[1] = c1, s1
        for j in range(1, cfg.order):
            # angle-addition recurrence avoids re-evaluating trig per mode
            np.subtract(cols[2 * j - 2] * c1, cols[2 * j - 1] * s1, out=cols[2 * j])
            np.add(cols[2 * j - 1] * c1, cols[2 * j - 2] * s1, out=cols[2 * j + 1])
        return np.moveaxis(cols, 0, -1)
    if cfg.basis == "piecewise_linear":
        span = np.where(hi > lo, hi - lo, 1.0)
        u = np.clip((x - lo[..., None]) / span[..., None], 0.0, 1.0) * cfg.order
        knots = np.arange(1, cfg.order + 1, dtype=float)
        return np.clip(1.0 - np.abs(u[..., None] - knots), 0.0, None)
    # piecewise_constant: indicator columns for bins 1..order (bin 0 folds into
    # the constant column)
    span = np.where(hi > lo, hi - lo, 1.0)
    u = np.clip((x - lo[..., None]) / span[..., None], 0.0, 1.0 - 1e-12)
    idx = np.floor(u * cfg.order).astype(int)
    cols = [(idx == b).astype(float) for b in range(1, cfg.order)]
    if not cols:
        return np.zeros(x.shape + (0,))
    return np.stack(cols, axis=-1)


@dataclass
class NodeDesign:
    """State-dependent part of a regression: centered columns + factorization."""

    cfg: RegressionConfig
    dom: DomainSpec
    alive: np.ndarray         # (Q, M)
    w: np.ndarray             # float mask
    n_alive: np.ndarray       # (Q,)
    centered: np.ndarray      # (Q, M, p), zeroed on degenerate columns
    col_mean: np.ndarray
    col_scale: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    gram_inv: np.ndarray      # (Q, p, p)


def build_design(x: np.ndarray, alive: np.ndarray, cfg: RegressionConfig,
                 dom: DomainSpec) -> NodeDesign:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    alive = np.atleast_2d(np.asarray(alive, dtype=bool))
    w = alive.astype(float)
    n_alive = w.sum(axis=1)
    safe_n = np.maximum(n_alive, 1.0)

    lo = np.where(alive, x, np.inf).min(axis=1)
    hi = np.where(alive, x, -np.inf).max(axis=1)
    lo = np.where(np.isfinite(lo), lo, 0.0)
    hi = np.where(np.isfinite(hi), hi, 0.0)

    raw = _raw_features(x, cfg, dom, lo, hi)                      # (Q, M, p)
    p = raw.shape[-1]
    all_alive = bool(alive.all())
    if not all_alive:
        raw = raw * w[:, :, None]
    col_mean = np.einsum("qmp,qm->qp", raw, w) / safe_n[:, None]
    centered = np.ascontiguousarray(raw)
    centered -= col_mean[:, None, :]
    if not all_alive:
        centered *= w[:, :, None]
    col_var = np.einsum("qmp,qmp->qp", centered, centered) / safe_n[:, None]
    col_scale = np.sqrt(col_var)
    degenerate = col_scale < 1e-8
    col_scale = np.where(degenerate, 1.0, col_scale)
    centered /= col_scale[:, None, :]
    if degenerate.any():
        centered = np.where(degenerate[:, None, :], 0.0, centered)

    if p > 0:
        # centered columns are already 0 on dead paths, so the gram is a
        # batched BLAS product
        gram = np.matmul(centered.transpose(0, 2, 1), centered)
        gram += (cfg.ridge * safe_n)[:, None, None] * np.eye(p)[None, :, :]
        # dropped (degenerate) columns get a unit diagonal so the gram stays
        # invertible; their right-hand sides vanish and the coefficients are 0
        diag = np.arange(p)
        gram[:, diag, diag] += degenerate.astype(float)
        gram_inv = np.linalg.inv(gram)
    else:
        gram_inv = np.zeros((x.shape[0], 0, 0))
    return NodeDesign(cfg, dom, alive, w, n_alive, centered, col_mean,
                      col_scale, lo, hi, gram_inv)


@dataclass
class RegressionFit:
    """Fitted conditional-expectation function for each start group."""

    design: NodeDesign
    coef: np.ndarray          # (Q, 1+p): constant coefficient first
    fitted: np.ndarray        # (Q, M); 0 on dead paths
    residuals: np.ndarray     # (Q, M); 0 on dead paths
    stderr: np.ndarray        # (Q,) standard error of the fitted group mean
    fallback_mean: np.ndarray  # (Q,) bool: too few alive paths, used plain mean

    @property
    def n_alive(self) -> np.ndarray:
        return self.design.n_alive.astype(int)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the fitted functions at new states, shape (Q, ...)."""
        d = self.design
        x = np.asarray(x, dtype=float)
        raw = _raw_features(x, d.cfg, d.dom, d.lo, d.hi)
        centered = (raw - d.col_mean[:, None, :]) / d.col_scale[:, None, :]
        return self.coef[:, 0][:, None] + np.einsum("qmp,qp->qm", centered, self.coef[:, 1:])


def fit_values(design: NodeDesign, values: np.ndarray) -> RegressionFit:
    """Project new target values onto a prebuilt design."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    d = design
    safe_n = np.maximum(d.n_alive, 1.0)
    p = d.centered.shape[-1]
    mean_val = np.einsum("qm,qm->q", values, d.w) / safe_n

    coef = np.zeros((values.shape[0], 1 + p))
    coef[:, 0] = mean_val
    if p > 0:
        vm = (values - mean_val[:, None]) * d.w
        rhs = np.matmul(d.centered.transpose(0, 2, 1), vm[:, :, None])[..., 0]
        coef[:, 1:] = np.einsum("qpr,qr->qp", d.gram_inv, rhs)
        fitted = coef[:, 0][:, None] + np.matmul(d.centered, coef[:, 1:, None])[..., 0]
    else:
        fitted = np.broadcast_to(coef[:, 0][:, None], values.shape).copy()

    fallback = d.n_alive < d.cfg.min_alive_paths
    if fallback.any():
        fitted = np.where(fallback[:, None], mean_val[:, None], fitted)
        fb_coef = np.zeros_like(coef)
        fb_coef[:, 0] = mean_val
        coef = np.where(fallback[:, None], fb_coef, coef)
    fitted = np.where(d.alive, fitted, 0.0)

    residuals = np.where(d.alive, values - fitted, 0.0)
    stderr = np.sqrt(np.einsum("qm,qm->q", (values - mean_val[:, None]) ** 2, d.w)) / safe_n
    return RegressionFit(d, coef, fitted, residuals, stderr,
                         fallback & (d.n_alive > 0))


def regress_conditional(values: np.ndarray, x: np.ndarray, alive: np.ndarray,
                        cfg: RegressionConfig, dom: DomainSpec) -> RegressionFit:
    """Fit values ~ basis(x) over alive paths, independently per start group.

    values, x, alive: (Q, M).  Dead paths receive fitted value 0 and residual 0.
    Groups with fewer than cfg.min_alive_paths alive paths (but at least one)
    fall back to the alive-ensemble mean; fully dead groups return the zero
    function with a flagged diagnostic.
    """
    return fit_values(build_design(x, alive, cfg, dom), values)

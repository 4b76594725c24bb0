"""Positivity-constrained total-variation reconstruction by proximal gradient.

Objective: ``F(P) = 1/2 ||H P - data||^2 + reg * TV(P)`` over ``P >= 0``.
The Lipschitz constant ``L_f`` is the largest eigenvalue of ``H* H`` (the
squared spectral norm of ``H``) and the step is ``step_factor / L_f``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .errors import ConfigurationError, DivergenceError

log = logging.getLogger(__name__)

CACHE_ENV = "PAVISCO_CACHE_DIR"


# total variation ---------------------------------------------------------------
def grad(u: np.ndarray) -> np.ndarray:
    """Forward differences per axis, zero across the last slice (replicate boundary)."""
    out = np.zeros((u.ndim,) + u.shape)
    for a in range(u.ndim):
        sl = [slice(None)] * u.ndim
        sl[a] = slice(0, -1)
        out[a][tuple(sl)] = np.diff(u, axis=a)
    return out


def div(p: np.ndarray) -> np.ndarray:
    """Negative transpose of :func:`grad`."""
    out = np.zeros(p.shape[1:])
    nd = out.ndim
    for a in range(nd):
        pa = p[a]
        first = [slice(None)] * nd
        first[a] = slice(0, 1)
        mid = [slice(None)] * nd
        mid[a] = slice(1, -1)
        last = [slice(None)] * nd
        last[a] = slice(-1, None)
        prev_mid = [slice(None)] * nd
        prev_mid[a] = slice(0, -2)
        prev_last = [slice(None)] * nd
        prev_last[a] = slice(-2, -1)
        out[tuple(first)] += pa[tuple(first)]
        out[tuple(mid)] += pa[tuple(mid)] - pa[tuple(prev_mid)]
        out[tuple(last)] -= pa[tuple(prev_last)]
    return out


def total_variation(u: np.ndarray) -> float:
    g = grad(u)
    return float(np.sum(np.sqrt(np.sum(g**2, axis=0))))


def tv_prox(y: np.ndarray, weight: float, *, max_iter: int = 100, tol: float = 1e-6,
            nonneg: bool = True) -> np.ndarray:
    """``argmin_{P >= 0} weight * TV(P) + 1/2 ||P - y||^2`` by the accelerated dual projection.

    The dual variable lives on the unit ball of the isotropic gradient; each
    primal estimate is projected onto the positive orthant.  Iteration stops
    when the primal estimate changes by less than ``tol`` relative to ``y``.
    """
    y = np.asarray(y, dtype=float)
    proj = (lambda u: np.maximum(u, 0.0)) if nonneg else (lambda u: u)
    if weight <= 0:
        return proj(y)
    step = 1.0 / (4 * y.ndim * weight)
    p = np.zeros((y.ndim,) + y.shape)
    r = p.copy()
    t = 1.0
    x_old = proj(y)
    scale = max(float(np.linalg.norm(y)), 1e-300)
    for _ in range(max_iter):
        x = proj(y + weight * div(r))
        q = r + step * grad(x)
        mag = np.sqrt(np.sum(q**2, axis=0))
        p_new = q / np.maximum(1.0, mag)
        t_new = (1 + np.sqrt(1 + 4 * t * t)) / 2
        r = p_new + (t - 1) / t_new * (p_new - p)
        p, t = p_new, t_new
        x = proj(y + weight * div(p))
        if np.linalg.norm(x - x_old) <= tol * scale:
            return x
        x_old = x
    return proj(y + weight * div(p))


# operators --------------------------------------------------------------------
class LinearMap(Protocol):
    def forward(self, p: np.ndarray) -> np.ndarray: ...
    def adjoint(self, q: np.ndarray) -> np.ndarray: ...


@dataclass
class PatOperator:
    """Initial pressure to detector data on one model, with its exact transpose."""

    model: object
    adjoint_path: str = "analytic"

    def forward(self, p: np.ndarray) -> np.ndarray:
        from .forward import run_forward
        return run_forward(p, self.model).data

    def adjoint(self, q: np.ndarray) -> np.ndarray:
        if self.adjoint_path == "discrete":
            from .discrete_adjoint import run_discrete_adjoint
            return run_discrete_adjoint(q, self.model)
        from .adjoint import run_adjoint
        return run_adjoint(q, self.model, exact=True)

    @property
    def shape(self):
        return self.model.grid.shape


@dataclass
class MatrixOperator:
    """Dense matrix acting on flattened images; used for checks and small problems."""

    matrix: np.ndarray
    shape: tuple

    def forward(self, p):
        return self.matrix @ np.ravel(p)

    def adjoint(self, q):
        return (self.matrix.T @ np.ravel(q)).reshape(self.shape)


def gradient_f(op: LinearMap, p: np.ndarray, data: np.ndarray) -> np.ndarray:
    """``H* (H p - data)``."""
    data = np.asarray(data, dtype=float)
    hp = op.forward(p)
    if hp.shape != data.shape:
        raise ConfigurationError(f"data shape {data.shape} does not match operator output {hp.shape}")
    return op.adjoint(hp - data)


def objective(residual: np.ndarray, p: np.ndarray, reg: float) -> float:
    return 0.5 * float(np.vdot(residual, residual)) + (reg * total_variation(p) if reg else 0.0)


# Lipschitz constant ------------------------------------------------------------
@dataclass
class PowerResult:
    value: float
    iterations: int
    converged: bool
    history: list[float]


def power_iteration(normal: Callable[[np.ndarray], np.ndarray], shape, *, max_iter: int = 50,
                    tol: float = 1e-3, seed: int = 0) -> PowerResult:
    """Largest eigenvalue of a symmetric positive semidefinite operator.

    Passing ``x -> H*(H x)`` yields ``L_f = ||H||^2``.  Converged when two
    successive estimates differ by less than ``tol`` relative.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    x /= np.linalg.norm(x)
    hist: list[float] = []
    for k in range(1, max_iter + 1):
        y = normal(x)
        lam = float(np.vdot(x, y))
        hist.append(lam)
        ny = np.linalg.norm(y)
        if ny == 0:
            return PowerResult(0.0, k, True, hist)
        x = y / ny
        if k > 1 and abs(hist[-1] - hist[-2]) <= tol * abs(hist[-1]):
            return PowerResult(lam, k, True, hist)
    warnings.warn(f"power iteration not converged after {max_iter} iterations; "
                  f"returning best estimate {max(hist):.6g}", RuntimeWarning, stacklevel=2)
    return PowerResult(max(hist), max_iter, False, hist)


def cache_dir() -> Path | None:
    d = os.environ.get(CACHE_ENV)
    return Path(d) if d else None


def config_key(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]


def cached_lipschitz(key: str, compute: Callable[[], float], directory: Path | None = None) -> float:
    """Look up ``L_f`` under ``key`` in the cache directory, computing and storing on a miss."""
    directory = cache_dir() if directory is None else directory
    if directory is None:
        return compute()
    path = Path(directory) / f"lipschitz-{key}.json"
    if path.exists():
        return float(json.loads(path.read_text())["value"])
    value = compute()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"key": key, "value": value}))
    return value


# ISTA ----------------------------------------------------------------------------
@dataclass
class ReconConfig:
    reg: float = 1e-2
    step_factor: float = 1.8
    tol: float = 1e-4
    max_iter: int = 200
    prox_iter: int = 100
    prox_tol: float = 1e-6
    power_iter: int = 50
    power_tol: float = 1e-3
    divergence_patience: int = 5
    seed: int = 0

    def validate(self, lipschitz: float | None = None) -> None:
        if self.reg < 0:
            raise ConfigurationError("regularisation weight must be non-negative")
        if self.tol <= 0:
            raise ConfigurationError("stopping tolerance must be positive")
        if not 0 < self.step_factor < 2:
            raise ConfigurationError("step factor times L_f must lie in (0, 2)")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class IterateHistory:
    k: list[int] = field(default_factory=list)
    F: list[float] = field(default_factory=list)
    RE: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def append(self, k, f, re, s):
        self.k.append(k)
        self.F.append(f)
        self.RE.append(re)
        self.seconds.append(s)

    def __len__(self):
        return len(self.k)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "F", "RE", "seconds"])
        for row in zip(self.k, self.F, self.RE, self.seconds):
            w.writerow([row[0], f"{row[1]:.10e}", "" if np.isnan(row[2]) else f"{row[2]:.6f}", f"{row[3]:.3f}"])
        return buf.getvalue()


@dataclass
class ReconResult:
    image: np.ndarray
    history: IterateHistory
    reason: str
    lipschitz: float


def relative_error(p: np.ndarray, phantom: np.ndarray) -> float:
    ref = float(np.linalg.norm(phantom))
    if ref == 0:
        raise ValueError("relative error is undefined for a zero phantom")
    return 100.0 * float(np.linalg.norm(p - phantom)) / ref


def metrics(p: np.ndarray, phantom: np.ndarray, op: LinearMap | None = None,
            data: np.ndarray | None = None, reg: float = 0.0) -> tuple[float, float | None]:
    """``(RE %, F)``; ``F`` needs the operator and data."""
    re = relative_error(p, phantom)
    f = None
    if op is not None and data is not None:
        f = objective(op.forward(p) - data, p, reg)
    return re, f


def run_ista(data: np.ndarray, op: LinearMap, config: ReconConfig | None = None, *,
             lipschitz: float | None = None, phantom: np.ndarray | None = None,
             shape=None, callback: Callable[[int, np.ndarray], None] | None = None) -> ReconResult:
    """Proximal gradient iterations from ``P = 0``.

    Stops when ``0 <= 1 - F_k / F_{k-1} < tol`` (``k > 1``) or after
    ``max_iter``.  Each objective increase is counted; ``divergence_patience``
    consecutive increases raise :class:`DivergenceError`.
    """
    cfg = config or ReconConfig()
    cfg.validate()
    data = np.asarray(data, dtype=float)
    shape = shape or getattr(op, "shape")
    if lipschitz is None:
        lipschitz = power_iteration(lambda x: op.adjoint(op.forward(x)), shape,
                                    max_iter=cfg.power_iter, tol=cfg.power_tol, seed=cfg.seed).value
    if lipschitz <= 0:
        raise ConfigurationError("Lipschitz constant must be positive")
    gamma = cfg.step_factor / lipschitz

    p = np.zeros(shape)
    residual = -data
    hist = IterateHistory()
    f_prev = None
    rising = 0
    reason = "max_iter"
    t0 = time.perf_counter()
    for k in range(1, cfg.max_iter + 1):
        g = op.adjoint(residual)
        p = tv_prox(p - gamma * g, cfg.reg * gamma, max_iter=cfg.prox_iter, tol=cfg.prox_tol)
        residual = op.forward(p) - data
        f = objective(residual, p, cfg.reg)
        re = relative_error(p, phantom) if phantom is not None else float("nan")
        hist.append(k, f, re, time.perf_counter() - t0)
        log.info("iteration %d: F=%.6e RE=%.3f", k, f, re)
        if callback is not None:
            callback(k, p)
        if f_prev is not None:
            if f_prev == 0.0:
                reason = "zero_objective"
                break
            drop = 1.0 - f / f_prev
            if drop < 0:
                rising += 1
                if rising >= cfg.divergence_patience:
                    raise DivergenceError(
                        f"objective increased {rising} times in a row at iteration {k}; "
                        f"reduce the step factor (currently {cfg.step_factor})")
            else:
                rising = 0
                if drop < cfg.tol:
                    reason = "tolerance"
                    break
        f_prev = f
    return ReconResult(p, hist, reason, lipschitz)

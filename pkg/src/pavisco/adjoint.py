"""Adjoint time stepping: detector residuals back to an initial-pressure field.

The solver marches the adjoint wave system with the same operators, PML and
staggering as the forward kernel, in three sub-steps per time level:

1. velocity update from coefficient-weighted stress divergences (elastic
   plus dispersive part, projected per mode),
2. per-mode absorption correction of that velocity,
3. stress update from the symmetrised gradient of the corrected velocity,

followed by injection of the time-reversed detector data.

Two readout conventions are offered.  ``exact=True`` (default) rescales the
injected data and the final stress by the PML factors so that the result is
the transpose of the forward map to rounding error.  ``exact=False`` injects
and reads out unscaled, which differs only through fields inside the PML and
behaves like a discretised continuous adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .forward import DEFAULT_GROWTH_LIMIT, GrowthGuard, TimeSeries, diagonal_components, stress_coefficients
from .model import Model
from .spectral import P, S
from .state import h, pair, pair_members, stress_components


def prepare_adjoint_data(data: np.ndarray, dt: float) -> np.ndarray:
    """Order-reversed, pairwise-summed detector data for ``n = -1 .. nt - 1``.

    Column ``n + 1`` holds ``(P[nt-1-n] + P[nt-2-n]) / (2 dt)`` with the
    out-of-range sample taken as zero at both ends.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ConfigurationError("detector data must be (n_sensors, nt)")
    nt = data.shape[1]
    if nt < 2:
        raise ConfigurationError("adjoint data needs at least two time samples")
    rev = data[:, ::-1]
    padded = np.zeros((data.shape[0], nt + 2))
    padded[:, 1:-1] = rev
    return (padded[:, 1:] + padded[:, :-1]) / (2 * dt)


@dataclass
class AdjointState:
    """Adjoint PML-split velocity (before absorption correction) and stress."""

    v: np.ndarray  # (d, d, *N)
    s: np.ndarray  # (2, C, *N)
    n: int = -1

    @classmethod
    def zeros(cls, shape) -> "AdjointState":
        d = len(shape)
        return cls(np.zeros((d, d) + tuple(shape)), np.zeros((2, len(stress_components(d))) + tuple(shape)))

    def norm(self) -> float:
        return float(np.sqrt(np.vdot(self.v, self.v) + np.vdot(self.s, self.s)))


class AdjointKernel:
    def __init__(self, model: Model):
        self.model = model
        g, med, ops = model.grid, model.medium, model.ops
        d = self.d = g.ndim
        self.dt = g.dt
        self.ops = ops
        self.comps = stress_components(d)
        self.lossless = med.lossless

        # divergence of coefficient-weighted stress: component c feeds strain slot
        # strain_index[c]; ``gather`` sums components into the d*d slots
        index, elastic, viscous = stress_coefficients(med, self.comps)
        self.c_el = np.stack(elastic)
        self.c_vi = np.stack(viscous)
        self.gather = np.zeros((d * d, len(self.comps)))
        self.gather[index, np.arange(len(self.comps))] = 1.0
        self.div_mul = [np.stack([np.stack([-ops.dmul(b, a, h(a, k)) for k in range(d)]) for a in range(d)])
                        for b in (P, S)]

        # stress update: gradient of the corrected velocity, summed per pair
        members = pair_members(d)
        self.pairs = list(members)
        self.pair_of_comp = [self.pairs.index((i, j)) for (m, i, j) in self.comps]
        self.grad_mul = [np.stack([np.stack([-g.dt * ops.dmul(b, m, -h(i, m)) for i in range(d)])
                                   for m in range(d)]) for b in (P, S)]
        self.pair_index = np.array([[self.pairs.index(pair(i, m)) for i in range(d)] for m in range(d)])

        self.av = np.empty((d, d) + g.shape)
        for m in range(d):
            for i in range(d):
                self.av[m, i] = model.a_v[m][i]
        self.as_ = np.stack([np.broadcast_to(a, g.shape) for a in model.a_s])
        self.inv_rho = np.stack([1.0 / r for r in med.rho_v])
        self.tau_dis = [np.stack(med.tau_dis_v[b]) for b in (P, S)]
        self.tau_abs = [np.stack(med.tau_abs_v[b]) for b in (P, S)]
        if not self.lossless:
            self.y_dis = ops.frac("dis")
            self.y_abs = ops.frac("abs")

    def _divergences(self, sb: np.ndarray, b: int):
        """Spectra of the elastic and viscous stress divergences, one per component."""
        d = self.d
        el = np.tensordot(self.gather, self.c_el * sb, axes=1)
        vi = None if self.lossless else np.tensordot(self.gather, self.c_vi * sb, axes=1)
        mul = self.div_mul[b]
        a_hat = (mul * self.ops.fft(el).reshape((d, d) + mul.shape[2:])).sum(axis=0)
        w_hat = None
        if vi is not None:
            w_hat = (mul * self.ops.fft(vi).reshape((d, d) + mul.shape[2:])).sum(axis=0)
        return a_hat, w_hat

    def _stress_increment(self, u: np.ndarray, b: int) -> np.ndarray:
        """Symmetrised, density-weighted gradient of a split velocity field."""
        uh = self.ops.fft(u * self.inv_rho[None])
        terms = self.grad_mul[b] * uh
        acc = np.zeros((len(self.pairs),) + terms.shape[2:], dtype=complex)
        d = self.d
        for m in range(d):
            for i in range(d):
                acc[self.pair_index[m, i]] += terms[m, i]
        return self.ops.ifft(acc)[self.pair_of_comp]

    def step(self, st: AdjointState) -> None:
        ops = self.ops
        total = 0.0
        absorb = []
        for b in (P, S):
            a_hat, w_hat = self._divergences(st.s[b], b)
            if w_hat is not None:
                wstar = ops.ifft(w_hat)
                a_hat = a_hat + self.y_dis * ops.fft(self.tau_dis[b] * wstar)
                absorb.append(ops.ifft(self.y_abs * ops.fft(self.tau_abs[b] * wstar)))
            total = total + np.stack(ops.project_hat(list(a_hat), b))
        inc = self.dt * ops.ifft(total)

        v = st.v
        v *= self.av
        v += inc[None]
        v *= self.av

        for b in (P, S):
            u = v if self.lossless else v - self.av * absorb[b][None]
            r = self._stress_increment(u, b)
            sb = st.s[b]
            sb *= self.as_
            sb += r
            sb *= self.as_
        st.n += 1


def adjoint_kernel(model: Model) -> AdjointKernel:
    cache = model.__dict__.setdefault("_kernels", {})
    if "adjoint" not in cache:
        cache["adjoint"] = AdjointKernel(model)
    return cache["adjoint"]


@dataclass
class AdjointSource:
    """Grid-mapped adjoint data; ``field(n)`` is the stress increment at step ``n``."""

    model: Model
    adj: np.ndarray  # (n_sensors, nt + 1), columns n = -1 .. nt - 1
    exact: bool = True

    def add_to(self, st: AdjointState, n: int) -> None:
        col = self.adj[:, n + 1]
        if not np.any(col):
            return
        d = self.model.grid.ndim
        inc = -self.model.grid.dt / d * self.model.sensors.spread(col)
        for c in diagonal_components(d):
            st.s[P, c] += self.model.a_s[c] * inc if self.exact else inc


def step_adjoint(model: Model, st: AdjointState, source: AdjointSource | None = None) -> AdjointState:
    n = st.n
    adjoint_kernel(model).step(st)
    if source is not None:
        source.add_to(st, n)
    return st


def adjoint_readout(model: Model, st: AdjointState, exact: bool = True) -> np.ndarray:
    d = model.grid.ndim
    acc = 0.0
    for c in diagonal_components(d):
        sc = st.s[P, c]
        acc = acc + (sc / model.a_s[c] if exact else sc)
    return -model.ops.smooth(acc / d)


def run_adjoint(data: np.ndarray | TimeSeries, model: Model, *, exact: bool = True,
                growth_limit: float = DEFAULT_GROWTH_LIMIT) -> np.ndarray:
    """Adjoint field for detector data ``(n_sensors, nt)`` on the model grid."""
    if isinstance(data, TimeSeries):
        data = data.data
    data = np.asarray(data, dtype=float)
    if model.sensors is None or data.shape[0] != len(model.sensors):
        raise ConfigurationError("data rows must match the model's sensors")
    nt = data.shape[1]
    src = AdjointSource(model, prepare_adjoint_data(data, model.grid.dt), exact)
    k = adjoint_kernel(model)
    st = AdjointState.zeros(model.grid.shape)
    guard = GrowthGuard(growth_limit, "adjoint field")
    for n in range(-1, nt - 1):
        k.step(st)
        guard.check(n + 1, (st.v, st.s))
        src.add_to(st, n)
        guard.update((st.v, st.s))
    return adjoint_readout(model, st, exact)

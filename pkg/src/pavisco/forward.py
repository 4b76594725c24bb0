"""Forward time stepping: initial pressure to detector time series."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericalInstability
from .model import Model
from .spectral import P, S
from .state import WaveState, h, pair, pair_members, stress_components

DEFAULT_GROWTH_LIMIT = 10.0


@dataclass
class TimeSeries:
    """Detector data ``(n_sensors, nt)`` sampled every ``dt`` from ``t = 0``."""

    data: np.ndarray
    dt: float

    @property
    def nt(self) -> int:
        return self.data.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt) * self.dt


class GrowthGuard:
    """Aborts when a field block grows by more than ``limit`` within one step.

    Velocity and stress differ in units by many orders of magnitude, so each
    block is compared only with its own previous norm.
    """

    def __init__(self, limit: float = DEFAULT_GROWTH_LIMIT, what: str = "field"):
        self.limit = float(limit)
        self.what = what
        self.prev: list[float] | None = None

    @staticmethod
    def _norms(blocks) -> list[float]:
        return [float(np.sqrt(np.vdot(b, b))) for b in blocks]

    def check(self, step: int, blocks) -> None:
        cur = self._norms(blocks)
        if not all(np.isfinite(cur)):
            raise NumericalInstability(step, f"non-finite {self.what} values")
        if self.prev is None:
            return
        for before, after in zip(self.prev, cur):
            if before > 0 and after > self.limit * before:
                raise NumericalInstability(
                    step, f"{self.what} norm grew by {after / before:.3g}x in one step "
                          f"(limit {self.limit:g}); reduce the CFL number")

    def update(self, blocks) -> None:
        self.prev = self._norms(blocks)


def diagonal_components(d: int) -> list[int]:
    return [c for c, (m, i, j) in enumerate(stress_components(d)) if i == j]


@dataclass
class SourceTerm:
    """Additive compressional stress source active at ``n = -1`` and ``n = 0``.

    ``field`` is the per-direction, per-diagonal-component rate
    ``-S P0 / (2 d dt)``; each active step adds ``dt * field`` to every
    ``(m, i, i)`` component, so the two steps together deposit
    ``-S P0 / d`` per direction and the recorded pressure starts at ``S P0``.
    """

    field: np.ndarray
    dt: float
    steps: tuple[int, ...] = (-1, 0)

    def active(self, n: int) -> bool:
        return n in self.steps

    def add_to(self, state: WaveState, n: int) -> None:
        if self.active(n):
            diag = diagonal_components(state.ndim)
            state.s[P, diag] += self.dt * self.field


def build_source(p0: np.ndarray, model: Model, smooth: bool = True) -> SourceTerm:
    g = model.grid
    p0 = model.ops._check(p0, "initial pressure")
    sp0 = model.ops.smooth(p0) if smooth else p0
    return SourceTerm(-sp0 / (2 * g.ndim * g.dt), g.dt)


def stress_coefficients(med, comps) -> tuple[np.ndarray, list, list]:
    """Per stress component: flat strain index ``a * d + k`` and its coefficients.

    Diagonal components in their own direction carry ``lambda + 2 mu`` (and
    ``chi + 2 eta``), since both terms act on the same strain entry.
    """
    d = med.ndim
    index, elastic, viscous = [], [], []
    for (m, i, j) in comps:
        if i == j:
            a, k = m, m
            el, vi = (med.lam + 2 * med.mu, med.chi + 2 * med.eta) if m == i else (med.lam, med.chi)
        else:
            a, k = (j, i) if m == j else (i, j)
            el, vi = med.mu_ij[i, j], med.eta_ij[i, j]
        index.append(a * d + k)
        elastic.append(np.broadcast_to(el, med.lam.shape))
        viscous.append(np.broadcast_to(vi, med.lam.shape))
    return np.array(index), elastic, viscous


class ForwardKernel:
    """Precomputed batched multipliers and coefficient arrays for one model."""

    def __init__(self, model: Model):
        self.model = model
        g, med, ops = model.grid, model.medium, model.ops
        d = self.d = g.ndim
        self.dt = g.dt
        self.comps = stress_components(d)
        members = pair_members(d)
        self.pairs = list(members)
        self.pair_starts = [members[p][0] for p in self.pairs]
        pidx = {p: k for k, p in enumerate(self.pairs)}
        self.pidx = np.array([[pidx[pair(i, m)] for i in range(d)] for m in range(d)])

        # g[m, i] = D^{h(i,m)}_m sigma_{im};  E[a, c] = D^{-h(a,c)}_a v_c
        self.mg = [np.stack([np.stack([ops.dmul(b, m, h(i, m)) for i in range(d)]) for m in range(d)])
                   for b in (P, S)]
        self.me = [np.stack([np.stack([ops.dmul(b, a, -h(a, c)) for c in range(d)]) for a in range(d)])
                   for b in (P, S)]
        self.proj = ops.projector
        self.lossless = med.lossless
        if not self.lossless:
            self.y_dis = ops.frac("dis")
            self.y_abs = ops.frac("abs")

        shape = g.shape
        self.av = np.empty((d, d) + shape)
        for m in range(d):
            for i in range(d):
                self.av[m, i] = model.a_v[m][i]
        self.as_ = np.stack([np.broadcast_to(a, shape) for a in model.a_s])
        self.dt_rho = np.stack([g.dt / r for r in med.rho_v])
        self.inv_rho = np.stack([1.0 / r for r in med.rho_v])
        self.tau_dis = [np.stack(med.tau_dis_v[b]) for b in (P, S)]
        self.tau_abs = [np.stack(med.tau_abs_v[b]) for b in (P, S)]

        # stress assembly: component c reads one strain entry E[a, k] (flat index
        # strain_index[c]) scaled by an elastic and a viscous coefficient
        self.strain_index, elastic, viscous = stress_coefficients(med, self.comps)
        self.c_el = np.stack(elastic)
        self.c_vi = np.stack(viscous)

    # -- pieces shared with the discrete operators ------------------------------
    def pair_totals_hat(self, sb: np.ndarray) -> np.ndarray:
        ends = self.pair_starts[1:] + [sb.shape[0]]
        totals = np.stack([sb[a:b].sum(axis=0) for a, b in zip(self.pair_starts, ends)])
        return self.model.ops.fft(totals)

    def stress_gradients(self, sb: np.ndarray, b: int) -> np.ndarray:
        """``g[m, i] = D^{h(i,m)}_m sigma^b_{im}`` for one mode."""
        th = self.pair_totals_hat(sb)
        return self.model.ops.ifft(self.mg[b] * th[self.pidx])

    def velocity_gradients(self, uh: np.ndarray, b: int) -> np.ndarray:
        """``E[a, c] = D^{-h(a,c)}_a u_c`` from the spectrum of a vector field."""
        return self.model.ops.ifft(self.me[b] * uh[None, :])

    def project(self, vh: np.ndarray, b: int) -> np.ndarray:
        qp = np.einsum("ij...,j...->i...", self.proj, vh)
        return qp if b == P else vh - qp

    def assemble(self, ev: np.ndarray, ew: np.ndarray | None) -> np.ndarray:
        flat = (self.d * self.d,) + ev.shape[2:]
        out = self.c_el * ev.reshape(flat)[self.strain_index]
        if ew is not None:
            out += self.c_vi * ew.reshape(flat)[self.strain_index]
        return out

    # -- one step -------------------------------------------------------------
    def step(self, state: WaveState) -> None:
        ops = self.model.ops
        v, s = state.v, state.s
        g = [self.stress_gradients(s[b], b) for b in (P, S)]

        v *= self.av
        v += self.dt_rho[None] * (g[P] + g[S])
        v *= self.av
        vh = ops.fft(v.sum(axis=0))

        for b in (P, S):
            vbh = self.project(vh, b)
            ev = self.velocity_gradients(vbh, b)
            ew = None
            if not self.lossless:
                dvb = np.sum(self.av * g[b], axis=0) * self.inv_rho
                w = (self.tau_dis[b] * ops.ifft(self.y_dis * vbh)
                     - self.tau_abs[b] * ops.ifft(self.y_abs * ops.fft(dvb)))
                ew = self.velocity_gradients(ops.fft(w), b)
            r = self.assemble(ev, ew)
            sb = s[b]
            sb *= self.as_
            sb += self.dt * r
            sb *= self.as_
        state.n += 1


def kernel(model: Model) -> ForwardKernel:
    """Per-model cached kernel."""
    cache = model.__dict__.setdefault("_kernels", {})
    if "forward" not in cache:
        cache["forward"] = ForwardKernel(model)
    return cache["forward"]


def step_forward(model: Model, state: WaveState, source: SourceTerm | None = None) -> WaveState:
    """Advance ``state`` (stress at ``n``, velocity at ``n - 1/2``) by one step in place."""
    n = state.n
    kernel(model).step(state)
    if source is not None:
        source.add_to(state, n)
    return state


def record(model: Model, state: WaveState) -> np.ndarray:
    return model.sensors.sample(state.pressure())


@dataclass
class ForwardRun:
    series: TimeSeries
    snapshots: list[tuple[int, np.ndarray]] = field(default_factory=list)
    final: WaveState | None = None


def propagate(model: Model, add_source: Callable[[WaveState, int], None], nt: int | None = None,
              *, growth_limit: float = DEFAULT_GROWTH_LIMIT, check_every: int = 1,
              snapshot_stride: int = 0) -> ForwardRun:
    """Run ``n = -1 .. nt - 2`` from zero fields, recording ``nt`` samples.

    ``add_source(state, n)`` is called after the homogeneous update of step
    ``n`` and may add anything to the state (it sees the state at ``n + 1``).
    """
    if model.sensors is None:
        raise ValueError("model has no sensors to record at")
    nt = model.grid.nt if nt is None else nt
    k = kernel(model)
    state = WaveState.zeros(model.grid.shape)
    data = np.empty((len(model.sensors), nt))
    snaps = []
    guard = GrowthGuard(growth_limit)
    for n in range(-1, nt - 1):
        k.step(state)
        check = bool(check_every) and (n + 1) % check_every == 0
        if check:
            guard.check(n + 1, (state.v, state.s))
        add_source(state, n)
        if check or guard.prev is None:
            guard.update((state.v, state.s))
        data[:, n + 1] = record(model, state)
        if snapshot_stride and (n + 1) % snapshot_stride == 0:
            snaps.append((n + 1, state.pressure()))
    return ForwardRun(TimeSeries(data, model.grid.dt), snaps, state)


def run_forward(p0: np.ndarray, model: Model, *, smooth: bool = True, **kw) -> TimeSeries:
    """Detector pressure ``(n_sensors, nt)`` generated by initial pressure ``p0``."""
    src = build_source(p0, model, smooth=smooth)
    return propagate(model, src.add_to, **kw).series

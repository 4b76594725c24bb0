"""Matrix-free one-step operator ``T``, its exact transpose, and the recursions
built on them.

A stacked state ``X_n = [v_{n-1/2}; sigma_n]`` is held as a :class:`WaveState`.
One homogeneous step factors as

    T = [[I, 0], [A_s Psi_dis, A_s (A_s - Psi_abs)]] @ [[A_v^2, A_v Phi], [0, I]]

with ``Phi`` the stress-to-velocity map, ``Psi_dis`` the elastic plus
dispersive velocity-to-stress map and ``Psi_abs`` the absorption feedback of
the stress on itself.  Each factor is coded together with its transpose, so
``T*`` needs no matrix.  The code here is deliberately unbatched: it is the
reference the production kernels are checked against.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .forward import TimeSeries, diagonal_components
from .model import Model
from .spectral import P, S
from .state import WaveState, h, pair, pair_members, stress_components

MODES = (P, S)


class DiscreteOperators:
    """The building blocks of ``T`` for one model, with their adjoints."""

    def __init__(self, model: Model):
        self.model = model
        g, med = model.grid, model.medium
        self.d = g.ndim
        self.dt = g.dt
        self.ops = model.ops
        self.comps = stress_components(self.d)
        self.members = pair_members(self.d)
        self.med = med
        self.a_v = model.a_v
        self.a_s = model.a_s

    # small helpers ----------------------------------------------------------
    def D(self, u: np.ndarray, b: int, axis: int, sign: int) -> np.ndarray:
        return self.ops.ifft(self.ops.dmul(b, axis, sign) * self.ops.fft(u))

    def Q(self, u: np.ndarray, b: int) -> np.ndarray:
        return self.ops.ifft(np.stack(self.ops.project_hat(list(self.ops.fft(u)), b)))

    def Y(self, u: np.ndarray, kind: str) -> np.ndarray:
        return self.ops.ifft(self.ops.frac(kind) * self.ops.fft(u))

    def pair_total(self, sb: np.ndarray, i: int, j: int) -> np.ndarray:
        return sum(sb[c] for c in self.members[pair(i, j)])

    # Phi'^b: stress of one mode -> split velocity increment ------------------
    def phi_b(self, sb: np.ndarray, b: int) -> np.ndarray:
        d = self.d
        out = np.empty((d, d) + sb.shape[1:])
        for m in range(d):
            for i in range(d):
                out[m, i] = self.dt / self.med.rho_v[i] * self.D(self.pair_total(sb, i, m), b, m, h(i, m))
        return out

    def phi_b_adj(self, u: np.ndarray, b: int) -> np.ndarray:
        d = self.d
        rho = self.med.rho_v
        grads = {}
        for k in range(d):
            grads[k, k] = -self.dt * self.D(u[k, k] / rho[k], b, k, -1)
            for l in range(k + 1, d):
                grads[k, l] = -self.dt * (self.D(u[l, k] / rho[k], b, l, +1)
                                          + self.D(u[k, l] / rho[l], b, k, +1))
        out = np.empty((len(self.comps),) + u.shape[2:])
        for c, (m, i, j) in enumerate(self.comps):
            out[c] = grads[i, j]
        return out

    # E^b: (velocity-like a, viscous w) -> stress rate --------------------------
    def _terms(self, c: int):
        med = self.med
        m, i, j = self.comps[c]
        if i == j:
            t = [(med.lam, med.chi, m, m)]
            if m == i:
                t.append((2 * med.mu, 2 * med.eta, i, i))
            return t
        if m == j:
            return [(med.mu_ij[i, j], med.eta_ij[i, j], j, i)]
        return [(med.mu_ij[i, j], med.eta_ij[i, j], i, j)]

    def strain_map(self, a: np.ndarray, w: np.ndarray, b: int) -> np.ndarray:
        out = np.zeros((len(self.comps),) + a.shape[1:])
        for c in range(len(self.comps)):
            for elastic, viscous, ax, k in self._terms(c):
                sign = -h(ax, k)
                out[c] += elastic * self.D(a[k], b, ax, sign) + viscous * self.D(w[k], b, ax, sign)
        return out

    def strain_map_adj(self, s: np.ndarray, b: int) -> tuple[np.ndarray, np.ndarray]:
        # D is linear, so terms sharing a (target, axis) pair are summed before differentiating
        el, vi = {}, {}
        for c in range(len(self.comps)):
            for elastic, viscous, ax, k in self._terms(c):
                el[k, ax] = el.get((k, ax), 0.0) + elastic * s[c]
                vi[k, ax] = vi.get((k, ax), 0.0) + viscous * s[c]
        a = np.zeros((self.d,) + s.shape[1:])
        w = np.zeros_like(a)
        for (k, ax), t in el.items():
            a[k] -= self.D(t, b, ax, h(ax, k))
            w[k] -= self.D(vi[k, ax], b, ax, h(ax, k))
        return a, w

    # Psi_dis^b: split velocity -> stress of mode b ----------------------------
    def psi_dis_b(self, v: np.ndarray, b: int) -> np.ndarray:
        vb = self.Q(v.sum(axis=0), b)
        tau = self.med.tau_dis_v[b]
        w = np.stack([tau[i] * self.Y(vb[i], "dis") for i in range(self.d)])
        return self.dt * self.strain_map(vb, w, b)

    def psi_dis_b_adj(self, s: np.ndarray, b: int, strain=None) -> np.ndarray:
        a, w = strain if strain is not None else self.strain_map_adj(s, b)
        tau = self.med.tau_dis_v[b]
        u = a + np.stack([self.Y(tau[i] * w[i], "dis") for i in range(self.d)])
        u = self.dt * self.Q(u, b)
        return np.broadcast_to(u, (self.d,) + u.shape).copy()

    # Psi_abs^b: stress of mode b -> stress of mode b ---------------------------
    def dvdt_b(self, sb: np.ndarray, b: int) -> np.ndarray:
        """Velocity rate driven by one stress mode, PML half-factor included."""
        u = self.phi_b(sb, b)
        d = self.d
        return np.stack([sum(self.a_v[m][i] * u[m, i] for m in range(d)) for i in range(d)]) / self.dt

    def psi_abs_b(self, sb: np.ndarray, b: int) -> np.ndarray:
        dv = self.dvdt_b(sb, b)
        tau = self.med.tau_abs_v[b]
        w = np.stack([tau[i] * self.Y(dv[i], "abs") for i in range(self.d)])
        return self.dt * self.strain_map(np.zeros_like(w), w, b)

    def psi_abs_b_adj(self, s: np.ndarray, b: int) -> np.ndarray:
        return self.phi_b_adj(self._abs_velocity_adj(self.strain_map_adj(s, b)[1], b), b)

    def _abs_velocity_adj(self, w: np.ndarray, b: int) -> np.ndarray:
        """Adjoint of the velocity-rate stage of ``Psi_abs``, before ``Phi'`` is transposed."""
        tau = self.med.tau_abs_v[b]
        z = np.stack([self.Y(tau[i] * w[i], "abs") for i in range(self.d)])
        d = self.d
        return np.stack([np.stack([self.a_v[m][i] * z[i] for i in range(d)]) for m in range(d)])

    # full operators -------------------------------------------------------------
    def apply_T(self, x: WaveState) -> WaveState:
        d, nc = self.d, len(self.comps)
        v1 = np.empty_like(x.v)
        phi = sum(self.phi_b(x.s[b], b) for b in MODES)
        for m in range(d):
            for i in range(d):
                a = self.a_v[m][i]
                v1[m, i] = a * (a * x.v[m, i] + phi[m, i])
        s1 = np.empty_like(x.s)
        for b in MODES:
            r = self.psi_dis_b(v1, b) - self.psi_abs_b(x.s[b], b)
            for c in range(nc):
                a = self.a_s[c]
                s1[b, c] = a * (a * x.s[b, c] + r[c])
        return WaveState(v1, s1, x.n + 1)

    def apply_T_star(self, x: WaveState) -> WaveState:
        d, nc = self.d, len(self.comps)
        st = np.empty_like(x.s)
        for c in range(nc):
            st[:, c] = self.a_s[c] * x.s[:, c]
        strain = [self.strain_map_adj(st[b], b) for b in MODES]  # shared by both adjoint maps
        v1 = x.v + sum(self.psi_dis_b_adj(st[b], b, strain[b]) for b in MODES)
        av1 = np.empty_like(v1)
        v2 = np.empty_like(v1)
        for m in range(d):
            for i in range(d):
                a = self.a_v[m][i]
                av1[m, i] = a * v1[m, i]
                v2[m, i] = a * av1[m, i]
        s1 = np.empty_like(x.s)
        for b in MODES:
            # Phi' transposed once for both the PML and the absorption paths
            u = av1 - self._abs_velocity_adj(strain[b][1], b)
            s1[b] = self.a_s_apply(st[b]) + self.phi_b_adj(u, b)
        return WaveState(v2, s1, x.n + 1)

    def a_s_apply(self, sb: np.ndarray) -> np.ndarray:
        return np.stack([self.a_s[c] * sb[c] for c in range(len(self.comps))])

    # measurement and source ------------------------------------------------------
    def measure(self, x: WaveState) -> np.ndarray:
        return self.model.sensors.sample(x.pressure())

    def measure_adj(self, q: np.ndarray) -> WaveState:
        x = WaveState.zeros(self.model.grid.shape)
        x.s[P, diagonal_components(self.d)] = -self.model.sensors.spread(q) / self.d
        return x

    def source_adj(self, x: WaveState) -> np.ndarray:
        """Transpose of ``P0 -> dt * s`` at one active step (smoothing included)."""
        diag = diagonal_components(self.d)
        return -self.ops.smooth(x.s[P, diag].sum(axis=0)) / (2 * self.d)


def operators(model: Model) -> DiscreteOperators:
    cache = model.__dict__.setdefault("_kernels", {})
    if "discrete" not in cache:
        cache["discrete"] = DiscreteOperators(model)
    return cache["discrete"]


def apply_T(model: Model, x: WaveState) -> WaveState:
    return operators(model).apply_T(x)


def apply_T_star(model: Model, x: WaveState) -> WaveState:
    return operators(model).apply_T_star(x)


# recursions -------------------------------------------------------------------
def run_H(model: Model, sources: Callable[[int], WaveState | None], nt: int | None = None) -> np.ndarray:
    """Measurements ``(n_sensors, nt)`` of ``X_{n+1} = T X_n + S_{n+1/2}``, ``X_{-1} = 0``."""
    ops = operators(model)
    nt = model.grid.nt if nt is None else nt
    x = WaveState.zeros(model.grid.shape)
    out = np.empty((len(model.sensors), nt))
    for n in range(-1, nt - 1):
        x = ops.apply_T(x)
        s = sources(n)
        if s is not None:
            x.v += s.v
            x.s += s.s
        out[:, n + 1] = ops.measure(x)
    return out


def run_H_star(model: Model, data: np.ndarray) -> list[WaveState]:
    """Adjoint of :func:`run_H`: the source-shaped fields ``Y_n`` for ``n = -1 .. nt-2``.

    Computed by the time-reversed recursion ``X*_{j+1} = T* X*_j + M* P_{nt-2-j}``
    from ``X*_{-1} = 0``, with ``Y_n = X*_{nt-2-n}``.
    """
    ops = operators(model)
    nt = data.shape[1]
    x = WaveState.zeros(model.grid.shape)
    ys = []
    for j in range(-1, nt - 1):
        x = ops.apply_T_star(x)
        m = ops.measure_adj(data[:, nt - 2 - j])
        x.v += m.v
        x.s += m.s
        ys.append(x)
    return ys[::-1]


def run_discrete_adjoint(data: np.ndarray | TimeSeries, model: Model) -> np.ndarray:
    """Exact transpose of ``P0 -> run_forward(P0)``, by the reversed recursion.

    Only the last two reversed states are needed, since the source acts at
    ``n = -1`` and ``n = 0`` with the same operator.
    """
    data = data.data if isinstance(data, TimeSeries) else np.asarray(data, dtype=float)
    ops = operators(model)
    nt = data.shape[1]
    if nt < 2:
        from .errors import ConfigurationError
        raise ConfigurationError("need at least two time samples")
    x = WaveState.zeros(model.grid.shape)
    prev = x
    for j in range(-1, nt - 1):
        prev = x
        x = ops.apply_T_star(x)
        m = ops.measure_adj(data[:, nt - 2 - j])
        x.s += m.s
    total = WaveState(x.v + prev.v, x.s + prev.s)
    return ops.source_adj(total)


def dense_T(model: Model, adjoint: bool = False) -> np.ndarray:
    """Explicit matrix of ``T`` (or ``T*``) by probing unit vectors; small grids only."""
    shape = model.grid.shape
    if max(shape) > 8:
        raise ValueError("dense construction is limited to 8 points per axis")
    from .state import stacked_size
    n = stacked_size(shape)
    op = apply_T_star if adjoint else apply_T
    cols = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        cols.append(op(model, WaveState.from_stacked(e, shape)).to_stacked())
    return np.stack(cols, axis=1)


def relative_gap(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return abs(a - b) / scale if scale > 0 else 0.0


@dataclass
class ReportRow:
    grid: str
    test: str
    relative_error: float


def adjoint_equivalence_report(model_factory: Callable[[int], Model], sizes: Sequence[int],
                               trials: int = 1, seed: int = 0) -> list[ReportRow]:
    """Dot test and cross-path comparison for each grid size.

    ``model_factory(n)`` builds the model for an ``n``-per-axis grid.  Rows:
    ``dot_discrete`` (forward vs exact transpose), ``dot_analytic`` (forward vs
    the analytic adjoint solver as written), ``cross`` (exact analytic solver vs
    exact transpose).
    """
    from .adjoint import run_adjoint
    from .forward import run_forward

    rows: list[ReportRow] = []
    rng = np.random.default_rng(seed)
    for n in sizes:
        model = model_factory(n)
        label = "x".join(str(k) for k in model.grid.shape)
        acc = {"dot_discrete": [], "dot_analytic": [], "cross": []}
        for _ in range(trials):
            p0 = rng.standard_normal(model.grid.shape)
            q = rng.standard_normal((len(model.sensors), model.grid.nt))
            lhs = float(np.vdot(run_forward(p0, model).data, q))
            disc = run_discrete_adjoint(q, model)
            lit = run_adjoint(q, model, exact=False)
            ex = run_adjoint(q, model, exact=True)
            acc["dot_discrete"].append(relative_gap(lhs, float(np.vdot(p0, disc))))
            acc["dot_analytic"].append(relative_gap(lhs, float(np.vdot(p0, lit))))
            acc["cross"].append(float(np.linalg.norm(ex - disc) / np.linalg.norm(disc)))
        for test, vals in acc.items():
            rows.append(ReportRow(label, test, float(np.mean(vals))))
    return rows


def report_csv(rows: Iterable[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["grid", "test", "relative_error"])
    for r in rows:
        w.writerow([r.grid, r.test, f"{r.relative_error:.6e}"])
    return buf.getvalue()

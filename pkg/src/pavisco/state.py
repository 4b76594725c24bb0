"""Field layout shared by the forward, adjoint and discrete-adjoint paths.

Velocity is stored PML-split as ``v[m, i]`` (direction ``m``, component ``i``).
Stress is stored per mode (0 = compressional, 1 = shear) and per component
``(m, i, j)`` with ``i <= j``; only components with ``i == j`` or
``m in {i, j}`` exist.  Components are ordered by ``(i, j)`` pair, then ``m``.
That is 6 per mode in 2D and 15 in 3D, so a stacked state holds 16N (2D) or
39N (3D) numbers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def stress_components(d: int) -> tuple[tuple[int, int, int], ...]:
    comps = []
    for i in range(d):
        for j in range(i, d):
            for m in range(d):
                if i == j or m in (i, j):
                    comps.append((m, i, j))
    return tuple(comps)


@lru_cache(maxsize=None)
def pair_members(d: int) -> dict[tuple[int, int], tuple[int, ...]]:
    """Component indices whose PML split sums to the total ``sigma_ij``."""
    out: dict[tuple[int, int], list[int]] = {}
    for c, (m, i, j) in enumerate(stress_components(d)):
        out.setdefault((i, j), []).append(c)
    return {k: tuple(v) for k, v in out.items()}


def pair(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i <= j else (j, i)


def h(i: int, j: int) -> int:
    """Shift-sign selector: +1 on the diagonal, -1 off it."""
    return 1 if i == j else -1


@dataclass
class WaveState:
    """PML-split velocity and p/s-split stress at one time level."""

    v: np.ndarray  # (d, d, *N)
    s: np.ndarray  # (2, C, *N)
    n: int = -1

    @classmethod
    def zeros(cls, shape: tuple[int, ...], n: int = -1) -> "WaveState":
        d = len(shape)
        return cls(np.zeros((d, d) + shape), np.zeros((2, len(stress_components(d))) + shape), n)

    @property
    def ndim(self) -> int:
        return self.v.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.v.shape[2:]

    def copy(self) -> "WaveState":
        return WaveState(self.v.copy(), self.s.copy(), self.n)

    def total_velocity(self) -> np.ndarray:
        return self.v.sum(axis=0)

    def total_stress(self, mode: int) -> dict[tuple[int, int], np.ndarray]:
        d = self.ndim
        return {ij: self.s[mode, list(idx)].sum(axis=0) for ij, idx in pair_members(d).items()}

    def pressure(self) -> np.ndarray:
        """Minus the average trace of the compressional stress."""
        d = self.ndim
        diag = [c for c, (m, i, j) in enumerate(stress_components(d)) if i == j]
        return -self.s[0, diag].sum(axis=0) / d

    def norm(self) -> float:
        return float(np.sqrt(np.vdot(self.v, self.v) + np.vdot(self.s, self.s)))

    # stacked layout ---------------------------------------------------------
    def to_stacked(self) -> np.ndarray:
        return np.concatenate([self.v.ravel(), self.s.ravel()])

    @classmethod
    def from_stacked(cls, x: np.ndarray, shape: tuple[int, ...], n: int = -1) -> "WaveState":
        d = len(shape)
        size = int(np.prod(shape))
        nv = d * d * size
        ns = 2 * len(stress_components(d)) * size
        if x.shape != (nv + ns,):
            raise ValueError(f"stacked field has length {x.shape}, expected {nv + ns}")
        v = x[:nv].reshape((d, d) + tuple(shape)).copy()
        s = x[nv:].reshape((2, len(stress_components(d))) + tuple(shape)).copy()
        return cls(v, s, n)


def stacked_size(shape: tuple[int, ...]) -> int:
    d = len(shape)
    return (d * d + 2 * len(stress_components(d))) * int(np.prod(shape))

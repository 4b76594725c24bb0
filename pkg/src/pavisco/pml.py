"""Direction-split perfectly matched layer.

The layer occupies the outer ``thickness`` nodes of every axis (inside the
grid).  For direction ``m`` the attenuation varies only along axis ``m``:

    alpha(xi) = alpha_rate * (xi / thickness) ** power,

where ``xi`` is the distance in grid cells from the interior edge and
``alpha_rate = alpha_max * c_ref / dx_m`` converts nepers per grid point into
nepers per second.  The update factors are ``A = exp(-alpha * dt / 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import Grid
from .errors import ConfigurationError


def taper_depth(n: int, thickness: int, staggered: bool) -> np.ndarray:
    """Depth into the layer, in cells, for each node along one axis."""
    s = np.arange(n) + (0.5 if staggered else 0.0)
    left = thickness - s
    right = s - (n - thickness) + 1.0
    xi = np.maximum(left, right)
    return np.clip(xi, 0.0, float(thickness)) if thickness > 0 else np.zeros(n)


@dataclass(frozen=True)
class Pml:
    """Attenuation profiles and update factors for one grid."""

    grid: Grid
    thickness: tuple[int, ...]
    alpha_max: float
    power: int
    c_ref: float
    # per axis: 1D attenuation (Np/s) on nodes and on half-shifted nodes
    alpha_node: tuple[np.ndarray, ...]
    alpha_stag: tuple[np.ndarray, ...]

    @classmethod
    def build(cls, grid: Grid, thickness: int | Sequence[int] = 0, alpha_max: float = 2.0,
              power: int = 4, c_ref: float | None = None) -> "Pml":
        d = grid.ndim
        thick = (int(thickness),) * d if np.isscalar(thickness) else tuple(int(t) for t in thickness)
        if len(thick) != d:
            raise ConfigurationError("PML thickness needs one entry per axis")
        for n, t in zip(grid.shape, thick):
            if t < 0 or 2 * t >= n:
                raise ConfigurationError(f"PML thickness {t} must be below half the axis length {n}")
        c = grid.c_ref_p if c_ref is None else float(c_ref)
        node, stag = [], []
        for a in range(d):
            rate = alpha_max * c / grid.spacing[a]
            t = thick[a]
            for store, st in ((node, False), (stag, True)):
                xi = taper_depth(grid.shape[a], t, st)
                store.append(rate * (xi / t) ** power if t > 0 else np.zeros(grid.shape[a]))
        return cls(grid, thick, float(alpha_max), int(power), c, tuple(node), tuple(stag))

    def _factor(self, m: int, staggered: bool) -> np.ndarray:
        prof = (self.alpha_stag if staggered else self.alpha_node)[m]
        a = np.exp(-prof * self.grid.dt / 2)
        shape = [1] * self.grid.ndim
        shape[m] = -1
        return a.reshape(shape)

    def attenuation(self, m: int, staggered: bool = False) -> np.ndarray:
        """Broadcastable attenuation field (Np/s) for direction ``m``."""
        shape = [1] * self.grid.ndim
        shape[m] = -1
        return (self.alpha_stag if staggered else self.alpha_node)[m].reshape(shape)

    def velocity_factor(self, m: int, i: int) -> np.ndarray:
        """``A_m`` at the position of velocity component ``i``."""
        return self._factor(m, staggered=(m == i))

    def stress_factor(self, m: int, i: int, j: int) -> np.ndarray:
        """``A_m`` at the position of stress component ``(i, j)``."""
        return self._factor(m, staggered=(i != j and m in (i, j)))

    def interior_mask(self) -> np.ndarray:
        mask = np.ones(self.grid.shape, dtype=bool)
        for a, t in enumerate(self.thickness):
            if t:
                idx = [slice(None)] * self.grid.ndim
                idx[a] = np.r_[0:t, self.grid.shape[a] - t:self.grid.shape[a]]
                mask[tuple(idx)] = False
        return mask


def build_pml(grid: Grid, thickness: int | Sequence[int] = 0, alpha_max: float = 2.0,
              power: int = 4, c_ref: float | None = None) -> Pml:
    return Pml.build(grid, thickness, alpha_max, power, c_ref)

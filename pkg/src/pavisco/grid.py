"""Spatial and temporal discretisation.

Grid nodes sit at ``x_j = (j - N // 2) * dx`` along every axis, so the
origin coincides with a node.  Wavenumbers follow numpy's DFT ordering
(``fftfreq``) for the full spectrum; the spectral operators store their
multipliers on the ``rfftn`` half spectrum along the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_CFL = 0.3


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with a staggered leapfrog time axis.

    Parameters
    ----------
    shape : tuple of int
        Points per axis, ``d = len(shape)`` must be 2 or 3.
    spacing : tuple of float
        Grid spacing per axis in metres.
    dt : float
        Time step in seconds.
    nt : int
        Number of recorded time samples (``n = 0 .. nt - 1``).
    c_ref_p, c_ref_s : float
        Reference speeds used by the k-space correction of the compressional
        and shear derivative operators.
    cfl : float
        CFL number the time step was derived from (bookkeeping only).
    """

    shape: tuple[int, ...]
    spacing: tuple[float, ...]
    dt: float
    nt: int
    c_ref_p: float
    c_ref_s: float
    cfl: float = DEFAULT_CFL
    _k: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        spacing = tuple(float(h) for h in self.spacing)
        if len(shape) not in (2, 3):
            raise ValueError(f"grid must be 2D or 3D, got shape {shape}")
        if len(spacing) != len(shape):
            raise ValueError("spacing must have one entry per axis")
        if min(shape) < 2 or min(spacing) <= 0:
            raise ValueError("grid needs at least 2 points and positive spacing per axis")
        if self.dt <= 0 or self.nt < 1:
            raise ValueError("dt must be positive and nt >= 1")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "spacing", spacing)
        kvec = tuple(2 * np.pi * np.fft.fftfreq(n, h) for n, h in zip(shape, spacing))
        object.__setattr__(self, "_k", kvec)

    @classmethod
    def for_medium(
        cls,
        shape: Sequence[int],
        spacing: Sequence[float] | float,
        c_p: np.ndarray | float,
        c_s: np.ndarray | float = 0.0,
        *,
        cfl: float = DEFAULT_CFL,
        t_end: float | None = None,
        nt: int | None = None,
        dt: float | None = None,
        c_ref_p: float | None = None,
        c_ref_s: float | None = None,
    ) -> "Grid":
        """Build a grid whose time step satisfies ``dt = cfl * min(dx) / max(c_p)``.

        Exactly one of ``t_end`` or ``nt`` sets the record length.  ``dt`` may
        be forced explicitly (``cfl`` is then recomputed for bookkeeping).
        """
        shape = tuple(int(n) for n in shape)
        if np.isscalar(spacing):
            spacing = (float(spacing),) * len(shape)
        c_p = np.asarray(c_p, dtype=float)
        c_s = np.asarray(c_s, dtype=float)
        c_max = float(c_p.max())
        if dt is None:
            dt = cfl * min(spacing) / c_max
        else:
            cfl = dt * c_max / min(spacing)
        if (t_end is None) == (nt is None):
            raise ValueError("give exactly one of t_end or nt")
        if nt is None:
            nt = int(np.floor(t_end / dt)) + 1
        if c_ref_p is None:
            c_ref_p = c_max
        if c_ref_s is None:
            c_ref_s = float(c_s.max()) if np.any(c_s > 0) else c_ref_p
        return cls(shape, tuple(spacing), float(dt), int(nt), float(c_ref_p), float(c_ref_s), float(cfl))

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def axes(self) -> tuple[int, ...]:
        """Trailing array axes occupied by a field (for batched transforms)."""
        return tuple(range(-self.ndim, 0))

    @property
    def k_vectors(self) -> tuple[np.ndarray, ...]:
        """Per-axis wavenumbers in rad/m, DFT ordering."""
        return self._k

    def k_components(self) -> list[np.ndarray]:
        """Broadcastable full-spectrum wavenumber components ``k_i``."""
        return list(np.meshgrid(*self._k, indexing="ij", sparse=True))

    def k_magnitude(self) -> np.ndarray:
        """``k = sqrt(sum k_i^2)`` on the full spectrum; zero only at DC."""
        return np.sqrt(sum(ki**2 for ki in self.k_components()))

    def coordinates(self, axis: int, staggered: bool = False) -> np.ndarray:
        """Node positions along one axis (optionally shifted by half a cell)."""
        n, h = self.shape[axis], self.spacing[axis]
        return (np.arange(n) - n // 2 + (0.5 if staggered else 0.0)) * h

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt) * self.dt

    def with_nt(self, nt: int) -> "Grid":
        return Grid(self.shape, self.spacing, self.dt, nt, self.c_ref_p, self.c_ref_s, self.cfl)

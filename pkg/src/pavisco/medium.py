"""Physical maps and the staggered coefficient fields derived from them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ConfigurationError
from .grid import Grid

# 20 * log10(e): decibels per neper
DB_PER_NEPER = 20.0 / np.log(10.0)


def db_to_neper(alpha_db: np.ndarray | float, y: float) -> np.ndarray:
    """Convert dB MHz^-y cm^-1 to Np (rad/s)^-y m^-1.

    ``alpha_np = 100 * alpha_db / (DB_PER_NEPER * (2 pi 1e6)**y)``.
    """
    return 100.0 * np.asarray(alpha_db, dtype=float) / (DB_PER_NEPER * (2e6 * np.pi) ** y)


def stagger(f: np.ndarray, axes: Iterable[int], ndim: int | None = None) -> np.ndarray:
    """Linearly interpolate ``f`` half a cell forward along each listed axis.

    Periodic wrap, consistent with the spectral domain.  ``axes`` index the
    trailing ``ndim`` spatial axes (0-based).
    """
    f = np.asarray(f, dtype=float)
    ndim = f.ndim if ndim is None else ndim
    out = f
    for a in sorted(set(axes)):
        ax = a - ndim
        out = 0.5 * (out + np.roll(out, -1, axis=ax))
    return out


@dataclass(frozen=True)
class MediumMaps:
    """Raw maps on grid nodes.  Absorption in dB MHz^-y cm^-1."""

    rho: np.ndarray
    c_p: np.ndarray
    c_s: np.ndarray
    alpha_p: np.ndarray
    alpha_s: np.ndarray
    y: float

    @classmethod
    def homogeneous(cls, shape, rho=1000.0, c_p=1500.0, c_s=0.0,
                    alpha_p=0.0, alpha_s=0.0, y=1.4) -> "MediumMaps":
        full = lambda v: np.full(shape, float(v))
        return cls(full(rho), full(c_p), full(c_s), full(alpha_p), full(alpha_s), float(y))

    def replace(self, **kw) -> "MediumMaps":
        vals = dict(rho=self.rho, c_p=self.c_p, c_s=self.c_s,
                    alpha_p=self.alpha_p, alpha_s=self.alpha_s, y=self.y)
        vals.update(kw)
        return MediumMaps(**vals)


@dataclass(frozen=True)
class Medium:
    """Coefficient fields used by the time steppers.

    Staggered containers are indexed by spatial axis (``rho_v[i]``, ``tau_*[mode][i]``)
    or by the stress index pair (``mu_ij[(i, j)]`` with ``i <= j``).
    """

    maps: MediumMaps
    ndim: int
    lam: np.ndarray
    mu: np.ndarray
    chi: np.ndarray
    eta: np.ndarray
    tau_dis: tuple[np.ndarray, np.ndarray]
    tau_abs: tuple[np.ndarray, np.ndarray]
    rho_v: tuple[np.ndarray, ...]
    mu_ij: dict = field(repr=False)
    eta_ij: dict = field(repr=False)
    tau_dis_v: tuple = field(repr=False)
    tau_abs_v: tuple = field(repr=False)

    @property
    def y(self) -> float:
        return self.maps.y

    @property
    def lossless(self) -> bool:
        return not (np.any(self.chi) or np.any(self.eta))

    @property
    def fluid(self) -> bool:
        return not np.any(self.maps.c_s > 0)


def derive_coefficients(maps: MediumMaps, grid: Grid | None = None) -> Medium:
    """Lame, viscosity and fractional-Laplacian coefficient fields.

    ``mu = rho c_s^2``, ``lambda = rho c_p^2 - 2 mu``,
    ``eta = -2 rho c_s^3 alpha_s / cos(pi y / 2)``,
    ``chi = -2 rho c_p^3 alpha_p / cos(pi y / 2) - 2 eta``,
    ``tau_dis = c^(y-1) sin(pi y / 2)``, ``tau_abs = c^(y-2) cos(pi y / 2)``
    with shear ``tau`` set to zero wherever ``c_s = 0``.
    """
    rho, c_p, c_s = (np.asarray(a, dtype=float) for a in (maps.rho, maps.c_p, maps.c_s))
    shape = rho.shape
    for name, arr in (("c_p", c_p), ("c_s", c_s), ("alpha_p", maps.alpha_p), ("alpha_s", maps.alpha_s)):
        if np.shape(arr) != shape:
            raise ConfigurationError(f"map {name} has shape {np.shape(arr)}, expected {shape}")
    if grid is not None and shape != grid.shape:
        raise ConfigurationError(f"maps have shape {shape}, grid is {grid.shape}")
    ndim = rho.ndim
    y = float(maps.y)
    if not 0.0 < y < 2.0 or y == 1.0:
        raise ConfigurationError(f"power-law exponent must lie in (0, 2) excluding 1, got {y}")
    cos_y = np.cos(np.pi * y / 2)
    sin_y = np.sin(np.pi * y / 2)
    if not np.all(rho > 0):
        raise ValueError("density must be strictly positive")
    if not np.all(c_p > 0):
        raise ValueError("compressional speed must be strictly positive")
    if np.any(c_s < 0):
        raise ValueError("shear speed must be non-negative")

    mu = rho * c_s**2
    lam = rho * c_p**2 - 2 * mu
    if np.any(lam + 2 * mu / ndim <= 0):
        raise ValueError("bulk stiffness lambda + 2 mu / d must be positive")

    a_p = db_to_neper(maps.alpha_p, y)
    a_s = db_to_neper(maps.alpha_s, y)
    eta = -2 * rho * c_s**3 * a_s / cos_y
    chi = -2 * rho * c_p**3 * a_p / cos_y - 2 * eta

    solid = c_s > 0
    safe_cs = np.where(solid, c_s, 1.0)
    tau_dis = (c_p ** (y - 1) * sin_y, np.where(solid, safe_cs ** (y - 1) * sin_y, 0.0))
    tau_abs = (c_p ** (y - 2) * cos_y, np.where(solid, safe_cs ** (y - 2) * cos_y, 0.0))

    d = ndim
    rho_v = tuple(stagger(rho, [i]) for i in range(d))
    mu_ij, eta_ij = {}, {}
    for i in range(d):
        for j in range(i, d):
            axes = [] if i == j else [i, j]
            mu_ij[i, j] = stagger(mu, axes)
            eta_ij[i, j] = stagger(eta, axes)
    tau_dis_v = tuple(tuple(stagger(t, [i]) for i in range(d)) for t in tau_dis)
    tau_abs_v = tuple(tuple(stagger(t, [i]) for i in range(d)) for t in tau_abs)
    return Medium(maps, ndim, lam, mu, chi, eta, tau_dis, tau_abs, rho_v,
                  mu_ij, eta_ij, tau_dis_v, tau_abs_v)


def max_supported_frequency(maps: MediumMaps, grid: Grid) -> dict[str, float | None]:
    """Two-points-per-wavelength limit ``min c / (2 max dx)`` per mode in Hz.

    The shear limit is taken over the ``c_s > 0`` support and is ``None`` for a
    fluid-only medium.
    """
    dx = max(grid.spacing)
    c_s = np.asarray(maps.c_s)
    shear = float(c_s[c_s > 0].min() / (2 * dx)) if np.any(c_s > 0) else None
    return {"p": float(np.min(maps.c_p) / (2 * dx)), "s": shear}

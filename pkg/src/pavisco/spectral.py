"""Wavenumber-space primitives shared by every solver.

All operators act on real fields as ``Re(ifftn(M * fftn(u)))``.  Each
multiplier ``M`` is Hermitian-symmetrised once at construction,
``M_h(k) = (M(k) + conj(M(-k))) / 2``, which makes the real-part extraction
implicit; the operators are then evaluated with ``rfftn``/``irfftn`` on the
half spectrum.  The DFT convention is numpy's (no scaling forward, ``1/N`` on
the inverse); see :mod:`pavisco.fft` for the transform backend.  Under this convention the adjoint of ``u -> Re F^-1 M F u``
is ``w -> Re F^-1 conj(M) F w``, which is all the adjoint identities rely on.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from .fft import RealTransforms
from .grid import Grid

P, S = 0, 1
MODES = {"p": P, "s": S, P: P, S: S}


def _sign(shift) -> int:
    if shift in (+1, "+", "plus"):
        return +1
    if shift in (-1, "-", "minus"):
        return -1
    raise ValueError(f"shift must be '+' or '-', got {shift!r}")


def _negate_k(m: np.ndarray, ndim: int) -> np.ndarray:
    """Return ``M(-k)`` for a full-spectrum array in DFT ordering."""
    axes = tuple(range(-ndim, 0))
    return np.roll(np.flip(m, axis=axes), 1, axis=axes)


def hermitian_half(m: np.ndarray, ndim: int) -> np.ndarray:
    """Hermitian part of a full-spectrum multiplier, cut to the rfft half."""
    mh = 0.5 * (m + np.conj(_negate_k(m, ndim)))
    n_last = m.shape[-1]
    return mh[..., : n_last // 2 + 1]


def blackman(x: np.ndarray) -> np.ndarray:
    """Symmetric Blackman window on ``x`` in [-1, 1]; unit gain at 0."""
    return 0.42 + 0.5 * np.cos(np.pi * x) + 0.08 * np.cos(2 * np.pi * x)


class SpectralOperators:
    """Immutable bundle of k-space multipliers for one grid and medium exponent.

    Parameters
    ----------
    grid : Grid
    y : float, optional
        Power-law exponent; needed only for the fractional Laplacians.
    c_ref_p, c_ref_s : float, optional
        Override the reference speeds stored on the grid.
    """

    def __init__(self, grid: Grid, y: float | None = None,
                 c_ref_p: float | None = None, c_ref_s: float | None = None):
        self.grid = grid
        self.ndim = d = grid.ndim
        self.shape = grid.shape
        self.axes = grid.axes
        self.c_ref = (c_ref_p or grid.c_ref_p, c_ref_s or grid.c_ref_s)
        self.y = y
        self._rt = RealTransforms(grid.shape)

        kc = [np.broadcast_to(ki, grid.shape) for ki in grid.k_components()]
        k = grid.k_magnitude()
        dc = k == 0

        # derivative multipliers, keyed (mode, axis, sign)
        self._deriv = {}
        for mode in (P, S):
            kappa = np.sinc(self.c_ref[mode] * k * grid.dt / (2 * np.pi))
            for a in range(d):
                for sgn in (+1, -1):
                    m = 1j * kc[a] * kappa * np.exp(sgn * 0.5j * kc[a] * grid.spacing[a])
                    self._deriv[mode, a, sgn] = hermitian_half(m, d)

        # staggered compressional projector Q^p_ij = khat_i khat_j xi_ij, delta_ij at DC
        safe_k = np.where(dc, 1.0, k)
        khat = [np.where(dc, 0.0, kc[a] / safe_k) for a in range(d)]
        proj = np.empty((d, d) + tuple(self._deriv[P, 0, 1].shape), dtype=complex)
        for i in range(d):
            for j in range(d):
                xi = np.exp(0.5j * (kc[i] * grid.spacing[i] - kc[j] * grid.spacing[j]))
                m = khat[i] * khat[j] * xi
                if i == j:
                    m = np.where(dc, 1.0, m)
                proj[i, j] = hermitian_half(m, d)
        self._proj = proj

        self._frac = {}
        if y is not None:
            for kind, expo in (("dis", y - 1.0), ("abs", y - 2.0)):
                m = np.where(dc, 0.0, safe_k**expo)
                self._frac[kind] = hermitian_half(m, d).real.copy()

        win = np.ones(grid.shape)
        for a in range(d):
            x = kc[a] * grid.spacing[a] / np.pi  # in [-1, 1)
            win = win * blackman(x)
        self._window = hermitian_half(win, d).real.copy()

    # -- transforms -------------------------------------------------------
    def fft(self, u: np.ndarray) -> np.ndarray:
        return self._rt.forward(u)

    def ifft(self, uh: np.ndarray) -> np.ndarray:
        return self._rt.inverse(uh)

    # -- multiplier access used by the solvers ------------------------------
    def dmul(self, mode: int, axis: int, sign: int) -> np.ndarray:
        return self._deriv[mode, axis, sign]

    @property
    def projector(self) -> np.ndarray:
        """Half-spectrum multipliers of ``Q^p``, shape ``(d, d, ...)``."""
        return self._proj

    def frac(self, kind: str) -> np.ndarray:
        try:
            return self._frac[kind]
        except KeyError:
            if self.y is None:
                raise ValueError("fractional Laplacian needs the exponent y") from None
            raise ValueError(f"kind must be 'dis' or 'abs', got {kind!r}") from None

    @property
    def window(self) -> np.ndarray:
        return self._window

    def project_hat(self, vh: Sequence[np.ndarray], mode) -> list[np.ndarray]:
        """Apply ``Q^p`` or ``Q^s`` to a vector field given in k-space."""
        d = self.ndim
        qp = [sum(self._proj[i, j] * vh[j] for j in range(d)) for i in range(d)]
        if MODES[mode] == P:
            return qp
        return [vh[i] - qp[i] for i in range(d)]

    # -- public field-level operations ---------------------------------------
    def _check(self, u: np.ndarray, name: str = "field") -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape[-self.ndim:] != self.shape:
            raise ValueError(f"{name} has shape {u.shape}, grid is {self.shape}")
        bad = ~np.isfinite(u)
        if bad.any():
            loc = tuple(int(i) for i in np.argwhere(bad)[0])
            raise FloatingPointError(f"non-finite value in {name} at index {loc}")
        return u

    def spectral_derivative(self, u: np.ndarray, axis: int, shift, mode="p") -> np.ndarray:
        """k-space corrected staggered derivative along ``axis`` (0-based).

        ``shift='+'`` evaluates the derivative half a cell forward of the input
        nodes, ``'-'`` half a cell backward.
        """
        u = self._check(u)
        if not 0 <= axis < self.ndim:
            raise ValueError(f"axis {axis} out of range for a {self.ndim}D grid")
        return self.ifft(self._deriv[MODES[mode], axis, _sign(shift)] * self.fft(u))

    def split_p_s(self, v: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        """Compressional/shear split of a staggered velocity field."""
        v = np.stack([self._check(c, "velocity component") for c in v])
        if v.shape[0] != self.ndim:
            raise ValueError(f"expected {self.ndim} velocity components, got {v.shape[0]}")
        vh = self.fft(v)
        vp = self.ifft(np.stack(self.project_hat(vh, P)))
        return vp, v - vp

    def fractional_laplacian(self, u: np.ndarray, kind: str) -> np.ndarray:
        """Multiply by ``k**(y-1)`` (``kind='dis'``) or ``k**(y-2)`` (``'abs'``)."""
        mult = self.frac(kind)
        return self.ifft(mult * self.fft(self._check(u)))

    def smooth(self, u: np.ndarray) -> np.ndarray:
        """Separable Blackman low-pass in k-space; symmetric, unit DC gain."""
        return self.ifft(self._window * self.fft(self._check(u)))

"""Point detectors with multilinear interpolation from grid nodes."""

from __future__ import annotations

import itertools

import numpy as np
import scipy.sparse as sp

from .errors import GeometryError
from .grid import Grid


class SensorArray:
    """Detectors at arbitrary positions, read out by (bi/tri)linear interpolation.

    ``weights`` is a sparse ``(n_sensors, N)`` matrix acting on C-ordered
    flattened fields; every row is a convex combination of the ``2**d``
    enclosing nodes.
    """

    def __init__(self, grid: Grid, positions: np.ndarray):
        pos = np.atleast_2d(np.asarray(positions, dtype=float))
        d = grid.ndim
        if pos.shape[1] != d:
            raise GeometryError(f"sensor positions need {d} coordinates, got {pos.shape[1]}")
        self.grid = grid
        self.positions = pos
        n_s = pos.shape[0]

        base, frac = [], []
        for a in range(d):
            s = pos[:, a] / grid.spacing[a] + grid.shape[a] // 2
            if np.any(s < 0) or np.any(s > grid.shape[a] - 1):
                raise GeometryError(f"sensor outside the grid along axis {a}")
            i0 = np.minimum(np.floor(s).astype(int), grid.shape[a] - 2)
            base.append(i0)
            frac.append(s - i0)

        rows, cols, vals = [], [], []
        for corner in itertools.product((0, 1), repeat=d):
            w = np.ones(n_s)
            idx = []
            for a, c in enumerate(corner):
                w = w * (frac[a] if c else 1.0 - frac[a])
                idx.append(base[a] + c)
            rows.append(np.arange(n_s))
            cols.append(np.ravel_multi_index(tuple(idx), grid.shape))
            vals.append(w)
        self.weights = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_s, grid.size),
        )
        self.weights.sum_duplicates()
        self._weights_t = self.weights.T.tocsr()

    def __len__(self) -> int:
        return self.positions.shape[0]

    def sample(self, field: np.ndarray) -> np.ndarray:
        return self.weights @ field.ravel()

    def spread(self, values: np.ndarray) -> np.ndarray:
        """Transpose of :meth:`sample`: scatter detector values onto the grid."""
        return (self._weights_t @ np.asarray(values, dtype=float)).reshape(self.grid.shape)

    def support_mask(self) -> np.ndarray:
        """Grid nodes touched by any detector."""
        touched = np.zeros(self.grid.size, dtype=bool)
        touched[self.weights.indices] = True
        return touched.reshape(self.grid.shape)

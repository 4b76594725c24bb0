"""Everything a time stepper needs for one grid, bundled once."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .medium import Medium, MediumMaps, derive_coefficients
from .pml import Pml
from .sensors import SensorArray
from .spectral import SpectralOperators
from .state import stress_components


@dataclass(frozen=True)
class Model:
    grid: Grid
    medium: Medium
    pml: Pml
    sensors: SensorArray | None
    ops: SpectralOperators

    @classmethod
    def build(cls, grid: Grid, maps: MediumMaps | Medium, pml: Pml | None = None,
              sensors: SensorArray | np.ndarray | None = None) -> "Model":
        medium = maps if isinstance(maps, Medium) else derive_coefficients(maps, grid)
        if pml is None:
            pml = Pml.build(grid, 0)
        if sensors is not None and not isinstance(sensors, SensorArray):
            sensors = SensorArray(grid, sensors)
        ops = SpectralOperators(grid, medium.y)
        return cls(grid, medium, pml, sensors, ops)

    def with_sensors(self, sensors) -> "Model":
        if not isinstance(sensors, SensorArray):
            sensors = SensorArray(self.grid, sensors)
        return Model(self.grid, self.medium, self.pml, sensors, self.ops)

    # cached per-component PML factors -----------------------------------------
    @property
    def a_v(self) -> np.ndarray:
        """``A_m`` at velocity positions, indexed ``[m][i]`` (broadcastable)."""
        try:
            return self.__dict__["_a_v"]
        except KeyError:
            d = self.grid.ndim
            val = [[self.pml.velocity_factor(m, i) for i in range(d)] for m in range(d)]
            object.__setattr__(self, "_a_v", val)
            return val

    @property
    def a_s(self) -> list[np.ndarray]:
        """``A_m`` at stress positions, one per stored component."""
        try:
            return self.__dict__["_a_s"]
        except KeyError:
            val = [self.pml.stress_factor(m, i, j) for (m, i, j) in stress_components(self.grid.ndim)]
            object.__setattr__(self, "_a_s", val)
            return val

    @property
    def lossless(self) -> bool:
        return self.medium.lossless

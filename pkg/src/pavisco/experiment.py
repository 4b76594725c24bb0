"""Desk-scale data generation and reconstruction runs.

Data are simulated on a finer grid than the one used for reconstruction, then
resampled in time onto the reconstruction step.  Scenario 1 uses the same
maps for both; scenario 2 simulates with noise-contaminated maps and
reconstructs with the clean ones.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .forward import run_forward
from .grid import Grid
from .model import Model
from .phantom import (PhantomSpec, add_awgn, contaminate_maps, make_phantom, phantom_grid,
                      resample_in_time, resample_to_grid)
from .pml import Pml
from .recon import PatOperator, ReconConfig, ReconResult, cached_lipschitz, config_key, power_iteration, run_ista

log = logging.getLogger(__name__)


@dataclass
class DeskConfig:
    spec: PhantomSpec = field(default_factory=PhantomSpec)
    data_shape: tuple[int, ...] = (128, 128)
    data_pml: int = 10
    recon_shape: tuple[int, ...] = (96, 96)
    recon_pml: int = 8
    cfl: float = 0.3
    t_end: float | None = None
    data_snr_db: float = 30.0
    map_snr_db: float = 30.0
    seed: int = 0

    @classmethod
    def desk_3d(cls, **kw) -> "DeskConfig":
        base = dict(spec=PhantomSpec.skull3d(detectors_per_axis=24), data_shape=(64, 64, 16),
                    data_pml=(4, 4, 2), recon_shape=(48, 48, 12), recon_pml=(3, 3, 2))
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Setup:
    """Everything a reconstruction run needs."""

    model: Model
    data: np.ndarray
    phantom: np.ndarray
    data_model: Model


def data_model(cfg: DeskConfig, scenario: int = 1) -> tuple[Model, np.ndarray]:
    g = phantom_grid(cfg.spec, cfg.data_shape, cfg.data_pml, cfl=cfg.cfl, t_end=cfg.t_end)
    ph = make_phantom(cfg.spec, g)
    maps = ph.maps
    if scenario == 2:
        maps = contaminate_maps(maps, cfg.map_snr_db, seed=cfg.seed + 1)
        # noise can push speeds past the nominal maxima: re-derive the step and reference speeds
        g = Grid.for_medium(g.shape, g.spacing, maps.c_p, maps.c_s, cfl=cfg.cfl,
                            t_end=(g.nt - 1) * g.dt)
    return Model.build(g, maps, Pml.build(g, cfg.data_pml), ph.sensors), ph.p0


def recon_model(cfg: DeskConfig) -> Model:
    g = phantom_grid(cfg.spec, cfg.recon_shape, cfg.recon_pml, cfl=cfg.cfl, t_end=cfg.t_end)
    ph = make_phantom(cfg.spec, g)
    return Model.build(g, ph.maps, Pml.build(g, cfg.recon_pml), ph.sensors)


def prepare(cfg: DeskConfig, scenario: int = 1) -> Setup:
    dm, p0 = data_model(cfg, scenario)
    rm = recon_model(cfg)
    clean = run_forward(p0, dm).data
    t_end = (dm.grid.nt - 1) * dm.grid.dt
    nt = min(rm.grid.nt, int(np.floor(t_end / rm.grid.dt)) + 1)
    if nt != rm.grid.nt:
        rm = Model(rm.grid.with_nt(nt), rm.medium, rm.pml, rm.sensors, rm.ops)
    data = resample_in_time(clean, dm.grid.dt, rm.grid.dt, rm.grid.nt)
    data = add_awgn(data, cfg.data_snr_db, seed=cfg.seed)
    phantom = resample_to_grid(p0, dm.grid, rm.grid)
    return Setup(rm, data, phantom, dm)


def lipschitz_for(cfg: DeskConfig, model: Model, rc: ReconConfig) -> tuple[float, int]:
    """``L_f`` for the reconstruction model, via the on-disk cache when configured."""
    iterations = {"n": 0}

    def compute() -> float:
        op = PatOperator(model)
        res = power_iteration(lambda x: op.adjoint(op.forward(x)), model.grid.shape,
                              max_iter=rc.power_iter, tol=rc.power_tol, seed=rc.seed)
        iterations["n"] = res.iterations
        return res.value

    key = config_key({"desk": cfg.to_dict(), "power": [rc.power_iter, rc.power_tol, rc.seed]})
    return cached_lipschitz(key, compute), iterations["n"]


def reconstruct(setup: Setup, rc: ReconConfig, lipschitz: float) -> ReconResult:
    return run_ista(setup.data, PatOperator(setup.model), rc, lipschitz=lipschitz, phantom=setup.phantom)

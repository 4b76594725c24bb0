"""Skull phantoms, noise models and the adjoint verification suite.

Geometry lives in metres around the grid origin.  The physical region is the
grid interior; absorbing layers are added outside it by :func:`phantom_grid`.
In 2D the skull is the upper half of an annulus (``x_1 > 0`` side), with the
detectors on the same half circle.  In 3D the skull is a horizontal slab under
a detector plane at the top of the interior (largest ``x_3``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ConfigurationError, GeometryError
from .grid import Grid
from .medium import MediumMaps
from .sensors import SensorArray


@dataclass(frozen=True)
class Material:
    rho: float
    c_p: float
    c_s: float
    alpha_p: float
    alpha_s: float


SOFT_TISSUE = Material(1000.0, 1500.0, 0.0, 0.75, 0.5)
SKULL = Material(1850.0, 3000.0, 1500.0, 10.0, 20.0)

# initial-pressure building blocks in units of the detection radius:
# ("disk", cx, cy, radius, amplitude) and ("bar", cx, cy, half_w, half_h, amplitude)
DEFAULT_PATTERN = (
    ("disk", -0.30, 0.25, 0.15, 2.0),
    ("disk", 0.35, 0.10, 0.10, 1.0),
    ("disk", 0.10, 0.45, 0.06, 1.2),
    ("bar", 0.00, -0.30, 0.25, 0.04, 1.5),
)


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry and materials of a test object.

    ``kind`` is ``"skull2d"``, ``"skull3d"`` or ``"disk"``.  2D lengths are
    relative to ``radius`` (the detection radius); 3D slab depths are fractions
    of the interior depth measured down from the detector plane.
    """

    kind: str = "skull2d"
    extent: tuple[float, ...] = (0.14, 0.14)
    radius: float = 0.068
    skull_inner: float = 0.85
    skull_outer: float = 0.95
    n_detectors: int = 200
    detectors_per_axis: int = 62
    slab_top: float = 0.05
    slab_bottom: float = 0.225
    tissue: Material = SOFT_TISSUE
    skull: Material = SKULL
    y: float = 1.4
    p0_amplitude: float = 2.0
    pattern: tuple = DEFAULT_PATTERN
    disk_radius: float = 0.8

    @property
    def ndim(self) -> int:
        return len(self.extent)

    @classmethod
    def skull3d(cls, **kw) -> "PhantomSpec":
        base = dict(kind="skull3d", extent=(0.14, 0.14, 0.035))
        base.update(kw)
        return cls(**base)

    def replace(self, **kw) -> "PhantomSpec":
        return replace(self, **kw)


@dataclass
class Phantom:
    maps: MediumMaps
    p0: np.ndarray
    sensors: SensorArray
    spec: PhantomSpec
    skull_mask: np.ndarray = field(repr=False)


def phantom_grid(spec: PhantomSpec, shape: Sequence[int], pml: int | Sequence[int], *,
                 cfl: float = 0.3, t_end: float | None = None, nt: int | None = None) -> Grid:
    """Grid whose interior (shape minus the layers) spans ``spec.extent``."""
    shape = tuple(int(n) for n in shape)
    if len(shape) != spec.ndim:
        raise ConfigurationError(f"grid has {len(shape)} axes, phantom has {spec.ndim}")
    pml = (int(pml),) * len(shape) if np.isscalar(pml) else tuple(int(p) for p in pml)
    interior = [n - 2 * p for n, p in zip(shape, pml)]
    if min(interior) < 2:
        raise ConfigurationError("absorbing layers leave no interior")
    spacing = tuple(e / (n - 1) for e, n in zip(spec.extent, interior))
    c_max = max(spec.tissue.c_p, spec.skull.c_p)
    c_s = spec.skull.c_s if spec.skull.c_s > 0 else 0.0
    if t_end is None and nt is None:
        t_end = default_duration(spec)
    return Grid.for_medium(shape, spacing, c_max, c_s, cfl=cfl, t_end=t_end, nt=nt)


def default_duration(spec: PhantomSpec) -> float:
    """Time for a tissue-speed wave to cross from the far side of the source region."""
    if spec.kind == "skull3d":
        return 1.2 * float(np.hypot(spec.extent[0], spec.extent[2])) / spec.tissue.c_p
    return 1.7 * spec.radius / spec.tissue.c_p


def _mesh(grid: Grid) -> list[np.ndarray]:
    return np.meshgrid(*[grid.coordinates(a) for a in range(grid.ndim)], indexing="ij", sparse=True)


def pattern_2d(x: np.ndarray, y: np.ndarray, scale: float, pattern=DEFAULT_PATTERN) -> np.ndarray:
    out = np.zeros(np.broadcast(x, y).shape)
    for item in pattern:
        if item[0] == "disk":
            _, cx, cy, r, amp = item
            inside = (x - cx * scale) ** 2 + (y - cy * scale) ** 2 <= (r * scale) ** 2
        elif item[0] == "bar":
            _, cx, cy, hw, hh, amp = item
            inside = (np.abs(x - cx * scale) <= hw * scale) & (np.abs(y - cy * scale) <= hh * scale)
        else:
            raise ConfigurationError(f"unknown pattern element {item[0]!r}")
        out = np.where(inside, np.maximum(out, amp), out)
    return out


def _fill(grid: Grid, spec: PhantomSpec, skull: np.ndarray) -> MediumMaps:
    def layer(attr):
        return np.where(skull, getattr(spec.skull, attr), getattr(spec.tissue, attr)).astype(float)
    return MediumMaps(layer("rho"), layer("c_p"), layer("c_s"), layer("alpha_p"), layer("alpha_s"), spec.y)


def _check_inside(grid: Grid, extent_needed: Sequence[float], what: str) -> None:
    for a, need in enumerate(extent_needed):
        half = grid.coordinates(a)[-1]
        lo = grid.coordinates(a)[0]
        if need > min(half, -lo) + 1e-12:
            raise GeometryError(f"{what} reaches {need:.4g} m along axis {a}, grid ends at {min(half, -lo):.4g} m")


def make_phantom(spec: PhantomSpec, grid: Grid) -> Phantom:
    if grid.ndim != spec.ndim:
        raise ConfigurationError("grid and phantom dimensions differ")
    if spec.kind in ("skull2d", "disk"):
        return _make_2d(spec, grid)
    if spec.kind == "skull3d":
        return _make_3d(spec, grid)
    raise ConfigurationError(f"unknown phantom kind {spec.kind!r}")


def _make_2d(spec: PhantomSpec, grid: Grid) -> Phantom:
    if grid.ndim != 2:
        raise ConfigurationError("2D phantom needs a 2D grid")
    r = spec.radius
    _check_inside(grid, (r, r), "detector circle")
    x, y = _mesh(grid)
    dist = np.sqrt(x**2 + y**2)
    if spec.kind == "skull2d" and spec.skull_outer > spec.skull_inner:
        if spec.skull_outer * r > r:
            raise GeometryError("skull extends beyond the detectors")
        skull = (dist >= spec.skull_inner * r) & (dist <= spec.skull_outer * r) & (y >= 0)
    else:
        skull = np.zeros(grid.shape, dtype=bool)
    maps = _fill(grid, spec, skull)
    p0 = pattern_2d(x, y, r, spec.pattern)
    if p0.max() > 0:
        p0 *= spec.p0_amplitude / p0.max()
    angles = np.linspace(0.0, np.pi, spec.n_detectors)
    det = r * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return Phantom(maps, p0, SensorArray(grid, det), spec, skull)


def _make_3d(spec: PhantomSpec, grid: Grid) -> Phantom:
    if grid.ndim != 3:
        raise ConfigurationError("3D phantom needs a 3D grid")
    ext = spec.extent
    _check_inside(grid, [e / 2 for e in ext], "slab phantom")
    x, y, z = _mesh(grid)
    top = ext[2] / 2
    depth = top - z
    skull = (depth >= spec.slab_top * ext[2]) & (depth <= spec.slab_bottom * ext[2])
    skull = np.broadcast_to(skull, grid.shape)
    maps = _fill(grid, spec, skull)

    # 2D pattern tilted through the tissue below the slab
    angle = np.deg2rad(30.0)
    xr = np.cos(angle) * x + np.sin(angle) * y
    yr = -np.sin(angle) * x + np.cos(angle) * y
    scale = 0.35 * min(ext[0], ext[1])
    flat = pattern_2d(xr, yr, scale, spec.pattern)
    lo = spec.slab_bottom * ext[2] + 2 * grid.spacing[2]
    span = ext[2] - lo - 2 * grid.spacing[2]
    centre = lo + 0.5 * span + 0.25 * span * xr / (0.5 * ext[0])
    thick = max(0.15 * span, 1.01 * grid.spacing[2])
    p0 = np.where(np.abs(depth - centre) <= thick / 2, flat, 0.0)
    p0 = np.where(depth > spec.slab_bottom * ext[2], p0, 0.0)
    if p0.max() > 0:
        p0 *= spec.p0_amplitude / p0.max()

    n = spec.detectors_per_axis
    gx = np.linspace(-ext[0] / 2, ext[0] / 2, n)
    gy = np.linspace(-ext[1] / 2, ext[1] / 2, n)
    det = np.stack([a.ravel() for a in np.meshgrid(gx, gy, indexing="ij")] + [np.full(n * n, top)], axis=1)
    return Phantom(maps, p0, SensorArray(grid, det), spec, np.asarray(skull))


def resample_to_grid(field_: np.ndarray, src: Grid, dst: Grid) -> np.ndarray:
    """Linear interpolation between grids sharing the coordinate origin; zero outside."""
    interp = RegularGridInterpolator([src.coordinates(a) for a in range(src.ndim)], field_,
                                     bounds_error=False, fill_value=0.0)
    pts = np.stack(np.meshgrid(*[dst.coordinates(a) for a in range(dst.ndim)], indexing="ij"), axis=-1)
    return interp(pts)


def resample_in_time(data: np.ndarray, dt_src: float, dt_dst: float, nt_dst: int) -> np.ndarray:
    """Linear interpolation of each detector trace onto ``n * dt_dst``; zero past the end."""
    t_src = np.arange(data.shape[1]) * dt_src
    t_dst = np.arange(nt_dst) * dt_dst
    return np.stack([np.interp(t_dst, t_src, row, right=0.0) for row in data])


# noise -----------------------------------------------------------------------
def add_awgn(data: np.ndarray, snr_db: float, seed: int | np.random.Generator | None = 0) -> np.ndarray:
    """Add white Gaussian noise at ``snr_db`` relative to the mean signal power."""
    data = np.asarray(data, dtype=float)
    if np.isposinf(snr_db):
        return data.copy()
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite or +inf")
    power = float(np.mean(data**2))
    if power == 0:
        raise ValueError("cannot scale noise to a zero-power signal")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sigma = np.sqrt(power / 10 ** (snr_db / 10))
    return data + sigma * rng.standard_normal(data.shape)


def contaminate_maps(maps: MediumMaps, snr_db: float, seed: int = 0,
                     floor: Material = SOFT_TISSUE) -> MediumMaps:
    """Independent AWGN on density and both speeds.

    Shear-speed noise is confined to the support of the clean shear map so a
    fluid stays a fluid.  Density or speed values pushed to zero or below are
    reset to the soft-tissue value of that map.
    """
    rng = np.random.default_rng(seed)
    rho = add_awgn(maps.rho, snr_db, rng)
    c_p = add_awgn(maps.c_p, snr_db, rng)
    solid = maps.c_s > 0
    c_s = maps.c_s.copy()
    if np.any(solid):
        c_s[solid] = add_awgn(maps.c_s[solid], snr_db, rng)
    rho = np.where(rho <= 0, floor.rho, rho)
    c_p = np.where(c_p <= 0, floor.c_p, c_p)
    c_s = np.where(solid & (c_s <= 0), floor.c_s, c_s)
    return maps.replace(rho=rho, c_p=c_p, c_s=c_s)


def random_disk(grid: Grid, radius: float, rng: np.random.Generator) -> np.ndarray:
    x = _mesh(grid)
    inside = sum(c**2 for c in x) <= radius**2
    return np.where(inside, rng.random(grid.shape), 0.0)


@dataclass
class SuiteResult:
    errors: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors))

    @property
    def min(self) -> float:
        return float(np.min(self.errors))

    @property
    def max(self) -> float:
        return float(np.max(self.errors))


def inner_product_suite(model, trials: int = 10, seed: int = 0, *, radius: float | None = None,
                        path: str = "analytic") -> SuiteResult:
    """Relative gap ``|<H p0, q> - <p0, H* q>| / |<H p0, q>|`` over random trials.

    ``p0`` holds uniform random values on a centred disk (or ball) of
    ``radius``; ``q`` is standard normal.  ``path`` selects the adjoint:
    ``"analytic"`` (solver with unscaled readout), ``"exact"`` (solver with the
    PML-consistent readout) or ``"discrete"`` (transposed recursion).
    """
    from .adjoint import run_adjoint
    from .discrete_adjoint import relative_gap, run_discrete_adjoint
    from .forward import run_forward

    if trials < 1:
        raise ValueError("trials must be at least 1")
    if radius is None:
        radius = 0.4 * min(e * (n - 1) for e, n in zip(model.grid.spacing, model.grid.shape))
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(trials):
        p0 = random_disk(model.grid, radius, rng)
        q = rng.standard_normal((len(model.sensors), model.grid.nt))
        lhs = float(np.vdot(run_forward(p0, model).data, q))
        if path == "discrete":
            adj = run_discrete_adjoint(q, model)
        elif path in ("analytic", "exact"):
            adj = run_adjoint(q, model, exact=(path == "exact"))
        else:
            raise ValueError(f"unknown adjoint path {path!r}")
        errs.append(relative_gap(lhs, float(np.vdot(p0, adj))))
    return SuiteResult(errs)

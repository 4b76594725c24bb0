import numpy as np
import pytest

from pavisco.forward import run_forward
from pavisco.grid import Grid
from pavisco.medium import MediumMaps
from pavisco.model import Model
from pavisco.pml import Pml
from pavisco.spectral import SpectralOperators


def rel(a, b) -> float:
    """Relative gap between two scalars or arrays, normalised by the larger norm."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return float(np.linalg.norm(a - b) / scale) if scale else 0.0


def small_grid(shape=(24, 20), dx=1e-3, c_p=1500.0, c_s=800.0, nt=40, cfl=0.3) -> Grid:
    return Grid.for_medium(shape, dx, c_p, c_s, cfl=cfl, nt=nt)


def random_solid(shape, rng, y=1.4, lossy=True) -> MediumMaps:
    """Smoothly varying elastic medium with positive bulk stiffness."""
    def bumpy(base, amp):
        return base * (1 + amp * rng.uniform(-1, 1, shape))
    c_p = bumpy(2000.0, 0.2)
    c_s = bumpy(700.0, 0.3)
    alpha = (lambda a: bumpy(a, 0.5)) if lossy else (lambda a: np.zeros(shape))
    return MediumMaps(bumpy(1200.0, 0.2), c_p, c_s, alpha(3.0), alpha(5.0), y)


def ring_sensors(grid: Grid, count=12, frac=0.35) -> np.ndarray:
    width = min((n - 1) * h for n, h in zip(grid.shape, grid.spacing))
    ang = np.linspace(0, 2 * np.pi, count, endpoint=False)
    pos = np.zeros((count, grid.ndim))
    pos[:, 0] = frac * width * np.cos(ang)
    pos[:, 1] = frac * width * np.sin(ang)
    return pos


def random_model(shape=(24, 20), seed=0, pml=3, nt=30, lossy=True, fluid=False) -> Model:
    rng = np.random.default_rng(seed)
    maps = random_solid(shape, rng, lossy=lossy)
    if fluid:
        maps = maps.replace(c_s=np.zeros(shape), alpha_s=np.zeros(shape))
    grid = Grid.for_medium(shape, 1e-3, maps.c_p, maps.c_s, nt=nt)
    return Model.build(grid, maps, Pml.build(grid, pml), ring_sensors(grid))


def factors(model):
    shape = model.grid.shape
    d = model.grid.ndim
    av = np.stack([np.stack([np.broadcast_to(model.a_v[m][i], shape) for i in range(d)]) for m in range(d)])
    as_ = np.stack([np.broadcast_to(a, shape) for a in model.a_s])[None]
    return av, as_


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def ops2d():
    return SpectralOperators(small_grid(), y=1.4)


@pytest.fixture
def ops3d():
    return SpectralOperators(small_grid((10, 8, 12)), y=1.4)


def tv_prox_reference(y, weight, iters=20000):
    """Constant-step primal-dual solve of ``min_{x>=0} weight TV(x) + 1/2 ||x - y||^2``.

    Independent of the accelerated dual solver under test: it iterates on the
    primal and dual together with ``tau = sigma = 1/sqrt(8)``.
    """
    from pavisco.recon import div, grad

    tau = sigma = 1 / np.sqrt(8)
    x = np.maximum(y, 0.0)
    x_bar = x.copy()
    p = np.zeros((y.ndim,) + y.shape)
    for _ in range(iters):
        q = p + sigma * grad(x_bar)
        p = q / np.maximum(1.0, np.sqrt((q**2).sum(0)) / weight)
        x_new = np.maximum((x + tau * div(p) + tau * y) / (1 + tau), 0.0)
        x_bar = 2 * x_new - x
        x = x_new
    return x


def plane_wave_attenuation(cfl=0.3, alpha_db=0.75, y=1.4, dx=1e-4, c=1500.0):
    """Measured and modelled attenuation (Np/m) of a plane pulse in a lossy fluid.

    A one-cell slab source launches a pulse along axis 0; the log spectral
    ratio between two on-node detectors 120 cells apart gives the measured
    attenuation.  Returns frequencies, measured, modelled and the spatial
    Nyquist frequency ``c / (2 dx)``.
    """
    from pavisco.medium import db_to_neper

    nx, ny = 512, 4
    maps = MediumMaps.homogeneous((nx, ny), rho=1000.0, c_p=c, c_s=0.0, alpha_p=alpha_db, alpha_s=0.0, y=y)
    x_src, x1, x2 = -100 * dx, -60 * dx, 60 * dx
    grid = Grid.for_medium((nx, ny), dx, c, 0.0, cfl=cfl, t_end=(x2 - x_src) / c + 6e-6)
    xs = grid.coordinates(0)
    p0 = np.repeat((np.abs(xs - x_src) < dx / 2).astype(float)[:, None], ny, axis=1)
    model = Model.build(grid, maps, Pml.build(grid, (20, 0)), np.array([[x1, 0.0], [x2, 0.0]]))
    data = run_forward(p0, model).data
    n = 8 * grid.nt
    spec = np.abs(np.fft.rfft(data, n=n, axis=1))
    f = np.fft.rfftfreq(n, grid.dt)
    measured = -np.log(spec[1] / spec[0]) / (x2 - x1)
    modelled = db_to_neper(alpha_db, y) * (2 * np.pi * f) ** y
    return f, measured, modelled, c / (2 * dx), grid.dt


def gaussian(g, width):
    X = np.meshgrid(*[g.coordinates(a) for a in range(g.ndim)], indexing="ij")
    return np.exp(-sum(x**2 for x in X) / (2 * width**2))


def pml_reentry_db(pml: int, n: int = 96) -> float:
    """Largest deviation from a reflection-free reference, relative to the outgoing peak (dB)."""
    dx, c = 1e-4, 1500.0
    nt = int(n / 0.3)
    ang = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    pos = 30 * dx * np.c_[np.cos(ang), np.sin(ang)]

    def run(size, layer):
        g = Grid.for_medium((size, size), dx, c, nt=nt)
        m = Model.build(g, MediumMaps.homogeneous((size, size), c_p=c), Pml.build(g, layer), pos)
        return run_forward(gaussian(g, 2 * dx), m).data

    ref = run(3 * n, 10)
    return float(20 * np.log10(np.abs(run(n, pml) - ref).max() / np.abs(ref).max()))

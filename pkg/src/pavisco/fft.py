"""Real-to-complex transforms over the trailing spatial axes.

Uses FFTW through ``pyfftw`` when it is installed and falls back to
``scipy.fft`` otherwise.  FFTW picks an algorithm per problem, and different
algorithms round differently, so plan choice must be reproducible for results
to be bit-identical across processes.  Two planners qualify:

* ``measure`` (default): ``FFTW_MEASURE`` plans whose choices are persisted as
  FFTW wisdom in a file and re-imported by later processes.  If the wisdom
  file cannot be read and written, planning drops to ``estimate``.
* ``estimate``: ``FFTW_ESTIMATE`` plans, chosen by heuristics alone.

Plans own scratch buffers, so they are kept per thread.
"""

from __future__ import annotations

import os
import tempfile
import threading
from pathlib import Path

import numpy as np
import scipy.fft as sfft

try:  # optional accelerator
    import pyfftw
except ImportError:  # pragma: no cover - exercised only without pyfftw
    pyfftw = None

BACKEND_ENV = "PAVISCO_FFT"
PLANNER_ENV = "PAVISCO_FFT_PLANNER"
WISDOM_ENV = "PAVISCO_FFT_WISDOM"

_wisdom_lock = threading.Lock()
_wisdom_state: dict = {}


def backend_name() -> str:
    want = os.environ.get(BACKEND_ENV, "auto").lower()
    if want == "scipy" or pyfftw is None:
        return "scipy"
    return "fftw"


def wisdom_path() -> Path:
    explicit = os.environ.get(WISDOM_ENV)
    if explicit:
        return Path(explicit)
    base = os.environ.get("XDG_CACHE_HOME") or Path.home() / ".cache"
    return Path(base) / "pavisco" / f"fftw-wisdom-{pyfftw.__version__}"


def _load_wisdom(path: Path) -> bool:
    """Import saved wisdom once per process; False if the file is unusable."""
    if path in _wisdom_state:
        return _wisdom_state[path]
    ok = True
    try:
        if path.exists():
            pyfftw.import_wisdom(tuple(path.read_bytes().split(b"\0")))
        path.parent.mkdir(parents=True, exist_ok=True)
        ok = os.access(path.parent, os.W_OK)
    except (OSError, ValueError):
        ok = False
    _wisdom_state[path] = ok
    return ok


def _save_wisdom(path: Path) -> None:
    """Atomically replace the wisdom file with this process's accumulated wisdom."""
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".wisdom-")
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"\0".join(pyfftw.export_wisdom()))
        os.replace(tmp, path)
    except OSError:
        _wisdom_state[path] = False


def planner_flag() -> str:
    """``FFTW_MEASURE`` when reproducible wisdom is available, else ``FFTW_ESTIMATE``."""
    if os.environ.get(PLANNER_ENV, "measure").lower() == "estimate":
        return "FFTW_ESTIMATE"
    return "FFTW_MEASURE" if _load_wisdom(wisdom_path()) else "FFTW_ESTIMATE"


class RealTransforms:
    """``rfftn``/``irfftn`` over the last ``ndim`` axes of arrays of any batch shape."""

    def __init__(self, shape: tuple[int, ...]):
        self.shape = tuple(shape)
        self.axes = tuple(range(-len(shape), 0))
        self.half = self.shape[:-1] + (self.shape[-1] // 2 + 1,)
        self.backend = backend_name()
        self._local = threading.local()

    def _plans(self) -> dict:
        plans = getattr(self._local, "plans", None)
        if plans is None:
            plans = self._local.plans = {}
        return plans

    def _plan(self, batch: tuple[int, ...], inverse: bool):
        key = (batch, inverse)
        plans = self._plans()
        if key not in plans:
            with _wisdom_lock:
                flag = planner_flag()
                real = pyfftw.empty_aligned(batch + self.shape, dtype=np.float64)
                cplx = pyfftw.empty_aligned(batch + self.half, dtype=np.complex128)
                before = pyfftw.export_wisdom() if flag == "FFTW_MEASURE" else None
                if inverse:
                    plans[key] = pyfftw.FFTW(cplx, real, axes=self.axes, direction="FFTW_BACKWARD",
                                             flags=(flag, "FFTW_DESTROY_INPUT"), threads=1)
                else:
                    plans[key] = pyfftw.FFTW(real, cplx, axes=self.axes, flags=(flag,), threads=1)
                if before is not None and pyfftw.export_wisdom() != before:
                    _save_wisdom(wisdom_path())
        return plans[key]

    def forward(self, u: np.ndarray) -> np.ndarray:
        if self.backend == "scipy":
            return sfft.rfftn(u, axes=self.axes)
        plan = self._plan(u.shape[: u.ndim - len(self.shape)], False)
        plan.input_array[...] = u
        plan.execute()
        return plan.output_array.copy()

    def inverse(self, uh: np.ndarray) -> np.ndarray:
        if self.backend == "scipy":
            return sfft.irfftn(uh, s=self.shape, axes=self.axes)
        plan = self._plan(uh.shape[: uh.ndim - len(self.shape)], True)
        plan.input_array[...] = uh
        plan.execute()  # FFTW leaves the inverse unnormalised
        return np.multiply(plan.output_array, 1.0 / plan.N)

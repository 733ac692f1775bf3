"""Time-domain simulation of LPO systems and trajectory comparison."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import NumericalError, ValidationError
from .system import LPOSystem

__all__ = [
    "InputSignal",
    "Trajectory",
    "error_metrics",
    "get_input",
    "read_trajectory_csv",
    "simulate",
    "write_trajectory_csv",
    "INPUTS",
]


@dataclass(frozen=True)
class InputSignal:
    """A named map ``t -> u(t)`` in ``R^m``."""

    name: str
    m: int
    func: Callable[[float], np.ndarray]
    params: tuple = ()

    def __call__(self, t: float) -> np.ndarray:
        u = np.asarray(self.func(t), dtype=float).reshape(self.m)
        return u

    @classmethod
    def zero(cls, m: int = 1) -> "InputSignal":
        return cls("zero", m, lambda t: np.zeros(m))

    @classmethod
    def step(cls, m: int = 1, amplitude: float = 1.0) -> "InputSignal":
        return cls("step", m, lambda t: np.full(m, amplitude if t >= 0 else 0.0),
                   (("amplitude", amplitude),))

    @classmethod
    def msd_input(cls, m: int = 2) -> "InputSignal":
        """``exp(-2t) sin(t/2)`` on every channel."""
        return cls("msd_input", m,
                   lambda t: np.full(m, math.exp(-2.0 * t) * math.sin(0.5 * t)))

    @classmethod
    def convdiff_input(cls, m: int = 1) -> "InputSignal":
        """``100/(t+1) sin(5t)`` on every channel."""
        return cls("convdiff_input", m,
                   lambda t: np.full(m, 100.0 / (t + 1.0) * math.sin(5.0 * t)))


INPUTS = {
    "zero": InputSignal.zero,
    "step": InputSignal.step,
    "msd_input": InputSignal.msd_input,
    "convdiff_input": InputSignal.convdiff_input,
}


def get_input(name: str, m: int) -> InputSignal:
    try:
        return INPUTS[name](m)
    except KeyError:
        raise ValidationError(
            f"unknown input {name!r}; choose from {sorted(INPUTS)}") from None


@dataclass
class Trajectory:
    times: np.ndarray
    outputs: np.ndarray
    states: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.outputs = np.asarray(self.outputs, dtype=float)
        if self.times.ndim != 1 or self.outputs.shape != self.times.shape:
            raise ValidationError("times and outputs must be 1-D of equal length")
        if self.states is not None and len(self.states) != len(self.times):
            raise ValidationError("states and times differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValidationError("times must be strictly increasing")


def _matvec(A):
    if sp.issparse(A):
        return A.__matmul__
    n = A.shape[0]
    # finite-difference operators are mostly zeros; CSR pays off there
    if n >= 64 and np.count_nonzero(A) < 0.1 * n * n:
        As = sp.csr_matrix(A)
        return As.__matmul__
    return A.__matmul__


def simulate(sys: LPOSystem, u: InputSignal, t_span: tuple[float, float],
             dt: float = 1e-3, x0: np.ndarray | None = None,
             store_states: bool = True) -> Trajectory:
    """Fixed-step classical Runge-Kutta integration of ``x' = A x + B u``.

    The number of steps is ``ceil((t1 - t0)/dt)`` and the step is shrunk
    so the grid ends exactly at ``t1``. The output is evaluated on the whole
    grid at once.
    """
    t0, t1 = map(float, t_span)
    if not dt > 0:
        raise ValidationError(f"dt must be > 0, got {dt}")
    if not t1 > t0:
        raise ValidationError(f"need t1 > t0, got ({t0}, {t1})")
    if u.m != sys.m:
        raise ValidationError(f"input has {u.m} channels, system needs {sys.m}")
    n = sys.n
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float).reshape(n)
    N = int(math.ceil((t1 - t0) / dt - 1e-9))
    h = (t1 - t0) / N
    times = t0 + h * np.arange(N + 1)
    Ax = _matvec(sys.A)
    B = sys.B
    X = np.empty((N + 1, n))
    X[0] = x
    Bu_next = B @ u(times[0])
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(N):
            t = times[i]
            Bu0 = Bu_next
            Bu_half = B @ u(t + 0.5 * h)
            Bu_next = B @ u(times[i + 1])
            k1 = Ax(x) + Bu0
            k2 = Ax(x + 0.5 * h * k1) + Bu_half
            k3 = Ax(x + 0.5 * h * k2) + Bu_half
            k4 = Ax(x + h * k3) + Bu_next
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise NumericalError(
                    f"state became non-finite at t={times[i + 1]:.6g}")
            X[i + 1] = x
    y = sys.output(X)
    if not np.all(np.isfinite(y)):
        bad = int(np.argmax(~np.isfinite(y)))
        raise NumericalError(f"output became non-finite at t={times[bad]:.6g}")
    return Trajectory(times, y, X if store_states else None)


def _series(tr):
    if isinstance(tr, Trajectory):
        return tr.times, tr.outputs
    return None, np.asarray(tr, dtype=float)


def error_metrics(y_ref, y_rom) -> dict:
    """Max-abs and trapezoidal L2 norms of the output difference.

    Accepts trajectories (their time grids must match) or plain arrays,
    which are then treated as unit-spaced samples.
    """
    t_a, a = _series(y_ref)
    t_b, b = _series(y_rom)
    if a.shape != b.shape:
        raise ValidationError(f"output lengths differ: {a.shape} vs {b.shape}")
    if t_a is not None and t_b is not None and not np.allclose(t_a, t_b,
                                                               rtol=0, atol=1e-12):
        raise ValidationError("time grids differ")
    t = t_a if t_a is not None else (t_b if t_b is not None
                                     else np.arange(a.size, dtype=float))
    err = np.abs(a - b)
    linf = float(err.max()) if err.size else 0.0
    l2 = float(math.sqrt(np.trapezoid(err**2, t))) if err.size > 1 else 0.0
    ref = float(np.abs(a).max()) if a.size else 0.0
    return {
        "linf": linf,
        "l2": l2,
        "linf_relative": linf / ref if ref > 0 else (0.0 if linf == 0 else math.inf),
        "pointwise": err,
    }


def write_trajectory_csv(path, fom: Trajectory, rom: Trajectory | None = None):
    """Write ``t,y`` or ``t,y,yhat,abs_err`` with 17 significant digits."""
    fmt = "{:.17g}".format
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if rom is None:
            w.writerow(["t", "y"])
            for t, y in zip(fom.times, fom.outputs):
                w.writerow([fmt(t), fmt(y)])
        else:
            err = error_metrics(fom, rom)["pointwise"]
            w.writerow(["t", "y", "yhat", "abs_err"])
            for row in zip(fom.times, fom.outputs, rom.outputs, err):
                w.writerow([fmt(v) for v in row])


def read_trajectory_csv(path) -> dict:
    """Read a trajectory CSV into ``{column: array}``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] not in (["t", "y"], ["t", "y", "yhat", "abs_err"]):
        raise ValidationError(f"{path}: unrecognized trajectory header")
    data = np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    return {name: data[:, j] for j, name in enumerate(rows[0])}

"""Time integration of df/dt = (1/Kn) P_N Q~(f) and state dumps."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from specboltz.conservation import ConservationProjector
from specboltz.diagnostics import MomentSet, moments
from specboltz.grid import VelocityGrid, build_grid
from specboltz.spectral import collide, forward_transform, inverse_transform
from specboltz.weights import WeightTable

log = logging.getLogger(__name__)

SCHEMES = ("euler", "rk2")


class SolverError(FloatingPointError):
    def __init__(self, step_index: int, message: str = "non-finite state"):
        super().__init__(f"{message} at step {step_index}")
        self.step_index = step_index


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    t_final: float
    Kn: float = 1.0
    scheme: str = "euler"
    output_every: int = 100

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_final >= 0:
            raise ValueError(f"t_final must be non-negative, got {self.t_final}")
        if not self.Kn > 0:
            raise ValueError(f"Kn must be positive, got {self.Kn}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if int(self.output_every) != self.output_every or self.output_every < 1:
            raise ValueError(f"output_every must be a positive integer, got {self.output_every}")

    def n_steps(self, t_start: float = 0.0) -> int:
        """Number of steps from ``t_start`` to ``t_final``; the span has to
        be a whole number of steps."""
        span = (self.t_final - t_start) / self.dt
        n = int(round(span))
        if n < 0 or abs(span - n) > 1e-6 * max(1.0, abs(span)):
            raise ValueError(f"t_final - t_start = {self.t_final - t_start} is not a "
                             f"whole number of steps of dt = {self.dt}")
        return n


@dataclass
class StepStats:
    """Worst per-evaluation checks seen so far."""

    evaluations: int = 0
    max_imag_residue: float = 0.0
    max_mass_defect: float = 0.0

    def record(self, residue: float, mass_defect: float) -> None:
        self.evaluations += 1
        self.max_imag_residue = max(self.max_imag_residue, residue)
        self.max_mass_defect = max(self.max_mass_defect, mass_defect)


def collision_rhs(f, table: WeightTable, proj: ConservationProjector, grid: VelocityGrid,
                  Kn: float = 1.0, stats: StepStats | None = None) -> np.ndarray:
    """(1/Kn) P_N Q~(f) on the nodes."""
    qhat = collide(forward_transform(f, grid), table, grid)
    if not np.all(np.isfinite(qhat)):
        raise FloatingPointError("non-finite collision integral")
    q, residue = inverse_transform(qhat, grid, return_residue=True)
    if stats is not None:
        stats.record(residue, abs(float(np.sum(grid.quad_weights * q))))
    return proj.project(q) / Kn


def step(f_values, table: WeightTable, proj: ConservationProjector, grid: VelocityGrid,
         config: SolverConfig, stats: StepStats | None = None, index: int = 0,
         dt: float | None = None) -> np.ndarray:
    """Advance one step; ``dt`` overrides ``config.dt`` (used by the
    consistency tests, e.g. dt = 0)."""
    dt = config.dt if dt is None else dt
    f = np.asarray(f_values, dtype=float).reshape(grid.shape)
    if not np.all(np.isfinite(f)):
        raise SolverError(index, "non-finite input state")
    if dt == 0:
        return f.copy()
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            k1 = collision_rhs(f, table, proj, grid, config.Kn, stats)
            if config.scheme == "euler":
                out = f + dt * k1
            else:
                mid = f + 0.5 * dt * k1
                out = f + dt * collision_rhs(mid, table, proj, grid, config.Kn, stats)
    except SolverError:
        raise
    except FloatingPointError as exc:
        raise SolverError(index, str(exc)) from exc
    if not np.all(np.isfinite(out)):
        raise SolverError(index)
    return out


@dataclass(frozen=True)
class Record:
    step: int
    t: float
    moments: MomentSet
    f: np.ndarray = field(repr=False)


@dataclass
class RunResult:
    f: np.ndarray
    t: float
    records: list
    stats: StepStats


def run(f0, config: SolverConfig, table: WeightTable, proj: ConservationProjector,
        grid: VelocityGrid, sinks=(), t_start: float = 0.0,
        keep_states: bool = True) -> RunResult:
    """Integrate from ``t_start`` to ``config.t_final``.

    A :class:`Record` goes to every sink (a callable) at step 0, every
    ``output_every`` steps and at the final step.  Sinks with a ``close``
    method are closed when the run ends, also on failure, so partial output
    reaches disk.  With ``keep_states=False`` the returned records drop
    their state snapshots (sinks still receive them).
    """
    table.check_matches(grid)
    f = np.array(f0, dtype=float).reshape(grid.shape)
    n = config.n_steps(t_start)
    stats = StepStats()
    records = []

    def emit(k, t):
        snap = f.copy()
        snap.setflags(write=False)
        rec = Record(k, t, moments(snap, grid), snap)
        for sink in sinks:
            sink(rec)
        records.append(rec if keep_states else Record(k, t, rec.moments, None))

    try:
        emit(0, t_start)
        for k in range(1, n + 1):
            f = step(f, table, proj, grid, config, stats, index=k)
            if k % config.output_every == 0 or k == n:
                emit(k, t_start + k * config.dt)
    finally:
        for sink in sinks:
            close = getattr(sink, "close", None)
            if close is not None:
                close()
    t_end = t_start + n * config.dt
    log.info("run finished at t=%g after %d steps (max imag residue %.2e)", t_end, n,
             stats.max_imag_residue)
    return RunResult(f, t_end, records, stats)


# ---------------------------------------------------------------------------
# state dumps

STATE_MAGIC = b"BFS1"
STATE_VERSION = 1
_STATE_HEADER = struct.Struct("<4sIIdd")


class StateFileError(ValueError):
    pass


def save_state(path, f_values, grid: VelocityGrid, t: float) -> None:
    """Header (magic, version, N, L, t), N^3 little-endian f64 values in
    node order, u64 count footer."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(np.asarray(f_values, dtype=float).reshape(-1), dtype="<f8")
    if data.size != grid.M:
        raise ValueError(f"expected {grid.M} values, got {data.size}")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_STATE_HEADER.pack(STATE_MAGIC, STATE_VERSION, grid.N, grid.L, t))
        fh.write(data.tobytes())
        fh.write(struct.pack("<Q", data.size))
    tmp.replace(path)


def load_state(path) -> tuple[np.ndarray, VelocityGrid, float]:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _STATE_HEADER.size:
        raise StateFileError(f"{path}: truncated header")
    magic, version, N, L, t = _STATE_HEADER.unpack_from(blob)
    if magic != STATE_MAGIC:
        raise StateFileError(f"{path}: bad magic {magic!r}")
    if version != STATE_VERSION:
        raise StateFileError(f"{path}: unsupported version {version}")
    count = N**3
    expected = _STATE_HEADER.size + 8 * count + 8
    if len(blob) != expected:
        raise StateFileError(f"{path}: size {len(blob)} bytes, expected {expected}")
    (footer,) = struct.unpack_from("<Q", blob, expected - 8)
    if footer != count:
        raise StateFileError(f"{path}: entry-count footer mismatch")
    f = np.frombuffer(blob, dtype="<f8", count=count, offset=_STATE_HEADER.size)
    grid = build_grid(N, L)
    return f.astype(float).reshape(grid.shape), grid, t

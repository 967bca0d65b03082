"""Flat ``key = value`` run configuration.

Example::

    # Coulomb, grazing limit
    N = 16
    L = 5
    lambda = -3
    kernel = grazing
    eps = 1e-4
    dt = 1e-3
    t_final = 5
    ic = shell

Unknown keys are rejected so that typos cannot silently fall back to
defaults.  ``kernel`` is ``isotropic``, ``grazing`` or ``tabulated:<path>``.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from specboltz.diagnostics import INITIAL_CONDITIONS
from specboltz.grid import VelocityGrid, build_grid
from specboltz.kernels import GrazingRutherford, IsotropicConstant, KernelSpec, load_tabulated
from specboltz.solver import SCHEMES, SolverConfig
from specboltz.weights import OPERATORS, kernel_metadata

CACHE_ENV = "SPECBOLTZ_CACHE_DIR"


class ConfigError(ValueError):
    pass


def _text(x):
    return str(x)


_FIELDS = {
    "N": int,
    "L": float,
    "lambda": float,
    "beta": float,
    "kernel": _text,
    "eps": float,
    "operator": _text,
    "Kn": float,
    "dt": float,
    "t_final": float,
    "scheme": _text,
    "ic": _text,
    "output_dir": _text,
    "cache_path": _text,
    "output_every": int,
}


@dataclass(frozen=True)
class RunConfig:
    N: int = 16
    L: float = 5.0
    lam: float = 0.0
    beta: float = 1.0
    kernel: str = "isotropic"
    eps: float = 1e-4
    operator: str = "boltzmann"
    Kn: float = 1.0
    dt: float = 1e-3
    t_final: float = 1.0
    scheme: str = "euler"
    ic: str = "shell"
    output_dir: str = "output"
    cache_path: str = ""
    output_every: int = 100

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise ConfigError(f"operator must be one of {OPERATORS}, got {self.operator!r}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.ic not in INITIAL_CONDITIONS:
            raise ConfigError(f"ic must be one of {sorted(INITIAL_CONDITIONS)}, got {self.ic!r}")
        name = self.kernel.split(":", 1)[0]
        if name not in ("isotropic", "grazing", "tabulated"):
            raise ConfigError(f"kernel must be isotropic, grazing or tabulated:<path>, "
                              f"got {self.kernel!r}")
        if name == "tabulated" and ":" not in self.kernel:
            raise ConfigError("tabulated kernel needs a file: kernel = tabulated:<path>")

    # derived objects ------------------------------------------------------

    def grid(self) -> VelocityGrid:
        try:
            return build_grid(self.N, self.L)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def kernel_spec(self) -> KernelSpec:
        name = self.kernel.split(":", 1)[0]
        try:
            if name == "isotropic":
                angular = IsotropicConstant(1.0 / (4.0 * np.pi))
            elif name == "grazing":
                angular = GrazingRutherford(self.eps)
            else:
                angular = load_tabulated(self.kernel.split(":", 1)[1])
            return KernelSpec(self.lam, angular, self.beta)
        except (ValueError, OSError) as exc:
            raise ConfigError(f"bad kernel: {exc}") from None

    def table_metadata(self) -> dict:
        kernel = None if self.operator == "landau" else self.kernel_spec()
        return kernel_metadata(kernel, self.operator, self.lam)

    def solver_config(self) -> SolverConfig:
        try:
            return SolverConfig(dt=self.dt, t_final=self.t_final, Kn=self.Kn,
                                scheme=self.scheme, output_every=self.output_every)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def cache_file(self) -> Path:
        """Explicit ``cache_path`` or a parameter-derived name inside the
        directory given by $SPECBOLTZ_CACHE_DIR (default ~/.cache/specboltz)."""
        if self.cache_path:
            return Path(self.cache_path)
        root = Path(os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "specboltz")
        if self.operator == "landau":
            tag = "landau"
        else:
            name = self.kernel.split(":", 1)[0]
            if name == "grazing":
                tag = f"grazing{self.eps!r}"
            elif name == "tabulated":
                data = Path(self.kernel.split(":", 1)[1]).read_bytes()
                tag = "tab" + hashlib.sha256(data).hexdigest()[:8]
            else:
                tag = "iso"
            tag += f"_beta{self.beta!r}"
        return root / f"{self.operator}_N{self.N}_L{self.L!r}_lam{self.lam!r}_{tag}.bwt"

    def effective(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        out["cache_path"] = str(self.cache_file())
        return out


def parse_config(text: str) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _FIELDS[key](val)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {val!r} for {key}") from None
    if "lambda" in values:
        values["lam"] = values.pop("lambda")
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)

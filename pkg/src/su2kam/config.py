"""Run configuration: a flat TOML file, validated with line-referenced messages."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .lattice import FrequencyDirection, GroupSpec, default_frequency
from .linop import CUBIC, LINEAR, ForcingSpec, NlsModel, Truncation, default_forcing


class ConfigError(ValueError):
    """Invalid configuration; the message starts with ``path:line:``."""


@dataclass(frozen=True)
class RunConfig:
    group: str = "su2"
    d: int = 2
    omega_raw: tuple = (1.0, math.sqrt(2.0) - 1.0)
    omega_scan_range: int = 200
    mass: float = 1.0
    eps: float = 1e-3
    eps_sweep: tuple = ()
    gamma: float | None = 1e-2
    gamma_exponent_S: float = 2.0
    gamma_sweep: tuple = (1e-2, 3e-3, 1e-3)
    tau: float = 5.0
    s0: float = 2.0
    s: float = 4.0
    N0: int = 4
    max_steps: int = 4
    M_max: int = 24
    L_max: int = 6
    H_cap: int = 6
    lambda_min: float = 0.5
    lambda_max: float = 1.5
    lambda_grid_size: int = 200
    forcing_mode: str = LINEAR
    potential: tuple = ()
    profile: tuple = ()
    series_tol: float = 1e-14
    accept_residual_relative: float = 1e-6
    smallness_eps_over_gamma: float = 0.5
    sieve_L_max: int = 8
    sieve_M_max: int = 80
    sieve_grid_size: int = 2000
    sieve_mode: str = "audited"
    sieve_spectrum: str = "reduction"
    stability_lambda: float = 0.9317
    stability_M_max: int = 12
    stability_t_end_per_inverse_eps: float = 100.0
    stability_modes: int = 3
    integrator_rtol: float = 1e-10
    workers: int = 0
    seed: int = 0
    output_dir: str = "runs"
    source: str = field(default="", compare=False)

    @property
    def group_spec(self) -> GroupSpec:
        return GroupSpec.from_kind(self.group)

    @property
    def gamma_value(self) -> float:
        if self.gamma is None:
            return self.eps ** (1.0 / self.gamma_exponent_S)
        return self.gamma

    def lambda_grid(self):
        import numpy as np
        return np.linspace(self.lambda_min, self.lambda_max, self.lambda_grid_size)

    def frequency(self) -> FrequencyDirection:
        return default_frequency(self.d, self.omega_scan_range, self.omega_raw)

    def forcing(self) -> ForcingSpec:
        g = self.group_spec
        if self.forcing_mode == LINEAR and not self.potential:
            return default_forcing(self.d, g)
        pot = [(r[: self.d], r[self.d], r[self.d + 1], r[self.d + 2]) for r in self.potential]
        prof = [(r[: self.d], r[self.d], r[self.d + 1], r[self.d + 2]) for r in self.profile]
        return ForcingSpec.from_records(self.forcing_mode, pot, prof, g)

    def model(self, eps: float | None = None, M_max: int | None = None) -> NlsModel:
        return NlsModel(self.group_spec, self.d, self.frequency(), self.mass, self.eps if eps is None else eps,
                        self.forcing(), Truncation(self.L_max, self.M_max if M_max is None else M_max, self.H_cap))

    def schedule(self, model: NlsModel | None = None):
        from .kam_driver import Schedule
        model = model or self.model()
        return Schedule.for_model(model, N0=self.N0, max_steps=self.max_steps, tau=self.tau, gamma=self.gamma_value,
                                  s0=self.s0, s=self.s, series_tol=self.series_tol,
                                  accept_residual=self.accept_residual_relative,
                                  smallness=self.smallness_eps_over_gamma)

    def as_dict(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name == "source":
                continue
            v = getattr(self, f.name)
            out[f.name] = [list(x) if isinstance(x, tuple) else x for x in v] if isinstance(v, tuple) else v
        return out

    def manifest(self) -> dict:
        return {"config": self.as_dict(), "version": __version__}

    def manifest_hash(self) -> str:
        blob = json.dumps(self.manifest(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.manifest_hash()


_FIELDS = {f.name: f for f in fields(RunConfig) if f.name != "source"}


def _line_of(text: str, key: str) -> int:
    pat = re.compile(rf"^[ \t]*{re.escape(key)}[ \t]*=", re.M)
    m = pat.search(text)
    return text.count("\n", 0, m.start()) + 1 if m else 0


def _coerce(name: str, value, default):
    if name in ("potential", "profile"):
        return tuple(tuple(float(x) for x in r) for r in value)
    if name == "gamma":
        if value in ("auto", None):
            return None
        return float(value)
    if isinstance(default, tuple):
        return tuple(float(x) for x in value)
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int):
        if isinstance(value, float) and not value.is_integer():
            raise TypeError("expected an integer")
        return int(value)
    if isinstance(default, float):
        return float(value)
    return str(value)


def validate(cfg: RunConfig, text: str = "", path: str = "<config>", sieve: bool = False) -> None:
    """Raise ConfigError naming the offending line."""

    def fail(key, msg):
        raise ConfigError(f"{path}:{_line_of(text, key)}: {key}: {msg}")

    if cfg.group not in ("su2", "so3"):
        fail("group", f"unknown group {cfg.group!r} (expected su2 or so3)")
    if cfg.d < 1:
        fail("d", "must be at least 1")
    if len(cfg.omega_raw) != cfg.d:
        fail("omega_raw", f"needs {cfg.d} components")
    if cfg.tau <= cfg.d:
        fail("tau", f"tau = {cfg.tau:g} must exceed d = {cfg.d}")
    if sieve and cfg.tau <= cfg.d + 2:
        fail("tau", f"sieve runs need tau > d + 2 = {cfg.d + 2}, got {cfg.tau:g}")
    if cfg.s0 <= (cfg.d + 1) / 2:
        fail("s0", f"s0 = {cfg.s0:g} must exceed (d + 1)/2 = {(cfg.d + 1) / 2:g}")
    if cfg.s < cfg.s0:
        fail("s", "must be at least s0")
    if cfg.N0 < 2:
        fail("N0", "must be at least 2")
    if cfg.max_steps < 0:
        fail("max_steps", "must be nonnegative")
    if cfg.mass <= 0:
        fail("mass", "must be positive")
    if cfg.eps < 0:
        fail("eps", "must be nonnegative")
    if cfg.gamma is not None and cfg.gamma < 0:
        fail("gamma", "must be nonnegative")
    if cfg.M_max < 0 or cfg.L_max < 1 or cfg.H_cap < 1:
        fail("M_max", "truncations must be positive")
    if not cfg.lambda_min < cfg.lambda_max:
        fail("lambda_max", "must exceed lambda_min")
    if cfg.lambda_grid_size < 1:
        fail("lambda_grid_size", "must be positive")
    if cfg.forcing_mode not in (LINEAR, CUBIC):
        fail("forcing_mode", f"unknown mode {cfg.forcing_mode!r}")
    if cfg.sieve_mode not in ("audited", "literal", "none"):
        fail("sieve_mode", "expected audited, literal or none")
    if cfg.sieve_spectrum not in ("reduction", "unperturbed"):
        fail("sieve_spectrum", "expected reduction or unperturbed")
    for key in ("potential", "profile"):
        for r in getattr(cfg, key):
            if len(r) != cfg.d + 3:
                fail(key, f"records need d + 3 = {cfg.d + 3} numbers (h, label, re, im)")
    try:
        cfg.forcing()
    except ValueError as exc:
        fail("potential" if cfg.forcing_mode == LINEAR else "profile", str(exc))
    try:
        cfg.frequency()
    except ValueError as exc:
        fail("omega_raw", str(exc))


def load(path, sieve: bool = False) -> RunConfig:
    path = str(path)
    text = Path(path).read_text()
    return loads(text, path, sieve)


def loads(text: str, path: str = "<config>", sieve: bool = False) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    kw = {}
    for key, value in raw.items():
        if key not in _FIELDS:
            raise ConfigError(f"{path}:{_line_of(text, key)}: {key}: unknown key")
        default = _FIELDS[key].default
        try:
            kw[key] = _coerce(key, value, default)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}:{_line_of(text, key)}: {key}: {exc}") from None
    cfg = dataclasses.replace(RunConfig(), **kw, source=path)
    validate(cfg, text, path, sieve)
    return cfg

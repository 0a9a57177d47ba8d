"""Run configuration: TOML parsing, validation, and the documented schema.

Configs are flat typed key-value files with nested sections.  Every run is
fully determined by the config plus its master seed; outputs are
byte-for-byte reproducible.  The only environment override honored is
MFLAB_OUTPUT_DIR (output directory).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .core import DensityModel, PhaseConfig, TrigKernel, rough_kernel, smooth_kernel, zero_kernel
from .dynamics import IntegratorSpec
from .observables import Observable, parse_observable

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config_dict", "schema_text"]

EXPERIMENTS = ("weak-error", "kappa-scaling", "duality-check", "conservation", "selftest")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the offending dotted path."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


_SCHEMA = {
    "experiment": {
        "kind": (str, "selftest", f"one of {', '.join(EXPERIMENTS)}"),
    },
    "phase": {
        "sigma": (float, 0.0, "velocity diffusion coefficient, >= 0"),
        "horizon": (float, 0.5, "simulation horizon T > 0"),
    },
    "kernel": {
        "kind": (str, "smooth", "smooth | rough | zero"),
        "amplitudes": (list, [0.5, 0.2], "smooth: sine amplitudes for modes 1..len"),
        "s": (float, 1.0, "rough: Sobolev index s > 0"),
        "max_mode": (int, 32, "rough: highest sine mode"),
        "sign_seed": (int, 7, "rough: seed fixing the amplitude sign pattern"),
    },
    "density": {
        "kind": (str, "analytic_steady", "analytic_steady | perturbed_oracle"),
        "profile": (str, "gaussian", "gaussian | cosine_bump"),
        "theta": (float, 1.0, "gaussian velocity variance"),
        "bump_halfwidth": (float, 4.0, "cosine_bump support half-width"),
        "eps": (float, 0.0, "perturbed_oracle: x-perturbation amplitude in [0,1)"),
        "mode": (int, 1, "perturbed_oracle: x-perturbation mode"),
        "oracle_size": (int, 0, "perturbed_oracle: reference particle count M"),
    },
    "plan": {
        "n_grid": (list, [64, 128, 256, 512, 1024], "strictly increasing particle counts"),
        "replicas": (int, 2000, "independent replicas R >= 2"),
        "observable": (str, "v^2", "psi: trig polynomial in x times polynomial in v"),
        "orders": (list, [1, 2], "moment orders m (weak-error) or n (kappa-scaling)"),
        "times": (list, [0.25, 0.5], "observation times, each <= horizon"),
        "master_seed": (int, 20260810, "master seed; replica streams derive from it"),
    },
    "integrator": {
        "method": (str, "rk4", "rk4 | velocity_verlet | euler_maruyama"),
        "dt": (float, 1e-3, "time step (> 0); default tuned for T = 0.5"),
    },
    "estimator": {
        "coupled": (bool, True, "subtract the free-transport twin (steady density only)"),
        "fallback_to_perturbed": (bool, True, "rerun degenerate steady weak-error "
                                              "series with a perturbed configuration"),
    },
    "duality": {
        "n_particles": (int, 8, "N for duality checks (<= 16; <= 3 for conservation)"),
        "m": (int, 1, "terminal observable order"),
        "samples": (int, 20000, "Monte Carlo samples for the identity rhs"),
        "gl_nodes": (int, 8, "Gauss-Legendre nodes for the time integral"),
        "control_variate": (bool, True, "subtract the free-flow observable "
                                        "(exactly mean-zero) from the identity rhs"),
        "grid_nx": (int, 10, "conservation check: x nodes per axis"),
        "grid_nv": (int, 10, "conservation check: v nodes per axis"),
        "grid_vmax": (float, 4.5, "conservation check: velocity truncation"),
        "dt_scan": (list, [0.05, 0.025, 0.0125], "coarse steps for the dt^4 residual scan"),
    },
    "output": {
        "dir": (str, "out", "output directory (env MFLAB_OUTPUT_DIR overrides)"),
        "emit_svg": (bool, True, "write log-log SVG plots"),
        "dump_trajectories": (bool, False, "write per-step trajectory CSV (small runs only)"),
    },
    "run": {
        "workers": (int, 0, "backend threads; 0 = available parallelism"),
    },
}


@dataclass
class RunConfig:
    raw: dict
    path: str = ""
    config_hash: str = ""

    def __getitem__(self, section: str) -> dict:
        return self.raw[section]

    # constructed domain objects ------------------------------------------------

    def phase(self) -> PhaseConfig:
        p = self.raw["phase"]
        return PhaseConfig(sigma=p["sigma"], horizon=p["horizon"])

    def kernel(self) -> TrigKernel:
        k = self.raw["kernel"]
        if k["kind"] == "zero":
            return zero_kernel()
        if k["kind"] == "smooth":
            return smooth_kernel(k["amplitudes"])
        return rough_kernel(k["s"], max_mode=k["max_mode"], sign_seed=k["sign_seed"])

    def density(self) -> DensityModel:
        d = self.raw["density"]
        return DensityModel(kind=d["kind"], profile=d["profile"], theta=d["theta"],
                            bump_halfwidth=d["bump_halfwidth"], eps=d["eps"],
                            mode=d["mode"], oracle_size=d["oracle_size"])

    def integrator(self) -> IntegratorSpec:
        i = self.raw["integrator"]
        return IntegratorSpec(method=i["method"], dt=i["dt"])

    def observable(self) -> Observable:
        return parse_observable(self.raw["plan"]["observable"])

    def output_dir(self) -> str:
        return os.environ.get("MFLAB_OUTPUT_DIR") or self.raw["output"]["dir"]


def _coerce(key: str, value, want: type):
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if want is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if want is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if want is list:
        if not isinstance(value, list):
            raise ConfigError(key, f"expected a list, got {value!r}")
        return list(value)
    raise AssertionError(want)


def _validate(cfg: dict) -> None:
    exp = cfg["experiment"]["kind"]
    if exp not in EXPERIMENTS:
        raise ConfigError("experiment.kind", f"must be one of {EXPERIMENTS}, got {exp!r}")
    if cfg["phase"]["sigma"] < 0:
        raise ConfigError("phase.sigma", "must be >= 0")
    if cfg["phase"]["horizon"] <= 0:
        raise ConfigError("phase.horizon", "must be > 0")
    if cfg["kernel"]["kind"] not in ("smooth", "rough", "zero"):
        raise ConfigError("kernel.kind", "must be smooth, rough, or zero")
    if cfg["kernel"]["kind"] == "rough" and cfg["kernel"]["s"] <= 0:
        raise ConfigError("kernel.s", "must be > 0")
    plan = cfg["plan"]
    grid = plan["n_grid"]
    if any(not isinstance(n, int) or n < 2 for n in grid):
        raise ConfigError("plan.n_grid", "entries must be integers >= 2")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("plan.n_grid", "must be strictly increasing")
    if plan["replicas"] < 2:
        raise ConfigError("plan.replicas", "must be >= 2")
    if any(not isinstance(m, int) or not 1 <= m <= 6 for m in plan["orders"]):
        raise ConfigError("plan.orders", "orders must be integers in 1..6")
    if any(t < 0 or t > cfg["phase"]["horizon"] + 1e-12 for t in plan["times"]):
        raise ConfigError("plan.times", "times must lie in [0, horizon]")
    try:
        parse_observable(plan["observable"])
    except ValueError as exc:
        raise ConfigError("plan.observable", str(exc)) from exc
    if cfg["integrator"]["dt"] <= 0:
        raise ConfigError("integrator.dt", "must be > 0")
    if cfg["integrator"]["method"] not in ("rk4", "velocity_verlet", "euler_maruyama"):
        raise ConfigError("integrator.method", "unknown method")
    d = cfg["density"]
    if d["kind"] not in ("analytic_steady", "perturbed_oracle"):
        raise ConfigError("density.kind", "unknown density kind")
    if d["profile"] not in ("gaussian", "cosine_bump"):
        raise ConfigError("density.profile", "unknown profile")
    if d["theta"] <= 0:
        raise ConfigError("density.theta", "must be > 0")
    if d["kind"] == "perturbed_oracle":
        if not 0 <= d["eps"] < 1:
            raise ConfigError("density.eps", "must lie in [0, 1)")
        if d["oracle_size"] < 100 * max(grid):
            raise ConfigError("density.oracle_size",
                              f"must be >= 100 * max(n_grid) = {100 * max(grid)}")
    du = cfg["duality"]
    if not 2 <= du["n_particles"] <= 16:
        raise ConfigError("duality.n_particles", "must lie in 2..16")
    if du["m"] < 1:
        raise ConfigError("duality.m", "must be >= 1")
    if cfg["run"]["workers"] < 0:
        raise ConfigError("run.workers", "must be >= 0")


def parse_config_dict(data: dict, path: str = "") -> RunConfig:
    cfg: dict = {}
    for section, keys in _SCHEMA.items():
        given = data.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(section, "expected a section (table)")
        parsed = {}
        for key, (want, default, _doc) in keys.items():
            if key in given:
                parsed[key] = _coerce(f"{section}.{key}", given[key], want)
            else:
                parsed[key] = default
        unknown = set(given) - set(keys)
        if unknown:
            raise ConfigError(f"{section}.{sorted(unknown)[0]}", "unknown key")
        cfg[section] = parsed
    unknown_sections = set(data) - set(_SCHEMA)
    if unknown_sections:
        raise ConfigError(sorted(unknown_sections)[0], "unknown section")
    _validate(cfg)
    # the hash identifies the experiment, not its destination
    hashable = {k: dict(v) for k, v in cfg.items()}
    hashable["output"]["dir"] = ""
    canon = json.dumps(hashable, sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(canon.encode()).hexdigest()[:16]
    return RunConfig(raw=cfg, path=path, config_hash=digest)


def load_config(path: str) -> RunConfig:
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("<file>", f"TOML parse error: {exc}") from exc
    return parse_config_dict(data, path=path)


def schema_text() -> str:
    lines = ["# mflab run configuration (TOML). All keys optional; defaults shown.", ""]
    for section, keys in _SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (want, default, doc) in keys.items():
            if want is bool:
                shown = "true" if default else "false"
            elif want is str:
                shown = f'"{default}"'
            else:
                shown = json.dumps(default)
            lines.append(f"{key} = {shown}  # {doc}")
        lines.append("")
    return "\n".join(lines)

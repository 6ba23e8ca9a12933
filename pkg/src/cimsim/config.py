"""Experiment configuration: strict schema over a TOML file.

Physics-relevant fields (the sigma sweep and adc_bits) must be explicit;
unknown keys are rejected so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .crossbar import EnergyParams
from .device import DeviceParams
from .profiler import POLICIES


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    seed: int
    output_dir: str
    adc_bits: int
    sigmas: list
    policies: list
    thresholds: list = field(default_factory=list)
    max_wordlines: int = 16
    hrs_ratio: float = math.inf
    resample_per_read: bool = False
    group_rows_exact: bool = False
    array_rows: int = 128
    array_cols: int = 128
    arrays_per_pe: int = 64
    n_pes: int = 1
    noc_hops: int = 2
    noc_latency_cycles: int = 4
    energy: EnergyParams = field(default_factory=EnergyParams)
    network: str = "synthetic_cnn"
    images: int = 2
    profile_samples: int = 16
    profile_policy: str = "zero_skip"
    robust_mass: float = 0.1
    trials: int = 8
    workers: int = 1

    def device(self, sigma: float) -> DeviceParams:
        return DeviceParams(sigma=sigma, adc_bits=self.adc_bits,
                            max_wordlines=self.max_wordlines,
                            hrs_ratio=self.hrs_ratio,
                            resample_per_read=self.resample_per_read,
                            group_rows_exact=self.group_rows_exact)


_SCHEMA = {
    None: {"seed", "output_dir"},
    "device": {"adc_bits", "max_wordlines", "hrs_ratio", "resample_per_read",
               "group_rows_exact"},
    "array": {"rows", "cols"},
    "pe": {"arrays_per_pe"},
    "chip": {"n_pes", "noc_hops", "noc_latency_cycles"},
    "energy": {"adc_read_pj", "wordline_pj", "shift_add_pj", "register_pj",
               "noc_hop_pj_per_byte"},
    "workload": {"network", "images"},
    "profile": {"samples", "policy", "robust_mass"},
    "sweep": {"sigmas", "policies", "thresholds", "trials", "workers"},
}


def _reject_unknown(data: dict) -> None:
    for key, value in data.items():
        if isinstance(value, dict):
            if key not in _SCHEMA:
                raise ConfigError(f"unknown section [{key}]")
            unknown = set(value) - _SCHEMA[key]
            if unknown:
                raise ConfigError(f"unknown keys in [{key}]: {sorted(unknown)}")
        elif key not in _SCHEMA[None]:
            raise ConfigError(f"unknown top-level key {key!r}")


def _require(data: dict, section: str, key: str):
    try:
        return data[section][key]
    except KeyError:
        raise ConfigError(f"[{section}] {key} must be set explicitly") from None


def parse_config_text(text: str) -> ExperimentConfig:
    data = tomllib.loads(text)
    _reject_unknown(data)

    if "seed" not in data:
        raise ConfigError("seed must be set explicitly")
    adc_bits = _require(data, "device", "adc_bits")
    sigmas = _require(data, "sweep", "sigmas")
    policies = _require(data, "sweep", "policies")

    if not isinstance(adc_bits, int) or not 1 <= adc_bits <= 6:
        raise ConfigError(f"adc_bits must be an integer in [1, 6], got {adc_bits}")
    if not sigmas:
        raise ConfigError("sweep.sigmas must be non-empty")
    for s in sigmas:
        if not 0.0 <= s <= 0.5:
            raise ConfigError(f"sigma {s} outside [0, 0.5]")
    if not policies:
        raise ConfigError("sweep.policies must be non-empty")
    for p in policies:
        if p not in POLICIES:
            raise ConfigError(f"unknown policy {p!r}; choose from {POLICIES}")
    thresholds = data.get("sweep", {}).get("thresholds", [])
    if "counting_cards" in policies and not thresholds:
        raise ConfigError("counting_cards requires sweep.thresholds")
    for t in thresholds:
        if not t > 0:
            raise ConfigError(f"threshold {t} must be > 0")

    dev = data.get("device", {})
    energy = EnergyParams(**data.get("energy", {}))
    cfg = ExperimentConfig(
        seed=int(data["seed"]),
        output_dir=str(data.get("output_dir", "out")),
        adc_bits=adc_bits,
        sigmas=[float(s) for s in sigmas],
        policies=list(policies),
        thresholds=[float(t) for t in thresholds],
        max_wordlines=int(dev.get("max_wordlines", 16)),
        hrs_ratio=float(dev.get("hrs_ratio", math.inf)),
        resample_per_read=bool(dev.get("resample_per_read", False)),
        group_rows_exact=bool(dev.get("group_rows_exact", False)),
        array_rows=int(data.get("array", {}).get("rows", 128)),
        array_cols=int(data.get("array", {}).get("cols", 128)),
        arrays_per_pe=int(data.get("pe", {}).get("arrays_per_pe", 64)),
        n_pes=int(data.get("chip", {}).get("n_pes", 1)),
        noc_hops=int(data.get("chip", {}).get("noc_hops", 2)),
        noc_latency_cycles=int(data.get("chip", {}).get("noc_latency_cycles", 4)),
        energy=energy,
        network=str(data.get("workload", {}).get("network", "synthetic_cnn")),
        images=int(data.get("workload", {}).get("images", 2)),
        profile_samples=int(data.get("profile", {}).get("samples", 16)),
        profile_policy=str(data.get("profile", {}).get("policy", "zero_skip")),
        robust_mass=float(data.get("profile", {}).get("robust_mass", 0.1)),
        trials=int(data.get("sweep", {}).get("trials", 8)),
        workers=int(data.get("sweep", {}).get("workers", 1)),
    )
    if cfg.max_wordlines < (1 << cfg.adc_bits) - 1:
        raise ConfigError("max_wordlines below the distinguishable ADC levels")
    if cfg.profile_policy not in ("zero_skip", "baseline"):
        raise ConfigError("profile.policy must be zero_skip or baseline")
    if not 0.0 <= cfg.robust_mass < 0.5:
        raise ConfigError("profile.robust_mass must be in [0, 0.5)")
    if cfg.trials < 1 or cfg.workers < 1 or cfg.images < 1 or cfg.profile_samples < 1:
        raise ConfigError("trials, workers, images, and profile samples must be >= 1")
    return cfg


def parse_config(path) -> ExperimentConfig:
    with open(path, "rb") as f:
        text = f.read().decode()
    return parse_config_text(text)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int,)):
        return str(v)
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize {type(v)}")


def serialize_config(cfg: ExperimentConfig) -> str:
    e = cfg.energy
    lines = [
        f"seed = {cfg.seed}",
        f"output_dir = {_toml_value(cfg.output_dir)}",
        "",
        "[device]",
        f"adc_bits = {cfg.adc_bits}",
        f"max_wordlines = {cfg.max_wordlines}",
        f"hrs_ratio = {_toml_value(cfg.hrs_ratio)}",
        f"resample_per_read = {_toml_value(cfg.resample_per_read)}",
        f"group_rows_exact = {_toml_value(cfg.group_rows_exact)}",
        "",
        "[array]",
        f"rows = {cfg.array_rows}",
        f"cols = {cfg.array_cols}",
        "",
        "[pe]",
        f"arrays_per_pe = {cfg.arrays_per_pe}",
        "",
        "[chip]",
        f"n_pes = {cfg.n_pes}",
        f"noc_hops = {cfg.noc_hops}",
        f"noc_latency_cycles = {cfg.noc_latency_cycles}",
        "",
        "[energy]",
        f"adc_read_pj = {_toml_value(e.adc_read_pj)}",
        f"wordline_pj = {_toml_value(e.wordline_pj)}",
        f"shift_add_pj = {_toml_value(e.shift_add_pj)}",
        f"register_pj = {_toml_value(e.register_pj)}",
        f"noc_hop_pj_per_byte = {_toml_value(e.noc_hop_pj_per_byte)}",
        "",
        "[workload]",
        f"network = {_toml_value(cfg.network)}",
        f"images = {cfg.images}",
        "",
        "[profile]",
        f"samples = {cfg.profile_samples}",
        f"policy = {_toml_value(cfg.profile_policy)}",
        f"robust_mass = {_toml_value(cfg.robust_mass)}",
        "",
        "[sweep]",
        f"sigmas = {_toml_value(cfg.sigmas)}",
        f"policies = {_toml_value(cfg.policies)}",
        f"thresholds = {_toml_value(cfg.thresholds)}",
        f"trials = {cfg.trials}",
        f"workers = {cfg.workers}",
    ]
    return "\n".join(lines) + "\n"

"""Run configuration: TOML files with strict keys, overridable from the command line."""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    d_model: int = 64
    n_enc_layers: int = 4
    n_dec_layers: int = 4
    ffn: int = 128
    max_len: int = 64


@dataclass
class PretrainSection:
    epochs: int = 40
    lr: float = 3e-3
    stale_fraction: float = 0.1  # share of samples pretrained on an outdated target


@dataclass
class AdapterSection:
    n_experts: int = 5
    top_k: int = 1
    lam: float = 1.0
    gate_noise_std: float = 0.1
    gate_init_std: float = 0.0  # 0 means 1/sqrt(d_model)
    encoder_layer: int = 2
    decoder_layer: int = 3


@dataclass
class EditSection:
    steps: int = 200
    stop_loss: float = 1e-3
    lr_cap: float = 1e-4
    lr_mol: float = 2e-5
    tau_cap: float = 0.9
    tau_mol: float = 0.9
    samples_cap: int = 2  # samples per edit request
    samples_mol: int = 1


@dataclass
class BenchSection:
    low: float = 0.2
    high: float = 0.95
    loc_size: int = 20
    gen_variants: int = 1
    max_edits: int = 10
    corpus_size: int = 200


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelSection = field(default_factory=ModelSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    adapter: AdapterSection = field(default_factory=AdapterSection)
    edit: EditSection = field(default_factory=EditSection)
    bench: BenchSection = field(default_factory=BenchSection)

    def as_dict(self) -> dict:
        return asdict(self)

    def edit_lr(self, task: str) -> float:
        return self.edit.lr_cap if task == "cap" else self.edit.lr_mol

    def tau(self, task: str) -> float:
        return self.edit.tau_cap if task == "cap" else self.edit.tau_mol

    def samples_per_edit(self, task: str) -> int:
        return self.edit.samples_cap if task == "cap" else self.edit.samples_mol


def _merge(obj, data: dict, where: str):
    known = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key {where}{key!r}")
        current = getattr(obj, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key!r} must be a table")
            _merge(current, value, f"{where}{key}.")
            continue
        if isinstance(current, bool) or not isinstance(value, (int, float, str, bool)):
            raise ConfigError(f"config key {where}{key!r} has unsupported value {value!r}")
        if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if type(value) is not type(current):
            raise ConfigError(f"config key {where}{key!r} expects {type(current).__name__}, got {type(value).__name__}")
        setattr(obj, key, value)
    return obj


def from_dict(data: dict) -> RunConfig:
    return _merge(RunConfig(), data, "")


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(data)


def override(cfg: RunConfig, dotted: str) -> RunConfig:
    """Apply one ``section.key=value`` override, parsing the value as TOML."""
    if "=" not in dotted:
        raise ConfigError(f"override {dotted!r} is not of the form key=value")
    key, raw = dotted.split("=", 1)
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    data: dict = {}
    node = data
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return _merge(cfg, data, "")

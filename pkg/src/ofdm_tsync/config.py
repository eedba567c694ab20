"""Flat key-value run configuration (YAML or JSON file, plus overrides).

Recognised keys and defaults are listed in :data:`DEFAULTS`. Unknown keys
are rejected so typos fail loudly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from .channel import ChannelSpec
from .errors import ConfigurationError
from .evaluation import METHODS, SweepSpec
from .frame import FrameSpec
from .pipeline import DatasetSpec, TrainConfig

CONFIG_ENV = "OFDM_TSYNC_CONFIG"

DEFAULTS: dict = {
    # frame
    "n": 128, "ng": 32, "nd": 128, "nlag": 160, "zc_root": 25, "seed": 0,
    # channel
    "l": 20, "eta": 0.2, "snr_db": 12.0, "tau_max": 24,
    # dataset
    "nt": 50_000, "snr_lo": 0.0, "snr_hi": 20.0,
    # network and training
    "channels": 4, "bn_epsilon": 1e-5, "bn_momentum": 0.9,
    "epochs": 40, "batch_size": 128, "lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps_adam": 1e-8,
    "patience": 8, "val_fraction": 0.1, "loss": "bce",
    # sweep
    "snr_points": [0.0, 4.0, 8.0, 12.0, 16.0, 20.0], "l_values": [20], "eta_values": [0.2],
    "trials": 10_000, "methods": list(METHODS), "alpha": 0.3, "tolerance": 0,
    # execution and files
    "workers": 1, "dataset_path": "dataset.bin", "model_path": "model.cnn", "out_dir": "results",
}


@dataclass(frozen=True)
class RunConfig:
    values: dict

    @classmethod
    def resolve(cls, path: str | os.PathLike | None = None, overrides: dict | None = None) -> "RunConfig":
        """Defaults, then the config file (explicit path or ``$OFDM_TSYNC_CONFIG``), then overrides."""
        merged = dict(DEFAULTS)
        path = path or os.environ.get(CONFIG_ENV)
        if path:
            merged.update(load_file(path))
        merged.update(overrides or {})
        unknown = sorted(set(merged) - set(DEFAULTS))
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(merged)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    def frame(self) -> FrameSpec:
        v = self.values
        return FrameSpec(n=int(v["n"]), ng=int(v["ng"]), nd=int(v["nd"]), nlag=int(v["nlag"]),
                         zc_root=int(v["zc_root"]), seed=int(v["seed"]))

    def channel(self) -> ChannelSpec:
        v = self.values
        return ChannelSpec(l=int(v["l"]), eta=float(v["eta"]), snr_db=float(v["snr_db"]),
                           tau_max=int(v["tau_max"]))

    def dataset(self) -> DatasetSpec:
        v = self.values
        return DatasetSpec(nt=int(v["nt"]), snr_range_db=(float(v["snr_lo"]), float(v["snr_hi"])),
                           channel=self.channel(), frame=self.frame(), seed=int(v["seed"]))

    def training(self) -> TrainConfig:
        v = self.values
        return TrainConfig(epochs=int(v["epochs"]), batch_size=int(v["batch_size"]),
                           learning_rate=float(v["lr"]), beta1=float(v["beta1"]), beta2=float(v["beta2"]),
                           eps_adam=float(v["eps_adam"]), patience=int(v["patience"]),
                           val_fraction=float(v["val_fraction"]), loss=str(v["loss"]), seed=int(v["seed"]))

    def sweep(self) -> SweepSpec:
        v = self.values
        return SweepSpec(
            snr_points_db=tuple(float(x) for x in _as_list(v["snr_points"])),
            l_values=tuple(int(x) for x in _as_list(v["l_values"])),
            eta_values=tuple(float(x) for x in _as_list(v["eta_values"])),
            trials_per_point=int(v["trials"]),
            methods=tuple(str(x) for x in _as_list(v["methods"])),
            seed=int(v["seed"]), tau_max=int(v["tau_max"]),
            alpha=float(v["alpha"]), tolerance=int(v["tolerance"]),
        )

    def validate(self) -> None:
        # building every component runs its invariant checks
        try:
            self.frame()
            self.channel().validate_against(self.frame())
            self.dataset()
            self.training()
            self.sweep()
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(str(exc)) from exc
        if int(self.values["workers"]) < 1:
            raise ConfigurationError("workers must be >= 1")

    def as_dict(self) -> dict:
        return dict(self.values)


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def load_file(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {p}: {exc}") from exc
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {p} must hold a key-value mapping")
    return {k: _numeric(v) for k, v in data.items()}


def parse_override(item: str) -> tuple[str, object]:
    """``key=value`` with the value parsed as YAML (numbers, lists, strings)."""
    if "=" not in item:
        raise ConfigurationError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    return key.strip(), _numeric(yaml.safe_load(raw))


def _numeric(v):
    # YAML 1.1 reads exponent forms without a dot ("1e-3") as strings
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            return v
    if isinstance(v, list):
        return [_numeric(x) for x in v]
    return v

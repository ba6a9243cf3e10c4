"""Flat key/value run configuration.

The file format is a TOML-compatible subset: `key = value` lines with
string, integer, float, and boolean values, dotted keys, [section] headers,
and # comments. Every knob has a default; unknown keys are rejected so that
typos fail loudly. `dump()` emits a text that reloads to the identical
configuration, which is written at the start of every run.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

from .block import POOLING_MODES, RESUME_MODES, RfnConfig
from .data import ORIENTATION_POLICIES
from .losses import KERNEL_FORMS, LossConfig

_INT_RE = re.compile(r"^[+-]?\d+$")

DEFAULTS: dict[str, object] = {
    "data.image_size": 32,
    "data.classes": 4,
    "data.train_size": 2048,
    "data.test_size": 1024,
    "data.noise": 0.1,
    "data.policy": "uniform_random",
    "data.seed": 1,
    "model.block": "rfn",
    "rfn.n": 4,
    "rfn.r": 8,
    "rfn.pooling": "max",
    "rfn.resume": "sum",
    "rfn.stage": 3,
    "rfn.uniform_omega": False,
    "loss.sigma": 1.0,
    "loss.sigma_mode": "fixed",
    "loss.kernel_form": "distance",
    "loss.lambda_reg": 0.2,
    "loss.lambda_ri": 0.5,
    "optim.lr": 0.01,
    "optim.momentum": 0.9,
    "optim.weight_decay": 0.0005,
    "optim.lr_decay": 0.95,
    "optim.lr_decay_every": 10,
    "optim.init_std": 0.01,
    "train.epochs": 20,
    "train.batch_size": 32,
    "train.seed": 0,
    "train.rotate_target": "features",
    "train.ri_angle_sample": False,
}

_ENUMS = {
    "data.policy": ORIENTATION_POLICIES,
    "model.block": ("rfn", "identity"),
    "rfn.pooling": POOLING_MODES,
    "rfn.resume": RESUME_MODES,
    "rfn.stage": (1, 2, 3),
    "loss.sigma_mode": ("fixed", "median"),
    "loss.kernel_form": KERNEL_FORMS,
    "train.rotate_target": ("features", "images"),
}


class ConfigError(ValueError):
    pass


def _parse_value(raw: str, key: str):
    raw = raw.strip()
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        return raw[1:-1]
    if raw in ("true", "false"):
        return raw == "true"
    if _INT_RE.match(raw):
        return int(raw)
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse value {raw!r} for key {key!r}") from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, float):
        text = repr(value)
        return text if ("." in text or "e" in text or "inf" in text) else text + ".0"
    return str(value)


def _strip_comment(line: str) -> str:
    out = []
    in_string = False
    for ch in line:
        if ch == '"':
            in_string = not in_string
        if ch == "#" and not in_string:
            break
        out.append(ch)
    return "".join(out)


@dataclass
class RunConfig:
    values: dict[str, object] = field(default_factory=lambda: dict(DEFAULTS))

    def __getitem__(self, key: str):
        if key not in self.values:
            raise ConfigError(f"unknown configuration key {key!r}")
        return self.values[key]

    def set(self, key: str, value):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown configuration key {key!r}")
        default = DEFAULTS[key]
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"key {key!r} expects a boolean, got {value!r}")
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"key {key!r} expects an integer, got {value!r}")
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"key {key!r} expects a number, got {value!r}")
            value = float(value)
        elif isinstance(default, str) and not isinstance(value, str):
            raise ConfigError(f"key {key!r} expects a string, got {value!r}")
        if key in _ENUMS and value not in _ENUMS[key]:
            raise ConfigError(f"key {key!r} must be one of {_ENUMS[key]}, got {value!r}")
        self.values[key] = value

    def apply_overrides(self, pairs: list[str]):
        """--set style overrides: each entry is 'key=value' in file syntax."""
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override {pair!r} is not of the form key=value")
            key, raw = pair.split("=", 1)
            key = key.strip()
            self.set(key, _parse_value(raw, key))
        return self

    def load_text(self, text: str):
        section = ""
        for lineno, raw_line in enumerate(text.splitlines(), 1):
            line = _strip_comment(raw_line).strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
            key, raw = line.split("=", 1)
            key = key.strip()
            full = f"{section}.{key}" if section else key
            self.set(full, _parse_value(raw, full))
        return self

    def load_file(self, path):
        with open(path, "r", encoding="utf-8") as fh:
            return self.load_text(fh.read())

    def dump(self) -> str:
        lines = [f"{key} = {_format_value(self.values[key])}" for key in sorted(self.values)]
        return "\n".join(lines) + "\n"

    # typed accessors for the harness

    def rfn_config(self) -> RfnConfig:
        return RfnConfig(n=self["rfn.n"], r=self["rfn.r"], pooling=self["rfn.pooling"],
                         resume=self["rfn.resume"], insertion_stage=self["rfn.stage"],
                         uniform_omega=self["rfn.uniform_omega"]).validate()

    def loss_config(self) -> LossConfig:
        return LossConfig(sigma=self["loss.sigma"], lambda_reg=self["loss.lambda_reg"],
                          lambda_ri=self["loss.lambda_ri"],
                          kernel_form=self["loss.kernel_form"],
                          sigma_mode=self["loss.sigma_mode"]).validate()


def default_config() -> RunConfig:
    return RunConfig()


def config_from_text(text: str) -> RunConfig:
    return RunConfig().load_text(text)

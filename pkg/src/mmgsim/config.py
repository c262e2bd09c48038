"""Run configuration: defaults, JSON file loading, flag overrides and the
reproducibility stamp written next to every output."""
from __future__ import annotations

import json
import math
import os
import platform
import subprocess
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .env import EnvConfig
from .masac import SacConfig
from .runner import TrainConfig

OUTPUT_ROOT_ENV = "MMGSIM_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # run
    seed: int = 0
    episodes: int = 200
    scene: int = 1
    output_dir: str = "runs/default"
    profile_csv: Optional[str] = None
    profile_days: int = 30
    profile_archetype: str = "winter"
    eval_days: int = 30
    eval_seed_offset: int = 1000
    warmup_steps: int = 512
    updates_per_step: int = 1
    checkpoint_every: int = 50
    max_seconds: Optional[float] = None
    # actor-critic
    gamma: float = 0.95
    tau: float = 0.005
    lr_critic: float = 5e-5
    lr_actor: float = 5e-6
    lr_alpha: float = 3e-3
    alpha_init: float = math.log(0.01)
    hidden: int = 64
    critic_kind: str = "mixed"
    batch_size: int = 256
    buffer_size: int = 100_000
    divergence_limit: float = 1e6
    # bidders
    wolf_gamma: float = 0.8
    delta_win: float = 0.05
    delta_lose: float = 0.1
    eps_start: float = 0.3
    eps_end: float = 0.01
    # system
    n_units: tuple = (4, 6, 5)
    pv_rated: tuple = (400.0, 400.0, 400.0)
    wt_rated: tuple = (300.0, 200.0, 200.0)
    gb_max: tuple = (1000.0, 600.0, 1000.0)
    cr0: float = 3000.0
    eta_charge: float = 0.95
    eta_discharge: float = 0.95
    p_ss_max: float = 400.0
    soc0_min: float = 0.1
    soc0_max: float = 0.9
    soc_init: float = 0.5
    replace_at_end_of_life: bool = True
    trade_cap_e: float = 400.0
    trade_cap_h: float = 300.0
    grid_cap_e: float = 400.0
    grid_cap_h: float = 300.0
    eta_gb: float = 0.9
    eta_orc: float = 0.1
    penalty_m: float = 100.0
    reward_scale: float = 100.0
    mutual_trade_penalty: float = 0.1
    price_file: Optional[str] = None

    def validate(self) -> "RunConfig":
        if self.scene not in (1, 2, 3):
            raise ConfigError(f"scene must be 1, 2 or 3, got {self.scene}")
        if self.episodes < 1:
            raise ConfigError("episodes must be at least 1")
        if self.critic_kind not in ("mixed", "mlp"):
            raise ConfigError(f"critic_kind must be 'mixed' or 'mlp', got {self.critic_kind!r}")
        if not self.delta_lose > self.delta_win:
            raise ConfigError("delta_lose must exceed delta_win")
        for name in ("n_units", "pv_rated", "wt_rated", "gb_max"):
            if len(getattr(self, name)) != 3:
                raise ConfigError(f"{name} needs one value per microgrid")
        return self

    # ------------------------------------------------------------ views

    def sac(self) -> SacConfig:
        return SacConfig(**{f.name: getattr(self, f.name) for f in fields(SacConfig)})

    def env(self) -> EnvConfig:
        return EnvConfig(**{f.name: getattr(self, f.name) for f in fields(EnvConfig)})

    def train(self) -> TrainConfig:
        kw = {f.name: getattr(self, f.name) for f in fields(TrainConfig) if hasattr(self, f.name)}
        return TrainConfig(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, value):
    default = getattr(RunConfig, name, None)
    if isinstance(default, tuple):
        if isinstance(value, str):
            value = [v for v in value.split(",") if v]
        return tuple(type(default[0])(v) for v in value)
    if value is None:
        return None
    if isinstance(default, bool):
        if isinstance(value, str):
            return value.lower() in ("1", "true", "yes")
        return bool(value)
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if name == "max_seconds":
        return float(value)
    return value


def build_config(file: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Defaults, then the JSON file, then explicit overrides; unknown keys are errors."""
    values: dict = {}
    if file:
        try:
            loaded = json.loads(Path(file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {file}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        values.update(loaded)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(values) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    try:
        kw = {k: _coerce(k, v) for k, v in values.items()}
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    return RunConfig(**kw).validate()


def resolve_output(path: str) -> Path:
    """Relative output paths hang off $MMGSIM_OUTPUT_ROOT when it is set."""
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    p.mkdir(parents=True, exist_ok=True)
    return p


def version_stamp() -> dict:
    stamp = {"package": __version__, "python": platform.python_version(), "numpy": np.__version__}
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
        stamp["git"] = out.stdout.strip() or None
    except (OSError, subprocess.SubprocessError):
        stamp["git"] = None
    return stamp


def write_echo(out: Path, command: str, config: dict) -> None:
    """Config echo plus version stamp; the only file carrying wall-clock data is run-meta.json."""
    (out / "config.json").write_text(json.dumps({"command": command, "config": config}, indent=2,
                                                sort_keys=True))
    (out / "version.json").write_text(json.dumps(version_stamp(), indent=2, sort_keys=True))

"""Run configuration: resolved defaults, flat key-value config files, and
fingerprinting for reproducibility checks.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

from .env import EnvConfig
from .agent import LossConfig
from .variants import get_variant


@dataclass
class TrainConfig:
    variant: str = "lala"
    n_agents: int = 3
    episodes: int = 20000
    seed: int = 0
    eval_episodes: int = 1000
    # environment
    side_length: float = 15.0
    step_distance: float = 1.0
    max_steps: int = 30
    reach_radius: float = 0.5
    # buffers and sampling
    replay_capacity: int = 1500
    batch_size: int = 32
    graph_capacity: int = 10
    state_buffer_capacity: int = 5000
    sample_set_size: int = 32      # M
    warmup_threshold: int = 64     # state-buffer size gate before sampling starts
    # loss weights
    gamma: float = 0.95
    rho1: float = 1.0
    rho2: float = 0.001
    rho3: float = 0.001
    lam: float = 0.3
    mu: float = 0.3
    # advisor network
    gcn_layers: int = 2
    advisor_epochs: int = 5
    # learning rates
    agent_lr: float = 0.01
    advisor_lr: float = 0.1
    disc_lr: float = 0.01
    # exploration schedule
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.6
    # cadence and logging
    update_every: int = 1
    log_interval: int = 25
    mi_interval: int = 500
    mi_first_probe: int = 200
    mi_pairs: int = 2000
    mi_steps: int = 400
    write_trace: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        get_variant(self.variant)
        for name in ("n_agents", "episodes", "eval_episodes", "replay_capacity",
                     "batch_size", "graph_capacity", "state_buffer_capacity",
                     "sample_set_size", "warmup_threshold", "gcn_layers",
                     "advisor_epochs", "update_every", "log_interval",
                     "mi_interval", "mi_first_probe", "mi_pairs", "mi_steps",
                     "max_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive count")
        for name in ("agent_lr", "advisor_lr", "disc_lr", "side_length",
                     "step_distance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        # raises on inconsistent values
        self.env_config()
        self.loss_config()

    def env_config(self) -> EnvConfig:
        return EnvConfig(n_agents=self.n_agents, side_length=self.side_length,
                         step_distance=self.step_distance, max_steps=self.max_steps,
                         reach_radius=self.reach_radius)

    def loss_config(self) -> LossConfig:
        return LossConfig(gamma=self.gamma, rho1=self.rho1, rho2=self.rho2,
                          rho3=self.rho3, lam=self.lam)

    def to_text(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def shared_fingerprint(self) -> str:
        """Fingerprint over everything except the variant wiring tag."""
        lines = [ln for ln in self.to_text().splitlines()
                 if not ln.startswith("variant ")]
        return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config_text(text: str, overrides: dict | None = None) -> TrainConfig:
    """Parse `key = value` lines; '#' starts a comment; unknown keys are errors."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    if overrides:
        for key, val in overrides.items():
            if val is None:
                continue
            if key not in _FIELD_TYPES:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = val
    return TrainConfig(**values)


def load_config(path, overrides: dict | None = None) -> TrainConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config_text(f.read(), overrides)


def save_config(config: TrainConfig, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(config.to_text())
        f.write(f"# fingerprint = {config.fingerprint()}\n")

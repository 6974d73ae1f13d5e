"""Noise-schedule and training configuration.

Config files are flat ``key = value`` text; keys match ``TrainConfig`` field
names exactly. Named presets carrying per-dataset hyperparameters ship inside
the package under ``scone/presets/``.
"""

from __future__ import annotations

import dataclasses
import math
from importlib import resources

import numpy as np


class ConfigError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class SdeSchedule:
    """Geometric variance-exploding noise schedule sigma(t) on t in [0, 1].

    The continuous schedule is discretized on a grid of ``total_steps + 1``
    points; ``sampling_steps`` is how many grid steps the stochastic sampler
    actually walks (from step N down to 0).
    """

    sigma_min: float = 0.01
    sigma_max: float = 50.0
    total_steps: int = 100
    sampling_steps: int = 10

    def __post_init__(self):
        if not (0.0 < self.sigma_min < self.sigma_max):
            raise ConfigError(
                f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}")
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")
        if not (1 <= self.sampling_steps <= self.total_steps):
            raise ConfigError(
                f"need 1 <= sampling_steps <= total_steps, got {self.sampling_steps}")
        grid = self.sigma_min * (self.sigma_max / self.sigma_min) ** (
            np.arange(self.total_steps + 1, dtype=np.float64) / self.total_steps)
        object.__setattr__(self, "sigma_grid", grid)

    sigma_grid: np.ndarray = dataclasses.field(init=False, repr=False, compare=False)

    def sigma_at(self, step: int) -> float:
        """sigma at grid step ``step``, i.e. sigma_min * (sigma_max/sigma_min)^(step/T)."""
        if not (0 <= step <= self.total_steps):
            raise IndexError(
                f"step {step} outside [0, {self.total_steps}]")
        return float(self.sigma_min * math.pow(
            self.sigma_max / self.sigma_min, step / self.total_steps))

    def perturbation_var(self, step: int) -> float:
        """Variance of the forward kernel at ``step``: sigma^2(n/T) - sigma^2(0)."""
        s = self.sigma_at(step)
        return s * s - self.sigma_min * self.sigma_min

    def step_var(self, i: int) -> float:
        """sigma^2(i+1) - sigma^2(i), the per-step variance of the reverse walk."""
        hi = self.sigma_at(i + 1)
        lo = self.sigma_at(i)
        return hi * hi - lo * lo


@dataclasses.dataclass
class TrainConfig:
    lambda1: float = 0.5       # contrastive loss weight
    lambda2: float = 1e-4      # L2 weight
    tau: float = 0.2           # InfoNCE temperature
    w: float = 0.8             # positive-injection weight for hard negatives
    batch_size: int = 2048
    learning_rate: float = 0.001
    embed_dim: int = 64
    n_layers: int = 2
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    use_cl: bool = True
    use_hard_neg: bool = True
    sigma_min: float = 0.01
    sigma_max: float = 50.0
    total_steps: int = 100
    sampling_steps: int = 10
    eval_k: int = 20
    l2_mode: str = "batch"            # "batch" or "full"
    infonce_mode: str = "split"       # "split" (users and items separately) or "joint"
    update_order: str = "simultaneous"  # or "theta_first" / "phi_first"
    dtype: str = "float32"

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.lambda1 < 0:
            raise ConfigError(f"lambda1 must be >= 0, got {self.lambda1}")
        if self.lambda2 < 0:
            raise ConfigError(f"lambda2 must be >= 0, got {self.lambda2}")
        if not (0.0 <= self.w <= 1.0):
            raise ConfigError(f"w must lie in [0, 1], got {self.w}")
        for name in ("batch_size", "embed_dim", "max_epochs", "eval_k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_layers < 0 or self.patience < 0:
            raise ConfigError("n_layers and patience must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.l2_mode not in ("batch", "full"):
            raise ConfigError(f"unknown l2_mode {self.l2_mode!r}")
        if self.infonce_mode not in ("split", "joint"):
            raise ConfigError(f"unknown infonce_mode {self.infonce_mode!r}")
        if self.update_order not in ("simultaneous", "theta_first", "phi_first"):
            raise ConfigError(f"unknown update_order {self.update_order!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def schedule(self) -> SdeSchedule:
        return SdeSchedule(self.sigma_min, self.sigma_max,
                           self.total_steps, self.sampling_steps)

    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for config key {key!r}: {raw!r}") from None


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key = value`` lines into a TrainConfig; unknown keys are errors."""
    values = dataclasses.asdict(base if base is not None else TrainConfig())
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return TrainConfig(**values)


def load_config(path_or_preset: str) -> TrainConfig:
    """Load a config file from disk, falling back to a packaged preset name.

    ``presets/<name>`` and bare ``<name>`` both resolve to the packaged preset
    when no file exists at the given path.
    """
    import os

    if os.path.isfile(path_or_preset):
        with open(path_or_preset, "r", encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    name = path_or_preset
    if name.startswith("presets/"):
        name = name[len("presets/"):]
    try:
        text = (resources.files("scone") / "presets" / name).read_text(encoding="utf-8")
    except (FileNotFoundError, TypeError):
        raise ConfigError(
            f"no config file at {path_or_preset!r} and no preset named {name!r}") from None
    return parse_config_text(text)


def preset_names() -> list:
    root = resources.files("scone") / "presets"
    return sorted(p.name for p in root.iterdir() if p.is_file())

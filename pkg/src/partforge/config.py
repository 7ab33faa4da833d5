"""Run configuration: JSON config files, flag overrides, run directories."""

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .models import GenLossConfig
from .partgen import TrainConfig

RUNS_ENV = "PARTFORGE_RUNS"


class ConfigError(ValueError):
    """Bad config file or unknown key (a usage error at the CLI)."""


@dataclass
class PathsConfig:
    data: str = "data"
    runs: str = "runs"


@dataclass
class RunConfig:
    category: str = "chair"
    resolution: int = 32
    latent_dim: int = 16
    seed: int = 0
    threads: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def train_config(self):
        """TrainConfig with the top-level latent_dim/seed taking precedence."""
        cfg = dataclasses.replace(self.train, latent_dim=self.latent_dim, seed=self.seed)
        return cfg

    def runs_root(self):
        env = os.environ.get(RUNS_ENV)
        return Path(env) if env else Path(self.paths.runs)

    def to_dict(self):
        return dataclasses.asdict(self)


def _check_keys(data, cls, prefix=""):
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown config key {prefix + key!r}")


def _build(cls, data, prefix=""):
    _check_keys(data, cls, prefix)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if f.name == "train":
            kwargs[f.name] = _build(TrainConfig, value, "train.")
        elif f.name == "paths":
            kwargs[f.name] = _build(PathsConfig, value, "paths.")
        elif f.name == "loss":
            _check_keys(value, GenLossConfig, prefix + "loss.")
            kwargs[f.name] = GenLossConfig(**value)
        else:
            kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path=None):
    """Load a RunConfig from JSON; unknown keys are rejected."""
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return _build(RunConfig, data)


def apply_overrides(config, overrides):
    """Apply CLI flag overrides; keys use dots for nesting (train.vae_epochs)."""
    for key, value in overrides.items():
        if value is None:
            continue
        target = config
        *parents, leaf = key.split(".")
        for p in parents:
            target = getattr(target, p)
        if not hasattr(target, leaf):
            raise ConfigError(f"unknown config key {key!r}")
        setattr(target, leaf, value)
    # re-validate the train block after overrides
    config.train.__post_init__()
    return config


def prepare_run_dir(config, command, out=None):
    """Create a fresh run directory; never reuses or mutates an old one."""
    if out is not None:
        run_dir = Path(out)
        if run_dir.exists() and any(run_dir.iterdir()):
            raise ConfigError(f"output directory {run_dir} exists and is not empty")
    else:
        root = config.runs_root()
        idx = 0
        while True:
            run_dir = root / f"{command}-seed{config.seed}-{idx:03d}"
            if not run_dir.exists():
                break
            idx += 1
    run_dir.mkdir(parents=True, exist_ok=True)
    echo = run_dir / "run_config.json"
    with open(echo, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return run_dir


def write_run_manifest(run_dir, command, inputs, outputs):
    """Record what a run consumed and produced (no timestamps: reruns match).

    Output paths are stored relative to the run directory so a rerun into
    a different directory produces byte-identical manifests.
    """
    run_dir = Path(run_dir)

    def rel(o):
        try:
            return str(Path(o).relative_to(run_dir))
        except ValueError:
            return str(o)

    manifest = {
        "command": command,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": sorted(rel(o) for o in outputs),
    }
    with open(run_dir / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

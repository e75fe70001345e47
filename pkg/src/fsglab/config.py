"""Run configuration: a small dotted-key text dialect with strict schema.

Format: one `key = value` per line, `#` starts a comment, blank lines are
ignored.  Nesting is spelled with dots (`base_optimizer.lr = 0.001`).
Unknown keys are rejected.  `save_config` emits the canonical form (sorted
keys, shortest round-tripping float repr), so load -> save -> load is the
identity and the canonical bytes are stable enough to hash.

An empty file is a valid config: every field has a default.  Defaults
follow the experiment-setup table this lab is derived from (beta = 0.3,
history length l = 6, hyper optimizer Adam at 1e-3, learning-rate decay x0.1
every 30 epochs).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import ConfigError
from .trainer import LrDecay, OptimizerConfig, TrainConfig

_DEFAULT_LAYERS = [
    "dense:2:32", "bias:32", "relu",
    "dense:32:32:bin", "relu",
    "dense:32:2", "bias:2",
]

# key -> (type tag, default); type tags: int, float, str, bool, list
_SCHEMA = {
    "method": ("str", "fsg"),
    "alpha": ("float", 1.0),
    "beta": ("float", 0.3),
    "l": ("int", 6),
    "hyper_lr": ("float", 1e-3),
    "epochs": ("int", 100),
    "batch_size": ("int", 64),
    "seed": ("int", 0),
    "slow_kind": ("str", "selective-ssm"),
    "fast_kind": ("str", "mlp"),
    "bit_width": ("int", 1),
    "fast_hidden": ("int", 100),
    "token_dim": ("int", 16),
    "state_dim": ("int", 8),
    "expand": ("int", 2),
    "scan_chunk": ("int", 128),
    "history_source": ("str", "raw"),
    "record_timing": ("bool", False),
    "base_optimizer.kind": ("str", "adam"),
    "base_optimizer.lr": ("float", 1e-3),
    "base_optimizer.momentum": ("float", 0.0),
    "base_optimizer.beta1": ("float", 0.9),
    "base_optimizer.beta2": ("float", 0.999),
    "base_optimizer.eps": ("float", 1e-8),
    "lr_decay.every": ("int", 30),
    "lr_decay.factor": ("float", 0.1),
    "dataset.kind": ("str", "spirals"),
    "dataset.classes": ("int", 2),
    "dataset.n_per_class": ("int", 200),
    "dataset.test_per_class": ("int", 0),
    "dataset.noise": ("float", 0.15),
    "dataset.seed": ("int", 1),
    "dataset.images_path": ("str", ""),
    "dataset.labels_path": ("str", ""),
    "dataset.test_images_path": ("str", ""),
    "dataset.test_labels_path": ("str", ""),
    "model.layers": ("list", _DEFAULT_LAYERS),
    "output_dir": ("str", "runs/out"),
    "bench.dim": ("int", 10),
    "bench.noise": ("float", 0.1),
    "bench.slow_noise": ("float", 0.5),
    "bench.c": ("float", 4.0),
    "bench.t": ("int", 10000),
    "bench.repeats": ("int", 3),
    "bench.seeds": ("int", 10),
    "bench.omega": ("float", 0.8),
    "bench.theta": ("float", 1.25),
    "bench.components": ("int", 64),
}

_ENUMS = {
    "method": ("fsg", "ste"),
    "slow_kind": ("selective-ssm", "lstm", "off"),
    "fast_kind": ("mlp", "identity", "off"),
    "history_source": ("raw", "composed"),
    "base_optimizer.kind": ("sgd", "adam"),
    "dataset.kind": ("blobs", "spirals", "idx"),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {k: v for k, (_, v) in _SCHEMA.items()}
        merged.update(self.values)
        self.values = merged

    def __getitem__(self, key):
        return self.values[key]

    def to_train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            alpha=v["alpha"], beta=v["beta"], l=v["l"],
            base_optimizer=OptimizerConfig(
                kind=v["base_optimizer.kind"], lr=v["base_optimizer.lr"],
                momentum=v["base_optimizer.momentum"], beta1=v["base_optimizer.beta1"],
                beta2=v["base_optimizer.beta2"], eps=v["base_optimizer.eps"],
            ),
            hyper_lr=v["hyper_lr"], epochs=v["epochs"], batch_size=v["batch_size"],
            lr_decay=LrDecay(every=v["lr_decay.every"], factor=v["lr_decay.factor"]),
            seed=v["seed"], slow_kind=v["slow_kind"], fast_kind=v["fast_kind"],
            bit_width=v["bit_width"], fast_hidden=v["fast_hidden"],
            token_dim=v["token_dim"], state_dim=v["state_dim"], expand=v["expand"],
            scan_chunk=v["scan_chunk"], history_source=v["history_source"],
            record_timing=v["record_timing"],
        )


def _parse_value(key: str, raw: str, lineno: int, col: int):
    tag = _SCHEMA[key][0]
    raw = raw.strip()
    if not raw and tag != "str":
        raise ConfigError(f"line {lineno}, col {col}: empty value for {key!r}")
    try:
        if tag == "int":
            if "." in raw or "e" in raw.lower():
                raise ValueError
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "bool":
            if raw not in ("true", "false"):
                raise ValueError
            return raw == "true"
        if tag == "list":
            return [p.strip() for p in raw.split(",") if p.strip()]
        return raw
    except ValueError:
        raise ConfigError(
            f"line {lineno}, col {col}: cannot parse {raw!r} as {tag} for {key!r}"
        ) from None


def _validate(values: dict) -> None:
    if values["l"] < 1:
        raise ConfigError(f"field 'l' must be >= 1, got {values['l']}")
    if values["base_optimizer.lr"] <= 0:
        raise ConfigError(
            f"field 'base_optimizer.lr' must be positive, got {values['base_optimizer.lr']}"
        )
    if not 0.0 <= values["beta"] <= 1.0:
        raise ConfigError(f"field 'beta' must be in [0, 1], got {values['beta']}")
    if values["epochs"] < 1:
        raise ConfigError(f"field 'epochs' must be >= 1, got {values['epochs']}")
    if values["batch_size"] < 1:
        raise ConfigError(f"field 'batch_size' must be >= 1, got {values['batch_size']}")
    for key, allowed in _ENUMS.items():
        if values[key] not in allowed:
            raise ConfigError(
                f"field {key!r} must be one of {allowed}, got {values[key]!r}"
            )


def loads_config(text: str) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            col = len(line) - len(line.lstrip()) + 1
            raise ConfigError(f"line {lineno}, col {col}: expected 'key = value'")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _SCHEMA:
            col = line.index(key) + 1 if key and key in line else 1
            raise ConfigError(f"line {lineno}, col {col}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        col = line.index("=") + 2
        values[key] = _parse_value(key, raw, lineno, col)
    cfg = RunConfig(values)
    _validate(cfg.values)
    return cfg


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_config(fh.read())


def _format_value(key: str, value) -> str:
    tag = _SCHEMA[key][0]
    if tag == "bool":
        return "true" if value else "false"
    if tag == "list":
        return ", ".join(value)
    if tag == "float":
        return repr(float(value))
    return str(value)


def dumps_config(cfg: RunConfig) -> str:
    lines = [f"{key} = {_format_value(key, cfg.values[key])}" for key in sorted(_SCHEMA)]
    return "\n".join(lines) + "\n"


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_config(cfg))


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(dumps_config(cfg).encode("utf-8")).hexdigest()

"""Flat ``key = value`` run configuration.

Precedence, lowest to highest: built-in defaults, the config file, then
``--key=value`` flags. Unknown keys are errors wherever they appear.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # data
    data: str = "synth"  # synth | idx | csv
    classes: int = 10
    synth_size: int = 16
    aux_size: int = 500
    aux_seed: int = 1
    pool_size: int = 3000
    pool_seed: int = 2
    aux_images: str = ""
    aux_labels: str = ""
    aux_csv: str = ""
    pool_images: str = ""
    pool_labels: str = ""
    pool_csv: str = ""
    height: int = 28
    width: int = 28
    channels: int = 1
    aux_keep: tuple[int, ...] = ()
    aux_max_per_class: int = 0
    # architecture
    hidden: tuple[int, ...] = (128,)
    d: int = 16
    k: int = 128
    o: int = 32
    # surrogate training
    epochs: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    optimizer: str = "adam"
    ae_mode: str = "plain"
    beta: float = 1e-3
    warmup: float = 0.2
    # attack and federation
    w2_row_value: float = 1.0
    mode: str = "fedsgd"
    clients: int = 8
    local_iters: int = 1
    local_lr: float = 1e-3
    secure: bool = True
    dp: bool = False
    clip_norm: float = 1.0
    noise_multiplier: float = 0.0
    th: float = 18.0
    matching: str = "greedy"
    # runs
    m: int = 32
    batch_sizes: tuple[int, ...] = (16, 32, 64, 128)
    trials: int = 5
    out_dir: str = "out"
    timing: bool = False

    def __post_init__(self):
        choices = {"data": ("synth", "idx", "csv"), "optimizer": ("adam", "sgd"),
                   "ae_mode": ("plain", "vae"), "mode": ("fedsgd", "fedavg"),
                   "matching": ("greedy", "nearest")}
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ValueError(f"{key} must be one of {', '.join(allowed)}; got {getattr(self, key)!r}")
        positive = ("classes", "synth_size", "aux_size", "pool_size", "d", "k", "o", "epochs",
                    "batch_size", "clients", "local_iters", "m", "trials", "height", "width", "channels")
        for key in positive:
            if getattr(self, key) < 1:
                raise ValueError(f"{key} must be >= 1")
        if not self.batch_sizes:
            raise ValueError("batch_sizes must list at least one size")

    def items(self) -> list[tuple[str, object]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def echo(self) -> dict:
        """JSON-ready view in declaration order."""
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.items()}


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, text: str):
    default = _FIELDS[key].default
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, tuple):
            return tuple(int(p) for p in text.replace(" ", "").split(",") if p)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ValueError(f"bad value for {key}: {text!r}") from None
    return text


def parse_lines(lines, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def parse_flags(flags) -> dict:
    out = {}
    for flag in flags:
        if not flag.startswith("--") or "=" not in flag:
            raise ValueError(f"flags take the form --key=value, got {flag!r}")
        key, value = flag[2:].split("=", 1)
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise ValueError(f"unknown flag --{key}")
        out[key] = _coerce(key, value)
    return out


def load_config(path=None, flags=()) -> RunConfig:
    values = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        values.update(parse_lines(p.read_text(encoding="utf-8").splitlines(), str(path)))
    values.update(parse_flags(flags))
    return replace(RunConfig(), **values)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in cfg.items():
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, tuple):
            text = ",".join(str(v) for v in value)
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"

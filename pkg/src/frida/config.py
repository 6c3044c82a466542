"""Run configuration as flat ``section.key=value`` text."""
from __future__ import annotations

import hashlib
from importlib import resources
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from frida.datamodel import DEFAULT_CODE_WIDTH
from frida.dannib import ADVERSARIES, MODES, DannConfig
from frida.dgacgan import PAIRINGS, GanConfig
from frida.errors import ConfigError


@dataclass
class RunConfig:
    gan: GanConfig = field(default_factory=GanConfig)
    da: DannConfig = field(default_factory=DannConfig)
    seed: int = 0
    test_fraction: float = 0.3
    width: int = DEFAULT_CODE_WIDTH
    threshold: float = 0.95
    fallback: bool = True
    per_class: int = 100
    replay: bool = True
    source_epochs: int = 0  # 0: same as da.epochs
    benchmark: str = ""
    manifest: str = ""
    ablate_seeds: int = 5

    def __post_init__(self):
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigError(f"pl.threshold must lie in (0, 1], got {self.threshold}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("run.test_fraction must lie in (0, 1)")
        for name, value in (("replay.per_class", self.per_class), ("gan.epochs", self.gan.epochs),
                            ("da.epochs", self.da.epochs), ("gan.batch_size", self.gan.batch_size),
                            ("da.batch_size", self.da.batch_size), ("gan.z_dim", self.gan.z_dim),
                            ("da.latent_dim", self.da.latent_dim), ("domain.width", self.width),
                            ("ablate.seeds", self.ablate_seeds)):
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.source_epochs < 0:
            raise ConfigError("da.source_epochs must be non-negative")

    @property
    def source_model_epochs(self) -> int:
        return self.source_epochs or self.da.epochs

    def to_text(self) -> str:
        return "\n".join(f"{k}={_fmt(v)}" for k, v in _flatten(self).items()) + "\n"

    @classmethod
    def from_text(cls, text, base: RunConfig | None = None) -> RunConfig:
        flat = _flatten(base or cls())
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (s.strip() for s in line.partition("="))
            if not sep:
                raise ConfigError(f"config line {lineno}: expected key=value, got {raw.strip()!r}")
            if key not in flat:
                raise ConfigError(f"config line {lineno}: unknown key {key!r}")
            flat[key] = _parse(key, value, flat[key], lineno)
        return _unflatten(flat)

    @classmethod
    def load(cls, path) -> RunConfig:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        cfg = cls.from_text(p.read_text())
        for key in ("benchmark", "manifest"):
            ref = getattr(cfg, key)
            if ref:
                resolved = (p.parent / ref) if not Path(ref).is_absolute() else Path(ref)
                if not resolved.is_file():
                    raise ConfigError(f"data.{key} refers to a missing file: {ref}")
                cfg = replace(cfg, **{key: str(resolved)})
        return cfg

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


PRESETS = ("desk",)


def preset(name: str) -> RunConfig:
    """A configuration shipped with the package, e.g. ``preset("desk")``."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return RunConfig.from_text(resources.files("frida").joinpath("configs", f"{name}.cfg").read_text())


# section.key -> (owner, attribute); owner None means RunConfig itself
_KEYS = {
    "run.seed": (None, "seed"),
    "run.test_fraction": (None, "test_fraction"),
    "data.benchmark": (None, "benchmark"),
    "data.manifest": (None, "manifest"),
    "domain.width": (None, "width"),
    "pl.threshold": (None, "threshold"),
    "pl.fallback": (None, "fallback"),
    "replay.per_class": (None, "per_class"),
    "replay.enabled": (None, "replay"),
    "da.source_epochs": (None, "source_epochs"),
    "ablate.seeds": (None, "ablate_seeds"),
    **{f"gan.{f.name}": ("gan", f.name) for f in fields(GanConfig)},
    **{f"da.{f.name}": ("da", f.name) for f in fields(DannConfig)},
}


def _flatten(cfg):
    out = {}
    for key, (owner, attr) in _KEYS.items():
        obj = cfg if owner is None else getattr(cfg, owner)
        out[key] = getattr(obj, attr)
    return out


def _unflatten(flat):
    parts = {"gan": {}, "da": {}, None: {}}
    for key, value in flat.items():
        owner, attr = _KEYS[key]
        parts[owner][attr] = value
    try:
        return RunConfig(gan=GanConfig(**parts["gan"]), da=DannConfig(**parts["da"]), **parts[None])
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from None


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(key, value, default, lineno):
    try:
        if isinstance(default, bool):
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if isinstance(default, tuple):
            return tuple(int(v) for v in value.split(",") if v.strip())
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"config line {lineno}: bad value for {key}: {value!r}") from None
    if key == "da.mode" and value not in MODES:
        raise ConfigError(f"config line {lineno}: da.mode must be one of {', '.join(MODES)}")
    if key == "da.adversary" and value not in ADVERSARIES:
        raise ConfigError(f"config line {lineno}: da.adversary must be one of {', '.join(ADVERSARIES)}")
    if key == "gan.pairing" and value not in PAIRINGS:
        raise ConfigError(f"config line {lineno}: gan.pairing must be one of {', '.join(PAIRINGS)}")
    return value

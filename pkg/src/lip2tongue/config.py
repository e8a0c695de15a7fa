"""Run configuration: one TOML file drives every stage.

Grammar (TOML subset actually used)::

    # top-level run keys
    dataset = "runs/synth"        # directory holding manifest.txt, or the manifest itself
    split = [0.6, 0.2, 0.2]
    batch_size = 32
    lr = 1e-4
    ...

    [model]   # ModelConfig fields, e.g. tower = [[32, 3, 2], [64, 3, 2], [64, 3, 2]]
    [flow]    # alpha, iterations, intensity_scale
    [synth]   # SynthSpec fields

Unknown keys are rejected. Command-line overrides use dotted keys
(``model.embed_dim=64``, ``lr=1e-3``); the value is parsed as a TOML value
and falls back to a bare string.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .errors import ConfigError
from .model import ModelConfig
from .synth import SynthSpec


@dataclass
class FlowConfig:
    alpha: float = 10.0
    iterations: int = 100
    intensity_scale: float = 255.0

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunConfig:
    dataset: str = ""
    split: tuple = (0.6, 0.2, 0.2)
    batch_size: int = 32
    lr: float = 1e-4
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    deterministic: bool = True
    threads: int = 0  # 0 = leave the BLAS default
    use_flow: bool = True
    use_attention: bool = True
    raw_only: bool = False
    window_stride: int = 0  # clips between window starts; 0 = T (non-overlapping)
    train_windows_per_recording: int = 0  # windows sampled per recording each epoch; 0 = all
    eval_test: bool = True  # compute test metrics at the end of train()
    model: ModelConfig = field(default_factory=ModelConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)

    def validate(self) -> None:
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise ConfigError(f"split fractions must be three non-negative values summing to 1, got {self.split}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        self.model.validate()

    def model_config(self) -> ModelConfig:
        """ModelConfig with the ablation flags applied."""
        m = dataclasses.replace(self.model)
        if self.raw_only:
            m.use_flow_tower, m.zero_flow, m.use_attention = False, False, False
        else:
            m.use_flow_tower = True
            m.zero_flow = not self.use_flow
            m.use_attention = self.use_attention
        return m

    @property
    def needs_flow(self) -> bool:
        return not self.raw_only and self.use_flow

    def stride(self) -> int:
        return self.window_stride or self.model.T


_SECTIONS = {"model": ModelConfig, "flow": FlowConfig, "synth": SynthSpec}

# Sized so the default synthetic dataset trains in minutes on one CPU core.
DESK_PRESET = {
    "lr": 1e-3,
    "max_epochs": 12,
    "train_windows_per_recording": 1,
    "model": {
        "tower": [[8, 3, 2, 2], [16, 3, 2], [16, 3, 2]],
        "embed_dim": 64,
        "lstm_hidden": 64,
        "decoder_hidden": 256,
    },
}

PRESETS = {"default": {}, "desk": DESK_PRESET}


def _build(cls, values: dict, where: str):
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for k, v in values.items():
        if k not in names:
            raise ConfigError(f"unknown config key {where}{k}")
        if k in _SECTIONS and cls is RunConfig:
            if not isinstance(v, dict):
                raise ConfigError(f"[{k}] must be a table")
            v = _build(_SECTIONS[k], v, f"{k}.")
        elif isinstance(v, list):
            v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {where or 'run'} config: {e}") from None


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_override(text: str) -> tuple:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key, value


def _apply_override(doc: dict, key: str, value) -> None:
    parts = key.split(".")
    node = doc
    for p in parts[:-1]:
        if p not in _SECTIONS:
            raise ConfigError(f"unknown config section {p!r} in override {key!r}")
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def load_config(source: str | Path | None = None, overrides=()) -> RunConfig:
    """Build a RunConfig from a preset name (``default``, ``desk``), a TOML path, or None."""
    if source is None or str(source) in PRESETS:
        doc = dict(PRESETS[str(source or "default")])
        base = Path.cwd()
    else:
        path = Path(source)
        try:
            doc = tomllib.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
        preset = doc.pop("preset", None)
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}")
            doc = _merge(PRESETS[preset], doc)
        base = path.parent
    doc = _merge(doc, {})
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        _apply_override(doc, key, value)
    cfg = _build(RunConfig, doc, "")
    if cfg.dataset and not Path(cfg.dataset).is_absolute():
        cfg.dataset = str((base / cfg.dataset).resolve())
    cfg.validate()
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    def clean(v):
        if isinstance(v, tuple):
            return [clean(x) for x in v]
        return v

    doc = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            doc[f.name] = {k: clean(x) for k, x in dataclasses.asdict(v).items()}
        else:
            doc[f.name] = clean(v)
    return doc


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(tomli_w.dumps(config_to_dict(cfg)))

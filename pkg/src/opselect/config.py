"""Run configuration: INI-style file with sections, flag overrides on top.

Every run is described by one RunConfig.  Outputs embed a metadata block
with the config (verbatim), its hash, the master seed, the PRNG algorithm
id, and the artifact version, so any result file names the exact setup
that produced it.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field, fields, replace

from . import __version__
from .encoder import ModelConfig
from .errors import ConfigError
from .neighborhood import DEFAULT_ACTION_SET, action_set_from_names
from .rng import PRNG_ID

POLICY_KINDS = ("gama", "random", "fixed-sequence")
EVAL_MODES = ("greedy", "sample")


@dataclass(frozen=True)
class SearchConfig:
    max_steps: int = 20000
    no_improve_limit: int = 6
    shake_strength: int = 1
    actions: tuple[str, ...] = tuple(op.name for op in DEFAULT_ACTION_SET)


@dataclass(frozen=True)
class PPOConfig:
    lr: float = 3e-4
    clip_eps: float = 0.2
    epochs: int = 4
    minibatch_size: int = 64
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    cross_phase_gamma: float | None = None
    grad_norm_clip: float = 0.5


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 500
    n_customers: int = 20
    capacity: int | None = None
    master_seed: int = 0
    policy: str = "gama"
    fixed_sequence: tuple[str, ...] = ()
    checkpoint_every: int = 0  # 0: only at the end


@dataclass(frozen=True)
class EvalConfig:
    runs: int = 1
    mode: str = "greedy"
    # 0 means all available cores
    threads: int = 0


@dataclass(frozen=True)
class OutputConfig:
    # Timing fields default to zero so identical seeds give identical bytes.
    log_timing: bool = False


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        out = {}
        for section_field in fields(self):
            section = getattr(self, section_field.name)
            entries = {}
            for f in fields(section):
                v = getattr(section, f.name)
                entries[f.name] = list(v) if isinstance(v, tuple) else v
            out[section_field.name] = entries
        return out


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def metadata_block(cfg: RunConfig) -> dict:
    return {
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "master_seed": cfg.train.master_seed,
        "prng": PRNG_ID,
        "version": __version__,
    }


_SECTION_TYPES = {
    "model": ModelConfig,
    "search": SearchConfig,
    "ppo": PPOConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "output": OutputConfig,
}

_TUPLE_KEYS = {("search", "actions"), ("train", "fixed_sequence")}
_OPTIONAL_INT_KEYS = {("train", "capacity")}
_OPTIONAL_FLOAT_KEYS = {("ppo", "cross_phase_gamma")}


def _parse_value(section: str, key: str, raw: str, target_type):
    where = f"{section}.{key}"
    raw = raw.strip()
    if (section, key) in _TUPLE_KEYS:
        if raw.lower() in ("", "default"):
            return None  # keep the dataclass default
        return tuple(part.strip() for part in raw.split(",") if part.strip())
    if (section, key) in _OPTIONAL_INT_KEYS:
        return None if raw.lower() in ("", "none") else _as(int, raw, where)
    if (section, key) in _OPTIONAL_FLOAT_KEYS:
        return None if raw.lower() in ("", "none") else _as(float, raw, where)
    if target_type is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
    if target_type is int:
        return _as(int, raw, where)
    if target_type is float:
        return _as(float, raw, where)
    return raw


def _as(cast, raw: str, where: str):
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _collect(path: str | None, overrides) -> dict[str, dict[str, str]]:
    raw: dict[str, dict[str, str]] = {}
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path, encoding="utf-8") as f:
                parser.read_file(f)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        for section in parser.sections():
            raw[section] = dict(parser.items(section))
    # Overrides: either a mapping {"section.key": value} or an iterable of
    # "section.key=value" strings (as collected from command-line flags).
    if isinstance(overrides, dict):
        pairs = list(overrides.items())
    else:
        pairs = []
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} must look like section.key=value")
            dotted, value = item.split("=", 1)
            pairs.append((dotted.strip(), value.strip()))
    for dotted, value in pairs:
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        section, key = dotted.split(".", 1)
        raw.setdefault(section, {})[key] = str(value)
    return raw


def load_config(path: str | None = None, overrides=None) -> RunConfig:
    """Build a validated RunConfig from an INI file plus overrides (flags win).

    ``overrides`` is a mapping {"section.key": value} or an iterable of
    "section.key=value" strings.
    """
    raw = _collect(path, overrides or {})
    kwargs: dict[str, object] = {}
    for section, content in raw.items():
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown config section [{section}]")
        cls = _SECTION_TYPES[section]
        known = {f.name: f for f in fields(cls)}
        section_kwargs = {}
        for key, value in content.items():
            if key not in known:
                raise ConfigError(f"unknown key {section}.{key}")
            # The default value's type decides the parse; optional and tuple
            # keys are special-cased in _parse_value.
            base = type(known[key].default)
            parsed = _parse_value(section, key, value, base)
            if parsed is not None or (section, key) in (
                _OPTIONAL_INT_KEYS | _OPTIONAL_FLOAT_KEYS
            ):
                section_kwargs[key] = parsed
        try:
            kwargs[section] = cls(**section_kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad [{section}] settings: {exc}") from exc
    cfg = RunConfig(**kwargs)
    return validate(cfg)


def validate(cfg: RunConfig) -> RunConfig:
    """Cross-field checks; returns a config with model.n_actions synced."""
    try:
        actions = action_set_from_names(cfg.search.actions)
    except ValueError as exc:
        raise ConfigError(f"search.actions: {exc}") from exc
    if not actions:
        raise ConfigError("search.actions: empty action set")
    if cfg.model.n_actions != len(actions):
        cfg = replace(cfg, model=replace(cfg.model, n_actions=len(actions)))
    if cfg.search.max_steps < 1:
        raise ConfigError("search.max_steps must be >= 1")
    if cfg.search.no_improve_limit < 1:
        raise ConfigError("search.no_improve_limit must be >= 1")
    if cfg.search.shake_strength < 1:
        raise ConfigError("search.shake_strength must be >= 1")
    if not 0 < cfg.ppo.clip_eps < 1:
        raise ConfigError("ppo.clip_eps must lie in (0, 1)")
    if cfg.ppo.epochs < 1 or cfg.ppo.minibatch_size < 1:
        raise ConfigError("ppo.epochs and ppo.minibatch_size must be >= 1")
    if cfg.ppo.lr <= 0:
        raise ConfigError("ppo.lr must be positive")
    if cfg.train.policy not in POLICY_KINDS:
        raise ConfigError(
            f"train.policy must be one of {POLICY_KINDS}, got {cfg.train.policy!r}"
        )
    if cfg.train.policy == "fixed-sequence":
        if not cfg.train.fixed_sequence:
            raise ConfigError("train.fixed_sequence required for the fixed-sequence policy")
        unknown = set(cfg.train.fixed_sequence) - set(cfg.search.actions)
        if unknown:
            raise ConfigError(
                f"train.fixed_sequence names outside search.actions: {sorted(unknown)}"
            )
    if cfg.train.episodes < 1 or cfg.train.n_customers < 1:
        raise ConfigError("train.episodes and train.n_customers must be >= 1")
    if cfg.eval.mode not in EVAL_MODES:
        raise ConfigError(f"eval.mode must be one of {EVAL_MODES}, got {cfg.eval.mode!r}")
    if cfg.eval.runs < 1 or cfg.eval.threads < 0:
        raise ConfigError("eval.runs must be >= 1 and eval.threads >= 0")
    if cfg.ppo.cross_phase_gamma is not None and not 0 < cfg.ppo.cross_phase_gamma <= 1:
        raise ConfigError("ppo.cross_phase_gamma must lie in (0, 1]")
    if cfg.ppo.value_coef < 0 or cfg.ppo.entropy_coef < 0:
        raise ConfigError("ppo.value_coef and ppo.entropy_coef must be >= 0")
    if cfg.ppo.grad_norm_clip <= 0:
        raise ConfigError("ppo.grad_norm_clip must be positive")
    if cfg.train.capacity is not None and cfg.train.capacity < 1:
        raise ConfigError("train.capacity must be >= 1")
    if cfg.train.checkpoint_every < 0:
        raise ConfigError("train.checkpoint_every must be >= 0")
    return cfg

"""Run configuration: flat key=value files, CLI overrides, typed defaults.

Config files are plain text, one ``key = value`` per line, ``#`` comments.
Every field has a default, so an empty config is a valid run.  Resolution
order (later wins): defaults < config file < ``--key value`` overrides <
the CL_SEED environment variable (seed only).  The resolved config is
echoed as JSON into the run directory so a run can be reproduced from its
artifacts alone.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    """Bad key, bad value, or unreadable config file — a usage error."""


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"

    # data
    domain: str = "gauss2d"  # gauss2d | glyphs
    k_true: int = 5  # generating classes (gauss2d; the glyph factors are fixed)
    n_per_class: int = 5  # labeled discovery items per class/combination
    corpus_size: int = 2048  # unlabeled pretraining corpus size
    vocab_std: float = 0.1  # scale of the descriptor embedding table

    # model
    embed_dim: int = 32
    hidden_width: int = 512
    hidden_layers: int = 3
    time_dim: int = 64

    # schedule
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    # pretraining
    pretrain_steps: int = 8000
    pretrain_batch: int = 32
    pretrain_lr: float = 1e-3
    p_uncond: float = 0.1
    cond_scale_lo: float = 1.0  # lo == hi == 1 disables scale augmentation
    cond_scale_hi: float = 1.0
    desc_dropout: float = 0.0  # per-descriptor drop probability during pretraining

    # discovery
    k: int = 5
    discover_iters: int = 3000
    discover_batch: int = 16
    lr_library: float = 5e-3
    lr_logits: float = 5e-2
    discover_mode: str = "frozen"  # frozen | joint

    # weight inference on held-out items
    infer_items: int = 100
    infer_iters: int = 500

    # sampling
    sampler_kind: str = "ddim"  # ancestral | ddim
    sampler_steps: int = 50
    guidance: float = 2.0
    sample_count: int = 64
    x0_clamp: str = ""  # "lo,hi" to clamp predicted x0; empty disables

    # evaluation
    detector_threshold: float = 0.6

    def clamp_range(self) -> tuple[float, float] | None:
        if not self.x0_clamp:
            return None
        try:
            lo, hi = (float(v) for v in self.x0_clamp.split(","))
        except ValueError as e:
            raise ConfigError(f"x0_clamp must be 'lo,hi', got {self.x0_clamp!r}") from e
        return lo, hi

    def cond_scale(self) -> tuple[float, float] | None:
        if self.cond_scale_lo == 1.0 and self.cond_scale_hi == 1.0:
            return None
        return self.cond_scale_lo, self.cond_scale_hi

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"


_FIELDS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw: str):
    typ = _FIELDS[key]
    if typ in ("int", int):
        try:
            return int(raw)
        except ValueError as e:
            raise ConfigError(f"{key}: expected integer, got {raw!r}") from e
    if typ in ("float", float):
        try:
            return float(raw)
        except ValueError as e:
            raise ConfigError(f"{key}: expected number, got {raw!r}") from e
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    """key = value lines; '#' starts a comment; blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def resolve_config(
    config_path: str | None = None,
    overrides: dict[str, str] | None = None,
    env: dict | None = None,
) -> RunConfig:
    env = os.environ if env is None else env
    values: dict = {}

    def apply(pairs: dict[str, str], source: str):
        for key, raw in pairs.items():
            if key not in _FIELDS:
                raise ConfigError(f"unknown config key {key!r} ({source})")
            values[key] = _coerce(key, raw)

    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        apply(parse_config_text(path.read_text()), str(path))
    if overrides:
        apply(overrides, "command line")
    if "CL_SEED" in env:
        apply({"seed": env["CL_SEED"]}, "CL_SEED")

    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    if cfg.domain not in ("gauss2d", "glyphs"):
        raise ConfigError(f"domain must be gauss2d or glyphs, got {cfg.domain!r}")
    if cfg.discover_mode not in ("frozen", "joint"):
        raise ConfigError(f"discover_mode must be frozen or joint, got {cfg.discover_mode!r}")
    if cfg.sampler_kind not in ("ancestral", "ddim"):
        raise ConfigError(f"sampler_kind must be ancestral or ddim, got {cfg.sampler_kind!r}")
    for key in (
        "k_true", "n_per_class", "corpus_size", "embed_dim", "hidden_width",
        "hidden_layers", "time_dim", "timesteps", "pretrain_steps",
        "pretrain_batch", "k", "discover_iters", "discover_batch",
        "infer_items", "infer_iters", "sampler_steps", "sample_count",
    ):
        if getattr(cfg, key) <= 0:
            raise ConfigError(f"{key} must be positive")
    if not 0.0 <= cfg.p_uncond < 1.0:
        raise ConfigError("p_uncond must be in [0, 1)")
    if not 0.0 <= cfg.desc_dropout < 1.0:
        raise ConfigError("desc_dropout must be in [0, 1)")
    if not 0.0 < cfg.cond_scale_lo <= cfg.cond_scale_hi:
        raise ConfigError("cond_scale must satisfy 0 < lo <= hi")
    clamp = cfg.clamp_range()
    if clamp is not None and not clamp[0] < clamp[1]:
        raise ConfigError("x0_clamp lo must be < hi")


def data_dim(cfg: RunConfig) -> int:
    return 2 if cfg.domain == "gauss2d" else 256

"""Run configuration with layered precedence:
built-in defaults < profile values < config file < command-line flags.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields

from .autodiff import UsageError
from .training import PROFILES

SEED_ENV_VAR = "FACE_FORGE_SEED"


@dataclass
class RunConfig:
    # paths
    dataset: str | None = None
    corpus: str | None = None
    emotions: str | None = None
    word_vectors: str | None = None
    checkpoint: str | None = None
    out: str | None = None
    vocab: str | None = None
    # dimensions and pipeline shape
    d: int = 300
    n_frames: int = 16
    n_queries: int = 32
    k: int = 4
    max_len: int = 15
    beam: int = 5
    prefix: str = "a photo of"
    order: str = "fact-first"
    ablate: list[str] | None = None
    # training
    profile: str = "msvd"
    delta: float | None = None
    lambda_e: float | None = None
    lambda_cls: float | None = None
    lr: float = 7e-4
    batch_size: int = 32
    max_steps: int = 2000
    stop_loss: float | None = None
    checkpoint_every: int = 0
    seed: int | None = None

    def __post_init__(self):
        if self.ablate is None:
            self.ablate = []

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def resolve_config(config_path: str | None = None, **overrides) -> RunConfig:
    """Merge defaults, profile values, a JSON config file, and overrides.

    ``overrides`` entries that are None are treated as absent. The
    profile's delta/lambda values apply only when nothing more specific
    sets them. A missing seed falls back to FACE_FORGE_SEED, then 0.
    """
    valid = {f.name for f in fields(RunConfig)}
    merged: dict = {}
    if config_path is not None:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                file_vals = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from exc
        unknown = sorted(set(file_vals) - valid)
        if unknown:
            raise UsageError(f"{config_path}: unknown config keys: {unknown}")
        merged.update(file_vals)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(merged) - valid)
    if unknown:
        raise UsageError(f"unknown config overrides: {unknown}")

    cfg = RunConfig(**merged)
    if cfg.profile not in PROFILES:
        raise UsageError(f"unknown profile {cfg.profile!r}; expected one of {sorted(PROFILES)}")
    delta, lambda_e, lambda_cls = PROFILES[cfg.profile]
    if cfg.delta is None:
        cfg.delta = delta
    if cfg.lambda_e is None:
        cfg.lambda_e = lambda_e
    if cfg.lambda_cls is None:
        cfg.lambda_cls = lambda_cls
    if cfg.seed is None:
        env = os.environ.get(SEED_ENV_VAR)
        if env is not None:
            try:
                cfg.seed = int(env)
            except ValueError as exc:
                raise UsageError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from exc
        else:
            cfg.seed = 0
    return cfg

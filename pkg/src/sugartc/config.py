"""Pipeline configuration: defaults, file parsing and flag merging.

Config files are flat ``key = value`` lines (``#`` comments allowed).  The
merge order is command-line flags over file values over defaults.  The
``SUGAR_THREADS`` environment variable caps the scoring worker pool.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, fields, replace

logger = logging.getLogger(__name__)

ANCHOR_MODES = ("cocluster", "random")
R_MODES = ("topk", "corpus")


class ConfigError(ValueError):
    """A configuration value or file that cannot be used."""


@dataclass(frozen=True)
class PipelineConfig:
    # image graph
    sigma: float = 2.5
    inter_threshold: float = 1e-4
    l2_normalize: bool = True
    # tag graph mixture
    a1: float = 0.9
    a2: float = 0.1
    # anchor selection
    c_i: int = 40
    c_u: int = 12
    m_c: int = 10
    anchor_mode: str = "cocluster"
    # completion
    alpha: float = 0.005
    beta: float = 0.001
    lambda1: float = 0.1
    lambda2: float = 0.05
    rel_tol: float = 1e-5
    max_iters: int = 2000
    init_noise_scale: float = 0.01
    # assignment
    s: int = 10
    gamma: float = 0.8
    k: int = 10
    # evaluation
    ap_r_mode: str = "topk"
    cutoffs: tuple = (10, 20, 50, 100)
    queries: tuple = ()
    # shared
    seed: int = 0

    def validate(self) -> None:
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        if self.inter_threshold < 0:
            raise ConfigError("inter_threshold must be nonnegative")
        if self.a1 < 0 or self.a2 < 0 or abs(self.a1 + self.a2 - 1.0) > 1e-9:
            raise ConfigError("a1 and a2 must be nonnegative and sum to 1")
        for name in ("c_i", "c_u", "m_c", "s", "k", "max_iters"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.anchor_mode not in ANCHOR_MODES:
            raise ConfigError(f"anchor_mode must be one of {ANCHOR_MODES}")
        for name in ("alpha", "beta", "lambda1", "lambda2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.rel_tol <= 0:
            raise ConfigError("rel_tol must be positive")
        if self.init_noise_scale < 0:
            raise ConfigError("init_noise_scale must be nonnegative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.ap_r_mode not in R_MODES:
            raise ConfigError(f"ap_r_mode must be one of {R_MODES}")
        if not self.cutoffs or any(int(c) < 1 for c in self.cutoffs):
            raise ConfigError("cutoffs must be positive integers")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")

    def completion(self):
        from .completion import CompletionConfig

        return CompletionConfig(
            alpha=self.alpha,
            beta=self.beta,
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            max_iters=self.max_iters,
            rel_tol=self.rel_tol,
            init_noise_scale=self.init_noise_scale,
            seed=self.seed,
        )

    def assignment(self):
        from .assign import AssignConfig

        return AssignConfig(neighbors=self.s, gamma=self.gamma, top_k=self.k)


_BOOL_WORDS = {"true": True, "false": False, "1": True, "0": False}


def _parse_value(name: str, text: str, kind):
    text = text.strip()
    try:
        if kind is bool:
            if text.lower() not in _BOOL_WORDS:
                raise ValueError(text)
            return _BOOL_WORDS[text.lower()]
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is tuple:
            if not text:
                return ()
            parts = [p.strip() for p in text.split(",") if p.strip()]
            if name in ("cutoffs",):
                return tuple(int(p) for p in parts)
            return tuple(parts)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc


_FIELD_TYPES = {
    f.name: (bool if f.name == "l2_normalize" else f.type) for f in fields(PipelineConfig)
}
# dataclass field types arrive as strings under future annotations
_TYPE_BY_NAME = {"float": float, "int": int, "str": str, "tuple": tuple, "bool": bool}


def _field_kind(name: str):
    kind = _FIELD_TYPES[name]
    if isinstance(kind, str):
        return _TYPE_BY_NAME[kind]
    return kind


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines into a {field: parsed value} dict."""
    overrides = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            name, _, value = line.partition("=")
            name = name.strip()
            if name not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown key {name!r}")
            overrides[name] = _parse_value(name, value, _field_kind(name))
    return overrides


def merge_config(file_overrides=None, flag_overrides=None) -> PipelineConfig:
    """Defaults, then file values, then flags; validated before return."""
    merged = {}
    merged.update(file_overrides or {})
    merged.update({k: v for k, v in (flag_overrides or {}).items() if v is not None})
    config = replace(PipelineConfig(), **merged)
    config.validate()
    return config


def format_config(config: PipelineConfig) -> str:
    """Render a config as the same flat key = value format the parser reads."""
    lines = []
    for f in sorted(fields(config), key=lambda f: f.name):
        value = getattr(config, f.name)
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        elif isinstance(value, tuple):
            text = ",".join(str(v) for v in value)
        else:
            text = str(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def worker_count() -> int:
    """Scoring pool size: SUGAR_THREADS when set and sane, else min(8, cpus)."""
    fallback = min(8, os.cpu_count() or 1)
    raw = os.environ.get("SUGAR_THREADS")
    if raw is None:
        return fallback
    try:
        value = int(raw)
    except ValueError:
        logger.warning("ignoring non-integer SUGAR_THREADS=%r", raw)
        return fallback
    if value < 1:
        logger.warning("ignoring non-positive SUGAR_THREADS=%d", value)
        return fallback
    return value

"""Run configuration: defaults, flat key=value files, CLI overrides, hashing."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .distill import DistillConfig

MAX_EPOCHS = 10000


@dataclass
class RunConfig:
    """Fully resolved settings for one run; every field has a default.

    Resolution order: defaults < config file < command-line flags. The
    resolved config is echoed into the run directory as config.txt.
    """

    model_kind: str = "ttranse"
    teacher_dim: int = 400
    student_dim: int = 25
    batch_size: int = 1024
    epochs: int = 200
    stage1_epochs: int = -1  # -1: derive an even split from epochs
    stage2_epochs: int = -1
    learning_rate: float = 0.1
    negatives: int = 10
    seed: int = 42
    workers: int = 1
    valid_every: int = 10
    data_dir: str = ""
    dataset: str = ""
    format: str = "auto"
    provider: str = "stub"
    provider_dim: int = 384
    output_dir: str = "runs"
    setting: str = "both"
    alpha: float = 0.5
    beta: float = 0.1
    delta: float = 1.0
    temperature: float = 7.0
    method: str = "ours"
    l2_uses_alpha: bool = True
    use_relation_path_loss: bool = False
    fitnet_weight: float = 1.0
    rkd_weight: float = 1.0
    rkd_max_points: int = 32

    def __post_init__(self):
        if not 0 <= self.epochs <= MAX_EPOCHS:
            raise ValueError(f"epochs must be in [0, {MAX_EPOCHS}], got {self.epochs}")
        for name in ("teacher_dim", "student_dim", "batch_size", "negatives"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")

    def resolved_stages(self) -> tuple[int, int]:
        s1, s2 = self.stage1_epochs, self.stage2_epochs
        if s1 < 0 and s2 < 0:
            return self.epochs // 2, self.epochs - self.epochs // 2
        if s1 < 0 or s2 < 0:
            raise ValueError("set both stage1_epochs and stage2_epochs, or neither")
        return s1, s2

    def distill_config(self) -> DistillConfig:
        s1, s2 = self.resolved_stages()
        if self.method in ("bkd", "fitnet", "rkd", "none"):
            s1, s2 = s1 + s2, 0  # single-objective methods have no stage switch
        return DistillConfig(
            alpha=self.alpha,
            beta=self.beta,
            delta=self.delta,
            temperature=self.temperature,
            stage1_epochs=s1,
            stage2_epochs=s2,
            method=self.method,
            l2_uses_alpha=self.l2_uses_alpha,
            use_relation_path_loss=self.use_relation_path_loss,
            fitnet_weight=self.fitnet_weight,
            rkd_weight=self.rkd_weight,
            rkd_max_points=self.rkd_max_points,
        )


_FIELDS = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(name: str, raw: str):
    kind = _FIELDS[name]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"cannot parse boolean {name}={raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def load_config_file(path) -> dict:
    """Flat key=value lines; '#' starts a comment; unknown keys are rejected."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


def make_run_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    merged = {}
    merged.update(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = set(merged) - set(_FIELDS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**merged)


def config_text(cfg: RunConfig) -> str:
    lines = []
    for f in sorted(fields(RunConfig), key=lambda f: f.name):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(config_text(cfg).encode("utf-8")).hexdigest()[:16]

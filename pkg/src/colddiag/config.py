"""Run configuration shared by the library pipeline and the CLI.

Values resolve with precedence: explicit flags > config file > defaults. The
canonical JSON form of a config (sorted keys) is hashed into a digest that is
embedded in every artifact so that mismatched corpus/checkpoint/report
combinations can be refused.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import DataValidationError
from .synth import SynthConfig

# Learning rates used for the reference experiments; other positive values are
# accepted as explicit overrides.
DOCUMENTED_LRS = (0.001, 0.002, 0.02, 0.05)


@dataclass
class RunConfig:
    corpus: str = "corpus"
    out: str = "out"
    target_domain: str = "target"
    cdm: str = "neuralcd"
    dim: int = 64
    hidden: tuple[int, int] = (64, 32)
    lr: float = 0.001
    batch_size: int = 256
    epochs_pretrain: int = 40
    epochs_early_bird: int = 80
    epochs_cold_start: int = 30
    patience: int = 5
    lambda_adv: float = 0.1
    early_bird_fraction: float = 0.05
    peer_count: int = 50
    recommend_size: int = 6
    seed: int = 0
    deterministic: bool = False
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self) -> None:
        if self.cdm not in ("irt", "mirt", "neuralcd"):
            raise DataValidationError(f"cdm must be irt, mirt, or neuralcd, got {self.cdm!r}")
        for name in ("dim", "lr", "batch_size", "epochs_pretrain"):
            if getattr(self, name) <= 0:
                raise DataValidationError(f"config field {name} must be positive")
        if self.lambda_adv < 0:
            raise DataValidationError("lambda_adv must be >= 0")
        if self.peer_count < 1:
            raise DataValidationError("peer_count must be >= 1")
        if self.recommend_size < 2 or self.recommend_size % 2:
            raise DataValidationError("recommend_size must be an even count >= 2")
        if not 0.0 < self.early_bird_fraction <= 1.0:
            raise DataValidationError("early_bird_fraction must lie in (0, 1]")
        if len(self.hidden) != 2 or any(h < 1 for h in self.hidden):
            raise DataValidationError("hidden must be two positive layer sizes")
        if self.epochs_early_bird < 0 or self.epochs_cold_start < 0:
            raise DataValidationError("fine-tune epoch counts must be >= 0")
        self.synth.validate()

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def config_from_dict(raw: dict) -> RunConfig:
    """Build a RunConfig from a plain dict, rejecting unknown keys."""
    raw = dict(raw)
    synth_raw = raw.pop("synth", {})
    known = {f.name for f in fields(RunConfig)} - {"synth"}
    unknown = set(raw) - known
    if unknown:
        raise DataValidationError(f"unknown config keys: {sorted(unknown)}")
    synth_known = {f.name for f in fields(SynthConfig)}
    synth_unknown = set(synth_raw) - synth_known
    if synth_unknown:
        raise DataValidationError(f"unknown synth config keys: {sorted(synth_unknown)}")
    cfg = RunConfig(**{k: v for k, v in raw.items()}, synth=SynthConfig(**synth_raw))
    if isinstance(cfg.hidden, list):
        cfg.hidden = tuple(cfg.hidden)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataValidationError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise DataValidationError(f"{path}: invalid JSON ({exc})")
    if not isinstance(raw, dict):
        raise DataValidationError(f"{path}: config must be a JSON object")
    return config_from_dict(raw)

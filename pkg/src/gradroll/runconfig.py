"""Run configuration: a single JSON document covering dataset paths, training
hyperparameters, and evaluation options.

The config hash (sha256, truncated to 8 bytes) covers every
reproducibility-relevant field — dataset paths and the full training section.
Evaluation options and the output directory do not affect trained artifacts
and are excluded. Run directories are named by the hash, and checkpoints and
ledgers embed it so mismatched artifact pairs are refused.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, ValidationError

from .errors import ConfigError
from .training import TrainConfig


class DatasetSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    train: str
    valid: Optional[str] = None
    test: Optional[str] = None
    on_unknown: Literal["error", "skip"] = "error"
    filter_entities_during_sampling: bool = False  # reserved config knob


class TrainingSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 42
    epochs: int = 10
    h: int = 10
    scoring: Literal["distmult", "complex"] = "distmult"
    loss: Literal["softmax", "sigmoid"] = "softmax"
    optimizer: Literal["sgd", "adam"] = "adam"
    lr0: float = 1e-3
    lr_schedule: Literal["constant", "inverse-t", "linear"] = "linear"
    num_negatives: int = 13
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    norm_constraint: Literal["none", "unit", "max"] = "none"
    max_norm: Optional[float] = None
    init: Literal["uniform", "normal"] = "uniform"
    init_scale: float = 0.05
    track_post_projection: bool = False
    step_log: bool = True


class EvalSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    selector: str = "gr-1"
    sample_size: Optional[int] = None
    eval_seed: int = 42
    workers: int = 1
    trials: int = 30
    snapshot_every: int = 50
    exclude_entity_prefix: Optional[str] = None


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dataset: DatasetSection
    training: TrainingSection = TrainingSection()
    eval: EvalSection = EvalSection()
    output_dir: str = "runs"

    def to_train_config(self) -> TrainConfig:
        t = self.training
        cfg = TrainConfig(
            seed=t.seed, epochs=t.epochs, h=t.h, scoring=t.scoring, loss=t.loss,
            optimizer=t.optimizer, lr0=t.lr0, lr_schedule=t.lr_schedule,
            num_negatives=t.num_negatives, adam_beta1=t.adam_beta1,
            adam_beta2=t.adam_beta2, adam_eps=t.adam_eps,
            norm_constraint=t.norm_constraint, max_norm=t.max_norm,
            init=t.init, init_scale=t.init_scale,
            track_post_projection=t.track_post_projection,
        )
        if cfg.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if cfg.num_negatives < 1:
            raise ConfigError("num_negatives must be >= 1")
        cfg.validate()
        return cfg

    def config_hash(self) -> bytes:
        payload = {
            "dataset": {
                "train": self.dataset.train,
                "valid": self.dataset.valid,
                "test": self.dataset.test,
                "on_unknown": self.dataset.on_unknown,
                "filter_entities_during_sampling":
                    self.dataset.filter_entities_during_sampling,
            },
            "training": self.training.model_dump(exclude={"step_log"}),
        }
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).digest()[:8]

    def hash_hex(self) -> str:
        return self.config_hash().hex()


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(doc)


def config_from_dict(doc: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}"
            for err in exc.errors())
        raise ConfigError(f"invalid config: {problems}") from None


def apply_overrides(config: RunConfig, overrides: dict[str, str]) -> RunConfig:
    """Apply `--set section.key=value` overrides and re-validate."""
    doc = config.model_dump()
    for key, raw in overrides.items():
        parts = key.split(".")
        node = doc
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node = node[part]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings stay strings
        node[parts[-1]] = value
    return config_from_dict(doc)


PRESETS: dict[str, dict] = {
    # Desk-scale knowledge-base completion: 14 entities, 55 relations.
    "nations": {
        "training": {"h": 10, "num_negatives": 13, "epochs": 10,
                     "optimizer": "adam", "lr0": 1e-3, "lr_schedule": "linear",
                     "loss": "softmax", "seed": 42},
    },
    "fb15k-237": {
        "training": {"h": 100, "num_negatives": 500, "epochs": 1,
                     "optimizer": "adam", "lr0": 1e-3, "lr_schedule": "linear",
                     "loss": "softmax", "seed": 42},
    },
    "movielens": {
        "training": {"h": 200, "num_negatives": 500, "epochs": 1,
                     "optimizer": "adam", "lr0": 1e-3, "lr_schedule": "linear",
                     "loss": "softmax", "seed": 42},
        "eval": {"exclude_entity_prefix": "u"},
    },
}


def preset_config(name: str, train_path: str, valid_path: Optional[str] = None,
                  test_path: Optional[str] = None, output_dir: str = "runs"
                  ) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r} (have {sorted(PRESETS)})")
    doc = {"dataset": {"train": train_path, "valid": valid_path,
                       "test": test_path},
           "output_dir": output_dir}
    doc.update({k: dict(v) for k, v in PRESETS[name].items()})
    return config_from_dict(doc)
